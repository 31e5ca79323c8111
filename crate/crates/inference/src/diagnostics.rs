//! Pre-analysis and uncertainty-analysis reports: simulation cost,
//! predictive checks, normality of summaries and cross-run comparison.

use std::io::{self, Write};
use std::time::Instant;

use cellsbi_core::simulator::simulate_valid;
use cellsbi_core::{stats, SeedStream, SimError, SummaryModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csv::{fmt_f64, indexed, write_header, write_row};

#[derive(Debug, thiserror::Error)]
pub enum DiagError {
    #[error("invalid diagnostics request: {0}")]
    Config(String),
    #[error("simulation {index} failed: {source}")]
    Sim {
        index: usize,
        #[source]
        source: SimError,
    },
}

/// Bimodality-coefficient threshold above which a coordinate is flagged.
pub const BIMODALITY_THRESHOLD: f64 = 5.0 / 9.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[min, max]`; the last bin is closed.
/// A constant sample gets a unit-wide range centred on its value.
pub fn histogram(values: &[f64], n_bins: usize) -> Histogram {
    assert!(n_bins >= 1);
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = match finite.iter().copied().fold(None, |acc: Option<(f64, f64)>, v| {
        Some(acc.map_or((v, v), |(a, b)| (a.min(v), b.max(v))))
    }) {
        None => (0.0, 1.0),
        Some((a, b)) if a == b => (a - 0.5, b + 0.5),
        Some(r) => r,
    };
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; n_bins];
    for v in finite {
        let i = (((v - lo) / width).floor() as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    Histogram { edges, counts }
}

pub fn write_histogram_csv<W: Write>(w: &mut W, h: &Histogram) -> io::Result<()> {
    write_header(w, &["bin_edge".into(), "count".into()])?;
    for (e, c) in h.edges.iter().zip(&h.counts) {
        write_row(w, &[fmt_f64(*e), c.to_string()])?;
    }
    // closing edge carries no count
    write_row(w, &[fmt_f64(*h.edges.last().expect("edges")), String::new()])
}

/// Source of per-simulation durations.
pub trait Clock: Sync {
    fn seconds<F: FnOnce() -> R, R>(&self, f: F) -> (R, f64);
}

pub struct WallClock;

impl Clock for WallClock {
    fn seconds<F: FnOnce() -> R, R>(&self, f: F) -> (R, f64) {
        let t = Instant::now();
        let r = f();
        (r, t.elapsed().as_secs_f64().max(1e-9))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub seconds: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub histogram: Histogram,
}

/// Times `n` prior-predictive simulations one by one.
pub fn profile_cost(model: &dyn SummaryModel, n: usize, seed: SeedStream) -> Result<CostProfile, DiagError> {
    profile_cost_with(model, n, seed, &WallClock)
}

pub fn profile_cost_with<C: Clock>(
    model: &dyn SummaryModel,
    n: usize,
    seed: SeedStream,
    clock: &C,
) -> Result<CostProfile, DiagError> {
    if n == 0 {
        return Err(DiagError::Config("n must be at least 1".into()));
    }
    let mut seconds = Vec::with_capacity(n);
    for i in 0..n {
        let s = seed.child(i as u64);
        let theta = model.prior().sample(&mut s.at(0).rng()).into_inner();
        let (res, t) = clock.seconds(|| model.simulate_summary(&theta, s.at(1)));
        match res {
            Ok(_) => seconds.push(t),
            Err(e) if e.is_retryable() => seconds.push(t),
            Err(e) => return Err(DiagError::Sim { index: i, source: e }),
        }
    }
    let min = seconds.iter().copied().fold(f64::INFINITY, f64::min);
    let max = seconds.iter().copied().fold(0.0, f64::max);
    Ok(CostProfile {
        mean: stats::mean(&seconds),
        min,
        max,
        histogram: histogram(&seconds, 20),
        seconds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamSource<'a> {
    Prior,
    Samples(&'a [Vec<f64>]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    /// Central probability covered, e.g. 0.95 for the 2.5%-97.5% band.
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Fraction of observed coordinates inside the band.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveReport {
    pub thetas: Vec<Vec<f64>>,
    pub summaries: Vec<Vec<f64>>,
    pub median: Vec<f64>,
    pub bands: Vec<Band>,
    /// Coverage at the widest band fell below the floor.
    pub incompatible: bool,
}

pub const DEFAULT_LEVELS: [f64; 3] = [0.5, 0.8, 0.95];
pub const DEFAULT_COVERAGE_FLOOR: f64 = 0.5;

/// Bands and coverage from an existing ensemble of summaries.
pub fn predictive_bands(
    summaries: &[Vec<f64>],
    observed: &[f64],
    levels: &[f64],
    floor: f64,
) -> Result<(Vec<f64>, Vec<Band>, bool), DiagError> {
    if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(DiagError::Config("levels must be strictly increasing in (0, 1)".into()));
    }
    let d = observed.len();
    if summaries.is_empty() || summaries.iter().any(|s| s.len() != d) {
        return Err(DiagError::Config("ensemble and observed dimensions differ".into()));
    }
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut c: Vec<f64> = summaries.iter().map(|s| s[j]).collect();
            c.sort_by(f64::total_cmp);
            c
        })
        .collect();
    let median = cols.iter().map(|c| stats::quantile_sorted(c, 0.5)).collect();
    let bands: Vec<Band> = levels
        .iter()
        .map(|&level| {
            let lower: Vec<f64> = cols.iter().map(|c| stats::quantile_sorted(c, (1.0 - level) / 2.0)).collect();
            let upper: Vec<f64> = cols.iter().map(|c| stats::quantile_sorted(c, (1.0 + level) / 2.0)).collect();
            let inside = (0..d).filter(|&j| observed[j] >= lower[j] && observed[j] <= upper[j]).count();
            Band {
                level,
                lower,
                upper,
                coverage: inside as f64 / d as f64,
            }
        })
        .collect();
    let incompatible = bands.last().expect("non-empty").coverage < floor;
    Ok((median, bands, incompatible))
}

/// Simulates `n` summaries from prior or posterior draws and reports
/// quantile bands and the coverage of `observed`.
#[allow(clippy::too_many_arguments)]
pub fn predictive_check(
    source: ParamSource<'_>,
    model: &dyn SummaryModel,
    observed: &[f64],
    n: usize,
    levels: &[f64],
    floor: f64,
    seed: SeedStream,
    max_retries: usize,
) -> Result<PredictiveReport, DiagError> {
    if n < 50 {
        return Err(DiagError::Config("predictive checks need at least 50 simulations".into()));
    }
    let thetas: Vec<Vec<f64>> = match source {
        ParamSource::Prior => {
            let mut rng = seed.at(0).rng();
            (0..n).map(|_| model.prior().sample(&mut rng).into_inner()).collect()
        }
        ParamSource::Samples(s) if s.is_empty() => {
            return Err(DiagError::Config("no posterior samples".into()));
        }
        ParamSource::Samples(s) => (0..n).map(|i| s[i * s.len() / n].clone()).collect(),
    };
    let summaries: Vec<Vec<f64>> = thetas
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            simulate_valid(model, t, seed.child(i as u64 + 1), max_retries)
                .map(|(s, _)| s.into_inner())
                .map_err(|e| DiagError::Sim { index: i, source: e })
        })
        .collect::<Result<_, _>>()?;
    let (median, bands, incompatible) = predictive_bands(&summaries, observed, levels, floor)?;
    Ok(PredictiveReport {
        thetas,
        summaries,
        median,
        bands,
        incompatible,
    })
}

pub fn write_bands_csv<W: Write>(w: &mut W, r: &PredictiveReport, observed: &[f64]) -> io::Result<()> {
    let mut cols = vec!["coord".to_owned(), "observed".into(), "median".into()];
    for b in &r.bands {
        cols.push(format!("lo_{}", fmt_f64(b.level)));
        cols.push(format!("hi_{}", fmt_f64(b.level)));
    }
    write_header(w, &cols)?;
    for j in 0..observed.len() {
        let mut row = vec![j.to_string(), fmt_f64(observed[j]), fmt_f64(r.median[j])];
        for b in &r.bands {
            row.push(fmt_f64(b.lower[j]));
            row.push(fmt_f64(b.upper[j]));
        }
        write_row(w, &row)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordNormality {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// `(skew^2 + 1) / kurtosis`; NaN for a degenerate coordinate.
    pub bimodality: f64,
    pub multimodal_suspect: bool,
    pub degenerate: bool,
    pub histogram: Histogram,
}

/// Population moments of one coordinate.
pub fn coordinate_normality(xs: &[f64]) -> CoordNormality {
    let (m2, m3, m4) = stats::central_moments(xs);
    let histogram = histogram(xs, 30);
    if !(m2 > 0.0) {
        return CoordNormality {
            skewness: f64::NAN,
            excess_kurtosis: f64::NAN,
            bimodality: f64::NAN,
            multimodal_suspect: false,
            degenerate: true,
            histogram,
        };
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let b = (skew * skew + 1.0) / kurt;
    CoordNormality {
        skewness: skew,
        excess_kurtosis: kurt - 3.0,
        bimodality: b,
        multimodal_suspect: b > BIMODALITY_THRESHOLD,
        degenerate: false,
        histogram,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub theta: Vec<f64>,
    pub coords: Vec<CoordNormality>,
}

/// Simulates `m_large` summaries at `theta` and reports per-coordinate shape.
pub fn normality_report(
    model: &dyn SummaryModel,
    theta: &[f64],
    m_large: usize,
    seed: SeedStream,
    max_retries: usize,
) -> Result<NormalityReport, DiagError> {
    if m_large < 1000 {
        return Err(DiagError::Config("normality report needs m_large >= 1000".into()));
    }
    let sims: Vec<Vec<f64>> = (0..m_large)
        .into_par_iter()
        .map(|i| {
            simulate_valid(model, theta, seed.child(i as u64), max_retries)
                .map(|(s, _)| s.into_inner())
                .map_err(|e| DiagError::Sim { index: i, source: e })
        })
        .collect::<Result<_, _>>()?;
    let d = model.summary_dim();
    let coords = (0..d)
        .map(|j| coordinate_normality(&sims.iter().map(|s| s[j]).collect::<Vec<_>>()))
        .collect();
    Ok(NormalityReport {
        theta: theta.to_vec(),
        coords,
    })
}

pub fn write_normality_csv<W: Write>(w: &mut W, r: &NormalityReport) -> io::Result<()> {
    write_header(
        w,
        &[
            "coord".into(),
            "skewness".into(),
            "excess_kurtosis".into(),
            "bimodality".into(),
            "multimodal_suspect".into(),
            "degenerate".into(),
        ],
    )?;
    for (j, c) in r.coords.iter().enumerate() {
        write_row(
            w,
            &[
                j.to_string(),
                fmt_f64(c.skewness),
                fmt_f64(c.excess_kurtosis),
                fmt_f64(c.bimodality),
                u8::from(c.multimodal_suspect).to_string(),
                u8::from(c.degenerate).to_string(),
            ],
        )?;
    }
    Ok(())
}

/// One algorithm's output for the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub tag: String,
    pub samples: Vec<Vec<f64>>,
    pub total_simulations: u64,
    /// Coverage at the 95% predictive band, if a check was run.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub tag: String,
    pub total_simulations: u64,
    pub mean: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub coverage: Option<f64>,
}

/// Per-run simulation counts and marginal means with 95% intervals.
pub fn compare_report(runs: &[RunSummary]) -> Result<Vec<CompareRow>, DiagError> {
    if runs.is_empty() {
        return Err(DiagError::Config("need at least one run".into()));
    }
    runs.iter()
        .map(|r| {
            let d = r.samples.first().map_or(0, Vec::len);
            if r.samples.is_empty() || r.samples.iter().any(|s| s.len() != d) {
                return Err(DiagError::Config(format!("run {} has no usable samples", r.tag)));
            }
            let col = |k: usize| r.samples.iter().map(|s| s[k]).collect::<Vec<_>>();
            Ok(CompareRow {
                tag: r.tag.clone(),
                total_simulations: r.total_simulations,
                mean: (0..d).map(|k| stats::mean(&col(k))).collect(),
                ci_lo: (0..d).map(|k| stats::quantile(&col(k), 0.025)).collect(),
                ci_hi: (0..d).map(|k| stats::quantile(&col(k), 0.975)).collect(),
                coverage: r.coverage,
            })
        })
        .collect()
}

pub fn write_compare_csv<W: Write>(w: &mut W, rows: &[CompareRow]) -> io::Result<()> {
    let d = rows.iter().map(|r| r.mean.len()).max().unwrap_or(0);
    let mut cols = vec!["algorithm".to_owned(), "total_simulations".into()];
    for k in indexed("", d) {
        cols.push(format!("mean_{k}"));
        cols.push(format!("ci_lo_{k}"));
        cols.push(format!("ci_hi_{k}"));
    }
    cols.push("coverage95".into());
    write_header(w, &cols)?;
    for r in rows {
        let mut row = vec![r.tag.clone(), r.total_simulations.to_string()];
        for k in 0..d {
            for v in [&r.mean, &r.ci_lo, &r.ci_hi] {
                row.push(v.get(k).map_or_else(String::new, |x| fmt_f64(*x)));
            }
        }
        row.push(r.coverage.map_or_else(String::new, fmt_f64));
        write_row(w, &row)?;
    }
    Ok(())
}

/// Machine-readable list of the files a stage produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub kind: String,
    pub path: String,
    pub description: String,
}

impl ReportIndex {
    pub fn push(&mut self, kind: &str, path: &str, description: &str) {
        self.entries.push(IndexEntry {
            kind: kind.into(),
            path: path.into(),
            description: description.into(),
        });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("index serialises")
    }
}
