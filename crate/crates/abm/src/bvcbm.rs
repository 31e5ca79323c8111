//! Off-lattice biphasic tumour growth on Delaunay-connected cell centres.
//!
//! A tumour is grown from one cancer cell in a hexagonal sheet of healthy
//! cells until it covers 100 mm², then simulated hour by hour with a
//! division age that switches from `g_age_1` to `g_age_2` at day `tau`.

use std::io::{self, Write};
use std::sync::{Arc, OnceLock};

use cellsbi_core::{Prior, SeedStream, SimError, Simulator, SummaryVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::delaunay::{delaunay_neighbors, Adjacency, DelaunayError};

/// Tumour area at which the growth phase stops, mm².
pub const THRESHOLD_AREA: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BvcbmError {
    #[error("invalid BVCBM parameters: {0}")]
    Config(String),
    #[error("tumour did not reach the threshold within {0} steps")]
    GrowthBudget(usize),
    #[error("triangulation failed: {0}")]
    Delaunay(#[from] DelaunayError),
}

impl From<BvcbmError> for SimError {
    fn from(e: BvcbmError) -> Self {
        SimError::Failed(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Healthy,
    Cancer,
}

/// Cell centres with their type and time since last division.
#[derive(Debug, Clone, PartialEq)]
pub struct Tissue {
    pub positions: Vec<[f64; 2]>,
    pub kinds: Vec<CellKind>,
    pub ages: Vec<f64>,
}

impl Tissue {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn n_cancer(&self) -> usize {
        self.kinds.iter().filter(|k| **k == CellKind::Cancer).count()
    }

    pub fn n_healthy(&self) -> usize {
        self.len() - self.n_cancer()
    }

    fn push(&mut self, p: [f64; 2], kind: CellKind) {
        self.positions.push(p);
        self.kinds.push(kind);
        self.ages.push(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BvcbmParams {
    /// Invasion probability per cancer cell per step.
    pub p_psc: f64,
    /// Depth beyond which cancer cells stop dividing, lattice units.
    pub d_max: f64,
    pub lambda: f64,
    /// Step length, hours.
    pub dt: f64,
    /// Tumour area represented by one cancer cell, mm².
    pub cell_area: f64,
    /// Spring rest length; also the initial lattice spacing.
    pub rest_length: f64,
    /// Delaunay edges longer than this exert no force (hull artefacts).
    pub spring_cutoff: f64,
    /// Division age used while growing to the threshold, hours.
    pub g_age_init: f64,
    /// Healthy-sheet radius in rings; sized from the threshold when unset.
    pub n_rings: Option<usize>,
    /// Carrying capacity; divisions stop once reached. Defaults to 20x the threshold count.
    pub max_cancer_cells: Option<usize>,
    pub max_growth_steps: usize,
    /// Seed of the shared growth phase.
    pub growth_seed: u64,
}

impl Default for BvcbmParams {
    fn default() -> Self {
        Self {
            p_psc: 1e-5,
            d_max: 5.0,
            lambda: 0.1,
            dt: 1.0,
            cell_area: 0.01,
            rest_length: 1.0,
            spring_cutoff: 3.0,
            g_age_init: 24.0,
            n_rings: None,
            max_cancer_cells: None,
            max_growth_steps: 1_000_000,
            growth_seed: 0,
        }
    }
}

impl BvcbmParams {
    pub fn validate(&self) -> Result<(), BvcbmError> {
        let bad = |m: &str| Err(BvcbmError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.p_psc) {
            return bad("p_psc must lie in [0, 1]");
        }
        for (v, name) in [
            (self.d_max, "d_max"),
            (self.dt, "dt"),
            (self.cell_area, "cell_area"),
            (self.rest_length, "rest_length"),
            (self.spring_cutoff, "spring_cutoff"),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.g_age_init < 2.0 {
            return bad("g_age_init must be at least 2 hours");
        }
        let per_day = 24.0 / self.dt;
        if (per_day - per_day.round()).abs() > 1e-9 {
            return bad("dt must divide 24 hours");
        }
        if self.capacity() < self.threshold_cells() {
            return bad("max_cancer_cells is below the threshold count");
        }
        Ok(())
    }

    /// Cancer cells needed to reach the threshold area.
    pub fn threshold_cells(&self) -> usize {
        ((THRESHOLD_AREA / self.cell_area) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn capacity(&self) -> usize {
        self.max_cancer_cells.unwrap_or(20 * self.threshold_cells())
    }

    pub fn rings(&self) -> usize {
        self.n_rings
            .unwrap_or_else(|| (self.threshold_cells() as f64).sqrt().ceil() as usize + 2)
            .max(1)
    }

    fn steps_per_day(&self) -> usize {
        (24.0 / self.dt).round() as usize
    }
}

/// `1 + 3n(n+1)` cells on a triangular lattice of spacing `spacing`, one
/// cancer cell at the origin.
pub fn init_hexagonal(n_rings: usize, spacing: f64) -> Tissue {
    assert!(n_rings >= 1);
    let n = n_rings as i64;
    let mut t = Tissue {
        positions: Vec::new(),
        kinds: Vec::new(),
        ages: Vec::new(),
    };
    let h = spacing * 3f64.sqrt() / 2.0;
    for r in -n..=n {
        for q in (-n).max(-r - n)..=n.min(-r + n) {
            let kind = if q == 0 && r == 0 {
                CellKind::Cancer
            } else {
                CellKind::Healthy
            };
            t.push([spacing * (q as f64 + r as f64 / 2.0), h * r as f64], kind);
        }
    }
    t
}

/// `p0 (1 - d / d_max)` with `d` clamped to `[0, d_max]`.
pub fn division_probability(d: f64, d_max: f64, p0: f64) -> f64 {
    p0 * (1.0 - d.clamp(0.0, d_max) / d_max)
}

/// Hooke's-law displacement of every cell over its Delaunay neighbours.
pub fn hooke_displacements(
    positions: &[[f64; 2]],
    adj: &Adjacency,
    lambda: f64,
    rest: f64,
    cutoff: f64,
) -> Vec<[f64; 2]> {
    (0..positions.len())
        .map(|i| {
            let mut d = [0.0, 0.0];
            for &j in adj.neighbours(i) {
                let rx = positions[i][0] - positions[j][0];
                let ry = positions[i][1] - positions[j][1];
                let len = (rx * rx + ry * ry).sqrt();
                if len > 0.0 && len <= cutoff {
                    let f = lambda * (rest - len) / len;
                    d[0] += f * rx;
                    d[1] += f * ry;
                }
            }
            d
        })
        .collect()
}

/// Bucket grid over healthy cells, for distances clipped at `d_max`.
struct HealthyGrid {
    cell: f64,
    origin: [f64; 2],
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl HealthyGrid {
    fn build(t: &Tissue, cell: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &t.positions {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let nx = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
        let mut g = Self {
            cell,
            origin: lo,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
        };
        for (i, p) in t.positions.iter().enumerate() {
            if t.kinds[i] == CellKind::Healthy {
                let (bx, by) = g.bucket(p);
                g.buckets[by * nx + bx].push(i);
            }
        }
        g
    }

    fn bucket(&self, p: &[f64; 2]) -> (usize, usize) {
        let bx = ((p[0] - self.origin[0]) / self.cell).floor() as usize;
        let by = ((p[1] - self.origin[1]) / self.cell).floor() as usize;
        (bx.min(self.nx - 1), by.min(self.ny - 1))
    }

    /// Distance to the nearest healthy cell, capped at the bucket size.
    fn edge_distance(&self, t: &Tissue, p: &[f64; 2]) -> f64 {
        let (bx, by) = self.bucket(p);
        let mut best = self.cell * self.cell;
        for y in by.saturating_sub(1)..=(by + 1).min(self.ny - 1) {
            for x in bx.saturating_sub(1)..=(bx + 1).min(self.nx - 1) {
                for &j in &self.buckets[y * self.nx + x] {
                    let q = t.positions[j];
                    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                    best = best.min(dx * dx + dy * dy);
                }
            }
        }
        best.sqrt()
    }
}

fn triangulate_with_jitter<R: Rng>(t: &Tissue, rng: &mut R) -> Result<Adjacency, BvcbmError> {
    match delaunay_neighbors(&t.positions) {
        Err(DelaunayError::Collinear) => {
            let mut last = DelaunayError::Collinear;
            for _ in 0..3 {
                let jittered: Vec<[f64; 2]> = t
                    .positions
                    .iter()
                    .map(|p| [p[0] + 1e-9 * (rng.random::<f64>() - 0.5), p[1] + 1e-9 * (rng.random::<f64>() - 0.5)])
                    .collect();
                match delaunay_neighbors(&jittered) {
                    Ok(a) => return Ok(a),
                    Err(e) => last = e,
                }
            }
            Err(last.into())
        }
        r => r.map_err(Into::into),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepOutcome {
    pub divisions: usize,
    pub invasions: usize,
}

/// One time step. Every cancer cell present at the start draws a division
/// and an invasion trial; springs then relax the cells that existed at the
/// start, and daughters join the triangulation from the next step.
/// Division and invasion stop once the cancer count reaches `stop_at`.
pub fn step<R: Rng>(
    t: &mut Tissue,
    g_age: f64,
    params: &BvcbmParams,
    rng: &mut R,
    stop_at: Option<usize>,
) -> Result<StepOutcome, BvcbmError> {
    let adj = triangulate_with_jitter(t, rng)?;
    let mut grid: Option<HealthyGrid> = None;
    let p0 = params.dt / g_age;
    let cancer: Vec<usize> = (0..t.len()).filter(|&i| t.kinds[i] == CellKind::Cancer).collect();
    let mut n_cancer = cancer.len();
    let cap = params.capacity();
    let limit = stop_at.unwrap_or(usize::MAX);
    let mut out = StepOutcome::default();
    let mut daughters = Vec::new();
    for &i in &cancer {
        let p = t.positions[i];
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        if n_cancer >= limit {
            continue;
        }
        // p_d <= p0, so the edge distance only matters below p0
        if u < p0 && n_cancer < cap && u < division_probability(
                grid.get_or_insert_with(|| HealthyGrid::build(t, params.d_max)).edge_distance(t, &p),
                params.d_max,
                p0,
            ) {
            let nn = adj
                .neighbours(i)
                .iter()
                .map(|&j| {
                    let (dx, dy) = (p[0] - t.positions[j][0], p[1] - t.positions[j][1]);
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if nn.is_finite() {
                let phi = std::f64::consts::TAU * rng.random::<f64>();
                daughters.push([p[0] + 0.5 * nn * phi.cos(), p[1] + 0.5 * nn * phi.sin()]);
                t.ages[i] = 0.0;
                n_cancer += 1;
                out.divisions += 1;
            }
        }
        if v < params.p_psc && n_cancer < limit {
            let healthy: Vec<usize> = adj
                .neighbours(i)
                .iter()
                .copied()
                .filter(|&j| t.kinds[j] == CellKind::Healthy)
                .collect();
            if !healthy.is_empty() {
                let j = healthy[rng.random_range(0..healthy.len())];
                t.kinds[j] = CellKind::Cancer;
                n_cancer += 1;
                out.invasions += 1;
            }
        }
    }
    let disp = hooke_displacements(&t.positions, &adj, params.lambda, params.rest_length, params.spring_cutoff);
    for (p, d) in t.positions.iter_mut().zip(disp) {
        p[0] += d[0];
        p[1] += d[1];
    }
    for a in &mut t.ages {
        *a += params.dt;
    }
    for p in daughters {
        t.push(p, CellKind::Cancer);
    }
    Ok(out)
}

/// Grows one cancer cell to the threshold area. Returns the tissue and
/// the number of steps taken.
pub fn grow_to_threshold(params: &BvcbmParams, seed: SeedStream) -> Result<(Tissue, usize), BvcbmError> {
    params.validate()?;
    let target = params.threshold_cells();
    let mut t = init_hexagonal(params.rings(), params.rest_length);
    let mut rng = seed.rng();
    let mut steps = 0;
    while t.n_cancer() < target {
        if steps >= params.max_growth_steps {
            return Err(BvcbmError::GrowthBudget(steps));
        }
        step(&mut t, params.g_age_init, params, &mut rng, Some(target))?;
        steps += 1;
    }
    Ok((t, steps))
}

/// Checks `(g_age_1, tau_days, g_age_2)` against the prior bounds.
pub fn validate_theta(theta: &[f64], days: usize) -> Result<(), BvcbmError> {
    if theta.len() != 3 {
        return Err(BvcbmError::Config(format!("theta has {} entries, expected 3", theta.len())));
    }
    let g_hi = 24.0 * days as f64;
    let ok = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
    if !(ok(theta[0], 2.0, g_hi) && ok(theta[2], 2.0, g_hi) && ok(theta[1], 1.0, days as f64)) {
        return Err(BvcbmError::Config(format!("theta {theta:?} outside the prior support")));
    }
    Ok(())
}

/// Daily tumour areas starting from `initial`: entry `k` is the area at
/// hour `24 k`, so the first entry is the threshold area. The division age
/// is `g_age_1` before hour `24 tau` and `g_age_2` from then on.
pub fn simulate_biphasic(
    initial: &Tissue,
    theta: &[f64],
    days: usize,
    params: &BvcbmParams,
    seed: SeedStream,
) -> Result<Vec<f64>, BvcbmError> {
    validate_theta(theta, days)?;
    let (g1, tau_h, g2) = (theta[0], 24.0 * theta[1], theta[2]);
    let mut t = initial.clone();
    let mut rng = seed.rng();
    let per_day = params.steps_per_day();
    let mut traj = Vec::with_capacity(days);
    for day in 0..days {
        traj.push(t.n_cancer() as f64 * params.cell_area);
        if day + 1 == days {
            break;
        }
        for s in 0..per_day {
            let hour = (day * per_day + s) as f64 * params.dt;
            let g = if hour < tau_h { g1 } else { g2 };
            step(&mut t, g, params, &mut rng, None)?;
        }
    }
    Ok(traj)
}

pub fn write_trajectory_csv<W: Write>(w: &mut W, traj: &[f64]) -> io::Result<()> {
    writeln!(w, "day,area_mm2")?;
    for (d, a) in traj.iter().enumerate() {
        writeln!(w, "{d},{a}")?;
    }
    Ok(())
}

/// Simulator over `theta = (g_age_1, tau_days, g_age_2)` whose summary is
/// the daily trajectory itself.
pub struct BvcbmModel {
    pub params: BvcbmParams,
    pub days: usize,
    prior: Prior,
    initial: OnceLock<Result<Arc<Tissue>, BvcbmError>>,
}

impl BvcbmModel {
    pub fn new(params: BvcbmParams, days: usize) -> Result<Self, BvcbmError> {
        params.validate()?;
        if days < 2 {
            return Err(BvcbmError::Config("need at least 2 days".into()));
        }
        let g_hi = 24.0 * days as f64;
        let prior = Prior::uniform_box(&[(2.0, g_hi), (1.0, days as f64), (2.0, g_hi)])
            .map_err(|e| BvcbmError::Config(e.to_string()))?;
        Ok(Self {
            params,
            days,
            prior,
            initial: OnceLock::new(),
        })
    }

    /// The cached threshold configuration shared by every simulation.
    pub fn initial(&self) -> Result<Arc<Tissue>, BvcbmError> {
        self.initial
            .get_or_init(|| {
                grow_to_threshold(&self.params, SeedStream::new(self.params.growth_seed)).map(|(t, _)| Arc::new(t))
            })
            .clone()
    }
}

impl Simulator for BvcbmModel {
    type Output = Vec<f64>;

    fn prior(&self) -> &Prior {
        &self.prior
    }

    fn summary_dim(&self) -> usize {
        self.days
    }

    fn simulate(&self, theta: &[f64], seed: SeedStream) -> Result<Vec<f64>, SimError> {
        if theta.len() != 3 {
            return Err(SimError::ParamDimension {
                expected: 3,
                got: theta.len(),
            });
        }
        let init = self.initial()?;
        Ok(simulate_biphasic(&init, theta, self.days, &self.params, seed)?)
    }

    fn summarize(&self, output: &Vec<f64>) -> Result<SummaryVector, SimError> {
        SummaryVector::new(output.clone()).map_err(|e| SimError::Failed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hexagon_sizes_and_spacing() {
        let t = init_hexagonal(1, 1.0);
        assert_eq!(t.len(), 7);
        assert_eq!(t.n_cancer(), 1);
        assert_eq!(t.positions[t.kinds.iter().position(|k| *k == CellKind::Cancer).unwrap()], [0.0, 0.0]);
        for p in &t.positions {
            if *p != [0.0, 0.0] {
                assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(init_hexagonal(2, 1.0).len(), 19);
        let big = init_hexagonal(4, 1.0);
        assert_eq!(big.len(), 1 + 3 * 4 * 5);
        for (i, p) in big.positions.iter().enumerate() {
            let nn = big
                .positions
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
                .fold(f64::INFINITY, f64::min);
            assert!((nn - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn division_probability_endpoints() {
        assert_eq!(division_probability(5.0, 5.0, 0.1), 0.0);
        assert_eq!(division_probability(9.0, 5.0, 0.1), 0.0);
        assert_eq!(division_probability(0.0, 5.0, 0.1), 0.1);
        assert!((division_probability(2.5, 5.0, 0.1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn springs_at_rest_do_not_move() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]];
        let adj = delaunay_neighbors(&tri).unwrap();
        for d in hooke_displacements(&tri, &adj, 0.37, 1.0, 3.0) {
            assert!(d[0].abs() < 1e-15 && d[1].abs() < 1e-15);
        }
        // a compressed pair pushes apart along the joining line
        let pts = [[0.0, 0.0], [0.5, 0.0], [0.25, 2.0]];
        let adj = delaunay_neighbors(&pts).unwrap();
        let d = hooke_displacements(&pts, &adj, 0.1, 1.0, 1.0);
        assert!(d[0][0] < 0.0 && d[1][0] > 0.0);
        assert_eq!(d[0][1], 0.0);
    }

    #[test]
    fn threshold_count_from_cell_area() {
        let p = BvcbmParams::default();
        assert_eq!(p.threshold_cells(), 10_000);
        let q = BvcbmParams {
            cell_area: 3.0,
            ..Default::default()
        };
        assert_eq!(q.threshold_cells(), 34);
        assert!(BvcbmParams {
            dt: 5.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn theta_support() {
        assert!(validate_theta(&[300.0, 16.0, 100.0], 32).is_ok());
        assert!(validate_theta(&[1.0, 16.0, 100.0], 32).is_err());
        assert!(validate_theta(&[300.0, 33.0, 100.0], 32).is_err());
        assert!(validate_theta(&[300.0, 16.0], 32).is_err());
    }
}
