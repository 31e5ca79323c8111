//! The three stages: pre-analysis, inference, and uncertainty analysis.
//!
//! Every stage reads the observed dataset, builds the model behind a call
//! counter, writes its artifacts into one directory, and finishes with a
//! manifest and a JSON index of what was written.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use cellsbi_abm::bvcbm::BvcbmModel;
use cellsbi_abm::invasion::InvasionModel;
use cellsbi_core::{CountingModel, GaussianToy, SeedStream, SimError, SummaryModel};
use cellsbi_inference::bsl::{run_bsl_mcmc, tune_m, write_chain_csv, write_m_table_csv};
use cellsbi_inference::csv::{fmt_f64, indexed, write_header, write_row};
use cellsbi_inference::diagnostics::{
    compare_report, normality_report, predictive_check, profile_cost, write_bands_csv, write_compare_csv,
    write_histogram_csv, write_normality_csv, DiagError, ParamSource, PredictiveReport, ReportIndex, RunSummary,
};
use cellsbi_inference::neural::{
    npe_sample, run_npe, run_snle, run_tsnpe, to_bytes, NeuralError, PosteriorChain, RoundReport, RsnlConfig,
    TsnpeConfig,
};
use cellsbi_inference::smc_abc::{run_smc_abc, write_population_csv, write_trace_csv};
use cellsbi_inference::{BslError, Robust, SmcError, Termination};
use serde_json::json;

use crate::config::{Algorithm, ConfigError, ConfigIssue, ModelKind, RunConfig, Stage};
use crate::external::ExternalSimulator;
use crate::manifest::{self, FileEntry, Manifest};
use crate::observed;

pub const OUTPUT_ROOT_ENV: &str = "CELLSBI_OUTPUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulator error: {0}")]
    Simulator(String),
    #[error("simulation budget: {0}")]
    Budget(String),
    #[error("{0}")]
    Failed(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Simulator(_) => 3,
            PipelineError::Budget(_) => 4,
            PipelineError::Failed(_) | PipelineError::Io(_) => 1,
        }
    }
}

impl From<SimError> for PipelineError {
    fn from(e: SimError) -> Self {
        PipelineError::Simulator(e.to_string())
    }
}

impl From<SmcError> for PipelineError {
    fn from(e: SmcError) -> Self {
        match e {
            SmcError::Sim(s) => s.into(),
            SmcError::BudgetTooSmall { .. } => PipelineError::Budget(e.to_string()),
            other => PipelineError::Failed(other.to_string()),
        }
    }
}

impl From<BslError> for PipelineError {
    fn from(e: BslError) -> Self {
        match e {
            BslError::Sim(s) => s.into(),
            other => PipelineError::Failed(other.to_string()),
        }
    }
}

impl From<NeuralError> for PipelineError {
    fn from(e: NeuralError) -> Self {
        match e {
            NeuralError::Sim(s) => s.into(),
            other => PipelineError::Failed(other.to_string()),
        }
    }
}

impl From<DiagError> for PipelineError {
    fn from(e: DiagError) -> Self {
        match e {
            DiagError::Sim { .. } => PipelineError::Simulator(e.to_string()),
            other => PipelineError::Failed(other.to_string()),
        }
    }
}

fn config_issue(key: &str, message: String) -> PipelineError {
    PipelineError::Config(ConfigError::Invalid(vec![ConfigIssue {
        key: key.into(),
        message,
    }]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Outputs were written but the simulation budget ran out first.
    BudgetExhausted,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::BudgetExhausted => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub status: Status,
}

pub enum Model {
    Toy(GaussianToy),
    Bvcbm(BvcbmModel),
    Invasion(InvasionModel),
    External(ExternalSimulator),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn SummaryModel {
        match self {
            Model::Toy(m) => m,
            Model::Bvcbm(m) => m,
            Model::Invasion(m) => m,
            Model::External(m) => m,
        }
    }
}

pub fn build_model(cfg: &RunConfig) -> Result<Model, PipelineError> {
    Ok(match cfg.model {
        ModelKind::ToyGaussian => {
            let t = &cfg.toy;
            Model::Toy(GaussianToy::new(t.n_obs, t.sigma, (t.bounds[0], t.bounds[1]), t.summary))
        }
        ModelKind::Bvcbm => Model::Bvcbm(
            BvcbmModel::new(cfg.bvcbm.params.clone(), cfg.bvcbm.days).map_err(|e| config_issue("bvcbm", e.to_string()))?,
        ),
        ModelKind::Invasion => Model::Invasion(
            InvasionModel::new(cfg.invasion.clone()).map_err(|e| config_issue("invasion", e.to_string()))?,
        ),
        ModelKind::External => {
            let spec = cfg
                .external
                .clone()
                .ok_or_else(|| config_issue("external", "missing [external] table".into()))?;
            Model::External(ExternalSimulator::new(spec).map_err(|e| PipelineError::Simulator(e.to_string()))?)
        }
    })
}

/// Output directory: explicit setting, else `$CELLSBI_OUTPUT_ROOT/<stage>`,
/// else `cellsbi-runs/<stage>` under the working directory.
pub fn output_dir(cfg: &RunConfig, env_root: Option<&Path>) -> PathBuf {
    match (&cfg.output, env_root) {
        (Some(p), _) => p.clone(),
        (None, Some(root)) => root.join(cfg.stage.to_string()),
        (None, None) => PathBuf::from("cellsbi-runs").join(cfg.stage.to_string()),
    }
}

/// Files written so far, for the index and manifest.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    volatile: Vec<String>,
    index: ReportIndex,
}

impl Artifacts {
    fn new(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_owned(),
            files: Vec::new(),
            volatile: Vec::new(),
            index: ReportIndex::default(),
        })
    }

    fn write(
        &mut self,
        name: &str,
        kind: &str,
        description: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    ) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_owned());
        self.index.push(kind, name, description);
        Ok(())
    }

    fn write_volatile(
        &mut self,
        name: &str,
        kind: &str,
        description: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    ) -> io::Result<()> {
        self.write(name, kind, description, f)?;
        let n = self.files.pop().expect("just written");
        self.volatile.push(n);
        Ok(())
    }

    fn json(&mut self, name: &str, kind: &str, description: &str, value: &serde_json::Value) -> io::Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        self.write(name, kind, description, |w| writeln!(w, "{text}"))
    }

    fn finish(mut self) -> io::Result<(Vec<FileEntry>, Vec<String>)> {
        self.index.push("index", "index.json", "this list of outputs");
        let text = self.index.to_json();
        std::fs::write(self.dir.join("index.json"), format!("{text}\n"))?;
        self.files.push("index.json".into());
        self.files.sort();
        self.volatile.sort();
        let entries = self
            .files
            .iter()
            .map(|f| {
                Ok(FileEntry {
                    path: f.clone(),
                    sha256: manifest::sha256_hex(&std::fs::read(self.dir.join(f))?),
                })
            })
            .collect::<io::Result<Vec<_>>>()?;
        Ok((entries, self.volatile))
    }
}

fn write_samples_csv<W: Write>(w: &mut W, samples: &[Vec<f64>]) -> io::Result<()> {
    let d = samples.first().map_or(0, Vec::len);
    write_header(w, &indexed("theta_", d).collect::<Vec<_>>())?;
    for s in samples {
        write_row(w, &s.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>())?;
    }
    Ok(())
}

fn write_rounds_csv<W: Write>(w: &mut W, reports: &[RoundReport]) -> io::Result<()> {
    write_header(
        w,
        &["round", "threshold", "retained", "n_train", "simulations", "epochs", "best_epoch", "best_val_loss"]
            .map(String::from),
    )?;
    for r in reports {
        let best = r.training.val_loss.get(r.training.best_epoch).copied().unwrap_or(f64::NAN);
        write_row(
            w,
            &[
                r.round.to_string(),
                r.threshold.map_or(String::new(), fmt_f64),
                fmt_f64(r.retained),
                r.n_train.to_string(),
                r.simulations.to_string(),
                r.training.epochs.to_string(),
                r.training.best_epoch.to_string(),
                fmt_f64(best),
            ],
        )?;
    }
    Ok(())
}

fn write_posterior_chain_csv<W: Write>(w: &mut W, c: &PosteriorChain) -> io::Result<()> {
    let d_t = c.theta.first().map_or(0, Vec::len);
    let d_g = c.gamma.first().map_or(0, Vec::len);
    let mut cols = vec!["iter".to_owned()];
    cols.extend(indexed("theta_", d_t));
    cols.extend(indexed("gamma_", d_g));
    cols.push("log_target".into());
    write_header(w, &cols)?;
    for (i, t) in c.theta.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(t.iter().map(|&v| fmt_f64(v)));
        if let Some(g) = c.gamma.get(i) {
            row.extend(g.iter().map(|&v| fmt_f64(v)));
        }
        row.push(fmt_f64(c.log_target[i]));
        write_row(w, &row)?;
    }
    Ok(())
}

fn band_json(r: &PredictiveReport) -> serde_json::Value {
    json!({
        "incompatible": r.incompatible,
        "coverage": r.bands.iter().map(|b| json!({"level": b.level, "coverage": b.coverage})).collect::<Vec<_>>(),
    })
}

/// Runs the configured stage into `dir`. The config is assumed validated.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome, PipelineError> {
    let dataset = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| config_issue("dataset", "a dataset path is required".into()))?;
    let dataset_bytes = std::fs::read(dataset)?;
    let observed = observed::parse_observed(&String::from_utf8_lossy(&dataset_bytes))
        .map_err(|e| config_issue("dataset", e.to_string()))?;
    let model = build_model(cfg)?;
    let counted = CountingModel::new(model.as_dyn());
    if observed.len() != counted.summary_dim() {
        return Err(config_issue(
            "dataset",
            format!("{} values, but the model produces {} summaries", observed.len(), counted.summary_dim()),
        ));
    }
    let mut art = Artifacts::new(dir)?;
    let seed = SeedStream::new(cfg.seed);
    let (algorithm_simulations, status) = match cfg.stage {
        Stage::PreAnalysis => (None, pre_analysis(cfg, &counted, &observed, seed, &mut art)?),
        Stage::Infer => {
            let (n, s) = infer(cfg, &counted, &observed, seed, &mut art)?;
            (Some(n), s)
        }
        Stage::Analyse => (None, analyse(cfg, &counted, &observed, seed, &mut art)?),
    };
    let (files, volatile_files) = art.finish()?;
    let manifest = Manifest {
        tool: "cellsbi".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        stage: cfg.stage,
        model: cfg.model,
        algorithm: (cfg.stage == Stage::Infer).then_some(cfg.algorithm),
        seed: cfg.seed,
        config_sha256: manifest::config_hash(cfg),
        dataset_sha256: Some(manifest::sha256_hex(&dataset_bytes)),
        total_simulations: counted.count(),
        algorithm_simulations,
        files,
        volatile_files,
        config: manifest::recorded_config(cfg),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    manifest.write(dir)?;
    Ok(RunOutcome {
        dir: dir.to_owned(),
        manifest,
        status,
    })
}

fn centre(cfg: &RunConfig, model: &dyn SummaryModel) -> Vec<f64> {
    cfg.pre_analysis
        .theta
        .clone()
        .unwrap_or_else(|| model.prior().marginals().iter().map(|m| m.mean()).collect())
}

fn pre_analysis(
    cfg: &RunConfig,
    model: &dyn SummaryModel,
    observed: &[f64],
    seed: SeedStream,
    art: &mut Artifacts,
) -> Result<Status, PipelineError> {
    let p = &cfg.pre_analysis;
    let mr = cfg.max_retries();
    let cost = profile_cost(model, p.cost_sims, seed.child(1))?;
    art.write_volatile("cost_seconds.csv", "cost", "wall time of each prior-predictive simulation", |w| {
        write_header(w, &["sim".into(), "seconds".into()])?;
        for (i, s) in cost.seconds.iter().enumerate() {
            write_row(w, &[i.to_string(), fmt_f64(*s)])?;
        }
        Ok(())
    })?;
    art.write_volatile("cost_histogram.csv", "histogram", "histogram of simulation wall time", |w| {
        write_histogram_csv(w, &cost.histogram)
    })?;

    let prior_pred = predictive_check(
        ParamSource::Prior,
        model,
        observed,
        p.predictive_sims,
        &p.levels,
        p.coverage_floor,
        seed.child(2),
        mr,
    )?;
    art.write("prior_predictive_bands.csv", "bands", "prior predictive quantile bands per summary", |w| {
        write_bands_csv(w, &prior_pred, observed)
    })?;
    let mut report = json!({ "prior_predictive": band_json(&prior_pred) });

    let theta = centre(cfg, model);
    if p.normality_m > 0 {
        let norm = normality_report(model, &theta, p.normality_m, seed.child(3), mr)?;
        art.write("normality.csv", "normality", "per-summary skewness, kurtosis and bimodality", |w| {
            write_normality_csv(w, &norm)
        })?;
        art.write("normality_histograms.csv", "histogram", "per-summary histograms at the evaluation point", |w| {
            write_header(w, &["coord".into(), "bin_edge".into(), "count".into()])?;
            for (j, c) in norm.coords.iter().enumerate() {
                for (e, n) in c.histogram.edges.iter().zip(&c.histogram.counts) {
                    write_row(w, &[j.to_string(), fmt_f64(*e), n.to_string()])?;
                }
            }
            Ok(())
        })?;
        report["normality"] = json!({
            "theta": theta,
            "multimodal_suspects": norm.coords.iter().enumerate().filter(|(_, c)| c.multimodal_suspect).map(|(j, _)| j).collect::<Vec<_>>(),
            "degenerate": norm.coords.iter().enumerate().filter(|(_, c)| c.degenerate).map(|(j, _)| j).collect::<Vec<_>>(),
        });
    }
    if !p.m_candidates.is_empty() {
        let tuning = tune_m(model, &theta, observed, &p.m_candidates, p.m_reps, seed.child(4), mr)?;
        art.write("m_table.csv", "m-tuning", "std of the log synthetic likelihood per candidate m", |w| {
            write_m_table_csv(w, &tuning)
        })?;
        report["m_tuning"] = json!({ "selected": tuning.selected, "warning": tuning.warning });
    }
    art.json("report.json", "report", "headline pre-analysis findings", &report)?;
    Ok(Status::Success)
}

fn infer(
    cfg: &RunConfig,
    model: &dyn SummaryModel,
    observed: &[f64],
    seed: SeedStream,
    art: &mut Artifacts,
) -> Result<(u64, Status), PipelineError> {
    let mr = cfg.max_retries();
    let posterior_desc = "posterior samples, one row per draw";
    match cfg.algorithm {
        Algorithm::SmcAbc => {
            let r = run_smc_abc(model, observed, &cfg.smc_abc, seed)?;
            art.write("population.csv", "population", "final particles with their discrepancies", |w| {
                write_population_csv(w, &r.population)
            })?;
            art.write("trace.csv", "trace", "threshold, acceptance and move count per iteration", |w| {
                write_trace_csv(w, &r.trace)
            })?;
            let thetas: Vec<Vec<f64>> = r.population.iter().map(|p| p.theta.clone()).collect();
            art.write("posterior.csv", "samples", posterior_desc, |w| write_samples_csv(w, &thetas))?;
            art.json(
                "summary.json",
                "summary",
                "run statistics",
                &json!({
                    "epsilon": r.epsilon,
                    "termination": format!("{:?}", r.termination),
                    "total_simulations": r.total_simulations,
                }),
            )?;
            let status = if r.termination == Termination::BudgetExhausted {
                Status::BudgetExhausted
            } else {
                Status::Success
            };
            Ok((r.total_simulations, status))
        }
        Algorithm::Bsl | Algorithm::RbslMean | Algorithm::RbslVar => {
            let robust = match cfg.algorithm {
                Algorithm::RbslMean => Robust::MeanAdjust,
                Algorithm::RbslVar => Robust::VarianceAdjust,
                _ => Robust::None,
            };
            let chain = run_bsl_mcmc(model, observed, &cfg.bsl, robust, seed)?;
            art.write("chain.csv", "chain", "retained MCMC iterations", |w| write_chain_csv(w, &chain))?;
            art.write("posterior.csv", "samples", posterior_desc, |w| write_samples_csv(w, &chain.theta))?;
            art.json(
                "summary.json",
                "summary",
                "run statistics",
                &json!({ "acceptance_rate": chain.acceptance_rate, "total_simulations": chain.total_simulations }),
            )?;
            Ok((chain.total_simulations, Status::Success))
        }
        Algorithm::Npe | Algorithm::Tsnpe => {
            let (est, reports) = if cfg.algorithm == Algorithm::Npe {
                let n = cfg.neural.rounds * cfg.neural.sims_per_round;
                let (est, report) = run_npe(model, observed, &cfg.neural, n, seed.child(0))?;
                (est, vec![report])
            } else {
                let tc = TsnpeConfig {
                    training: cfg.neural.clone(),
                    truncation_quantile: cfg.tsnpe.truncation_quantile,
                    threshold_draws: cfg.tsnpe.threshold_draws,
                    max_retries: mr,
                };
                let (est, reports, _) = run_tsnpe(model, observed, &tc, seed.child(0))?;
                (est, reports)
            };
            let draws = npe_sample(&est, model.prior(), observed, cfg.posterior.draws, seed.child(1))?;
            let bytes = to_bytes(&est);
            art.write("estimator.mdn", "estimator", "trained posterior density estimator", |w| w.write_all(&bytes))?;
            art.write("rounds.csv", "rounds", "per-round training report", |w| write_rounds_csv(w, &reports))?;
            art.write("posterior.csv", "samples", posterior_desc, |w| write_samples_csv(w, &draws.draws))?;
            let sims: u64 = reports.iter().map(|r| r.simulations).sum();
            art.json(
                "summary.json",
                "summary",
                "run statistics",
                &json!({ "leakage": draws.leakage, "total_simulations": sims }),
            )?;
            Ok((sims, Status::Success))
        }
        Algorithm::Nle | Algorithm::Rsnl => {
            let robust = (cfg.algorithm == Algorithm::Rsnl).then(|| RsnlConfig {
                mcmc: cfg.mcmc.clone(),
                tau: cfg.rsnl.tau,
                lambda_floor: cfg.rsnl.lambda_floor,
                fix_gamma: cfg.rsnl.fix_gamma,
            });
            let r = run_snle(model, observed, &cfg.neural, robust.as_ref(), &cfg.mcmc, seed, mr)?;
            let bytes = to_bytes(&r.estimator);
            art.write("estimator.mdn", "estimator", "trained likelihood density estimator", |w| w.write_all(&bytes))?;
            art.write("rounds.csv", "rounds", "per-round training report", |w| write_rounds_csv(w, &r.reports))?;
            art.write("chain.csv", "chain", "final-round MCMC chain", |w| write_posterior_chain_csv(w, &r.chain))?;
            art.write("posterior.csv", "samples", posterior_desc, |w| write_samples_csv(w, &r.chain.theta))?;
            let sims: u64 = r.reports.iter().map(|x| x.simulations).sum();
            art.json(
                "summary.json",
                "summary",
                "run statistics",
                &json!({
                    "acceptance_rate": r.chain.acceptance_rate,
                    "lambda": r.chain.lambda,
                    "total_simulations": sims,
                }),
            )?;
            Ok((sims, Status::Success))
        }
    }
}

fn analyse(
    cfg: &RunConfig,
    model: &dyn SummaryModel,
    observed: &[f64],
    seed: SeedStream,
    art: &mut Artifacts,
) -> Result<Status, PipelineError> {
    let a = &cfg.analyse;
    let mut runs = Vec::new();
    let mut checks = serde_json::Map::new();
    for (k, dir) in a.runs.iter().enumerate() {
        let key = format!("analyse.runs[{k}]");
        let m = Manifest::read(dir).map_err(|e| config_issue(&key, format!("{}: {e}", dir.display())))?;
        if m.model != cfg.model {
            return Err(config_issue(&key, format!("run used model {}, this config uses {}", m.model, cfg.model)));
        }
        let samples =
            observed::read_samples(&dir.join("posterior.csv")).map_err(|e| config_issue(&key, e.to_string()))?;
        if samples.iter().any(|s| s.len() != model.param_dim()) {
            return Err(config_issue(&key, format!("samples do not have {} parameters", model.param_dim())));
        }
        let base = m.algorithm.map_or_else(|| format!("run{k}"), |x| x.to_string());
        let mut tag = base.clone();
        let mut n = 2;
        while runs.iter().any(|r: &RunSummary| r.tag == tag) {
            tag = format!("{base}-{n}");
            n += 1;
        }
        let report = predictive_check(
            ParamSource::Samples(&samples),
            model,
            observed,
            a.predictive_sims,
            &a.levels,
            a.coverage_floor,
            seed.child(k as u64 + 1),
            cfg.max_retries(),
        )?;
        art.write(
            &format!("{tag}_posterior_predictive.csv"),
            "bands",
            &format!("posterior predictive quantile bands for {tag}"),
            |w| write_bands_csv(w, &report, observed),
        )?;
        let coverage = report
            .bands
            .iter()
            .find(|b| (b.level - 0.95).abs() < 1e-12)
            .or(report.bands.last())
            .map(|b| b.coverage);
        checks.insert(tag.clone(), band_json(&report));
        runs.push(RunSummary {
            tag,
            samples,
            total_simulations: m.total_simulations,
            coverage,
        });
    }
    let rows = compare_report(&runs)?;
    art.write("compare.csv", "comparison", "simulation cost against posterior summaries per run", |w| {
        write_compare_csv(w, &rows)
    })?;
    art.json(
        "report.json",
        "report",
        "posterior predictive coverage per run",
        &serde_json::Value::Object(checks),
    )?;
    Ok(Status::Success)
}
