//! Run configuration: one TOML document, one table per module.
//!
//! Loading never stops at the first problem. Syntax errors are fatal and carry
//! a line and column; everything after that (unknown keys, wrong types, out
//! of range values, missing files) is collected into a single list.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use cellsbi_abm::bvcbm::BvcbmParams;
use cellsbi_abm::invasion::InvasionConfig;
use cellsbi_core::ToySummary;
use cellsbi_inference::neural::{McmcConfig, TrainingConfig};
use cellsbi_inference::{BslConfig, SmcConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::external::ExternalSpec;
use crate::observed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Bvcbm,
    Invasion,
    #[default]
    ToyGaussian,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    PreAnalysis,
    #[default]
    Infer,
    Analyse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    SmcAbc,
    Bsl,
    RbslMean,
    RbslVar,
    Npe,
    Tsnpe,
    Nle,
    Rsnl,
}

impl Algorithm {
    pub fn is_bsl(self) -> bool {
        matches!(self, Algorithm::Bsl | Algorithm::RbslMean | Algorithm::RbslVar)
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Algorithm::Npe | Algorithm::Tsnpe | Algorithm::Nle | Algorithm::Rsnl)
    }
}

/// Kebab-case name as written in config files.
fn enum_name<T: Serialize>(v: &T) -> String {
    match toml::Value::try_from(v) {
        Ok(toml::Value::String(s)) => s,
        _ => "?".into(),
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&enum_name(self))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&enum_name(self))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&enum_name(self))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub n_obs: usize,
    pub sigma: f64,
    /// Uniform prior bounds on the mean.
    pub bounds: [f64; 2],
    pub summary: ToySummary,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_obs: 100,
            sigma: 1.0,
            bounds: [-10.0, 10.0],
            summary: ToySummary::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BvcbmSection {
    /// Observation days, including day 0.
    pub days: usize,
    pub params: BvcbmParams,
}

impl Default for BvcbmSection {
    fn default() -> Self {
        Self {
            days: 32,
            params: BvcbmParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsnpeSection {
    pub truncation_quantile: f64,
    pub threshold_draws: usize,
}

impl Default for TsnpeSection {
    fn default() -> Self {
        Self {
            truncation_quantile: 1e-3,
            threshold_draws: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsnlSection {
    pub tau: f64,
    pub lambda_floor: f64,
    pub fix_gamma: bool,
}

impl Default for RsnlSection {
    fn default() -> Self {
        Self {
            tau: 0.3,
            lambda_floor: 1e-2,
            fix_gamma: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorSection {
    /// Draws taken from an amortised posterior estimate.
    pub draws: usize,
}

impl Default for PosteriorSection {
    fn default() -> Self {
        Self { draws: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreAnalysisSection {
    pub cost_sims: usize,
    pub predictive_sims: usize,
    pub levels: Vec<f64>,
    pub coverage_floor: f64,
    /// Simulations for the normality report; 0 skips it.
    pub normality_m: usize,
    /// Where normality and `m` tuning are evaluated; the prior mean if unset.
    pub theta: Option<Vec<f64>>,
    /// Candidate `m` values for synthetic likelihood; empty skips tuning.
    pub m_candidates: Vec<usize>,
    pub m_reps: usize,
}

impl Default for PreAnalysisSection {
    fn default() -> Self {
        Self {
            cost_sims: 1000,
            predictive_sims: 1000,
            levels: cellsbi_inference::diagnostics::DEFAULT_LEVELS.to_vec(),
            coverage_floor: cellsbi_inference::diagnostics::DEFAULT_COVERAGE_FLOOR,
            normality_m: 1000,
            theta: None,
            m_candidates: Vec::new(),
            m_reps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyseSection {
    /// Directories written by earlier `infer` runs.
    pub runs: Vec<PathBuf>,
    pub predictive_sims: usize,
    pub levels: Vec<f64>,
    pub coverage_floor: f64,
}

impl Default for AnalyseSection {
    fn default() -> Self {
        Self {
            runs: Vec::new(),
            predictive_sims: 1000,
            levels: cellsbi_inference::diagnostics::DEFAULT_LEVELS.to_vec(),
            coverage_floor: cellsbi_inference::diagnostics::DEFAULT_COVERAGE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub stage: Stage,
    pub algorithm: Algorithm,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub max_retries: Option<usize>,
    pub toy: ToyConfig,
    pub bvcbm: BvcbmSection,
    pub invasion: InvasionConfig,
    pub external: Option<ExternalSpec>,
    pub smc_abc: SmcConfig,
    pub bsl: BslConfig,
    pub neural: TrainingConfig,
    pub tsnpe: TsnpeSection,
    pub mcmc: McmcConfig,
    pub rsnl: RsnlSection,
    pub posterior: PosteriorSection,
    pub pre_analysis: PreAnalysisSection,
    pub analyse: AnalyseSection,
}

const SCALAR_KEYS: [&str; 7] = ["model", "stage", "algorithm", "dataset", "output", "seed", "max_retries"];
const SECTION_KEYS: [&str; 13] = [
    "toy",
    "bvcbm",
    "invasion",
    "external",
    "smc_abc",
    "bsl",
    "neural",
    "tsnpe",
    "mcmc",
    "rsnl",
    "posterior",
    "pre_analysis",
    "analyse",
];

/// One problem found while loading, tied to a dotted key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{} configuration error(s):\n{}", .0.len(), list(.0))]
    Invalid(Vec<ConfigIssue>),
}

fn list(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// Top-level values supplied on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub stage: Option<String>,
    pub algorithm: Option<String>,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn parse_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>().map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().trim().to_owned(),
        }
    })
}

/// Parses a document without touching the filesystem.
pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let table = parse_table(text)?;
    let (cfg, issues) = from_table(table);
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

/// Reads, overrides, resolves relative paths against the file's directory
/// and validates. Every issue found is returned together.
pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut table = parse_table(&text)?;
    apply_overrides(&mut table, overrides);
    let (mut cfg, mut issues) = from_table(table);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.resolve_paths(&base);
    issues.extend(cfg.check_environment());
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

fn apply_overrides(table: &mut toml::Table, o: &Overrides) {
    let path = |p: &PathBuf| toml::Value::String(p.to_string_lossy().into_owned());
    if let Some(v) = &o.model {
        table.insert("model".into(), toml::Value::String(v.clone()));
    }
    if let Some(v) = &o.stage {
        table.insert("stage".into(), toml::Value::String(v.clone()));
    }
    if let Some(v) = &o.algorithm {
        table.insert("algorithm".into(), toml::Value::String(v.clone()));
    }
    if let Some(v) = &o.dataset {
        table.insert("dataset".into(), path(v));
    }
    if let Some(v) = &o.output {
        table.insert("output".into(), path(v));
    }
    if let Some(v) = o.seed {
        // TOML integers are signed, so seeds above i64::MAX are rejected later
        table.insert("seed".into(), toml::Value::Integer(i64::try_from(v).unwrap_or(-1)));
    }
}

fn issue(issues: &mut Vec<ConfigIssue>, key: impl Into<String>, message: impl Into<String>) {
    issues.push(ConfigIssue {
        key: key.into(),
        message: message.into(),
    });
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.split("unknown field `").nth(1)?;
    Some(rest.split('`').next()?.to_owned())
}

/// Deserialises one table, dropping unknown keys and keys of the wrong type
/// one at a time so that each is reported. Returns the value and the keys
/// that survived.
fn section<T: DeserializeOwned + Default>(
    name: &str,
    value: toml::Value,
    issues: &mut Vec<ConfigIssue>,
) -> (T, toml::Table) {
    let toml::Value::Table(mut table) = value else {
        issue(issues, name, format!("expected a table, found {}", value.type_str()));
        return (T::default(), toml::Table::new());
    };
    loop {
        let err = match toml::Value::Table(table.clone()).try_into::<T>() {
            Ok(v) => return (v, table),
            Err(e) => e,
        };
        if let Some(key) = unknown_field(err.message()) {
            if table.remove(&key).is_some() {
                issue(issues, format!("{name}.{key}"), err.message().trim());
                continue;
            }
        }
        let culprits: Vec<String> = table
            .iter()
            .filter(|(k, v)| single::<T>(k, v).is_err())
            .map(|(k, _)| k.clone())
            .collect();
        if culprits.is_empty() {
            issue(issues, name, err.message().trim());
            return (T::default(), toml::Table::new());
        }
        for k in culprits {
            let v = table.remove(&k).expect("present");
            let msg = single::<T>(&k, &v).err().unwrap_or_default();
            issue(issues, format!("{name}.{k}"), msg);
        }
    }
}

fn single<T: DeserializeOwned>(key: &str, value: &toml::Value) -> Result<T, String> {
    let mut t = toml::Table::new();
    t.insert(key.to_owned(), value.clone());
    toml::Value::Table(t).try_into::<T>().map_err(|e| e.message().trim().to_owned())
}

/// Runs `check` on each key in isolation (all other keys at their defaults)
/// and then on the whole section, so independent bad values are all named.
fn check_section<T: DeserializeOwned + Default>(
    name: &str,
    raw: Option<&toml::Table>,
    full: &T,
    issues: &mut Vec<ConfigIssue>,
    check: impl Fn(&T) -> Result<(), String>,
) {
    let mut seen = Vec::new();
    if let Some(raw) = raw {
        for (k, v) in raw {
            if let Ok(t) = single::<T>(k, v) {
                if let Err(m) = check(&t) {
                    issue(issues, format!("{name}.{k}"), m.clone());
                    seen.push(m);
                }
            }
        }
    }
    if let Err(m) = check(full) {
        if !seen.contains(&m) {
            issue(issues, name, m);
        }
    }
}

fn from_table(table: toml::Table) -> (RunConfig, Vec<ConfigIssue>) {
    let mut cfg = RunConfig::default();
    let mut issues = Vec::new();
    let mut raw: BTreeMap<String, toml::Table> = BTreeMap::new();

    fn scalar<T: DeserializeOwned>(key: &str, v: toml::Value, slot: &mut T, issues: &mut Vec<ConfigIssue>) {
        match v.try_into::<T>() {
            Ok(x) => *slot = x,
            Err(e) => issue(issues, key, e.message().trim()),
        }
    }

    for (key, value) in table {
        macro_rules! sec {
            ($field:expr) => {{
                let (v, kept) = section(&key, value, &mut issues);
                $field = v;
                raw.insert(key.clone(), kept);
            }};
        }
        match key.as_str() {
            "model" => scalar(&key, value, &mut cfg.model, &mut issues),
            "stage" => scalar(&key, value, &mut cfg.stage, &mut issues),
            "algorithm" => scalar(&key, value, &mut cfg.algorithm, &mut issues),
            "dataset" => scalar(&key, value, &mut cfg.dataset, &mut issues),
            "output" => scalar(&key, value, &mut cfg.output, &mut issues),
            "seed" => match value {
                toml::Value::Integer(i) if i >= 0 => cfg.seed = i as u64,
                other => issue(&mut issues, "seed", format!("expected a non-negative integer, found {other}")),
            },
            "max_retries" => scalar(&key, value, &mut cfg.max_retries, &mut issues),
            "toy" => sec!(cfg.toy),
            "bvcbm" => sec!(cfg.bvcbm),
            "invasion" => sec!(cfg.invasion),
            "external" => {
                let (v, kept): (ExternalSpec, _) = section(&key, value, &mut issues);
                cfg.external = Some(v);
                raw.insert(key.clone(), kept);
            }
            "smc_abc" => sec!(cfg.smc_abc),
            "bsl" => sec!(cfg.bsl),
            "neural" => sec!(cfg.neural),
            "tsnpe" => sec!(cfg.tsnpe),
            "mcmc" => sec!(cfg.mcmc),
            "rsnl" => sec!(cfg.rsnl),
            "posterior" => sec!(cfg.posterior),
            "pre_analysis" => sec!(cfg.pre_analysis),
            "analyse" => sec!(cfg.analyse),
            _ => {
                let valid: Vec<&str> = SCALAR_KEYS.iter().chain(&SECTION_KEYS).copied().collect();
                issue(&mut issues, &key, format!("unknown key, expected one of: {}", valid.join(", ")));
            }
        }
    }
    cfg.check_values(&raw, &mut issues);
    (cfg, issues)
}

fn check_levels(levels: &[f64], floor: f64) -> Result<(), String> {
    if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err("levels must be non-empty and lie in (0, 1)".into());
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err("levels must be strictly increasing".into());
    }
    if !(0.0..=1.0).contains(&floor) {
        return Err(format!("coverage_floor must lie in [0, 1], got {floor}"));
    }
    Ok(())
}

impl RunConfig {
    /// Parameter and (when known without simulating) summary dimensions.
    pub fn dims(&self) -> (usize, Option<usize>) {
        match self.model {
            ModelKind::ToyGaussian => (
                1,
                Some(match self.toy.summary {
                    ToySummary::Mean => 1,
                    ToySummary::MeanVar => 2,
                }),
            ),
            ModelKind::Bvcbm => (3, Some(self.bvcbm.days)),
            ModelKind::Invasion => (6, Some(self.invasion.family.dim())),
            ModelKind::External => self
                .external
                .as_ref()
                .map_or((0, None), |e| (e.bounds.len(), e.summary_dim)),
        }
    }

    pub fn max_retries(&self) -> usize {
        self.max_retries.unwrap_or(cellsbi_core::DEFAULT_MAX_RETRIES)
    }

    fn check_values(&self, raw: &BTreeMap<String, toml::Table>, issues: &mut Vec<ConfigIssue>) {
        let (d_theta, d_summary) = self.dims();
        let r = |k: &str| raw.get(k);
        match self.model {
            ModelKind::ToyGaussian => check_section("toy", r("toy"), &self.toy, issues, |t| {
                if t.n_obs < 2 {
                    return Err(format!("n_obs must be >= 2, got {}", t.n_obs));
                }
                if !(t.sigma.is_finite() && t.sigma > 0.0) {
                    return Err(format!("sigma must be positive, got {}", t.sigma));
                }
                if !(t.bounds[0].is_finite() && t.bounds[1].is_finite() && t.bounds[0] < t.bounds[1]) {
                    return Err("bounds must be finite with lower < upper".into());
                }
                Ok(())
            }),
            ModelKind::Bvcbm => check_section("bvcbm", r("bvcbm"), &self.bvcbm, issues, |b| {
                if b.days < 2 {
                    return Err(format!("days must be >= 2, got {}", b.days));
                }
                b.params.validate().map_err(|e| e.to_string())
            }),
            ModelKind::Invasion => check_section("invasion", r("invasion"), &self.invasion, issues, |c| {
                if c.width < 2 || c.height < 2 {
                    return Err("width and height must be >= 2".into());
                }
                if !(0.0..=1.0).contains(&c.density) {
                    return Err(format!("density must lie in [0, 1], got {}", c.density));
                }
                if !(c.horizon.is_finite() && c.horizon > 0.0) {
                    return Err("horizon must be positive".into());
                }
                if c.proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || c.proportions.iter().sum::<f64>() <= 0.0 {
                    return Err("proportions must be non-negative with a positive sum".into());
                }
                if c.scratch_width.is_some_and(|w| w >= c.width) {
                    return Err("scratch_width must be smaller than width".into());
                }
                Ok(())
            }),
            ModelKind::External => match &self.external {
                None => issue(issues, "external", "model = \"external\" needs an [external] table"),
                // defaults alone are not a valid spec, so only the whole table is checked
                Some(spec) => check_section("external", None, spec, issues, ExternalSpec::validate),
            },
        }
        if self.stage == Stage::Infer {
            let a = self.algorithm;
            if a == Algorithm::SmcAbc {
                check_section("smc_abc", r("smc_abc"), &self.smc_abc, issues, |c| {
                    c.validate().map_err(|e| e.to_string())
                });
            }
            if a.is_bsl() {
                let d = d_summary.unwrap_or(0);
                check_section("bsl", r("bsl"), &self.bsl, issues, |c| {
                    c.validate(d, d_theta).map_err(|e| e.to_string())
                });
            }
            if a.is_neural() {
                check_section("neural", r("neural"), &self.neural, issues, |c| {
                    c.validate().map_err(|e| e.to_string())
                });
            }
            if matches!(a, Algorithm::Npe | Algorithm::Tsnpe) {
                check_section("posterior", r("posterior"), &self.posterior, issues, |p| {
                    if p.draws == 0 {
                        return Err("draws must be >= 1".into());
                    }
                    Ok(())
                });
            }
            if a == Algorithm::Tsnpe {
                check_section("tsnpe", r("tsnpe"), &self.tsnpe, issues, |t| {
                    if !(t.truncation_quantile > 0.0 && t.truncation_quantile < 1.0) {
                        return Err(format!("truncation_quantile must lie in (0, 1), got {}", t.truncation_quantile));
                    }
                    if t.threshold_draws < 2 {
                        return Err("threshold_draws must be >= 2".into());
                    }
                    Ok(())
                });
            }
            if matches!(a, Algorithm::Nle | Algorithm::Rsnl) {
                check_section("mcmc", r("mcmc"), &self.mcmc, issues, |m| {
                    if m.n_iter < 1 {
                        return Err("n_iter must be >= 1".into());
                    }
                    if m.theta0.as_ref().is_some_and(|t| t.len() != d_theta) {
                        return Err(format!("theta0 must have {d_theta} entries"));
                    }
                    if let Some(c) = &m.proposal_cov {
                        if c.len() != d_theta || c.iter().any(|row| row.len() != d_theta) {
                            return Err(format!("proposal_cov must be {d_theta}x{d_theta}"));
                        }
                    }
                    Ok(())
                });
            }
            if a == Algorithm::Rsnl {
                check_section("rsnl", r("rsnl"), &self.rsnl, issues, |c| {
                    if !(c.tau.is_finite() && c.tau > 0.0) {
                        return Err(format!("tau must be positive, got {}", c.tau));
                    }
                    if !(c.lambda_floor.is_finite() && c.lambda_floor > 0.0) {
                        return Err(format!("lambda_floor must be positive, got {}", c.lambda_floor));
                    }
                    Ok(())
                });
            }
        }
        if self.stage == Stage::PreAnalysis {
            check_section("pre_analysis", r("pre_analysis"), &self.pre_analysis, issues, |p| {
                if p.cost_sims < 1 {
                    return Err("cost_sims must be >= 1".into());
                }
                if p.predictive_sims < 50 {
                    return Err(format!("predictive_sims must be >= 50, got {}", p.predictive_sims));
                }
                if p.normality_m != 0 && p.normality_m < 1000 {
                    return Err(format!("normality_m must be 0 or >= 1000, got {}", p.normality_m));
                }
                if p.theta.as_ref().is_some_and(|t| t.len() != d_theta) {
                    return Err(format!("theta must have {d_theta} entries"));
                }
                if !p.m_candidates.is_empty() && (p.m_reps < 2 || p.m_candidates.contains(&0)) {
                    return Err("m tuning needs m_reps >= 2 and positive candidates".into());
                }
                check_levels(&p.levels, p.coverage_floor)
            });
        }
        if self.stage == Stage::Analyse {
            check_section("analyse", r("analyse"), &self.analyse, issues, |a| {
                if a.predictive_sims < 50 {
                    return Err(format!("predictive_sims must be >= 50, got {}", a.predictive_sims));
                }
                check_levels(&a.levels, a.coverage_floor)
            });
            if self.analyse.runs.is_empty() {
                issue(issues, "analyse.runs", "list at least one run directory");
            }
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.dataset {
            fix(p);
        }
        if let Some(p) = &mut self.output {
            fix(p);
        }
        self.analyse.runs.iter_mut().for_each(fix);
        if let Some(ext) = &mut self.external {
            ext.resolve_paths(base);
        }
    }

    /// Checks that need the filesystem.
    fn check_environment(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        match &self.dataset {
            None => issue(&mut issues, "dataset", "a dataset path is required"),
            Some(p) => match observed::read_observed(p) {
                Err(e) => issue(&mut issues, "dataset", format!("{}: {e}", p.display())),
                Ok(y) => {
                    if let (_, Some(d)) = self.dims() {
                        if y.len() != d {
                            issue(
                                &mut issues,
                                "dataset",
                                format!("{} values, but the {} model produces {d} summaries", y.len(), self.model),
                            );
                        }
                    }
                }
            },
        }
        if self.stage == Stage::Analyse {
            for (k, run) in self.analyse.runs.iter().enumerate() {
                for f in ["posterior.csv", "manifest.json"] {
                    if !run.join(f).is_file() {
                        issue(&mut issues, format!("analyse.runs[{k}]"), format!("{} has no {f}", run.display()));
                    }
                }
            }
        }
        if let (ModelKind::External, Some(ext)) = (self.model, &self.external) {
            if let Err(m) = ext.check_program() {
                issue(&mut issues, "external.command", m);
            }
        }
        issues
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_and_column_are_one_based() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }

    #[test]
    fn unknown_field_is_extracted() {
        assert_eq!(
            unknown_field("unknown field `bogus`, expected one of `a`, `c`").as_deref(),
            Some("bogus")
        );
        assert_eq!(unknown_field("invalid type"), None);
    }

    #[test]
    fn several_problems_in_one_section_are_all_named() {
        let err = parse_str("[smc_abc]\na = -0.5\nc = 2.0\nzz = 1\nn_particles = \"many\"\n").unwrap_err();
        let keys: Vec<&str> = err.issues().iter().map(|i| i.key.as_str()).collect();
        for k in ["smc_abc.a", "smc_abc.c", "smc_abc.zz", "smc_abc.n_particles"] {
            assert!(keys.contains(&k), "{k} missing from {keys:?}");
        }
    }
}
