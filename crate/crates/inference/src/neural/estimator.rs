//! Conditional density estimator: an [`Mdn`] wrapped with z-score
//! standardisation of its conditioner and target, training, and a compact
//! binary encoding.

use std::io::{self, Read, Write};

use cellsbi_core::SeedStream;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mdn::{Adam, Mdn, Mixture};
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Density of parameters given data.
    Posterior,
    /// Density of data given parameters.
    Likelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Column statistics of `rows`; zero spread falls back to unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let sd = (0..d)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                let s = v.sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            sd: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| v * s + m).collect()
    }

    /// `sum(ln sd)`, the log-Jacobian of [`Standardizer::invert`].
    pub fn log_scale(&self) -> f64 {
        self.sd.iter().map(|s| s.ln()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before the learning rate is
    /// decayed, or training stops once `lr_decays` decays are used up.
    pub patience: usize,
    pub lr_decays: usize,
    pub lr_decay_factor: f64,
    pub validation_fraction: f64,
    pub n_components: usize,
    pub hidden: Vec<usize>,
    pub rounds: usize,
    pub sims_per_round: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 256,
            max_epochs: 300,
            patience: 20,
            lr_decays: 3,
            lr_decay_factor: 0.3,
            validation_fraction: 0.1,
            n_components: 8,
            hidden: vec![64, 64],
            rounds: 10,
            sims_per_round: 10_000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::Config(m.to_owned()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.n_components == 0 {
            return bad("batch_size, max_epochs and n_components must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad("validation_fraction must lie in (0, 0.5)");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if self.rounds == 0 || self.sims_per_round == 0 {
            return bad("rounds and sims_per_round must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDensityEstimator {
    pub direction: Direction,
    pub net: Mdn,
    pub conditioner: Standardizer,
    pub target: Standardizer,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl ConditionalDensityEstimator {
    /// Log-density of `target` given `conditioner`, both in raw units.
    pub fn ln_density(&self, conditioner: &[f64], target: &[f64]) -> f64 {
        self.ln_density_standardized(conditioner, &self.target.apply(target)) - self.target.log_scale()
    }

    /// Log-density of an already standardised target given a raw conditioner.
    pub fn ln_density_standardized(&self, conditioner: &[f64], target_std: &[f64]) -> f64 {
        self.net.mixture(&self.conditioner.apply(conditioner)).ln_pdf(target_std)
    }

    /// Mixture at `conditioner` in standardised target units.
    pub fn mixture(&self, conditioner: &[f64]) -> Mixture {
        self.net.mixture(&self.conditioner.apply(conditioner))
    }

    /// One draw in raw target units.
    pub fn sample<R: Rng + ?Sized>(&self, conditioner: &[f64], rng: &mut R) -> Vec<f64> {
        self.target.invert(&self.mixture(conditioner).sample(rng))
    }

    pub fn conditioner_dim(&self) -> usize {
        self.net.in_dim
    }

    pub fn target_dim(&self) -> usize {
        self.net.out_dim
    }
}

fn to_matrix(rows: &[Vec<f64>], idx: &[usize], st: &Standardizer) -> DMatrix<f64> {
    let d = st.dim();
    let mut m = DMatrix::zeros(idx.len(), d);
    for (r, &i) in idx.iter().enumerate() {
        for (c, v) in st.apply(&rows[i]).into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    m
}

/// Fits an estimator on `(theta, x)` pairs by minimising the mean negative
/// conditional log-density, keeping the weights with the best validation loss.
///
/// `seed.at(0)` initialises the weights, `seed.at(1)` splits the data and
/// `seed.at(2)` orders the mini-batches.
pub fn train_cnde(
    thetas: &[Vec<f64>],
    xs: &[Vec<f64>],
    direction: Direction,
    config: &TrainingConfig,
    seed: SeedStream,
) -> Result<(ConditionalDensityEstimator, TrainingReport), NeuralError> {
    config.validate()?;
    if thetas.len() != xs.len() {
        return Err(NeuralError::Config("theta and data counts differ".into()));
    }
    if thetas.len() < 100 {
        return Err(NeuralError::TooFewPairs(thetas.len()));
    }
    let (cond, targ) = match direction {
        Direction::Posterior => (xs, thetas),
        Direction::Likelihood => (thetas, xs),
    };
    let n = cond.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.at(1).rng());
    let n_val = ((n as f64 * config.validation_fraction).round() as usize).max(1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_idx = train_idx.to_vec();

    let train_cond: Vec<Vec<f64>> = train_idx.iter().map(|&i| cond[i].clone()).collect();
    let train_targ: Vec<Vec<f64>> = train_idx.iter().map(|&i| targ[i].clone()).collect();
    let cst = Standardizer::fit(&train_cond);
    let tst = Standardizer::fit(&train_targ);
    let xv = to_matrix(cond, val_idx, &cst);
    let yv = to_matrix(targ, val_idx, &tst);

    let mut net = Mdn::new(
        cst.dim(),
        tst.dim(),
        config.n_components,
        &config.hidden,
        &mut seed.at(0).rng(),
    );
    let mut params = net.params();
    let mut opt = Adam::new(params.len(), config.learning_rate);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut report = TrainingReport::default();
    let mut batch_rng = seed.at(2).rng();
    let mut shuffled = train_idx.clone();
    let mut stalled_since = 0;
    let mut decays = 0;

    for epoch in 1..=config.max_epochs {
        shuffled.shuffle(&mut batch_rng);
        let mut epoch_loss = 0.0;
        for chunk in shuffled.chunks(config.batch_size) {
            let xb = to_matrix(cond, chunk, &cst);
            let yb = to_matrix(targ, chunk, &tst);
            let (loss, grad) = net.loss_and_grad(&xb, &yb);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(NeuralError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            opt.step(&mut params, &grad);
            net.set_params(&params);
        }
        let val = net.loss(&xv, &yv);
        if !val.is_finite() {
            return Err(NeuralError::NonFiniteLoss { epoch });
        }
        report.train_loss.push(epoch_loss / shuffled.len() as f64);
        report.val_loss.push(val);
        report.epochs = epoch;
        if val < best.0 {
            best = (val, params.clone(), epoch);
            stalled_since = epoch;
        } else if epoch - stalled_since >= config.patience {
            if decays == config.lr_decays {
                break;
            }
            decays += 1;
            stalled_since = epoch;
            opt.lr *= config.lr_decay_factor;
        }
    }
    net.set_params(&best.1);
    report.best_epoch = best.2;
    Ok((
        ConditionalDensityEstimator {
            direction,
            net,
            conditioner: cst,
            target: tst,
        },
        report,
    ))
}

pub const MAGIC: &[u8; 4] = b"MDN1";
const MAX_HEADER: u64 = 1 << 24;
const MAX_WEIGHTS: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    direction: Direction,
    in_dim: usize,
    out_dim: usize,
    n_components: usize,
    hidden: Vec<usize>,
    conditioner: Standardizer,
    target: Standardizer,
    n_weights: usize,
}

/// Writes `MDN1`, a little-endian `u64` header length, the JSON header and
/// then every weight as a little-endian `f64`.
pub fn encode<W: Write>(est: &ConditionalDensityEstimator, w: &mut W) -> io::Result<()> {
    let header = Header {
        direction: est.direction,
        in_dim: est.net.in_dim,
        out_dim: est.net.out_dim,
        n_components: est.net.n_components,
        hidden: est.net.hidden.clone(),
        conditioner: est.conditioner.clone(),
        target: est.target.clone(),
        n_weights: est.net.n_params(),
    };
    let json = serde_json::to_vec(&header).map_err(io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in est.net.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn to_bytes(est: &ConditionalDensityEstimator) -> Vec<u8> {
    let mut buf = Vec::new();
    encode(est, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("input ends early")]
    Truncated,
    #[error("header: {0}")]
    Header(String),
    #[error("{0} trailing bytes after the weights")]
    Trailing(usize),
    #[error("non-finite weight at index {0}")]
    NonFinite(usize),
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8], DecodeError> {
    if buf.len() < n {
        return Err(DecodeError::Truncated);
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

/// Inverse of [`encode`]. Rejects inconsistent headers instead of panicking.
pub fn decode(mut buf: &[u8]) -> Result<ConditionalDensityEstimator, DecodeError> {
    if take(&mut buf, 4)? != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let len = u64::from_le_bytes(take(&mut buf, 8)?.try_into().expect("eight bytes"));
    if len > MAX_HEADER {
        return Err(DecodeError::Header(format!("header length {len} too large")));
    }
    let h: Header = serde_json::from_slice(take(&mut buf, len as usize)?).map_err(|e| DecodeError::Header(e.to_string()))?;
    let bad = |m: &str| Err(DecodeError::Header(m.to_owned()));
    if h.in_dim == 0 || h.out_dim == 0 || h.n_components == 0 || h.hidden.is_empty() || h.hidden.contains(&0) {
        return bad("dimensions must be positive");
    }
    if h.conditioner.dim() != h.in_dim
        || h.conditioner.sd.len() != h.in_dim
        || h.target.dim() != h.out_dim
        || h.target.sd.len() != h.out_dim
    {
        return bad("standardizer dimensions disagree with the network");
    }
    let st_ok = |s: &Standardizer| s.mean.iter().all(|v| v.is_finite()) && s.sd.iter().all(|v| v.is_finite() && *v > 0.0);
    if !st_ok(&h.conditioner) || !st_ok(&h.target) {
        return bad("standardizer entries must be finite with positive scale");
    }
    let mut sizes = vec![h.in_dim];
    sizes.extend_from_slice(&h.hidden);
    sizes.push(
        h.n_components
            .checked_mul(1 + 2 * h.out_dim)
            .ok_or_else(|| DecodeError::Header("output width overflows".into()))?,
    );
    let mut expected = 0usize;
    for w in sizes.windows(2) {
        let layer = w[0]
            .checked_mul(w[1])
            .and_then(|v| v.checked_add(w[1]))
            .ok_or_else(|| DecodeError::Header("weight count overflows".into()))?;
        expected = expected
            .checked_add(layer)
            .ok_or_else(|| DecodeError::Header("weight count overflows".into()))?;
    }
    if expected != h.n_weights || expected > MAX_WEIGHTS {
        return bad("weight count does not match the architecture");
    }
    let need = expected.checked_mul(8).ok_or(DecodeError::Truncated)?;
    let blob = take(&mut buf, need)?;
    if !buf.is_empty() {
        return Err(DecodeError::Trailing(buf.len()));
    }
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    if let Some(i) = params.iter().position(|v| !v.is_finite()) {
        return Err(DecodeError::NonFinite(i));
    }
    let mut net = Mdn::zeros(h.in_dim, h.out_dim, h.n_components, &h.hidden);
    net.set_params(&params);
    Ok(ConditionalDensityEstimator {
        direction: h.direction,
        net,
        conditioner: h.conditioner,
        target: h.target,
    })
}

pub fn read_from<R: Read>(r: &mut R) -> Result<ConditionalDensityEstimator, NeuralError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| NeuralError::Io(e.to_string()))?;
    Ok(decode(&buf)?)
}
