//! Mixture density network: a tanh MLP whose output parameterises a
//! diagonal-Gaussian mixture over the target.
//!
//! Output row layout for `k` components and target dimension `q`:
//! `[logits (k) | means (k*q, component-major) | log-scales (k*q)]`.

use cellsbi_core::linalg::standard_normal;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mdn {
    pub in_dim: usize,
    pub out_dim: usize,
    pub n_components: usize,
    pub hidden: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Mixture parameters at one conditioning input.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub sds: Vec<Vec<f64>>,
}

impl Mixture {
    pub fn ln_pdf(&self, y: &[f64]) -> f64 {
        let lc: Vec<f64> = (0..self.weights.len())
            .map(|k| {
                self.weights[k].ln()
                    + y.iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            let z = (v - self.means[k][j]) / self.sds[k][j];
                            -0.5 * LN_2PI - self.sds[k][j].ln() - 0.5 * z * z
                        })
                        .sum::<f64>()
            })
            .collect();
        log_sum_exp(&lc)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.sds[k])
            .map(|(m, s)| m + s * standard_normal(rng))
            .collect()
    }

    /// Mixture mean.
    pub fn mean(&self) -> Vec<f64> {
        let q = self.means[0].len();
        (0..q)
            .map(|j| self.weights.iter().zip(&self.means).map(|(w, m)| w * m[j]).sum())
            .collect()
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Mdn {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, n_components: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_components * (1 + 2 * out_dim));
        let n_layers = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let last = l == n_layers - 1;
            let scale = if last { 0.1 } else { 1.0 } / (fan_in as f64).sqrt();
            let w = DMatrix::from_fn(fan_out, fan_in, |_, _| scale * standard_normal(rng));
            let mut b = DVector::zeros(fan_out);
            if last {
                // spread the component means so they start distinct
                for i in n_components..n_components * (1 + out_dim) {
                    b[i] = standard_normal(rng);
                }
            }
            layers.push(Layer { w, b });
        }
        Self {
            in_dim,
            out_dim,
            n_components,
            hidden: hidden.to_vec(),
            layers,
        }
    }

    /// All-zero network with the given architecture.
    pub fn zeros(in_dim: usize, out_dim: usize, n_components: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n_components * (1 + 2 * out_dim));
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                w: DMatrix::zeros(w[1], w[0]),
                b: DVector::zeros(w[1]),
            })
            .collect();
        Self {
            in_dim,
            out_dim,
            n_components,
            hidden: hidden.to_vec(),
            layers,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattened weights: per layer, `w` in column-major order then `b`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(l.w.as_slice());
            p.extend_from_slice(l.b.as_slice());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&p[off..off + n]);
            off += n;
            let n = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }

    /// Activations of every layer, starting with the input (`rows x features`).
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        let n_layers = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            let prev = acts.last().expect("input present");
            let mut z = prev * l.w.transpose();
            for mut row in z.row_iter_mut() {
                row += l.b.transpose();
            }
            if i + 1 < n_layers {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    fn unpack_row(&self, o: &[f64]) -> Mixture {
        let (k, q) = (self.n_components, self.out_dim);
        let logits = &o[..k];
        let lse = log_sum_exp(logits);
        Mixture {
            weights: logits.iter().map(|a| (a - lse).exp()).collect(),
            means: (0..k).map(|c| o[k + c * q..k + (c + 1) * q].to_vec()).collect(),
            sds: (0..k)
                .map(|c| o[k + k * q + c * q..k + k * q + (c + 1) * q].iter().map(|s| s.exp()).collect())
                .collect(),
        }
    }

    pub fn mixture(&self, x: &[f64]) -> Mixture {
        let xm = DMatrix::from_row_slice(1, self.in_dim, x);
        let out = self.forward(&xm).pop().expect("output layer");
        let row: Vec<f64> = out.row(0).iter().copied().collect();
        self.unpack_row(&row)
    }

    /// Per-row log-density and the gradient of the row's negative
    /// log-density with respect to the output activations.
    fn row_terms(&self, o: &[f64], y: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (k, q) = (self.n_components, self.out_dim);
        let logits = &o[..k];
        let lse = log_sum_exp(logits);
        let mut lc = vec![0.0; k];
        for c in 0..k {
            let mut s = logits[c] - lse;
            for j in 0..q {
                let mu = o[k + c * q + j];
                let ls = o[k + k * q + c * q + j];
                let z = (y[j] - mu) * (-ls).exp();
                s += -0.5 * LN_2PI - ls - 0.5 * z * z;
            }
            lc[c] = s;
        }
        let lp = log_sum_exp(&lc);
        if let Some(g) = grad {
            for c in 0..k {
                let r = (lc[c] - lp).exp();
                let pi = (logits[c] - lse).exp();
                g[c] = pi - r;
                for j in 0..q {
                    let mu = o[k + c * q + j];
                    let ls = o[k + k * q + c * q + j];
                    let inv = (-ls).exp();
                    let z = (y[j] - mu) * inv;
                    g[k + c * q + j] = -r * z * inv;
                    g[k + k * q + c * q + j] = r * (1.0 - z * z);
                }
            }
        }
        lp
    }

    /// Log-density of each target row given its conditioning row.
    pub fn log_density_batch(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Vec<f64> {
        let out = self.forward(x).pop().expect("output layer");
        (0..out.nrows())
            .map(|i| {
                let o: Vec<f64> = out.row(i).iter().copied().collect();
                let yr: Vec<f64> = y.row(i).iter().copied().collect();
                self.row_terms(&o, &yr, None)
            })
            .collect()
    }

    /// Mean negative log-density over the rows.
    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let lp = self.log_density_batch(x, y);
        -lp.iter().sum::<f64>() / lp.len() as f64
    }

    /// Mean negative log-density and its gradient (same layout as [`Mdn::params`]).
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let n = x.nrows();
        let acts = self.forward(x);
        let out = acts.last().expect("output layer");
        let width = out.ncols();
        let mut delta = DMatrix::zeros(n, width);
        let mut total = 0.0;
        let mut g = vec![0.0; width];
        for i in 0..n {
            let o: Vec<f64> = out.row(i).iter().copied().collect();
            let yr: Vec<f64> = y.row(i).iter().copied().collect();
            total += self.row_terms(&o, &yr, Some(&mut g));
            for (c, v) in g.iter().enumerate() {
                delta[(i, c)] = v / n as f64;
            }
        }

        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let a_prev = &acts[li];
            let gw = delta.transpose() * a_prev;
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push((gw, gb));
            if li > 0 {
                let mut d_prev = &delta * &self.layers[li].w;
                d_prev.zip_apply(a_prev, |d, a| *d *= 1.0 - a * a);
                delta = d_prev;
            }
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(gb.as_slice());
        }
        (-total / n as f64, flat)
    }
}

/// Adam optimiser state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
