//! Fully connected tanh network with a linear output, trained by
//! Levenberg-Marquardt on weighted squared error.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::design::DesignEncoder;
use super::TrainingSummary;
use crate::dataset::{Feature, ProjectRecord, TransformSet};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;

const GRADIENT_TOL: f64 = 1e-8;
const LAMBDA_MAX: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnConfig {
    pub hidden_layers: Vec<usize>,
    pub max_epochs: usize,
    pub lm_lambda0: f64,
    pub lm_lambda_factor: f64,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for DnnConfig {
    fn default() -> Self {
        DnnConfig {
            hidden_layers: vec![16, 8],
            max_epochs: 100,
            lm_lambda0: 1e-3,
            lm_lambda_factor: 10.0,
            seed: 1,
            weight_decay: 0.0,
        }
    }
}

impl DnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config(format!(
                "dnn needs at least one hidden layer of positive width, got {:?}",
                self.hidden_layers
            )));
        }
        if !(self.lm_lambda0 > 0.0) || !(self.lm_lambda_factor > 1.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("dnn needs lm_lambda0 > 0, lm_lambda_factor > 1, weight_decay >= 0".into()));
        }
        Ok(())
    }
}

/// Parameters are flattened layer by layer: the weight matrix row-major
/// (one row per output neuron) followed by the biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// Input width, hidden widths, then 1.
    pub layers: Vec<usize>,
    pub params: Vec<f64>,
}

impl Network {
    pub fn param_count(layers: &[usize]) -> usize {
        layers.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(inputs: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut layers = vec![inputs];
        layers.extend_from_slice(hidden);
        layers.push(1);
        let mut params = Vec::with_capacity(Self::param_count(&layers));
        for w in layers.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Network { layers, params }
    }

    fn forward_all(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let last = self.layers.len() - 2;
        for (l, w) in self.layers.windows(2).enumerate() {
            let (m, k) = (w[0], w[1]);
            let prev = &acts[l];
            let bias = off + m * k;
            let out: Vec<f64> = (0..k)
                .map(|i| {
                    let z = params[bias + i] + (0..m).map(|j| params[off + i * m + j] * prev[j]).sum::<f64>();
                    if l == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            off += m * k + k;
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.forward_with(&self.params, x)
    }

    fn forward_with(&self, params: &[f64], x: &[f64]) -> f64 {
        self.forward_all(params, x).last().expect("output layer")[0]
    }

    /// Output and its gradient with respect to every parameter.
    pub fn output_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let acts = self.forward_all(&self.params, x);
        let mut grad = vec![0.0; self.params.len()];
        let offsets: Vec<usize> = self
            .layers
            .windows(2)
            .scan(0, |off, w| {
                let o = *off;
                *off += w[1] * (w[0] + 1);
                Some(o)
            })
            .collect();
        let n_layers = self.layers.len() - 1;
        let mut delta = vec![1.0];
        for l in (0..n_layers).rev() {
            let (m, k) = (self.layers[l], self.layers[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for i in 0..k {
                for j in 0..m {
                    grad[off + i * m + j] = delta[i] * input[j];
                }
                grad[off + m * k + i] = delta[i];
            }
            if l > 0 {
                delta = (0..m)
                    .map(|j| {
                        let back: f64 = (0..k).map(|i| self.params[off + i * m + j] * delta[i]).sum();
                        back * (1.0 - input[j] * input[j])
                    })
                    .collect();
            }
        }
        (acts.last().expect("output layer")[0], grad)
    }
}

/// One Levenberg-Marquardt step: solves `(J'WJ + (lambda + decay) I) d = J'W r - decay theta`.
/// `r = y - f` and `J` is the Jacobian of `f`.
pub fn lm_step(
    jac: &DMatrix<f64>,
    residuals: &DVector<f64>,
    weights: &[f64],
    params: &[f64],
    lambda: f64,
    decay: f64,
) -> Option<DVector<f64>> {
    let (jtwj, g) = normal_parts(jac, residuals, weights, params, decay);
    let p = params.len();
    let a = jtwj + DMatrix::identity(p, p) * (lambda + decay);
    solve_spd(a, &g)
}

/// `J'WJ` and the descent direction `J'W r - decay theta`.
pub fn normal_parts(
    jac: &DMatrix<f64>,
    residuals: &DVector<f64>,
    weights: &[f64],
    params: &[f64],
    decay: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut wj = jac.clone();
    for (i, &w) in weights.iter().enumerate() {
        wj.row_mut(i).scale_mut(w);
    }
    let jtwj = jac.transpose() * &wj;
    let g = wj.transpose() * residuals - DVector::from_column_slice(params) * decay;
    (jtwj, g)
}

fn weighted_loss(net: &Network, params: &[f64], xs: &[Vec<f64>], ys: &[f64], ws: &[f64], decay: f64) -> f64 {
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (y - net.forward_with(params, x)).powi(2))
        .sum();
    sse + decay * params.iter().map(|p| p * p).sum::<f64>()
}

/// Trains `net` in place on already-scaled inputs and targets.
pub fn train_lm(net: &mut Network, xs: &[Vec<f64>], ys: &[f64], ws: &[f64], cfg: &DnnConfig) -> Result<TrainingSummary> {
    let n = xs.len();
    let p = net.params.len();
    let decay = cfg.weight_decay;
    let mut lambda = cfg.lm_lambda0;
    let mut loss = weighted_loss(net, &net.params, xs, ys, ws, decay);
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("initial loss is {loss}")));
    }
    let mut history = vec![loss];
    let mut stop = "max_epochs";
    let mut epochs = 0;
    'outer: for _ in 0..cfg.max_epochs {
        epochs += 1;
        let mut jac = DMatrix::zeros(n, p);
        let mut resid = DVector::zeros(n);
        for (i, x) in xs.iter().enumerate() {
            let (f, g) = net.output_gradient(x);
            resid[i] = ys[i] - f;
            jac.row_mut(i).copy_from_slice(&g);
        }
        let (jtwj, g) = normal_parts(&jac, &resid, ws, &net.params, decay);
        if g.norm() < GRADIENT_TOL {
            stop = "gradient";
            break;
        }
        loop {
            let a = &jtwj + DMatrix::identity(p, p) * (lambda + decay);
            let trial_loss = solve_spd(a, &g).map(|delta| {
                let trial: Vec<f64> = net.params.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
                (weighted_loss(net, &trial, xs, ys, ws, decay), trial)
            });
            match trial_loss {
                Some((l, trial)) if l.is_finite() && l < loss => {
                    net.params = trial;
                    loss = l;
                    history.push(l);
                    lambda /= cfg.lm_lambda_factor;
                    break;
                }
                _ => {
                    lambda *= cfg.lm_lambda_factor;
                    if lambda > LAMBDA_MAX {
                        stop = "lambda";
                        break 'outer;
                    }
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss became {loss} after {epochs} epochs")));
    }
    let mut warnings = Vec::new();
    if 2 * n < p {
        warnings.push(format!("{n} observations for {p} network parameters"));
    }
    Ok(TrainingSummary {
        iterations: epochs,
        final_loss: loss,
        condition: None,
        stop_reason: Some(stop.to_string()),
        loss_history: history,
        final_lambda: Some(lambda),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnModel {
    pub encoder: DesignEncoder,
    pub network: Network,
    /// Per-input min and range used to scale inputs into [0,1].
    pub input_min: Vec<f64>,
    pub input_range: Vec<f64>,
    pub target_mean: f64,
    pub target_sd: f64,
    pub transforms: TransformSet,
    pub config: DnnConfig,
    pub summary: TrainingSummary,
}

impl DnnModel {
    pub fn fit(
        records: &[ProjectRecord],
        weights: &[f64],
        predictors: &[Feature],
        categoricals: &[String],
        transforms: &TransformSet,
        cfg: &DnnConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if records.is_empty() {
            return Err(Error::InsufficientData("cannot train a network on zero records".into()));
        }
        let encoder = DesignEncoder::fit(records, predictors, categoricals, false)?;
        let raw = records.iter().map(|r| encoder.encode(r)).collect::<Result<Vec<_>>>()?;
        let width = encoder.width();
        let mut input_min = vec![f64::INFINITY; width];
        let mut input_max = vec![f64::NEG_INFINITY; width];
        for row in &raw {
            for (j, &v) in row.iter().enumerate() {
                input_min[j] = input_min[j].min(v);
                input_max[j] = input_max[j].max(v);
            }
        }
        let input_range: Vec<f64> = input_min
            .iter()
            .zip(&input_max)
            .map(|(lo, hi)| if hi > lo { hi - lo } else { 1.0 })
            .collect();
        let y: Vec<f64> = records.iter().map(|r| r.effort).collect();
        let target_mean = crate::stats::mean(&y);
        let sd = crate::stats::sample_sd(&y);
        let target_sd = if sd > 0.0 { sd } else { 1.0 };

        let scale = |row: &[f64]| -> Vec<f64> {
            row.iter()
                .zip(&input_min)
                .zip(&input_range)
                .map(|((v, lo), r)| (v - lo) / r)
                .collect()
        };
        let xs: Vec<Vec<f64>> = raw.iter().map(|r| scale(r)).collect();
        let ys: Vec<f64> = y.iter().map(|v| (v - target_mean) / target_sd).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut network = Network::init(width, &cfg.hidden_layers, &mut rng);
        let summary = train_lm(&mut network, &xs, &ys, weights, cfg)?;
        Ok(DnnModel {
            encoder,
            network,
            input_min,
            input_range,
            target_mean,
            target_sd,
            transforms: transforms.clone(),
            config: cfg.clone(),
            summary,
        })
    }

    pub fn predict_transformed(&self, rec: &ProjectRecord) -> Result<f64> {
        let row = self.encoder.encode(rec)?;
        let x: Vec<f64> = row
            .iter()
            .zip(&self.input_min)
            .zip(&self.input_range)
            .map(|((v, lo), r)| (v - lo) / r)
            .collect();
        let out = self.network.forward(&x) * self.target_sd + self.target_mean;
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::Divergence(format!("non-finite prediction for record {}", rec.id)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
    }

    #[test]
    fn parameter_count() {
        assert_eq!(Network::param_count(&[1, 3, 1]), 10);
        assert_eq!(Network::param_count(&[2, 16, 8, 1]), 48 + 136 + 9);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::init(1, &[3], &mut rng);
        let mut net = net;
        // non-zero biases so every parameter matters
        for p in net.params.iter_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        assert_eq!(net.params.len(), 10);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for x in [-0.7, 0.1, 0.9] {
            let (_, g) = net.output_gradient(&[x]);
            for k in 0..10 {
                let mut up = net.params.clone();
                let mut dn = net.params.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (net.forward_with(&up, &[x]) - net.forward_with(&dn, &[x])) / (2.0 * h);
                worst = worst.max((g[k] - fd).abs() / fd.abs().max(1e-3));
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn huge_lambda_follows_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = Network::init(1, &[4], &mut rng);
        let xs = grid(20);
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).sin()).collect();
        let ws = vec![1.0; 20];
        let mut jac = DMatrix::zeros(20, net.params.len());
        let mut r = DVector::zeros(20);
        for (i, x) in xs.iter().enumerate() {
            let (f, g) = net.output_gradient(x);
            r[i] = ys[i] - f;
            jac.row_mut(i).copy_from_slice(&g);
        }
        let step = lm_step(&jac, &r, &ws, &net.params, 1e8, 0.0).unwrap();
        // -grad of sum w r^2 is 2 J'W r
        let descent = jac.transpose() * &r;
        let cos = step.dot(&descent) / (step.norm() * descent.norm());
        assert!(cos.acos().to_degrees() < 5.0);
    }

    #[test]
    fn accepted_losses_decrease() {
        let xs: Vec<Vec<f64>> = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
            .iter()
            .flat_map(|p| (0..5).map(move |k| vec![p[0] + 0.01 * k as f64, p[1]]))
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| if (x[0] > 0.5) != (x[1] > 0.5) { 1.0 } else { -1.0 }).collect();
        let cfg = DnnConfig {
            hidden_layers: vec![4],
            max_epochs: 50,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut net = Network::init(2, &cfg.hidden_layers, &mut rng);
        let s = train_lm(&mut net, &xs, &ys, &vec![1.0; xs.len()], &cfg).unwrap();
        assert!(s.loss_history.windows(2).all(|w| w[1] < w[0]));
        assert!(s.loss_history.len() > 1);
    }

    #[test]
    fn fits_a_parabola() {
        let xs = grid(50);
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * x[0]).collect();
        let cfg = DnnConfig {
            hidden_layers: vec![8],
            max_epochs: 200,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut net = Network::init(1, &cfg.hidden_layers, &mut rng);
        train_lm(&mut net, &xs, &ys, &vec![1.0; 50], &cfg).unwrap();
        let rmse = (xs.iter().zip(&ys).map(|(x, y)| (net.forward(x) - y).powi(2)).sum::<f64>() / 50.0).sqrt();
        assert!(rmse < 0.02, "{rmse}");
    }

    #[test]
    fn zero_epochs_returns_initial_network() {
        let cfg = DnnConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = Network::init(1, &cfg.hidden_layers, &mut rng);
        let mut net = init.clone();
        let xs = grid(10);
        let s = train_lm(&mut net, &xs, &vec![0.5; 10], &vec![1.0; 10], &cfg).unwrap();
        assert_eq!(net, init);
        assert_eq!(s.iterations, 0);
        assert!(xs.iter().all(|x| net.forward(x).is_finite()));
    }

    #[test]
    fn bad_config() {
        let cfg = DnnConfig {
            hidden_layers: vec![],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
