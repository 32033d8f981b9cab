//! Dense feedforward classifier with exact reverse-mode gradients with
//! respect to parameters (training) and inputs (attacks).
//!
//! Parameters live in one flat vector per model: for each layer, the weight
//! matrix `[out_dim, in_dim]` in row-major order, then the bias `[out_dim]`.
//! The loss is mean softmax cross-entropy over the batch.

use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Architecture of a dense classifier. The final layer emits logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl ArchSpec {
    /// MLP from a dimension chain `[input, hidden.., classes]`: relu on
    /// hidden layers, identity on the output layer.
    pub fn mlp(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::usage("arch needs at least input and output dims"));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                activation: if i + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        let arch = ArchSpec {
            layers,
            num_classes: dims[dims.len() - 1],
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::usage("arch has no layers"));
        }
        for w in self.layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::usage(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        for l in &self.layers {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::usage("layer dims must be positive"));
            }
        }
        let last = self.layers.last().unwrap();
        if last.activation != Activation::Identity {
            return Err(Error::usage("final layer must emit raw logits"));
        }
        if last.out_dim != self.num_classes {
            return Err(Error::usage(format!(
                "final layer width {} != num_classes {}",
                last.out_dim, self.num_classes
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::usage("need at least two classes"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn param_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim * l.out_dim + l.out_dim)
            .sum()
    }

    /// (weight_offset, bias_offset) of each layer inside the flat vector.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut pos = 0;
        for l in &self.layers {
            let w = pos;
            let b = pos + l.in_dim * l.out_dim;
            out.push((w, b));
            pos = b + l.out_dim;
        }
        out
    }
}

/// A model: an architecture plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchSpec,
    flat: Tensor,
}

impl ModelParams {
    pub fn new(arch: ArchSpec, flat: Tensor) -> Result<Self> {
        arch.validate()?;
        if flat.len() != arch.param_len() {
            return Err(Error::usage(format!(
                "flat parameter length {} != arch length {}",
                flat.len(),
                arch.param_len()
            )));
        }
        Ok(ModelParams { arch, flat })
    }

    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        let n = arch.param_len();
        ModelParams::new(arch, Tensor::zeros(vec![n]))
    }

    /// Uniform init in (-1/sqrt(in_dim), 1/sqrt(in_dim)) per layer, zero biases.
    pub fn random_init(arch: ArchSpec, stream: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        let mut flat = vec![0.0; arch.param_len()];
        for (l, (w_off, b_off)) in arch.layers.iter().zip(arch.offsets()) {
            let s = 1.0 / (l.in_dim as f64).sqrt();
            for v in &mut flat[w_off..b_off] {
                *v = (stream.next_f64() * 2.0 - 1.0) * s;
            }
        }
        ModelParams::new(arch, Tensor::from_vec(flat)?)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn flat(&self) -> &Tensor {
        &self.flat
    }

    /// Replace the flat vector, keeping the architecture.
    pub fn with_flat(&self, flat: Tensor) -> Result<Self> {
        ModelParams::new(self.arch.clone(), flat)
    }

    /// Per-layer (weights, bias) views of the flat vector.
    pub fn unflatten(&self) -> Vec<(Tensor, Tensor)> {
        self.arch
            .layers
            .iter()
            .zip(self.arch.offsets())
            .map(|(l, (w_off, b_off))| {
                let w = Tensor::new(
                    vec![l.out_dim, l.in_dim],
                    self.flat.data()[w_off..b_off].to_vec(),
                )
                .expect("layer slice is finite by construction");
                let b = Tensor::from_vec(self.flat.data()[b_off..b_off + l.out_dim].to_vec())
                    .expect("layer slice is finite by construction");
                (w, b)
            })
            .collect()
    }

    /// Reassemble a flat vector from per-layer blocks.
    pub fn flatten(arch: &ArchSpec, blocks: &[(Tensor, Tensor)]) -> Result<Tensor> {
        if blocks.len() != arch.layers.len() {
            return Err(Error::usage("flatten: wrong number of layer blocks"));
        }
        let mut flat = Vec::with_capacity(arch.param_len());
        for (l, (w, b)) in arch.layers.iter().zip(blocks) {
            if w.shape() != [l.out_dim, l.in_dim] || b.shape() != [l.out_dim] {
                return Err(Error::usage("flatten: block shape mismatch"));
            }
            flat.extend_from_slice(w.data());
            flat.extend_from_slice(b.data());
        }
        Tensor::from_vec(flat)
    }

    fn check_batch(&self, x: &Tensor, y: &[usize]) -> Result<usize> {
        let d = x.cols()?;
        if d != self.arch.input_dim() {
            return Err(Error::usage(format!(
                "input width {} != arch input dim {}",
                d,
                self.arch.input_dim()
            )));
        }
        if x.rows() != y.len() {
            return Err(Error::usage(format!(
                "{} samples but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= self.arch.num_classes) {
            return Err(Error::usage(format!(
                "label {bad} out of range [0, {})",
                self.arch.num_classes
            )));
        }
        Ok(x.rows())
    }

    /// Full forward pass keeping pre- and post-activation values per layer.
    fn forward(&self, x: &Tensor) -> ForwardCache {
        let n = x.rows();
        let mut acts: Vec<Vec<f64>> = vec![x.data().to_vec()];
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(self.arch.layers.len());
        let flat = self.flat.data();
        for (l, (w_off, b_off)) in self.arch.layers.iter().zip(self.arch.offsets()) {
            let prev = acts.last().unwrap();
            let mut z = vec![0.0; n * l.out_dim];
            for s in 0..n {
                let row = &prev[s * l.in_dim..(s + 1) * l.in_dim];
                for o in 0..l.out_dim {
                    let w_row = &flat[w_off + o * l.in_dim..w_off + (o + 1) * l.in_dim];
                    let mut acc = flat[b_off + o];
                    for i in 0..l.in_dim {
                        acc += w_row[i] * row[i];
                    }
                    z[s * l.out_dim + o] = acc;
                }
            }
            let a = match l.activation {
                Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                Activation::Identity => z.clone(),
            };
            zs.push(z);
            acts.push(a);
        }
        ForwardCache { acts, zs }
    }

    /// Mean softmax cross-entropy over the batch, plus per-sample logits.
    pub fn forward_loss(&self, x: &Tensor, y: &[usize]) -> Result<(f64, Tensor)> {
        let n = self.check_batch(x, y)?;
        let cache = self.forward(x);
        let logits = cache.acts.last().unwrap();
        let c = self.arch.num_classes;
        let mut total = 0.0;
        for s in 0..n {
            total += sample_ce(&logits[s * c..(s + 1) * c], y[s]);
        }
        let loss = total / n as f64;
        if !loss.is_finite() {
            return Err(Error::numeric("loss is not finite"));
        }
        Ok((loss, Tensor::new(vec![n, c], logits.clone())?))
    }

    /// Cross-entropy of each sample on its own (no mean reduction).
    pub fn per_sample_losses(&self, x: &Tensor, y: &[usize]) -> Result<Vec<f64>> {
        let n = self.check_batch(x, y)?;
        let cache = self.forward(x);
        let logits = cache.acts.last().unwrap();
        let c = self.arch.num_classes;
        Ok((0..n)
            .map(|s| sample_ce(&logits[s * c..(s + 1) * c], y[s]))
            .collect())
    }

    /// Predicted class per sample (argmax logits, lowest index on ties).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let d = x.cols()?;
        if d != self.arch.input_dim() {
            return Err(Error::usage("predict: input width mismatch"));
        }
        let cache = self.forward(x);
        let logits = cache.acts.last().unwrap();
        let c = self.arch.num_classes;
        Ok((0..x.rows())
            .map(|s| {
                let row = &logits[s * c..(s + 1) * c];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Exact gradient of the mean loss with respect to the flat parameters.
    pub fn param_grad(&self, x: &Tensor, y: &[usize]) -> Result<Tensor> {
        Ok(self.loss_and_param_grad(x, y)?.1)
    }

    /// Mean loss together with its parameter gradient (one forward pass).
    pub fn loss_and_param_grad(&self, x: &Tensor, y: &[usize]) -> Result<(f64, Tensor)> {
        let n = self.check_batch(x, y)?;
        let cache = self.forward(x);
        let logits = cache.acts.last().unwrap();
        let c = self.arch.num_classes;
        let mut total = 0.0;
        for s in 0..n {
            total += sample_ce(&logits[s * c..(s + 1) * c], y[s]);
        }
        let loss = total / n as f64;
        if !loss.is_finite() {
            return Err(Error::numeric("loss is not finite"));
        }
        let mut dz = logit_grad(logits, y, c);
        for v in &mut dz {
            *v /= n as f64;
        }
        let (grad, _) = self.backward(x, &cache, dz, false);
        Ok((loss, Tensor::from_vec(grad)?))
    }

    /// Exact gradient of each sample's own loss with respect to its input.
    pub fn input_grad(&self, x: &Tensor, y: &[usize]) -> Result<Tensor> {
        self.check_batch(x, y)?;
        let cache = self.forward(x);
        let dz = logit_grad(cache.acts.last().unwrap(), y, self.arch.num_classes);
        let (_, dx) = self.backward(x, &cache, dz, true);
        Tensor::new(x.shape().to_vec(), dx)
    }

    /// Reverse pass from logit gradients; returns (flat param grad, input grad).
    fn backward(
        &self,
        x: &Tensor,
        cache: &ForwardCache,
        mut dz: Vec<f64>,
        want_input: bool,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = x.rows();
        let flat = self.flat.data();
        let offsets = self.arch.offsets();
        let mut grad = vec![0.0; self.arch.param_len()];
        for (li, l) in self.arch.layers.iter().enumerate().rev() {
            let (w_off, b_off) = offsets[li];
            let prev = &cache.acts[li];
            for s in 0..n {
                let dz_row = &dz[s * l.out_dim..(s + 1) * l.out_dim];
                let prev_row = &prev[s * l.in_dim..(s + 1) * l.in_dim];
                for o in 0..l.out_dim {
                    let g = dz_row[o];
                    if g == 0.0 {
                        continue;
                    }
                    let w_grad = &mut grad[w_off + o * l.in_dim..w_off + (o + 1) * l.in_dim];
                    for i in 0..l.in_dim {
                        w_grad[i] += g * prev_row[i];
                    }
                    grad[b_off + o] += g;
                }
            }
            let need_prev = li > 0 || want_input;
            if !need_prev {
                break;
            }
            let mut da_prev = vec![0.0; n * l.in_dim];
            for s in 0..n {
                let dz_row = &dz[s * l.out_dim..(s + 1) * l.out_dim];
                let da_row = &mut da_prev[s * l.in_dim..(s + 1) * l.in_dim];
                for o in 0..l.out_dim {
                    let g = dz_row[o];
                    if g == 0.0 {
                        continue;
                    }
                    let w_row = &flat[w_off + o * l.in_dim..w_off + (o + 1) * l.in_dim];
                    for i in 0..l.in_dim {
                        da_row[i] += g * w_row[i];
                    }
                }
            }
            if li > 0 {
                // Gate through the previous layer's activation.
                let prev_layer = &self.arch.layers[li - 1];
                let z_prev = &cache.zs[li - 1];
                if prev_layer.activation == Activation::Relu {
                    for (v, &z) in da_prev.iter_mut().zip(z_prev) {
                        if z <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
            dz = da_prev;
        }
        let dx = if want_input { dz } else { Vec::new() };
        (grad, dx)
    }
}

struct ForwardCache {
    acts: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
}

/// Numerically stable cross-entropy of one logit row against a label.
fn sample_ce(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[y]
}

/// softmax(logits) - onehot(y), per sample (no batch reduction).
fn logit_grad(logits: &[f64], y: &[usize], c: usize) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n * c];
    for s in 0..n {
        let row = &logits[s * c..(s + 1) * c];
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let o = &mut out[s * c..(s + 1) * c];
        for j in 0..c {
            o[j] = exps[j] / sum;
        }
        o[y[s]] -= 1.0;
    }
    out
}

/// Worst relative error of the analytic gradients against central finite
/// differences (step 1e-5), on a batch drawn from `seed`.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_param: f64,
    pub max_rel_input: f64,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.max_rel_param.max(self.max_rel_input)
    }
}

const FD_STEP: f64 = 1e-5;

/// Check analytic gradients against central finite differences of the loss.
///
/// The comparison point is redrawn while any relu pre-activation sits within
/// 1e-3 of its kink, where a central difference of the true loss is not a
/// valid derivative estimate.
pub fn finite_diff_check(arch: &ArchSpec, seed: u64) -> Result<GradCheckReport> {
    arch.validate()?;
    let mut stream = RngStream::derive(seed, 0x6763); // gradcheck tag
    let params = ModelParams::random_init(arch.clone(), &mut stream)?;
    let n = 8;
    let d = arch.input_dim();
    let (x, y) = loop {
        let data: Vec<f64> = (0..n * d)
            .map(|_| 0.1 + 0.8 * stream.next_f64())
            .collect();
        let x = Tensor::new(vec![n, d], data)?;
        let y: Vec<usize> = (0..n)
            .map(|_| stream.next_index(arch.num_classes))
            .collect();
        if min_kink_margin(&params, &x) > 1e-3 {
            break (x, y);
        }
    };

    // Parameter side: mean loss, every coordinate.
    let analytic_p = params.param_grad(&x, &y)?;
    let mut max_rel_param = 0.0_f64;
    for i in 0..params.flat().len() {
        let numeric = {
            let mut plus = params.flat().data().to_vec();
            plus[i] += FD_STEP;
            let mut minus = params.flat().data().to_vec();
            minus[i] -= FD_STEP;
            let lp = params.with_flat(Tensor::from_vec(plus)?)?.forward_loss(&x, &y)?.0;
            let lm = params.with_flat(Tensor::from_vec(minus)?)?.forward_loss(&x, &y)?.0;
            (lp - lm) / (2.0 * FD_STEP)
        };
        max_rel_param = max_rel_param.max(rel_err(analytic_p.data()[i], numeric));
    }

    // Input side: per-sample loss, every coordinate.
    let analytic_x = params.input_grad(&x, &y)?;
    let mut max_rel_input = 0.0_f64;
    for s in 0..n {
        for j in 0..d {
            let numeric = {
                let mut plus = x.data().to_vec();
                plus[s * d + j] += FD_STEP;
                let mut minus = x.data().to_vec();
                minus[s * d + j] -= FD_STEP;
                let lp = params.per_sample_losses(&Tensor::new(vec![n, d], plus)?, &y)?[s];
                let lm = params.per_sample_losses(&Tensor::new(vec![n, d], minus)?, &y)?[s];
                (lp - lm) / (2.0 * FD_STEP)
            };
            max_rel_input = max_rel_input.max(rel_err(analytic_x.data()[s * d + j], numeric));
        }
    }

    Ok(GradCheckReport {
        max_rel_param,
        max_rel_input,
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn min_kink_margin(params: &ModelParams, x: &Tensor) -> f64 {
    let cache = params.forward(x);
    let mut margin = f64::INFINITY;
    for (l, z) in params.arch.layers.iter().zip(&cache.zs) {
        if l.activation == Activation::Relu {
            for &v in z {
                margin = margin.min(v.abs());
            }
        }
    }
    margin
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_model(d: usize) -> ModelParams {
        let arch = ArchSpec {
            layers: vec![LayerSpec {
                in_dim: d,
                out_dim: d,
                activation: Activation::Identity,
            }],
            num_classes: d,
        };
        let mut flat = vec![0.0; arch.param_len()];
        for i in 0..d {
            flat[i * d + i] = 1.0;
        }
        ModelParams::new(arch, Tensor::from_vec(flat).unwrap()).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let m = identity_model(3);
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.5, 0.9, 0.3, 0.2, 0.7]).unwrap();
        let (_, logits) = m.forward_loss(&x, &[0, 2]).unwrap();
        assert_eq!(logits.data(), x.data());
    }

    #[test]
    fn equal_logits_cost_ln_c() {
        for c in [2usize, 3, 5] {
            let arch = ArchSpec::mlp(&[4, c]).unwrap();
            let m = ModelParams::zeros(arch).unwrap();
            let x = Tensor::new(vec![2, 4], vec![0.5; 8]).unwrap();
            let (loss, _) = m.forward_loss(&x, &[0, c - 1]).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_222_network_matches_hand_computation() {
        // z1 = [1.1, -0.825], a1 = [1.1, 0], z2 = [-1.05, 0.4],
        // loss = lse(z2) - z2[1] = 0.21072296466975982 (worked by hand).
        let arch = ArchSpec::mlp(&[2, 2, 2]).unwrap();
        let flat = vec![
            1.0, -0.5, 0.25, 0.75, // W1
            0.1, -0.2, // b1
            -1.0, 2.0, 0.5, 0.3, // W2
            0.05, -0.15, // b2
        ];
        let m = ModelParams::new(arch, Tensor::from_vec(flat).unwrap()).unwrap();
        let x = Tensor::new(vec![1, 2], vec![0.5, -1.0]).unwrap();
        let (loss, logits) = m.forward_loss(&x, &[1]).unwrap();
        assert!((logits.data()[0] - (-1.05)).abs() < 1e-15);
        assert!((logits.data()[1] - 0.4).abs() < 1e-15);
        assert!((loss - 0.21072296466975982).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_symmetric_optimum() {
        // Two copies of one point with opposing labels: W = 0 is a stationary
        // point of the convex two-class problem.
        let arch = ArchSpec::mlp(&[3, 2]).unwrap();
        let m = ModelParams::zeros(arch).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.2, 0.7, 0.4, 0.2, 0.7, 0.4]).unwrap();
        let g = m.param_grad(&x, &[0, 1]).unwrap();
        assert!(g.data().iter().all(|&v| v.abs() < 1e-16));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let arch = ArchSpec::mlp(&[4, 6, 3]).unwrap();
        let mut s = RngStream::new(11);
        let m = ModelParams::random_init(arch, &mut s).unwrap();
        let x = Tensor::new(vec![2, 4], (0..8).map(|i| 0.1 * i as f64).collect()).unwrap();
        let y = vec![1usize, 2];
        let doubled = Tensor::new(vec![4, 4], [x.data(), x.data()].concat()).unwrap();
        let y2 = vec![1usize, 2, 1, 2];
        let g1 = m.param_grad(&x, &y).unwrap();
        let g2 = m.param_grad(&doubled, &y2).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_input_gradient_matches_closed_form() {
        // One identity layer: dL/dx = (softmax(Wx + b) - onehot(y))^T W.
        let arch = ArchSpec::mlp(&[3, 2]).unwrap();
        let w = [0.5, -1.0, 0.25, -0.75, 0.2, 1.5];
        let flat = [w.as_slice(), &[0.1, -0.3]].concat();
        let m = ModelParams::new(arch, Tensor::from_vec(flat).unwrap()).unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.4, 0.9, 0.2]).unwrap();
        let y = vec![0usize];

        let (_, logits) = m.forward_loss(&x, &y).unwrap();
        let (l0, l1) = (logits.data()[0], logits.data()[1]);
        let m0 = l0.max(l1);
        let p0 = (l0 - m0).exp() / ((l0 - m0).exp() + (l1 - m0).exp());
        let d = [p0 - 1.0, 1.0 - p0];
        let expected: Vec<f64> = (0..3).map(|i| d[0] * w[i] + d[1] * w[3 + i]).collect();

        let g = m.input_grad(&x, &y).unwrap();
        for (a, b) in g.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_weights_give_zero_input_gradient() {
        let arch = ArchSpec::mlp(&[4, 3]).unwrap();
        let m = ModelParams::zeros(arch).unwrap();
        let x = Tensor::new(vec![2, 4], vec![0.3; 8]).unwrap();
        let g = m.input_grad(&x, &[0, 2]).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_loss_is_deterministic() {
        let arch = ArchSpec::mlp(&[5, 7, 4]).unwrap();
        let mut s = RngStream::new(5);
        let m = ModelParams::random_init(arch, &mut s).unwrap();
        let x = Tensor::new(vec![3, 5], (0..15).map(|i| (i as f64) / 20.0).collect()).unwrap();
        let y = vec![0usize, 3, 1];
        let (a, la) = m.forward_loss(&x, &y).unwrap();
        let (b, lb) = m.forward_loss(&x, &y).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(la.data(), lb.data());
    }

    #[test]
    fn loss_is_batch_order_invariant() {
        let arch = ArchSpec::mlp(&[3, 5, 2]).unwrap();
        let mut s = RngStream::new(8);
        let m = ModelParams::random_init(arch, &mut s).unwrap();
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64) / 15.0).collect()).unwrap();
        let y = vec![0usize, 1, 1, 0];
        let perm = [2usize, 0, 3, 1];
        let xp = Tensor::new(
            vec![4, 3],
            perm.iter().flat_map(|&i| x.row(i).to_vec()).collect(),
        )
        .unwrap();
        let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        let (a, _) = m.forward_loss(&x, &y).unwrap();
        let (b, _) = m.forward_loss(&xp, &yp).unwrap();
        assert!(((a - b) / a.abs().max(1e-300)).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for seed in [0u64, 1, 2] {
            for dims in [&[4usize, 8, 3][..], &[6, 12, 12, 4], &[3, 2]] {
                let arch = ArchSpec::mlp(dims).unwrap();
                let report = finite_diff_check(&arch, seed).unwrap();
                assert!(
                    report.max_rel() < 1e-4,
                    "dims {dims:?} seed {seed}: rel err {}",
                    report.max_rel()
                );
            }
        }
    }

    #[test]
    fn flatten_unflatten_round_trips() {
        let arch = ArchSpec::mlp(&[3, 4, 2]).unwrap();
        let mut s = RngStream::new(99);
        let m = ModelParams::random_init(arch.clone(), &mut s).unwrap();
        let blocks = m.unflatten();
        let flat = ModelParams::flatten(&arch, &blocks).unwrap();
        assert_eq!(flat.data(), m.flat().data());
    }

    #[test]
    fn shape_mismatch_is_a_usage_error() {
        let arch = ArchSpec::mlp(&[4, 2]).unwrap();
        let m = ModelParams::zeros(arch).unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(m.forward_loss(&x, &[0]).is_err());
        let x = Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap();
        assert!(m.forward_loss(&x, &[5]).is_err());
    }
}
