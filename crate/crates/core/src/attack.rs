//! lp steepest-ascent steps, exact lp-ball projections, single-norm PGD,
//! and the multi steepest descent (MSD) inner solver that shares one
//! perturbation across several norms and keeps the worst-case candidate.
//!
//! All attacks ascend the per-sample loss, start from a zero perturbation,
//! and return points that satisfy both the lp ball and the domain box.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::{lp_norm, Norm, Tensor};
use serde::{Deserialize, Serialize};

/// One perturbation model: norm, budget, inner steps, and step size.
///
/// Meaningful attacks use `delta > 0`, `alpha > 0`, `steps >= 1`; a zero
/// budget or zero steps degrades to the identity on the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub norm: Norm,
    pub delta: f64,
    pub steps: usize,
    pub alpha: f64,
    /// Coordinates receiving mass in the l1 steepest step.
    pub l1_k: usize,
}

/// Default inner steps for training-time attacks.
pub const TRAIN_STEPS: usize = 10;
/// Default inner steps for evaluation attacks.
pub const EVAL_STEPS: usize = 50;

impl AttackSpec {
    pub fn new(norm: Norm, delta: f64, steps: usize, alpha: f64) -> Result<Self> {
        let spec = AttackSpec {
            norm,
            delta,
            steps,
            alpha,
            l1_k: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Training-time defaults: J = 10, alpha = 2 delta / J.
    pub fn for_training(norm: Norm, delta: f64) -> Self {
        AttackSpec {
            norm,
            delta,
            steps: TRAIN_STEPS,
            alpha: 2.0 * delta / TRAIN_STEPS as f64,
            l1_k: 1,
        }
    }

    /// Evaluation defaults: J = 50, alpha = 2 delta / J.
    pub fn for_eval(norm: Norm, delta: f64) -> Self {
        AttackSpec {
            norm,
            delta,
            steps: EVAL_STEPS,
            alpha: 2.0 * delta / EVAL_STEPS as f64,
            l1_k: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(Error::usage(format!("attack delta {} invalid", self.delta)));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::usage(format!("attack alpha {} invalid", self.alpha)));
        }
        if self.l1_k == 0 {
            return Err(Error::usage("l1_k must be at least 1"));
        }
        Ok(())
    }
}

/// Valid-input interval applied coordinate-wise after lp projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: f64,
    pub hi: f64,
}

impl Default for DomainBox {
    fn default() -> Self {
        DomainBox { lo: 0.0, hi: 1.0 }
    }
}

impl DomainBox {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::usage(format!("invalid box [{lo}, {hi}]")));
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.min(self.hi).max(self.lo)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn steepest_step_slice(grad: &[f64], spec: &AttackSpec) -> Vec<f64> {
    match spec.norm {
        Norm::Linf => grad.iter().map(|&g| spec.alpha * sign(g)).collect(),
        Norm::L2 => {
            let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if n == 0.0 {
                vec![0.0; grad.len()]
            } else {
                grad.iter().map(|&g| spec.alpha * g / n).collect()
            }
        }
        Norm::L1 => {
            let k = spec.l1_k.min(grad.len());
            let mut order: Vec<usize> = (0..grad.len()).collect();
            order.sort_by(|&a, &b| {
                grad[b]
                    .abs()
                    .partial_cmp(&grad[a].abs())
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut out = vec![0.0; grad.len()];
            let mass = spec.alpha / k as f64;
            for &i in order.iter().take(k) {
                out[i] = mass * sign(grad[i]);
            }
            out
        }
    }
}

/// Steepest-ascent step for one sample's gradient: `alpha * sign(g)` for
/// linf, the alpha-scaled unit gradient for l2, and alpha split equally over
/// the `l1_k` largest-magnitude coordinates for l1.
pub fn steepest_step(grad: &Tensor, spec: &AttackSpec) -> Result<Tensor> {
    spec.validate()?;
    Tensor::new(grad.shape().to_vec(), steepest_step_slice(grad.data(), spec))
}

/// Euclidean projection of `v` onto the l1 ball of radius `delta`
/// (sort-based simplex projection).
fn l1_ball_project(v: &[f64], delta: f64) -> Vec<f64> {
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    if total <= delta {
        return v.to_vec();
    }
    if delta == 0.0 {
        return vec![0.0; v.len()];
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let candidate = (cum - delta) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter()
        .map(|&x| sign(x) * (x.abs() - theta).max(0.0))
        .collect()
}

fn lp_project_slice(eps: &[f64], spec: &AttackSpec) -> Vec<f64> {
    match spec.norm {
        Norm::Linf => eps
            .iter()
            .map(|&e| e.min(spec.delta).max(-spec.delta))
            .collect(),
        Norm::L2 => {
            let n = eps.iter().map(|e| e * e).sum::<f64>().sqrt();
            if n > spec.delta {
                let s = spec.delta / n;
                eps.iter().map(|&e| s * e).collect()
            } else {
                eps.to_vec()
            }
        }
        Norm::L1 => l1_ball_project(eps, spec.delta),
    }
}

fn project_slice(eps: &[f64], x: &[f64], spec: &AttackSpec, domain: &DomainBox) -> Vec<f64> {
    let mut out = lp_project_slice(eps, spec);
    for (e, &xi) in out.iter_mut().zip(x) {
        let v = xi + *e;
        let c = domain.clamp(v);
        if c != v {
            *e = c - xi;
        }
    }
    // The clamp only moves coordinates toward zero when x is inside the box,
    // but re-check the ball and re-project once if it is violated.
    let norm = match spec.norm {
        Norm::L1 => out.iter().map(|e| e.abs()).sum::<f64>(),
        Norm::L2 => out.iter().map(|e| e * e).sum::<f64>().sqrt(),
        Norm::Linf => out.iter().fold(0.0_f64, |m, e| m.max(e.abs())),
    };
    if norm > spec.delta * (1.0 + 1e-12) {
        out = lp_project_slice(&out, spec);
    }
    out
}

/// Project a perturbation onto the lp ball of `spec` and then restrict
/// `x + eps` to the domain box, re-expressed as a perturbation.
pub fn project(eps: &Tensor, x: &Tensor, spec: &AttackSpec, domain: &DomainBox) -> Result<Tensor> {
    spec.validate()?;
    if eps.shape() != x.shape() {
        return Err(Error::usage(format!(
            "project: perturbation shape {:?} != input shape {:?}",
            eps.shape(),
            x.shape()
        )));
    }
    Tensor::new(
        eps.shape().to_vec(),
        project_slice(eps.data(), x.data(), spec, domain),
    )
}

/// One ascent-and-project update of every row's perturbation. Shared by the
/// PGD loop and the MSD candidate construction so that a single-spec MSD
/// follows the PGD trajectory bit-exactly.
fn step_rows(eps: &Tensor, grad: &Tensor, x: &Tensor, spec: &AttackSpec, domain: &DomainBox) -> Tensor {
    let n = x.rows();
    let w = x.len() / n;
    let mut out = Vec::with_capacity(x.len());
    for s in 0..n {
        let e = &eps.data()[s * w..(s + 1) * w];
        let g = &grad.data()[s * w..(s + 1) * w];
        let step = steepest_step_slice(g, spec);
        let moved: Vec<f64> = e.iter().zip(&step).map(|(&a, &b)| a + b).collect();
        out.extend(project_slice(&moved, &x.data()[s * w..(s + 1) * w], spec, domain));
    }
    Tensor::new(x.shape().to_vec(), out).expect("projection output is finite")
}

#[cfg(debug_assertions)]
fn assert_feasible(eps: &Tensor, x: &Tensor, spec: &AttackSpec, domain: &DomainBox) {
    let n = x.rows();
    let w = x.len() / n;
    for s in 0..n {
        let e = Tensor::from_vec(eps.data()[s * w..(s + 1) * w].to_vec()).unwrap();
        let norm = lp_norm(&e, spec.norm).unwrap();
        debug_assert!(
            norm <= spec.delta * (1.0 + 1e-12) + 1e-15,
            "ball violated: {norm} > {}",
            spec.delta
        );
        for (ev, xv) in e.data().iter().zip(&x.data()[s * w..(s + 1) * w]) {
            let v = ev + xv;
            debug_assert!(v >= domain.lo - 1e-12 && v <= domain.hi + 1e-12, "box violated: {v}");
        }
    }
}

/// Projected gradient ascent under a single norm; returns the attacked batch.
pub fn pgd_attack(
    params: &ModelParams,
    x: &Tensor,
    y: &[usize],
    spec: &AttackSpec,
    domain: &DomainBox,
) -> Result<Tensor> {
    spec.validate()?;
    if spec.delta == 0.0 || spec.steps == 0 {
        return Ok(x.clone());
    }
    let mut eps = Tensor::zeros(x.shape().to_vec());
    for _ in 0..spec.steps {
        let grad = params.input_grad(&x.add(&eps)?, y)?;
        eps = step_rows(&eps, &grad, x, spec, domain);
    }
    #[cfg(debug_assertions)]
    assert_feasible(&eps, x, spec, domain);
    x.add(&eps)
}

fn validate_msd_specs(specs: &[AttackSpec]) -> Result<usize> {
    if specs.is_empty() {
        return Err(Error::usage("msd needs at least one attack spec"));
    }
    for (i, a) in specs.iter().enumerate() {
        a.validate()?;
        for b in &specs[i + 1..] {
            if a.norm == b.norm {
                return Err(Error::usage(format!("duplicate norm {} in msd specs", a.norm)));
            }
        }
    }
    let steps = specs[0].steps;
    if specs.iter().any(|s| s.steps != steps) {
        return Err(Error::usage("msd specs must share one step count"));
    }
    Ok(steps)
}

/// One MSD iteration: build a projected candidate per norm from the shared
/// perturbation, then keep, per sample, the candidate with the largest loss
/// (first spec wins ties).
pub fn msd_step(
    params: &ModelParams,
    x: &Tensor,
    y: &[usize],
    eps: &Tensor,
    specs: &[AttackSpec],
    domain: &DomainBox,
) -> Result<Tensor> {
    validate_msd_specs(specs)?;
    if eps.shape() != x.shape() {
        return Err(Error::usage("msd_step: perturbation shape mismatch"));
    }
    let grad = params.input_grad(&x.add(eps)?, y)?;
    let candidates: Vec<Tensor> = specs
        .iter()
        .map(|spec| step_rows(eps, &grad, x, spec, domain))
        .collect();
    if candidates.len() == 1 {
        return Ok(candidates.into_iter().next().unwrap());
    }
    let losses: Vec<Vec<f64>> = candidates
        .iter()
        .map(|c| params.per_sample_losses(&x.add(c)?, y))
        .collect::<Result<_>>()?;
    let n = x.rows();
    let w = x.len() / n;
    let mut out = vec![0.0; x.len()];
    for s in 0..n {
        let mut best = 0;
        for i in 1..specs.len() {
            if losses[i][s] > losses[best][s] {
                best = i;
            }
        }
        out[s * w..(s + 1) * w].copy_from_slice(&candidates[best].data()[s * w..(s + 1) * w]);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Multi steepest descent attack: one shared perturbation, per-step
/// worst-case selection across the given norms.
pub fn msd_attack(
    params: &ModelParams,
    x: &Tensor,
    y: &[usize],
    specs: &[AttackSpec],
    domain: &DomainBox,
) -> Result<Tensor> {
    let steps = validate_msd_specs(specs)?;
    let mut eps = Tensor::zeros(x.shape().to_vec());
    for _ in 0..steps {
        eps = msd_step(params, x, y, &eps, specs, domain)?;
    }
    x.add(&eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchSpec, ModelParams};
    use crate::numcore::RngStream;
    use proptest::prelude::*;

    const WIDE: DomainBox = DomainBox { lo: -100.0, hi: 100.0 };

    fn spec(norm: Norm, delta: f64, alpha: f64) -> AttackSpec {
        AttackSpec {
            norm,
            delta,
            steps: 1,
            alpha,
            l1_k: 1,
        }
    }

    // Independent oracle: minimize ||w - v||^2 s.t. ||w||_1 <= delta via
    // bisection on the KKT soft-threshold tau.
    fn l1_project_oracle(v: &[f64], delta: f64) -> Vec<f64> {
        let total: f64 = v.iter().map(|x| x.abs()).sum();
        if total <= delta {
            return v.to_vec();
        }
        let mut lo = 0.0;
        let mut hi = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        for _ in 0..200 {
            let tau = 0.5 * (lo + hi);
            let mass: f64 = v.iter().map(|x| (x.abs() - tau).max(0.0)).sum();
            if mass > delta {
                lo = tau;
            } else {
                hi = tau;
            }
        }
        let tau = 0.5 * (lo + hi);
        v.iter()
            .map(|&x| sign(x) * (x.abs() - tau).max(0.0))
            .collect()
    }

    #[test]
    fn steepest_step_examples() {
        let g = Tensor::from_vec(vec![0.3, -2.0]).unwrap();
        let s = steepest_step(&g, &spec(Norm::Linf, 1.0, 0.1)).unwrap();
        assert_eq!(s.data(), &[0.1, -0.1]);

        let g = Tensor::from_vec(vec![3.0, 4.0]).unwrap();
        let s = steepest_step(&g, &spec(Norm::L2, 1.0, 1.0)).unwrap();
        assert!((s.data()[0] - 0.6).abs() < 1e-15);
        assert!((s.data()[1] - 0.8).abs() < 1e-15);

        let g = Tensor::from_vec(vec![0.3, -2.0]).unwrap();
        let s = steepest_step(&g, &spec(Norm::L1, 1.0, 0.5)).unwrap();
        assert_eq!(s.data(), &[0.0, -0.5]);
    }

    #[test]
    fn l1_step_splits_mass_over_top_k() {
        let g = Tensor::from_vec(vec![0.3, -2.0, 1.5]).unwrap();
        let mut sp = spec(Norm::L1, 1.0, 0.6);
        sp.l1_k = 2;
        let s = steepest_step(&g, &sp).unwrap();
        assert_eq!(s.data(), &[0.0, -0.3, 0.3]);
    }

    #[test]
    fn zero_gradient_l2_step_is_zero() {
        let g = Tensor::from_vec(vec![0.0, 0.0]).unwrap();
        let s = steepest_step(&g, &spec(Norm::L2, 1.0, 0.7)).unwrap();
        assert_eq!(s.data(), &[0.0, 0.0]);
    }

    #[test]
    fn project_examples() {
        let x = Tensor::from_vec(vec![0.5, 0.5]).unwrap();
        let e = Tensor::from_vec(vec![0.5, -0.3]).unwrap();
        let p = project(&e, &x, &spec(Norm::Linf, 0.2, 0.1), &DomainBox::default()).unwrap();
        assert_eq!(p.data(), &[0.2, -0.2]);

        let x = Tensor::from_vec(vec![0.1, 0.1]).unwrap();
        let e = Tensor::from_vec(vec![3.0, 4.0]).unwrap();
        let p = project(&e, &x, &spec(Norm::L2, 1.0, 0.1), &DomainBox::default()).unwrap();
        assert!((p.data()[0] - 0.6).abs() < 1e-15);
        assert!((p.data()[1] - 0.8).abs() < 1e-15);

        let x = Tensor::from_vec(vec![0.0, 0.0]).unwrap();
        let e = Tensor::from_vec(vec![3.0, 1.0]).unwrap();
        let p = project(&e, &x, &spec(Norm::L1, 2.0, 0.1), &WIDE).unwrap();
        let oracle = l1_project_oracle(e.data(), 2.0);
        assert!((p.data()[0] - 2.0).abs() < 1e-12);
        assert!(p.data()[1].abs() < 1e-12);
        for (a, b) in p.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }

        let x = Tensor::from_vec(vec![0.3, 0.7]).unwrap();
        let e = Tensor::from_vec(vec![0.5, -0.5]).unwrap();
        let p = project(&e, &x, &spec(Norm::L1, 2.0, 0.1), &DomainBox::default()).unwrap();
        assert_eq!(p.data(), e.data());
    }

    #[test]
    fn l1_projection_matches_qp_oracle_on_random_instances() {
        let mut stream = RngStream::new(31);
        for trial in 0..100 {
            let dim = 2 + (trial % 9);
            let v: Vec<f64> = (0..dim).map(|_| stream.next_f64() * 8.0 - 4.0).collect();
            let delta = 0.1 + stream.next_f64() * 3.0;
            let x = Tensor::from_vec(vec![0.0; dim]).unwrap();
            let e = Tensor::from_vec(v.clone()).unwrap();
            let got = project(&e, &x, &spec(Norm::L1, delta, 0.1), &WIDE).unwrap();
            let want = l1_project_oracle(&v, delta);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "dim {dim} delta {delta}: {a} vs {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_feasible(
            raw in proptest::collection::vec(-3.0_f64..3.0, 2..12),
            xsrc in proptest::collection::vec(0.05_f64..0.95, 2..12),
            delta in 0.01_f64..2.0,
            which in 0usize..3,
        ) {
            let dim = raw.len().min(xsrc.len());
            let e = Tensor::from_vec(raw[..dim].to_vec()).unwrap();
            let x = Tensor::from_vec(xsrc[..dim].to_vec()).unwrap();
            let norm = [Norm::L1, Norm::L2, Norm::Linf][which];
            let sp = spec(norm, delta, 0.1);
            let domain = DomainBox::default();
            let once = project(&e, &x, &sp, &domain).unwrap();
            let twice = project(&once, &x, &sp, &domain).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            prop_assert!(lp_norm(&once, norm).unwrap() <= delta * (1.0 + 1e-12));
            for (ev, xv) in once.data().iter().zip(x.data()) {
                let v = ev + xv;
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            }
        }
    }

    fn linear_two_class(w0: &[f64], w1: &[f64]) -> ModelParams {
        let d = w0.len();
        let arch = ArchSpec::mlp(&[d, 2]).unwrap();
        let flat = [w0, w1, &[0.0, 0.0][..]].concat();
        ModelParams::new(arch, Tensor::from_vec(flat).unwrap()).unwrap()
    }

    #[test]
    fn zero_budget_pgd_returns_input() {
        let m = linear_two_class(&[1.0, -1.0], &[-1.0, 1.0]);
        let x = Tensor::new(vec![1, 2], vec![0.4, 0.6]).unwrap();
        let sp = AttackSpec {
            norm: Norm::Linf,
            delta: 0.0,
            steps: 5,
            alpha: 0.1,
            l1_k: 1,
        };
        let out = pgd_attack(&m, &x, &[0], &sp, &DomainBox::default()).unwrap();
        assert_eq!(out.data(), x.data());

        let sp0 = AttackSpec {
            norm: Norm::L2,
            delta: 0.3,
            steps: 0,
            alpha: 0.1,
            l1_k: 1,
        };
        let out = pgd_attack(&m, &x, &[0], &sp0, &DomainBox::default()).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn linear_linf_attack_saturates_at_the_budget() {
        // Two-class linear logits: the input gradient direction is fixed at
        // w1 - w0, so linf ascent saturates at x + delta * sign(w1 - w0),
        // clamped to the box.
        let w0 = [1.0, -0.5, 0.8];
        let w1 = [-0.5, 1.0, -1.2];
        let m = linear_two_class(&w0, &w1);
        let x = Tensor::new(vec![1, 3], vec![0.5, 0.97, 0.2]).unwrap();
        let delta = 0.1;
        let sp = AttackSpec {
            norm: Norm::Linf,
            delta,
            steps: 8,
            alpha: 0.025,
            l1_k: 1,
        };
        let domain = DomainBox::default();
        let out = pgd_attack(&m, &x, &[0], &sp, &domain).unwrap();
        for i in 0..3 {
            let dir = sign(w1[i] - w0[i]);
            let expect = domain.clamp(x.data()[i] + delta * dir);
            assert!(
                (out.data()[i] - expect).abs() < 1e-12,
                "coord {i}: {} vs {expect}",
                out.data()[i]
            );
        }
        // The second coordinate exercised the box clamp.
        assert!((out.data()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_l2_step_moves_min_alpha_delta() {
        let m = linear_two_class(&[2.0, 1.0], &[-1.0, 0.5]);
        let x = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        let sp = AttackSpec {
            norm: Norm::L2,
            delta: 0.2,
            steps: 1,
            alpha: 0.001,
            l1_k: 1,
        };
        let out = pgd_attack(&m, &x, &[0], &sp, &DomainBox::default()).unwrap();
        let moved = out.sub(&x).unwrap();
        let dist = lp_norm(&moved, Norm::L2).unwrap();
        assert!((dist - 0.001).abs() < 1e-12);
    }

    #[test]
    fn msd_with_one_spec_equals_pgd_bit_exactly() {
        let arch = ArchSpec::mlp(&[4, 6, 3]).unwrap();
        let mut s = RngStream::new(17);
        let m = ModelParams::random_init(arch, &mut s).unwrap();
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| 0.2 + 0.05 * i as f64).collect()).unwrap();
        let y = vec![0usize, 1, 2];
        for norm in [Norm::Linf, Norm::L2, Norm::L1] {
            let sp = AttackSpec {
                norm,
                delta: 0.15,
                steps: 6,
                alpha: 0.05,
                l1_k: 1,
            };
            let a = pgd_attack(&m, &x, &y, &sp, &DomainBox::default()).unwrap();
            let b = msd_attack(&m, &x, &y, &[sp], &DomainBox::default()).unwrap();
            assert_eq!(a.data(), b.data(), "norm {norm}");
        }
    }

    #[test]
    fn msd_selection_takes_the_per_sample_argmax() {
        let arch = ArchSpec::mlp(&[4, 8, 3]).unwrap();
        let mut s = RngStream::new(23);
        let m = ModelParams::random_init(arch, &mut s).unwrap();
        let x = Tensor::new(vec![4, 4], (0..16).map(|i| 0.15 + 0.04 * i as f64).collect()).unwrap();
        let y = vec![0usize, 1, 2, 0];
        let specs = [
            AttackSpec::for_training(Norm::Linf, 0.05),
            AttackSpec::for_training(Norm::L2, 0.2),
            AttackSpec::for_training(Norm::L1, 0.6),
        ];
        let domain = DomainBox::default();
        let mut eps = Tensor::zeros(x.shape().to_vec());
        for _ in 0..specs[0].steps {
            let next = msd_step(&m, &x, &y, &eps, &specs, &domain).unwrap();
            // Oracle: enumerate candidate losses and check the selected row
            // dominates every candidate.
            let grad = m.input_grad(&x.add(&eps).unwrap(), &y).unwrap();
            let cands: Vec<Tensor> = specs
                .iter()
                .map(|sp| {
                    let n = x.rows();
                    let w = 4;
                    let mut rows = Vec::new();
                    for smp in 0..n {
                        let e = &eps.data()[smp * w..(smp + 1) * w];
                        let g = &grad.data()[smp * w..(smp + 1) * w];
                        let step = steepest_step_slice(g, sp);
                        let moved: Vec<f64> =
                            e.iter().zip(&step).map(|(&a, &b)| a + b).collect();
                        rows.extend(project_slice(
                            &moved,
                            &x.data()[smp * w..(smp + 1) * w],
                            sp,
                            &domain,
                        ));
                    }
                    Tensor::new(x.shape().to_vec(), rows).unwrap()
                })
                .collect();
            let losses: Vec<Vec<f64>> = cands
                .iter()
                .map(|c| m.per_sample_losses(&x.add(c).unwrap(), &y).unwrap())
                .collect();
            let selected = m.per_sample_losses(&x.add(&next).unwrap(), &y).unwrap();
            for smp in 0..x.rows() {
                for li in &losses {
                    assert!(selected[smp] >= li[smp] - 1e-15);
                }
            }
            eps = next;
        }
    }

    #[test]
    fn msd_prefers_the_dominant_linf_candidate_on_a_linear_model() {
        // With fixed gradient direction w = w1 - w0, each linf step raises the
        // decisive logit margin by alpha * ||w||_1 and each l2 step by
        // alpha * ||w||_2, so the linf candidate wins every selection and the
        // trajectory equals pure linf PGD.
        let w0 = [1.0, -1.0, 0.5];
        let w1 = [-1.0, 1.0, -0.5];
        let m = linear_two_class(&w0, &w1);
        let x = Tensor::new(vec![1, 3], vec![0.5, 0.5, 0.5]).unwrap();
        let y = [0usize];
        let linf = AttackSpec {
            norm: Norm::Linf,
            delta: 0.3,
            steps: 5,
            alpha: 0.02,
            l1_k: 1,
        };
        let l2 = AttackSpec {
            norm: Norm::L2,
            delta: 0.3,
            steps: 5,
            alpha: 0.02,
            l1_k: 1,
        };
        let domain = DomainBox::default();
        let msd = msd_attack(&m, &x, &y, &[linf, l2], &domain).unwrap();
        let pgd = pgd_attack(&m, &x, &y, &linf, &domain).unwrap();
        assert_eq!(msd.data(), pgd.data());
    }

    #[test]
    fn msd_rejects_bad_spec_lists() {
        let m = linear_two_class(&[1.0], &[-1.0]);
        let x = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        let domain = DomainBox::default();
        assert!(msd_attack(&m, &x, &[0], &[], &domain).is_err());
        let a = AttackSpec::for_training(Norm::L2, 0.1);
        assert!(msd_attack(&m, &x, &[0], &[a, a], &domain).is_err());
        let mut b = AttackSpec::for_training(Norm::Linf, 0.1);
        b.steps = 3;
        assert!(msd_attack(&m, &x, &[0], &[a, b], &domain).is_err());
    }
}
