//! Robustness metrics: per-norm robust accuracy, the dataset-wise minimum
//! across norms (the headline robustness number), sample-wise union
//! accuracy, accuracy under the MSD attack, and curve sweeps over a t grid.

use crate::attack::{msd_attack, pgd_attack, AttackSpec, DomainBox};
use crate::curve::CurveParams;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::Norm;
use serde::{Deserialize, Serialize};

/// Exact header of the sweep CSV emitted by the command line.
pub const SWEEP_CSV_HEADER: &str =
    "t,std_acc,acc_linf,acc_l2,acc_l1,dlr,union_acc,msd_acc,loss_clean";

/// Metrics of one model on one dataset under a set of attack specs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointEval {
    pub std_acc: f64,
    pub acc_linf: Option<f64>,
    pub acc_l2: Option<f64>,
    pub acc_l1: Option<f64>,
    pub dlr: Option<f64>,
    pub union_acc: Option<f64>,
    pub msd_acc: Option<f64>,
    pub loss_clean: f64,
}

/// One row of a curve sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: f64,
    #[serde(flatten)]
    pub eval: PointEval,
}

/// Per-t evaluation records along a curve, sorted by t over [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub grid_n: usize,
    pub norms: Vec<Norm>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// (t, value) of the row with the largest headline robustness;
    /// ties go to the smallest t.
    pub fn best_dlr(&self) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for row in &self.rows {
            if let Some(d) = row.eval.dlr {
                match best {
                    Some((_, bd)) if d <= bd => {}
                    _ => best = Some((row.t, d)),
                }
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.eval.std_acc,
                cell(r.eval.acc_linf),
                cell(r.eval.acc_l2),
                cell(r.eval.acc_l1),
                cell(r.eval.dlr),
                cell(r.eval.union_acc),
                cell(r.eval.msd_acc),
                r.eval.loss_clean,
            ));
        }
        out
    }
}

fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64
}

fn union_fraction(matrix: &[Vec<bool>]) -> f64 {
    let n = matrix[0].len();
    (0..n)
        .filter(|&s| matrix.iter().all(|row| row[s]))
        .count() as f64
        / n as f64
}

fn correct_flags(params: &ModelParams, x: &crate::numcore::Tensor, y: &[usize]) -> Result<Vec<bool>> {
    let pred = params.predict(x)?;
    Ok(pred.iter().zip(y).map(|(p, t)| p == t).collect())
}

/// Fraction of samples classified correctly on the clean data.
pub fn standard_accuracy(params: &ModelParams, data: &Dataset) -> Result<f64> {
    Ok(fraction(&correct_flags(params, data.x(), data.y())?))
}

/// Fraction of samples classified correctly after a single-norm PGD attack.
pub fn robust_accuracy(
    params: &ModelParams,
    data: &Dataset,
    spec: &AttackSpec,
    domain: &DomainBox,
) -> Result<f64> {
    let x_adv = pgd_attack(params, data.x(), data.y(), spec, domain)?;
    Ok(fraction(&correct_flags(params, &x_adv, data.y())?))
}

/// Dataset-wise minimum of the per-norm robust accuracies.
pub fn dlr(
    params: &ModelParams,
    data: &Dataset,
    specs: &[AttackSpec],
    domain: &DomainBox,
) -> Result<f64> {
    if specs.is_empty() {
        return Err(Error::usage("dlr needs at least one attack spec"));
    }
    let mut min = f64::INFINITY;
    for spec in specs {
        min = min.min(robust_accuracy(params, data, spec, domain)?);
    }
    Ok(min)
}

/// Fraction of samples that stay correct under every attack simultaneously.
pub fn union_accuracy(
    params: &ModelParams,
    data: &Dataset,
    specs: &[AttackSpec],
    domain: &DomainBox,
) -> Result<f64> {
    if specs.is_empty() {
        return Err(Error::usage("union accuracy needs at least one attack spec"));
    }
    let mut matrix = Vec::with_capacity(specs.len());
    for spec in specs {
        let x_adv = pgd_attack(params, data.x(), data.y(), spec, domain)?;
        matrix.push(correct_flags(params, &x_adv, data.y())?);
    }
    Ok(union_fraction(&matrix))
}

/// Accuracy after the shared-perturbation MSD attack over all specs.
pub fn msd_accuracy(
    params: &ModelParams,
    data: &Dataset,
    specs: &[AttackSpec],
    domain: &DomainBox,
) -> Result<f64> {
    let x_adv = msd_attack(params, data.x(), data.y(), specs, domain)?;
    Ok(fraction(&correct_flags(params, &x_adv, data.y())?))
}

/// All metrics of one model, running each attack exactly once.
pub fn evaluate_point(
    params: &ModelParams,
    data: &Dataset,
    specs: &[AttackSpec],
    domain: &DomainBox,
) -> Result<PointEval> {
    let std_acc = standard_accuracy(params, data)?;
    let (loss_clean, _) = params.forward_loss(data.x(), data.y())?;
    let mut eval = PointEval {
        std_acc,
        acc_linf: None,
        acc_l2: None,
        acc_l1: None,
        dlr: None,
        union_acc: None,
        msd_acc: None,
        loss_clean,
    };
    if specs.is_empty() {
        return Ok(eval);
    }
    let mut matrix = Vec::with_capacity(specs.len());
    let mut min_acc = f64::INFINITY;
    for spec in specs {
        let x_adv = pgd_attack(params, data.x(), data.y(), spec, domain)?;
        let flags = correct_flags(params, &x_adv, data.y())?;
        let acc = fraction(&flags);
        min_acc = min_acc.min(acc);
        match spec.norm {
            Norm::Linf => eval.acc_linf = Some(acc),
            Norm::L2 => eval.acc_l2 = Some(acc),
            Norm::L1 => eval.acc_l1 = Some(acc),
        }
        matrix.push(flags);
    }
    let union = union_fraction(&matrix);
    debug_assert!(union <= min_acc + 1e-15);
    eval.dlr = Some(min_acc);
    eval.union_acc = Some(union);
    eval.msd_acc = Some(msd_accuracy(params, data, specs, domain)?);
    Ok(eval)
}

/// Evaluate a curve at `grid_n` evenly spaced t values covering [0, 1].
pub fn path_sweep(
    curve: &CurveParams,
    data: &Dataset,
    specs: &[AttackSpec],
    grid_n: usize,
    domain: &DomainBox,
) -> Result<SweepTable> {
    if grid_n < 3 {
        return Err(Error::usage(format!("grid_n = {grid_n} must be at least 3")));
    }
    let mut rows = Vec::with_capacity(grid_n);
    for k in 0..grid_n {
        let t = k as f64 / (grid_n - 1) as f64;
        let point = curve.curve_point(t)?;
        rows.push(SweepRow {
            t,
            eval: evaluate_point(&point, data, specs, domain)?,
        });
    }
    Ok(SweepTable {
        grid_n,
        norms: specs.iter().map(|s| s.norm).collect(),
        rows,
    })
}
