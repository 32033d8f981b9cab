//! Staged robust-curve optimization with full lineage tracking.
//!
//! The pipeline trains one adversarially-trained model per configured norm,
//! connects prescribed endpoint pairs with robust curves, samples candidate
//! models from the best region of each swept curve, retrains the candidates
//! under the remaining norms, connects the results with a final curve over
//! every norm, and returns the path point with the highest headline
//! robustness. Every stage is recorded in an acyclic lineage and, when a
//! work directory is given, persisted as `stage_<id>/` checkpoints plus a
//! progressively rewritten `lineage.json`.

use crate::attack::{AttackSpec, DomainBox};
use crate::ckpt::{save_checkpoint, Checkpoint, CheckpointMeta, CheckpointPayload};
use crate::curve::CurveParams;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evalkit::{path_sweep, SweepTable};
use crate::model::{ArchSpec, ModelParams};
use crate::numcore::{Norm, RngStream};
use crate::train::{adversarial_train, rmc_train, srmc_endpoints, TrainConfig, TrainRun};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn default_region_width() -> f64 {
    0.03
}
fn default_mid_points() -> usize {
    1
}
fn default_srmc_epochs() -> usize {
    5
}
fn default_grid_n() -> usize {
    11
}
fn default_at_lr() -> f64 {
    0.1
}
fn default_rmc_lr() -> f64 {
    0.2
}
fn default_batch_size() -> usize {
    128
}
fn default_attack_steps() -> usize {
    crate::attack::TRAIN_STEPS
}
fn default_eval_steps() -> usize {
    crate::attack::EVAL_STEPS
}
fn default_delta_linf() -> f64 {
    crate::data::DESK_DELTA_LINF
}
fn default_delta_l2() -> f64 {
    crate::data::DESK_DELTA_L2
}
fn default_delta_l1() -> f64 {
    crate::data::DESK_DELTA_L1
}
fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Perturbation norms, in branch order (two or three distinct norms).
    pub norms: Vec<Norm>,
    /// Dimension chain of the classifier, `[input, hidden.., classes]`.
    pub arch: Vec<usize>,
    /// Epochs per adversarial-training stage.
    pub t_epochs: usize,
    /// Epochs per curve connection.
    pub rmc_epochs: usize,
    pub seed: u64,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    /// Half-width of the sampling region around a curve's best point.
    #[serde(default = "default_region_width")]
    pub region_width: f64,
    /// Candidate points sampled from the first connection (two-norm runs).
    #[serde(default = "default_mid_points")]
    pub mid_points: usize,
    /// Build the initial population from one base model plus quick
    /// fine-tunes instead of independent runs.
    #[serde(default)]
    pub srmc: bool,
    #[serde(default = "default_srmc_epochs")]
    pub srmc_epochs: usize,
    #[serde(default = "default_at_lr")]
    pub at_lr: f64,
    #[serde(default = "default_rmc_lr")]
    pub rmc_lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_attack_steps")]
    pub attack_steps: usize,
    #[serde(default = "default_eval_steps")]
    pub eval_steps: usize,
    #[serde(default = "default_delta_linf")]
    pub delta_linf: f64,
    #[serde(default = "default_delta_l2")]
    pub delta_l2: f64,
    #[serde(default = "default_delta_l1")]
    pub delta_l1: f64,
    /// Endpoint pairs for the first connections of a three-norm run;
    /// defaults to connecting (l2, l1) and (linf, l1).
    #[serde(default)]
    pub pairings: Option<Vec<(Norm, Norm)>>,
    /// Independent stages run on up to this many threads.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.norms.len()) {
            return Err(Error::usage("pipeline needs two or three norms"));
        }
        for (i, a) in self.norms.iter().enumerate() {
            if self.norms[i + 1..].contains(a) {
                return Err(Error::usage(format!("duplicate norm {a} in pipeline config")));
            }
        }
        if self.arch.len() < 2 {
            return Err(Error::usage("arch needs at least input and output dims"));
        }
        if self.grid_n < 3 {
            return Err(Error::usage("grid_n must be at least 3"));
        }
        if !(self.region_width > 0.0 && self.region_width < 0.5) {
            return Err(Error::usage(format!(
                "region width {} outside (0, 0.5)",
                self.region_width
            )));
        }
        if !(1..=2).contains(&self.mid_points) {
            return Err(Error::usage("mid_points must be 1 or 2"));
        }
        if !(self.at_lr > 0.0 && self.rmc_lr > 0.0) {
            return Err(Error::usage("learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch size must be positive"));
        }
        if self.jobs == 0 {
            return Err(Error::usage("jobs must be at least 1"));
        }
        for (norm, delta) in [
            (Norm::Linf, self.delta_linf),
            (Norm::L2, self.delta_l2),
            (Norm::L1, self.delta_l1),
        ] {
            if !(delta.is_finite() && delta > 0.0) {
                return Err(Error::usage(format!("delta for {norm} must be positive")));
            }
        }
        if let Some(pairs) = &self.pairings {
            if self.norms.len() == 2 {
                return Err(Error::usage(
                    "pairings are only configurable for three-norm runs",
                ));
            }
            if pairs.len() != 2 {
                return Err(Error::usage("three-norm runs use exactly two pairings"));
            }
            for (a, b) in pairs {
                if a == b || !self.norms.contains(a) || !self.norms.contains(b) {
                    return Err(Error::usage(format!(
                        "pairing ({a}, {b}) must name two distinct configured norms"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn delta(&self, norm: Norm) -> f64 {
        match norm {
            Norm::Linf => self.delta_linf,
            Norm::L2 => self.delta_l2,
            Norm::L1 => self.delta_l1,
        }
    }

    fn train_spec(&self, norm: Norm) -> AttackSpec {
        AttackSpec {
            norm,
            delta: self.delta(norm),
            steps: self.attack_steps,
            alpha: 2.0 * self.delta(norm) / self.attack_steps as f64,
            l1_k: 1,
        }
    }

    fn eval_specs(&self) -> Vec<AttackSpec> {
        self.norms
            .iter()
            .map(|&n| AttackSpec {
                norm: n,
                delta: self.delta(n),
                steps: self.eval_steps,
                alpha: 2.0 * self.delta(n) / self.eval_steps as f64,
                l1_k: 1,
            })
            .collect()
    }

    /// Endpoint pairs for the first connection phase, plus each pair's
    /// held-out norm used for the branch retraining.
    fn connection_plan(&self) -> Vec<(Norm, Norm, Norm)> {
        if self.norms.len() == 2 {
            return vec![(self.norms[0], self.norms[1], self.norms[0])];
        }
        let pairs = self
            .pairings
            .clone()
            .unwrap_or_else(|| vec![(Norm::L2, Norm::L1), (Norm::Linf, Norm::L1)]);
        pairs
            .into_iter()
            .map(|(a, b)| {
                let held_out = self
                    .norms
                    .iter()
                    .copied()
                    .find(|n| *n != a && *n != b)
                    .expect("validated: one norm outside the pair");
                (a, b, held_out)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    At,
    Rmc,
    Srmc,
    Select,
}

/// One pipeline stage: what ran, what it read, and what it produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage_id: usize,
    pub kind: StageKind,
    pub parent_ids: Vec<usize>,
    pub artifact_path: String,
    pub chosen_t: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
}

/// Acyclic record of every stage of one pipeline run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Lineage {
    pub stages: Vec<StageRecord>,
}

impl Lineage {
    /// Check ids are sequential, parents point strictly backwards, and the
    /// roots are exactly the initial training stages.
    pub fn validate(&self) -> Result<()> {
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.stage_id != i {
                return Err(Error::format(format!(
                    "stage id {} at position {i}",
                    stage.stage_id
                )));
            }
            for &p in &stage.parent_ids {
                if p >= stage.stage_id {
                    return Err(Error::format(format!(
                        "stage {} references non-earlier parent {p}",
                        stage.stage_id
                    )));
                }
            }
            let is_root = stage.parent_ids.is_empty();
            let is_initial_training = matches!(stage.kind, StageKind::At | StageKind::Srmc);
            if is_root && !is_initial_training {
                return Err(Error::format(format!(
                    "root stage {} has kind {:?}",
                    stage.stage_id, stage.kind
                )));
            }
            if !is_root && stage.stage_id == 0 {
                return Err(Error::format("stage 0 cannot have parents"));
            }
        }
        if self.stages.first().map(|s| !s.parent_ids.is_empty()) == Some(true) {
            return Err(Error::format("first stage must be a root"));
        }
        Ok(())
    }

    pub fn roots(&self) -> Vec<usize> {
        self.stages
            .iter()
            .filter(|s| s.parent_ids.is_empty())
            .map(|s| s.stage_id)
            .collect()
    }

    /// Stage kinds with consecutive duplicates collapsed; the pipeline's
    /// step structure.
    pub fn kind_groups(&self) -> Vec<StageKind> {
        let mut out: Vec<StageKind> = Vec::new();
        for s in &self.stages {
            if out.last() != Some(&s.kind) {
                out.push(s.kind);
            }
        }
        out
    }
}

/// [t_lo, t_hi] around the sweep's best point, clipped to [0, 1]:
/// the interval candidate models are sampled from.
pub fn select_optimal_region(sweep: &SweepTable, w: f64) -> Result<(f64, f64)> {
    if !(w > 0.0 && w < 0.5) {
        return Err(Error::usage(format!("region width {w} outside (0, 0.5)")));
    }
    if sweep.rows.is_empty() {
        return Err(Error::usage("cannot select a region from an empty sweep"));
    }
    let (t_star, _) = sweep
        .best_dlr()
        .ok_or_else(|| Error::usage("sweep has no robustness column"))?;
    Ok(((t_star - w).max(0.0), (t_star + w).min(1.0)))
}

/// Regions for sampling `count` candidates. The first surrounds the global
/// best point; a second, when requested, surrounds the best point at least
/// 2w away from the first (falling back to the farthest row).
fn select_regions(sweep: &SweepTable, w: f64, count: usize) -> Result<Vec<(f64, f64)>> {
    let first = select_optimal_region(sweep, w)?;
    if count == 1 {
        return Ok(vec![first]);
    }
    let (t_star, _) = sweep.best_dlr().expect("checked above");
    let mut second: Option<(f64, f64)> = None;
    for row in &sweep.rows {
        if let Some(d) = row.eval.dlr {
            if (row.t - t_star).abs() > 2.0 * w {
                match second {
                    Some((_, bd)) if d <= bd => {}
                    _ => second = Some((row.t, d)),
                }
            }
        }
    }
    let t_second = match second {
        Some((t, _)) => t,
        None => {
            // Every row is inside the exclusion zone; take the farthest one.
            sweep
                .rows
                .iter()
                .map(|r| r.t)
                .max_by(|a, b| {
                    ((a - t_star).abs())
                        .partial_cmp(&(b - t_star).abs())
                        .unwrap()
                })
                .unwrap()
        }
    };
    Ok(vec![
        first,
        ((t_second - w).max(0.0), (t_second + w).min(1.0)),
    ])
}

struct StageWriter {
    root: Option<PathBuf>,
}

impl StageWriter {
    fn new(root: Option<&Path>) -> Result<Self> {
        if let Some(r) = root {
            std::fs::create_dir_all(r)?;
        }
        Ok(StageWriter {
            root: root.map(Path::to_path_buf),
        })
    }

    fn write_model(
        &self,
        stage_id: usize,
        name: &str,
        model: &ModelParams,
        meta: CheckpointMeta,
    ) -> Result<()> {
        if let Some(root) = &self.root {
            let ckpt = Checkpoint {
                payload: CheckpointPayload::Model(model.clone()),
                meta,
            };
            save_checkpoint(&ckpt, root.join(format!("stage_{stage_id}")).join(name))?;
        }
        Ok(())
    }

    fn write_curve(
        &self,
        stage_id: usize,
        curve: &CurveParams,
        meta: CheckpointMeta,
    ) -> Result<()> {
        if let Some(root) = &self.root {
            let ckpt = Checkpoint {
                payload: CheckpointPayload::Curve(curve.clone()),
                meta,
            };
            save_checkpoint(&ckpt, root.join(format!("stage_{stage_id}")).join("checkpoint.json"))?;
        }
        Ok(())
    }

    fn write_text(&self, stage_id: usize, name: &str, text: &str) -> Result<()> {
        if let Some(root) = &self.root {
            let dir = root.join(format!("stage_{stage_id}"));
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    fn write_metrics(&self, stage_id: usize, metrics: &BTreeMap<String, f64>) -> Result<()> {
        if let Some(_root) = &self.root {
            let json = serde_json::to_string_pretty(metrics)
                .map_err(|e| Error::format(format!("metrics encode: {e}")))?;
            self.write_text(stage_id, "metrics.json", &(json + "\n"))?;
        }
        Ok(())
    }

    fn write_lineage(&self, lineage: &Lineage) -> Result<()> {
        if let Some(root) = &self.root {
            let json = serde_json::to_string_pretty(lineage)
                .map_err(|e| Error::format(format!("lineage encode: {e}")))?;
            std::fs::write(root.join("lineage.json"), json + "\n")?;
        }
        Ok(())
    }
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    arch: ArchSpec,
    train_data: &'a Dataset,
    test_data: &'a Dataset,
    domain: DomainBox,
    writer: StageWriter,
    lineage: Lineage,
}

impl Runner<'_> {
    fn next_stage_id(&self) -> usize {
        self.lineage.stages.len()
    }

    fn stage_stream(&self, stage_id: usize) -> RngStream {
        RngStream::derive(self.cfg.seed, stage_id as u64)
    }

    fn meta(&self, stage_id: usize, epochs: usize) -> CheckpointMeta {
        CheckpointMeta {
            seed: self.cfg.seed,
            stage_id: Some(stage_id),
            epochs_trained: epochs,
            command_line: "pipeline".into(),
        }
    }

    fn push_stage(
        &mut self,
        kind: StageKind,
        parents: Vec<usize>,
        chosen_t: Option<f64>,
        metrics: BTreeMap<String, f64>,
    ) -> Result<usize> {
        let stage_id = self.next_stage_id();
        self.writer.write_metrics(stage_id, &metrics)?;
        self.lineage.stages.push(StageRecord {
            stage_id,
            kind,
            parent_ids: parents,
            artifact_path: format!("stage_{stage_id}"),
            chosen_t,
            metrics,
        });
        self.writer.write_lineage(&self.lineage)?;
        Ok(stage_id)
    }

    fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.cfg.at_lr,
            epochs,
            batch_size: self.cfg.batch_size,
            seed,
            shuffle: true,
        }
    }

    /// Run one AT branch per (norm, init, seed) triple, in parallel when
    /// jobs allow. Results come back in input order.
    fn train_branches(
        &self,
        branches: &[(Norm, ModelParams, u64)],
        epochs: usize,
    ) -> Result<Vec<TrainRun>> {
        let jobs = self.cfg.jobs.min(branches.len());
        if jobs <= 1 || branches.len() <= 1 {
            return branches
                .iter()
                .map(|(norm, init, seed)| {
                    adversarial_train(
                        init,
                        self.train_data,
                        &self.train_config(epochs, *seed),
                        &[self.cfg.train_spec(*norm)],
                        &self.domain,
                    )
                })
                .collect();
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = branches
                .iter()
                .map(|(norm, init, seed)| {
                    let cfg = self.train_config(epochs, *seed);
                    let spec = self.cfg.train_spec(*norm);
                    scope.spawn(move || {
                        adversarial_train(init, self.train_data, &cfg, &[spec], &self.domain)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        })
    }

    /// Stage 0: one adversarially trained model per norm, either from
    /// independent runs or from a base model plus quick fine-tunes.
    fn initial_population(&mut self) -> Result<Vec<(Norm, ModelParams)>> {
        let stage_id = self.next_stage_id();
        let mut stream = self.stage_stream(stage_id);
        let mut metrics = BTreeMap::new();
        let mut population = Vec::new();

        if self.cfg.srmc {
            let init_seed = stream.next_u64();
            let base_seed = stream.next_u64();
            let tune_seeds: Vec<u64> = self.cfg.norms[1..]
                .iter()
                .map(|_| stream.next_u64())
                .collect();
            let init = ModelParams::random_init(self.arch.clone(), &mut RngStream::new(init_seed))?;
            let base_norm = self.cfg.norms[0];
            let base = adversarial_train(
                &init,
                self.train_data,
                &self.train_config(self.cfg.t_epochs, base_seed),
                &[self.cfg.train_spec(base_norm)],
                &self.domain,
            )?;
            if let Some(l) = base.final_loss() {
                metrics.insert(format!("final_train_loss_{base_norm}"), l);
            }
            self.writer.write_model(
                stage_id,
                &format!("model_{base_norm}.json"),
                &base.params,
                self.meta(stage_id, self.cfg.t_epochs),
            )?;
            population.push((base_norm, base.params.clone()));
            for (norm, seed) in self.cfg.norms[1..].iter().zip(tune_seeds) {
                let few = TrainConfig {
                    epochs: self.cfg.srmc_epochs,
                    seed,
                    ..self.train_config(self.cfg.srmc_epochs, seed)
                };
                let (_, tuned) = srmc_endpoints(
                    &base.params,
                    self.train_data,
                    &few,
                    &self.cfg.train_spec(*norm),
                    &self.domain,
                )?;
                if let Some(l) = tuned.final_loss() {
                    metrics.insert(format!("final_train_loss_{norm}"), l);
                }
                self.writer.write_model(
                    stage_id,
                    &format!("model_{norm}.json"),
                    &tuned.params,
                    self.meta(stage_id, self.cfg.srmc_epochs),
                )?;
                population.push((*norm, tuned.params));
            }
            metrics.insert(
                "epochs".into(),
                (self.cfg.t_epochs + self.cfg.srmc_epochs * (self.cfg.norms.len() - 1)) as f64,
            );
            self.push_stage(StageKind::Srmc, vec![], None, metrics)?;
        } else {
            let branches: Vec<(Norm, ModelParams, u64)> = self
                .cfg
                .norms
                .iter()
                .map(|&norm| {
                    let init_seed = stream.next_u64();
                    let train_seed = stream.next_u64();
                    let init =
                        ModelParams::random_init(self.arch.clone(), &mut RngStream::new(init_seed))?;
                    Ok((norm, init, train_seed))
                })
                .collect::<Result<_>>()?;
            let runs = self.train_branches(&branches, self.cfg.t_epochs)?;
            for ((norm, _, _), run) in branches.iter().zip(runs) {
                if let Some(l) = run.final_loss() {
                    metrics.insert(format!("final_train_loss_{norm}"), l);
                }
                self.writer.write_model(
                    stage_id,
                    &format!("model_{norm}.json"),
                    &run.params,
                    self.meta(stage_id, self.cfg.t_epochs),
                )?;
                population.push((*norm, run.params));
            }
            metrics.insert(
                "epochs".into(),
                (self.cfg.t_epochs * self.cfg.norms.len()) as f64,
            );
            self.push_stage(StageKind::At, vec![], None, metrics)?;
        }
        Ok(population)
    }

    /// A robust connection between two endpoints under the given norms.
    fn connect(
        &mut self,
        parents: Vec<usize>,
        a: &ModelParams,
        b: &ModelParams,
        norms: &[Norm],
    ) -> Result<(usize, CurveParams)> {
        let stage_id = self.next_stage_id();
        let mut stream = self.stage_stream(stage_id);
        let seed = stream.next_u64();
        let specs: Vec<AttackSpec> = norms.iter().map(|&n| self.cfg.train_spec(n)).collect();
        let cfg = TrainConfig {
            lr: self.cfg.rmc_lr,
            epochs: self.cfg.rmc_epochs,
            batch_size: self.cfg.batch_size,
            seed,
            shuffle: true,
        };
        let run = rmc_train(a, b, self.train_data, &cfg, &specs, &self.domain)?;
        let mut metrics = BTreeMap::new();
        if let Some(m) = run.log.last() {
            metrics.insert("final_train_loss".into(), m.train_loss);
        }
        metrics.insert("epochs".into(), self.cfg.rmc_epochs as f64);
        self.writer
            .write_curve(stage_id, &run.curve, self.meta(stage_id, self.cfg.rmc_epochs))?;
        let id = self.push_stage(StageKind::Rmc, parents, None, metrics)?;
        Ok((id, run.curve))
    }

    /// Sweep a curve and create one select stage per sampled candidate.
    /// With `sample = false` the chosen t is the best grid point itself.
    fn select(
        &mut self,
        parent: usize,
        curve: &CurveParams,
        count: usize,
        sample: bool,
    ) -> Result<(Vec<(usize, f64, ModelParams)>, SweepTable)> {
        let sweep = path_sweep(
            curve,
            self.test_data,
            &self.cfg.eval_specs(),
            self.cfg.grid_n,
            &self.domain,
        )?;
        let (t_star, dlr_star) = sweep
            .best_dlr()
            .ok_or_else(|| Error::usage("sweep has no robustness column"))?;
        let regions = select_regions(&sweep, self.cfg.region_width, count)?;
        let mut out = Vec::with_capacity(count);
        for (lo, hi) in regions {
            let stage_id = self.next_stage_id();
            let mut stream = self.stage_stream(stage_id);
            let t = if sample {
                lo + stream.next_f64() * (hi - lo)
            } else {
                t_star
            };
            let chosen = curve.curve_point(t)?;
            let mut metrics = BTreeMap::new();
            metrics.insert("t_star".into(), t_star);
            metrics.insert("dlr_star".into(), dlr_star);
            metrics.insert("region_lo".into(), lo);
            metrics.insert("region_hi".into(), hi);
            self.writer.write_text(stage_id, "sweep.csv", &sweep.to_csv())?;
            self.writer.write_model(
                stage_id,
                "checkpoint.json",
                &chosen,
                self.meta(stage_id, 0),
            )?;
            self.push_stage(StageKind::Select, vec![parent], Some(t), metrics)?;
            out.push((stage_id, t, chosen));
        }
        Ok((out, sweep))
    }
}

/// Run the full staged optimization; returns the best final-path model and
/// the complete lineage. When `workdir` is given, each stage is persisted
/// under `workdir/stage_<id>/` and the lineage under `workdir/lineage.json`.
pub fn run_rmc_optimization(
    cfg: &PipelineConfig,
    train_data: &Dataset,
    test_data: &Dataset,
    workdir: Option<&Path>,
) -> Result<(ModelParams, Lineage)> {
    cfg.validate()?;
    let arch = ArchSpec::mlp(&cfg.arch)?;
    if arch.input_dim() != train_data.dim() {
        return Err(Error::usage(format!(
            "arch input dim {} != dataset dim {}",
            arch.input_dim(),
            train_data.dim()
        )));
    }
    if arch.num_classes != train_data.num_classes() {
        return Err(Error::usage(format!(
            "arch classes {} != dataset classes {}",
            arch.num_classes,
            train_data.num_classes()
        )));
    }
    let mut runner = Runner {
        cfg,
        arch,
        train_data,
        test_data,
        domain: DomainBox::default(),
        writer: StageWriter::new(workdir)?,
        lineage: Lineage::default(),
    };

    // Initial population: one model per norm.
    let population = runner.initial_population()?;
    let by_norm = |n: Norm| -> &ModelParams {
        &population
            .iter()
            .find(|(pn, _)| *pn == n)
            .expect("population covers every configured norm")
            .1
    };

    // First connections and candidate selection.
    let plan = cfg.connection_plan();
    let mut curves = Vec::with_capacity(plan.len());
    for &(a, b, held_out) in &plan {
        let (id, curve) = runner.connect(vec![0], by_norm(a), by_norm(b), &[a, b])?;
        curves.push((id, curve, held_out));
    }
    let mut branch_inits: Vec<(Norm, ModelParams, usize)> = Vec::new();
    if cfg.norms.len() == 2 {
        let (id, curve, _) = &curves[0];
        let (picks, _) = runner.select(*id, curve, cfg.mid_points, true)?;
        for (k, &norm) in cfg.norms.iter().enumerate() {
            // One sampled point seeds both branches; two points seed one each.
            let (sid, _, model) = &picks[k % picks.len()];
            branch_inits.push((norm, model.clone(), *sid));
        }
    } else {
        for (id, curve, held_out) in &curves {
            let (picks, _) = runner.select(*id, curve, 1, true)?;
            let (sid, _, model) = &picks[0];
            branch_inits.push((*held_out, model.clone(), *sid));
        }
    }

    // Retrain candidates under the branch norms, as one stage.
    let stage_id = runner.next_stage_id();
    let mut stream = runner.stage_stream(stage_id);
    let branches: Vec<(Norm, ModelParams, u64)> = branch_inits
        .iter()
        .map(|(norm, init, _)| (*norm, init.clone(), stream.next_u64()))
        .collect();
    let runs = runner.train_branches(&branches, cfg.t_epochs)?;
    let mut metrics = BTreeMap::new();
    let mut endpoints = Vec::with_capacity(2);
    for ((norm, _, _), run) in branches.iter().zip(runs) {
        if let Some(l) = run.final_loss() {
            metrics.insert(format!("final_train_loss_{norm}"), l);
        }
        runner.writer.write_model(
            stage_id,
            &format!("model_{norm}.json"),
            &run.params,
            runner.meta(stage_id, cfg.t_epochs),
        )?;
        endpoints.push(run.params);
    }
    metrics.insert("epochs".into(), (cfg.t_epochs * branches.len()) as f64);
    let parents: Vec<usize> = {
        let mut p: Vec<usize> = branch_inits.iter().map(|(_, _, sid)| *sid).collect();
        p.dedup();
        p
    };
    let at_id = runner.push_stage(StageKind::At, parents, None, metrics)?;

    // Final connection over every norm, then the optimal point.
    let (rmc_id, final_curve) =
        runner.connect(vec![at_id], &endpoints[0], &endpoints[1], &cfg.norms)?;
    let (picks, _) = runner.select(rmc_id, &final_curve, 1, false)?;
    let (_, _, best) = picks.into_iter().next().expect("one final pick");

    let lineage = runner.lineage;
    lineage.validate().expect("pipeline built an invalid lineage");
    Ok((best, lineage))
}
