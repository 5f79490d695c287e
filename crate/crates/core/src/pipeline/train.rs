//! Full-batch training loops: ERM pretraining, stitch training and
//! last-layer fine-tuning.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::optim::{sgd_step, OptimizerConfig, OptimizerState};
use crate::datasets::TripletDataset;
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::fairloss::{composite_objective, ConstraintKind, FairnessConstraint};
use crate::fairmetrics::{evaluate, EvalSettings, MetricsReport};
use crate::network::{Network, StitchInit, TrainableSelector};

/// Objectives above this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Erm,
    Tfs,
    Fdr,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Erm => "erm",
            Phase::Tfs => "tfs",
            Phase::Fdr => "fdr",
        }
    }
}

/// One epoch of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub phase: Phase,
    /// 1-based; the record describes the parameters after this many updates.
    pub epoch: usize,
    /// Training objective at the start of the epoch (the value whose gradient
    /// drove this update).
    pub objective: f64,
    /// Validation metrics of the parameters after the update.
    pub validation: MetricsReport,
    pub constraint: FairnessConstraint,
    pub seed: u64,
    /// Only populated when wall-time recording is enabled, so that records
    /// stay reproducible by default.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

impl RunRecord {
    /// Validation score used for model selection: AF under a constraint,
    /// BACC otherwise.
    pub fn selection_score(&self) -> f64 {
        self.validation.af.unwrap_or(self.validation.bacc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub eval: EvalSettings,
    pub seed: u64,
    pub record_wall_time: bool,
}

impl TrainSettings {
    pub fn new(epochs: usize, optimizer: OptimizerConfig, seed: u64) -> Self {
        Self {
            epochs,
            optimizer,
            eval: EvalSettings::default(),
            seed,
            record_wall_time: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters before the first update (the θ₀ of the trained component).
    pub initial: Network,
    /// Parameters of the best validation epoch (`initial` when no epoch ran).
    pub best: Network,
    pub best_epoch: Option<usize>,
    pub final_net: Network,
    pub records: Vec<RunRecord>,
}

/// Epoch with the highest validation selection score; ties go to the earliest.
pub fn select_best(records: &[RunRecord]) -> Result<usize> {
    let mut best: Option<&RunRecord> = None;
    for r in records {
        if best.is_none_or(|b| r.selection_score() > b.selection_score()) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
        .ok_or_else(|| Error::Contract("select_best needs at least one record".into()))
}

/// Objective components of a network on a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub total: f64,
    pub cross_entropy: f64,
    pub penalty: Option<f64>,
}

/// Evaluates `CE + α·R` for `net` on the full dataset.
pub fn objective_value(
    net: &Network,
    ds: &TripletDataset,
    constraint: &FairnessConstraint,
) -> Result<ObjectiveValue> {
    let mut tape = Tape::new();
    let x = tape.constant(ds.x.clone());
    let pass = net.forward(&mut tape, x)?;
    let obj = composite_objective(&mut tape, pass.logits, &ds.y, &ds.a, constraint)?;
    Ok(ObjectiveValue {
        total: tape.scalar(obj.total),
        cross_entropy: tape.scalar(obj.cross_entropy),
        penalty: obj.penalty.map(|p| tape.scalar(p)),
    })
}

fn validation_report(
    net: &Network,
    val: &TripletDataset,
    kind: ConstraintKind,
    eval: &EvalSettings,
) -> Result<MetricsReport> {
    let p = net.predict_proba(&val.x)?;
    evaluate(&p, &val.y, &val.a, &val.name, kind, eval)
}

fn run_loop(
    mut net: Network,
    train: &TripletDataset,
    val: &TripletDataset,
    constraint: &FairnessConstraint,
    settings: &TrainSettings,
    phase: Phase,
) -> Result<TrainOutcome> {
    constraint.validate()?;
    settings.optimizer.validate()?;
    let initial = net.clone();
    let mut opt = OptimizerState::new(settings.optimizer, net.param_count(true));
    let mut params = net.params(true);
    let mut records = Vec::with_capacity(settings.epochs);
    let mut best = initial.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let start = Instant::now();

    for epoch in 1..=settings.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(train.x.clone());
        let pass = net.forward(&mut tape, x)?;
        let obj = composite_objective(&mut tape, pass.logits, &train.y, &train.a, constraint)?;
        let value = tape.scalar(obj.total);
        if !value.is_finite() || value > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                epoch,
                lr: settings.optimizer.lr,
                objective: value,
            });
        }
        let grads = tape.backward(obj.total)?;
        let g = net.trainable_grads(&pass, &grads);
        sgd_step(&mut params, &g, &mut opt)?;
        net.set_params(true, &params)?;

        let record = RunRecord {
            phase,
            epoch,
            objective: value,
            validation: validation_report(&net, val, constraint.kind, &settings.eval)?,
            constraint: *constraint,
            seed: settings.seed,
            wall_time_s: settings
                .record_wall_time
                .then(|| start.elapsed().as_secs_f64()),
        };
        if record.selection_score() > best_score || best_epoch.is_none() {
            best_score = record.selection_score();
            best_epoch = Some(epoch);
            best = net.clone();
        }
        records.push(record);
    }
    Ok(TrainOutcome {
        initial,
        best,
        best_epoch,
        final_net: net,
        records,
    })
}

/// Plain cross-entropy training of every parameter.
pub fn train_erm(
    net: &Network,
    train: &TripletDataset,
    val: &TripletDataset,
    settings: &TrainSettings,
) -> Result<TrainOutcome> {
    if net.stitch().is_some() || net.blocks().iter().any(|b| !b.trainable) {
        return Err(Error::Contract(
            "ERM pretraining expects an all-trainable network without a stitch".into(),
        ));
    }
    run_loop(
        net.clone(),
        train,
        val,
        &FairnessConstraint::none(),
        settings,
        Phase::Erm,
    )
}

/// Where and how to insert the stitching layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StitchPlacement {
    /// Defaults to the position before the last block.
    pub position: Option<usize>,
    pub init: StitchInit,
}

/// Inserts a stitch into a copy of `pretrained`, freezes every other
/// parameter and trains the stitch alone under the penalized objective.
pub fn train_tfs(
    pretrained: &Network,
    balanced: &TripletDataset,
    val: &TripletDataset,
    constraint: &FairnessConstraint,
    settings: &TrainSettings,
    placement: StitchPlacement,
) -> Result<TrainOutcome> {
    if pretrained.stitch().is_some() {
        return Err(Error::Contract(
            "pretrained network already has a stitch".into(),
        ));
    }
    let mut net = pretrained.clone();
    let position = placement.position.unwrap_or(net.depth().saturating_sub(1));
    net.insert_stitch(position, placement.init)?;
    net.set_trainable(TrainableSelector::StitchOnly)?;
    run_loop(net, balanced, val, constraint, settings, Phase::Tfs)
}

/// Fine-tunes only the last block of a copy of `pretrained`.
pub fn train_fdr(
    pretrained: &Network,
    balanced: &TripletDataset,
    val: &TripletDataset,
    constraint: &FairnessConstraint,
    settings: &TrainSettings,
) -> Result<TrainOutcome> {
    if pretrained.stitch().is_some() {
        return Err(Error::Contract(
            "last-layer fine-tuning expects a network without a stitch".into(),
        ));
    }
    let mut net = pretrained.clone();
    net.set_trainable(TrainableSelector::LastBlockOnly)?;
    run_loop(net, balanced, val, constraint, settings, Phase::Fdr)
}
