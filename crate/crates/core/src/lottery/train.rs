use super::{Checkpoint, SeedState};
use crate::data::DatasetStream;
use crate::error::{Error, Result};
use crate::metrics::{loss_terms_on_tape, training_loss, LossWeights, Yardstick};
use crate::models::{Binding, ParameterRegistry, Submodule};
use crate::numerics::Tape;
use crate::optim::{AdamConfig, AdamState};
use crate::pruning::PruningMask;

/// Which submodules receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Encoder, transform and decoder train together.
    Plus,
    /// Encoder held fixed.
    Frozen,
}

impl TrainMode {
    pub fn trains(self, submodule: Submodule) -> bool {
        self == TrainMode::Plus || submodule != Submodule::Encoder
    }

    pub fn label(self) -> &'static str {
        match self {
            TrainMode::Plus => "plus",
            TrainMode::Frozen => "frozen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            mode: TrainMode::Plus,
        }
    }
}

/// State visible to an audit hook after each optimizer step, before the
/// mask is re-applied.
pub struct StepView<'a> {
    /// 1-based count of completed steps.
    pub iteration: u64,
    pub loss: f32,
    pub params: &'a ParameterRegistry,
    /// Gradients as produced by backward, aligned with `params`.
    pub grads: &'a [Option<Vec<f32>>],
    pub adam: &'a AdamState,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterRegistry,
    pub adam: AdamState,
    pub checkpoints: Vec<Checkpoint>,
    pub losses: Vec<f32>,
}

/// Starting point of a training run.
#[derive(Debug, Clone)]
pub struct TrainStart {
    pub params: ParameterRegistry,
    pub adam: Option<AdamState>,
    /// Completed steps so far (labels checkpoints).
    pub iteration: u64,
    pub init_seed: u64,
}

/// Runs `iterations` Adam steps on the masked model. Pruned weights and
/// their moments are re-zeroed after every step; checkpoints are taken
/// when the completed-step count is in `checkpoint_at`.
#[allow(clippy::too_many_arguments)]
pub fn train(
    start: TrainStart,
    stream: &mut DatasetStream,
    iterations: usize,
    mask: &PruningMask,
    cfg: &TrainConfig,
    yard: &Yardstick,
    checkpoint_at: &[u64],
    mut audit: impl FnMut(&StepView<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.weights.validate()?;
    let mut params = start.params;
    mask.check_compatible(&params)?;
    yard.check_compatible(params.arch())?;
    let arch = params.arch().clone();
    let mut adam = start.adam.unwrap_or_else(|| AdamState::new(&params));
    let mut checkpoints = Vec::new();
    let mut losses = Vec::with_capacity(iterations);
    let mut iteration = start.iteration;
    let positions: Vec<Option<usize>> = mask.entries().iter().map(|e| params.position(&e.name)).collect();

    let snapshot = |iteration: u64, params: &ParameterRegistry, adam: &AdamState, stream: &DatasetStream| Checkpoint {
        iteration,
        params: params.clone(),
        adam: adam.clone(),
        seeds: SeedState { init_seed: start.init_seed, data_seed: stream.seed(), data_cursor: stream.cursor() },
    };
    if checkpoint_at.contains(&iteration) {
        checkpoints.push(snapshot(iteration, &params, &adam, stream));
    }
    for _ in 0..iterations {
        let (contents, styles) = stream.next_batch(cfg.batch_size)?;
        let mut tape = Tape::new();
        let model = Binding::bind(&mut tape, &params, Some(mask), |s| cfg.mode.trains(s))?;
        let yb = yard.bind(&mut tape)?;
        let c = tape.constant(contents);
        let s = tape.constant(styles);
        let terms = loss_terms_on_tape(&mut tape, &arch, &model, yard.arch(), &yb, c, s, true)?;
        let loss = training_loss(&mut tape, &terms, &cfg.weights)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss {value} at iteration {}", iteration + 1)));
        }
        tape.backward(loss).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {}", iteration + 1)),
            other => other,
        })?;
        let grads: Vec<Option<Vec<f32>>> = model.leaves().iter().map(|&v| tape.grad(v).map(<[f32]>::to_vec)).collect();
        drop(tape);
        adam.update(&cfg.adam, &mut params, &grads)?;
        iteration += 1;
        losses.push(value);
        audit(&StepView { iteration, loss: value, params: &params, grads: &grads, adam: &adam })?;
        for (e, pos) in mask.entries().iter().zip(&positions) {
            let i = pos.expect("checked compatible");
            if e.keep.iter().all(|&k| k) {
                continue;
            }
            let w = params.entries_mut()[i].tensor.data_mut();
            for (j, _) in e.keep.iter().enumerate().filter(|(_, &k)| !k) {
                w[j] = 0.0;
                adam.m[i][j] = 0.0;
                adam.v[i][j] = 0.0;
            }
        }
        if checkpoint_at.contains(&iteration) {
            checkpoints.push(snapshot(iteration, &params, &adam, stream));
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite(format!("parameters after iteration {iteration}")));
    }
    Ok(TrainOutcome { params, adam, checkpoints, losses })
}

/// Surviving weights take the checkpoint's values, pruned ones are exactly
/// zero. Optimizer state is not carried over.
pub fn rewind(params: &ParameterRegistry, checkpoint: &Checkpoint, mask: &PruningMask) -> Result<ParameterRegistry> {
    params.check_same_layout(&checkpoint.params)?;
    if params.arch() != checkpoint.params.arch() {
        return Err(Error::Architecture(format!(
            "checkpoint architecture {:?} differs from {:?}",
            checkpoint.params.arch(),
            params.arch()
        )));
    }
    let mut out = checkpoint.params.clone();
    crate::pruning::apply_mask(&mut out, mask)?;
    Ok(out)
}
