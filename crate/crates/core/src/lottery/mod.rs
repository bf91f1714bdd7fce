//! Iterative magnitude pruning with rewinding, and the baselines it is
//! compared against.
//!
//! Round `i` keeps the grid count `⌈n · (1 − p)^i⌉` of all `n` prunable
//! weights, removing only inside the pruning scope. Every candidate
//! subnetwork is retrained for the same `N` iterations as the dense model
//! and scored on held-out pairs.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

pub use checkpoint::{Checkpoint, SeedState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{rewind, train, StepView, TrainConfig, TrainMode, TrainOutcome, TrainStart};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{average_test_error, ErrorReport, Yardstick};
use crate::models::{init_parameters_for, Architecture, ParameterRegistry, Submodule};
use crate::numerics::Tensor;
use crate::pruning::{
    apply_mask, magnitude_prune_count, random_prune_count, random_reinit, PruningMask, Scope, SparsitySchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Iterative magnitude pruning with rewinding.
    Imp,
    /// One-shot magnitude pruning of the trained dense model.
    Omp,
    /// Random pruning on the same schedule.
    Rp,
    /// IMP masks with a fresh random initialization.
    Rt,
    /// Magnitude pruning then continued training, no rewind.
    Fp,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Imp, Strategy::Omp, Strategy::Rp, Strategy::Rt, Strategy::Fp];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Imp => "IMP",
            Strategy::Omp => "OMP",
            Strategy::Rp => "RP",
            Strategy::Rt => "RT",
            Strategy::Fp => "FP",
        }
    }

    pub fn rewinds(self) -> bool {
        self != Strategy::Fp
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?} (imp|omp|rp|rt|fp)")))
    }
}

/// Independent seeds of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub prune: u64,
    pub reinit: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seeds {
    /// Seeds for trial `trial` derived from one base seed.
    pub fn for_trial(base: u64, trial: u32) -> Self {
        let root = splitmix(base ^ splitmix(u64::from(trial)));
        Seeds {
            init: splitmix(root ^ 1),
            data: splitmix(root ^ 2),
            prune: splitmix(root ^ 3),
            reinit: splitmix(root ^ 4),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpConfig {
    pub arch: Architecture,
    /// Training iterations `N` per round.
    pub iterations: usize,
    /// Rewind point `r`, in completed iterations.
    pub rewind_iteration: usize,
    pub schedule: SparsitySchedule,
    pub target_sparsity: f64,
    pub scope: Scope,
    pub train: TrainConfig,
    pub seeds: Seeds,
    pub eval_batch: usize,
}

impl ImpConfig {
    pub fn new(arch: Architecture, iterations: usize, seeds: Seeds) -> Self {
        ImpConfig {
            arch,
            iterations,
            rewind_iteration: 0,
            schedule: SparsitySchedule::default(),
            target_sparsity: 0.892,
            scope: Scope::PT,
            train: TrainConfig::default(),
            seeds,
            eval_batch: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        SparsitySchedule::new(self.schedule.fraction)?;
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if self.rewind_iteration >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "rewind iteration {} must be below N = {}",
                self.rewind_iteration, self.iterations
            )));
        }
        if !(self.target_sparsity > 0.0 && self.target_sparsity < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target sparsity must lie in (0,1), got {}",
                self.target_sparsity
            )));
        }
        if self.train.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        self.train.weights.validate()
    }

    /// Number of pruning rounds needed to reach the target.
    pub fn rounds(&self) -> u32 {
        self.schedule.rounds_to_reach(self.target_sparsity)
    }
}

/// Rewind points `{0, 0.1, 0.2, 0.3, 0.4} · N`.
pub fn rewind_grid(iterations: usize) -> Vec<u64> {
    (0..5u64).map(|k| k * iterations as u64 / 10).collect()
}

/// Shared inputs of every run in a comparison: data, the evaluation
/// yardstick, an optional pretrained encoder copied into each fresh
/// initialization, and the held-out pairs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub dataset: Dataset,
    pub yard: Yardstick,
    pub encoder_init: Option<ParameterRegistry>,
    pub test_pairs: Vec<(Tensor, Tensor)>,
}

impl Experiment {
    pub fn evaluate(
        &self,
        params: &ParameterRegistry,
        mask: Option<&PruningMask>,
        batch: usize,
    ) -> Result<ErrorReport> {
        average_test_error(params, mask, &self.yard, &self.test_pairs, batch)
    }
}

/// `θ^(0)`: a seeded fresh draw with the pretrained encoder copied in.
pub fn initial_params(cfg: &ImpConfig, exp: &Experiment) -> Result<ParameterRegistry> {
    let mut p = init_parameters_for(&cfg.arch, cfg.seeds.init);
    if let Some(enc) = &exp.encoder_init {
        let n = p.overwrite_from(enc)?;
        if n != p.count(Submodule::Encoder) {
            return Err(Error::Architecture(format!(
                "pretrained encoder provides {n} of {} encoder tensors",
                p.count(Submodule::Encoder)
            )));
        }
    } else if cfg.train.mode == TrainMode::Frozen {
        return Err(Error::InvalidArgument("frozen mode needs a pretrained encoder".into()));
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct DenseRun {
    pub init: ParameterRegistry,
    pub trained: ParameterRegistry,
    pub checkpoints: Vec<Checkpoint>,
    pub report: ErrorReport,
    pub losses: Vec<f32>,
    pub seconds: f64,
}

impl DenseRun {
    pub fn checkpoint(&self, iteration: usize) -> Result<&Checkpoint> {
        self.checkpoints
            .iter()
            .find(|c| c.iteration == iteration as u64)
            .ok_or_else(|| Error::InvalidArgument(format!("no checkpoint at iteration {iteration}")))
    }
}

/// Trains and scores the dense model, keeping checkpoints at `rewind_at`.
pub fn train_dense(cfg: &ImpConfig, exp: &Experiment, rewind_at: &[u64]) -> Result<DenseRun> {
    cfg.validate()?;
    let clock = Instant::now();
    let init = initial_params(cfg, exp)?;
    let mask = PruningMask::ones(&init);
    let mut stream = exp.dataset.stream(Split::Train, cfg.seeds.data);
    let mut at: Vec<u64> = rewind_at.to_vec();
    at.push(cfg.rewind_iteration as u64);
    let start = TrainStart { params: init.clone(), adam: None, iteration: 0, init_seed: cfg.seeds.init };
    let out = train(start, &mut stream, cfg.iterations, &mask, &cfg.train, &exp.yard, &at, |_| Ok(()))?;
    let report = exp.evaluate(&out.params, None, cfg.eval_batch)?;
    Ok(DenseRun {
        init,
        trained: out.params,
        checkpoints: out.checkpoints,
        report,
        losses: out.losses,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Retrains a masked subnetwork from `start` for `N` iterations, resuming
/// the data stream at `cursor`, and scores it.
pub fn evaluate_subnetwork(
    mask: &PruningMask,
    start: ParameterRegistry,
    cursor: u64,
    cfg: &ImpConfig,
    exp: &Experiment,
) -> Result<(ErrorReport, ParameterRegistry)> {
    let mut stream = exp.dataset.stream(Split::Train, cfg.seeds.data);
    stream.set_cursor(cursor);
    let st = TrainStart { params: start, adam: None, iteration: 0, init_seed: cfg.seeds.init };
    let out = train(st, &mut stream, cfg.iterations, mask, &cfg.train, &exp.yard, &[], |_| Ok(()))?;
    let report = exp.evaluate(&out.params, Some(mask), cfg.eval_batch)?;
    Ok((report, out.params))
}

#[derive(Debug, Clone)]
pub struct TicketRecord {
    pub strategy: Strategy,
    pub round: u32,
    pub sparsity: f64,
    pub mask: PruningMask,
    /// Weights the subnetwork was retrained from.
    pub rewound: ParameterRegistry,
    pub trained: ParameterRegistry,
    pub report: ErrorReport,
    pub seconds: f64,
}

impl TicketRecord {
    /// Matching when the subnetwork's total error does not exceed the full model's.
    pub fn matching(&self, full: &ErrorReport) -> bool {
        self.report.total <= full.total
    }
}

/// Removal count taking `mask` to the round-`round` grid point.
fn grid_removal(cfg: &ImpConfig, mask: &PruningMask, round: u32) -> Result<usize> {
    let target = cfg.schedule.survivors(mask.total(), round);
    let have = mask.survivors();
    if target > have {
        return Err(Error::InvalidArgument(format!("round {round} wants {target} survivors but only {have} remain")));
    }
    Ok(have - target)
}

fn round_seed(base: u64, round: u32) -> u64 {
    splitmix(base ^ splitmix(0x5EED_0000 + u64::from(round)))
}

#[derive(Debug, Clone)]
pub struct ImpOutcome {
    pub dense: DenseRun,
    pub tickets: Vec<TicketRecord>,
}

/// Algorithm loop: prune the last trained weights by magnitude, rewind the
/// survivors to `θ^(r)`, retrain and score, until the target sparsity.
pub fn imp_from_dense(cfg: &ImpConfig, exp: &Experiment, dense: &DenseRun) -> Result<Vec<TicketRecord>> {
    cfg.validate()?;
    let ck = dense.checkpoint(cfg.rewind_iteration)?;
    let mut mask = PruningMask::ones(&dense.trained);
    let mut weights = dense.trained.clone();
    let mut records = Vec::new();
    for round in 1..=cfg.rounds() {
        let clock = Instant::now();
        let count = grid_removal(cfg, &mask, round)?;
        mask = magnitude_prune_count(&weights, &mask, count, cfg.scope)?.with_meta(round, "IMP", cfg.seeds.prune);
        let rewound = rewind(&dense.trained, ck, &mask)?;
        let (report, trained) = evaluate_subnetwork(&mask, rewound.clone(), ck.seeds.data_cursor, cfg, exp)?;
        log::info!("IMP round {round}: {mask}, total error {:.4}", report.total);
        weights = trained.clone();
        records.push(TicketRecord {
            strategy: Strategy::Imp,
            round,
            sparsity: mask.sparsity(),
            mask: mask.clone(),
            rewound,
            trained,
            report,
            seconds: clock.elapsed().as_secs_f64(),
        });
    }
    Ok(records)
}

/// Dense training followed by [`imp_from_dense`].
pub fn imp_run(cfg: &ImpConfig, exp: &Experiment) -> Result<ImpOutcome> {
    let dense = train_dense(cfg, exp, &[0])?;
    let tickets = imp_from_dense(cfg, exp, &dense)?;
    Ok(ImpOutcome { dense, tickets })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub dense: DenseRun,
    /// Ordered by strategy, then round.
    pub rows: Vec<TicketRecord>,
}

/// Runs each requested strategy to the grid rounds in `rounds` (every round
/// up to the target when `None`) from one shared dense run.
pub fn compare_strategies(
    cfg: &ImpConfig,
    exp: &Experiment,
    strategies: &[Strategy],
    rounds: Option<&[u32]>,
) -> Result<Comparison> {
    let dense = train_dense(cfg, exp, &[0])?;
    let rows = compare_from_dense(cfg, exp, &dense, strategies, rounds)?;
    Ok(Comparison { dense, rows })
}

pub fn compare_from_dense(
    cfg: &ImpConfig,
    exp: &Experiment,
    dense: &DenseRun,
    strategies: &[Strategy],
    rounds: Option<&[u32]>,
) -> Result<Vec<TicketRecord>> {
    cfg.validate()?;
    let all: Vec<u32> = (1..=cfg.rounds()).collect();
    let grid: Vec<u32> = rounds.map_or(all.clone(), <[u32]>::to_vec);
    if let Some(&bad) = grid.iter().find(|&&r| r == 0) {
        return Err(Error::InvalidArgument(format!("grid round {bad} is not a pruning round")));
    }
    let mut wanted: Vec<Strategy> = strategies.to_vec();
    wanted.sort();
    wanted.dedup();
    let ck = dense.checkpoint(cfg.rewind_iteration)?;
    let last = grid.iter().copied().max().unwrap_or(0);

    let mut rows = Vec::new();
    let mut imp: Vec<TicketRecord> = Vec::new();
    if wanted.contains(&Strategy::Imp) || wanted.contains(&Strategy::Rt) {
        let capped = ImpConfig { target_sparsity: cfg.schedule.sparsity(last).min(0.999_999), ..cfg.clone() };
        imp = if last == 0 { Vec::new() } else { imp_from_dense(&capped, exp, dense)? };
    }
    for &strategy in &wanted {
        match strategy {
            Strategy::Imp => rows.extend(imp.iter().filter(|r| grid.contains(&r.round)).cloned()),
            Strategy::Rt => {
                for r in imp.iter().filter(|r| grid.contains(&r.round)) {
                    let clock = Instant::now();
                    let mut fresh = random_reinit(&dense.init, cfg.seeds.reinit)?;
                    apply_mask(&mut fresh, &r.mask)?;
                    let mask = r.mask.clone().with_meta(r.round, "RT", cfg.seeds.reinit);
                    let (report, trained) = evaluate_subnetwork(&mask, fresh.clone(), ck.seeds.data_cursor, cfg, exp)?;
                    rows.push(ticket(Strategy::Rt, mask, fresh, trained, report, clock));
                }
            }
            Strategy::Omp => {
                for &round in &grid {
                    let clock = Instant::now();
                    let dense_mask = PruningMask::ones(&dense.trained);
                    let count = grid_removal(cfg, &dense_mask, round)?;
                    let mask = magnitude_prune_count(&dense.trained, &dense_mask, count, cfg.scope)?
                        .with_meta(round, "OMP", 0);
                    let rewound = rewind(&dense.trained, ck, &mask)?;
                    let (report, trained) =
                        evaluate_subnetwork(&mask, rewound.clone(), ck.seeds.data_cursor, cfg, exp)?;
                    rows.push(ticket(Strategy::Omp, mask, rewound, trained, report, clock));
                }
            }
            Strategy::Rp => {
                let mut mask = PruningMask::ones(&dense.trained);
                for round in 1..=last {
                    let count = grid_removal(cfg, &mask, round)?;
                    let seed = round_seed(cfg.seeds.prune, round);
                    mask = random_prune_count(&mask, count, cfg.scope, seed)?.with_meta(round, "RP", seed);
                    if grid.contains(&round) {
                        let clock = Instant::now();
                        let rewound = rewind(&dense.trained, ck, &mask)?;
                        let (report, trained) =
                            evaluate_subnetwork(&mask, rewound.clone(), ck.seeds.data_cursor, cfg, exp)?;
                        rows.push(ticket(Strategy::Rp, mask.clone(), rewound, trained, report, clock));
                    }
                }
            }
            Strategy::Fp => {
                let mut mask = PruningMask::ones(&dense.trained);
                let mut weights = dense.trained.clone();
                // continues the stream where dense training stopped
                let mut cursor = cfg.iterations as u64;
                for round in 1..=last {
                    let clock = Instant::now();
                    let count = grid_removal(cfg, &mask, round)?;
                    mask = magnitude_prune_count(&weights, &mask, count, cfg.scope)?.with_meta(round, "FP", 0);
                    let mut start = weights.clone();
                    apply_mask(&mut start, &mask)?;
                    let (report, trained) = evaluate_subnetwork(&mask, start.clone(), cursor, cfg, exp)?;
                    cursor += cfg.iterations as u64;
                    weights = trained.clone();
                    if grid.contains(&round) {
                        rows.push(ticket(Strategy::Fp, mask.clone(), start, trained, report, clock));
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn ticket(
    strategy: Strategy,
    mask: PruningMask,
    rewound: ParameterRegistry,
    trained: ParameterRegistry,
    report: ErrorReport,
    clock: Instant,
) -> TicketRecord {
    TicketRecord {
        strategy,
        round: mask.round,
        sparsity: mask.sparsity(),
        mask,
        rewound,
        trained,
        report,
        seconds: clock.elapsed().as_secs_f64(),
    }
}
