//! Shared experiment setup and trial fan-out.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use stlth_core::data::{Dataset, Split};
use stlth_core::lottery::Experiment;
use stlth_core::metrics::Yardstick;
use stlth_core::models::{pretrain_encoder_reconstruction, PretrainConfig};
use stlth_core::optim::AdamConfig;

use crate::config::{EncoderInit, ExperimentConfig, Mode};
use crate::error::CliResult;

/// Dataset, evaluation encoder and held-out pairs shared by every trial.
pub fn setup(cfg: &ExperimentConfig) -> CliResult<Experiment> {
    cfg.validate()?;
    let dataset = if cfg.data == "synthetic" {
        Dataset::synthetic(cfg.seed, cfg.image_size)?
    } else {
        Dataset::load_image_folder(&cfg.data, cfg.image_size)?
    };
    log::info!("data: {}", dataset.describe());
    let seeds = cfg.setup_seeds();
    let pc = PretrainConfig {
        iterations: cfg.pretrain_iters,
        batch_size: cfg.batch_size,
        adam: AdamConfig::with_lr(cfg.lr),
        seed: seeds.init,
    };
    let pre = pretrain_encoder_reconstruction(&mut dataset.stream(Split::Train, seeds.data), &cfg.arch(), &pc)?;
    if let (Some(first), Some(last)) = (pre.losses.first(), pre.losses.last()) {
        log::info!("evaluation encoder: reconstruction loss {first:.3} -> {last:.3} over {} steps", pre.losses.len());
    }
    let use_pretrained = cfg.mode == Mode::Frozen || cfg.encoder_init == EncoderInit::Pretrained;
    Ok(Experiment {
        test_pairs: dataset.test_pairs(cfg.test_pairs, seeds.prune)?,
        dataset,
        yard: Yardstick::new(&pre.encoder),
        encoder_init: use_pretrained.then_some(pre.encoder),
    })
}

/// Worker count: `STLTH_THREADS` if set, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("STLTH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` for every trial on up to `workers` threads; results come back
/// in trial order. The first error wins.
pub fn for_each_trial<T: Send>(
    trials: u32,
    workers: usize,
    f: impl Fn(u32) -> CliResult<T> + Sync,
) -> CliResult<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CliResult<T>>>> = Mutex::new((0..trials).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers.clamp(1, trials.max(1) as usize) {
            s.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= trials as usize {
                    break;
                }
                let r = f(t as u32);
                slots.lock().expect("worker panicked")[t] = Some(r);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every trial ran")).collect()
}
