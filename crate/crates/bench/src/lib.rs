//! Fixtures shared by the benchmarks.

use stlth_core::data::{Dataset, Split};
use stlth_core::lottery::{Experiment, ImpConfig, Seeds};
use stlth_core::metrics::Yardstick;
use stlth_core::models::{init_parameters_for, Architecture, ModelKind, ParameterRegistry, Submodule};
use stlth_core::numerics::Tensor;

/// Deterministic pseudo-random tensor in [-1, 1).
pub fn tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    Tensor::from_fn(shape.to_vec(), |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 40) as f32 / (1u64 << 23) as f32 - 1.0
    })
}

/// A one-batch experiment at the default narrowed scale.
pub fn experiment(kind: ModelKind, size: usize) -> (ImpConfig, Experiment) {
    let arch = Architecture::narrowed(kind, 4);
    let dataset = Dataset::synthetic(0, size).expect("synthetic data");
    let pre: ParameterRegistry = init_parameters_for(&arch, 1);
    let exp = Experiment {
        test_pairs: dataset.test_pairs(4, 0).expect("test pairs"),
        dataset,
        yard: Yardstick::new(&pre),
        encoder_init: Some(pre.subset(Submodule::Encoder)),
    };
    let mut cfg = ImpConfig::new(arch, 1, Seeds::for_trial(0, 0));
    cfg.train.batch_size = 4;
    (cfg, exp)
}

pub fn batch(exp: &Experiment, batch: usize) -> (Tensor, Tensor) {
    exp.dataset.stream(Split::Train, 0).batch_at(0, batch).expect("batch")
}
