use super::{encode_on_tape, init_layout, layout, Architecture, Binding, ParameterRegistry, Submodule};
use crate::data::DatasetStream;
use crate::error::{Error, Result};
use crate::models::decode_on_tape;
use crate::numerics::Tape;
use crate::optim::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Encoder-only registry.
    pub encoder: ParameterRegistry,
    /// Mean per-image reconstruction distance at every iteration.
    pub losses: Vec<f32>,
}

/// Trains the encoder with a throwaway decoder (mirroring every encoder
/// level) to reconstruct content images, then keeps only the encoder.
pub fn pretrain_encoder_reconstruction(
    stream: &mut DatasetStream,
    arch: &Architecture,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    let top = arch.levels();
    let mut params: ParameterRegistry = init_layout(arch, layout(arch, top, false), cfg.seed);
    let mut adam = AdamState::new(&params);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (contents, _) = stream.next_batch(cfg.batch_size)?;
        let mut tape = Tape::new();
        let b = Binding::bind(&mut tape, &params, None, |_| true)?;
        let x = tape.constant(contents);
        let feats = encode_on_tape(&mut tape, arch, &b, x, top)?;
        let logits = decode_on_tape(&mut tape, arch, &b, feats[top - 1], top)?;
        let y = tape.sigmoid(logits);
        let diff = tape.sub(y, x)?;
        let norms = tape.sample_l2(diff)?;
        let loss = tape.mean(norms);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("reconstruction loss at pretraining iteration {it}")));
        }
        losses.push(value);
        tape.backward(loss)?;
        let grads: Vec<_> = b.leaves().iter().map(|&v| tape.grad(v).map(<[f32]>::to_vec)).collect();
        adam.update(&cfg.adam, &mut params, &grads)?;
    }
    Ok(PretrainOutcome { encoder: params.subset(Submodule::Encoder), losses })
}
