//! Toy AdaIN and SANet style-transfer networks over a shared
//! encoder/decoder skeleton.
//!
//! Encoder level `l` is `conv3x3 -> relu -> conv3x3 -> relu`, preceded by a
//! 2x2 average pool for every level after the first; its feature is taken
//! after the second relu. The decoder mirrors levels 4..1 with nearest
//! upsampling and ends in a sigmoid, so outputs lie in `(0, 1)`.

mod network;
mod pretrain;
mod registry;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use network::{
    adain_on_tape, decode_on_tape, encode_on_tape, sanet_level_on_tape, stylize_from_levels, stylize_on_tape,
    transform_on_tape, Binding, Stylized,
};
pub use pretrain::{pretrain_encoder_reconstruction, PretrainConfig, PretrainOutcome};
pub use registry::{ParamEntry, ParameterRegistry, Submodule};

use crate::error::{Error, Result};
use crate::numerics::{Float, Tape, Tensor, STD_EPS};
use crate::pruning::PruningMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    AdaInToy,
    SANetToy,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::AdaInToy => "adain",
            ModelKind::SANetToy => "sanet",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adain" => Ok(ModelKind::AdaInToy),
            "sanet" => Ok(ModelKind::SANetToy),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?} (adain|sanet)"))),
        }
    }
}

/// Decoder always starts from level 4, the deepest AdaIN level.
pub const DECODER_TOP: usize = 4;

/// Channel widths per encoder level.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub kind: ModelKind,
    pub widths: Vec<usize>,
}

impl Architecture {
    /// 16/32/64/128, plus a 128-wide fifth level for SANet.
    pub fn new(kind: ModelKind) -> Self {
        let widths = match kind {
            ModelKind::AdaInToy => vec![16, 32, 64, 128],
            ModelKind::SANetToy => vec![16, 32, 64, 128, 128],
        };
        Architecture { kind, widths }
    }

    pub fn with_widths(kind: ModelKind, widths: Vec<usize>) -> Result<Self> {
        let expected = match kind {
            ModelKind::AdaInToy => 4,
            ModelKind::SANetToy => 5,
        };
        if widths.len() != expected {
            return Err(Error::Architecture(format!("{kind} needs {expected} widths, got {}", widths.len())));
        }
        if widths.contains(&0) {
            return Err(Error::Architecture("widths must be positive".into()));
        }
        if kind == ModelKind::SANetToy && widths[3] != widths[4] {
            return Err(Error::Architecture(format!(
                "sanet levels 4 and 5 must share a width to merge, got {} and {}",
                widths[3], widths[4]
            )));
        }
        Ok(Architecture { kind, widths })
    }

    /// Default widths divided by `divisor` (at least 1 channel each).
    pub fn narrowed(kind: ModelKind, divisor: usize) -> Self {
        let mut a = Architecture::new(kind);
        for w in &mut a.widths {
            *w = (*w / divisor.max(1)).max(1);
        }
        a
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn width(&self, level: usize) -> usize {
        self.widths[level - 1]
    }

    /// Input channels of encoder level `level` (3 for the first).
    fn input_width(&self, level: usize) -> usize {
        if level == 1 {
            3
        } else {
            self.width(level - 1)
        }
    }

    /// Image sides must be a multiple of this.
    pub fn required_divisor(&self) -> usize {
        1 << (self.levels() - 1)
    }
}

/// Per-level encoder features `Φ_1..Φ_L`, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T: Float = f32> {
    pub levels: Vec<Tensor<T>>,
}

impl<T: Float> EncoderOutput<T> {
    /// Level-4 feature, the relu4_1 analogue fed to the decoder.
    pub fn deepest(&self) -> &Tensor<T> {
        &self.levels[DECODER_TOP - 1]
    }

    /// The (level-4, level-5) pair used by SANet, if present.
    pub fn sanet_pair(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        Some((self.levels.get(3)?, self.levels.get(4)?))
    }
}

pub(crate) struct LayoutEntry {
    pub name: String,
    pub submodule: Submodule,
    pub prunable: bool,
    pub shape: Vec<usize>,
}

fn conv_entries(out: &mut Vec<LayoutEntry>, prefix: &str, submodule: Submodule, cout: usize, cin: usize, k: usize) {
    out.push(LayoutEntry { name: format!("{prefix}.weight"), submodule, prunable: true, shape: vec![cout, cin, k, k] });
    out.push(LayoutEntry { name: format!("{prefix}.bias"), submodule, prunable: false, shape: vec![cout] });
}

/// Parameter names and shapes in registry order. `decoder_top` is the
/// deepest decoder level.
pub(crate) fn layout(arch: &Architecture, decoder_top: usize, with_transform: bool) -> Vec<LayoutEntry> {
    let mut out = Vec::new();
    for l in 1..=arch.levels() {
        let (cin, w) = (arch.input_width(l), arch.width(l));
        conv_entries(&mut out, &format!("encoder.l{l}.conv1"), Submodule::Encoder, w, cin, 3);
        conv_entries(&mut out, &format!("encoder.l{l}.conv2"), Submodule::Encoder, w, w, 3);
    }
    if with_transform && arch.kind == ModelKind::SANetToy {
        for l in [4, 5] {
            let c = arch.width(l);
            for p in ["f", "g", "h", "out"] {
                conv_entries(&mut out, &format!("transform.l{l}.{p}"), Submodule::Transform, c, c, 1);
            }
        }
        let c = arch.width(4);
        conv_entries(&mut out, "transform.merge", Submodule::Transform, c, c, 3);
    }
    for l in (1..=decoder_top).rev() {
        let (w, cout) = (arch.width(l), arch.input_width(l));
        conv_entries(&mut out, &format!("decoder.l{l}.conv1"), Submodule::Decoder, w, w, 3);
        conv_entries(&mut out, &format!("decoder.l{l}.conv2"), Submodule::Decoder, cout, w, 3);
    }
    out
}

/// Kaiming-normal weights (`std = sqrt(2 / fan_in)`) and zero biases,
/// drawn in registry order from one seeded stream.
pub(crate) fn init_layout<T: Float>(arch: &Architecture, entries: Vec<LayoutEntry>, seed: u64) -> ParameterRegistry<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = ParameterRegistry::new(arch.clone());
    for e in entries {
        let n: usize = e.shape.iter().product();
        let tensor = if e.prunable {
            let fan_in: usize = e.shape[1..].iter().product();
            let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let data = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
            Tensor::new(e.shape, data).expect("sized from shape")
        } else {
            Tensor::zeros(e.shape)
        };
        reg.push(e.name, e.submodule, e.prunable, tensor).expect("layout names are unique");
    }
    reg
}

pub fn init_parameters(kind: ModelKind, seed: u64) -> ParameterRegistry {
    init_parameters_for(&Architecture::new(kind), seed)
}

pub fn init_parameters_for<T: Float>(arch: &Architecture, seed: u64) -> ParameterRegistry<T> {
    init_layout(arch, layout(arch, DECODER_TOP, true), seed)
}

fn bind_all<T: Float>(
    tape: &mut Tape<T>,
    params: &ParameterRegistry<T>,
    mask: Option<&PruningMask>,
) -> Result<Binding> {
    Binding::bind(tape, params, mask, |_| false)
}

/// Masked encoder forward pass returning every level.
pub fn encode<T: Float>(
    image: &Tensor<T>,
    params: &ParameterRegistry<T>,
    mask: Option<&PruningMask>,
) -> Result<EncoderOutput<T>> {
    let mut tape = Tape::new();
    let b = bind_all(&mut tape, params, mask)?;
    let x = tape.constant(image.clone());
    let vars = encode_on_tape(&mut tape, params.arch(), &b, x, params.arch().levels())?;
    Ok(EncoderOutput { levels: vars.into_iter().map(|v| tape.value(v).clone()).collect() })
}

/// `σ(Fs) · (Fc − μ(Fc)) / σ(Fc) + μ(Fs)` per channel.
pub fn adain_transform<T: Float>(fc: &Tensor<T>, fs: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (c, s) = (tape.constant(fc.clone()), tape.constant(fs.clone()));
    let y = adain_on_tape(&mut tape, c, s, eps)?;
    Ok(tape.take_value(y))
}

/// Two-level attention transform merged at level-4 resolution.
pub fn sanet_transform<T: Float>(
    fc41: &Tensor<T>,
    fs41: &Tensor<T>,
    fc51: &Tensor<T>,
    fs51: &Tensor<T>,
    params: &ParameterRegistry<T>,
    mask: Option<&PruningMask>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let b = bind_all(&mut tape, params, mask)?;
    let vars = [fc41, fs41, fc51, fs51].map(|t| tape.constant(t.clone()));
    let out = transform_on_tape(&mut tape, params.arch(), &b, &[vars[0], vars[2]], &[vars[1], vars[3]])?;
    Ok(tape.take_value(out))
}

/// Decoder pre-activation output.
pub fn decode_logits<T: Float>(
    fcs: &Tensor<T>,
    params: &ParameterRegistry<T>,
    mask: Option<&PruningMask>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let b = bind_all(&mut tape, params, mask)?;
    let x = tape.constant(fcs.clone());
    let y = decode_on_tape(&mut tape, params.arch(), &b, x, DECODER_TOP)?;
    Ok(tape.take_value(y))
}

/// Decoded image in `(0, 1)`.
pub fn decode<T: Float>(
    fcs: &Tensor<T>,
    params: &ParameterRegistry<T>,
    mask: Option<&PruningMask>,
) -> Result<Tensor<T>> {
    Ok(decode_logits(fcs, params, mask)?.map(|v| T::one() / (T::one() + (-v).exp())))
}

/// Full encode -> transform -> decode pipeline for the registry's model kind.
pub fn stylize<T: Float>(
    content: &Tensor<T>,
    style: &Tensor<T>,
    params: &ParameterRegistry<T>,
    mask: Option<&PruningMask>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let b = bind_all(&mut tape, params, mask)?;
    let (c, s) = (tape.constant(content.clone()), tape.constant(style.clone()));
    let out = stylize_on_tape(&mut tape, params.arch(), &b, c, s)?;
    Ok(tape.take_value(out.image))
}

pub(crate) fn std_eps<T: Float>() -> T {
    T::from_f64(STD_EPS)
}
