use std::collections::HashMap;

use super::{std_eps, Architecture, ModelKind, ParameterRegistry, Submodule, DECODER_TOP};
use crate::error::{Error, Result};
use crate::numerics::{Float, Padding, Tape, Var};
use crate::pruning::PruningMask;

/// Registry tensors recorded on a tape. `var` yields the effective (masked)
/// weight; `leaf` the raw trainable leaf whose gradient the optimizer reads.
#[derive(Debug, Clone)]
pub struct Binding {
    effective: HashMap<String, Var>,
    leaves: Vec<Var>,
}

impl Binding {
    /// Records every registry tensor; `trainable(submodule)` decides which
    /// receive gradients. Masked weights enter as `leaf ⊙ mask`.
    pub fn bind<T: Float>(
        tape: &mut Tape<T>,
        params: &ParameterRegistry<T>,
        mask: Option<&PruningMask>,
        trainable: impl Fn(Submodule) -> bool,
    ) -> Result<Self> {
        let leaves: Vec<Var> = params.iter().map(|e| tape.leaf(e.tensor.clone(), trainable(e.submodule))).collect();
        Self::with_leaves(tape, params, &leaves, mask)
    }

    /// Uses caller-recorded leaves (one per registry entry, in order).
    pub fn with_leaves<T: Float>(
        tape: &mut Tape<T>,
        params: &ParameterRegistry<T>,
        leaves: &[Var],
        mask: Option<&PruningMask>,
    ) -> Result<Self> {
        if let Some(m) = mask {
            m.check_compatible(params)?;
        }
        if leaves.len() != params.len() {
            return Err(Error::Architecture(format!("{} leaves for {} parameters", leaves.len(), params.len())));
        }
        let mut effective = HashMap::with_capacity(params.len());
        for (e, &leaf) in params.iter().zip(leaves) {
            if tape.shape(leaf) != e.tensor.shape() {
                return Err(Error::shape(
                    "bind",
                    format!("{}: leaf {:?} vs {:?}", e.name, tape.shape(leaf), e.tensor.shape()),
                ));
            }
            let eff = match mask.and_then(|m| m.get(&e.name)) {
                Some(m) if m.keep.iter().any(|&k| !k) => {
                    let mt = tape.constant(mask.and_then(|m| m.tensor::<T>(&e.name)).expect("entry exists"));
                    tape.mul(leaf, mt)?
                }
                _ => leaf,
            };
            effective.insert(e.name.clone(), eff);
        }
        Ok(Binding { effective, leaves: leaves.to_vec() })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.effective.get(name).copied().ok_or_else(|| Error::Architecture(format!("missing parameter {name}")))
    }

    /// Leaf for registry entry `index`.
    pub fn leaf(&self, index: usize) -> Var {
        self.leaves[index]
    }

    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }
}

fn conv<T: Float>(tape: &mut Tape<T>, b: &Binding, x: Var, prefix: &str) -> Result<Var> {
    let w = b.var(&format!("{prefix}.weight"))?;
    let bias = b.var(&format!("{prefix}.bias"))?;
    tape.conv2d(x, w, Some(bias), 1, Padding::Reflect)
}

/// Encoder features for levels `1..=levels`.
pub fn encode_on_tape<T: Float>(
    tape: &mut Tape<T>,
    arch: &Architecture,
    b: &Binding,
    image: Var,
    levels: usize,
) -> Result<Vec<Var>> {
    let shape = tape.shape(image).to_vec();
    let div = 1usize << (levels.max(1) - 1);
    match shape[..] {
        [_, 3, h, w] if h % div == 0 && w % div == 0 && h > 0 && w > 0 => {}
        [_, 3, h, w] => {
            return Err(Error::shape(
                "encode",
                format!("spatial size {h}x{w} must be divisible by {div} for {levels} levels"),
            ))
        }
        _ => return Err(Error::shape("encode", format!("expected [B,3,H,W], got {shape:?}"))),
    }
    if levels > arch.levels() {
        return Err(Error::Architecture(format!("encoder has {} levels, asked for {levels}", arch.levels())));
    }
    let mut out = Vec::with_capacity(levels);
    let mut h = image;
    for l in 1..=levels {
        if l > 1 {
            h = tape.avg_pool2(h)?;
        }
        h = conv(tape, b, h, &format!("encoder.l{l}.conv1"))?;
        h = tape.relu(h);
        h = conv(tape, b, h, &format!("encoder.l{l}.conv2"))?;
        h = tape.relu(h);
        out.push(h);
    }
    Ok(out)
}

/// Decoder logits starting from level `top` features.
pub fn decode_on_tape<T: Float>(
    tape: &mut Tape<T>,
    arch: &Architecture,
    b: &Binding,
    x: Var,
    top: usize,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 || shape[1] != arch.width(top) {
        return Err(Error::shape(
            "decode",
            format!("expected [B,{},H,W] level-{top} features, got {shape:?}", arch.width(top)),
        ));
    }
    let mut h = x;
    for l in (1..=top).rev() {
        h = conv(tape, b, h, &format!("decoder.l{l}.conv1"))?;
        h = tape.relu(h);
        h = conv(tape, b, h, &format!("decoder.l{l}.conv2"))?;
        if l > 1 {
            h = tape.relu(h);
            h = tape.upsample_nearest(h, 2)?;
        }
    }
    Ok(h)
}

pub fn adain_on_tape<T: Float>(tape: &mut Tape<T>, fc: Var, fs: Var, eps: T) -> Result<Var> {
    let (sc, ss) = (tape.shape(fc).to_vec(), tape.shape(fs).to_vec());
    if sc.len() != 4 || ss.len() != 4 || sc[0] != ss[0] || sc[1] != ss[1] {
        return Err(Error::shape("adain", format!("content {sc:?} vs style {ss:?}: batch and channels must match")));
    }
    let (mc, dc) = tape.channel_stats(fc, eps)?;
    let (ms, ds) = tape.channel_stats(fs, eps)?;
    let n = tape.channel_normalize(fc, mc, dc)?;
    tape.channel_affine(n, ds, ms)
}

fn normalized<T: Float>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let (m, s) = tape.channel_stats(x, std_eps())?;
    tape.channel_normalize(x, m, s)
}

/// One attention level: `out(h(Fs) · softmax(f(n(Fc))ᵀ g(n(Fs)))ᵀ) + Fc`.
pub fn sanet_level_on_tape<T: Float>(tape: &mut Tape<T>, b: &Binding, prefix: &str, fc: Var, fs: Var) -> Result<Var> {
    let (sc, ss) = (tape.shape(fc).to_vec(), tape.shape(fs).to_vec());
    if sc.len() != 4 || ss.len() != 4 || sc[0] != ss[0] || sc[1] != ss[1] {
        return Err(Error::shape("sanet", format!("content {sc:?} vs style {ss:?}: batch and channels must match")));
    }
    let (bsz, c, nc, ns) = (sc[0], sc[1], sc[2] * sc[3], ss[2] * ss[3]);
    let (fcn, fsn) = (normalized(tape, fc)?, normalized(tape, fs)?);
    let q = conv(tape, b, fcn, &format!("{prefix}.f"))?;
    let k = conv(tape, b, fsn, &format!("{prefix}.g"))?;
    let v = conv(tape, b, fs, &format!("{prefix}.h"))?;
    let q = tape.reshape(q, [bsz, c, nc])?;
    let k = tape.reshape(k, [bsz, c, ns])?;
    let v = tape.reshape(v, [bsz, c, ns])?;
    let scores = tape.bmm(q, k, true, false)?;
    let attn = tape.softmax_last(scores)?;
    let o = tape.bmm(v, attn, false, true)?;
    let o = tape.reshape(o, sc.clone())?;
    let o = conv(tape, b, o, &format!("{prefix}.out"))?;
    tape.add(o, fc)
}

/// Applies the model's transform to content/style encoder levels, giving
/// the decoder input `Fcs`.
pub fn transform_on_tape<T: Float>(
    tape: &mut Tape<T>,
    arch: &Architecture,
    b: &Binding,
    content: &[Var],
    style: &[Var],
) -> Result<Var> {
    match arch.kind {
        ModelKind::AdaInToy => {
            let (fc, fs) = pick(content, style, DECODER_TOP)?;
            adain_on_tape(tape, fc, fs, std_eps())
        }
        ModelKind::SANetToy => {
            let (c4, s4) = pick(content, style, 4)?;
            let (c5, s5) = pick(content, style, 5)?;
            let o4 = sanet_level_on_tape(tape, b, "transform.l4", c4, s4)?;
            let o5 = sanet_level_on_tape(tape, b, "transform.l5", c5, s5)?;
            let up = tape.upsample_nearest(o5, 2)?;
            let sum = tape.add(o4, up)?;
            conv(tape, b, sum, "transform.merge")
        }
    }
}

/// Accepts either every level (finest first) or just the deepest ones.
fn pick(content: &[Var], style: &[Var], level: usize) -> Result<(Var, Var)> {
    match (content.get(level - 1), style.get(level - 1)) {
        (Some(&c), Some(&s)) => Ok((c, s)),
        _ if content.len() == 2 && style.len() == 2 && level >= 4 => Ok((content[level - 4], style[level - 4])),
        _ if content.len() == 1 && style.len() == 1 && level == DECODER_TOP => Ok((content[0], style[0])),
        _ => Err(Error::shape("transform", format!("no level-{level} features among {} levels", content.len()))),
    }
}

/// Everything a training or evaluation pass needs from one stylization.
#[derive(Debug, Clone)]
pub struct Stylized {
    pub content_levels: Vec<Var>,
    pub style_levels: Vec<Var>,
    pub transformed: Var,
    pub logits: Var,
    pub image: Var,
}

/// Decodes the transform of already-encoded content/style levels.
pub fn stylize_from_levels<T: Float>(
    tape: &mut Tape<T>,
    arch: &Architecture,
    b: &Binding,
    content_levels: &[Var],
    style_levels: &[Var],
) -> Result<Stylized> {
    let transformed = transform_on_tape(tape, arch, b, content_levels, style_levels)?;
    let logits = decode_on_tape(tape, arch, b, transformed, DECODER_TOP)?;
    let image = tape.sigmoid(logits);
    Ok(Stylized {
        content_levels: content_levels.to_vec(),
        style_levels: style_levels.to_vec(),
        transformed,
        logits,
        image,
    })
}

pub fn stylize_on_tape<T: Float>(
    tape: &mut Tape<T>,
    arch: &Architecture,
    b: &Binding,
    content: Var,
    style: Var,
) -> Result<Stylized> {
    let cl = encode_on_tape(tape, arch, b, content, arch.levels())?;
    let sl = encode_on_tape(tape, arch, b, style, arch.levels())?;
    stylize_from_levels(tape, arch, b, &cl, &sl)
}
