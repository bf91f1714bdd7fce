//! Training losses and the average style-transfer test error.
//!
//! Every norm is the unnormalized Euclidean norm of one sample's flattened
//! tensor; batch and test-set averages are plain means over samples. All
//! features are measured by a fixed evaluation encoder (the yardstick) so
//! that differently pruned models are scored in the same feature space.

use crate::error::{Error, Result};
use crate::models::{
    adain_on_tape, encode_on_tape, sanet_level_on_tape, stylize_from_levels, Architecture, Binding, EncoderOutput,
    ModelKind, ParameterRegistry, Submodule,
};
use crate::numerics::{Float, Tape, Tensor, Var, STD_EPS};
use crate::pruning::PruningMask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub style: f64,
    /// SANet pixel identity weight.
    pub identity_pixel: f64,
    /// SANet feature identity weight.
    pub identity_feature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { style: 10.0, identity_pixel: 50.0, identity_feature: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("style", self.style),
            ("identity_pixel", self.identity_pixel),
            ("identity_feature", self.identity_feature),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub content_error: f64,
    pub style_error: f64,
    /// Always `content_error + style_error`.
    pub total: f64,
    pub n_pairs: usize,
}

impl ErrorReport {
    pub fn new(content_error: f64, style_error: f64, n_pairs: usize) -> Self {
        ErrorReport { content_error, style_error, total: content_error + style_error, n_pairs }
    }

    /// Pair-weighted mean of several reports.
    pub fn merge(reports: &[ErrorReport]) -> Result<Self> {
        let n: usize = reports.iter().map(|r| r.n_pairs).sum();
        if n == 0 {
            return Err(Error::EmptyTestSet);
        }
        let c = reports.iter().map(|r| r.content_error * r.n_pairs as f64).sum::<f64>() / n as f64;
        let s = reports.iter().map(|r| r.style_error * r.n_pairs as f64).sum::<f64>() / n as f64;
        Ok(ErrorReport::new(c, s, n))
    }
}

/// Frozen encoder used as the feature extractor `Φ` for every loss and error.
#[derive(Debug, Clone, PartialEq)]
pub struct Yardstick<T: Float = f32> {
    params: ParameterRegistry<T>,
}

impl<T: Float> Yardstick<T> {
    /// Keeps only the encoder entries of `params`.
    pub fn new(params: &ParameterRegistry<T>) -> Self {
        Yardstick { params: params.subset(Submodule::Encoder) }
    }

    pub fn arch(&self) -> &Architecture {
        self.params.arch()
    }

    pub fn levels(&self) -> usize {
        self.arch().levels()
    }

    pub fn params(&self) -> &ParameterRegistry<T> {
        &self.params
    }

    pub fn cast<U: Float>(&self) -> Yardstick<U> {
        Yardstick { params: self.params.cast() }
    }

    /// Binds the encoder as constants.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Binding> {
        Binding::bind(tape, &self.params, None, |_| false)
    }

    pub fn encode(&self, image: &Tensor<T>) -> Result<EncoderOutput<T>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape)?;
        let x = tape.constant(image.clone());
        let levels = encode_on_tape(&mut tape, self.arch(), &b, x, self.levels())?;
        Ok(EncoderOutput { levels: levels.into_iter().map(|v| tape.value(v).clone()).collect() })
    }

    /// The model's feature levels must line up with the yardstick's.
    pub fn check_compatible(&self, model: &Architecture) -> Result<()> {
        if self.arch().widths != model.widths {
            return Err(Error::Architecture(format!(
                "yardstick widths {:?} differ from model widths {:?}",
                self.arch().widths,
                model.widths
            )));
        }
        Ok(())
    }
}

fn eps<T: Float>() -> T {
    T::from_f64(STD_EPS)
}

fn l2_between<T: Float>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    tape.sample_l2(d)
}

fn sum_all<T: Float>(tape: &mut Tape<T>, terms: Vec<Var>) -> Result<Var> {
    let mut it = terms.into_iter();
    let first = it.next().ok_or_else(|| Error::InvalidArgument("no terms to sum".into()))?;
    it.try_fold(first, |acc, t| tape.add(acc, t))
}

/// Per-sample `Σ_i ||μ(Φ_i(a)) − μ(Φ_i(b))|| + ||σ(Φ_i(a)) − σ(Φ_i(b))||`, shape `[B]`.
pub fn style_terms_on_tape<T: Float>(tape: &mut Tape<T>, a_levels: &[Var], b_levels: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(2 * a_levels.len());
    for (&a, &b) in a_levels.iter().zip(b_levels) {
        let (ma, sa) = tape.channel_stats(a, eps())?;
        let (mb, sb) = tape.channel_stats(b, eps())?;
        terms.push(l2_between(tape, ma, mb)?);
        terms.push(l2_between(tape, sa, sb)?);
    }
    sum_all(tape, terms)
}

/// Per-sample `Σ_i ||Φ_i(a) − Φ_i(b)||`, shape `[B]`.
fn feature_terms_on_tape<T: Float>(tape: &mut Tape<T>, a_levels: &[Var], b_levels: &[Var]) -> Result<Var> {
    let terms = a_levels.iter().zip(b_levels).map(|(&a, &b)| l2_between(tape, a, b)).collect::<Result<Vec<_>>>()?;
    sum_all(tape, terms)
}

/// Per-sample loss/error components, each of shape `[B]`.
#[derive(Debug, Clone)]
pub struct LossTerms {
    /// Distance of the stylized image's features to the content targets.
    pub content: Var,
    pub style: Var,
    /// `||I_cc − I_c|| + ||I_ss − I_s||` (SANet only).
    pub identity_pixel: Option<Var>,
    /// `Σ_i ||Φ_i(I_cc) − Φ_i(I_c)|| + ||Φ_i(I_ss) − Φ_i(I_s)||` (SANet only).
    pub identity_feature: Option<Var>,
    pub stylized: Var,
}

/// Content targets in yardstick space: AdaIN of `Φ_4`, or the model's
/// attention levels applied to `Φ_4` and `Φ_5`.
pub fn content_targets_on_tape<T: Float>(
    tape: &mut Tape<T>,
    kind: ModelKind,
    model: &Binding,
    phi_c: &[Var],
    phi_s: &[Var],
) -> Result<Vec<(usize, Var)>> {
    match kind {
        ModelKind::AdaInToy => Ok(vec![(4, adain_on_tape(tape, phi_c[3], phi_s[3], eps())?)]),
        ModelKind::SANetToy => Ok(vec![
            (4, sanet_level_on_tape(tape, model, "transform.l4", phi_c[3], phi_s[3])?),
            (5, sanet_level_on_tape(tape, model, "transform.l5", phi_c[4], phi_s[4])?),
        ]),
    }
}

/// Runs the model on `(content, style)` and measures every loss component
/// with the yardstick. Targets are detached when `detach_targets` is set, as
/// in training; gradient checks may keep them attached.
#[allow(clippy::too_many_arguments)]
pub fn loss_terms_on_tape<T: Float>(
    tape: &mut Tape<T>,
    arch: &Architecture,
    model: &Binding,
    yard_arch: &Architecture,
    yard: &Binding,
    content: Var,
    style: Var,
    detach_targets: bool,
) -> Result<LossTerms> {
    let levels = arch.levels();
    let cl = encode_on_tape(tape, arch, model, content, levels)?;
    let sl = encode_on_tape(tape, arch, model, style, levels)?;
    let out = stylize_from_levels(tape, arch, model, &cl, &sl)?;
    let phi_t = encode_on_tape(tape, yard_arch, yard, out.image, levels)?;
    let phi_c = encode_on_tape(tape, yard_arch, yard, content, levels)?;
    let phi_s = encode_on_tape(tape, yard_arch, yard, style, levels)?;
    let style_term = style_terms_on_tape(tape, &phi_t, &phi_s)?;

    let mut content_terms = Vec::new();
    for (level, target) in content_targets_on_tape(tape, arch.kind, model, &phi_c, &phi_s)? {
        let target = if detach_targets { tape.detach(target) } else { target };
        content_terms.push(l2_between(tape, phi_t[level - 1], target)?);
    }
    let content_term = sum_all(tape, content_terms)?;

    let (identity_pixel, identity_feature) = match arch.kind {
        ModelKind::AdaInToy => (None, None),
        ModelKind::SANetToy => {
            let icc = stylize_from_levels(tape, arch, model, &cl, &cl)?.image;
            let iss = stylize_from_levels(tape, arch, model, &sl, &sl)?.image;
            let pc = l2_between(tape, icc, content)?;
            let ps = l2_between(tape, iss, style)?;
            let pixel = tape.add(pc, ps)?;
            let phi_cc = encode_on_tape(tape, yard_arch, yard, icc, levels)?;
            let phi_ss = encode_on_tape(tape, yard_arch, yard, iss, levels)?;
            let fc = feature_terms_on_tape(tape, &phi_cc, &phi_c)?;
            let fs = feature_terms_on_tape(tape, &phi_ss, &phi_s)?;
            (Some(pixel), Some(tape.add(fc, fs)?))
        }
    };
    Ok(LossTerms { content: content_term, style: style_term, identity_pixel, identity_feature, stylized: out.image })
}

/// Batch mean of `content + λs·style (+ λid1·pixel identity + λid2·feature identity)`.
pub fn training_loss<T: Float>(tape: &mut Tape<T>, terms: &LossTerms, weights: &LossWeights) -> Result<Var> {
    let style = tape.scale(terms.style, T::from_f64(weights.style));
    let mut total = tape.add(terms.content, style)?;
    if let Some(p) = terms.identity_pixel {
        let p = tape.scale(p, T::from_f64(weights.identity_pixel));
        total = tape.add(total, p)?;
    }
    if let Some(f) = terms.identity_feature {
        let f = tape.scale(f, T::from_f64(weights.identity_feature));
        total = tape.add(total, f)?;
    }
    Ok(tape.mean(total))
}

/// Unweighted per-sample content error: the target distance plus, for
/// SANet, both identity groups.
pub fn content_error_on_tape<T: Float>(tape: &mut Tape<T>, terms: &LossTerms) -> Result<Var> {
    let mut all = vec![terms.content];
    all.extend(terms.identity_pixel);
    all.extend(terms.identity_feature);
    sum_all(tape, all)
}

fn mean_of<T: Float>(t: &Tensor<T>) -> f64 {
    t.data().iter().map(|v| v.as_f64()).sum::<f64>() / t.len().max(1) as f64
}

fn encode_levels<T: Float>(
    tape: &mut Tape<T>,
    yard: &Yardstick<T>,
    b: &Binding,
    image: &Tensor<T>,
) -> Result<Vec<Var>> {
    let x = tape.constant(image.clone());
    encode_on_tape(tape, yard.arch(), b, x, yard.levels())
}

/// Batch mean of the per-level channel-statistics distance.
pub fn style_error<T: Float>(stylized: &Tensor<T>, style: &Tensor<T>, yard: &Yardstick<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let b = yard.bind(&mut tape)?;
    let a = encode_levels(&mut tape, yard, &b, stylized)?;
    let s = encode_levels(&mut tape, yard, &b, style)?;
    let v = style_terms_on_tape(&mut tape, &a, &s)?;
    Ok(mean_of(tape.value(v)))
}

/// Batch mean of `||Φ_4(I_t) − target||`.
pub fn content_error_adain<T: Float>(stylized: &Tensor<T>, target: &Tensor<T>, yard: &Yardstick<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let b = yard.bind(&mut tape)?;
    let f = encode_levels(&mut tape, yard, &b, stylized)?;
    let t = tape.constant(target.clone());
    let v = l2_between(&mut tape, f[3], t)?;
    Ok(mean_of(tape.value(v)))
}

/// Batch mean of the five SANet content term groups, with `targets` the
/// level-4 and level-5 transform outputs.
#[allow(clippy::too_many_arguments)]
pub fn content_error_sanet<T: Float>(
    stylized: &Tensor<T>,
    content: &Tensor<T>,
    style: &Tensor<T>,
    identity_content: &Tensor<T>,
    identity_style: &Tensor<T>,
    targets: [&Tensor<T>; 2],
    yard: &Yardstick<T>,
) -> Result<f64> {
    if yard.levels() < 5 {
        return Err(Error::Architecture("sanet content error needs a 5-level yardstick".into()));
    }
    let mut tape = Tape::new();
    let b = yard.bind(&mut tape)?;
    let phi_t = encode_levels(&mut tape, yard, &b, stylized)?;
    let mut terms = Vec::new();
    for (level, target) in [4, 5].into_iter().zip(targets) {
        let t = tape.constant(target.clone());
        terms.push(l2_between(&mut tape, phi_t[level - 1], t)?);
    }
    let [ic, is, icc, iss] = [content, style, identity_content, identity_style].map(|t| tape.constant(t.clone()));
    terms.push(l2_between(&mut tape, icc, ic)?);
    terms.push(l2_between(&mut tape, iss, is)?);
    let [phi_c, phi_s, phi_cc, phi_ss] =
        [ic, is, icc, iss].map(|v| encode_on_tape(&mut tape, yard.arch(), &b, v, yard.levels()));
    terms.push(feature_terms_on_tape(&mut tape, &phi_cc?, &phi_c?)?);
    terms.push(feature_terms_on_tape(&mut tape, &phi_ss?, &phi_s?)?);
    let v = sum_all(&mut tape, terms)?;
    Ok(mean_of(tape.value(v)))
}

/// Scores the masked model on held-out pairs, `batch` pairs at a time.
pub fn average_test_error(
    params: &ParameterRegistry,
    mask: Option<&PruningMask>,
    yard: &Yardstick,
    pairs: &[(Tensor, Tensor)],
    batch: usize,
) -> Result<ErrorReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    yard.check_compatible(params.arch())?;
    let (mut content, mut style) = (0.0f64, 0.0f64);
    for chunk in pairs.chunks(batch.max(1)) {
        let cs: Vec<Tensor> = chunk.iter().map(|(c, _)| c.clone()).collect();
        let ss: Vec<Tensor> = chunk.iter().map(|(_, s)| s.clone()).collect();
        let mut tape = Tape::new();
        let model = Binding::bind(&mut tape, params, mask, |_| false)?;
        let yb = yard.bind(&mut tape)?;
        let c = tape.constant(Tensor::stack(&cs)?);
        let s = tape.constant(Tensor::stack(&ss)?);
        let terms = loss_terms_on_tape(&mut tape, params.arch(), &model, yard.arch(), &yb, c, s, true)?;
        let ce = content_error_on_tape(&mut tape, &terms)?;
        content += tape.value(ce).data().iter().map(|&v| v as f64).sum::<f64>();
        style += tape.value(terms.style).data().iter().map(|&v| v as f64).sum::<f64>();
    }
    let n = pairs.len();
    let report = ErrorReport::new(content / n as f64, style / n as f64, n);
    if !report.total.is_finite() {
        return Err(Error::NonFinite("test error".into()));
    }
    Ok(report)
}
