//! Binary masks, the geometric sparsity schedule and mask construction.
//!
//! Magnitude ties are broken by (|value|, tensor name, flat index), so the
//! pruned set is a pure function of the weights.

mod format;
mod mask;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use format::{MASK_MAGIC, MASK_VERSION};
pub use mask::{MaskEntry, PruningMask, Scope};

use crate::error::{Error, Result};
use crate::models::{init_parameters_for, ParameterRegistry};

/// Cumulative sparsity after `round` rounds each removing `fraction` of
/// the survivors: `1 − (1 − fraction)^round`.
pub fn schedule_sparsity(round: u32, fraction: f64) -> f64 {
    1.0 - (1.0 - fraction).powi(round as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsitySchedule {
    pub fraction: f64,
}

impl Default for SparsitySchedule {
    fn default() -> Self {
        SparsitySchedule { fraction: 0.2 }
    }
}

impl SparsitySchedule {
    pub fn new(fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("prune fraction must lie in (0,1), got {fraction}")));
        }
        Ok(SparsitySchedule { fraction })
    }

    pub fn sparsity(&self, round: u32) -> f64 {
        schedule_sparsity(round, self.fraction)
    }

    /// Smallest round whose sparsity reaches `target`.
    pub fn rounds_to_reach(&self, target: f64) -> u32 {
        (0..).find(|&i| self.sparsity(i) >= target - 1e-12).expect("sparsity tends to 1")
    }

    /// Survivor count after `round` rounds over `total` weights. The grid
    /// value is rounded up unless it is already an integer, so round 1
    /// removes exactly `⌊fraction · total⌋`.
    pub fn survivors(&self, total: usize, round: u32) -> usize {
        let x = total as f64 * (1.0 - self.fraction).powi(round as i32);
        let r = x.round();
        if (x - r).abs() < 1e-6 {
            r as usize
        } else {
            x.ceil() as usize
        }
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("prune fraction must lie in (0,1), got {fraction}")));
    }
    Ok(())
}

/// Flat position of one surviving in-scope weight.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    entry: usize,
    offset: usize,
}

fn candidates(current: &PruningMask, scope: Scope) -> Vec<Candidate> {
    current
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| scope.contains(e.submodule))
        .flat_map(|(entry, e)| {
            e.keep.iter().enumerate().filter(|(_, &k)| k).map(move |(offset, _)| Candidate { entry, offset })
        })
        .collect()
}

fn remove(current: &PruningMask, chosen: impl IntoIterator<Item = Candidate>) -> PruningMask {
    let mut next = current.clone();
    for c in chosen {
        next.entries_mut()[c.entry].keep[c.offset] = false;
    }
    next
}

/// Removes the `count` smallest-magnitude surviving weights inside `scope`.
pub fn magnitude_prune_count(
    params: &ParameterRegistry,
    current: &PruningMask,
    count: usize,
    scope: Scope,
) -> Result<PruningMask> {
    current.check_compatible(params)?;
    let mut cands = candidates(current, scope);
    if cands.is_empty() {
        return Err(Error::EmptySurvivors);
    }
    if count > cands.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot remove {count} weights, only {} survive in scope",
            cands.len()
        )));
    }
    if count == 0 {
        return Ok(current.clone());
    }
    let entries = current.entries();
    // name rank replaces string comparison inside the sort
    let mut by_name: Vec<usize> = (0..entries.len()).collect();
    by_name.sort_by(|&a, &b| entries[a].name.cmp(&entries[b].name));
    let mut name_rank = vec![0usize; entries.len()];
    for (rank, &i) in by_name.iter().enumerate() {
        name_rank[i] = rank;
    }
    let values: Vec<&[f32]> =
        entries.iter().map(|e| params.tensor(&e.name).map(|t| t.data())).collect::<Result<_>>()?;
    let key = |c: &Candidate| (values[c.entry][c.offset].abs(), name_rank[c.entry], c.offset);
    let cmp = |a: &Candidate, b: &Candidate| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(ka.2.cmp(&kb.2))
    };
    if count < cands.len() {
        cands.select_nth_unstable_by(count - 1, cmp);
    }
    cands.truncate(count);
    Ok(remove(current, cands))
}

/// Removes `⌊fraction · survivors⌋` of the smallest surviving in-scope
/// weights; the result is nested in `current`.
pub fn global_magnitude_prune(
    params: &ParameterRegistry,
    current: &PruningMask,
    fraction: f64,
    scope: Scope,
) -> Result<PruningMask> {
    check_fraction(fraction)?;
    let survivors = current.scope_survivors(scope);
    if survivors == 0 {
        return Err(Error::EmptySurvivors);
    }
    let count = (fraction * survivors as f64).floor() as usize;
    magnitude_prune_count(params, current, count, scope)
}

/// Single magnitude step from a dense mask removing `⌊fraction · n⌋` of
/// the `n` in-scope weights.
pub fn one_shot_prune(params: &ParameterRegistry, fraction_total: f64, scope: Scope) -> Result<PruningMask> {
    check_fraction(fraction_total)?;
    let dense = PruningMask::ones(params);
    let count = (fraction_total * dense.scope_total(scope) as f64).floor() as usize;
    Ok(magnitude_prune_count(params, &dense, count, scope)?.with_meta(1, "omp", 0))
}

/// Removes `count` uniformly chosen surviving in-scope weights.
pub fn random_prune_count(current: &PruningMask, count: usize, scope: Scope, seed: u64) -> Result<PruningMask> {
    let cands = candidates(current, scope);
    if cands.is_empty() {
        return Err(Error::EmptySurvivors);
    }
    if count > cands.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot remove {count} weights, only {} survive in scope",
            cands.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, cands.len(), count);
    Ok(remove(current, picked.into_iter().map(|i| cands[i])))
}

/// Random counterpart of [`global_magnitude_prune`], removing the same count.
pub fn random_prune(current: &PruningMask, fraction: f64, scope: Scope, seed: u64) -> Result<PruningMask> {
    check_fraction(fraction)?;
    let survivors = current.scope_survivors(scope);
    if survivors == 0 {
        return Err(Error::EmptySurvivors);
    }
    let count = (fraction * survivors as f64).floor() as usize;
    random_prune_count(current, count, scope, seed)
}

/// Sets every pruned weight to exactly `0.0`.
pub fn apply_mask(params: &mut ParameterRegistry, mask: &PruningMask) -> Result<()> {
    mask.check_compatible(params)?;
    for e in mask.entries() {
        let t = params.tensor_mut(&e.name).expect("checked compatible");
        for (w, &k) in t.data_mut().iter_mut().zip(&e.keep) {
            if !k {
                *w = 0.0;
            }
        }
    }
    Ok(())
}

/// Fresh initialization of the same architecture under `seed`.
pub fn random_reinit(params: &ParameterRegistry, seed: u64) -> Result<ParameterRegistry> {
    let fresh = init_parameters_for(params.arch(), seed);
    fresh.check_same_layout(params)?;
    Ok(fresh)
}
