//! Application of a separated kernel to a function in non-standard form.
//!
//! For each Gaussian term and each interior node of the source tree, the
//! `dim`-fold tensor product of 1D blocks is applied one axis at a time.
//! Level 0 uses the full product of `R` blocks; finer levels use
//! `R x R x R - T x T x T`, the scaling-scaling part being represented on
//! the coarser levels.
//!
//! A source leaf contributes nothing below its own level. Those finer
//! contributions cancel between neighbouring leaves of equal level, so only
//! leaves next to finer boxes are subdivided before the sum, within a budget.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use rayon::prelude::*;

use super::block::{Conv1DBlockCache, OperatorBlock};
use super::fit::{KernelKind, SeparatedKernel};
use crate::error::{MraError, Result};
use crate::tensor;
use crate::tree::{Domain, Form, MraFunction, NodeKey};

/// Sources per parallel work item.
const CHUNK: usize = 8;

/// Default cap on the leaves added at level changes of a source tree,
/// relative to its leaf count.
pub const DEFAULT_REFINE_BUDGET: f64 = 4.0;

/// Distance beyond which a bound-state Helmholtz kernel is treated as
/// negligible at relative precision `eps`.
pub fn bsh_cutoff(mu: f64, eps: f64) -> f64 {
    ((1.0 / eps).ln() + 3.0) / mu
}

/// Precomputed 1D blocks of one term at one level, `ell` in `-window..=window`.
struct TermPlan {
    alpha: f64,
    window: i64,
    blocks: Vec<Arc<OperatorBlock>>,
    max_r: f64,
    max_t: f64,
    max_d: f64,
}

impl TermPlan {
    fn block(&self, ell: i64) -> &OperatorBlock {
        &self.blocks[(ell + self.window) as usize]
    }
}

/// Running bound on `||prod R - prod T||` over a prefix of axes.
#[derive(Clone, Copy)]
struct Bound {
    prod_t: f64,
    prod_r: f64,
    diff: f64,
}

impl Bound {
    const ONE: Bound = Bound {
        prod_t: 1.0,
        prod_r: 1.0,
        diff: 0.0,
    };

    fn extend(self, r: f64, t: f64, d: f64) -> Bound {
        Bound {
            prod_t: self.prod_t * t,
            prod_r: self.prod_r * r,
            diff: self.diff * r + self.prod_t * d,
        }
    }

    fn value(self, level: u8) -> f64 {
        if level == 0 {
            self.prod_r
        } else {
            self.diff
        }
    }
}

/// Heap key; scores are finite and nonnegative.
#[derive(Clone, Copy, PartialEq)]
struct OrderedScore(f64);

impl Eq for OrderedScore {}

impl PartialOrd for OrderedScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedScore {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Kernel prepared for a particular basis order, dimension and domain, with
/// its block cache. Reusable across applications.
pub struct SeparatedOperator {
    kernel: SeparatedKernel,
    dim: usize,
    k: usize,
    domain: Domain,
    cache: Conv1DBlockCache,
    /// `(c L^dim, t L^2)` per term.
    unit_terms: Vec<(f64, f64)>,
    screen_factor: f64,
    refine_budget: f64,
}

/// Counters from one application.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ApplyStats {
    pub sources: usize,
    pub contributions: usize,
    pub blocks: usize,
}

impl SeparatedOperator {
    pub fn new(kernel: SeparatedKernel, dim: usize, k: usize, domain: Domain) -> Result<Self> {
        crate::tree::check_dim(dim)?;
        let width = domain.width();
        let diameter = width * (dim as f64).sqrt();
        let needed = match kernel.kind {
            KernelKind::Coulomb => diameter,
            KernelKind::Bsh { mu } if mu > 0.0 => diameter.min(bsh_cutoff(mu, kernel.eps)),
            KernelKind::Bsh { .. } => diameter,
        };
        if kernel.r_hi < needed * (1.0 - 1e-12) {
            return Err(MraError::RangeMismatch(format!(
                "kernel valid up to r = {} but the domain needs {needed}",
                kernel.r_hi
            )));
        }
        let vol = width.powi(dim as i32);
        let unit_terms = kernel
            .terms
            .iter()
            .map(|t| (t.coeff * vol, t.expnt * width * width))
            .collect();
        Ok(Self {
            kernel,
            dim,
            k,
            domain,
            cache: Conv1DBlockCache::new(k),
            unit_terms,
            screen_factor: 1.0,
            refine_budget: DEFAULT_REFINE_BUDGET,
        })
    }

    /// Scales the screening threshold; smaller is more accurate.
    pub fn with_screen_factor(mut self, factor: f64) -> Self {
        self.screen_factor = factor;
        self
    }

    /// Caps the leaves added at level changes of the source tree, as a
    /// multiple of its leaf count; 0 applies the operator on the tree as
    /// given.
    pub fn with_refine_budget(mut self, budget: f64) -> Self {
        self.refine_budget = budget.max(0.0);
        self
    }

    pub fn kernel(&self) -> &SeparatedKernel {
        &self.kernel
    }

    pub fn screen_factor(&self) -> f64 {
        self.screen_factor
    }

    fn check_function(&self, f: &MraFunction) -> Result<()> {
        if f.dim != self.dim || f.k != self.k || f.domain != self.domain {
            return Err(MraError::Incompatible(format!(
                "operator built for (dim={}, k={}, domain={:?}), function has (dim={}, k={}, domain={:?})",
                self.dim, self.k, self.domain, f.dim, f.k, f.domain
            )));
        }
        let finest = self.domain.width() * 0.5f64.powi(f.max_level() as i32);
        if self.kernel.r_lo > finest * (1.0 + 1e-12) {
            return Err(MraError::RangeMismatch(format!(
                "kernel valid from r = {} but the function resolves boxes of size {finest}",
                self.kernel.r_lo
            )));
        }
        Ok(())
    }

    /// Window and blocks for one term at one level, or `None` when even the
    /// nearest-neighbour contribution is below threshold.
    fn plan_term(&self, term: usize, level: u8, max_src: f64, tau: f64) -> Option<TermPlan> {
        let (c, t) = self.unit_terms[term];
        let alpha = c;
        let scale = alpha.abs() * max_src;
        let limit = (1i64 << level) - 1;
        let dim = self.dim;
        let b0 = self.cache.get(t, level, 0);
        // best case for one axis at ell with the others at the origin
        let bound_at = |b: &OperatorBlock| {
            let mut bd = Bound::ONE.extend(b.norm_r, b.norm_t, b.norm_rt);
            for _ in 1..dim {
                bd = bd.extend(b0.norm_r, b0.norm_t, b0.norm_rt);
            }
            scale * bd.value(level)
        };
        if bound_at(&b0) < tau {
            return None;
        }
        let mut window = 0;
        let mut misses = 0;
        let mut ell = 1;
        while ell <= limit && misses < 2 {
            let b = self.cache.get(t, level, ell);
            if bound_at(&b) >= tau {
                window = ell;
                misses = 0;
            } else {
                misses += 1;
            }
            ell += 1;
        }
        let window = window.max(2.min(limit));
        let blocks: Vec<Arc<OperatorBlock>> = (-window..=window)
            .map(|l| self.cache.get(t, level, l))
            .collect();
        let max_r = blocks.iter().map(|b| b.norm_r).fold(0.0, f64::max);
        let max_t = blocks.iter().map(|b| b.norm_t).fold(0.0, f64::max);
        let max_d = blocks.iter().map(|b| b.norm_rt).fold(0.0, f64::max);
        Some(TermPlan {
            alpha,
            window,
            blocks,
            max_r,
            max_t,
            max_d,
        })
    }

    /// Applies the operator; the result is reconstructed and truncated at
    /// `f.eps`.
    pub fn apply(&self, f: &MraFunction) -> Result<MraFunction> {
        Ok(self.apply_with_stats(f)?.0)
    }

    pub fn apply_with_stats(&self, f: &MraFunction) -> Result<(MraFunction, ApplyStats)> {
        self.check_function(f)?;
        let (dim, k) = (self.dim, self.k);
        let leaves = f.to_reconstructed()?;
        let initial = leaves
            .nodes()
            .values()
            .filter(|s| tensor::norm(s) > 0.0)
            .count();
        if initial == 0 {
            let zero = crate::funcops::zero(dim, k, f.eps, f.domain)?;
            return Ok((zero, ApplyStats::default()));
        }
        let tau = self.screen_factor * f.eps / (f.norm_scale() * initial as f64);
        let src = self.refine_interfaces(&leaves, tau);
        let ns = src.nonstandard_nodes()?;
        let sources: Vec<(NodeKey, &Vec<f64>, f64)> = ns
            .iter()
            .map(|(key, b)| (*key, b, tensor::norm(b)))
            .filter(|(_, _, n)| *n > 0.0)
            .collect();
        let mut stats = ApplyStats {
            sources: sources.len(),
            ..Default::default()
        };

        // serial warm-up of every block the parallel phase will read
        let mut max_src: BTreeMap<u8, f64> = BTreeMap::new();
        for (key, _, n) in &sources {
            let e = max_src.entry(key.level).or_insert(0.0);
            *e = e.max(*n);
        }
        let mut plans: BTreeMap<u8, Vec<TermPlan>> = BTreeMap::new();
        for (&level, &m) in &max_src {
            let p: Vec<TermPlan> = (0..self.unit_terms.len())
                .filter_map(|term| self.plan_term(term, level, m, tau))
                .collect();
            plans.insert(level, p);
        }
        stats.blocks = self.cache.len();

        let chunks: Vec<&[(NodeKey, &Vec<f64>, f64)]> = sources.chunks(CHUNK).collect();
        let partials: Vec<(BTreeMap<NodeKey, Vec<f64>>, usize)> = chunks
            .par_iter()
            .map(|chunk| {
                let mut out: BTreeMap<NodeKey, Vec<f64>> = BTreeMap::new();
                let mut count = 0;
                let mut scratch = Scratch::new(dim, k);
                for (key, block, norm) in chunk.iter() {
                    for plan in &plans[&key.level] {
                        count +=
                            self.apply_term(plan, *key, block, *norm, tau, &mut scratch, &mut out);
                    }
                }
                (out, count)
            })
            .collect();

        let mut acc: BTreeMap<NodeKey, Vec<f64>> = BTreeMap::new();
        for (part, count) in partials {
            stats.contributions += count;
            for (key, block) in part {
                match acc.get_mut(&key) {
                    Some(a) => a.iter_mut().zip(&block).for_each(|(x, y)| *x += y),
                    None => {
                        acc.insert(key, block);
                    }
                }
            }
        }
        let out = from_nonstandard(&src, acc)?;
        Ok((out.truncate(f.eps)?, stats))
    }

    /// Bound, per unit source norm, on the contributions at `level` of a
    /// source block with no wavelet part, summed over terms and the nearest
    /// displacements. Finer levels add about a third more.
    fn leaf_gain(&self, level: u8) -> f64 {
        let k = self.k;
        let mut total = 0.0;
        for &(c, t) in &self.unit_terms {
            let (mut r, mut tt, mut d) = (0.0, 0.0, 0.0);
            for ell in -2..=2 {
                let b = self.cache.get(t, level, ell);
                r += super::block::spectral_norm(&b.sector_columns(), 2 * k, k);
                tt += b.norm_t;
                d += b.sector_norm(super::block::Sector::WaveletScaling);
            }
            let mut bd = Bound::ONE;
            for _ in 0..self.dim {
                bd = bd.extend(r, tt, d);
            }
            total += c.abs() * bd.diff;
        }
        total * 4.0 / 3.0
    }

    /// Subdivides leaves that border finer boxes, largest omitted
    /// contribution first, while that contribution would pass `tau` and at
    /// most `refine_budget` times the leaf count is added. The finer-level
    /// contributions of a leaf cancel between neighbours of equal level but
    /// not across a change of level. Subdivision is exact, so the function
    /// is unchanged.
    fn refine_interfaces(&self, f: &MraFunction, tau: f64) -> MraFunction {
        let dim = self.dim;
        let mut leaves = f.nodes().clone();
        let mut interior = f.interior_keys();
        let mut budget = (self.refine_budget * leaves.len() as f64) as usize;
        let gains: Vec<f64> = (0..=f.max_level()).map(|l| self.leaf_gain(l)).collect();
        let disps: Vec<Vec<i64>> = (0..3usize.pow(dim as u32))
            .map(|i| {
                (0..dim)
                    .map(|a| (i / 3usize.pow(a as u32) % 3) as i64 - 1)
                    .collect()
            })
            .filter(|d: &Vec<i64>| d.iter().any(|&x| x != 0))
            .collect();
        let borders = |key: &NodeKey, interior: &BTreeSet<NodeKey>| {
            disps.iter().any(|d| {
                key.displaced(dim, d)
                    .is_some_and(|nb| interior.contains(&nb))
            })
        };
        let score = |key: &NodeKey, s: &[f64]| match gains.get(key.level as usize + 1) {
            Some(g) => g * tensor::norm(s),
            None => 0.0,
        };
        let mut heap: BinaryHeap<(OrderedScore, NodeKey)> = leaves
            .iter()
            .filter(|(key, _)| borders(key, &interior))
            .map(|(key, s)| (OrderedScore(score(key, s)), *key))
            .collect();
        while let Some((OrderedScore(value), key)) = heap.pop() {
            if value < tau || budget < (1 << dim) {
                break;
            }
            let Some(s) = leaves.remove(&key) else {
                continue;
            };
            interior.insert(key);
            budget -= (1 << dim) - 1;
            for (c, cs) in f.subdivide(&s).into_iter().enumerate() {
                let child = key.child(dim, c);
                if borders(&child, &interior) {
                    heap.push((OrderedScore(score(&child, &cs)), child));
                }
                leaves.insert(child, cs);
            }
            // coarser or equal leaves next to the new interior box
            for d in &disps {
                let mut nb = key.displaced(dim, d);
                while let Some(n) = nb {
                    if let Some(s) = leaves.get(&n) {
                        heap.push((OrderedScore(score(&n, s)), n));
                        break;
                    }
                    nb = n.parent();
                }
            }
        }
        f.with_nodes(Form::Reconstructed, leaves)
    }

    /// All displacements of one term applied to one source block.
    #[allow(clippy::too_many_arguments)]
    fn apply_term(
        &self,
        plan: &TermPlan,
        key: NodeKey,
        src: &[f64],
        norm: f64,
        tau: f64,
        scratch: &mut Scratch,
        out: &mut BTreeMap<NodeKey, Vec<f64>>,
    ) -> usize {
        let k = self.k;
        let corner = tensor::gather_child(src, 0, self.dim, k);
        let mut walker = Walker {
            op: self,
            plan,
            key,
            scale: plan.alpha.abs() * norm,
            tau,
            out,
            count: 0,
        };
        walker.descend(0, [0; 3], Bound::ONE, src, &corner, scratch);
        walker.count
    }
}

/// Per-axis intermediate buffers.
struct Scratch {
    r: Vec<Vec<f64>>,
    t: Vec<Vec<f64>>,
    t_final: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize, k: usize) -> Self {
        Self {
            r: (0..dim)
                .map(|_| vec![0.0; tensor::pow(2 * k, dim)])
                .collect(),
            t: (0..dim).map(|_| vec![0.0; tensor::pow(k, dim)]).collect(),
            t_final: vec![0.0; tensor::pow(k, dim)],
        }
    }
}

struct Walker<'a> {
    op: &'a SeparatedOperator,
    plan: &'a TermPlan,
    key: NodeKey,
    scale: f64,
    tau: f64,
    out: &'a mut BTreeMap<NodeKey, Vec<f64>>,
    count: usize,
}

impl Walker<'_> {
    fn descend(
        &mut self,
        axis: usize,
        disp: [i64; 3],
        bound: Bound,
        r_in: &[f64],
        t_in: &[f64],
        scratch: &mut Scratch,
    ) {
        let dim = self.op.dim;
        let k = self.op.k;
        let n = 2 * k;
        let level = self.key.level;
        let limit = 1i64 << level;
        let plan = self.plan;
        let subtract = level > 0;
        for ell in -plan.window..=plan.window {
            let target = self.key.l[axis] as i64 + ell;
            if target < 0 || target >= limit {
                continue;
            }
            let b = plan.block(ell);
            let next = bound.extend(b.norm_r, b.norm_t, b.norm_rt);
            let mut best = next;
            for _ in axis + 1..dim {
                best = best.extend(plan.max_r, plan.max_t, plan.max_d);
            }
            if self.scale * best.value(level) < self.tau {
                continue;
            }
            let mut d = disp;
            d[axis] = ell;
            if axis + 1 == dim {
                let mut tkey = self.key;
                for a in 0..dim {
                    tkey.l[a] = (self.key.l[a] as i64 + d[a]) as u32;
                }
                let dst = self
                    .out
                    .entry(tkey)
                    .or_insert_with(|| vec![0.0; tensor::pow(n, dim)]);
                tensor::cyclic_step(r_in, n, &b.r, n, plan.alpha, 1.0, dst);
                if subtract {
                    tensor::cyclic_step(t_in, k, &b.t, k, 1.0, 0.0, &mut scratch.t_final);
                    let corner = &scratch.t_final;
                    for (idx, v) in corner.iter().enumerate() {
                        dst[tensor::child_to_parent_index(idx, 0, dim, k)] -= plan.alpha * v;
                    }
                }
                self.count += 1;
            } else {
                let mut r_buf = std::mem::take(&mut scratch.r[axis]);
                let mut t_buf = std::mem::take(&mut scratch.t[axis]);
                tensor::cyclic_step(r_in, n, &b.r, n, 1.0, 0.0, &mut r_buf);
                if subtract {
                    tensor::cyclic_step(t_in, k, &b.t, k, 1.0, 0.0, &mut t_buf);
                }
                self.descend(axis + 1, d, next, &r_buf, &t_buf, scratch);
                scratch.r[axis] = r_buf;
                scratch.t[axis] = t_buf;
            }
        }
    }
}

/// Reconstructed function from non-standard blocks: every node's scaling
/// corner is added to what its parent passes down before unfiltering.
pub(crate) fn from_nonstandard(
    proto: &MraFunction,
    blocks: BTreeMap<NodeKey, Vec<f64>>,
) -> Result<MraFunction> {
    let (dim, k) = (proto.dim, proto.k);
    if blocks.is_empty() {
        return crate::funcops::zero(dim, k, proto.eps, proto.domain);
    }
    let mut interior: BTreeSet<NodeKey> = BTreeSet::new();
    for key in blocks.keys() {
        let mut p = Some(*key);
        while let Some(pk) = p {
            if !interior.insert(pk) {
                break;
            }
            p = pk.parent();
        }
    }
    let mut leaves = BTreeMap::new();
    let mut stack = vec![(NodeKey::ROOT, vec![0.0; tensor::pow(k, dim)])];
    while let Some((key, s)) = stack.pop() {
        let mut block = blocks
            .get(&key)
            .cloned()
            .unwrap_or_else(|| vec![0.0; tensor::pow(2 * k, dim)]);
        tensor::add_child(&mut block, &s, 0, dim, k);
        for (c, cs) in proto.unfilter(&block).into_iter().enumerate() {
            let child = key.child(dim, c);
            if interior.contains(&child) {
                stack.push((child, cs));
            } else {
                leaves.insert(child, cs);
            }
        }
    }
    Ok(proto.with_nodes(Form::Reconstructed, leaves))
}

/// Applies `kernel` to `f` with a freshly built operator.
pub fn apply(kernel: &SeparatedKernel, f: &MraFunction) -> Result<MraFunction> {
    SeparatedOperator::new(kernel.clone(), f.dim, f.k, f.domain)?.apply(f)
}
