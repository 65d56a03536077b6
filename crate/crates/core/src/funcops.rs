//! Function calculus on adaptive trees: projection, evaluation, linear
//! combination, pointwise products and integrals.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{MraError, Result};
use crate::tensor;
use crate::tree::{check_dim, Domain, Form, MraFunction, NodeKey, MAX_LEVEL};

/// Safety factor applied to `eps` in the refinement test.
pub const REFINE_FACTOR: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionParams {
    pub k: usize,
    pub eps: f64,
    pub initial_level: u8,
    pub max_depth: u8,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            k: 6,
            eps: 1e-4,
            initial_level: 2,
            max_depth: MAX_LEVEL,
        }
    }
}

impl ProjectionParams {
    pub fn new(k: usize, eps: f64) -> Self {
        Self {
            k,
            eps,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(MraError::InvalidParameter(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.max_depth > MAX_LEVEL || self.initial_level > self.max_depth {
            return Err(MraError::InvalidParameter(format!(
                "initial_level {} and max_depth {} must satisfy initial_level <= max_depth <= {MAX_LEVEL}",
                self.initial_level, self.max_depth
            )));
        }
        Ok(())
    }
}

/// Scaling coefficients of `f` on box `key` by `k`-point Gauss-Legendre
/// quadrature in each dimension.
fn project_box<F>(f: &F, fun: &MraFunction, key: NodeKey, buf: &mut Vec<f64>) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let (dim, k) = (fun.dim, fun.k);
    let b = &fun.basis;
    let h = 0.5f64.powi(key.level as i32);
    let npts = tensor::pow(k, dim);
    buf.clear();
    let mut x = [0.0; 3];
    for idx in 0..npts {
        let mut rem = idx;
        for a in (0..dim).rev() {
            let q = rem % k;
            rem /= k;
            x[a] = fun
                .domain
                .from_unit((key.l[a] as f64 + b.quad_nodes[q]) * h);
        }
        buf.push(f(&x[..dim]));
    }
    let mut s = tensor::transform(buf, dim, k, &b.to_coeffs, k);
    let scale = h.powf(dim as f64 / 2.0);
    s.iter_mut().for_each(|v| *v *= scale);
    s
}

/// Adaptive projection of `f` onto the multiwavelet basis on `domain^dim`.
///
/// Each candidate box is projected at the next finer level; when the
/// resulting wavelet block exceeds `0.3 * eps` in norm the box is split,
/// otherwise it becomes a leaf holding the filtered scaling block.
pub fn project<F>(
    f: &F,
    dim: usize,
    domain: Domain,
    params: ProjectionParams,
) -> Result<MraFunction>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    check_dim(dim)?;
    params.validate()?;
    let root = vec![0.0; tensor::pow(params.k, dim)];
    let proto = MraFunction::from_parts(
        dim,
        params.k,
        params.eps,
        domain,
        Form::Reconstructed,
        BTreeMap::from([(NodeKey::ROOT, root)]),
    )?;
    let threshold = REFINE_FACTOR * params.eps / proto.norm_scale();

    let n0 = params.initial_level;
    let per_axis = 1u32 << n0;
    let mut frontier: Vec<NodeKey> = (0..tensor::pow(per_axis as usize, dim))
        .map(|i| {
            let mut l = [0u32; 3];
            let mut rem = i as u32;
            for a in (0..dim).rev() {
                l[a] = rem % per_axis;
                rem /= per_axis;
            }
            NodeKey { level: n0, l }
        })
        .collect();

    let mut leaves = BTreeMap::new();
    while !frontier.is_empty() {
        let results: Vec<(NodeKey, Option<Vec<f64>>)> = frontier
            .par_iter()
            .map_init(Vec::new, |buf, &key| {
                let kids: Vec<Vec<f64>> = key
                    .children(dim)
                    .map(|c| project_box(f, &proto, c, buf))
                    .collect();
                let refs: Vec<&[f64]> = kids.iter().map(|v| v.as_slice()).collect();
                let block = proto.filter(&refs);
                if tensor::wavelet_norm(&block, dim, params.k) > threshold {
                    (key, None)
                } else {
                    (key, Some(tensor::gather_child(&block, 0, dim, params.k)))
                }
            })
            .collect();
        let mut next = Vec::new();
        for (key, leaf) in results {
            match leaf {
                Some(s) => {
                    leaves.insert(key, s);
                }
                None => {
                    if key.level + 1 >= params.max_depth {
                        return Err(MraError::RefinementFailure {
                            key,
                            max_depth: params.max_depth,
                        });
                    }
                    next.extend(key.children(dim));
                }
            }
        }
        frontier = next;
    }
    let out = proto.with_nodes(Form::Reconstructed, leaves);
    if out.nodes.values().flatten().any(|v| !v.is_finite()) {
        return Err(MraError::InvalidParameter(
            "function produced non-finite values".into(),
        ));
    }
    Ok(out)
}

impl MraFunction {
    /// Leaf containing the unit-cube point `u`, using half-open boxes with the
    /// upper domain face assigned to the last box.
    fn find_leaf(&self, u: &[f64]) -> Option<(NodeKey, [f64; 3])> {
        for level in 0..=self.max_level() {
            let n = 1u64 << level;
            let mut l = [0u32; 3];
            let mut local = [0.0; 3];
            for a in 0..self.dim {
                let t = u[a] * n as f64;
                let idx = (t.floor() as u64).min(n - 1);
                l[a] = idx as u32;
                local[a] = (t - idx as f64).clamp(0.0, 1.0);
            }
            let key = NodeKey { level, l };
            if self.nodes.contains_key(&key) {
                return Some((key, local));
            }
        }
        None
    }

    /// Value at a point of the user domain.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(MraError::InvalidParameter(format!(
                "point has {} coordinates, function has dimension {}",
                x.len(),
                self.dim
            )));
        }
        if !self.domain.contains(x) {
            return Err(MraError::OutsideDomain {
                point: x.to_vec(),
                lo: self.domain.lo,
                hi: self.domain.hi,
            });
        }
        let owned;
        let f = match self.form {
            Form::Reconstructed => self,
            Form::Compressed => {
                owned = self.reconstruct()?;
                &owned
            }
        };
        let u: Vec<f64> = x.iter().map(|&v| f.domain.to_unit(v)).collect();
        let (key, local) = f
            .find_leaf(&u)
            .ok_or_else(|| MraError::MalformedTree(format!("no leaf contains {x:?}")))?;
        let k = f.k;
        let mut phi = vec![0.0; 3 * k];
        for a in 0..f.dim {
            // the closed interval is fine here: the polynomial extends continuously
            crate::basis::scaling_all(local[a], &mut phi[a * k..(a + 1) * k]);
        }
        let s = &f.nodes[&key];
        let mut sum = 0.0;
        for (idx, c) in s.iter().enumerate() {
            let mut rem = idx;
            let mut p = *c;
            for a in (0..f.dim).rev() {
                p *= phi[a * k + rem % k];
                rem /= k;
            }
            sum += p;
        }
        Ok(sum * 2f64.powf(key.level as f64 * f.dim as f64 / 2.0))
    }

    /// Integral over the user domain.
    pub fn trace(&self) -> f64 {
        let unit: f64 = match self.form {
            Form::Compressed => self.nodes[&NodeKey::ROOT][0],
            Form::Reconstructed => self
                .nodes
                .iter()
                .map(|(key, s)| s[0] * 0.5f64.powf(key.level as f64 * self.dim as f64 / 2.0))
                .sum(),
        };
        unit * self.domain.volume(self.dim)
    }

    /// L2 norm over the user domain.
    pub fn norm2(&self) -> f64 {
        self.norm_coeffs()
    }

    pub fn inner(&self, other: &MraFunction) -> Result<f64> {
        inner(self, other)
    }
}

/// Value of `f` at `x`.
pub fn eval_point(f: &MraFunction, x: &[f64]) -> Result<f64> {
    f.eval(x)
}

pub fn trace(f: &MraFunction) -> f64 {
    f.trace()
}

pub fn norm2(f: &MraFunction) -> f64 {
    f.norm2()
}

/// Compressed blocks with a leaf root promoted to a full block.
fn compressed_blocks(f: &MraFunction) -> Result<BTreeMap<NodeKey, Vec<f64>>> {
    let c = f.to_compressed()?;
    let mut nodes = c.nodes;
    let root = nodes.get_mut(&NodeKey::ROOT).expect("root present");
    if root.len() == f.scaling_len() {
        let mut big = vec![0.0; f.block_len()];
        tensor::scatter_child(&mut big, root, 0, f.dim, f.k);
        *root = big;
    }
    Ok(nodes)
}

/// `alpha f + beta g` on the union of both trees. The result is compressed
/// when `f` is, reconstructed otherwise.
pub fn gaxpy(alpha: f64, f: &MraFunction, beta: f64, g: &MraFunction) -> Result<MraFunction> {
    f.is_compatible(g)?;
    let a = compressed_blocks(f)?;
    let b = compressed_blocks(g)?;
    let mut out = BTreeMap::new();
    for (key, x) in &a {
        let v = match b.get(key) {
            Some(y) => x.iter().zip(y).map(|(p, q)| alpha * p + beta * q).collect(),
            None => x.iter().map(|p| alpha * p).collect(),
        };
        out.insert(*key, v);
    }
    for (key, y) in &b {
        if !a.contains_key(key) {
            out.insert(*key, y.iter().map(|q| beta * q).collect());
        }
    }
    let mut res = f.with_nodes(Form::Compressed, out);
    res.eps = f.eps.min(g.eps);
    match f.form {
        Form::Compressed => Ok(res),
        Form::Reconstructed => res.reconstruct(),
    }
}

/// Exact L2 inner product of the two representations.
pub fn inner(f: &MraFunction, g: &MraFunction) -> Result<f64> {
    f.is_compatible(g)?;
    let a = compressed_blocks(f)?;
    let b = compressed_blocks(g)?;
    let (small, large) = if a.len() <= b.len() {
        (&a, &b)
    } else {
        (&b, &a)
    };
    let dot: f64 = small
        .iter()
        .filter_map(|(key, x)| {
            large
                .get(key)
                .map(|y| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        })
        .sum();
    Ok(dot * f.domain.volume(f.dim))
}

/// Pointwise product at the common refinement, one extra level checked per
/// leaf, then truncated at the smaller precision of the two inputs.
pub fn multiply(f: &MraFunction, g: &MraFunction) -> Result<MraFunction> {
    f.is_compatible(g)?;
    let fr = f.to_reconstructed()?;
    let gr = g.to_reconstructed()?;
    let mut interior = fr.interior_keys();
    interior.extend(gr.interior_keys());
    let fl = fr.refine_to(&interior);
    let gl = gr.refine_to(&interior);
    let eps = f.eps.min(g.eps);
    let (dim, k) = (f.dim, f.k);
    let threshold = REFINE_FACTOR * eps / f.norm_scale();

    let work: Vec<(NodeKey, &Vec<f64>, &Vec<f64>)> =
        fl.iter().map(|(key, a)| (*key, a, &gl[key])).collect();
    let pieces: Vec<Vec<(NodeKey, Vec<f64>)>> = work
        .par_iter()
        .map(|&(key, a, b)| {
            let ka = fr.subdivide(a);
            let kb = fr.subdivide(b);
            let kids: Vec<Vec<f64>> = (0..1 << dim)
                .map(|c| product_block(&fr, &ka[c], &kb[c], key.level + 1))
                .collect();
            let refs: Vec<&[f64]> = kids.iter().map(|v| v.as_slice()).collect();
            let block = fr.filter(&refs);
            if tensor::wavelet_norm(&block, dim, k) > threshold && key.level < MAX_LEVEL {
                kids.into_iter()
                    .enumerate()
                    .map(|(c, s)| (key.child(dim, c), s))
                    .collect()
            } else {
                vec![(key, tensor::gather_child(&block, 0, dim, k))]
            }
        })
        .collect();
    let nodes: BTreeMap<NodeKey, Vec<f64>> = pieces.into_iter().flatten().collect();
    let mut out = fr.with_nodes(Form::Reconstructed, nodes);
    out.eps = eps;
    out.truncate(eps)
}

/// Scaling block of the product of two blocks on the same box at `level`.
fn product_block(f: &MraFunction, a: &[f64], b: &[f64], level: u8) -> Vec<f64> {
    let (dim, k) = (f.dim, f.k);
    let basis = &f.basis;
    let va = tensor::transform(a, dim, k, &basis.to_values, k);
    let vb = tensor::transform(b, dim, k, &basis.to_values, k);
    // values carry 2^(nd/2) each; coefficients take 2^(-nd/2) back
    let scale = 2f64.powf(level as f64 * dim as f64 / 2.0);
    let prod: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| x * y * scale).collect();
    tensor::transform(&prod, dim, k, &basis.to_coeffs, k)
}

/// Zero function on a single root box.
pub fn zero(dim: usize, k: usize, eps: f64, domain: Domain) -> Result<MraFunction> {
    MraFunction::constant(dim, k, eps, domain, 0.0)
}

/// Maximum leaf level among leaves intersecting the user-domain ball
/// `|x - center| < radius` and outside it, as `(inside, outside)`.
pub fn max_level_near(f: &MraFunction, center: &[f64], radius: f64) -> Result<(u8, u8)> {
    let r = f.to_reconstructed()?;
    let (mut inside, mut outside) = (0, 0);
    let width = r.domain.width();
    for key in r.nodes.keys() {
        let h = 0.5f64.powi(key.level as i32) * width;
        let mut d2 = 0.0;
        for a in 0..r.dim {
            let lo = r.domain.lo + key.l[a] as f64 * h;
            let c = center[a].clamp(lo, lo + h);
            d2 += (c - center[a]).powi(2);
        }
        if d2.sqrt() < radius {
            inside = inside.max(key.level);
        } else {
            outside = outside.max(key.level);
        }
    }
    Ok((inside, outside))
}
