//! Adaptive dyadic tree of coefficient blocks and the fast wavelet transform
//! between its reconstructed (leaf scaling) and compressed (wavelet) forms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::MultiwaveletBasis;
use crate::error::{MraError, Result};
use crate::tensor;

pub const MAX_LEVEL: u8 = 30;

/// Box address: refinement level and per-axis translation. Unused axes
/// (beyond the function dimension) stay zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeKey {
    pub level: u8,
    pub l: [u32; 3],
}

impl NodeKey {
    pub const ROOT: NodeKey = NodeKey {
        level: 0,
        l: [0; 3],
    };

    pub fn new(level: u8, l: &[u32]) -> Self {
        let mut t = [0; 3];
        t[..l.len()].copy_from_slice(l);
        Self { level, l: t }
    }

    pub fn is_root(&self) -> bool {
        self.level == 0
    }

    pub fn is_valid(&self, dim: usize) -> bool {
        let n = 1u64 << self.level;
        self.level <= MAX_LEVEL
            && (0..3).all(|a| {
                if a < dim {
                    (self.l[a] as u64) < n
                } else {
                    self.l[a] == 0
                }
            })
    }

    pub fn parent(&self) -> Option<NodeKey> {
        if self.level == 0 {
            return None;
        }
        Some(NodeKey {
            level: self.level - 1,
            l: [self.l[0] >> 1, self.l[1] >> 1, self.l[2] >> 1],
        })
    }

    /// Child `c` in `0..2^dim`; bit `dim-1-a` of `c` selects the upper half
    /// along axis `a`.
    pub fn child(&self, dim: usize, c: usize) -> NodeKey {
        let mut l = [0; 3];
        for a in 0..dim {
            l[a] = 2 * self.l[a] + ((c >> (dim - 1 - a)) & 1) as u32;
        }
        NodeKey {
            level: self.level + 1,
            l,
        }
    }

    pub fn children(&self, dim: usize) -> impl Iterator<Item = NodeKey> + '_ {
        (0..1usize << dim).map(move |c| self.child(dim, c))
    }

    /// Position of this key among its parent's children.
    pub fn child_index(&self, dim: usize) -> usize {
        (0..dim).fold(0, |acc, a| (acc << 1) | (self.l[a] & 1) as usize)
    }

    /// Key displaced by `disp` boxes at the same level, if inside the cell.
    pub fn displaced(&self, dim: usize, disp: &[i64]) -> Option<NodeKey> {
        let n = 1i64 << self.level;
        let mut l = [0; 3];
        for a in 0..dim {
            let t = self.l[a] as i64 + disp[a];
            if t < 0 || t >= n {
                return None;
            }
            l[a] = t as u32;
        }
        Some(NodeKey {
            level: self.level,
            l,
        })
    }

    pub fn is_ancestor_of(&self, other: &NodeKey) -> bool {
        if other.level <= self.level {
            return false;
        }
        let shift = other.level - self.level;
        (0..3).all(|a| other.l[a] >> shift == self.l[a])
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(n={}, l={:?})", self.level, self.l)
    }
}

/// Cubic cell `[lo, hi]^dim`, mapped affinely onto the unit cube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(MraError::InvalidParameter(format!(
                "domain [{lo}, {hi}] is empty or not finite"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(half_width: f64) -> Result<Self> {
        Self::new(-half_width, half_width)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn to_unit(&self, x: f64) -> f64 {
        (x - self.lo) / self.width()
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.lo + u * self.width()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|&v| v >= self.lo && v <= self.hi)
    }

    /// Volume of the cell in `dim` dimensions.
    pub fn volume(&self, dim: usize) -> f64 {
        self.width().powi(dim as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// Scaling coefficients (`k^dim`) at the leaves.
    Reconstructed,
    /// Wavelet blocks (`(2k)^dim`) at interior nodes; the root block also
    /// carries the level-0 scaling coefficients in its corner. A root that
    /// is itself a leaf stores a plain `k^dim` scaling block.
    Compressed,
}

impl Form {
    fn name(&self) -> &'static str {
        match self {
            Form::Reconstructed => "reconstructed",
            Form::Compressed => "compressed",
        }
    }
}

/// Function represented on an adaptive tree. Coefficients are stored for the
/// unit-cube image of the function; Jacobian factors of the cell map are
/// applied by the norm/inner/trace routines.
#[derive(Clone, Debug)]
pub struct MraFunction {
    pub(crate) dim: usize,
    pub(crate) k: usize,
    pub(crate) eps: f64,
    pub(crate) domain: Domain,
    pub(crate) form: Form,
    pub(crate) nodes: BTreeMap<NodeKey, Vec<f64>>,
    pub(crate) basis: Arc<MultiwaveletBasis>,
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(MraError::UnsupportedDimension(dim))
    }
}

impl MraFunction {
    /// Builds a function from raw parts, validating block shapes and tree
    /// connectivity.
    pub fn from_parts(
        dim: usize,
        k: usize,
        eps: f64,
        domain: Domain,
        form: Form,
        nodes: BTreeMap<NodeKey, Vec<f64>>,
    ) -> Result<Self> {
        check_dim(dim)?;
        let basis = MultiwaveletBasis::shared(k)?;
        let f = Self {
            dim,
            k,
            eps,
            domain,
            form,
            nodes,
            basis,
        };
        f.validate()?;
        Ok(f)
    }

    /// Constant function on a single root leaf.
    pub fn constant(dim: usize, k: usize, eps: f64, domain: Domain, value: f64) -> Result<Self> {
        let mut s = vec![0.0; tensor::pow(k, dim)];
        s[0] = value;
        Self::from_parts(
            dim,
            k,
            eps,
            domain,
            Form::Reconstructed,
            BTreeMap::from([(NodeKey::ROOT, s)]),
        )
    }

    pub(crate) fn with_nodes(&self, form: Form, nodes: BTreeMap<NodeKey, Vec<f64>>) -> Self {
        Self {
            dim: self.dim,
            k: self.k,
            eps: self.eps,
            domain: self.domain,
            form,
            nodes,
            basis: self.basis.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn set_eps(&mut self, eps: f64) {
        self.eps = eps;
    }
    pub fn domain(&self) -> Domain {
        self.domain
    }
    pub fn form(&self) -> Form {
        self.form
    }
    pub fn nodes(&self) -> &BTreeMap<NodeKey, Vec<f64>> {
        &self.nodes
    }
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
    pub fn basis(&self) -> &MultiwaveletBasis {
        &self.basis
    }

    pub fn max_level(&self) -> u8 {
        self.nodes.keys().map(|k| k.level).max().unwrap_or(0)
    }

    pub(crate) fn scaling_len(&self) -> usize {
        tensor::pow(self.k, self.dim)
    }

    pub(crate) fn block_len(&self) -> usize {
        tensor::pow(2 * self.k, self.dim)
    }

    /// `L^(dim/2)`: converts unit-cube coefficient norms to user-domain norms.
    pub(crate) fn norm_scale(&self) -> f64 {
        self.domain.width().powf(self.dim as f64 / 2.0)
    }

    pub fn is_compatible(&self, other: &MraFunction) -> Result<()> {
        if self.dim != other.dim || self.k != other.k || self.domain != other.domain {
            return Err(MraError::Incompatible(format!(
                "(dim={}, k={}, domain={:?}) vs (dim={}, k={}, domain={:?})",
                self.dim, self.k, self.domain, other.dim, other.k, other.domain
            )));
        }
        Ok(())
    }

    /// Checks block shapes, key validity and tree structure for the form.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(MraError::MalformedTree("no nodes".into()));
        }
        for (key, block) in &self.nodes {
            if !key.is_valid(self.dim) {
                return Err(MraError::MalformedTree(format!("invalid key {key}")));
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(MraError::MalformedTree(format!(
                    "non-finite coefficient at {key}"
                )));
            }
        }
        match self.form {
            Form::Reconstructed => {
                let slen = self.scaling_len();
                for (key, block) in &self.nodes {
                    if block.len() != slen {
                        return Err(MraError::MalformedTree(format!(
                            "leaf {key} has {} coefficients",
                            block.len()
                        )));
                    }
                    let mut p = key.parent();
                    while let Some(pk) = p {
                        if self.nodes.contains_key(&pk) {
                            return Err(MraError::MalformedTree(format!(
                                "leaf {pk} contains leaf {key}"
                            )));
                        }
                        p = pk.parent();
                    }
                }
                // disjoint dyadic boxes tile the cell iff their volumes sum to one
                let volume: f64 = self
                    .nodes
                    .keys()
                    .map(|k| 0.5f64.powi(k.level as i32 * self.dim as i32))
                    .sum();
                if volume != 1.0 {
                    return Err(MraError::MalformedTree(format!(
                        "leaves cover volume {volume}"
                    )));
                }
            }
            Form::Compressed => {
                let root = self.nodes.get(&NodeKey::ROOT).ok_or_else(|| {
                    MraError::MalformedTree("compressed tree without root".into())
                })?;
                if root.len() == self.scaling_len() {
                    if self.nodes.len() != 1 {
                        return Err(MraError::MalformedTree("leaf root with descendants".into()));
                    }
                    return Ok(());
                }
                let blen = self.block_len();
                for (key, block) in &self.nodes {
                    if block.len() != blen {
                        return Err(MraError::MalformedTree(format!(
                            "node {key} has {} coefficients",
                            block.len()
                        )));
                    }
                    if let Some(p) = key.parent() {
                        if !self.nodes.contains_key(&p) {
                            return Err(MraError::MalformedTree(format!("orphan node {key}")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Keys of the leaves (reconstructed form).
    pub fn leaf_keys(&self) -> Vec<NodeKey> {
        match self.form {
            Form::Reconstructed => self.nodes.keys().copied().collect(),
            Form::Compressed => {
                let mut out = Vec::new();
                for key in self.nodes.keys() {
                    if self.nodes[key].len() == self.scaling_len() {
                        out.push(*key);
                        continue;
                    }
                    for c in key.children(self.dim) {
                        if !self.nodes.contains_key(&c) {
                            out.push(c);
                        }
                    }
                }
                out.sort();
                out
            }
        }
    }

    /// Combines `2^dim` child scaling blocks into the parent's `(2k)^dim`
    /// block (scaling corner plus wavelets).
    pub(crate) fn filter(&self, children: &[&[f64]]) -> Vec<f64> {
        let (dim, k) = (self.dim, self.k);
        let mut big = vec![0.0; self.block_len()];
        for (c, s) in children.iter().enumerate() {
            tensor::scatter_child(&mut big, s, c, dim, k);
        }
        tensor::transform(&big, dim, 2 * k, &self.basis.w, 2 * k)
    }

    /// Inverse of [`filter`](Self::filter): child scaling blocks in child order.
    pub(crate) fn unfilter(&self, block: &[f64]) -> Vec<Vec<f64>> {
        let (dim, k) = (self.dim, self.k);
        let big = tensor::transform(block, dim, 2 * k, &self.basis.wt, 2 * k);
        (0..1 << dim)
            .map(|c| tensor::gather_child(&big, c, dim, k))
            .collect()
    }

    /// Children of a box whose function lies in the scaling space of the box.
    pub(crate) fn subdivide(&self, s: &[f64]) -> Vec<Vec<f64>> {
        let mut big = vec![0.0; self.block_len()];
        tensor::scatter_child(&mut big, s, 0, self.dim, self.k);
        self.unfilter(&big)
    }

    /// Fast wavelet transform to compressed form.
    pub fn compress(&self) -> Result<MraFunction> {
        if self.form == Form::Compressed {
            return Err(MraError::WrongForm("compressed"));
        }
        Ok(self.with_nodes(Form::Compressed, self.compress_nodes(false)?))
    }

    /// Non-standard form: every interior node holds a full `(2k)^dim` block
    /// including the scaling corner. Leaves carry nothing, except a leaf
    /// root, which holds its scaling block with zero wavelets.
    pub(crate) fn nonstandard_nodes(&self) -> Result<BTreeMap<NodeKey, Vec<f64>>> {
        let src = match self.form {
            Form::Reconstructed => self.clone(),
            Form::Compressed => self.reconstruct()?,
        };
        let mut nodes = src.compress_nodes(true)?;
        if let Some(s) = src.nodes.get(&NodeKey::ROOT) {
            let mut big = vec![0.0; self.block_len()];
            tensor::scatter_child(&mut big, s, 0, self.dim, self.k);
            nodes.insert(NodeKey::ROOT, big);
        }
        Ok(nodes)
    }

    fn compress_nodes(&self, keep_scaling: bool) -> Result<BTreeMap<NodeKey, Vec<f64>>> {
        let (dim, k) = (self.dim, self.k);
        let mut sums: BTreeMap<NodeKey, Vec<f64>> = self.nodes.clone();
        let mut out = BTreeMap::new();
        if sums.len() == 1 && sums.contains_key(&NodeKey::ROOT) {
            return Ok(sums);
        }
        while let Some((&deepest, _)) = sums.iter().next_back() {
            if deepest.level == 0 {
                break;
            }
            let level = deepest.level;
            let at_level: Vec<NodeKey> = sums
                .range(NodeKey { level, l: [0; 3] }..)
                .map(|(k, _)| *k)
                .collect();
            let mut parents: BTreeSet<NodeKey> = BTreeSet::new();
            for key in &at_level {
                parents.insert(key.parent().expect("non-root"));
            }
            for p in parents {
                let mut kids = Vec::with_capacity(1 << dim);
                for c in p.children(dim) {
                    let s = sums.remove(&c).ok_or_else(|| {
                        MraError::MalformedTree(format!("missing child {c} of {p}"))
                    })?;
                    kids.push(s);
                }
                let refs: Vec<&[f64]> = kids.iter().map(|v| v.as_slice()).collect();
                let mut block = self.filter(&refs);
                let s = tensor::gather_child(&block, 0, dim, k);
                if !keep_scaling && !p.is_root() {
                    tensor::scatter_child(&mut block, &vec![0.0; s.len()], 0, dim, k);
                }
                if sums.insert(p, s).is_some() {
                    return Err(MraError::MalformedTree(format!(
                        "{p} is both leaf and interior"
                    )));
                }
                out.insert(p, block);
            }
        }
        Ok(out)
    }

    /// Inverse fast wavelet transform to reconstructed form.
    pub fn reconstruct(&self) -> Result<MraFunction> {
        if self.form == Form::Reconstructed {
            return Err(MraError::WrongForm("reconstructed"));
        }
        let (dim, k) = (self.dim, self.k);
        let root = self
            .nodes
            .get(&NodeKey::ROOT)
            .ok_or_else(|| MraError::MalformedTree("compressed tree without root".into()))?;
        let mut leaves = BTreeMap::new();
        if root.len() == self.scaling_len() {
            leaves.insert(NodeKey::ROOT, root.clone());
            return Ok(self.with_nodes(Form::Reconstructed, leaves));
        }
        let mut stack = vec![(NodeKey::ROOT, tensor::gather_child(root, 0, dim, k))];
        let mut visited = 0;
        while let Some((key, s)) = stack.pop() {
            visited += 1;
            let mut block = self.nodes[&key].clone();
            tensor::scatter_child(&mut block, &s, 0, dim, k);
            for (c, cs) in self.unfilter(&block).into_iter().enumerate() {
                let child = key.child(dim, c);
                if self.nodes.contains_key(&child) {
                    stack.push((child, cs));
                } else {
                    leaves.insert(child, cs);
                }
            }
        }
        if visited != self.nodes.len() {
            return Err(MraError::MalformedTree(
                "compressed nodes unreachable from the root".into(),
            ));
        }
        Ok(self.with_nodes(Form::Reconstructed, leaves))
    }

    pub fn to_compressed(&self) -> Result<MraFunction> {
        match self.form {
            Form::Compressed => Ok(self.clone()),
            Form::Reconstructed => self.compress(),
        }
    }

    pub fn to_reconstructed(&self) -> Result<MraFunction> {
        match self.form {
            Form::Reconstructed => Ok(self.clone()),
            Form::Compressed => self.reconstruct(),
        }
    }

    /// Removes wavelet blocks whose user-domain 2-norm falls below `eps`,
    /// working up from the finest level so only blocks without refined
    /// children are removed. Within a level the smallest blocks go first and
    /// removal stops once the removed blocks add up to `eps` in 2-norm, so
    /// `||f - truncate(f, eps)|| <= eps`. The result keeps the input's form.
    pub fn truncate(&self, eps: f64) -> Result<MraFunction> {
        if !(eps >= 0.0) {
            return Err(MraError::InvalidParameter(format!(
                "truncation threshold {eps} must be nonnegative"
            )));
        }
        let c = self.to_compressed()?;
        let (dim, k) = (self.dim, self.k);
        let scale = self.norm_scale();
        let mut nodes = c.nodes;
        let mut budget = eps * eps;
        for level in (0..=self.max_level()).rev() {
            let mut candidates: Vec<(f64, NodeKey)> = nodes
                .iter()
                .filter(|(key, block)| key.level == level && block.len() == self.block_len())
                .filter(|(key, _)| !key.children(dim).any(|ch| nodes.contains_key(&ch)))
                .map(|(key, block)| (tensor::wavelet_norm(block, dim, k) * scale, *key))
                .filter(|(n, _)| *n < eps)
                .collect();
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (n, key) in candidates {
                if n * n > budget {
                    break;
                }
                budget -= n * n;
                if key.is_root() {
                    let s = tensor::gather_child(&nodes[&key], 0, dim, k);
                    nodes.insert(key, s);
                } else {
                    nodes.remove(&key);
                }
            }
        }
        let out = self.with_nodes(Form::Compressed, nodes);
        match self.form {
            Form::Compressed => Ok(out),
            Form::Reconstructed => out.reconstruct(),
        }
    }

    /// 2-norm over the user domain from the stored coefficients.
    pub fn norm_coeffs(&self) -> f64 {
        let sum: f64 = self
            .nodes
            .values()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum();
        sum.sqrt() * self.norm_scale()
    }

    /// Multiplies every coefficient by `alpha`.
    pub fn scale(&self, alpha: f64) -> MraFunction {
        let nodes = self
            .nodes
            .iter()
            .map(|(k, b)| (*k, b.iter().map(|v| v * alpha).collect()))
            .collect();
        self.with_nodes(self.form, nodes)
    }

    /// Leaf scaling blocks pushed down (by two-scale subdivision) so that
    /// every key in `interior` is refined. Reconstructed form only.
    pub(crate) fn refine_to(&self, interior: &BTreeSet<NodeKey>) -> BTreeMap<NodeKey, Vec<f64>> {
        debug_assert_eq!(self.form, Form::Reconstructed);
        let mut out = BTreeMap::new();
        let mut stack: Vec<(NodeKey, Vec<f64>)> =
            self.nodes.iter().map(|(k, v)| (*k, v.clone())).collect();
        while let Some((key, s)) = stack.pop() {
            if interior.contains(&key) {
                for (c, cs) in self.subdivide(&s).into_iter().enumerate() {
                    stack.push((key.child(self.dim, c), cs));
                }
            } else {
                out.insert(key, s);
            }
        }
        out
    }

    /// Interior keys (strict ancestors of leaves) of a reconstructed tree.
    pub(crate) fn interior_keys(&self) -> BTreeSet<NodeKey> {
        let mut set = BTreeSet::new();
        for key in self.nodes.keys() {
            let mut p = key.parent();
            while let Some(pk) = p {
                if !set.insert(pk) {
                    break;
                }
                p = pk.parent();
            }
        }
        set
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let file = FunctionFile {
            magic: FUNCTION_MAGIC.to_string(),
            version: FORMAT_VERSION,
            dim: self.dim,
            k: self.k,
            eps: self.eps,
            domain: self.domain,
            form: self.form,
            nodes: self
                .nodes
                .iter()
                .map(|(key, c)| NodeRecord {
                    level: key.level,
                    l: key.l[..self.dim].to_vec(),
                    coeffs: c.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let file: FunctionFile = serde_json::from_reader(r)?;
        if file.magic != FUNCTION_MAGIC {
            return Err(MraError::Format(format!("bad magic {:?}", file.magic)));
        }
        if file.version != FORMAT_VERSION {
            return Err(MraError::Format(format!(
                "unsupported version {}",
                file.version
            )));
        }
        check_dim(file.dim)?;
        let mut nodes = BTreeMap::new();
        for rec in file.nodes {
            if rec.l.len() != file.dim {
                return Err(MraError::Format(format!(
                    "node translation {:?} has wrong length",
                    rec.l
                )));
            }
            nodes.insert(NodeKey::new(rec.level, &rec.l), rec.coeffs);
        }
        Self::from_parts(file.dim, file.k, file.eps, file.domain, file.form, nodes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Per-level node counts, for reports.
    pub fn level_histogram(&self) -> Vec<usize> {
        let mut counts: HashMap<u8, usize> = HashMap::new();
        for key in self.nodes.keys() {
            *counts.entry(key.level).or_default() += 1;
        }
        (0..=self.max_level())
            .map(|l| counts.get(&l).copied().unwrap_or(0))
            .collect()
    }
}

pub const FUNCTION_MAGIC: &str = "MRA-FUNCTION";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FunctionFile {
    magic: String,
    version: u32,
    dim: usize,
    k: usize,
    eps: f64,
    domain: Domain,
    form: Form,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    level: u8,
    l: Vec<u32>,
    coeffs: Vec<f64>,
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
