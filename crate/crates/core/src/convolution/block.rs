//! One-dimensional non-standard-form blocks of a Gaussian kernel
//! `exp(-T (x - y)^2)` on the unit interval.
//!
//! At level `m` the scaling-scaling block between boxes `l` and `l'` depends
//! only on `ell = l - l'`:
//!
//! `S_ij(ell) = 2^-m sum_p [a_ijp G+_p(ell) + a_jip G-_p(ell)]`,
//!
//! where `a_ijp` are Legendre coefficients (order `2k`) of the correlation
//! `Q_ij(z) = integral phi_i(eta + z) phi_j(eta) d eta` on `[0, 1]` and
//! `G±_p(ell) = integral_0^1 phi_p(z) exp(-beta (ell ± z)^2) dz` with
//! `beta = T 4^-m`. The level-`n` block `R` acting on `[s | d]` is
//! `W [[S(2ell), S(2ell-1)], [S(2ell+1), S(2ell)]] W^T` built from level
//! `n+1`; its scaling corner is the level-`n` block `T`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use crate::basis::{gauss_legendre_generic, scaling_all, two_scale_matrix};
use crate::real::{Dd, Real};

/// Composite quadrature for the `G` integrals.
#[derive(Clone, Debug)]
struct PanelRule<R> {
    nodes: Vec<R>,
    weights: Vec<R>,
    /// Gaussian exponent beyond which the integrand is dropped.
    cutoff: f64,
}

/// Precision-generic block builder for order `k`.
#[derive(Clone, Debug)]
pub struct BlockBuilder<R> {
    k: usize,
    /// `a[(i * k + j) * 2k + p]`
    corr: Vec<R>,
    /// Stacked two-scale matrix, `2k x 2k`.
    w: Vec<R>,
    panel: PanelRule<R>,
}

impl<R: Real> BlockBuilder<R> {
    pub fn new(k: usize) -> Self {
        let n = 2 * k;
        let (zq, wz) = gauss_legendre_generic::<R>(n);
        let (eq, we) = gauss_legendre_generic::<R>(k);
        let mut corr = vec![R::zero(); k * k * n];
        let mut phi_a = vec![R::zero(); k];
        let mut phi_b = vec![R::zero(); k];
        let mut phi_z = vec![R::zero(); n];
        let mut q = vec![R::zero(); k * k];
        for (z, wzq) in zq.iter().zip(&wz) {
            // Q_ij(z) by k-point quadrature on [0, 1 - z] (exact: degree 2k - 2)
            let len = R::one() - *z;
            q.iter_mut().for_each(|v| *v = R::zero());
            for (e, we_) in eq.iter().zip(&we) {
                let eta = len * *e;
                scaling_all(eta + *z, &mut phi_a);
                scaling_all(eta, &mut phi_b);
                let wt = len * *we_;
                for i in 0..k {
                    for j in 0..k {
                        q[i * k + j] += wt * phi_a[i] * phi_b[j];
                    }
                }
            }
            scaling_all(*z, &mut phi_z);
            for ij in 0..k * k {
                for p in 0..n {
                    corr[ij * n + p] += *wzq * q[ij] * phi_z[p];
                }
            }
        }
        let npts = n + 12;
        let (nodes, weights) = gauss_legendre_generic::<R>(npts);
        let cutoff = if R::EPSILON < 1e-20 { 120.0 } else { 50.0 };
        Self {
            k,
            corr,
            w: two_scale_matrix::<R>(k),
            panel: PanelRule {
                nodes,
                weights,
                cutoff,
            },
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `G±_p` for all `p < 2k`: integrals of `phi_p(z) exp(-beta (delta + sign z)^2)`.
    fn g_integrals(&self, beta: R, delta: i64, sign: f64, out: &mut [R]) {
        let n = 2 * self.k;
        out.iter_mut().for_each(|v| *v = R::zero());
        let b = beta.to_f64();
        // the Gaussian peaks at z = -sign * delta
        let center = -sign * delta as f64;
        let half_width = (self.panel.cutoff / b).sqrt();
        let lo = (center - half_width).max(0.0);
        let hi = (center + half_width).min(1.0);
        if lo >= hi {
            return;
        }
        let panel_width = 0.25 / b.sqrt();
        let panels = ((hi - lo) / panel_width).ceil().max(1.0) as usize;
        let d = R::from_f64(delta as f64);
        let sgn = R::from_f64(sign);
        let mut phi = vec![R::zero(); n];
        for pnl in 0..panels {
            let a = lo + (hi - lo) * pnl as f64 / panels as f64;
            let bnd = lo + (hi - lo) * (pnl + 1) as f64 / panels as f64;
            let a_r = R::from_f64(a);
            let width = R::from_f64(bnd) - a_r;
            for (x, wq) in self.panel.nodes.iter().zip(&self.panel.weights) {
                let z = a_r + width * *x;
                let arg = d + sgn * z;
                let g = (-(beta * arg * arg)).exp() * width * *wq;
                scaling_all(z, &mut phi);
                for p in 0..n {
                    out[p] += g * phi[p];
                }
            }
        }
    }

    /// Scaling-scaling block at `level` for displacement `delta`, `k x k`,
    /// for unit-cube exponent `expnt`.
    pub fn scaling_block(&self, expnt: R, level: u8, delta: i64) -> Vec<R> {
        let (k, n) = (self.k, 2 * self.k);
        let scale = R::from_f64(0.5f64.powi(level as i32));
        let beta = expnt * scale * scale;
        let mut gp = vec![R::zero(); n];
        let mut gm = vec![R::zero(); n];
        self.g_integrals(beta, delta, 1.0, &mut gp);
        self.g_integrals(beta, delta, -1.0, &mut gm);
        let mut s = vec![R::zero(); k * k];
        for i in 0..k {
            for j in 0..k {
                let aij = &self.corr[(i * k + j) * n..(i * k + j + 1) * n];
                let aji = &self.corr[(j * k + i) * n..(j * k + i + 1) * n];
                let mut acc = R::zero();
                for p in 0..n {
                    acc += aij[p] * gp[p] + aji[p] * gm[p];
                }
                s[i * k + j] = acc * scale;
            }
        }
        s
    }

    /// Full `2k x 2k` block at `level` from three level-`level+1` blocks
    /// `S(2ell - 1), S(2ell), S(2ell + 1)`.
    pub fn assemble(&self, s_minus: &[R], s_zero: &[R], s_plus: &[R]) -> Vec<R> {
        let (k, n) = (self.k, 2 * self.k);
        let mut big = vec![R::zero(); n * n];
        for i in 0..k {
            for j in 0..k {
                big[i * n + j] = s_zero[i * k + j];
                big[i * n + k + j] = s_minus[i * k + j];
                big[(k + i) * n + j] = s_plus[i * k + j];
                big[(k + i) * n + k + j] = s_zero[i * k + j];
            }
        }
        // W big W^T
        let mut tmp = vec![R::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = R::zero();
                for p in 0..n {
                    acc += self.w[i * n + p] * big[p * n + j];
                }
                tmp[i * n + j] = acc;
            }
        }
        let mut out = vec![R::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = R::zero();
                for p in 0..n {
                    acc += tmp[i * n + p] * self.w[j * n + p];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    /// Non-standard block at `level` for displacement `ell`.
    pub fn block(&self, expnt: R, level: u8, ell: i64) -> Vec<R> {
        let sm = self.scaling_block(expnt, level + 1, 2 * ell - 1);
        let s0 = self.scaling_block(expnt, level + 1, 2 * ell);
        let sp = self.scaling_block(expnt, level + 1, 2 * ell + 1);
        self.assemble(&sm, &s0, &sp)
    }
}

/// Sub-blocks of a `2k x 2k` non-standard block, rows are targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sector {
    ScalingScaling,
    ScalingWavelet,
    WaveletScaling,
    WaveletWavelet,
}

/// A non-standard block with the norms used for screening.
#[derive(Clone, Debug)]
pub struct OperatorBlock {
    pub k: usize,
    /// `2k x 2k`, row-major, `[target][source]`.
    pub r: Vec<f64>,
    /// Scaling corner of `r`, `k x k`.
    pub t: Vec<f64>,
    pub norm_r: f64,
    pub norm_t: f64,
    /// Norm of `r` with the scaling corner removed.
    pub norm_rt: f64,
}

pub fn spectral_norm(m: &[f64], rows: usize, cols: usize) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let a = DMatrix::from_row_slice(rows, cols, m);
    a.singular_values().max()
}

impl OperatorBlock {
    pub fn from_full<R: Real>(k: usize, full: &[R]) -> Self {
        let r: Vec<f64> = full.iter().map(|v| v.to_f64()).collect();
        let n = 2 * k;
        let mut t = vec![0.0; k * k];
        for i in 0..k {
            t[i * k..(i + 1) * k].copy_from_slice(&r[i * n..i * n + k]);
        }
        let mut rt = r.clone();
        for i in 0..k {
            rt[i * n..i * n + k].iter_mut().for_each(|v| *v = 0.0);
        }
        Self {
            k,
            norm_r: spectral_norm(&r, n, n),
            norm_t: spectral_norm(&t, k, k),
            norm_rt: spectral_norm(&rt, n, n),
            r,
            t,
        }
    }

    pub fn transposed(&self) -> Self {
        let (k, n) = (self.k, 2 * self.k);
        let tr = |m: &[f64], d: usize| {
            let mut out = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    out[j * d + i] = m[i * d + j];
                }
            }
            out
        };
        let r = tr(&self.r, n);
        Self {
            k,
            t: tr(&self.t, k),
            norm_r: self.norm_r,
            norm_t: self.norm_t,
            norm_rt: self.norm_rt,
            r,
        }
    }

    pub fn sector(&self, which: Sector) -> Vec<f64> {
        let (k, n) = (self.k, 2 * self.k);
        let (r0, c0) = match which {
            Sector::ScalingScaling => (0, 0),
            Sector::ScalingWavelet => (0, k),
            Sector::WaveletScaling => (k, 0),
            Sector::WaveletWavelet => (k, k),
        };
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            out[i * k..(i + 1) * k]
                .copy_from_slice(&self.r[(r0 + i) * n + c0..(r0 + i) * n + c0 + k]);
        }
        out
    }

    /// Scaling-source columns of `r`, `2k x k`.
    pub(crate) fn sector_columns(&self) -> Vec<f64> {
        let n = 2 * self.k;
        (0..n)
            .flat_map(|i| self.r[i * n..i * n + self.k].iter().copied())
            .collect()
    }

    pub fn sector_norm(&self, which: Sector) -> f64 {
        spectral_norm(&self.sector(which), self.k, self.k)
    }
}

/// Block of `exp(-expnt (x - y)^2)` on the unit interval at `level`,
/// displacement `ell`, computed in double precision.
pub fn build_conv1d_block(k: usize, expnt: f64, level: u8, ell: i64) -> OperatorBlock {
    let b = BlockBuilder::<f64>::new(k);
    OperatorBlock::from_full(k, &b.block(expnt, level, ell))
}

/// Same block summed over several Gaussians `coeff * exp(-expnt (x-y)^2)`
/// in double-double arithmetic, for near-cancelling sectors.
pub fn build_summed_block_dd(k: usize, terms: &[(f64, f64)], level: u8, ell: i64) -> OperatorBlock {
    let b = BlockBuilder::<Dd>::new(k);
    let n = 2 * k;
    let mut acc = vec![Dd::zero(); n * n];
    for &(c, t) in terms {
        let blk = b.block(Dd::from_f64(t), level, ell);
        let c = Dd::from_f64(c);
        for (a, v) in acc.iter_mut().zip(blk) {
            *a += c * v;
        }
    }
    OperatorBlock::from_full(k, &acc)
}

type BlockKey = (u64, u8, i64);

/// Toeplitz block cache keyed by `(exponent, level, displacement)`.
#[derive(Debug)]
pub struct Conv1DBlockCache {
    builder: BlockBuilder<f64>,
    blocks: Mutex<HashMap<BlockKey, Arc<OperatorBlock>>>,
    scaling: Mutex<HashMap<BlockKey, Arc<Vec<f64>>>>,
}

impl Conv1DBlockCache {
    pub fn new(k: usize) -> Self {
        Self {
            builder: BlockBuilder::new(k),
            blocks: Mutex::new(HashMap::new()),
            scaling: Mutex::new(HashMap::new()),
        }
    }

    pub fn k(&self) -> usize {
        self.builder.k
    }

    fn scaling(&self, expnt: f64, level: u8, delta: i64) -> Arc<Vec<f64>> {
        let key = (expnt.to_bits(), level, delta);
        if let Some(s) = self.scaling.lock().expect("cache poisoned").get(&key) {
            return s.clone();
        }
        let s = Arc::new(self.builder.scaling_block(expnt, level, delta));
        self.scaling
            .lock()
            .expect("cache poisoned")
            .insert(key, s.clone());
        s
    }

    /// Block for unit-cube exponent `expnt` at `level` and displacement `ell`.
    pub fn get(&self, expnt: f64, level: u8, ell: i64) -> Arc<OperatorBlock> {
        let key = (expnt.to_bits(), level, ell);
        if let Some(b) = self.blocks.lock().expect("cache poisoned").get(&key) {
            return b.clone();
        }
        let block = if ell < 0 {
            // even kernel: R(-ell) = R(ell)^T
            Arc::new(self.get(expnt, level, -ell).transposed())
        } else {
            let sm = self.scaling(expnt, level + 1, 2 * ell - 1);
            let s0 = self.scaling(expnt, level + 1, 2 * ell);
            let sp = self.scaling(expnt, level + 1, 2 * ell + 1);
            let full = self.builder.assemble(&sm, &s0, &sp);
            Arc::new(OperatorBlock::from_full(self.k(), &full))
        };
        self.blocks
            .lock()
            .expect("cache poisoned")
            .insert(key, block.clone());
        block
    }

    pub fn len(&self) -> usize {
        self.blocks.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
