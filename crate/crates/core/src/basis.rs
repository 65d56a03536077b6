//! Legendre scaling functions on [0,1], Gauss-Legendre quadrature, and the
//! two-scale filters that relate a box to its two children.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{MraError, Result};
use crate::real::Real;

pub const MAX_QUADRATURE_ORDER: usize = 60;
pub const MAX_FILTER_ORDER: usize = 30;

/// Legendre polynomial `P_i(x)` by the three-term recurrence.
pub fn legendre_eval(i: usize, x: f64) -> f64 {
    let mut p0 = 1.0;
    if i == 0 {
        return p0;
    }
    let mut p1 = x;
    for n in 1..i {
        let nf = n as f64;
        let p2 = ((2.0 * nf + 1.0) * x * p1 - nf * p0) / (nf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Mother scaling function `sqrt(2i+1) P_i(2x-1)` supported on (0,1).
pub fn scaling_eval(i: usize, x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    ((2 * i + 1) as f64).sqrt() * legendre_eval(i, 2.0 * x - 1.0)
}

/// Fills `out[i] = P_i(x)` for `i < out.len()`.
pub(crate) fn legendre_all<R: Real>(x: R, out: &mut [R]) {
    if out.is_empty() {
        return;
    }
    out[0] = R::one();
    if out.len() == 1 {
        return;
    }
    out[1] = x;
    for n in 1..out.len() - 1 {
        let nf = R::from_usize(n);
        out[n + 1] = (R::from_usize(2 * n + 1) * x * out[n] - nf * out[n - 1]) / (nf + R::one());
    }
}

/// Fills `out[i] = phi_i(x)` ignoring the support test; callers only use
/// points inside the unit interval.
pub(crate) fn scaling_all<R: Real>(x: R, out: &mut [R]) {
    legendre_all(R::from_f64(2.0) * x - R::one(), out);
    for (i, v) in out.iter_mut().enumerate() {
        *v = *v * R::from_usize(2 * i + 1).sqrt();
    }
}

/// `k`-point Gauss-Legendre rule mapped to [0,1].
pub fn gauss_legendre_rule(k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k == 0 || k > MAX_QUADRATURE_ORDER {
        return Err(MraError::UnsupportedOrder {
            k,
            min: 1,
            max: MAX_QUADRATURE_ORDER,
        });
    }
    Ok(gauss_legendre_generic::<f64>(k))
}

pub(crate) fn gauss_legendre_generic<R: Real>(k: usize) -> (Vec<R>, Vec<R>) {
    let mut nodes = vec![R::zero(); k];
    let mut weights = vec![R::zero(); k];
    let mut p = vec![R::zero(); k + 1];
    let half = R::from_f64(0.5);
    for i in 0..k.div_ceil(2) {
        let mut x =
            R::from_f64((std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos());
        let mut settled = 0;
        for _ in 0..100 {
            legendre_all(x, &mut p);
            let pk = p[k];
            // P'_k(x) = k (x P_k - P_{k-1}) / (x^2 - 1)
            let deriv = R::from_usize(k) * (x * pk - p[k - 1]) / (x * x - R::one());
            let dx = pk / deriv;
            x = x - dx;
            if dx.abs().to_f64() < 1e-15 {
                settled += 1;
                // a couple of extra steps squeeze out extended precision
                if settled > 2 {
                    break;
                }
            }
        }
        legendre_all(x, &mut p);
        let deriv = R::from_usize(k) * (x * p[k] - p[k - 1]) / (x * x - R::one());
        let w = R::one() / ((R::one() - x * x) * deriv * deriv);
        // x is the i-th largest root on [-1,1]
        nodes[k - 1 - i] = half * (R::one() + x);
        nodes[i] = half * (R::one() - x);
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    if k % 2 == 1 {
        nodes[k / 2] = half;
    }
    (nodes, weights)
}

/// Matrices relating the scaling coefficients of the two children of a box
/// to the scaling (`h0`, `h1`) and wavelet (`g0`, `g1`) coefficients of the
/// box itself. All are `k x k`, row-major, indexed `[parent][child]`.
#[derive(Clone, Debug)]
pub struct TwoScaleFilters {
    pub k: usize,
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
}

impl TwoScaleFilters {
    /// The orthogonal `2k x 2k` matrix `[[h0, h1], [g0, g1]]`.
    pub fn stacked(&self) -> Vec<f64> {
        let k = self.k;
        let n = 2 * k;
        let mut w = vec![0.0; n * n];
        for i in 0..k {
            for j in 0..k {
                w[i * n + j] = self.h0[i * k + j];
                w[i * n + k + j] = self.h1[i * k + j];
                w[(k + i) * n + j] = self.g0[i * k + j];
                w[(k + i) * n + k + j] = self.g1[i * k + j];
            }
        }
        w
    }

    /// Largest entry of `W W^T - I`.
    pub fn orthogonality_residual(&self) -> f64 {
        orthogonality_residual(&self.stacked(), 2 * self.k)
    }
}

fn orthogonality_residual(w: &[f64], n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..n).map(|p| w[i * n + p] * w[j * n + p]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

pub fn build_two_scale_filters(k: usize) -> Result<TwoScaleFilters> {
    if k == 0 || k > MAX_FILTER_ORDER {
        return Err(MraError::UnsupportedOrder {
            k,
            min: 1,
            max: MAX_FILTER_ORDER,
        });
    }
    let w = two_scale_matrix::<f64>(k);
    let n = 2 * k;
    let residual = orthogonality_residual(&w, n);
    if residual > 1e-10 {
        return Err(MraError::FilterConstruction { residual });
    }
    let block = |r0: usize, c0: usize| -> Vec<f64> {
        let mut m = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                m[i * k + j] = w[(r0 + i) * n + c0 + j];
            }
        }
        m
    };
    Ok(TwoScaleFilters {
        k,
        h0: block(0, 0),
        h1: block(0, k),
        g0: block(k, 0),
        g1: block(k, k),
    })
}

/// Stacked `2k x 2k` two-scale matrix in arbitrary precision.
///
/// Scaling rows are inner products of the parent scaling functions with the
/// dilated child scaling functions, exact under k-point quadrature. Wavelet
/// rows come from Gram-Schmidt on `sign(x - 1/2) phi_j(x)`, which together
/// with the parent polynomials spans the child space.
pub(crate) fn two_scale_matrix<R: Real>(k: usize) -> Vec<R> {
    let n = 2 * k;
    let (x, wq) = gauss_legendre_generic::<R>(k);
    let half = R::from_f64(0.5);
    let inv_sqrt2 = R::one() / R::from_f64(2.0).sqrt();
    let mut phi_child = vec![R::zero(); k];
    let mut phi_left = vec![R::zero(); k];
    let mut phi_right = vec![R::zero(); k];
    let mut w = vec![R::zero(); n * n];
    for q in 0..k {
        scaling_all(x[q], &mut phi_child);
        scaling_all(half * x[q], &mut phi_left);
        scaling_all(half * (x[q] + R::one()), &mut phi_right);
        for i in 0..k {
            for j in 0..k {
                w[i * n + j] += inv_sqrt2 * wq[q] * phi_left[i] * phi_child[j];
                w[i * n + k + j] += inv_sqrt2 * wq[q] * phi_right[i] * phi_child[j];
            }
        }
    }
    for j in 0..k {
        let mut v = vec![R::zero(); n];
        for m in 0..k {
            v[m] = -w[j * n + m];
            v[k + m] = w[j * n + k + m];
        }
        // two passes of modified Gram-Schmidt against all earlier rows
        for _ in 0..2 {
            for r in 0..k + j {
                let row = &w[r * n..(r + 1) * n];
                let mut dot = R::zero();
                for p in 0..n {
                    dot += row[p] * v[p];
                }
                for p in 0..n {
                    v[p] = v[p] - dot * row[p];
                }
            }
        }
        let mut norm2 = R::zero();
        for x in &v[..n] {
            norm2 += *x * *x;
        }
        let inv = R::one() / norm2.sqrt();
        for p in 0..n {
            w[(k + j) * n + p] = v[p] * inv;
        }
    }
    w
}

/// Order-k scaling basis with its quadrature rule and filters.
#[derive(Clone, Debug)]
pub struct MultiwaveletBasis {
    pub k: usize,
    pub quad_nodes: Vec<f64>,
    pub quad_weights: Vec<f64>,
    /// `phi_at_nodes[i * k + q] = phi_i(x_q)`.
    pub phi_at_nodes: Vec<f64>,
    pub filters: TwoScaleFilters,
    /// Stacked filter matrix `W` (`2k x 2k`).
    pub(crate) w: Vec<f64>,
    /// `W^T`.
    pub(crate) wt: Vec<f64>,
    /// `values -> coefficients`: `[i][q] = w_q phi_i(x_q)`.
    pub(crate) to_coeffs: Vec<f64>,
    /// `coefficients -> values`: `[q][i] = phi_i(x_q)`.
    pub(crate) to_values: Vec<f64>,
}

impl MultiwaveletBasis {
    pub fn new(k: usize) -> Result<Self> {
        let (quad_nodes, quad_weights) = gauss_legendre_rule(k)?;
        let filters = build_two_scale_filters(k)?;
        let mut phi_at_nodes = vec![0.0; k * k];
        let mut to_coeffs = vec![0.0; k * k];
        let mut to_values = vec![0.0; k * k];
        let mut buf = vec![0.0; k];
        for q in 0..k {
            scaling_all(quad_nodes[q], &mut buf);
            for i in 0..k {
                phi_at_nodes[i * k + q] = buf[i];
                to_coeffs[i * k + q] = quad_weights[q] * buf[i];
                to_values[q * k + i] = buf[i];
            }
        }
        let w = filters.stacked();
        let n = 2 * k;
        let mut wt = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                wt[j * n + i] = w[i * n + j];
            }
        }
        Ok(Self {
            k,
            quad_nodes,
            quad_weights,
            phi_at_nodes,
            filters,
            w,
            wt,
            to_coeffs,
            to_values,
        })
    }

    /// Process-wide cached basis for order `k`.
    pub fn shared(k: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<MultiwaveletBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("basis cache poisoned");
        if let Some(b) = guard.get(&k) {
            return Ok(b.clone());
        }
        let b = Arc::new(Self::new(k)?);
        guard.insert(k, b.clone());
        Ok(b)
    }

    /// `phi_i(x)` for all `i < k`, with `x` taken inside the unit interval.
    pub fn eval_all(&self, x: f64, out: &mut [f64]) {
        scaling_all(x, &mut out[..self.k]);
    }
}
