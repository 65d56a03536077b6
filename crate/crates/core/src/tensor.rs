//! Dense coefficient tensors stored row-major (axis 0 slowest) with the same
//! extent along every axis, and mode-wise matrix transforms on them.

/// One cyclic transform step.
///
/// Treats `inp` as `[p][rest]` with `p < n_in` and writes
/// `out[rest][j] = alpha * sum_p inp[p][rest] * m[j][p] + beta * out[rest][j]`,
/// where `m` is `n_out x n_in` row-major. After `dim` steps the axes are back
/// in their original order, each transformed by its matrix.
#[inline]
pub(crate) fn cyclic_step(
    inp: &[f64],
    n_in: usize,
    m: &[f64],
    n_out: usize,
    alpha: f64,
    beta: f64,
    out: &mut [f64],
) {
    let rest = inp.len() / n_in;
    debug_assert_eq!(rest * n_in, inp.len());
    debug_assert_eq!(out.len(), rest * n_out);
    debug_assert_eq!(m.len(), n_in * n_out);
    unsafe {
        matrixmultiply::dgemm(
            rest,
            n_in,
            n_out,
            alpha,
            inp.as_ptr(),
            1,
            rest as isize,
            m.as_ptr(),
            1,
            n_in as isize,
            beta,
            out.as_mut_ptr(),
            n_out as isize,
            1,
        );
    }
}

/// Applies `mats[a]` (each `n_out x n_in`) along axis `a`.
pub(crate) fn transform_axes(s: &[f64], n_in: usize, mats: &[&[f64]], n_out: usize) -> Vec<f64> {
    // the leading axis is always one not yet transformed
    let mut cur = s.to_vec();
    for m in mats {
        let rest = cur.len() / n_in;
        let mut next = vec![0.0; rest * n_out];
        cyclic_step(&cur, n_in, m, n_out, 1.0, 0.0, &mut next);
        cur = next;
    }
    cur
}

/// Applies the same matrix along every axis.
pub(crate) fn transform(s: &[f64], dim: usize, n_in: usize, m: &[f64], n_out: usize) -> Vec<f64> {
    let mats = vec![m; dim];
    transform_axes(s, n_in, &mats, n_out)
}

pub(crate) fn pow(n: usize, dim: usize) -> usize {
    n.pow(dim as u32)
}

/// Index in a `(2k)^dim` block of entry `idx` of child `child`'s `k^dim` block.
#[inline]
pub(crate) fn child_to_parent_index(idx: usize, child: usize, dim: usize, k: usize) -> usize {
    let mut rem = idx;
    let mut out = 0;
    let mut stride_small = pow(k, dim);
    let mut stride_big = pow(2 * k, dim);
    for a in 0..dim {
        stride_small /= k;
        stride_big /= 2 * k;
        let i = rem / stride_small;
        rem %= stride_small;
        let bit = (child >> (dim - 1 - a)) & 1;
        out += (bit * k + i) * stride_big;
    }
    out
}

/// Copies the `k^dim` sub-block belonging to child `child` out of a
/// `(2k)^dim` block. Child 0 is the scaling corner.
pub(crate) fn gather_child(big: &[f64], child: usize, dim: usize, k: usize) -> Vec<f64> {
    let len = pow(k, dim);
    (0..len)
        .map(|idx| big[child_to_parent_index(idx, child, dim, k)])
        .collect()
}

pub(crate) fn scatter_child(big: &mut [f64], small: &[f64], child: usize, dim: usize, k: usize) {
    for (idx, v) in small.iter().enumerate() {
        big[child_to_parent_index(idx, child, dim, k)] = *v;
    }
}

pub(crate) fn add_child(big: &mut [f64], small: &[f64], child: usize, dim: usize, k: usize) {
    for (idx, v) in small.iter().enumerate() {
        big[child_to_parent_index(idx, child, dim, k)] += *v;
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// 2-norm of a `(2k)^dim` block excluding its scaling corner.
pub(crate) fn wavelet_norm(big: &[f64], dim: usize, k: usize) -> f64 {
    let total: f64 = big.iter().map(|x| x * x).sum();
    let corner: f64 = gather_child(big, 0, dim, k).iter().map(|x| x * x).sum();
    (total - corner).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(s: &[f64], dim: usize, n_in: usize, mats: &[Vec<f64>], n_out: usize) -> Vec<f64> {
        let len_out = pow(n_out, dim);
        let mut out = vec![0.0; len_out];
        for (o, val) in out.iter_mut().enumerate() {
            let mut jj = vec![0; dim];
            let mut r = o;
            for a in (0..dim).rev() {
                jj[a] = r % n_out;
                r /= n_out;
            }
            for (i, sv) in s.iter().enumerate() {
                let mut ii = vec![0; dim];
                let mut r = i;
                for a in (0..dim).rev() {
                    ii[a] = r % n_in;
                    r /= n_in;
                }
                let mut prod = *sv;
                for a in 0..dim {
                    prod *= mats[a][jj[a] * n_in + ii[a]];
                }
                *val += prod;
            }
        }
        out
    }

    #[test]
    fn transform_matches_naive() {
        for dim in 1..=3 {
            let (n_in, n_out) = (3, 4);
            let s: Vec<f64> = (0..pow(n_in, dim))
                .map(|i| (i as f64 * 0.37).sin())
                .collect();
            let mats: Vec<Vec<f64>> = (0..dim)
                .map(|a| {
                    (0..n_in * n_out)
                        .map(|i| ((i + 7 * a) as f64 * 0.11).cos())
                        .collect()
                })
                .collect();
            let refs: Vec<&[f64]> = mats.iter().map(|m| m.as_slice()).collect();
            let fast = transform_axes(&s, n_in, &refs, n_out);
            let slow = naive(&s, dim, n_in, &mats, n_out);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn child_scatter_gather_roundtrip() {
        let (dim, k) = (3, 2);
        let mut big = vec![0.0; pow(2 * k, dim)];
        for c in 0..8 {
            let small: Vec<f64> = (0..8).map(|i| (c * 10 + i) as f64).collect();
            scatter_child(&mut big, &small, c, dim, k);
        }
        for c in 0..8 {
            let small = gather_child(&big, c, dim, k);
            assert_eq!(
                small,
                (0..8).map(|i| (c * 10 + i) as f64).collect::<Vec<_>>()
            );
        }
        // every slot written exactly once
        let mut seen: Vec<f64> = big.clone();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 64);
    }
}
