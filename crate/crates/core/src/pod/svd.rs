//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of the working matrix are rotated pairwise until every pair is
//! orthogonal to working precision. Singular values come out with high relative
//! accuracy, which the truncation-energy identities rely on.

use ndarray::{Array1, Array2, ArrayView2};

const MAX_SWEEPS: usize = 80;
const TOL: f64 = 1e-15;

/// `A = U diag(s) Vt` with `k = min(m, n)` columns in `U`, sorted descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub vt: Array2<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// Orthogonalizes the columns of `g` (column-stored), accumulating rotations in `v`.
fn jacobi_sweeps(g: &mut [Vec<f64>], v: &mut [Vec<f64>]) {
    let n = g.len();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&g[p], &g[p]);
                let beta = dot(&g[q], &g[q]);
                let gamma = dot(&g[p], &g[q]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = g.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
            }
        }
        if !rotated {
            return;
        }
    }
    log::warn!("one-sided Jacobi SVD hit the sweep limit");
}

/// Fills columns flagged in `missing` with unit vectors orthogonal to all others.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[bool]) {
    let m = cols.first().map_or(0, Vec::len);
    let mut candidate = 0;
    for j in 0..cols.len() {
        if !missing[j] {
            continue;
        }
        loop {
            let mut e = vec![0.0; m];
            e[candidate % m] = 1.0;
            candidate += 1;
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for (k, other) in cols.iter().enumerate() {
                    if k == j || (missing[k] && k > j) {
                        continue;
                    }
                    let proj = dot(&e, other);
                    e.iter_mut().zip(other).for_each(|(x, o)| *x -= proj * o);
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                e.iter_mut().for_each(|x| *x /= norm);
                cols[j] = e;
                break;
            }
            if candidate > 2 * m {
                return;
            }
        }
    }
}

/// Core routine for `m >= n`: returns `(U, s, V)` with `A = U diag(s) V^T`.
fn tall_svd(a: ArrayView2<f64>) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let n = a.ncols();
    let mut g: Vec<Vec<f64>> = a.columns().into_iter().map(|c| c.to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    jacobi_sweeps(&mut g, &mut v);

    let s: Vec<f64> = g.iter().map(|c| dot(c, c).sqrt()).collect();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let floor = smax * a.nrows().max(n) as f64 * f64::EPSILON;
    let mut missing = vec![false; n];
    for (j, col) in g.iter_mut().enumerate() {
        if s[j] > floor && s[j] > 0.0 {
            col.iter_mut().for_each(|x| *x /= s[j]);
        } else {
            missing[j] = true;
        }
    }
    complete_basis(&mut g, &missing);
    (g, s, v)
}

pub fn thin_svd(a: ArrayView2<f64>) -> Svd {
    let (m, n) = a.dim();
    let (u_cols, s, v_cols) = if m >= n {
        tall_svd(a)
    } else {
        let (u, s, v) = tall_svd(a.t());
        (v, s, u)
    };
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));

    let mut u = Array2::zeros((m, k));
    let mut vt = Array2::zeros((k, n));
    let mut sv = Array1::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        sv[dst] = s[src];
        for i in 0..m {
            u[[i, dst]] = u_cols[src][i];
        }
        for j in 0..n {
            vt[[dst, j]] = v_cols[src][j];
        }
    }
    Svd { u, s: sv, vt }
}
