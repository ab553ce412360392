//! Small dense least-squares kernels.
//!
//! Matrices here are tiny (a few hundred rows, tens of columns), so they are
//! kept as plain column vectors rather than pulling in a matrix crate.

/// Relative pivot tolerance for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Tolerance on scaled Schur complements in [`PivotedCholesky`]; these are
/// squared quantities, so the bound is looser than [`RANK_TOL`].
pub const GRAM_TOL: f64 = 1e-10;

/// Column ordering constraints for [`PivotedQr::decompose`].
///
/// Columns `0..leading` are processed first in their given order, columns
/// `k - trailing..k` last in their given order, and the middle block is
/// pivoted by largest remaining norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PivotPlan {
    pub leading: usize,
    pub trailing: usize,
}

/// Householder QR with restricted column pivoting.
///
/// A column whose residual norm falls below `tol * |R[0][0]|` is dropped;
/// the kept columns define an upper-triangular `R` and the rotated response.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Original indices of kept columns, in elimination order.
    pub kept: Vec<usize>,
    /// Original indices of dropped columns, ascending.
    pub dropped: Vec<usize>,
    /// `r[i][j]` for `j >= i`, indices in elimination order.
    pub r: Vec<Vec<f64>>,
    /// First `kept.len()` entries of `Q' y`.
    pub qty: Vec<f64>,
    /// Sum of squared residuals.
    pub rss: f64,
    pub n_cols: usize,
}

fn dot_from(a: &[f64], b: &[f64], from: usize) -> f64 {
    a[from..].iter().zip(&b[from..]).map(|(x, y)| x * y).sum()
}

impl PivotedQr {
    pub fn decompose(mut cols: Vec<Vec<f64>>, mut y: Vec<f64>, plan: PivotPlan, tol: f64) -> Self {
        let k = cols.len();
        let m = y.len();
        assert!(cols.iter().all(|c| c.len() == m), "ragged design");
        assert!(plan.leading + plan.trailing <= k);

        let order: Vec<usize> = (0..k).collect();
        let mid_end = k - plan.trailing;
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        let mut r: Vec<Vec<f64>> = Vec::new();
        let mut lead_norm: Option<f64> = None;
        let mut remaining_mid: Vec<usize> = (plan.leading..mid_end).collect();
        let mut step = 0usize;

        let mut visit = |c: usize,
                         cols: &mut Vec<Vec<f64>>,
                         y: &mut Vec<f64>,
                         kept: &mut Vec<usize>,
                         dropped: &mut Vec<usize>,
                         r: &mut Vec<Vec<f64>>,
                         step: &mut usize| {
            let row = *step;
            let norm = if row < m { dot_from(&cols[c], &cols[c], row).sqrt() } else { 0.0 };
            let threshold = lead_norm.map_or(0.0, |l| tol * l);
            if row >= m || norm <= threshold || norm == 0.0 {
                dropped.push(c);
                return;
            }
            if lead_norm.is_none() {
                lead_norm = Some(norm);
            }
            // Householder vector v = x + sign(x0)|x| e0
            let x0 = cols[c][row];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = cols[c][row..].to_vec();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|a| a * a).sum();
            let apply = |target: &mut [f64]| {
                if vnorm2 == 0.0 {
                    return;
                }
                let s: f64 = v.iter().zip(&target[row..]).map(|(a, b)| a * b).sum();
                let f = 2.0 * s / vnorm2;
                for (t, a) in target[row..].iter_mut().zip(&v) {
                    *t -= f * a;
                }
            };
            for (j, col) in cols.iter_mut().enumerate() {
                if j != c && !kept.contains(&j) {
                    apply(col);
                }
            }
            apply(y);
            cols[c][row] = alpha;
            for t in cols[c][row + 1..].iter_mut() {
                *t = 0.0;
            }
            kept.push(c);
            r.push(Vec::new());
            *step += 1;
        };

        for &c in &order[..plan.leading] {
            visit(c, &mut cols, &mut y, &mut kept, &mut dropped, &mut r, &mut step);
        }
        while !remaining_mid.is_empty() {
            let row = step;
            let (pos, _) = remaining_mid
                .iter()
                .enumerate()
                .map(|(pos, &c)| (pos, if row < m { dot_from(&cols[c], &cols[c], row) } else { 0.0 }))
                .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
            let c = remaining_mid.remove(pos);
            visit(c, &mut cols, &mut y, &mut kept, &mut dropped, &mut r, &mut step);
        }
        for &c in &order[mid_end..] {
            visit(c, &mut cols, &mut y, &mut kept, &mut dropped, &mut r, &mut step);
        }

        // assemble R from the transformed kept columns
        let nk = kept.len();
        for (i, row) in r.iter_mut().enumerate() {
            *row = (0..nk).map(|j| if j >= i { cols[kept[j]][i] } else { 0.0 }).collect();
        }
        let qty = y[..nk].to_vec();
        let rss = y[nk..].iter().map(|v| v * v).sum();
        dropped.sort_unstable();
        PivotedQr {
            kept,
            dropped,
            r,
            qty,
            rss,
            n_cols: k,
        }
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// Coefficients in original column order; dropped columns are `None`.
    pub fn coefficients(&self) -> Vec<Option<f64>> {
        let b = back_substitute(&self.r, &self.qty);
        let mut out = vec![None; self.n_cols];
        for (i, &c) in self.kept.iter().enumerate() {
            out[c] = Some(b[i]);
        }
        out
    }

    /// `(X'X)^{-1}` over kept columns, indexed in elimination order.
    pub fn inverse_gram(&self) -> Vec<Vec<f64>> {
        let n = self.rank();
        let rinv = upper_inverse(&self.r);
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (i.max(j)..n).map(|l| rinv[i][l] * rinv[j][l]).sum();
                out[i][j] = s;
                out[j][i] = s;
            }
        }
        out
    }
}

fn back_substitute(r: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|j| r[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / r[i][i];
    }
    x
}

fn upper_inverse(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = r.len();
    let mut inv = vec![vec![0.0; n]; n];
    for j in 0..n {
        inv[j][j] = 1.0 / r[j][j];
        for i in (0..j).rev() {
            let s: f64 = ((i + 1)..=j).map(|l| r[i][l] * inv[l][j]).sum();
            inv[i][j] = -s / r[i][i];
        }
    }
    inv
}

/// Pivoted Cholesky solve of a symmetric positive semidefinite system
/// `A x = b` after unit-diagonal scaling.
///
/// Indices are ordered by `plan` as in [`PivotedQr::decompose`]: the middle
/// block is pivoted by largest remaining diagonal. An index whose scaled
/// Schur complement falls below `tol` is dropped.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Lower factor of the scaled kept block, elimination order.
    l: Vec<Vec<f64>>,
    scale: Vec<f64>,
    n: usize,
}

impl PivotedCholesky {
    pub fn decompose(a: &[Vec<f64>], plan: PivotPlan, tol: f64) -> Self {
        let n = a.len();
        assert!(plan.leading + plan.trailing <= n);
        let scale: Vec<f64> = (0..n)
            .map(|i| if a[i][i] > 0.0 { 1.0 / a[i][i].sqrt() } else { 0.0 })
            .collect();
        // working copy of the scaled matrix
        let mut w: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * scale[i] * scale[j]).collect())
            .collect();
        let mut kept: Vec<usize> = Vec::new();
        let mut dropped = Vec::new();
        let mut l: Vec<Vec<f64>> = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut remaining: Vec<usize> = (plan.leading..n - plan.trailing).collect();
        let mut queue: Vec<usize> = (0..plan.leading).collect();
        queue.reverse();
        let mut tail: Vec<usize> = (n - plan.trailing..n).collect();
        tail.reverse();

        loop {
            let c = if let Some(c) = queue.pop() {
                c
            } else if remaining.is_empty() {
                match tail.pop() {
                    Some(c) => c,
                    None => break,
                }
            } else {
                let (pos, _) = remaining
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (pos, &c)| {
                        if w[c][c] > best.1 {
                            (pos, w[c][c])
                        } else {
                            best
                        }
                    });
                remaining.remove(pos)
            };
            let d = w[c][c];
            if scale[c] == 0.0 || !(d > tol) {
                dropped.push(c);
                continue;
            }
            let piv = d.sqrt();
            // column of L for this pivot, indexed by original index
            let col: Vec<f64> = (0..n).map(|i| w[i][c] / piv).collect();
            for i in 0..n {
                for j in 0..n {
                    w[i][j] -= col[i] * col[j];
                }
            }
            l.push(cols.iter().map(|prev| prev[c]).chain(std::iter::once(piv)).collect());
            cols.push(col);
            kept.push(c);
        }
        dropped.sort_unstable();
        PivotedCholesky {
            kept,
            dropped,
            l,
            scale,
            n,
        }
    }

    fn lower(&self) -> Vec<Vec<f64>> {
        let k = self.kept.len();
        let mut m = vec![vec![0.0; k]; k];
        for (i, row) in self.l.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                m[i][j] = *v;
            }
        }
        m
    }

    /// Solution in original order; dropped indices are `None`.
    pub fn solve(&self, b: &[f64]) -> Vec<Option<f64>> {
        let k = self.kept.len();
        let l = self.lower();
        let rhs: Vec<f64> = self.kept.iter().map(|&c| b[c] * self.scale[c]).collect();
        let mut z = vec![0.0; k];
        for i in 0..k {
            let s: f64 = (0..i).map(|j| l[i][j] * z[j]).sum();
            z[i] = (rhs[i] - s) / l[i][i];
        }
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = ((i + 1)..k).map(|j| l[j][i] * x[j]).sum();
            x[i] = (z[i] - s) / l[i][i];
        }
        let mut out = vec![None; self.n];
        for (i, &c) in self.kept.iter().enumerate() {
            out[c] = Some(x[i] * self.scale[c]);
        }
        out
    }

    /// Inverse of the kept block in original scale, indexed in elimination order.
    pub fn inverse(&self) -> Vec<Vec<f64>> {
        let k = self.kept.len();
        let l = self.lower();
        // L^{-1}
        let mut linv = vec![vec![0.0; k]; k];
        for j in 0..k {
            linv[j][j] = 1.0 / l[j][j];
            for i in (j + 1)..k {
                let s: f64 = (j..i).map(|m| l[i][m] * linv[m][j]).sum();
                linv[i][j] = -s / l[i][i];
            }
        }
        let mut out = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..=i {
                let s: f64 = (i..k).map(|m| linv[m][i] * linv[m][j]).sum();
                let v = s * self.scale[self.kept[i]] * self.scale[self.kept[j]];
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        out
    }
}
