//! Least squares on designs with few distinct rows, with cluster-robust
//! covariance.
//!
//! A 2x2 cell regression has at most a few hundred distinct design rows
//! (period x group x covariate profile) but thousands of observations.
//! Solving the weighted problem on distinct rows (weight = row count,
//! response = row mean) yields exactly the OLS coefficients of the full
//! problem, since the two residual sums of squares differ by a constant.

use std::collections::BTreeMap;

use crate::linalg::{PivotPlan, PivotedQr, RANK_TOL};

/// Distinct design rows together with their observation count and response sum.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedDesign {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub counts: Vec<f64>,
    pub sums: Vec<f64>,
    pub plan: PivotPlan,
}

impl CompressedDesign {
    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn n_obs(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Pivoted QR of the sqrt-weighted distinct rows.
    pub fn decompose(&self) -> PivotedQr {
        let k = self.n_cols();
        let mut cols = vec![Vec::with_capacity(self.rows.len()); k];
        let mut y = Vec::with_capacity(self.rows.len());
        for ((row, &n), &s) in self.rows.iter().zip(&self.counts).zip(&self.sums) {
            if n <= 0.0 {
                continue;
            }
            let w = n.sqrt();
            for (j, v) in row.iter().enumerate() {
                cols[j].push(v * w);
            }
            y.push(s / w);
        }
        PivotedQr::decompose(cols, y, self.plan, RANK_TOL)
    }
}

/// Which column a name maps to after rank reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnSlot {
    Kept(usize),
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub names: Vec<String>,
    /// In design order; `None` for dropped columns.
    pub coefficients: Vec<Option<f64>>,
    /// Cluster-robust covariance in design order; rows and columns of
    /// dropped coefficients are zero.
    pub covariance: Vec<Vec<f64>>,
    pub df_resid: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
}

impl RegressionFit {
    pub fn column(&self, name: &str) -> Option<ColumnSlot> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(match self.coefficients[j] {
            Some(_) => ColumnSlot::Kept(j),
            None => ColumnSlot::Dropped,
        })
    }

    pub fn dropped(&self) -> Vec<usize> {
        (0..self.names.len())
            .filter(|&j| self.coefficients[j].is_none())
            .collect()
    }

    pub fn se(&self, j: usize) -> Option<f64> {
        self.coefficients[j].map(|_| self.covariance[j][j].max(0.0).sqrt())
    }
}

/// Row-pair accumulator: dense for small designs, sparse otherwise.
enum CrossSums {
    Dense { n: usize, v: Vec<f64> },
    Sparse(BTreeMap<(usize, usize), f64>),
}

impl CrossSums {
    const DENSE_MAX: usize = 256;

    fn new(n: usize) -> Self {
        if n <= Self::DENSE_MAX {
            CrossSums::Dense { n, v: vec![0.0; n * n] }
        } else {
            CrossSums::Sparse(BTreeMap::new())
        }
    }

    fn add(&mut self, lo: usize, hi: usize, x: f64) {
        match self {
            CrossSums::Dense { n, v } => v[lo * *n + hi] += x,
            CrossSums::Sparse(m) => *m.entry((lo, hi)).or_insert(0.0) += x,
        }
    }

    fn into_entries(self) -> Vec<(usize, usize, f64)> {
        match self {
            CrossSums::Dense { n, v } => v
                .into_iter()
                .enumerate()
                .filter(|(_, c)| *c != 0.0)
                .map(|(i, c)| (i / n, i % n, c))
                .collect(),
            CrossSums::Sparse(m) => m.into_iter().map(|((a, b), c)| (a, b, c)).collect(),
        }
    }
}

/// Small-sample factor `G/(G-1) * (N-1)/(N-K)` for clustered sandwiches.
pub fn cluster_correction(n_clusters: usize, n_obs: usize, n_params: usize) -> f64 {
    let g = n_clusters as f64;
    let n = n_obs as f64;
    let k = n_params as f64;
    if n_clusters < 2 || n <= k {
        return f64::NAN;
    }
    g / (g - 1.0) * (n - 1.0) / (n - k)
}

/// OLS with covariance clustered on the given groups.
///
/// Each cluster lists its observations as `(design row, response)`.
pub fn fit_clustered<C: AsRef<[(usize, f64)]>>(
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    plan: PivotPlan,
    clusters: &[C],
) -> RegressionFit {
    let n_rows = rows.len();
    let mut counts = vec![0.0; n_rows];
    let mut sums = vec![0.0; n_rows];
    let mut n_obs = 0usize;
    for cl in clusters {
        for &(r, y) in cl.as_ref() {
            counts[r] += 1.0;
            sums[r] += y;
            n_obs += 1;
        }
    }
    let design = CompressedDesign {
        names,
        rows,
        counts,
        sums,
        plan,
    };
    let qr = design.decompose();
    let beta = qr.coefficients();
    let k = design.n_cols();
    let fitted: Vec<f64> = design
        .rows
        .iter()
        .map(|x| x.iter().zip(&beta).map(|(a, b)| a * b.unwrap_or(0.0)).sum())
        .collect();

    // sum of e_a * e_b over observation pairs within clusters, by row pair
    let mut cross = CrossSums::new(n_rows);
    for cl in clusters {
        let cl = cl.as_ref();
        for (i, &(ra, ya)) in cl.iter().enumerate() {
            let ea = ya - fitted[ra];
            for (j, &(rb, yb)) in cl.iter().enumerate().skip(i) {
                let eb = yb - fitted[rb];
                let (lo, hi) = if ra <= rb { (ra, rb) } else { (rb, ra) };
                // off-diagonal pairs on the same row appear twice in s s'
                let w = if j != i && lo == hi { 2.0 } else { 1.0 };
                cross.add(lo, hi, w * ea * eb);
            }
        }
    }

    let rank = qr.rank();
    let bread = qr.inverse_gram();
    // z_r = B x_r over kept columns
    let z: Vec<Vec<f64>> = design
        .rows
        .iter()
        .map(|x| {
            (0..rank)
                .map(|i| (0..rank).map(|j| bread[i][j] * x[qr.kept[j]]).sum())
                .collect()
        })
        .collect();
    let mut v = vec![vec![0.0; rank]; rank];
    for (a, b, c) in cross.into_entries() {
        if c == 0.0 {
            continue;
        }
        for i in 0..rank {
            for j in 0..rank {
                let t = z[a][i] * z[b][j];
                let t = if a == b { t } else { t + z[b][i] * z[a][j] };
                v[i][j] += c * t;
            }
        }
    }
    let factor = cluster_correction(clusters.len(), n_obs, rank);
    let mut covariance = vec![vec![0.0; k]; k];
    for i in 0..rank {
        for j in 0..rank {
            covariance[qr.kept[i]][qr.kept[j]] = factor * v[i][j];
        }
    }
    RegressionFit {
        names: design.names,
        coefficients: beta,
        covariance,
        df_resid: n_obs as f64 - rank as f64,
        n_obs,
        n_clusters: clusters.len(),
    }
}
