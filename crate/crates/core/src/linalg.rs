//! Small dense helpers for Gram-matrix least squares.

/// Relative tolerance below which a column is treated as linearly dependent
/// on the columns before it.
pub(crate) const RANK_TOL: f64 = 1e-10;

/// Cholesky factor of a symmetric positive semi-definite matrix taken in
/// column order, skipping every column whose squared residual (relative to its
/// diagonal) falls below the tolerance. Dropped columns get zero coefficients.
#[derive(Debug, Clone)]
pub(crate) struct PivotedCholesky {
    order: usize,
    kept: Vec<usize>,
    /// lower-triangular factor over the kept columns, row-major
    l: Vec<f64>,
}

impl PivotedCholesky {
    /// `g` is a full row-major `order x order` matrix.
    pub fn new(g: &[f64], order: usize, tol: f64) -> Self {
        debug_assert_eq!(g.len(), order * order);
        let mut kept: Vec<usize> = Vec::with_capacity(order);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(order);
        for j in 0..order {
            let gjj = g[j * order + j];
            if !(gjj > 0.0) || !gjj.is_finite() {
                continue;
            }
            let k = kept.len();
            let mut row = vec![0.0; k + 1];
            for (a, &ka) in kept.iter().enumerate() {
                let mut s = g[j * order + ka];
                for b in 0..a {
                    s -= row[b] * rows[a][b];
                }
                row[a] = s / rows[a][a];
            }
            let resid = gjj - row[..k].iter().map(|x| x * x).sum::<f64>();
            if resid <= tol * gjj {
                continue;
            }
            row[k] = resid.sqrt();
            rows.push(row);
            kept.push(j);
        }
        let r = kept.len();
        let mut l = vec![0.0; r * r];
        for (a, row) in rows.iter().enumerate() {
            l[a * r..a * r + row.len()].copy_from_slice(row);
        }
        Self { order, kept, l }
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    pub fn dropped(&self) -> Vec<usize> {
        (0..self.order).filter(|j| !self.kept.contains(j)).collect()
    }

    /// Forward substitution `L z = b_kept`; `rhs` has full length.
    pub fn forward(&self, rhs: &[f64]) -> Vec<f64> {
        let r = self.kept.len();
        let mut z = vec![0.0; r];
        for a in 0..r {
            let mut s = rhs[self.kept[a]];
            for b in 0..a {
                s -= self.l[a * r + b] * z[b];
            }
            z[a] = s / self.l[a * r + a];
        }
        z
    }

    /// `b^T G^- b` restricted to the kept columns.
    pub fn quad_form(&self, rhs: &[f64]) -> f64 {
        self.forward(rhs).iter().map(|z| z * z).sum()
    }

    /// Solves `G x = rhs` over the kept columns; dropped entries are zero.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let r = self.kept.len();
        let mut z = self.forward(rhs);
        for a in (0..r).rev() {
            let mut s = z[a];
            for b in a + 1..r {
                s -= self.l[b * r + a] * z[b];
            }
            z[a] = s / self.l[a * r + a];
        }
        let mut x = vec![0.0; self.order];
        for (a, &j) in self.kept.iter().enumerate() {
            x[j] = z[a];
        }
        x
    }
}
