//! Sparse least squares by conjugate gradients on the normal equations (CGLS).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsrMatrix {
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (u32, f64)>) {
        for (c, v) in entries {
            debug_assert!((c as usize) < self.cols);
            self.col_idx.push(c);
            self.values.push(v);
        }
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    /// y = A·x
    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// y = Aᵀ·x
    pub fn mul_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
    }

    pub fn column_norms_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (&c, &v) in self.col_idx.iter().zip(&self.values) {
            out[c as usize] += v * v;
        }
        out
    }

    /// Cheap sufficient test for rank deficiency: fewer rows than columns,
    /// an empty column, or two identical columns.
    pub fn is_structurally_rank_deficient(&self) -> bool {
        if self.rows() < self.cols {
            return true;
        }
        let mut signatures: Vec<Vec<(usize, u64)>> = vec![Vec::new(); self.cols];
        for r in 0..self.rows() {
            for (c, v) in self.row(r) {
                if v != 0.0 {
                    signatures[c].push((r, v.to_bits()));
                }
            }
        }
        let mut seen = HashMap::with_capacity(self.cols);
        for sig in signatures {
            if sig.is_empty() || seen.insert(sig, ()).is_some() {
                return true;
            }
        }
        false
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.rows())
            .map(|r| {
                let mut row = vec![0.0; self.cols];
                for (c, v) in self.row(r) {
                    row[c] += v;
                }
                row
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stop when ‖Aᵀr‖ ≤ tolerance·‖Aᵀb‖.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Jacobi scaling of the columns.
    pub precondition: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 2000,
            precondition: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Final ‖Aᵀr‖ / ‖Aᵀb‖.
    pub normal_residual: f64,
    pub residual_norm: f64,
    pub rank_deficient: bool,
}

/// Least-squares solve of `A·x ≈ b` from a zero start.
///
/// Starting from zero keeps the iterates in the row space of the (scaled)
/// operator, so an underdetermined consistent system converges to its
/// minimum-norm solution when the column scaling is uniform.
pub fn cgls(a: &CsrMatrix, b: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveReport)> {
    if b.len() != a.rows() {
        return Err(Error::LengthMismatch {
            expected: a.rows(),
            actual: b.len(),
        });
    }
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidConfig("solver tolerance must be positive".into()));
    }
    let n = a.cols();
    let scale: Vec<f64> = if opts.precondition {
        a.column_norms_sq()
            .into_iter()
            .map(|s| if s > 0.0 { 1.0 / s.sqrt() } else { 1.0 })
            .collect()
    } else {
        vec![1.0; n]
    };
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();

    let mut y = vec![0.0; n];
    let mut r = b.to_vec();
    let mut s = vec![0.0; n];
    a.mul_transpose(&r, &mut s);
    s.iter_mut().zip(&scale).for_each(|(v, d)| *v *= d);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let norm0 = gamma.sqrt();
    let mut q = vec![0.0; a.rows()];
    let mut dp = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = norm0 == 0.0;

    while !converged && iterations < opts.max_iterations {
        dp.iter_mut().zip(&p).zip(&scale).for_each(|((o, pv), d)| *o = pv * d);
        a.mul(&dp, &mut q);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        y.iter_mut().zip(&p).for_each(|(yv, pv)| *yv += alpha * pv);
        r.iter_mut().zip(&q).for_each(|(rv, qv)| *rv -= alpha * qv);
        a.mul_transpose(&r, &mut s);
        s.iter_mut().zip(&scale).for_each(|(v, d)| *v *= d);
        let gamma_next = dot(&s, &s);
        iterations += 1;
        if gamma_next.sqrt() <= opts.tolerance * norm0 {
            gamma = gamma_next;
            converged = true;
            break;
        }
        let beta = gamma_next / gamma;
        gamma = gamma_next;
        p.iter_mut().zip(&s).for_each(|(pv, sv)| *pv = sv + beta * *pv);
    }

    let x: Vec<f64> = y.iter().zip(&scale).map(|(v, d)| v * d).collect();
    let report = SolveReport {
        iterations,
        converged,
        normal_residual: if norm0 > 0.0 { gamma.sqrt() / norm0 } else { 0.0 },
        residual_norm: dot(&r, &r).sqrt(),
        rank_deficient: a.is_structurally_rank_deficient(),
    };
    Ok((x, report))
}
