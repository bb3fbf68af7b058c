//! Compressed sparse storage and the LU solvers used by the Newton solver.

// Elimination loops read more clearly with explicit indices.
#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;
use std::ops::{AddAssign, Mul};

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular (no usable pivot in column {column})")]
    Singular { column: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Compressed sparse row matrix. Column indices within a row are ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T> CsrMatrix<T>
where
    T: Copy + Default + AddAssign + Mul<Output = T>,
{
    /// Assemble from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (r, c, v) = triplets[k];
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => T::default(),
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| {
                let mut acc = T::default();
                for (c, v) in self.row(r) {
                    acc += v * x[c];
                }
                acc
            })
            .collect()
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::default(); self.ncols]; self.nrows];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                d[r][c] = v;
            }
        }
        d
    }

    /// Same sparsity pattern with a mapped value type.
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> CsrMatrix<U> {
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().copied().map(f).collect(),
        }
    }
}

impl CsrMatrix<Complex64> {
    pub fn real(&self) -> CsrMatrix<f64> {
        self.map(|z| z.re)
    }

    pub fn imag(&self) -> CsrMatrix<f64> {
        self.map(|z| z.im)
    }
}

/// Dense LU with partial pivoting, solving `a x = b` in place of a copy.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(LinalgError::Dimension(format!("expected {n}x{n} matrix")));
    }
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let (piv, max) = (k..n)
            .map(|i| (i, m[i][k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(max > 0.0) {
            return Err(LinalgError::Singular { column: k });
        }
        m.swap(k, piv);
        x.swap(k, piv);
        let pivot = m[k][k];
        for i in k + 1..n {
            let f = m[i][k] / pivot;
            if f != 0.0 {
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                x[i] -= f * x[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m[k][j] * x[j];
        }
        x[k] = s / m[k][k];
    }
    Ok(x)
}

/// Greedy minimum-degree ordering on the symmetrized pattern of `a`.
///
/// Ties break toward the lowest index, so the ordering is deterministic.
pub fn minimum_degree_order(a: &CsrMatrix<f64>) -> Vec<usize> {
    let n = a.nrows;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for r in 0..n {
        for (c, _) in a.row(r) {
            if r != c {
                adj[r].insert(c);
                adj[c].insert(r);
            }
        }
    }
    let mut alive = vec![true; n];
    let mut heap: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = heap.pop_first() {
        alive[v] = false;
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| alive[u]).collect();
        for &u in &nbrs {
            heap.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (i, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[i + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            heap.insert((adj[u].len(), u));
        }
        adj[v].clear();
    }
    order
}

/// Sparse LU factorization `P A Q = L U` (left-looking, Gilbert–Peierls).
///
/// Rows are chosen by threshold partial pivoting, preferring the diagonal
/// entry when it is within `DIAG_PREFERENCE` of the column maximum.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    /// Column ordering: step `k` factors original column `col_perm[k]`.
    col_perm: Vec<usize>,
    /// `row_pinv[i]` is the pivot step of original row `i`.
    row_pinv: Vec<usize>,
    // L and U stored by column; L rows in pivot order, unit diagonal implicit.
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_ptr: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
}

const DIAG_PREFERENCE: f64 = 0.1;

impl SparseLu {
    pub fn factor(a: &CsrMatrix<f64>) -> Result<Self, LinalgError> {
        if a.nrows != a.ncols {
            return Err(LinalgError::Dimension(format!("{}x{} is not square", a.nrows, a.ncols)));
        }
        let n = a.nrows;
        let col_perm = minimum_degree_order(a);

        // Column-compressed copy of `a`.
        let mut a_ptr = vec![0usize; n + 1];
        for &c in &a.col_idx {
            a_ptr[c + 1] += 1;
        }
        for c in 0..n {
            a_ptr[c + 1] += a_ptr[c];
        }
        let mut fill = a_ptr.clone();
        let mut a_idx = vec![0usize; a.nnz()];
        let mut a_val = vec![0.0; a.nnz()];
        for r in 0..n {
            for (c, v) in a.row(r) {
                a_idx[fill[c]] = r;
                a_val[fill[c]] = v;
                fill[c] += 1;
            }
        }

        const UNSET: usize = usize::MAX;
        let mut pinv = vec![UNSET; n];
        // L columns hold original row indices until the final renumbering.
        let mut l_ptr = vec![0usize];
        let mut l_idx: Vec<usize> = Vec::new();
        let mut l_val: Vec<f64> = Vec::new();
        let mut u_ptr = vec![0usize];
        let mut u_idx: Vec<usize> = Vec::new();
        let mut u_val: Vec<f64> = Vec::new();

        let mut x = vec![0.0; n];
        let mut marked = vec![false; n];
        let mut reach: Vec<usize> = Vec::with_capacity(n);
        let mut stack: Vec<(usize, usize)> = Vec::new();

        for k in 0..n {
            let col = col_perm[k];
            // Symbolic: nodes reachable from the pattern of A(:, col) through L.
            reach.clear();
            for p in a_ptr[col]..a_ptr[col + 1] {
                let start = a_idx[p];
                if marked[start] {
                    continue;
                }
                marked[start] = true;
                stack.push((start, 0));
                while let Some(top) = stack.len().checked_sub(1) {
                    let (node, mut child) = stack[top];
                    let lcol = pinv[node];
                    let mut next_node = None;
                    if lcol != UNSET {
                        while l_ptr[lcol] + child < l_ptr[lcol + 1] {
                            let next = l_idx[l_ptr[lcol] + child];
                            child += 1;
                            if !marked[next] {
                                next_node = Some(next);
                                break;
                            }
                        }
                    }
                    stack[top].1 = child;
                    match next_node {
                        Some(next) => {
                            marked[next] = true;
                            stack.push((next, 0));
                        }
                        None => {
                            reach.push(node);
                            stack.pop();
                        }
                    }
                }
            }
            // `reach` is in reverse topological order.
            for p in a_ptr[col]..a_ptr[col + 1] {
                x[a_idx[p]] = a_val[p];
            }
            for &j in reach.iter().rev() {
                let lcol = pinv[j];
                if lcol == UNSET {
                    continue;
                }
                let xj = x[j];
                for p in l_ptr[lcol]..l_ptr[lcol + 1] {
                    x[l_idx[p]] -= l_val[p] * xj;
                }
            }

            let mut pivot_row = UNSET;
            let mut best = -1.0;
            for &i in &reach {
                if pinv[i] == UNSET {
                    if x[i].abs() > best {
                        best = x[i].abs();
                        pivot_row = i;
                    }
                } else {
                    u_idx.push(pinv[i]);
                    u_val.push(x[i]);
                }
            }
            if pivot_row == UNSET || !(best > 0.0) || !best.is_finite() {
                return Err(LinalgError::Singular { column: col });
            }
            if pinv[col] == UNSET && marked[col] && x[col].abs() >= DIAG_PREFERENCE * best {
                pivot_row = col;
            }
            let pivot = x[pivot_row];
            u_idx.push(k);
            u_val.push(pivot);
            u_ptr.push(u_idx.len());
            pinv[pivot_row] = k;
            for &i in &reach {
                if pinv[i] == UNSET {
                    l_idx.push(i);
                    l_val.push(x[i] / pivot);
                }
                x[i] = 0.0;
                marked[i] = false;
            }
            l_ptr.push(l_idx.len());
        }
        for i in l_idx.iter_mut() {
            *i = pinv[*i];
        }
        Ok(SparseLu { n, col_perm, row_pinv: pinv, l_ptr, l_idx, l_val, u_ptr, u_idx, u_val })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if b.len() != self.n {
            return Err(LinalgError::Dimension(format!("rhs length {} != {}", b.len(), self.n)));
        }
        let mut y = vec![0.0; self.n];
        for (i, &bi) in b.iter().enumerate() {
            y[self.row_pinv[i]] = bi;
        }
        for k in 0..self.n {
            let yk = y[k];
            if yk != 0.0 {
                for p in self.l_ptr[k]..self.l_ptr[k + 1] {
                    y[self.l_idx[p]] -= self.l_val[p] * yk;
                }
            }
        }
        for k in (0..self.n).rev() {
            // Diagonal is the last entry of each U column.
            let end = self.u_ptr[k + 1] - 1;
            y[k] /= self.u_val[end];
            let yk = y[k];
            for p in self.u_ptr[k]..end {
                y[self.u_idx[p]] -= self.u_val[p] * yk;
            }
        }
        let mut x = vec![0.0; self.n];
        for k in 0..self.n {
            x[self.col_perm[k]] = y[k];
        }
        Ok(x)
    }

    /// Number of stored entries in L and U (fill diagnostic).
    pub fn factor_nnz(&self) -> usize {
        self.l_idx.len() + self.u_idx.len()
    }
}
