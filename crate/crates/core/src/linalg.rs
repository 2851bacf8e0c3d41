//! Compressed-row symmetric operators and a Jacobi-preconditioned conjugate
//! gradient solver for principal submatrices.

use std::io::Write;

use crate::error::{check_len, Error, Result};

/// Symmetric sparse matrix in CSR layout with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymOperator {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|t| t.0 >= n || t.1 >= n) {
            return Err(Error::InvalidArgument(format!(
                "entry ({r}, {c}) outside {n}x{n} operator"
            )));
        }
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { n, row_ptr, cols, vals })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, x.len())?;
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        Ok(y)
    }

    /// `x^T A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_len(self.n, x.len())?;
        check_len(self.n, y.len())?;
        Ok((0..self.n)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>())
            .sum())
    }

    /// `x^T A x`.
    pub fn quad(&self, x: &[f64]) -> Result<f64> {
        self.inner(x, x)
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
            / scale
    }

    /// `alpha * self + beta * other` on the union pattern.
    pub fn add_scaled(&self, alpha: f64, other: &SparseSymOperator, beta: f64) -> Result<Self> {
        check_len(self.n, other.n)?;
        let triplets = self
            .triplets()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, beta * v)))
            .collect();
        Self::from_triplets(self.n, triplets)
    }

    /// Coordinate text format, one `row col value` line per stored entry.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "% {} {} {}", self.n, self.n, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }

    /// Dense copy of the principal submatrix on `idx`.
    pub fn dense_submatrix(&self, idx: &[usize]) -> nalgebra::DMatrix<f64> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &i) in idx.iter().enumerate() {
            pos[i] = k;
        }
        let mut m = nalgebra::DMatrix::zeros(idx.len(), idx.len());
        for (k, &i) in idx.iter().enumerate() {
            for (j, v) in self.row(i) {
                if pos[j] != usize::MAX {
                    m[(k, pos[j])] = v;
                }
            }
        }
        m
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    /// Stop once `||r||_2 <= max(rtol * ||rhs||_2, atol)`, or once the
    /// residual reaches the round-off floor
    /// `10 eps (||A||_inf ||x||_2 + ||rhs||_2)`.
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { rtol: 1e-14, atol: 1e-13, max_iter: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `A[I, I] x[I] = rhs[I]` for the index set `I = {i : mask[i]}`.
///
/// Entries of `x` outside `I` are left untouched and do not enter the
/// product; callers fold fixed values into `rhs` beforehand. `x` is the
/// initial guess on `I`.
pub fn cg_masked(
    a: &SparseSymOperator,
    rhs: &[f64],
    mask: &[bool],
    x: &mut [f64],
    opts: CgOptions,
) -> Result<CgReport> {
    let n = a.dim();
    check_len(n, rhs.len())?;
    check_len(n, mask.len())?;
    check_len(n, x.len())?;
    let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Ok(CgReport { iterations: 0, residual: 0.0 });
    }

    let apply = |v: &[f64], out: &mut [f64]| {
        for &i in &idx {
            out[i] = a.row(i).filter(|&(j, _)| mask[j]).map(|(j, w)| w * v[j]).sum();
        }
    };
    let dot_i = |u: &[f64], v: &[f64]| idx.iter().map(|&i| u[i] * v[i]).sum::<f64>();

    let a_norm = idx
        .iter()
        .map(|&i| a.row(i).filter(|&(j, _)| mask[j]).map(|(_, w)| w.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut inv_diag = vec![0.0; n];
    for &i in &idx {
        let d = a.get(i, i);
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Solver(format!("non-positive diagonal {d} at row {i}")));
        }
        inv_diag[i] = 1.0 / d;
    }

    let mut xi = vec![0.0; n];
    for &i in &idx {
        xi[i] = x[i];
    }
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(&xi, &mut ap);
    for &i in &idx {
        r[i] = rhs[i] - ap[i];
    }
    let rhs_norm = dot_i(rhs, rhs).sqrt();
    let target = (opts.rtol * rhs_norm).max(opts.atol);
    let max_iter = if opts.max_iter == 0 { 10 * idx.len() + 100 } else { opts.max_iter };

    let mut z = vec![0.0; n];
    for &i in &idx {
        z[i] = inv_diag[i] * r[i];
    }
    let mut p = z.clone();
    let mut rz = dot_i(&r, &z);
    let mut res = dot_i(&r, &r).sqrt();
    let floor = |x: &[f64]| 10.0 * f64::EPSILON * (a_norm * dot_i(x, x).sqrt() + rhs_norm);
    // Give up when the residual has not improved for this many iterations.
    let patience = 200 + 4 * (idx.len() as f64).sqrt() as usize;
    let (mut best, mut best_it) = (res, 0);
    let mut it = 0;
    while res > target.max(floor(&xi)) {
        if it >= max_iter || it - best_it > patience {
            return Err(Error::Solver(format!(
                "conjugate gradient stalled at residual {res:e} (target {target:e}) after {it} iterations"
            )));
        }
        apply(&p, &mut ap);
        let pap = dot_i(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::Solver(format!(
                "reduced operator is not positive definite (p^T A p = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for &i in &idx {
            xi[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        // Recompute the true residual periodically to avoid drift.
        if it % 50 == 0 {
            apply(&xi, &mut ap);
            for &i in &idx {
                r[i] = rhs[i] - ap[i];
            }
        }
        for &i in &idx {
            z[i] = inv_diag[i] * r[i];
        }
        let rz_new = dot_i(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for &i in &idx {
            p[i] = z[i] + beta * p[i];
        }
        res = dot_i(&r, &r).sqrt();
        if res < 0.5 * best {
            (best, best_it) = (res, it);
        }
    }
    for &i in &idx {
        x[i] = xi[i];
    }
    Ok(CgReport { iterations: it, residual: res })
}

/// Banded Cholesky factor `L L^T` of a principal submatrix, using the
/// ordering of the selected indices.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    idx: Vec<usize>,
    bw: usize,
    /// Row `i` stores `L[i, i - bw ..= i]`.
    band: Vec<f64>,
}

impl BandCholesky {
    /// Half-bandwidth of `A[idx, idx]` in the given ordering.
    pub fn bandwidth(a: &SparseSymOperator, idx: &[usize]) -> usize {
        let pos = positions(a.dim(), idx);
        idx.iter()
            .enumerate()
            .flat_map(|(k, &i)| {
                let pos = &pos;
                a.row(i).filter_map(move |(j, _)| {
                    (pos[j] != usize::MAX && pos[j] < k).then(|| k - pos[j])
                })
            })
            .max()
            .unwrap_or(0)
    }

    pub fn factor(a: &SparseSymOperator, idx: &[usize]) -> Result<Self> {
        let n = idx.len();
        let bw = Self::bandwidth(a, idx);
        let w = bw + 1;
        let pos = positions(a.dim(), idx);
        let mut band = vec![0.0; n * w];
        for (k, &i) in idx.iter().enumerate() {
            for (j, v) in a.row(i) {
                let pj = pos[j];
                if pj != usize::MAX && pj <= k {
                    band[k * w + (pj + bw - k)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let jlo = j.saturating_sub(bw).max(lo);
                let mut s = band[i * w + (j + bw - i)];
                for k in jlo..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if j < i {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                } else {
                    if !(s > 0.0) {
                        return Err(Error::Solver(format!(
                            "matrix is not positive definite (pivot {s:e} at row {})",
                            idx[i]
                        )));
                    }
                    band[i * w + bw] = s.sqrt();
                }
            }
        }
        Ok(Self { idx: idx.to_vec(), bw, band })
    }

    /// Solves for `x[idx]` given `rhs[idx]`; other entries of `x` untouched.
    pub fn solve_into(&self, rhs: &[f64], x: &mut [f64]) {
        let n = self.idx.len();
        let (bw, w) = (self.bw, self.bw + 1);
        let mut y: Vec<f64> = self.idx.iter().map(|&i| rhs[i]).collect();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= self.band[i * w + (k + bw - i)] * y[k];
            }
            y[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= self.band[k * w + (i + bw - k)] * y[k];
            }
            y[i] = s / self.band[i * w + bw];
        }
        for (k, &i) in self.idx.iter().enumerate() {
            x[i] = y[k];
        }
    }
}

fn positions(n: usize, idx: &[usize]) -> Vec<usize> {
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in idx.iter().enumerate() {
        pos[i] = k;
    }
    pos
}

/// Banded factorizations up to this many flops (`n * bw^2`) are used
/// instead of conjugate gradients.
pub const DIRECT_FLOP_LIMIT: f64 = 4e8;

/// Solves `A[I, I] x[I] = rhs[I]`, `I = {i : mask[i]}`, by banded Cholesky
/// when affordable and by conjugate gradients otherwise.
pub fn solve_reduced(
    a: &SparseSymOperator,
    rhs: &[f64],
    mask: &[bool],
    x: &mut [f64],
    cg: CgOptions,
) -> Result<()> {
    check_len(a.dim(), rhs.len())?;
    check_len(a.dim(), mask.len())?;
    check_len(a.dim(), x.len())?;
    let idx: Vec<usize> = (0..a.dim()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Ok(());
    }
    let bw = BandCholesky::bandwidth(a, &idx) as f64;
    if idx.len() as f64 * bw * bw <= DIRECT_FLOP_LIMIT {
        BandCholesky::factor(a, &idx)?.solve_into(rhs, x);
    } else {
        cg_masked(a, rhs, mask, x, cg)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> SparseSymOperator {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseSymOperator::from_triplets(n, t).unwrap()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = SparseSymOperator::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)])
            .unwrap();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), 4.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.nnz(), 2);
        assert!(SparseSymOperator::from_triplets(2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn cg_solves_full_and_masked() {
        let a = laplace_1d(30);
        let xs: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul(&xs).unwrap();
        let mut x = vec![0.0; 30];
        cg_masked(&a, &b, &[true; 30], &mut x, CgOptions::default()).unwrap();
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-11);
        }

        // Masked: fix the first and last entries, solve for the interior.
        let mut mask = vec![true; 30];
        mask[0] = false;
        mask[29] = false;
        let mut rhs = b.clone();
        rhs[1] += xs[0];
        rhs[28] += xs[29];
        let mut y = vec![0.0; 30];
        y[0] = 123.0;
        cg_masked(&a, &rhs, &mask, &mut y, CgOptions::default()).unwrap();
        assert_eq!(y[0], 123.0);
        for i in 1..29 {
            assert!((y[i] - xs[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn band_cholesky_matches_cg() {
        let a = laplace_1d(40);
        let xs: Vec<f64> = (0..40).map(|i| 1.0 + (i as f64 * 0.7).cos()).collect();
        let b = a.mul(&xs).unwrap();
        let idx: Vec<usize> = (0..40).collect();
        assert_eq!(BandCholesky::bandwidth(&a, &idx), 1);
        let mut x = vec![0.0; 40];
        BandCholesky::factor(&a, &idx).unwrap().solve_into(&b, &mut x);
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-12);
        }
        let mut mask = vec![true; 40];
        mask[7] = false;
        let mut y = vec![0.0; 40];
        let mut z = vec![0.0; 40];
        solve_reduced(&a, &b, &mask, &mut y, CgOptions::default()).unwrap();
        cg_masked(&a, &b, &mask, &mut z, CgOptions::default()).unwrap();
        for (u, v) in y.iter().zip(&z) {
            assert!((u - v).abs() < 1e-10);
        }
        assert_eq!(y[7], 0.0);
    }

    #[test]
    fn band_cholesky_rejects_indefinite() {
        let a = SparseSymOperator::from_triplets(
            2,
            vec![(0, 0, 1.0), (1, 1, 1.0), (0, 1, 2.0), (1, 0, 2.0)],
        )
        .unwrap();
        assert!(matches!(BandCholesky::factor(&a, &[0, 1]), Err(Error::Solver(_))));
    }

    #[test]
    fn cg_detects_indefinite() {
        let a = SparseSymOperator::from_triplets(
            2,
            vec![(0, 0, 1.0), (1, 1, 1.0), (0, 1, 2.0), (1, 0, 2.0)],
        )
        .unwrap();
        let mut x = vec![0.0; 2];
        let err = cg_masked(&a, &[1.0, -1.0], &[true, true], &mut x, CgOptions::default());
        assert!(matches!(err, Err(Error::Solver(_))));
    }

    #[test]
    fn coordinate_dump() {
        let a = laplace_1d(2);
        let mut buf = Vec::new();
        a.write_coordinate(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 5);
        assert!(s.contains("0 1 -1e0"));
    }
}
