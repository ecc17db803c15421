//! Singular value decomposition, hard thresholding of singular values and
//! the Hankel low-rank projection `k -> unlift(Th(lift(k)))`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{dim_err, param_err, HkgmError, Result};
use crate::hankel::{lift, unlift, HankelMatrix};
use crate::matrix::CMatrix;
use crate::volume::KSpaceVolume;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `H = U diag(S) V†` with `l = min(m, n)` components.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// `m x l`, orthonormal columns.
    pub u: CMatrix,
    /// Non-increasing, length `l`.
    pub s: Vec<f64>,
    /// `n x l`, orthonormal columns.
    pub v: CMatrix,
}

impl SvdFactors {
    /// `U diag(S) V†`
    pub fn reconstruct(&self) -> CMatrix {
        reassemble(&self.u, &self.s, &self.v)
    }
}

fn reassemble(u: &CMatrix, s: &[f64], v: &CMatrix) -> CMatrix {
    let (m, n) = (u.rows(), v.rows());
    let mut out = CMatrix::zeros(m, n);
    for (j, &sj) in s.iter().enumerate() {
        if sj == 0.0 {
            continue;
        }
        for r in 0..m {
            let a = u[(r, j)] * sj;
            if a.re == 0.0 && a.im == 0.0 {
                continue;
            }
            let row = out.row_mut(r);
            for (c, o) in row.iter_mut().enumerate() {
                *o += a * v[(c, j)].conj();
            }
        }
    }
    out
}

/// Column-major working copy used by the one-sided Jacobi iteration.
struct Columns {
    len: usize,
    data: Vec<Complex64>,
}

impl Columns {
    fn col(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    fn pair_mut(&mut self, p: usize, q: usize) -> (&mut [Complex64], &mut [Complex64]) {
        debug_assert!(p < q);
        let (lo, hi) = self.data.split_at_mut(q * self.len);
        (
            &mut lo[p * self.len..(p + 1) * self.len],
            &mut hi[..self.len],
        )
    }
}

/// Applies `[gp, gq] <- [c gp - s e^{-iφ} gq, s gp + c e^{-iφ} gq]`.
fn rotate(gp: &mut [Complex64], gq: &mut [Complex64], c: f64, s: f64, phase: Complex64) {
    for (a, b) in gp.iter_mut().zip(gq.iter_mut()) {
        let bq = *b * phase;
        let ap = *a;
        *a = ap * c - bq * s;
        *b = ap * s + bq * c;
    }
}

/// One-sided (Hestenes) Jacobi SVD of a matrix with at least as many rows
/// as columns.
fn jacobi_tall(a: &CMatrix) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    let mut g = Columns {
        len: m,
        data: a
            .adjoint()
            .into_vec()
            .into_iter()
            .map(|z| z.conj())
            .collect(),
    };
    let mut v = Columns {
        len: n,
        data: CMatrix::identity(n).into_vec(),
    };
    let tol = 4.0 * f64::EPSILON;

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            let off = off_diagonal_ratio(&g, n);
            return Err(HkgmError::Numerical(format!(
                "Jacobi SVD of a {m}x{n} matrix did not converge in {MAX_SWEEPS} sweeps \
                 (largest normalized column inner product {off:.3e}, Frobenius norm {:.3e})",
                a.frobenius_norm()
            )));
        }
        sweeps += 1;
        converged = true;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (gp, gq) = (g.col(p), g.col(q));
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = Complex64::new(0.0, 0.0);
                    for (x, y) in gp.iter().zip(gq) {
                        alpha += x.norm_sqr();
                        beta += y.norm_sqr();
                        gamma += x.conj() * y;
                    }
                    (alpha, beta, gamma)
                };
                let mag = gamma.norm();
                if mag == 0.0 || mag <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * mag);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let phase = (gamma / mag).conj();
                let (gp, gq) = g.pair_mut(p, q);
                rotate(gp, gq, c, s, phase);
                let (vp, vq) = v.pair_mut(p, q);
                rotate(vp, vq, c, s, phase);
            }
        }
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| g.col(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let scale = norms.iter().copied().fold(0.0, f64::max);
    let floor = scale * f64::EPSILON * (m as f64);
    let mut u = CMatrix::zeros(m, n);
    let mut vv = CMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        if sigma > floor && sigma > 0.0 {
            for (r, z) in g.col(src).iter().enumerate() {
                u[(r, dst)] = z / sigma;
            }
            s.push(sigma);
        } else {
            missing.push(dst);
            s.push(if sigma > 0.0 { sigma } else { 0.0 });
        }
        for (r, z) in v.col(src).iter().enumerate() {
            vv[(r, dst)] = *z;
        }
    }
    complete_basis(&mut u, &missing);
    Ok(SvdFactors { u, s, v: vv })
}

fn off_diagonal_ratio(g: &Columns, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            let (gp, gq) = (g.col(p), g.col(q));
            let a: f64 = gp.iter().map(|z| z.norm_sqr()).sum();
            let b: f64 = gq.iter().map(|z| z.norm_sqr()).sum();
            let c: Complex64 = gp.iter().zip(gq).map(|(x, y)| x.conj() * y).sum();
            if a > 0.0 && b > 0.0 {
                worst = worst.max(c.norm() / (a * b).sqrt());
            }
        }
    }
    worst
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column (modified Gram-Schmidt over the standard basis).
fn complete_basis(u: &mut CMatrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let (m, l) = u.shape();
    let mut filled: Vec<bool> = (0..l).map(|j| !missing.contains(&j)).collect();
    let mut candidate = 0;
    for &j in missing {
        loop {
            assert!(candidate < m, "ran out of basis candidates");
            let mut x = vec![Complex64::new(0.0, 0.0); m];
            x[candidate] = Complex64::new(1.0, 0.0);
            candidate += 1;
            for _ in 0..2 {
                for k in (0..l).filter(|&k| filled[k]) {
                    let dot: Complex64 = (0..m).map(|r| u[(r, k)].conj() * x[r]).sum();
                    for (r, xr) in x.iter_mut().enumerate() {
                        *xr -= u[(r, k)] * dot;
                    }
                }
            }
            let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for (r, xr) in x.iter().enumerate() {
                    u[(r, j)] = xr / norm;
                }
                filled[j] = true;
                break;
            }
        }
    }
}

/// Thin SVD by one-sided Jacobi rotations. Wide matrices are handled
/// through their adjoint.
pub fn svd(h: &CMatrix) -> Result<SvdFactors> {
    if !h.is_finite() {
        return Err(HkgmError::Numerical(
            "SVD input contains non-finite entries".into(),
        ));
    }
    if h.rows() == 0 || h.cols() == 0 {
        return dim_err("SVD of an empty matrix");
    }
    if h.rows() >= h.cols() {
        jacobi_tall(h)
    } else {
        let f = jacobi_tall(&h.adjoint())?;
        Ok(SvdFactors {
            u: f.v,
            s: f.s,
            v: f.u,
        })
    }
}

/// How singular values are cut.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdPolicy {
    /// Keep `σ ≥ r`.
    Absolute(f64),
    /// Keep `σ ≥ r · σ_max`.
    Relative(f64),
    /// Keep the `k` largest.
    FixedRank(usize),
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdPolicy::Absolute(r) | ThresholdPolicy::Relative(r)
                if !(r >= 0.0 && r.is_finite()) =>
            {
                param_err(format!(
                    "threshold must be finite and non-negative, got {r}"
                ))
            }
            ThresholdPolicy::FixedRank(0) => param_err("rank budget must be positive"),
            _ => Ok(()),
        }
    }

    /// Number of leading singular values retained from a non-increasing list.
    pub fn kept(&self, s: &[f64]) -> usize {
        match *self {
            ThresholdPolicy::Absolute(r) => s.iter().take_while(|&&v| v >= r).count(),
            ThresholdPolicy::Relative(r) => {
                let cut = r * s.first().copied().unwrap_or(0.0);
                s.iter().take_while(|&&v| v >= cut).count()
            }
            ThresholdPolicy::FixedRank(k) => k.min(s.len()),
        }
    }
}

/// `U Th(diag(S)) V†`
pub fn hard_threshold(f: &SvdFactors, policy: ThresholdPolicy) -> CMatrix {
    let keep = policy.kept(&f.s);
    let s: Vec<f64> =
        f.s.iter()
            .enumerate()
            .map(|(i, &v)| if i < keep { v } else { 0.0 })
            .collect();
    reassemble(&f.u, &s, &f.v)
}

/// Hermitian Gram matrix `A A†` of the rows of `a`.
fn row_gram(a: &CMatrix) -> DMatrix<Complex64> {
    use rayon::prelude::*;
    let m = a.rows();
    let rows: Vec<Vec<Complex64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let ri = a.row(i);
            (0..=i)
                .map(|j| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (x, y) in ri.iter().zip(a.row(j)) {
                        acc += x * y.conj();
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let mut g = DMatrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    g
}

/// Singular values and the retained left singular subspace, obtained from
/// the eigendecomposition of `A A†`.
struct GramProjection {
    s: Vec<f64>,
    basis: CMatrix,
}

fn gram_projection(a: &CMatrix, policy: ThresholdPolicy) -> Result<GramProjection> {
    let m = a.rows();
    let eig = SymmetricEigen::try_new(row_gram(a), f64::EPSILON, 0).ok_or_else(|| {
        HkgmError::Numerical(format!(
            "eigendecomposition of the {m}x{m} Gram matrix did not converge (Frobenius norm {:.3e})",
            a.frobenius_norm()
        ))
    })?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let s: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .collect();
    let keep = policy.kept(&s);
    let basis = CMatrix::from_fn(m, keep, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(GramProjection { s, basis })
}

/// Projects `a` onto the span of the first `k` columns of `basis`, i.e.
/// `Q Q† a`.
fn project_rows(a: &CMatrix, basis: &CMatrix) -> CMatrix {
    let k = basis.cols();
    if k == 0 {
        return CMatrix::zeros(a.rows(), a.cols());
    }
    let coeffs = basis.adjoint().matmul(a).expect("shapes agree");
    basis.matmul(&coeffs).expect("shapes agree")
}

/// Hard thresholding of a matrix's singular values without forming the full
/// SVD: the retained left (or right, for tall inputs) singular subspace is
/// taken from the Gram matrix of the shorter side and the matrix is
/// projected onto it. Equal to `hard_threshold(&svd(a)?, policy)` up to
/// rounding.
pub fn threshold_matrix(a: &CMatrix, policy: ThresholdPolicy) -> Result<CMatrix> {
    policy.validate()?;
    if !a.is_finite() {
        return Err(HkgmError::Numerical(
            "threshold input contains non-finite entries".into(),
        ));
    }
    let short = a.rows().min(a.cols());
    if a.rows() <= a.cols() {
        let p = gram_projection(a, policy)?;
        if p.basis.cols() == short {
            return Ok(a.clone());
        }
        Ok(project_rows(a, &p.basis))
    } else {
        let at = a.adjoint();
        let p = gram_projection(&at, policy)?;
        if p.basis.cols() == short {
            return Ok(a.clone());
        }
        Ok(project_rows(&at, &p.basis).adjoint())
    }
}

/// Singular values via the Gram route (non-increasing).
pub fn singular_values(a: &CMatrix) -> Result<Vec<f64>> {
    let src = if a.rows() <= a.cols() {
        a.clone()
    } else {
        a.adjoint()
    };
    Ok(gram_projection(&src, ThresholdPolicy::FixedRank(1))?.s)
}

/// `unlift(Th(lift(k, w)))`
pub fn lowrank_project(
    k: &KSpaceVolume,
    w: usize,
    policy: ThresholdPolicy,
) -> Result<KSpaceVolume> {
    let h = lift(k, w)?;
    let (nx, ny, nc) = h.source_dims();
    let t = threshold_matrix(h.matrix(), policy)?;
    Ok(unlift(&HankelMatrix::from_matrix(t, w, nx, ny, nc)?))
}
