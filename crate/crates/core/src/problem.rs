//! Synthetic linear inverse problems with signals on a low-dimensional subspace.
//!
//! A single-subspace instance is `Y = A X` with `X = R Z`, where `A` is a
//! scaled Gaussian measurement matrix (`m x d`), `R` an orthonormal basis
//! (`d x s`) and `Z` a coefficient matrix (`s x n`) with a prescribed
//! condition number. A union-of-subspaces instance draws `k` bases and
//! assigns every sample to one of them uniformly at random.

use crate::error::{Error, Result};
use crate::numkit::{self, derive_seed, econ_svd, Mat};

/// Tolerance used to validate orthonormality of a supplied basis.
const ORTHO_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    /// Measurement matrix, `m x d`.
    pub a: Mat,
    /// Orthonormal subspace basis, `d x s`.
    pub r: Mat,
    /// Subspace coefficients, `s x n`.
    pub z: Mat,
    /// Signals `R Z`, `d x n`.
    pub x: Mat,
    /// Measurements `A X`, `m x n`.
    pub y: Mat,
    pub kappa_target: f64,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }
    pub fn d(&self) -> usize {
        self.a.ncols()
    }
    pub fn s(&self) -> usize {
        self.r.ncols()
    }
    pub fn n(&self) -> usize {
        self.z.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct UosInstance {
    pub bases: Vec<Mat>,
    /// Zero-based index into `bases` for every sample.
    pub assignments: Vec<usize>,
    pub a: Mat,
    pub z: Mat,
    pub x: Mat,
    pub y: Mat,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RipReport {
    pub sigma_min_ar: f64,
    pub sigma_max_ar: f64,
    pub delta_effective: f64,
    pub passes: bool,
}

/// `A = G / sqrt(m)` with `G` standard Gaussian, `m x d`.
pub fn gen_measurement(m: usize, d: usize, seed: u64) -> Result<Mat> {
    if m == 0 || m > d {
        return Err(Error::InvalidDimension(format!("measurement matrix needs 1 <= m <= d, got m={m}, d={d}")));
    }
    Ok(numkit::gaussian(m, d, 1.0, seed)? / (m as f64).sqrt())
}

/// Orthogonal factor of the reduced QR of a `d x s` Gaussian matrix.
pub fn gen_basis(d: usize, s: usize, seed: u64) -> Result<Mat> {
    if s == 0 || s > d {
        return Err(Error::InvalidDimension(format!("basis needs 1 <= s <= d, got s={s}, d={d}")));
    }
    let g = numkit::gaussian(d, s, 1.0, seed)?;
    Ok(numkit::orthonormal_factor(&g))
}

/// `s` singular values evenly spaced from 1 down to `1/kappa`.
pub fn coefficient_spectrum(s: usize, kappa: f64) -> Vec<f64> {
    if s == 1 {
        return vec![1.0];
    }
    let lo = 1.0 / kappa;
    (0..s).map(|i| 1.0 - (1.0 - lo) * i as f64 / (s - 1) as f64).collect()
}

/// Coefficients `Z = U diag(sigma) V^T` with random orthonormal `U` (`s x s`),
/// `V` (`n x s`) and singular values on a uniform grid over `[1/kappa, 1]`.
pub fn gen_coefficients(s: usize, n: usize, kappa: f64, seed: u64) -> Result<Mat> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("kappa must be >= 1, got {kappa}")));
    }
    if s == 0 || n < s {
        return Err(Error::InvalidDimension(format!("coefficients need 1 <= s <= n, got s={s}, n={n}")));
    }
    let u = numkit::orthonormal_factor(&numkit::gaussian(s, s, 1.0, derive_seed(seed, "left", 0))?);
    let mut v = numkit::orthonormal_factor(&numkit::gaussian(n, s, 1.0, derive_seed(seed, "right", 0))?);
    for (j, sigma) in coefficient_spectrum(s, kappa).into_iter().enumerate() {
        v.column_mut(j).scale_mut(sigma);
    }
    Ok(u * v.transpose())
}

fn check_orthonormal(r: &Mat) -> Result<()> {
    let gram = r.transpose() * r;
    let err = (gram - Mat::identity(r.ncols(), r.ncols())).amax();
    if err > ORTHO_TOL {
        return Err(Error::InvalidParameter(format!(
            "basis columns are not orthonormal (max |R^T R - I| = {err:.3e})"
        )));
    }
    Ok(())
}

/// Builds `X = R Z`, `Y = A X` and validates the instance invariants.
pub fn assemble(a: Mat, r: Mat, z: Mat) -> Result<ProblemInstance> {
    assemble_with_meta(a, r, z, f64::NAN, 0)
}

pub fn assemble_with_meta(a: Mat, r: Mat, z: Mat, kappa_target: f64, seed: u64) -> Result<ProblemInstance> {
    let (m, d) = a.shape();
    let (dr, s) = r.shape();
    let (sz, n) = z.shape();
    if dr != d || sz != s {
        return Err(Error::ShapeMismatch(format!("A is {m}x{d}, R is {dr}x{s}, Z is {sz}x{n}")));
    }
    if m > d {
        return Err(Error::InvalidDimension(format!("need m <= d, got m={m}, d={d}")));
    }
    if s > m.min(n) {
        return Err(Error::InvalidDimension(format!("need s <= min(m, n), got s={s}, m={m}, n={n}")));
    }
    check_orthonormal(&r)?;
    if numkit::rank(&z)? < s {
        return Err(Error::RankDeficient("coefficient matrix Z must have rank s".into()));
    }
    let x = &r * &z;
    let y = &a * &x;
    Ok(ProblemInstance { a, r, z, x, y, kappa_target, seed })
}

/// Draws a complete single-subspace instance; every component gets its own child seed.
pub fn generate(m: usize, d: usize, s: usize, n: usize, kappa: f64, seed: u64) -> Result<ProblemInstance> {
    let a = gen_measurement(m, d, derive_seed(seed, "measurement", 0))?;
    let r = gen_basis(d, s, derive_seed(seed, "basis", 0))?;
    let z = gen_coefficients(s, n, kappa, derive_seed(seed, "coefficients", 0))?;
    assemble_with_meta(a, r, z, kappa, seed)
}

/// Restricted isometry check on `range(R)` via the singular values of `A R`.
pub fn rip_check(a: &Mat, r: &Mat, delta: f64) -> Result<RipReport> {
    let svd = econ_svd(&(a * r))?;
    let sigma_max_ar = svd.sigma_max();
    let sigma_min_ar = *svd.s.last().unwrap_or(&0.0);
    let delta_effective = (1.0 - sigma_min_ar * sigma_min_ar).max(sigma_max_ar * sigma_max_ar - 1.0);
    Ok(RipReport { sigma_min_ar, sigma_max_ar, delta_effective, passes: delta_effective <= delta })
}

/// Worst-case restricted isometry report over all bases of a union of subspaces.
pub fn rip_check_uos(inst: &UosInstance, delta: f64) -> Result<RipReport> {
    let mut worst: Option<RipReport> = None;
    for basis in &inst.bases {
        let rep = rip_check(&inst.a, basis, delta)?;
        worst = Some(match worst {
            None => rep,
            Some(w) => {
                let sigma_min_ar = w.sigma_min_ar.min(rep.sigma_min_ar);
                let sigma_max_ar = w.sigma_max_ar.max(rep.sigma_max_ar);
                let delta_effective = w.delta_effective.max(rep.delta_effective);
                RipReport { sigma_min_ar, sigma_max_ar, delta_effective, passes: delta_effective <= delta }
            }
        });
    }
    worst.ok_or_else(|| Error::InvalidParameter("union of subspaces has no bases".into()))
}

/// Splits `X` into its best rank-`r` approximation and the remainder.
pub fn split_lowrank(x: &Mat, r: usize) -> Result<(Mat, Mat)> {
    let svd = econ_svd(x)?;
    let rank = svd.rank(numkit::default_rank_tol(x));
    if r == 0 || r > rank {
        return Err(Error::InvalidParameter(format!("split rank must satisfy 1 <= r <= rank(X) = {rank}, got {r}")));
    }
    let mut ur = svd.u.columns(0, r).into_owned();
    for j in 0..r {
        ur.column_mut(j).scale_mut(svd.s[j]);
    }
    let x_r = ur * svd.v.columns(0, r).transpose();
    let x_small = x - &x_r;
    Ok((x_r, x_small))
}

/// Union-of-subspaces instance: `k` independent bases, one shared coefficient
/// matrix, and a uniformly random basis per sample.
pub fn gen_uos(m: usize, d: usize, s: usize, k: usize, n: usize, kappa: f64, seed: u64) -> Result<UosInstance> {
    use rand::Rng;
    if k == 0 {
        return Err(Error::InvalidParameter("union of subspaces needs k >= 1".into()));
    }
    let a = gen_measurement(m, d, derive_seed(seed, "measurement", 0))?;
    let bases = (0..k).map(|j| gen_basis(d, s, derive_seed(seed, "basis", j as u64))).collect::<Result<Vec<_>>>()?;
    let z = gen_coefficients(s, n, kappa, derive_seed(seed, "coefficients", 0))?;
    let mut rng = numkit::rng(derive_seed(seed, "assignment", 0));
    let assignments: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut x = Mat::zeros(d, n);
    for (i, &j) in assignments.iter().enumerate() {
        x.set_column(i, &(&bases[j] * z.column(i)));
    }
    let y = &a * &x;
    Ok(UosInstance { bases, assignments, a, z, x, y, seed })
}

/// Replaces `n` samples by `s` samples that induce the same training trajectory:
/// `X~ = R U_Z Sigma_Z` from the thin SVD of `Z`.
pub fn reduce_samples(inst: &ProblemInstance) -> Result<ProblemInstance> {
    let s = inst.s();
    let svd = econ_svd(&inst.z)?;
    if svd.rank(numkit::default_rank_tol(&inst.z)) < s {
        return Err(Error::RankDeficient("sample reduction needs rank(Z) = s".into()));
    }
    let mut z = svd.u.columns(0, s).into_owned();
    for j in 0..s {
        z.column_mut(j).scale_mut(svd.s[j]);
    }
    assemble_with_meta(inst.a.clone(), inst.r.clone(), z, inst.kappa_target, inst.seed)
}

/// Unit-norm test signals in `range(basis)`, drawn from perfectly conditioned coefficients.
pub fn test_signals(basis: &Mat, count: usize, seed: u64) -> Result<Mat> {
    let s = basis.ncols();
    let z = gen_coefficients(s, count.max(s), 1.0, seed)?;
    let mut x = basis * z.columns(0, count);
    for mut col in x.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    Ok(x)
}
