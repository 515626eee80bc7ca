//! Dense matrix primitives shared by every other module.
//!
//! All routines work on [`Mat`] (a column-major `nalgebra` matrix of `f64`)
//! and are pure functions of their inputs. Random matrices are generated
//! from an explicit 64-bit seed and filled in row-major order, so a given
//! `(rows, cols, seed)` triple always produces the same entries.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Rng = ChaCha8Rng;

/// Fresh deterministic generator for `seed`.
pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a consumer identified by `(tag, index)`.
///
/// Seeds are derived by hashing rather than by drawing from a shared stream,
/// so adding a new consumer never shifts the seeds handed to existing ones.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag, then mixed with the master seed and index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(splitmix64(h) ^ master) ^ index)
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidDimension(format!("matrix dimensions must be positive, got {rows}x{cols}")));
    }
    Ok(())
}

fn check_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains NaN or infinite entries")))
    }
}

/// Draws a matrix with i.i.d. `N(0, std^2)` entries from an existing generator.
pub fn gaussian_from(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let z: f64 = StandardNormal.sample(rng);
            m[(i, j)] = std * z;
        }
    }
    m
}

/// Matrix with i.i.d. `N(0, std^2)` entries, reproducible from `seed`.
pub fn gaussian(rows: usize, cols: usize, std: f64, seed: u64) -> Result<Mat> {
    check_dims(rows, cols)?;
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::InvalidParameter(format!("standard deviation must be positive, got {std}")));
    }
    Ok(gaussian_from(rows, cols, std, &mut rng(seed)))
}

/// Thin singular value decomposition `M = U diag(s) V^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Mat,
    /// Singular values, nonincreasing.
    pub s: Vec<f64>,
    /// `cols x k` with orthonormal columns.
    pub v: Mat,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Mat {
        let k = self.s.len();
        let mut us = self.u.clone();
        for j in 0..k {
            us.column_mut(j).scale_mut(self.s[j]);
        }
        us * self.v.transpose()
    }

    pub fn sigma_max(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }

    /// Number of singular values above `rel_tol * sigma_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let cutoff = rel_tol * self.sigma_max();
        if self.sigma_max() == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&x| x > cutoff).count()
    }
}

/// Economy SVD with singular values sorted in nonincreasing order.
pub fn econ_svd(m: &Mat) -> Result<SvdResult> {
    check_dims(m.nrows(), m.ncols())?;
    check_finite(m, "svd input")?;
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = fm.thin_svd().map_err(|e| Error::NonFinite(format!("svd did not converge: {e:?}")))?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let k = m.nrows().min(m.ncols());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| fs[b].total_cmp(&fs[a]));
    let su = Mat::from_fn(m.nrows(), k, |i, j| fu[(i, order[j])]);
    let sv = Mat::from_fn(m.ncols(), k, |i, j| fv[(i, order[j])]);
    let s = order.iter().map(|&j| fs[j].max(0.0)).collect();
    Ok(SvdResult { u: su, s, v: sv })
}

/// Default relative rank cutoff `max(rows, cols) * eps`.
pub fn default_rank_tol(m: &Mat) -> f64 {
    m.nrows().max(m.ncols()) as f64 * f64::EPSILON
}

/// Moore-Penrose pseudoinverse with the default rank cutoff.
pub fn pinv(m: &Mat) -> Result<Mat> {
    pinv_with_tol(m, default_rank_tol(m))
}

/// Moore-Penrose pseudoinverse; singular values `<= rank_tol * sigma_max` are
/// treated as zero. The all-zero matrix maps to the all-zero transpose shape.
pub fn pinv_with_tol(m: &Mat, rank_tol: f64) -> Result<Mat> {
    if rank_tol < 0.0 {
        return Err(Error::InvalidParameter(format!("rank_tol must be >= 0, got {rank_tol}")));
    }
    let svd = econ_svd(m)?;
    let cutoff = rank_tol * svd.sigma_max();
    let mut out = Mat::zeros(m.ncols(), m.nrows());
    for (j, &sigma) in svd.s.iter().enumerate() {
        if sigma > cutoff && sigma > 0.0 {
            let vj = svd.v.column(j);
            let uj = svd.u.column(j);
            out.ger(1.0 / sigma, &vj, &uj, 1.0);
        }
    }
    Ok(out)
}

/// Orthogonal projector onto `range(M)` and its complement, both `rows x rows`.
pub fn range_projectors(m: &Mat) -> Result<(Mat, Mat)> {
    range_projectors_with_tol(m, default_rank_tol(m))
}

pub fn range_projectors_with_tol(m: &Mat, rank_tol: f64) -> Result<(Mat, Mat)> {
    if rank_tol < 0.0 {
        return Err(Error::InvalidParameter(format!("rank_tol must be >= 0, got {rank_tol}")));
    }
    let svd = econ_svd(m)?;
    let r = svd.rank(rank_tol);
    let ur = svd.u.columns(0, r);
    let p = ur * ur.transpose();
    let pperp = Mat::identity(m.nrows(), m.nrows()) - &p;
    Ok((p, pperp))
}

/// Orthonormal basis of `range(M)` (the leading left singular vectors).
pub fn range_basis(m: &Mat) -> Result<Mat> {
    let svd = econ_svd(m)?;
    let r = svd.rank(default_rank_tol(m));
    Ok(svd.u.columns(0, r).into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralStats {
    pub op_norm: f64,
    pub sigma_min_nonzero: f64,
    pub kappa: f64,
    pub stable_rank: f64,
    pub frob_norm: f64,
}

pub fn spec_stats(m: &Mat) -> Result<SpectralStats> {
    let svd = econ_svd(m)?;
    let op_norm = svd.sigma_max();
    if op_norm == 0.0 {
        return Err(Error::InvalidParameter("spectral statistics of a zero matrix".into()));
    }
    let r = svd.rank(default_rank_tol(m));
    let sigma_min_nonzero = svd.s[r - 1];
    let frob_norm = m.norm();
    Ok(SpectralStats {
        op_norm,
        sigma_min_nonzero,
        kappa: op_norm / sigma_min_nonzero,
        stable_rank: frob_norm * frob_norm / (op_norm * op_norm),
        frob_norm,
    })
}

/// Numerical rank with the default cutoff.
pub fn rank(m: &Mat) -> Result<usize> {
    Ok(econ_svd(m)?.rank(default_rank_tol(m)))
}

/// Largest singular value by power iteration on `M^T M`.
///
/// Starts from a fixed pseudo-random vector so the estimate is deterministic.
/// Stops after `max_iters` or once the relative change drops below `tol`.
pub fn op_norm_power(m: &Mat, max_iters: usize, tol: f64) -> f64 {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let mut r = rng(0x005e_ed0f_70e1);
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut r));
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..max_iters.max(1) {
        let mv = m * &v;
        let next = mv.norm();
        if next == 0.0 {
            return 0.0;
        }
        let w = m.tr_mul(&mv);
        let wn = w.norm();
        if wn == 0.0 {
            return next;
        }
        v = w / wn;
        let converged = (next - sigma).abs() <= tol * next;
        sigma = next;
        if converged {
            break;
        }
    }
    (m * &v).norm().max(sigma)
}

/// Exact operator norm via SVD (0 for an empty or zero matrix).
pub fn op_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    econ_svd(m).map(|s| s.sigma_max()).unwrap_or(f64::NAN)
}

/// `||a - b||_F / ||b||_F`, falling back to the absolute error when `b = 0`.
pub fn rel_frob_err(a: &Mat, b: &Mat) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Reduced QR orthogonal factor of a tall matrix.
pub fn orthonormal_factor(m: &Mat) -> Mat {
    m.clone().qr().q()
}
