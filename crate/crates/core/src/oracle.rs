//! Minimum-Frobenius-norm interpolating map `W_oracle = X Y^+ = R (A R)^+`.

use crate::error::{Error, Result};
use crate::numkit::{self, derive_seed, Mat};
use crate::problem::{self, ProblemInstance};

/// Relative tolerance for agreement of the two closed forms.
pub const CLOSED_FORM_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// `d x m`.
    pub w: Mat,
    /// `||W Y - X||_F`.
    pub interpolation_residual: f64,
    pub frob_norm: f64,
}

/// Computes `X Y^+` and cross-checks it against `R (A R)^+`.
pub fn oracle_map(inst: &ProblemInstance) -> Result<OracleSolution> {
    let s = inst.s();
    if numkit::rank(&inst.y)? < s {
        return Err(Error::RankDeficient("measurements Y must have rank s".into()));
    }
    let w = &inst.x * numkit::pinv(&inst.y)?;
    let w_alt = &inst.r * numkit::pinv(&(&inst.a * &inst.r))?;
    let disagreement = numkit::rel_frob_err(&w, &w_alt);
    if disagreement > CLOSED_FORM_TOL {
        return Err(Error::Numerical(format!("X Y^+ and R (A R)^+ differ by {disagreement:.3e} (relative)")));
    }
    let interpolation_residual = (&w * &inst.y - &inst.x).norm();
    let frob_norm = w.norm();
    Ok(OracleSolution { w, interpolation_residual, frob_norm })
}

/// The two terms bounding `||W - W_oracle||_op`, alongside the distance itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDistance {
    pub opnorm_distance: f64,
    /// `||W Y - X||_F / sigma_min(X)`.
    pub residual_term: f64,
    /// `||W P_perp(range Y)||_op`.
    pub offsubspace_term: f64,
}

pub fn oracle_distance(w: &Mat, inst: &ProblemInstance) -> Result<OracleDistance> {
    if w.shape() != (inst.d(), inst.m()) {
        return Err(Error::ShapeMismatch(format!("map is {:?}, expected {}x{}", w.shape(), inst.d(), inst.m())));
    }
    let oracle = oracle_map(inst)?;
    let (_, pperp) = numkit::range_projectors(&inst.y)?;
    let sigma_min = numkit::spec_stats(&inst.x)?.sigma_min_nonzero;
    Ok(OracleDistance {
        opnorm_distance: numkit::op_norm(&(w - &oracle.w)),
        residual_term: (w * &inst.y - &inst.x).norm() / sigma_min,
        offsubspace_term: numkit::op_norm(&(w * pperp)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseErrorStats {
    pub mean_error: f64,
    pub p95_error: f64,
}

/// Empirical `||W_oracle (A x + eps) - x||` over unit-norm test signals `x` in `range(R)`.
pub fn oracle_noise_error(inst: &ProblemInstance, sigma: f64, trials: usize, seed: u64) -> Result<NoiseErrorStats> {
    if sigma < 0.0 || trials == 0 {
        return Err(Error::InvalidParameter(format!(
            "need sigma >= 0 and trials >= 1, got sigma={sigma}, trials={trials}"
        )));
    }
    let oracle = oracle_map(inst)?;
    let x = problem::test_signals(&inst.r, trials, derive_seed(seed, "signals", 0))?;
    let mut y = &inst.a * &x;
    if sigma > 0.0 {
        y += numkit::gaussian(inst.m(), trials, sigma, derive_seed(seed, "noise", 0))?;
    }
    let mut errs: Vec<f64> = (&oracle.w * y - x).column_iter().map(|c| c.norm()).collect();
    let mean_error = errs.iter().sum::<f64>() / trials as f64;
    errs.sort_by(f64::total_cmp);
    let idx = ((0.95 * trials as f64).ceil() as usize).clamp(1, trials) - 1;
    Ok(NoiseErrorStats { mean_error, p95_error: errs[idx] })
}
