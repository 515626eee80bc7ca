//! Reconstruction and off-subspace error functionals, test-time robustness,
//! and the weight-decay heuristic.

use crate::error::{Error, Result};
use crate::model::{DeepNet, Predictor};
use crate::numkit::{self, derive_seed, Mat};
use crate::oracle;
use crate::problem::{self, ProblemInstance, UosInstance};

/// How operator norms are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpNormMethod {
    Power { max_iters: usize, tol: f64 },
    Exact,
}

impl Default for OpNormMethod {
    fn default() -> Self {
        OpNormMethod::Power { max_iters: 50, tol: 1e-10 }
    }
}

impl OpNormMethod {
    pub fn eval(&self, m: &Mat) -> f64 {
        match *self {
            OpNormMethod::Power { max_iters, tol } => numkit::op_norm_power(m, max_iters, tol),
            OpNormMethod::Exact => numkit::op_norm(m),
        }
    }
}

/// Metrics recorded at one iteration. Operator-norm entries are `None` for
/// ReLU networks, which have no end-to-end matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub t: usize,
    pub recon_norm: f64,
    pub recon_restricted: f64,
    pub off_sub: Option<f64>,
    pub oracle_dist: Option<f64>,
}

/// `||F Y - X||_F / ||X||_F`.
pub fn recon_error(f: &Mat, x: &Mat, y: &Mat) -> Result<f64> {
    let xn = x.norm();
    if xn == 0.0 {
        return Err(Error::InvalidParameter("reconstruction error of a zero signal matrix".into()));
    }
    check_map(f, x, y)?;
    Ok((f * y - x).norm() / xn)
}

fn check_map(f: &Mat, x: &Mat, y: &Mat) -> Result<()> {
    if f.ncols() != y.nrows() || f.nrows() != x.nrows() || x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch(format!("F is {:?}, X is {:?}, Y is {:?}", f.shape(), x.shape(), y.shape())));
    }
    Ok(())
}

/// `||F A X_r - X_r||_F`, unnormalized.
pub fn recon_error_restricted(f: &Mat, a: &Mat, x_r: &Mat) -> f64 {
    (f * (a * x_r) - x_r).norm()
}

/// [`recon_error_restricted`] divided by `||X_r||_F`.
pub fn recon_error_restricted_normalized(f: &Mat, a: &Mat, x_r: &Mat) -> f64 {
    recon_error_restricted(f, a, x_r) / x_r.norm()
}

/// `||F P_perp(range Y)||_op` by power iteration.
pub fn off_subspace_error(f: &Mat, y: &Mat) -> Result<f64> {
    let (_, pperp) = numkit::range_projectors(y)?;
    Ok(numkit::op_norm_power(&(f * pperp), 1000, 1e-10))
}

/// Precomputed quantities for evaluating a training run.
#[derive(Debug, Clone)]
pub struct MetricsContext {
    pub x: Mat,
    pub y: Mat,
    x_norm: f64,
    /// `A` and `X_r`, when the signal model is a single known subspace.
    restricted: Option<(Mat, Mat)>,
    restricted_full: bool,
    pperp: Option<Mat>,
    w_oracle: Option<Mat>,
    pub op_norm: OpNormMethod,
}

impl MetricsContext {
    /// Context for a single-subspace instance with restricted error on the top-`r` part of `X`.
    pub fn for_instance(inst: &ProblemInstance, r: usize) -> Result<Self> {
        let x_r = if r == inst.s() { inst.x.clone() } else { problem::split_lowrank(&inst.x, r)?.0 };
        let (_, pperp) = numkit::range_projectors(&inst.y)?;
        let w_oracle = oracle::oracle_map(inst)?.w;
        Ok(MetricsContext {
            x: inst.x.clone(),
            y: inst.y.clone(),
            x_norm: inst.x.norm(),
            restricted: Some((inst.a.clone(), x_r)),
            restricted_full: r == inst.s(),
            pperp: Some(pperp),
            w_oracle: Some(w_oracle),
            op_norm: OpNormMethod::default(),
        })
    }

    /// Context for plain `(X, Y)` data, e.g. a union of subspaces.
    pub fn for_data(x: Mat, y: Mat) -> Result<Self> {
        let x_norm = x.norm();
        if x_norm == 0.0 {
            return Err(Error::InvalidParameter("zero signal matrix".into()));
        }
        let (_, pperp) = numkit::range_projectors(&y)?;
        Ok(MetricsContext {
            x,
            y,
            x_norm,
            restricted: None,
            restricted_full: true,
            pperp: Some(pperp),
            w_oracle: None,
            op_norm: OpNormMethod::default(),
        })
    }

    pub fn for_uos(inst: &UosInstance) -> Result<Self> {
        MetricsContext::for_data(inst.x.clone(), inst.y.clone())
    }

    pub fn with_op_norm(mut self, method: OpNormMethod) -> Self {
        self.op_norm = method;
        self
    }

    /// Whether the restricted error coincides with `||F Y - X||_F` (`r = s`).
    pub fn restricted_is_full(&self) -> bool {
        self.restricted_full
    }

    /// `||X_r||_F`, or `||X||_F` without a subspace model.
    pub fn restricted_norm(&self) -> f64 {
        self.restricted.as_ref().map(|(_, xr)| xr.norm()).unwrap_or(self.x_norm)
    }

    pub fn evaluate(&self, t: usize, net: &DeepNet) -> Result<MetricRecord> {
        if net.is_relu() {
            let pred = net.forward(&self.y)?;
            let recon = (pred - &self.x).norm();
            let recon_restricted = match &self.restricted {
                Some((a, xr)) => (net.forward(&(a * xr))? - xr).norm(),
                None => recon,
            };
            return Ok(MetricRecord {
                t,
                recon_norm: recon / self.x_norm,
                recon_restricted,
                off_sub: None,
                oracle_dist: None,
            });
        }
        let f = net.end_to_end()?.f;
        Ok(self.evaluate_map(t, &f))
    }

    pub fn evaluate_map(&self, t: usize, f: &Mat) -> MetricRecord {
        let recon = (f * &self.y - &self.x).norm();
        let recon_restricted = match &self.restricted {
            Some((a, xr)) => recon_error_restricted(f, a, xr),
            None => recon,
        };
        let off_sub = self.pperp.as_ref().map(|p| self.op_norm.eval(&(f * p)));
        let oracle_dist = self.w_oracle.as_ref().map(|w| self.op_norm.eval(&(f - w)));
        MetricRecord { t, recon_norm: recon / self.x_norm, recon_restricted, off_sub, oracle_dist }
    }
}

/// Where test signals come from.
#[derive(Debug, Clone, Copy)]
pub enum SignalModel<'a> {
    Subspace(&'a Mat),
    Union(&'a [Mat]),
}

impl SignalModel<'_> {
    pub fn dim(&self) -> usize {
        match self {
            SignalModel::Subspace(r) => r.nrows(),
            SignalModel::Union(bases) => bases[0].nrows(),
        }
    }

    /// `count` unit-norm test signals.
    pub fn draw(&self, count: usize, seed: u64) -> Result<Mat> {
        match self {
            SignalModel::Subspace(r) => problem::test_signals(r, count, seed),
            SignalModel::Union(bases) => {
                use rand::Rng;
                if bases.is_empty() {
                    return Err(Error::InvalidParameter("empty union of subspaces".into()));
                }
                let mut rng = numkit::rng(derive_seed(seed, "choice", 0));
                let mut out = Mat::zeros(self.dim(), count);
                for i in 0..count {
                    let j = rng.random_range(0..bases.len());
                    let x = problem::test_signals(&bases[j], 1, derive_seed(seed, "signal", i as u64))?;
                    out.set_column(i, &x.column(0));
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessRow {
    pub sigma: f64,
    /// Mean of `||x_hat - x||`.
    pub mean_error: f64,
    /// Standard deviation of `||x_hat - x||`.
    pub std_error: f64,
    /// Mean of `||x_hat - x|| / ||x||`.
    pub mean_rel_error: f64,
}

/// Test-time error `||f(A x + eps) - x||` with `eps ~ N(0, sigma^2 I)`.
///
/// The same signals and unit noise draws are reused for every `sigma`
/// (only the noise scale changes), so rows are directly comparable.
pub fn test_robustness<P: Predictor + ?Sized>(
    predictor: &P,
    a: &Mat,
    model: SignalModel<'_>,
    sigma_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    if sigma_grid.is_empty() || trials == 0 {
        return Err(Error::InvalidParameter("robustness needs a nonempty sigma grid and trials >= 1".into()));
    }
    let x = model.draw(trials, derive_seed(seed, "test-signals", 0))?;
    let noise = numkit::gaussian(a.nrows(), trials, 1.0, derive_seed(seed, "test-noise", 0))?;
    let clean = a * &x;
    let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    sigma_grid
        .iter()
        .map(|&sigma| {
            if sigma < 0.0 {
                return Err(Error::InvalidParameter(format!("negative noise level {sigma}")));
            }
            let y = &clean + &noise * sigma;
            let errs: Vec<f64> = (predictor.predict(&y)? - &x).column_iter().map(|c| c.norm()).collect();
            let n = trials as f64;
            let mean_error = errs.iter().sum::<f64>() / n;
            let var =
                if trials > 1 { errs.iter().map(|e| (e - mean_error).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            let mean_rel_error = errs.iter().zip(&norms).map(|(e, xn)| e / xn).sum::<f64>() / n;
            Ok(RobustnessRow { sigma, mean_error, std_error: var.sqrt(), mean_rel_error })
        })
        .collect()
}

/// Heuristic weight decay `sigma_min^2(X) sqrt(m) / (d_w^c3 kappa(X) sqrt(d sr(X)))`.
pub fn lambda_recommendation(inst: &ProblemInstance, width: usize, c3: f64) -> Result<f64> {
    if !(c3 > 0.0) {
        return Err(Error::InvalidParameter(format!("C3 must be positive, got {c3}")));
    }
    let st = numkit::spec_stats(&inst.x)?;
    let (m, d) = (inst.m() as f64, inst.d() as f64);
    Ok(st.sigma_min_nonzero.powi(2) * m.sqrt() / ((width as f64).powf(c3) * st.kappa * (d * st.stable_rank).sqrt()))
}
