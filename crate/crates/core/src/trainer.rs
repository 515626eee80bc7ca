//! Full-batch gradient descent with weight decay on deep (linear or
//! linear+ReLU) networks, closed-form gradients, and theory-driven
//! hyperparameters.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::metrics::{MetricRecord, MetricsContext};
use crate::model::DeepNet;
use crate::numkit::{self, Mat};
use crate::problem::{self, ProblemInstance};

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub eta: f64,
    pub lambda: f64,
    /// Accuracy parameter; enables stopping-time detection when set.
    pub gamma: Option<f64>,
    /// Number of GD steps `T`.
    pub iters: usize,
    /// Constant in the stopping-time threshold `C1 gamma ||X_r|| / L`.
    pub c1: f64,
    pub log_stride: usize,
    /// Step-size prefactor `k` the step size was derived from, if any.
    pub prefactor: Option<f64>,
}

impl HyperParams {
    pub fn new(eta: f64, lambda: f64, iters: usize) -> Self {
        HyperParams { eta, lambda, gamma: None, iters, c1: 1.0, log_stride: 1, prefactor: None }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.log_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("step size must be finite and >= 0, got {}", self.eta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("weight decay must be finite and >= 0, got {}", self.lambda));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return bad(format!("gamma must lie in (0, 1], got {g}"));
            }
        }
        if self.iters == 0 {
            return bad("iteration count must be >= 1".into());
        }
        if !(self.c1 > 0.0) {
            return bad(format!("C1 must be positive, got {}", self.c1));
        }
        if self.log_stride == 0 {
            return bad("log stride must be >= 1".into());
        }
        Ok(())
    }
}

/// `eta = k m / (L sigma_max^2(X))`.
pub fn eta_from_prefactor(k: f64, inst: &ProblemInstance, depth: usize) -> Result<f64> {
    let st = numkit::spec_stats(&inst.x)?;
    Ok(k * inst.m() as f64 / (depth as f64 * st.op_norm.powi(2)))
}

/// Accuracy parameter implied by a weight decay: `lambda / (sigma_min^2(X) sqrt(m/d))`.
pub fn gamma_from_lambda(inst: &ProblemInstance, lambda: f64) -> Result<f64> {
    let st = numkit::spec_stats(&inst.x)?;
    Ok(lambda / (st.sigma_min_nonzero.powi(2) * (inst.m() as f64 / inst.d() as f64).sqrt()))
}

fn check_data(net: &DeepNet, x: &Mat, y: &Mat) -> Result<()> {
    let dims = net.dims();
    if y.nrows() != dims.input || x.nrows() != dims.output || x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "network maps {} -> {}, data is X {:?}, Y {:?}",
            dims.input,
            dims.output,
            x.shape(),
            y.shape()
        )));
    }
    Ok(())
}

fn decay_term(net: &DeepNet, lambda: f64) -> f64 {
    net.weights.iter().enumerate().map(|(l, w)| w.norm_squared() / net.decay_weight(l)).sum::<f64>() * lambda / 2.0
}

/// Training objective: data misfit plus weight decay.
pub fn loss(net: &DeepNet, x: &Mat, y: &Mat, lambda: f64) -> Result<f64> {
    check_data(net, x, y)?;
    let resid = net.forward(y)? - x;
    Ok(0.5 * resid.norm_squared() + decay_term(net, lambda))
}

/// Cached forward pass: layer inputs, pre-activation of the penultimate layer, residual.
struct Forward {
    /// `inputs[l]` is the input to layer `l` (after the ReLU for the last layer).
    inputs: Vec<Mat>,
    /// Pre-activation of layer `L-1`, kept for the ReLU mask.
    pre: Option<Mat>,
    resid: Mat,
}

fn forward_cached(net: &DeepNet, x: &Mat, y: &Mat) -> Forward {
    let depth = net.dims().depth;
    let mut inputs = Vec::with_capacity(depth);
    inputs.push(y.clone());
    let mut pre = None;
    for l in 0..depth - 1 {
        let mut h = &net.weights[l] * &inputs[l];
        if net.is_relu() && l == depth - 2 {
            pre = Some(h.clone());
            h.apply(|v| *v = v.max(0.0));
        }
        inputs.push(h);
    }
    let mut resid = &net.weights[depth - 1] * &inputs[depth - 1];
    resid *= net.scale();
    resid -= x;
    Forward { inputs, pre, resid }
}

/// Backpropagated signals: `backs[l]` is `dL_data / d(W_l H_{l-1})`, so the
/// data gradient of layer `l` is `backs[l] * inputs[l]^T`.
fn back_signals(net: &DeepNet, fw: &Forward) -> Vec<Mat> {
    let depth = net.dims().depth;
    let mut backs = Vec::with_capacity(depth);
    backs.push(&fw.resid * net.scale());
    for l in (1..depth).rev() {
        let mut back = net.weights[l].tr_mul(backs.last().unwrap());
        if let (Some(pre), true) = (&fw.pre, l == depth - 1) {
            back.zip_apply(pre, |b, p| {
                if p <= 0.0 {
                    *b = 0.0
                }
            });
        }
        backs.push(back);
    }
    backs.reverse();
    backs
}

/// Data-term gradients `dL/dW_l` (without weight decay), from a cached forward pass.
fn data_gradients(net: &DeepNet, fw: &Forward) -> Vec<Mat> {
    back_signals(net, fw).iter().zip(&fw.inputs).map(|(b, h)| b * h.transpose()).collect()
}

fn add_decay(net: &DeepNet, lambda: f64, grads: &mut [Mat]) {
    if lambda == 0.0 {
        return;
    }
    for (l, g) in grads.iter_mut().enumerate() {
        let c = lambda / net.decay_weight(l);
        g.zip_apply(&net.weights[l], |gi, wi| *gi += c * wi);
    }
}

/// Closed-form gradients of [`loss`] for a linear network; ReLU networks are
/// routed to [`relu_gradients`].
pub fn gradients(net: &DeepNet, x: &Mat, y: &Mat, lambda: f64) -> Result<Vec<Mat>> {
    if net.is_relu() {
        return relu_gradients(net, x, y, lambda);
    }
    check_data(net, x, y)?;
    let fw = forward_cached(net, x, y);
    let mut g = data_gradients(net, &fw);
    add_decay(net, lambda, &mut g);
    Ok(g)
}

/// Gradients through the ReLU after layer `L-1`, using `relu'(0) = 0`.
pub fn relu_gradients(net: &DeepNet, x: &Mat, y: &Mat, lambda: f64) -> Result<Vec<Mat>> {
    if !net.is_relu() {
        return Err(Error::InvalidParameter("relu_gradients called on a linear network".into()));
    }
    check_data(net, x, y)?;
    let fw = forward_cached(net, x, y);
    let mut g = data_gradients(net, &fw);
    add_decay(net, lambda, &mut g);
    Ok(g)
}

/// Worst per-layer relative deviation `||g_fd - g||_F / max(||g||_F, ||g_fd||_F)`
/// between analytic and central-difference gradients.
pub fn grad_check(net: &DeepNet, x: &Mat, y: &Mat, lambda: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let analytic = gradients(net, x, y, lambda)?;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (l, g) in analytic.iter().enumerate() {
        let mut fd = Mat::zeros(g.nrows(), g.ncols());
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                let orig = probe.weights[l][(i, j)];
                probe.weights[l][(i, j)] = orig + epsilon;
                let up = loss(&probe, x, y, lambda)?;
                probe.weights[l][(i, j)] = orig - epsilon;
                let down = loss(&probe, x, y, lambda)?;
                probe.weights[l][(i, j)] = orig;
                fd[(i, j)] = (up - down) / (2.0 * epsilon);
            }
        }
        let scale = g.norm().max(fd.norm());
        if scale > 0.0 {
            worst = worst.max((&fd - g).norm() / scale);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    Diverged,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Completed => "ok",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub loss: f64,
    pub metrics: MetricRecord,
    pub weight_norms: Vec<f64>,
    /// Extra named columns added by hooks.
    pub extra: Vec<(String, f64)>,
}

impl TrainRecord {
    pub fn t(&self) -> usize {
        self.metrics.t
    }
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
    /// `||F Y - X||_F / ||X||_F` on the training data at every step `0..=T`.
    pub step_errors: Vec<f64>,
    pub tau_detected: Option<usize>,
    pub wall_time: f64,
    pub status: RunStatus,
}

impl TrainTrace {
    pub fn last(&self) -> &TrainRecord {
        self.records.last().expect("trace has at least the t = 0 record")
    }

    pub fn series(&self, f: impl Fn(&TrainRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }
}

/// Per-record callback; may append columns to the record.
pub trait Hook {
    fn on_record(&mut self, net: &DeepNet, record: &mut TrainRecord) -> Result<()>;
}

impl<F> Hook for F
where
    F: FnMut(&DeepNet, &mut TrainRecord) -> Result<()>,
{
    fn on_record(&mut self, net: &DeepNet, record: &mut TrainRecord) -> Result<()> {
        self(net, record)
    }
}

/// Runs `hp.iters` full-batch GD steps on `(x, y)`, recording metrics from
/// `ctx` at `t = 0`, every `log_stride` steps, and at `t = T`.
///
/// Each step applies `W_l <- (1 - eta lambda / d_l) W_l - eta dL_data/dW_l`
/// to all layers simultaneously. A non-finite or exploding loss stops the run
/// with status [`RunStatus::Diverged`]; the trace keeps every record taken
/// before that point.
pub fn train(
    net: &mut DeepNet,
    x: &Mat,
    y: &Mat,
    ctx: &MetricsContext,
    hp: &HyperParams,
    hooks: &mut [&mut dyn Hook],
) -> Result<TrainTrace> {
    hp.validate()?;
    check_data(net, x, y)?;
    let start = Instant::now();
    let depth = net.dims().depth;
    let tau_threshold = hp.gamma.map(|g| hp.c1 * g * ctx.restricted_norm() / depth as f64);
    let per_step_tau = ctx.restricted_is_full();
    let shrink: Vec<f64> = (0..depth).map(|l| 1.0 - hp.eta * hp.lambda / net.decay_weight(l)).collect();

    let mut records = Vec::new();
    let mut step_errors = Vec::with_capacity(hp.iters + 1);
    let x_norm = x.norm();
    let mut tau_detected = None;
    let mut status = RunStatus::Completed;
    for t in 0..=hp.iters {
        let fw = forward_cached(net, x, y);
        let data_loss = 0.5 * fw.resid.norm_squared();
        let loss = data_loss + decay_term(net, hp.lambda);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            status = RunStatus::Diverged;
            break;
        }
        step_errors.push(fw.resid.norm() / x_norm);
        if tau_detected.is_none() && per_step_tau {
            if let Some(th) = tau_threshold {
                if fw.resid.norm() <= th {
                    tau_detected = Some(t);
                }
            }
        }
        if t % hp.log_stride == 0 || t == hp.iters {
            let metrics = ctx.evaluate(t, net)?;
            if tau_detected.is_none() && !per_step_tau {
                if let Some(th) = tau_threshold {
                    if metrics.recon_restricted <= th {
                        tau_detected = Some(t);
                    }
                }
            }
            let mut rec = TrainRecord { loss, metrics, weight_norms: net.weight_norms(), extra: Vec::new() };
            for h in hooks.iter_mut() {
                h.on_record(net, &mut rec)?;
            }
            records.push(rec);
        }
        if t == hp.iters {
            break;
        }
        let backs = back_signals(net, &fw);
        for (l, (b, h)) in backs.iter().zip(&fw.inputs).enumerate() {
            net.weights[l].gemm(-hp.eta, b, &h.transpose(), shrink[l]);
        }
    }
    Ok(TrainTrace { records, step_errors, tau_detected, wall_time: start.elapsed().as_secs_f64(), status })
}

/// Theory-prescribed hyperparameters and bounds for an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    /// `m / (L sigma_max^2(X))`.
    pub eta_star: f64,
    /// `gamma sigma_min^2(X) sqrt(m/d)`.
    pub lambda_star: f64,
    /// `ceil(2 L kappa^2(X) log(d_w) / gamma * sqrt(d/m))`.
    pub t_star: f64,
    /// Phase-one length bound at `(eta_star, lambda_star)`.
    pub tau_ub: f64,
    pub gamma_cap: f64,
    pub width_required_note: String,
}

/// `min(1, 1e-7 sqrt(d) / (L sqrt(m)))`.
pub fn gamma_cap(m: usize, d: usize, depth: usize) -> f64 {
    (1e-7 * (d as f64).sqrt() / (depth as f64 * (m as f64).sqrt())).min(1.0)
}

/// `64 m / (eta L sigma_min^2(X_r)) * log(L sigma_min^2(X_r) / lambda)`;
/// infinite for `lambda = 0`, clamped at zero when the logarithm is negative.
pub fn tau_upper_bound(m: usize, depth: usize, eta: f64, lambda: f64, sigma_min_xr: f64) -> f64 {
    if lambda <= 0.0 {
        return f64::INFINITY;
    }
    let l = depth as f64;
    let s2 = sigma_min_xr * sigma_min_xr;
    (64.0 * m as f64 / (eta * l * s2) * (l * s2 / lambda).ln()).max(0.0)
}

pub fn derive_hyperparams(inst: &ProblemInstance, depth: usize, width: usize, gamma: f64) -> Result<TheoryReport> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParameter(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if depth < 2 || width == 0 {
        return Err(Error::InvalidDimension(format!("need depth >= 2 and width >= 1, got {depth}, {width}")));
    }
    let st = numkit::spec_stats(&inst.x)?;
    let (m, d, l) = (inst.m() as f64, inst.d() as f64, depth as f64);
    let eta_star = m / (l * st.op_norm.powi(2));
    let lambda_star = gamma * st.sigma_min_nonzero.powi(2) * (m / d).sqrt();
    let t_star = (2.0 * l * st.kappa.powi(2) * (width as f64).ln() / gamma * (d / m).sqrt()).ceil();
    let tau_ub = tau_upper_bound(inst.m(), depth, eta_star, lambda_star, st.sigma_min_nonzero);
    let needed = d * st.stable_rank;
    let width_required_note = format!(
        "width {width} vs d*sr(X) = {needed:.1}; the guarantee needs d_w >= d*sr(X)*poly(L, kappa) with unspecified constants ({})",
        if (width as f64) >= needed * l * l * st.kappa.powi(2) {
            "d_w exceeds d*sr*L^2*kappa^2"
        } else {
            "d_w below d*sr*L^2*kappa^2"
        }
    );
    Ok(TheoryReport {
        eta_star,
        lambda_star,
        t_star,
        tau_ub,
        gamma_cap: gamma_cap(inst.m(), inst.d(), depth),
        width_required_note,
    })
}

/// `prod_i (1 - eta lambda / d_i)`.
pub fn c_prod(eta: f64, lambda: f64, fan_ins: &[usize]) -> f64 {
    fan_ins.iter().map(|&d| 1.0 - eta * lambda / d as f64).product()
}

/// [`c_prod`] with factor `skip` left out.
pub fn c_prod_excluding(eta: f64, lambda: f64, fan_ins: &[usize], skip: usize) -> f64 {
    fan_ins.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &d)| 1.0 - eta * lambda / d as f64).product()
}

/// Sample-reduced copy of `(X, Y)` for faster training, see [`problem::reduce_samples`].
pub fn reduced_data(inst: &ProblemInstance) -> Result<(Mat, Mat)> {
    let red = problem::reduce_samples(inst)?;
    Ok((red.x, red.y))
}
