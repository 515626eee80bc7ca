//! Theory-prescribed hyperparameters and the phase-one bound for a configuration.

use std::fmt::Write;

use subspace_gd_core::numkit::{self, derive_seed};
use subspace_gd_core::problem;
use subspace_gd_core::trainer::{self, TheoryReport};

use crate::config::{Decay, ExperimentConfig};
use crate::runner::{self, fmt_value};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub value: f64,
    /// Report at the configured `gamma` (or the one implied by `lambda`); `None`
    /// when the decay is zero or implies `gamma > 1`.
    pub report: Option<TheoryReport>,
    pub kappa_x: f64,
    /// Step size, decay and bound at the configured hyperparameters.
    pub configured: runner::ResolvedHp,
}

/// Evaluates the theory quantities on the run-0 instance of every sweep point.
/// Union-of-subspaces configs are evaluated on a single subspace of the same dimensions.
pub fn theory(cfg: &ExperimentConfig) -> Result<Vec<TheoryRow>> {
    cfg.validate()?;
    cfg.sweep_points()
        .into_iter()
        .map(|value| {
            let c = cfg.at(value)?;
            let inst = problem::generate(c.m, c.d, c.s, c.n, c.kappa, derive_seed(c.seed, "instance", 0))?;
            let configured = runner::resolve_hp(&c, &inst.x)?;
            let gamma = match c.decay {
                Decay::Gamma(g) => Some(g),
                Decay::Lambda(_) => configured.gamma,
            };
            let report = gamma.map(|g| trainer::derive_hyperparams(&inst, c.depth, c.width, g)).transpose()?;
            let kappa_x = numkit::spec_stats(&inst.x)?.kappa;
            Ok(TheoryRow { value, report, kappa_x, configured })
        })
        .collect()
}

pub fn fmt_bound(v: f64) -> String {
    if v.is_infinite() {
        "unbounded".into()
    } else {
        format!("{v:.6e}")
    }
}

pub fn render(cfg: &ExperimentConfig, rows: &[TheoryRow]) -> String {
    let mut out = String::new();
    for row in rows {
        if !row.value.is_nan() {
            let _ = writeln!(out, "[{} = {}]", cfg.sweep.as_str(), fmt_value(row.value));
        }
        let c = &row.configured;
        let _ = writeln!(out, "kappa(X)            {:.6e}", row.kappa_x);
        let _ = writeln!(out, "configured eta      {:.6e}", c.eta);
        let _ = writeln!(out, "configured lambda   {:.6e}", c.lambda);
        match c.gamma {
            Some(g) => {
                let _ = writeln!(out, "implied gamma       {g:.6e}");
            }
            None => {
                let _ = writeln!(out, "implied gamma       n/a");
            }
        }
        let _ = writeln!(out, "tau_ub (configured) {}", fmt_bound(c.tau_ub));
        match &row.report {
            Some(r) => {
                let _ = writeln!(out, "eta_star            {:.6e}", r.eta_star);
                let _ = writeln!(out, "lambda_star         {:.6e}", r.lambda_star);
                let _ = writeln!(out, "T_star              {:.0}", r.t_star);
                let _ = writeln!(out, "tau_ub (theory)     {}", fmt_bound(r.tau_ub));
                let _ = writeln!(out, "gamma_cap           {:.6e}", r.gamma_cap);
                let _ = writeln!(out, "width               {}", r.width_required_note);
            }
            None => {
                let _ = writeln!(out, "theory hyperparameters need 0 < gamma <= 1; none implied by lambda");
            }
        }
    }
    out
}
