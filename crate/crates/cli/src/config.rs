//! Flat `key = value` experiment configuration and the built-in presets.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use subspace_gd_core::model::Parameterization;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    RobustnessLinear,
    RobustnessUos,
    StepsizeSweep,
    DepthSweep,
    SubspaceSweep,
    WdSweep,
    Custom,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::RobustnessLinear,
        Experiment::RobustnessUos,
        Experiment::StepsizeSweep,
        Experiment::DepthSweep,
        Experiment::SubspaceSweep,
        Experiment::WdSweep,
        Experiment::Custom,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::RobustnessLinear => "robustness-linear",
            Experiment::RobustnessUos => "robustness-uos",
            Experiment::StepsizeSweep => "stepsize-sweep",
            Experiment::DepthSweep => "depth-sweep",
            Experiment::SubspaceSweep => "subspace-sweep",
            Experiment::WdSweep => "wd-sweep",
            Experiment::Custom => "custom",
        }
    }

    pub fn is_robustness(&self) -> bool {
        matches!(self, Experiment::RobustnessLinear | Experiment::RobustnessUos)
    }
}

impl FromStr for Experiment {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| CliError::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(CliError::Config(format!("unknown scale '{s}' (expected desk or paper)"))),
        }
    }
}

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    None,
    Lambda,
    Prefactor,
    Eta,
    Depth,
    Subspace,
    Width,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Prefactor => "prefactor",
            SweepAxis::Eta => "eta",
            SweepAxis::Depth => "depth",
            SweepAxis::Subspace => "s",
            SweepAxis::Width => "width",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "none" => SweepAxis::None,
            "lambda" => SweepAxis::Lambda,
            "prefactor" | "k" => SweepAxis::Prefactor,
            "eta" => SweepAxis::Eta,
            "depth" | "L" => SweepAxis::Depth,
            "s" => SweepAxis::Subspace,
            "width" | "d_w" => SweepAxis::Width,
            _ => return Err(CliError::Config(format!("unknown sweep axis '{s}'"))),
        })
    }
}

/// How the step size is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Eta(f64),
    /// `eta = k m / (L sigma_max^2(X))`.
    Prefactor(f64),
}

/// How the weight decay is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    Lambda(f64),
    /// `lambda = gamma sigma_min^2(X) sqrt(m/d)`.
    Gamma(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub m: usize,
    pub d: usize,
    pub s: usize,
    pub n: usize,
    /// Number of subspaces in a union-of-subspaces model.
    pub k: usize,
    pub kappa: f64,
    pub depth: usize,
    pub width: usize,
    pub mode: Parameterization,
    pub relu: bool,
    pub step: StepSize,
    pub decay: Decay,
    pub iters: usize,
    pub c1: f64,
    pub log_stride: usize,
    pub sweep: SweepAxis,
    pub values: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub output_dir: PathBuf,
    /// Settings the preset had to choose because the source leaves them open.
    pub assumptions: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::Custom,
            m: 32,
            d: 64,
            s: 4,
            n: 200,
            k: 1,
            kappa: 1.0,
            depth: 3,
            width: 256,
            mode: Parameterization::Normalized,
            relu: false,
            step: StepSize::Prefactor(0.5),
            decay: Decay::Lambda(1e-3),
            iters: 2000,
            c1: 1.0,
            log_stride: 10,
            sweep: SweepAxis::None,
            values: Vec::new(),
            runs: 1,
            seed: 0,
            sigmas: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            trials: 100,
            output_dir: PathBuf::from("runs"),
            assumptions: Vec::new(),
        }
    }
}

const LAMBDA_GRID: [f64; 5] = [0.0, 1e-4, 1e-3, 1e-2, 1e-1];

impl ExperimentConfig {
    pub fn preset(experiment: Experiment, scale: Scale) -> Self {
        let paper = scale == Scale::Paper;
        let pick = |p: usize, desk: usize| if paper { p } else { desk };
        let base = ExperimentConfig { experiment, ..Default::default() };
        match experiment {
            Experiment::RobustnessLinear => ExperimentConfig {
                m: 128,
                d: 256,
                s: 16,
                n: pick(1000, 200),
                kappa: 10.0,
                depth: 5,
                width: pick(4096, 512),
                step: StepSize::Prefactor(0.5),
                iters: pick(100_000, 5000),
                log_stride: pick(1000, 100),
                sweep: SweepAxis::Lambda,
                values: LAMBDA_GRID.to_vec(),
                sigmas: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
                assumptions: vec![
                    "training data condition number kappa = 10 (not stated for this figure)".into(),
                    "sample count n and desk iteration count chosen for runtime".into(),
                ],
                ..base
            },
            Experiment::RobustnessUos => ExperimentConfig {
                m: 128,
                d: 256,
                s: 4,
                k: 3,
                n: pick(1000, 200),
                depth: 5,
                width: pick(4096, 512),
                relu: true,
                step: StepSize::Prefactor(0.5),
                iters: pick(100_000, 20_000),
                log_stride: pick(1000, 200),
                sweep: SweepAxis::Lambda,
                values: LAMBDA_GRID.to_vec(),
                sigmas: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
                assumptions: vec!["sample count n and coefficient conditioning kappa = 1 not stated".into()],
                ..base
            },
            Experiment::StepsizeSweep => ExperimentConfig {
                m: 128,
                d: 256,
                s: 4,
                n: pick(1000, 200),
                depth: 3,
                width: 512,
                decay: Decay::Lambda(1e-3),
                iters: pick(20_000, 10_000),
                log_stride: 50,
                sweep: SweepAxis::Prefactor,
                values: vec![0.01, 0.1, 1.0, 5.0],
                assumptions: vec![
                    "hidden width d_w = 512 (not stated for this figure)".into(),
                    "kappa = 1, sample count n and iteration count not stated".into(),
                ],
                ..base
            },
            Experiment::DepthSweep => ExperimentConfig {
                m: 32,
                d: 64,
                s: 4,
                n: pick(1000, 200),
                width: pick(1000, 256),
                step: StepSize::Eta(0.1),
                decay: Decay::Lambda(1e-4),
                iters: pick(100_000, 20_000),
                log_stride: pick(500, 200),
                sweep: SweepAxis::Depth,
                values: vec![2.0, 3.0, 5.0],
                runs: 3,
                assumptions: vec!["iteration count and depth grid {2, 3, 5} not stated".into()],
                ..base
            },
            Experiment::SubspaceSweep => ExperimentConfig {
                m: 128,
                d: 256,
                s: 4,
                n: pick(1000, 200),
                depth: 3,
                width: 512,
                step: StepSize::Eta(0.1),
                decay: Decay::Lambda(1e-3),
                iters: pick(100_000, 10_000),
                log_stride: pick(500, 100),
                sweep: SweepAxis::Subspace,
                values: vec![2.0, 4.0, 8.0, 16.0, 32.0],
                runs: pick(10, 3),
                assumptions: vec!["depth L = 3 and iteration count not stated".into()],
                ..base
            },
            Experiment::WdSweep => ExperimentConfig {
                m: 32,
                d: 64,
                s: 4,
                n: pick(1000, 200),
                depth: 3,
                width: pick(1000, 256),
                step: StepSize::Eta(0.1),
                iters: pick(100_000, 20_000),
                log_stride: pick(500, 200),
                sweep: SweepAxis::Lambda,
                values: vec![1e-4, 1e-3, 1e-2],
                assumptions: vec!["weight decay grid {1e-4, 1e-3, 1e-2} and iteration count not stated".into()],
                ..base
            },
            Experiment::Custom => base,
        }
    }

    /// Parses `key = value` lines (`#` starts a comment). An `experiment` key
    /// selects a preset at `scale` that the remaining keys then override.
    pub fn parse(text: &str, scale: Scale) -> Result<Self, CliError> {
        let mut pairs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let experiment = match pairs.iter().find(|(k, _)| k == "experiment") {
            Some((_, v)) => v.parse()?,
            None => Experiment::Custom,
        };
        let mut cfg = ExperimentConfig::preset(experiment, scale);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "experiment") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Applies one override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
            v.parse().map_err(|_| CliError::Config(format!("invalid value '{v}' for '{key}'")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
            v.split(',').filter(|t| !t.trim().is_empty()).map(|t| num(key, t.trim())).collect()
        }
        match key {
            "experiment" => {
                let e: Experiment = value.parse()?;
                if e != self.experiment {
                    return Err(CliError::Config("'experiment' can only be set in the config file".into()));
                }
            }
            "m" => self.m = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "s" => self.s = num(key, value)?,
            "n" => self.n = num(key, value)?,
            "k" | "subspaces" => self.k = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "L" | "depth" => self.depth = num(key, value)?,
            "d_w" | "width" => self.width = num(key, value)?,
            "parameterization" => {
                self.mode =
                    value.parse().map_err(|_| CliError::Config(format!("unknown parameterization '{value}'")))?
            }
            "relu" => self.relu = num(key, value)?,
            "eta" => self.step = StepSize::Eta(num(key, value)?),
            "prefactor" => self.step = StepSize::Prefactor(num(key, value)?),
            "lambda" => self.decay = Decay::Lambda(num(key, value)?),
            "gamma" => self.decay = Decay::Gamma(num(key, value)?),
            "T" | "iters" => self.iters = num(key, value)?,
            "C1" | "c1" => self.c1 = num(key, value)?,
            "log_stride" => self.log_stride = num(key, value)?,
            "sweep" => self.sweep = value.parse()?,
            "values" => self.values = list(key, value)?,
            "runs" => self.runs = num(key, value)?,
            "seed" | "master_seed" => self.seed = num(key, value)?,
            "sigmas" => self.sigmas = list(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Copy with the sweep parameter set to `value`.
    pub fn at(&self, value: f64) -> Result<Self, CliError> {
        let mut c = self.clone();
        let as_count = |v: f64| -> Result<usize, CliError> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(CliError::Config(format!(
                    "sweep value {v} must be a positive integer for axis {}",
                    self.sweep.as_str()
                )))
            }
        };
        match self.sweep {
            SweepAxis::None => {}
            SweepAxis::Lambda => c.decay = Decay::Lambda(value),
            SweepAxis::Prefactor => c.step = StepSize::Prefactor(value),
            SweepAxis::Eta => c.step = StepSize::Eta(value),
            SweepAxis::Depth => c.depth = as_count(value)?,
            SweepAxis::Subspace => c.s = as_count(value)?,
            SweepAxis::Width => c.width = as_count(value)?,
        }
        Ok(c)
    }

    /// Sweep values, or a single placeholder when nothing is swept.
    pub fn sweep_points(&self) -> Vec<f64> {
        if self.sweep == SweepAxis::None {
            vec![f64::NAN]
        } else {
            self.values.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.sweep != SweepAxis::None && self.values.is_empty() {
            return bad(format!("sweep over '{}' needs at least one value", self.sweep.as_str()));
        }
        if self.runs == 0 {
            return bad("runs must be >= 1".into());
        }
        if self.kappa < 1.0 {
            return bad(format!("kappa must be >= 1, got {}", self.kappa));
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.relu && !self.experiment_allows_relu() {
            return bad("relu networks need a union-of-subspaces experiment (robustness-uos or custom)".into());
        }
        if self.experiment.is_robustness() && (self.sigmas.is_empty() || self.trials == 0) {
            return bad("robustness experiments need sigmas and trials >= 1".into());
        }
        for v in self.sweep_points() {
            let c = self.at(v)?;
            if c.m == 0 || c.d == 0 || c.s == 0 || c.m > c.d || c.s > c.m || c.s > c.n {
                return bad(format!("need 0 < s <= m <= d and s <= n, got m={}, d={}, s={}, n={}", c.m, c.d, c.s, c.n));
            }
            if c.depth < 2 || c.width == 0 {
                return bad(format!("need depth >= 2 and width >= 1, got L={}, d_w={}", c.depth, c.width));
            }
            let (StepSize::Eta(e) | StepSize::Prefactor(e)) = c.step;
            if !(e >= 0.0 && e.is_finite()) {
                return bad(format!("step size must be finite and >= 0, got {e}"));
            }
            match c.decay {
                Decay::Lambda(l) if !(l >= 0.0 && l.is_finite()) => {
                    return bad(format!("lambda must be >= 0, got {l}"))
                }
                Decay::Gamma(g) if !(g > 0.0 && g <= 1.0) => return bad(format!("gamma must lie in (0, 1], got {g}")),
                _ => {}
            }
        }
        if self.iters == 0 || self.log_stride == 0 || !(self.c1 > 0.0) {
            return bad("need T >= 1, log_stride >= 1, C1 > 0".into());
        }
        Ok(())
    }

    fn experiment_allows_relu(&self) -> bool {
        matches!(self.experiment, Experiment::RobustnessUos | Experiment::Custom)
    }

    pub fn uses_union(&self) -> bool {
        self.experiment == Experiment::RobustnessUos || (self.experiment == Experiment::Custom && self.k > 1)
    }

    /// Canonical `key = value` listing; parsing it back yields the same configuration.
    pub fn to_kv(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        let mut out = format!("experiment = {}\n", self.experiment.as_str());
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("m", self.m.to_string());
        kv("d", self.d.to_string());
        kv("s", self.s.to_string());
        kv("n", self.n.to_string());
        kv("k", self.k.to_string());
        kv("kappa", format!("{:e}", self.kappa));
        kv("L", self.depth.to_string());
        kv("d_w", self.width.to_string());
        kv("parameterization", self.mode.as_str().to_string());
        kv("relu", self.relu.to_string());
        match self.step {
            StepSize::Eta(e) => kv("eta", format!("{e:e}")),
            StepSize::Prefactor(k) => kv("prefactor", format!("{k:e}")),
        }
        match self.decay {
            Decay::Lambda(l) => kv("lambda", format!("{l:e}")),
            Decay::Gamma(g) => kv("gamma", format!("{g:e}")),
        }
        kv("T", self.iters.to_string());
        kv("C1", format!("{:e}", self.c1));
        kv("log_stride", self.log_stride.to_string());
        kv("sweep", self.sweep.as_str().to_string());
        kv("values", join(&self.values));
        kv("runs", self.runs.to_string());
        kv("seed", self.seed.to_string());
        kv("sigmas", join(&self.sigmas));
        kv("trials", self.trials.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        out
    }

    /// Stable 64-bit digest of [`Self::to_kv`] without the output directory, as hex.
    pub fn hash(&self) -> String {
        let kv: String =
            self.to_kv().lines().filter(|l| !l.starts_with("output_dir ")).map(|l| format!("{l}\n")).collect();
        format!("{:016x}", subspace_gd_core::numkit::derive_seed(0, &kv, 0))
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_overrides_preset() {
        let cfg = ExperimentConfig::parse("experiment = depth-sweep\n# comment\nT = 50\nvalues = 2, 3\n", Scale::Desk)
            .unwrap();
        assert_eq!(cfg.experiment, Experiment::DepthSweep);
        assert_eq!(cfg.iters, 50);
        assert_eq!(cfg.values, vec![2.0, 3.0]);
        assert_eq!(cfg.m, 32);
    }

    #[test]
    fn kv_round_trip() {
        for e in Experiment::ALL {
            for scale in [Scale::Desk, Scale::Paper] {
                let mut cfg = ExperimentConfig::preset(e, scale);
                cfg.assumptions.clear();
                let back = ExperimentConfig::parse(&cfg.to_kv(), scale).unwrap();
                let mut back = back;
                back.assumptions.clear();
                assert_eq!(back, cfg, "{}", e.as_str());
            }
        }
    }

    #[test]
    fn bad_input_rejected() {
        assert!(ExperimentConfig::parse("nonsense", Scale::Desk).is_err());
        assert!(ExperimentConfig::parse("bogus = 1", Scale::Desk).is_err());
        assert!(ExperimentConfig::parse("m = x", Scale::Desk).is_err());
        let mut cfg = ExperimentConfig::preset(Experiment::WdSweep, Scale::Desk);
        cfg.values.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::preset(Experiment::DepthSweep, Scale::Desk);
        cfg.values = vec![2.5];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.m = 100;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn all_presets_validate() {
        for e in Experiment::ALL {
            for scale in [Scale::Desk, Scale::Paper] {
                ExperimentConfig::preset(e, scale).validate().unwrap();
            }
        }
    }

    #[test]
    fn sweep_value_application() {
        let cfg = ExperimentConfig::preset(Experiment::StepsizeSweep, Scale::Desk);
        assert_eq!(cfg.at(5.0).unwrap().step, StepSize::Prefactor(5.0));
        let cfg = ExperimentConfig::preset(Experiment::SubspaceSweep, Scale::Desk);
        assert_eq!(cfg.at(16.0).unwrap().s, 16);
    }
}
