//! Deep linear networks `x = W_L ... W_1 y`, optionally with a ReLU after layer `L-1`.
//!
//! Two parameterizations share the same function class:
//!
//! * [`Parameterization::Raw`]: the network computes `W_L ... W_1 y` and is
//!   initialized with fan-in scaled Gaussians, `N(0, 1/d_l)`.
//! * [`Parameterization::Normalized`]: weights are standard normal and the
//!   network computes `d_w^{-(L-1)/2} m^{-1/2} W_L ... W_1 y`.
//!
//! Dividing each normalized weight by `sqrt(d_l)` yields the equivalent raw
//! network, see [`DeepNet::to_raw`].

use crate::error::{Error, Result};
use crate::numkit::{self, derive_seed, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    /// Number of weight matrices, at least 2.
    pub depth: usize,
    /// Measurement dimension `m`.
    pub input: usize,
    /// Hidden width `d_w`.
    pub width: usize,
    /// Signal dimension `d`.
    pub output: usize,
}

impl NetDims {
    pub fn new(depth: usize, input: usize, width: usize, output: usize) -> Result<Self> {
        if depth < 2 {
            return Err(Error::InvalidDimension(format!("depth must be >= 2, got {depth}")));
        }
        if input == 0 || width == 0 || output == 0 {
            return Err(Error::InvalidDimension(format!(
                "layer sizes must be positive (m={input}, d_w={width}, d={output})"
            )));
        }
        Ok(NetDims { depth, input, width, output })
    }

    /// `(rows, cols)` of layer `l` (zero-based).
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        let rows = if l + 1 == self.depth { self.output } else { self.width };
        let cols = if l == 0 { self.input } else { self.width };
        (rows, cols)
    }

    /// Fan-in `d_l` of layer `l` (zero-based): `m` for the first layer, `d_w` otherwise.
    pub fn fan_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input
        } else {
            self.width
        }
    }

    pub fn num_params(&self) -> usize {
        (0..self.depth)
            .map(|l| {
                let (r, c) = self.layer_shape(l);
                r * c
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    Raw,
    Normalized,
}

impl Parameterization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Parameterization::Raw => "raw",
            Parameterization::Normalized => "normalized",
        }
    }
}

impl std::str::FromStr for Parameterization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Parameterization::Raw),
            "normalized" => Ok(Parameterization::Normalized),
            other => Err(Error::Parse(format!("unknown parameterization '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeepNet {
    dims: NetDims,
    mode: Parameterization,
    relu: bool,
    /// `W_1 .. W_L`; public so the trainer can update in place.
    pub weights: Vec<Mat>,
}

/// End-to-end linear map of a linear network.
#[derive(Debug, Clone)]
pub struct EndToEnd {
    /// `W_L ... W_1`.
    pub w_prod: Mat,
    /// The learned map, `w_prod` times the parameterization scale.
    pub f: Mat,
}

impl DeepNet {
    pub fn new(dims: NetDims, weights: Vec<Mat>, mode: Parameterization, relu: bool) -> Result<Self> {
        if weights.len() != dims.depth {
            return Err(Error::ShapeMismatch(format!("expected {} layers, got {}", dims.depth, weights.len())));
        }
        for (l, w) in weights.iter().enumerate() {
            if w.shape() != dims.layer_shape(l) {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} is {:?}, expected {:?}",
                    l + 1,
                    w.shape(),
                    dims.layer_shape(l)
                )));
            }
        }
        Ok(DeepNet { dims, mode, relu, weights })
    }

    /// Gaussian initialization; layer `l` uses child seed `(seed, "layer", l)`.
    ///
    /// Raw nets draw `N(0, 1/d_l)`, normalized nets `N(0, 1)`, from the same
    /// stream, so `init(.., Normalized, ..).to_raw()` equals `init(.., Raw, ..)`
    /// up to rounding.
    pub fn init(dims: NetDims, mode: Parameterization, relu: bool, seed: u64) -> Result<Self> {
        let weights = (0..dims.depth)
            .map(|l| {
                let (r, c) = dims.layer_shape(l);
                let std = match mode {
                    Parameterization::Raw => 1.0 / (dims.fan_in(l) as f64).sqrt(),
                    Parameterization::Normalized => 1.0,
                };
                numkit::gaussian(r, c, std, derive_seed(seed, "layer", l as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        DeepNet::new(dims, weights, mode, relu)
    }

    /// Fan-in initialization in raw mode.
    pub fn init_fanin(dims: NetDims, seed: u64) -> Result<Self> {
        DeepNet::init(dims, Parameterization::Raw, false, seed)
    }

    /// Standard normal initialization in normalized mode.
    pub fn init_standard_normal(dims: NetDims, seed: u64) -> Result<Self> {
        DeepNet::init(dims, Parameterization::Normalized, false, seed)
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }
    pub fn mode(&self) -> Parameterization {
        self.mode
    }
    pub fn is_relu(&self) -> bool {
        self.relu
    }

    /// Output scale `c`: 1 in raw mode, `d_w^{-(L-1)/2} m^{-1/2}` in normalized mode.
    pub fn scale(&self) -> f64 {
        match self.mode {
            Parameterization::Raw => 1.0,
            Parameterization::Normalized => {
                let NetDims { depth, input, width, .. } = self.dims;
                (width as f64).powf(-((depth - 1) as f64) / 2.0) / (input as f64).sqrt()
            }
        }
    }

    /// Divisor applied to the weight-decay term of layer `l`.
    pub fn decay_weight(&self, l: usize) -> f64 {
        match self.mode {
            Parameterization::Raw => 1.0,
            Parameterization::Normalized => self.dims.fan_in(l) as f64,
        }
    }

    /// Equivalent raw-mode network.
    pub fn to_raw(&self) -> DeepNet {
        match self.mode {
            Parameterization::Raw => self.clone(),
            Parameterization::Normalized => {
                let weights =
                    self.weights.iter().enumerate().map(|(l, w)| w / (self.dims.fan_in(l) as f64).sqrt()).collect();
                DeepNet { dims: self.dims, mode: Parameterization::Raw, relu: self.relu, weights }
            }
        }
    }

    pub fn end_to_end(&self) -> Result<EndToEnd> {
        if self.relu {
            return Err(Error::Unsupported("end-to-end matrix of a ReLU network".into()));
        }
        let mut prod = self.weights[0].clone();
        for w in &self.weights[1..] {
            prod = w * prod;
        }
        let f = &prod * self.scale();
        Ok(EndToEnd { w_prod: prod, f })
    }

    /// Network output for the columns of `input` (`m x n`).
    pub fn forward(&self, input: &Mat) -> Result<Mat> {
        if input.nrows() != self.dims.input {
            return Err(Error::ShapeMismatch(format!(
                "input has {} rows, network expects {}",
                input.nrows(),
                self.dims.input
            )));
        }
        let last = self.dims.depth - 1;
        let mut h = &self.weights[0] * input;
        for w in &self.weights[1..last] {
            h = w * h;
        }
        if self.relu {
            h.apply(|v| *v = v.max(0.0));
        }
        let mut out = &self.weights[last] * h;
        out *= self.scale();
        Ok(out)
    }

    pub fn weight_norms(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.norm()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
    }
}

/// Anything that maps measurements (columns) to signal estimates.
pub trait Predictor {
    fn predict(&self, y: &Mat) -> Result<Mat>;
}

impl Predictor for Mat {
    fn predict(&self, y: &Mat) -> Result<Mat> {
        if self.ncols() != y.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "map is {}x{}, input has {} rows",
                self.nrows(),
                self.ncols(),
                y.nrows()
            )));
        }
        Ok(self * y)
    }
}

impl Predictor for DeepNet {
    fn predict(&self, y: &Mat) -> Result<Mat> {
        self.forward(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn sample_var(ms: &[Mat]) -> f64 {
        let n: usize = ms.iter().map(|m| m.len()).sum();
        let sum: f64 = ms.iter().map(|m| m.sum()).sum();
        let mean = sum / n as f64;
        ms.iter().flat_map(|m| m.iter()).map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    }

    #[test]
    fn dims_validation() {
        assert!(NetDims::new(1, 3, 4, 5).is_err());
        assert!(NetDims::new(3, 0, 4, 5).is_err());
        let d = NetDims::new(5, 128, 4096, 256).unwrap();
        let shapes: Vec<_> = (0..5).map(|l| d.layer_shape(l)).collect();
        assert_eq!(shapes, vec![(4096, 128), (4096, 4096), (4096, 4096), (4096, 4096), (256, 4096)]);
    }

    #[test]
    fn fanin_variances() {
        let dims = NetDims::new(2, 4, 8, 3).unwrap();
        // 10^5 entries per layer across resampled nets.
        let mut w1 = Vec::new();
        let mut w2 = Vec::new();
        for seed in 0..3200u64 {
            let net = DeepNet::init_fanin(dims, seed).unwrap();
            w1.push(net.weights[0].clone());
            w2.push(net.weights[1].clone());
        }
        let v1 = sample_var(&w1);
        let v2 = sample_var(&w2);
        assert!((v1 - 0.25).abs() < 0.02 * 0.25, "{v1}");
        assert!((v2 - 0.125).abs() < 0.02 * 0.125, "{v2}");
    }

    #[test]
    fn init_is_deterministic() {
        let dims = NetDims::new(3, 4, 6, 5).unwrap();
        let a = DeepNet::init_fanin(dims, 3).unwrap();
        let b = DeepNet::init_fanin(dims, 3).unwrap();
        assert_eq!(a.weights, b.weights);
        let a = DeepNet::init_standard_normal(dims, 3).unwrap();
        let b = DeepNet::init_standard_normal(dims, 3).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn standard_normal_variance() {
        let dims = NetDims::new(3, 50, 200, 60).unwrap();
        let net = DeepNet::init_standard_normal(dims, 1).unwrap();
        let v = sample_var(&net.weights);
        assert!((v - 1.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn normalized_and_fanin_products_have_matching_entry_variance() {
        let dims = NetDims::new(3, 16, 256, 16).unwrap();
        let mut fs_norm = Vec::new();
        let mut fs_raw = Vec::new();
        for seed in 0..20 {
            fs_norm.push(DeepNet::init_standard_normal(dims, seed).unwrap().end_to_end().unwrap().f);
            fs_raw.push(DeepNet::init_fanin(dims, 1000 + seed).unwrap().end_to_end().unwrap().f);
        }
        let vn = sample_var(&fs_norm);
        let vr = sample_var(&fs_raw);
        // Both should be close to 1/m; compare with a generous two-sample band.
        assert!((vn / vr - 1.0).abs() < 0.15, "{vn} vs {vr}");
        assert!((vn * 16.0 - 1.0).abs() < 0.2, "{vn}");
    }

    #[test]
    fn end_to_end_identity_and_scalars() {
        let dims = NetDims::new(2, 3, 3, 3).unwrap();
        let net = DeepNet::new(dims, vec![Mat::identity(3, 3); 2], Parameterization::Raw, false).unwrap();
        assert_eq!(net.end_to_end().unwrap().f, Mat::identity(3, 3));

        let dims = NetDims::new(3, 1, 1, 1).unwrap();
        let ws = vec![dmatrix![2.0], dmatrix![3.0], dmatrix![5.0]];
        let net = DeepNet::new(dims, ws, Parameterization::Raw, false).unwrap();
        assert_eq!(net.end_to_end().unwrap().f[(0, 0)], 30.0);
    }

    #[test]
    fn end_to_end_matches_forward() {
        let dims = NetDims::new(4, 5, 7, 6).unwrap();
        for mode in [Parameterization::Raw, Parameterization::Normalized] {
            let net = DeepNet::init(dims, mode, false, 8).unwrap();
            let f = net.end_to_end().unwrap().f;
            let ys = numkit::gaussian(5, 10, 1.0, 2).unwrap();
            let out = net.forward(&ys).unwrap();
            assert!((&f * &ys - out).amax() < 1e-10);
        }
    }

    #[test]
    fn relu_net_rejects_end_to_end() {
        let dims = NetDims::new(3, 2, 3, 2).unwrap();
        let net = DeepNet::init(dims, Parameterization::Raw, true, 1).unwrap();
        assert!(matches!(net.end_to_end(), Err(Error::Unsupported(_))));
    }

    #[test]
    fn forward_zero_input_and_shape_check() {
        let dims = NetDims::new(3, 4, 5, 6).unwrap();
        for relu in [false, true] {
            let net = DeepNet::init(dims, Parameterization::Raw, relu, 1).unwrap();
            assert_eq!(net.forward(&Mat::zeros(4, 2)).unwrap(), Mat::zeros(6, 2));
            assert!(net.forward(&Mat::zeros(3, 2)).is_err());
        }
    }

    #[test]
    fn relu_with_nonnegative_preactivations_is_linear() {
        let dims = NetDims::new(3, 2, 3, 2).unwrap();
        let ws = vec![
            dmatrix![1.0, 0.5; 0.2, 1.0; 0.3, 0.3],
            dmatrix![1.0, 0.0, 0.1; 0.0, 1.0, 0.0; 0.2, 0.2, 1.0],
            dmatrix![1.0, -2.0, 0.5; 0.3, 0.1, -1.0],
        ];
        let lin = DeepNet::new(dims, ws.clone(), Parameterization::Raw, false).unwrap();
        let relu = DeepNet::new(dims, ws, Parameterization::Raw, true).unwrap();
        let y = dmatrix![1.0, 0.5; 2.0, 0.1];
        assert_eq!(lin.forward(&y).unwrap(), relu.forward(&y).unwrap());
    }

    #[test]
    fn normalized_to_raw_preserves_map() {
        let dims = NetDims::new(3, 6, 9, 5).unwrap();
        let net = DeepNet::init_standard_normal(dims, 4).unwrap();
        let raw = net.to_raw();
        let diff = net.end_to_end().unwrap().f - raw.end_to_end().unwrap().f;
        assert!(diff.amax() < 1e-10);
        let fan = DeepNet::init_fanin(dims, 4).unwrap();
        for (a, b) in fan.weights.iter().zip(&raw.weights) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn predictor_for_matrix() {
        let f = Mat::identity(3, 3) * 2.0;
        let y = numkit::gaussian(3, 2, 1.0, 1).unwrap();
        assert_eq!(f.predict(&y).unwrap(), &y * 2.0);
        assert!(f.predict(&Mat::zeros(2, 1)).is_err());
    }
}
