//! Multilayer perceptrons for the six network roles, plus Adam.
//!
//! Affine weights are stored `in x out` so a batch of row vectors maps as
//! `x . W + b`. Parameters are kept flat, `[W0, b0, W1, b1, ...]`, which is
//! also the order gradients and optimizer moments use.

mod adam;
pub mod archive;

use std::fmt;
use std::sync::Arc;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng as _;

use crate::autodiff::{gemm, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub use adam::{adam_step, AdamConfig, AdamState};

/// Width of the condition code produced by the conditioner/encoder.
pub const CODE_WIDTH: usize = 16;
pub const HIDDEN_SLOPE: f64 = 0.2;
pub const DROPOUT_RATE: f64 = 0.4;
/// Output multiplier of the hybrid simulator.
pub const HYBRID_OUTPUT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Conditioner,
    Decoder,
    Simulator,
    HybridSimulator,
    Discriminator,
    Proposer,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Conditioner,
        Role::Decoder,
        Role::Simulator,
        Role::HybridSimulator,
        Role::Discriminator,
        Role::Proposer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Conditioner => "conditioner",
            Role::Decoder => "decoder",
            Role::Simulator => "simulator",
            Role::HybridSimulator => "hybrid_simulator",
            Role::Discriminator => "discriminator",
            Role::Proposer => "proposer",
        }
    }

    pub(crate) fn index(self) -> u8 {
        Role::ALL.iter().position(|r| *r == self).unwrap() as u8
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(Role::Conditioner),
            _ => Role::ALL
                .into_iter()
                .find(|r| r.as_str() == s)
                .ok_or_else(|| Error::invalid(format!("unknown network role `{s}`"))),
        }
    }
}

/// Problem dimensions every network is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub assets: usize,
    pub hist_len: usize,
    pub future_len: usize,
    pub latent_dim: usize,
}

impl NetDims {
    pub fn window(&self) -> usize {
        self.hist_len + self.future_len
    }

    fn validate(&self) -> Result<()> {
        if self.assets == 0 || self.hist_len == 0 || self.future_len == 0 || self.latent_dim == 0 {
            return Err(Error::invalid(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Affine { in_dim: usize, out_dim: usize },
    LeakyRelu(f64),
    Tanh,
    Dropout(f64),
    Scale(f64),
}

fn affine(in_dim: usize, out_dim: usize) -> LayerSpec {
    LayerSpec::Affine { in_dim, out_dim }
}

const LR: LayerSpec = LayerSpec::LeakyRelu(HIDDEN_SLOPE);
const DP: LayerSpec = LayerSpec::Dropout(DROPOUT_RATE);

/// The layer stack for `role`.
pub fn layer_stack(role: Role, d: &NetDims) -> Vec<LayerSpec> {
    let (n, h, f, m) = (d.assets, d.hist_len, d.future_len, d.latent_dim);
    let simulator = || {
        vec![
            affine(m + CODE_WIDTH, 128),
            LR,
            affine(128, 256),
            LR,
            affine(256, 512),
            LR,
            affine(512, 1024),
            LR,
            affine(1024, n * f),
            LayerSpec::Tanh,
        ]
    };
    match role {
        Role::Conditioner => vec![affine(n * h, 512), LR, affine(512, 512), LR, DP, affine(512, CODE_WIDTH)],
        Role::Decoder => vec![affine(CODE_WIDTH, 512), LR, affine(512, 512), LR, DP, affine(512, n * h)],
        Role::Simulator => simulator(),
        Role::HybridSimulator => {
            let mut s = simulator();
            s.push(LayerSpec::Scale(HYBRID_OUTPUT_SCALE));
            s
        }
        // the third affine is 512 -> 512 so the widths chain after the dropout
        Role::Discriminator => vec![
            affine(n * (h + f), 512),
            LR,
            affine(512, 512),
            LR,
            DP,
            affine(512, 512),
            LR,
            affine(512, 1),
        ],
        // one mean shift per asset
        Role::Proposer => vec![affine(n * (h + 1), 512), LR, affine(512, 512), LR, DP, affine(512, n)],
    }
}

/// How dropout behaves during a forward pass.
pub enum Mode<'r> {
    /// Sample fresh masks from the generator.
    Train(&'r mut Rng),
    /// Dropout is the identity.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    role: Role,
    dims: NetDims,
    seed: u64,
    layers: Vec<LayerSpec>,
    params: Vec<Arc<Matrix>>,
}

impl MlpNetwork {
    /// Builds the role's stack with zeroed parameters.
    pub fn build(role: Role, dims: NetDims) -> Result<Self> {
        dims.validate()?;
        Self::from_layers(role, dims, layer_stack(role, &dims))
    }

    /// Builds and initializes in one step.
    pub fn new(role: Role, dims: NetDims, seed: u64, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::build(role, dims)?;
        net.init_parameters(seed, rng);
        Ok(net)
    }

    pub fn from_layers(role: Role, dims: NetDims, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut params = Vec::new();
        let mut width: Option<usize> = None;
        for (k, layer) in layers.iter().enumerate() {
            match *layer {
                LayerSpec::Affine { in_dim, out_dim } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(Error::invalid(format!("layer {k}: affine dims must be positive")));
                    }
                    if let Some(w) = width {
                        if w != in_dim {
                            return Err(Error::invalid(format!(
                                "layer {k}: affine expects width {in_dim} but receives {w}"
                            )));
                        }
                    }
                    width = Some(out_dim);
                    params.push(Arc::new(Array2::zeros((in_dim, out_dim))));
                    params.push(Arc::new(Array2::zeros((1, out_dim))));
                }
                LayerSpec::Dropout(rate) if !(0.0..1.0).contains(&rate) => {
                    return Err(Error::invalid(format!("layer {k}: dropout rate {rate} outside [0,1)")));
                }
                LayerSpec::Scale(c) if !c.is_finite() || c == 0.0 => {
                    return Err(Error::invalid(format!("layer {k}: scale factor {c} must be finite and nonzero")));
                }
                _ => {}
            }
        }
        if !matches!(layers.first(), Some(LayerSpec::Affine { .. })) {
            return Err(Error::invalid("a network must start with an affine layer"));
        }
        Ok(Self {
            role,
            dims,
            seed: 0,
            layers,
            params,
        })
    }

    /// Uniform fan-in weights in `(-1/sqrt(in), 1/sqrt(in))`, zero biases.
    pub fn init_parameters(&mut self, seed: u64, rng: &mut Rng) {
        self.seed = seed;
        for pair in self.params.chunks_mut(2) {
            let bound = 1.0 / (pair[0].nrows() as f64).sqrt();
            Arc::make_mut(&mut pair[0]).mapv_inplace(|_| rng.random_range(-bound..bound));
            Arc::make_mut(&mut pair[1]).fill(0.0);
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Parameter tensors, shared copy-on-write with any tape they are bound to.
    pub fn params(&self) -> &[Arc<Matrix>] {
        &self.params
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.params.iter().map(|p| &**p)
    }

    pub fn param_mut(&mut self, k: usize) -> &mut Matrix {
        Arc::make_mut(&mut self.params[k])
    }

    /// Mutable access to every tensor; copies any tensor still shared with a tape.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.params.iter_mut().map(Arc::make_mut)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn input_width(&self) -> usize {
        self.params[0].nrows()
    }

    pub fn output_width(&self) -> usize {
        self.params[self.params.len() - 1].ncols()
    }

    /// Puts the parameters on `tape`, as trainable leaves or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param_shared(Arc::clone(p))
                } else {
                    tape.constant_shared(Arc::clone(p))
                }
            })
            .collect()
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::Shape {
                op: "network input",
                lhs: [0, width],
                rhs: [0, self.input_width()],
            });
        }
        Ok(())
    }

    /// Recorded forward pass using parameters previously returned by [`bind`](Self::bind).
    pub fn forward<'t>(&self, bound: &[Var<'t>], x: Var<'t>, mode: &mut Mode<'_>) -> Result<Var<'t>> {
        self.check_input(x.shape()[1])?;
        let mut h = x;
        let mut k = 0;
        for layer in &self.layers {
            h = match *layer {
                LayerSpec::Affine { .. } => {
                    let out = h.affine(bound[k], bound[k + 1])?;
                    k += 2;
                    out
                }
                LayerSpec::LeakyRelu(p) => h.leaky_relu(p)?,
                LayerSpec::Tanh => h.tanh()?,
                LayerSpec::Scale(c) => h.scale(c)?,
                LayerSpec::Dropout(rate) => match mode {
                    Mode::Infer => h,
                    Mode::Train(rng) => {
                        let [r, c] = h.shape();
                        let keep = Array2::from_shape_fn((r, c), |_| rng.random::<f64>() >= rate);
                        h.dropout(rate, &keep)?
                    }
                },
            };
        }
        Ok(h)
    }

    /// Inference-mode forward pass without recording (dropout is the identity).
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x.ncols())?;
        let mut h = x.clone();
        let mut k = 0;
        for layer in &self.layers {
            match *layer {
                LayerSpec::Affine { .. } => {
                    h = gemm(h.view(), self.params[k].view()) + &*self.params[k + 1];
                    k += 2;
                }
                LayerSpec::LeakyRelu(p) => h.mapv_inplace(|x| if x > 0.0 { x } else { p * x }),
                LayerSpec::Tanh => h.mapv_inplace(f64::tanh),
                LayerSpec::Scale(c) => h *= c,
                LayerSpec::Dropout(_) => {}
            }
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{} produced a non-finite output", self.role)));
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn dims(n: usize, h: usize, f: usize, m: usize) -> NetDims {
        NetDims {
            assets: n,
            hist_len: h,
            future_len: f,
            latent_dim: m,
        }
    }

    #[test]
    fn widths_for_reference_dimensions() {
        let d = dims(10, 40, 20, 100);
        let c = MlpNetwork::build(Role::Conditioner, d).unwrap();
        assert_eq!((c.input_width(), c.output_width()), (400, 16));
        let s = MlpNetwork::build(Role::Simulator, d).unwrap();
        assert_eq!((s.input_width(), s.output_width()), (116, 200));
        let p = MlpNetwork::build(Role::Proposer, d).unwrap();
        assert_eq!((p.input_width(), p.output_width()), (410, 10));
        let disc = MlpNetwork::build(Role::Discriminator, d).unwrap();
        assert_eq!((disc.input_width(), disc.output_width()), (600, 1));
    }

    #[test]
    fn parameter_counts() {
        let d = dims(10, 40, 20, 100);
        let count = |r| MlpNetwork::build(r, d).unwrap().parameter_count();
        // hand-computed: sum of in*out + out over affine layers
        assert_eq!(count(Role::Conditioner), 400 * 512 + 512 + 512 * 512 + 512 + 512 * 16 + 16);
        assert_eq!(count(Role::Decoder), 16 * 512 + 512 + 512 * 512 + 512 + 512 * 400 + 400);
        let sim = 116 * 128 + 128 + 128 * 256 + 256 + 256 * 512 + 512 + 512 * 1024 + 1024 + 1024 * 200 + 200;
        assert_eq!(count(Role::Simulator), sim);
        assert_eq!(count(Role::HybridSimulator), sim);
        assert_eq!(
            count(Role::Discriminator),
            600 * 512 + 512 + 2 * (512 * 512 + 512) + 512 + 1
        );
        assert_eq!(count(Role::Proposer), 410 * 512 + 512 + 512 * 512 + 512 + 512 * 10 + 10);
    }

    #[test]
    fn role_names() {
        for r in Role::ALL {
            assert_eq!(r.as_str().parse::<Role>().unwrap(), r);
        }
        assert_eq!("encoder".parse::<Role>().unwrap(), Role::Conditioner);
        assert!("critic2".parse::<Role>().is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let d = dims(2, 8, 4, 6);
        let a = MlpNetwork::new(Role::Discriminator, d, 7, &mut stream_rng(7, Stream::Init(0))).unwrap();
        let b = MlpNetwork::new(Role::Discriminator, d, 7, &mut stream_rng(7, Stream::Init(0))).unwrap();
        assert_eq!(a, b);
        for pair in a.params().chunks(2) {
            let bound = 1.0 / (pair[0].nrows() as f64).sqrt();
            assert!(pair[0].iter().all(|w| w.abs() <= bound));
            assert!(pair[1].iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn output_ranges_and_inference_determinism() {
        let d = dims(2, 8, 4, 6);
        let mut rng = stream_rng(3, Stream::Init(1));
        let sim = MlpNetwork::new(Role::Simulator, d, 3, &mut rng).unwrap();
        let hyb = MlpNetwork::new(Role::HybridSimulator, d, 3, &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 22), |(i, j)| ((i * 7 + j) as f64).sin() * 3.0);
        let y = sim.infer(&x).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1.0));
        let yh = hyb.infer(&x).unwrap();
        assert!(yh.iter().all(|v| v.abs() <= 100.0));
        assert_eq!(sim.infer(&x).unwrap(), y);

        // zero pre-activation: tanh(0) * 100 = 0
        let mut zeroed = hyb.clone();
        let last = zeroed.params().len() - 2;
        zeroed.param_mut(last).fill(0.0);
        assert!(zeroed.infer(&x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recorded_inference_matches_direct_inference() {
        let d = dims(2, 8, 4, 6);
        let net = MlpNetwork::new(Role::Discriminator, d, 1, &mut stream_rng(1, Stream::Init(4))).unwrap();
        let x = Array2::from_shape_fn((3, 24), |(i, j)| ((i + 2 * j) as f64).cos());
        let tape = Tape::new();
        let bound = net.bind(&tape, true);
        let y = net.forward(&bound, tape.constant(x.clone()), &mut Mode::Infer).unwrap();
        assert_eq!(*y.value(), net.infer(&x).unwrap());
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let d = dims(2, 8, 4, 6);
        let net = MlpNetwork::build(Role::Conditioner, d).unwrap();
        assert!(net.infer(&Array2::zeros((1, 15))).is_err());
        let bad = vec![affine(4, 8), LR, affine(7, 2)];
        assert!(MlpNetwork::from_layers(Role::Proposer, d, bad).is_err());
        let bad = vec![affine(4, 8), LayerSpec::Dropout(1.0)];
        assert!(MlpNetwork::from_layers(Role::Proposer, d, bad).is_err());
    }
}
