//! The MLP that maps load perturbations to power-flow states.
//!
//! Hidden layers are `Linear + tanh`, optionally followed by layer
//! normalization; the final layer is linear. Raw outputs are decoded into a
//! full [`StateVector`] with positivity-enforcing voltage and bounded-angle
//! transforms, while the slack bus is pinned to the case reference.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{BusSets, CaseData};
use crate::power::{PerturbationVector, StateVector};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub const MIN_HIDDEN: usize = 256;
pub const MAX_HIDDEN: usize = 512;
pub const LAYER_CHOICES: [usize; 4] = [5, 6, 7, 8];
pub const LAYERNORM_EPS: f64 = 1e-5;
/// Standard deviation of the output-layer weights at initialization.
pub const OUTPUT_WEIGHT_SD: f64 = 0.1;

/// Network shape and output layout. `layers` counts linear layers,
/// including the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub d_in: usize,
    pub d_out: usize,
    pub d_hidden: usize,
    pub layers: usize,
    pub use_layernorm: bool,
    pub theta_scale: f64,
    pub n_pv: usize,
    pub n_pq: usize,
}

/// Explicit settings that take precedence over the sizing rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchOverrides {
    pub d_hidden: Option<usize>,
    pub layers: Option<usize>,
    pub use_layernorm: Option<bool>,
    pub theta_scale: Option<f64>,
}

/// Width and depth from the input dimension alone.
pub fn size_for_input(d_in: usize) -> (usize, usize) {
    let width = (2 * d_in).clamp(MIN_HIDDEN, MAX_HIDDEN);
    let depth = match d_in {
        0..=50 => 5,
        51..=150 => 6,
        151..=300 => 7,
        _ => 8,
    };
    (width, depth)
}

/// Size the network for a case's bus sets.
pub fn auto_config(sets: &BusSets, overrides: &ArchOverrides) -> Result<ArchitectureSpec, NetworkError> {
    let d_in = sets.input_dim();
    let d_out = sets.output_dim();
    let (width, depth) = size_for_input(d_in);
    let d_hidden = overrides.d_hidden.unwrap_or(width);
    let layers = overrides.layers.unwrap_or(depth);
    if !(MIN_HIDDEN..=MAX_HIDDEN).contains(&d_hidden) {
        return Err(NetworkError::InvalidArchitecture(format!(
            "d_hidden {d_hidden} outside [{MIN_HIDDEN}, {MAX_HIDDEN}]"
        )));
    }
    if !LAYER_CHOICES.contains(&layers) {
        return Err(NetworkError::InvalidArchitecture(format!("layers {layers} not in {LAYER_CHOICES:?}")));
    }
    let theta_scale = overrides.theta_scale.unwrap_or(FRAC_PI_2);
    if !(theta_scale > 0.0 && theta_scale.is_finite()) {
        return Err(NetworkError::InvalidArchitecture(format!("theta_scale {theta_scale} must be positive")));
    }
    Ok(ArchitectureSpec {
        d_in,
        d_out,
        d_hidden,
        layers,
        use_layernorm: overrides.use_layernorm.unwrap_or(layers >= 7),
        theta_scale,
        n_pv: sets.pv.len(),
        n_pq: sets.pq.len(),
    })
}

impl ArchitectureSpec {
    /// Output slot holding each PQ bus's voltage logit.
    pub fn pq_voltage_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_pq).map(move |k| self.n_pv + 2 * k)
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.d_in, self.d_hidden)];
        dims.extend(std::iter::repeat_n((self.d_hidden, self.d_hidden), self.layers - 2));
        dims.push((self.d_hidden, self.d_out));
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub offset: Array1<f64>,
}

/// One linear layer; `weight` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: Option<LayerNorm>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
            norm: self
                .norm
                .as_ref()
                .map(|n| LayerNorm { gain: Array1::zeros(n.gain.len()), offset: Array1::zeros(n.offset.len()) }),
        }
    }

    /// Every parameter tensor, flattened, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![self.weight.as_slice().expect("standard layout"), self.bias.as_slice().unwrap()];
        if let Some(n) = &self.norm {
            v.push(n.gain.as_slice().unwrap());
            v.push(n.offset.as_slice().unwrap());
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![self.weight.as_slice_mut().expect("standard layout"), self.bias.as_slice_mut().unwrap()];
        if let Some(n) = &mut self.norm {
            v.push(n.gain.as_slice_mut().unwrap());
            v.push(n.offset.as_slice_mut().unwrap());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub spec: ArchitectureSpec,
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn num_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.tensors()).map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.tensors()).flat_map(|t| t.iter().copied()).collect()
    }

    /// Overwrite all parameters from a flat vector in [`flatten`](Self::flatten) order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), NetworkError> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(NetworkError::Dimension { expected: n, got: flat.len() });
        }
        let mut pos = 0;
        for layer in &mut self.layers {
            for t in layer.tensors_mut() {
                t.copy_from_slice(&flat[pos..pos + t.len()]);
                pos += t.len();
            }
        }
        Ok(())
    }

    /// Parameters of identical shape, all zero.
    pub fn zeros_like(&self) -> NetworkParams {
        NetworkParams { spec: self.spec.clone(), layers: self.layers.iter().map(Layer::zeros_like).collect() }
    }

    /// Single-sample forward pass.
    pub fn forward(&self, u: &PerturbationVector) -> Result<Vec<f64>, NetworkError> {
        if u.0.len() != self.spec.d_in {
            return Err(NetworkError::Dimension { expected: self.spec.d_in, got: u.0.len() });
        }
        let x = Array2::from_shape_vec((1, u.0.len()), u.0.clone()).expect("row vector");
        Ok(self.forward_batch(&x)?.row(0).to_vec())
    }

    /// Forward pass over a `(batch, d_in)` matrix. Rows are independent.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>, NetworkError> {
        Ok(self.forward_cached(inputs)?.output)
    }

    /// Forward pass retaining the intermediate activations for backpropagation.
    pub fn forward_cached(&self, inputs: &Array2<f64>) -> Result<ForwardCache, NetworkError> {
        if inputs.ncols() != self.spec.d_in {
            return Err(NetworkError::Dimension { expected: self.spec.d_in, got: inputs.ncols() });
        }
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut normalized = Vec::with_capacity(self.layers.len());
        let mut inv_std = Vec::with_capacity(self.layers.len());
        let mut x = inputs.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weight.t());
            z += &layer.bias;
            if k == last {
                layer_inputs.push(x);
                return Ok(ForwardCache { layer_inputs, activations, normalized, inv_std, output: z });
            }
            z.mapv_inplace(f64::tanh);
            let out = match &layer.norm {
                Some(norm) => {
                    let (xhat, istd) = normalize_rows(&z);
                    let mut y = &xhat * &norm.gain;
                    y += &norm.offset;
                    normalized.push(Some(xhat));
                    inv_std.push(Some(istd));
                    y
                }
                None => {
                    normalized.push(None);
                    inv_std.push(None);
                    z.clone()
                }
            };
            activations.push(z);
            layer_inputs.push(x);
            x = out;
        }
        unreachable!("network has at least one layer")
    }
}

/// Row-wise standardization: returns `(x̂, 1/σ)` with `σ = sqrt(var + eps)`.
fn normalize_rows(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let width = z.ncols() as f64;
    let mut xhat = z.clone();
    let mut istd = Array1::zeros(z.nrows());
    for (mut row, s) in xhat.axis_iter_mut(Axis(0)).zip(istd.iter_mut()) {
        let mean = row.sum() / width;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / width;
        *s = 1.0 / (var + LAYERNORM_EPS).sqrt();
        let inv = *s;
        row.mapv_inplace(|v| v * inv);
    }
    (xhat, istd)
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each linear layer.
    pub layer_inputs: Vec<Array2<f64>>,
    /// tanh outputs of each hidden layer (before normalization).
    pub activations: Vec<Array2<f64>>,
    /// Standardized activations where layer normalization is enabled.
    pub normalized: Vec<Option<Array2<f64>>>,
    pub inv_std: Vec<Option<Array1<f64>>>,
    /// Raw network output `(batch, d_out)`.
    pub output: Array2<f64>,
}

/// Deterministic initialization: Xavier-uniform hidden weights with zero
/// biases; output weights `N(0, 0.1²)`; output bias 1.0 on PQ voltage slots
/// and 0 on angle slots.
pub fn init_network(spec: &ArchitectureSpec, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let output_dist = Normal::new(0.0, OUTPUT_WEIGHT_SD).expect("valid sd");
    let dims = spec.layer_dims();
    let last = dims.len() - 1;
    let layers = dims
        .iter()
        .enumerate()
        .map(|(k, &(fan_in, fan_out))| {
            let weight = if k == last {
                Array2::from_shape_simple_fn((fan_out, fan_in), || output_dist.sample(&mut rng))
            } else {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-a..=a))
            };
            let mut bias = Array1::zeros(fan_out);
            if k == last {
                for slot in spec.pq_voltage_slots() {
                    bias[slot] = 1.0;
                }
            }
            let norm = (k != last && spec.use_layernorm)
                .then(|| LayerNorm { gain: Array1::ones(fan_out), offset: Array1::zeros(fan_out) });
            Layer { weight, bias, norm }
        })
        .collect();
    NetworkParams { spec: spec.clone(), layers }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Offset added to the softplus so decoded PQ voltages sit near 1.0 p.u.
pub const VOLTAGE_FLOOR: f64 = 0.5;

/// Turn raw outputs into a full state: slack from the case reference, PV
/// magnitudes from their setpoints, PQ magnitudes `softplus(z) + 0.5`, and
/// every free angle `theta_scale · tanh(z)`.
pub fn decode(raw: ArrayView1<f64>, spec: &ArchitectureSpec, case: &CaseData) -> StateVector {
    let sets = &case.bus_sets;
    debug_assert_eq!(raw.len(), spec.d_out);
    let n = case.n_buses();
    let mut vm = vec![0.0; n];
    let mut va = vec![0.0; n];
    vm[sets.slack] = case.voltage_setpoint(sets.slack);
    va[sets.slack] = case.slack_angle();
    for (k, &i) in sets.pv.iter().enumerate() {
        vm[i] = case.voltage_setpoint(i);
        va[i] = spec.theta_scale * raw[k].tanh();
    }
    for (k, &j) in sets.pq.iter().enumerate() {
        let base = sets.pv.len() + 2 * k;
        vm[j] = softplus(raw[base]) + VOLTAGE_FLOOR;
        va[j] = spec.theta_scale * raw[base + 1].tanh();
    }
    StateVector { vm, va }
}

/// Stack perturbations into a `(batch, d_in)` matrix.
pub fn stack_inputs(batch: &[PerturbationVector], d_in: usize) -> Array2<f64> {
    let mut m = Array2::zeros((batch.len(), d_in));
    for (mut row, u) in m.axis_iter_mut(Axis(0)).zip(batch) {
        row.assign(&ArrayView1::from(&u.0[..]));
    }
    m
}

/// A trained network bound to its case: predicts full states from perturbations.
#[derive(Debug, Clone)]
pub struct NeuralSolver<'a> {
    pub params: &'a NetworkParams,
    pub case: &'a CaseData,
}

impl NeuralSolver<'_> {
    pub fn predict(&self, u: &PerturbationVector) -> Result<StateVector, NetworkError> {
        let z = self.params.forward(u)?;
        Ok(decode(ArrayView1::from(&z[..]), &self.params.spec, self.case))
    }

    pub fn predict_batch(&self, batch: &[PerturbationVector]) -> Result<Vec<StateVector>, NetworkError> {
        let z = self.params.forward_batch(&stack_inputs(batch, self.params.spec.d_in))?;
        Ok(z.axis_iter(Axis(0)).map(|row| decode(row, &self.params.spec, self.case)).collect())
    }
}

pub const CHECKPOINT_FORMAT: &str = "gridflow-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model container (JSON). Parameter tensors are flattened
/// row-major per layer in the order weight, bias, gain, offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: ArchitectureSpec,
    pub seed: u64,
    pub layers: Vec<LayerRecord>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(params: &NetworkParams, seed: u64, metadata: BTreeMap<String, serde_json::Value>) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| LayerRecord {
                weight: l.weight.iter().copied().collect(),
                bias: l.bias.to_vec(),
                gain: l.norm.as_ref().map(|n| n.gain.to_vec()),
                offset: l.norm.as_ref().map(|n| n.offset.to_vec()),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: params.spec.clone(),
            seed,
            layers,
            metadata,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| NetworkError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(NetworkError::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(NetworkError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        Ok(ck)
    }

    /// Rebuild parameters, checking every tensor against the architecture.
    pub fn params(&self) -> Result<NetworkParams, NetworkError> {
        let mut params = init_network(&self.architecture, 0);
        if params.layers.len() != self.layers.len() {
            return Err(NetworkError::Checkpoint(format!(
                "expected {} layers, found {}",
                params.layers.len(),
                self.layers.len()
            )));
        }
        for (k, (layer, rec)) in params.layers.iter_mut().zip(&self.layers).enumerate() {
            let mut src: Vec<&Vec<f64>> = vec![&rec.weight, &rec.bias];
            match (&layer.norm, &rec.gain, &rec.offset) {
                (Some(_), Some(g), Some(o)) => {
                    src.push(g);
                    src.push(o);
                }
                (None, None, None) => {}
                _ => return Err(NetworkError::Checkpoint(format!("layer {k}: normalization mismatch"))),
            }
            for (dst, s) in layer.tensors_mut().into_iter().zip(src) {
                if dst.len() != s.len() {
                    return Err(NetworkError::Checkpoint(format!(
                        "layer {k}: tensor length {} != {}",
                        s.len(),
                        dst.len()
                    )));
                }
                dst.copy_from_slice(s);
            }
        }
        Ok(params)
    }
}
