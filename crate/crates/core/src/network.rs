//! Fully-connected tanh networks used for the solution, source and
//! recurrent-prediction models.
//!
//! Parameters are stored in one flat buffer, layer by layer: the weight
//! matrix of layer `l` (row-major, `out x in`) followed by its bias vector.
//! The same ordering is used for every parameter gradient in the crate.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_width: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Default solution/source architecture: 2-20-20-20-20-1.
    pub fn default_field(seed: u64) -> Self {
        Self {
            input_width: 2,
            hidden_layers: 4,
            hidden_width: 20,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::config("network input width must be >= 1"));
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::config(
                "network needs at least one hidden layer of width >= 1",
            ));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_layers + 2);
        sizes.push(self.input_width);
        sizes.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        sizes.push(1);
        sizes
    }
}

/// Weights and biases of a tanh MLP with a scalar affine output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    data: Vec<f64>,
}

/// Number of scalars needed by an MLP with the given layer sizes.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::config("an MLP needs at least an input and an output layer"));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::config("layer sizes must be positive"));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::config("the output layer must have width 1"));
    }
    Ok(())
}

impl MlpParams {
    /// Xavier-uniform weights, zero biases, deterministic in the seed.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layer_sizes = config.layer_sizes();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut data = Vec::with_capacity(param_count(&layer_sizes));
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                data.push(rng.gen_range(-bound..=bound));
            }
            data.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { layer_sizes, data })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            data: vec![0.0; param_count(layer_sizes)],
        })
    }

    /// Build from per-layer weight matrices (row-major) and bias vectors.
    pub fn from_layers(layer_sizes: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::config(format!(
                "expected {layers} weight matrices and bias vectors"
            )));
        }
        let mut data = Vec::with_capacity(param_count(layer_sizes));
        for l in 0..layers {
            let (n_in, n_out) = (layer_sizes[l], layer_sizes[l + 1]);
            if weights[l].len() != n_in * n_out || biases[l].len() != n_out {
                return Err(Error::config(format!(
                    "layer {l}: expected {n_out}x{n_in} weights and {n_out} biases"
                )));
            }
            data.extend_from_slice(&weights[l]);
            data.extend_from_slice(&biases[l]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            data,
        })
    }

    pub fn unflatten(layer_sizes: &[usize], flat: &[f64]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let expected = param_count(layer_sizes);
        if flat.len() != expected {
            return Err(Error::config(format!(
                "parameter vector has length {}, expected {expected}",
                flat.len()
            )));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            data: flat.to_vec(),
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.data.len() {
            return Err(Error::config(format!(
                "parameter vector has length {}, expected {}",
                flat.len(),
                self.data.len()
            )));
        }
        self.data.copy_from_slice(flat);
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Offset of layer `l`'s weights in the flat buffer.
    pub(crate) fn layer_offset(&self, l: usize) -> usize {
        param_count(&self.layer_sizes[..=l])
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l);
        let n = self.layer_sizes[l] * self.layer_sizes[l + 1];
        &self.data[off..off + n]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l) + self.layer_sizes[l] * self.layer_sizes[l + 1];
        &self.data[off..off + self.layer_sizes[l + 1]]
    }

    /// Plain scalar forward pass: tanh on hidden layers, affine output.
    pub fn forward(&self, inputs: &[f64]) -> Result<f64> {
        if inputs.len() != self.input_width() {
            return Err(Error::config(format!(
                "network expects {} inputs, got {}",
                self.input_width(),
                inputs.len()
            )));
        }
        Ok(self.forward_unchecked(inputs))
    }

    pub(crate) fn forward_unchecked(&self, inputs: &[f64]) -> f64 {
        let layers = self.num_layers();
        let mut act = inputs.to_vec();
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.data[off..off + n_in * n_out];
            let b = &self.data[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let mut next = Vec::with_capacity(n_out);
            for i in 0..n_out {
                let row = &w[i * n_in..(i + 1) * n_in];
                let z = b[i] + dot(row, &act);
                next.push(if l + 1 < layers { z.tanh() } else { z });
            }
            act = next;
        }
        act[0]
    }

    /// Forward pass that also adds `scale * d(output)/d(theta)` into `grad`.
    /// Returns the output value.
    pub(crate) fn accumulate_value_grad(&self, inputs: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let layers = self.num_layers();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        acts.push(inputs.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.data[off..off + n_in * n_out];
            let b = &self.data[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let prev = &acts[l];
            let next: Vec<f64> = (0..n_out)
                .map(|i| {
                    let z = b[i] + dot(&w[i * n_in..(i + 1) * n_in], prev);
                    if l + 1 < layers {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(next);
        }
        let value = acts[layers][0];

        let mut delta = vec![scale];
        let mut end = self.data.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let start = end - (n_in * n_out + n_out);
            let w = &self.data[start..start + n_in * n_out];
            let prev = &acts[l];
            {
                let (gw, gb) = grad[start..end].split_at_mut(n_in * n_out);
                for i in 0..n_out {
                    let d = delta[i];
                    gb[i] += d;
                    for (g, a) in gw[i * n_in..(i + 1) * n_in].iter_mut().zip(prev) {
                        *g += d * a;
                    }
                }
            }
            if l > 0 {
                let mut back = vec![0.0; n_in];
                for i in 0..n_out {
                    let d = delta[i];
                    for (bk, wij) in back.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                        *bk += d * wij;
                    }
                }
                // prev holds tanh outputs of layer l-1
                for (bk, a) in back.iter_mut().zip(prev) {
                    *bk *= 1.0 - a * a;
                }
                delta = back;
            }
            end = start;
        }
        value
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            seed,
            params: self.data.clone(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const CHECKPOINT_FORMAT: &str = "pdedisc-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk network checkpoint (JSON).
///
/// ```json
/// {"format":"pdedisc-mlp","version":1,"layer_sizes":[2,20,1],"seed":7,"params":[...]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn into_params(self) -> Result<MlpParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!("unknown checkpoint format '{}'", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        MlpParams::unflatten(&self.layer_sizes, &self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}
