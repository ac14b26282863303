use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv_output_extent, Graph, ParameterSet, Scalar, Tensor, Var};

pub const KHAT: &str = "khat";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub padding: usize,
    /// 2×2 max-pool after the ReLU.
    #[serde(default = "yes")]
    pub pool: bool,
}

fn default_kernel() -> usize {
    3
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(−1/√fan_in, 1/√fan_in)` for weights and biases.
    FanInUniform,
    /// `N(0, 2/fan_in)` weights, zero biases.
    HeNormal,
}

/// `f`: conv blocks, flatten, dense to `feature_dim` (no activation).
/// `g`: optional ReLU hidden layers, then dense to `classes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub convs: Vec<ConvSpec>,
    pub feature_dim: usize,
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    pub classes: usize,
    pub init: InitScheme,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            in_channels: 1,
            height: 28,
            width: 28,
            convs: vec![
                ConvSpec {
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    pool: true,
                },
                ConvSpec {
                    out_channels: 32,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    pool: true,
                },
            ],
            feature_dim: 128,
            head_hidden: Vec::new(),
            classes: 10,
            init: InitScheme::FanInUniform,
        }
    }
}

impl ModelSpec {
    /// One conv block and a narrow feature layer, for desk-scale checks.
    pub fn toy(side: usize, feature_dim: usize) -> Self {
        ModelSpec {
            in_channels: 1,
            height: side,
            width: side,
            convs: vec![ConvSpec {
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
                pool: true,
            }],
            feature_dim,
            head_hidden: Vec::new(),
            classes: 10,
            init: InitScheme::FanInUniform,
        }
    }

    /// `(channels, height, width)` after the conv stack.
    pub fn conv_output(&self) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (self.in_channels, self.height, self.width);
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv_output_extent(h, conv.kernel, conv.stride, conv.padding)
                .map_err(|e| Error::invalid(format!("conv {i}: {e}")))?;
            w = conv_output_extent(w, conv.kernel, conv.stride, conv.padding)
                .map_err(|e| Error::invalid(format!("conv {i}: {e}")))?;
            if conv.pool {
                if h < 2 || w < 2 {
                    return Err(Error::invalid(format!("conv {i}: {h}x{w} map too small to pool")));
                }
                h /= 2;
                w /= 2;
            }
            c = conv.out_channels;
        }
        Ok((c, h, w))
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.feature_dim == 0 || self.classes < 2 {
            return Err(Error::invalid(
                "model needs input channels, a feature width and at least 2 classes",
            ));
        }
        if self.convs.iter().any(|c| c.out_channels == 0 || c.kernel == 0) || self.head_hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        self.conv_output().map(|_| ())
    }

    /// Parameter names and shapes in registration order; `khat` is last.
    pub fn parameter_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut out = Vec::new();
        let mut c_in = self.in_channels;
        for (i, conv) in self.convs.iter().enumerate() {
            out.push((
                format!("f.conv{i}.weight"),
                vec![conv.out_channels, c_in, conv.kernel, conv.kernel],
            ));
            out.push((format!("f.conv{i}.bias"), vec![conv.out_channels]));
            c_in = conv.out_channels;
        }
        let (c, h, w) = self.conv_output()?;
        out.push(("f.dense.weight".into(), vec![c * h * w, self.feature_dim]));
        out.push(("f.dense.bias".into(), vec![self.feature_dim]));
        let mut width = self.feature_dim;
        for (i, &hidden) in self
            .head_hidden
            .iter()
            .chain(std::iter::once(&self.classes))
            .enumerate()
        {
            out.push((format!("g.dense{i}.weight"), vec![width, hidden]));
            out.push((format!("g.dense{i}.bias"), vec![hidden]));
            width = hidden;
        }
        out.push((KHAT.into(), vec![]));
        Ok(out)
    }
}

/// Seeded initialization; `khat` is drawn from a standard normal.
pub fn build_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ParameterSet<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::new();
    let shapes = spec.parameter_shapes()?;
    let mut fan_in = 1;
    for (name, shape) in shapes {
        let value = if name == KHAT {
            let z: f64 = StandardNormal.sample(&mut rng);
            Tensor::scalar(T::from_f64(z))
        } else if name.ends_with(".weight") {
            // Biases reuse the fan-in of the weight registered just before them.
            fan_in = if name.contains("dense") {
                shape[0]
            } else {
                shape[1..].iter().product()
            };
            let n = shape.iter().product::<usize>();
            let data: Vec<T> = match spec.init {
                InitScheme::FanInUniform => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect()
                }
                InitScheme::HeNormal => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            T::from_f64(std * z)
                        })
                        .collect()
                }
            };
            Tensor::new(shape, data)?
        } else {
            let n = shape.iter().product::<usize>();
            let data: Vec<T> = match spec.init {
                InitScheme::FanInUniform => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect()
                }
                InitScheme::HeNormal => vec![T::zero(); n],
            };
            Tensor::new(shape, data)?
        };
        params.insert(name, value)?;
    }
    Ok(params)
}

/// `Φ = f(x)` for `x` of shape `[n, c, h, w]`; returns `[n, feature_dim]`.
pub fn features<T: Scalar>(g: &mut Graph<T>, params: &ParameterSet<T>, spec: &ModelSpec, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 || shape[1..] != [spec.in_channels, spec.height, spec.width] {
        return Err(Error::ShapeMismatch {
            op: "features",
            lhs: shape,
            rhs: vec![0, spec.in_channels, spec.height, spec.width],
        });
    }
    let mut h = x;
    for (i, conv) in spec.convs.iter().enumerate() {
        let k = g.param(params, &format!("f.conv{i}.weight"))?;
        let b = g.param(params, &format!("f.conv{i}.bias"))?;
        h = g.conv2d(h, k, conv.stride, conv.padding)?;
        h = g.add_channel_bias(h, b)?;
        h = g.relu(h);
        if conv.pool {
            h = g.maxpool2(h)?;
        }
    }
    h = g.flatten(h)?;
    let w = g.param(params, "f.dense.weight")?;
    let b = g.param(params, "f.dense.bias")?;
    let h = g.matmul(h, w)?;
    g.add_bias(h, b)
}

/// Class scores `g(Φ)` (logits).
pub fn head<T: Scalar>(g: &mut Graph<T>, params: &ParameterSet<T>, spec: &ModelSpec, phi: Var) -> Result<Var> {
    let layers = spec.head_hidden.len() + 1;
    let mut h = phi;
    for i in 0..layers {
        let w = g.param(params, &format!("g.dense{i}.weight"))?;
        let b = g.param(params, &format!("g.dense{i}.bias"))?;
        h = g.matmul(h, w)?;
        h = g.add_bias(h, b)?;
        if i + 1 < layers {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Verifies that `params` has exactly the names and shapes `spec` declares.
pub fn check_parameters<T: Scalar>(spec: &ModelSpec, params: &ParameterSet<T>) -> Result<()> {
    let expected = spec.parameter_shapes()?;
    if expected.len() != params.len() {
        return Err(Error::invalid(format!(
            "model declares {} parameters, found {}",
            expected.len(),
            params.len()
        )));
    }
    for (name, shape) in expected {
        let have = params.value(&name)?.shape();
        if have != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "check_parameters",
                lhs: have.to_vec(),
                rhs: shape,
            });
        }
    }
    Ok(())
}
