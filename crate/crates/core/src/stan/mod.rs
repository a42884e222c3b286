//! Spatio-temporal attention generator.
//!
//! A window is carried between modules as a `T × n` matrix (time rows,
//! channel columns). Each module encodes it with a kernel-2 convolution,
//! runs multi-head attention over its nodes, and projects back to `T × n`
//! with a residual connection:
//!
//! * spatial: nodes are the `n` channels at every time step (`L = n`),
//!   embeddings come from a per-channel temporal convolution;
//! * temporal: nodes are the `T` time steps (`L = T`), embeddings come from
//!   a convolution that mixes all channels.
//!
//! A final linear map per time step produces the reconstruction.

mod attention;

pub use attention::{multi_head_attention, AttentionOutput};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{glorot_uniform, Graph, NumericsError, ParameterStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    /// Cascade depth `M`.
    pub blocks: usize,
    /// Heads `H` per attention module.
    pub heads: usize,
    /// Embedding width of the spatial module's per-channel encoder.
    pub spatial_dim: usize,
    /// Embedding width of the temporal module's cross-channel encoder.
    pub temporal_dim: usize,
    pub kernel: usize,
    pub use_spatial: bool,
    pub use_temporal: bool,
    pub layer_norm_eps: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            blocks: 3,
            heads: 4,
            spatial_dim: 50,
            temporal_dim: 100,
            kernel: 2,
            use_spatial: true,
            use_temporal: true,
            layer_norm_eps: 1e-5,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        let bad = |detail: &str| {
            Err(NumericsError::Shape {
                node: "attention_config".into(),
                detail: detail.into(),
            })
        };
        if self.blocks == 0 || self.heads == 0 {
            return bad("blocks and heads must be at least 1");
        }
        if self.spatial_dim == 0 || self.temporal_dim == 0 || self.kernel == 0 {
            return bad("dimensions must be positive");
        }
        if !self.use_spatial && !self.use_temporal {
            return bad("at least one of the spatial and temporal modules must be enabled");
        }
        Ok(())
    }
}

/// Attention maps and reconstruction from one forward pass, as plain arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBundle {
    /// `n × T`.
    pub reconstruction: Tensor,
    /// One `H × n × n` map per block (time-averaged per head).
    pub spatial_maps: Vec<Tensor>,
    /// One `H × T × T` map per block.
    pub temporal_maps: Vec<Tensor>,
}

/// Graph handles produced by [`Stan::forward`].
pub struct StanOutput {
    /// `n × T` reconstruction.
    pub reconstruction: Var,
    /// Per block, per head: `T × n × n` (one spatial map per time step).
    pub spatial: Vec<Vec<Var>>,
    /// Per block, per head: `1 × T × T`.
    pub temporal: Vec<Vec<Var>>,
}

impl StanOutput {
    pub fn bundle(&self, g: &Graph) -> AttentionBundle {
        let stack = |heads: &Vec<Var>| -> Tensor {
            let per_head: Vec<Tensor> = heads.iter().map(|&v| time_average(g.value(v))).collect();
            let l = per_head[0].shape()[0];
            let data = per_head.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::new(vec![per_head.len(), l, l], data).expect("stacked map shape")
        };
        AttentionBundle {
            reconstruction: g.value(self.reconstruction).clone(),
            spatial_maps: self.spatial.iter().map(stack).collect(),
            temporal_maps: self.temporal.iter().map(stack).collect(),
        }
    }
}

/// Mean over the leading axis of a `G × L × L` array.
fn time_average(t: &Tensor) -> Tensor {
    let (groups, l) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; l * l];
    for plane in t.data().chunks(l * l) {
        for (o, v) in out.iter_mut().zip(plane) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= groups as f64);
    Tensor::new(vec![l, l], out).expect("map shape")
}

/// The generator's architecture for a fixed channel count and window length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stan {
    pub config: AttentionConfig,
    pub channels: usize,
    pub window_len: usize,
}

fn block_prefix(m: usize, module: &str) -> String {
    format!("stan.b{m}.{module}")
}

impl Stan {
    pub fn new(config: AttentionConfig, channels: usize, window_len: usize) -> Result<Self, NumericsError> {
        config.validate()?;
        if channels == 0 || window_len == 0 {
            return Err(NumericsError::Shape {
                node: "stan".into(),
                detail: "channels and window length must be positive".into(),
            });
        }
        Ok(Self {
            config,
            channels,
            window_len,
        })
    }

    /// Fresh parameters: Glorot-uniform weights, zero biases, unit LayerNorm
    /// gains and zero head-mixing logits.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParameterStore {
        let c = &self.config;
        let n = self.channels;
        let k = c.kernel;
        let mut p = ParameterStore::new();
        for m in 0..c.blocks {
            if c.use_spatial {
                let pre = block_prefix(m, "spatial");
                let d = c.spatial_dim;
                p.insert(format!("{pre}.enc.w"), glorot_uniform(&[d, 1, k], k, d * k, rng));
                p.insert(format!("{pre}.enc.b"), Tensor::zeros(&[d]));
                attention::init_params(&mut p, &pre, d, c.heads, rng);
                p.insert(format!("{pre}.out.w"), glorot_uniform(&[d, 1], d, 1, rng));
                p.insert(format!("{pre}.out.b"), Tensor::zeros(&[1]));
            }
            if c.use_temporal {
                let pre = block_prefix(m, "temporal");
                let d = c.temporal_dim;
                p.insert(format!("{pre}.enc.w"), glorot_uniform(&[d, n, k], n * k, d * k, rng));
                p.insert(format!("{pre}.enc.b"), Tensor::zeros(&[d]));
                attention::init_params(&mut p, &pre, d, c.heads, rng);
                p.insert(format!("{pre}.out.w"), glorot_uniform(&[d, n], d, n, rng));
                p.insert(format!("{pre}.out.b"), Tensor::zeros(&[n]));
            }
        }
        p.insert("stan.head.w", glorot_uniform(&[n, n], n, n, rng));
        p.insert("stan.head.b", Tensor::zeros(&[n]));
        p
    }

    /// Runs the cascade on an `n × T` window.
    ///
    /// With `trainable` false, parameters enter the tape as constants.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParameterStore,
        window: &Tensor,
        trainable: bool,
    ) -> Result<StanOutput, NumericsError> {
        if window.shape() != [self.channels, self.window_len] {
            return Err(NumericsError::Shape {
                node: "stan.input".into(),
                detail: format!(
                    "window {:?}, model expects [{}, {}]",
                    window.shape(),
                    self.channels,
                    self.window_len
                ),
            });
        }
        let leaf = |g: &mut Graph, name: &str| {
            if trainable {
                params.leaf(g, name)
            } else {
                params.frozen(g, name)
            }
        };
        let input = g.constant(window.clone());
        let mut x = g.transpose(input)?;
        let mut spatial = Vec::new();
        let mut temporal = Vec::new();
        for m in 0..self.config.blocks {
            if self.config.use_spatial {
                let (y, maps) = self.spatial_module(g, &leaf, m, x)?;
                x = y;
                spatial.push(maps);
            }
            if self.config.use_temporal {
                let (y, maps) = self.temporal_module(g, &leaf, m, x)?;
                x = y;
                temporal.push(maps);
            }
        }
        let w = leaf(g, "stan.head.w")?;
        let b = leaf(g, "stan.head.b")?;
        let proj = g.matmul(x, w)?;
        let proj = g.add_bias(proj, b)?;
        let reconstruction = g.transpose(proj)?;
        Ok(StanOutput {
            reconstruction,
            spatial,
            temporal,
        })
    }

    /// Channels as nodes. Input and output are `T × n`.
    pub fn spatial_module<L>(&self, g: &mut Graph, leaf: &L, block: usize, x: Var) -> Result<(Var, Vec<Var>), NumericsError>
    where
        L: Fn(&mut Graph, &str) -> Result<Var, NumericsError>,
    {
        let pre = block_prefix(block, "spatial");
        let (t, n) = (self.window_len, self.channels);
        let d = self.config.spatial_dim;
        let k = self.config.kernel;
        let xt = g.transpose(x)?;
        let series = g.reshape(xt, &[n, 1, t])?;
        let w = leaf(g, &format!("{pre}.enc.w"))?;
        let b = leaf(g, &format!("{pre}.enc.b"))?;
        let enc = g.conv1d(series, w, Some(b), k - 1)?;
        let enc = g.relu(enc);
        let nodes = g.permute(enc, &[2, 0, 1])?;
        let att = self.attend(g, leaf, &pre, nodes)?;
        let flat = g.reshape(att.output, &[t * n, d])?;
        let ow = leaf(g, &format!("{pre}.out.w"))?;
        let ob = leaf(g, &format!("{pre}.out.b"))?;
        let y = g.matmul(flat, ow)?;
        let y = g.add_bias(y, ob)?;
        let y = g.reshape(y, &[t, n])?;
        Ok((g.add(x, y)?, att.maps))
    }

    /// Time steps as nodes. Input and output are `T × n`.
    pub fn temporal_module<L>(&self, g: &mut Graph, leaf: &L, block: usize, x: Var) -> Result<(Var, Vec<Var>), NumericsError>
    where
        L: Fn(&mut Graph, &str) -> Result<Var, NumericsError>,
    {
        let pre = block_prefix(block, "temporal");
        let (t, n) = (self.window_len, self.channels);
        let d = self.config.temporal_dim;
        let k = self.config.kernel;
        let xt = g.transpose(x)?;
        let series = g.reshape(xt, &[1, n, t])?;
        let w = leaf(g, &format!("{pre}.enc.w"))?;
        let b = leaf(g, &format!("{pre}.enc.b"))?;
        let enc = g.conv1d(series, w, Some(b), k - 1)?;
        let enc = g.relu(enc);
        let enc = g.reshape(enc, &[d, t])?;
        let enc = g.transpose(enc)?;
        let nodes = g.reshape(enc, &[1, t, d])?;
        let att = self.attend(g, leaf, &pre, nodes)?;
        let flat = g.reshape(att.output, &[t, d])?;
        let ow = leaf(g, &format!("{pre}.out.w"))?;
        let ob = leaf(g, &format!("{pre}.out.b"))?;
        let y = g.matmul(flat, ow)?;
        let y = g.add_bias(y, ob)?;
        Ok((g.add(x, y)?, att.maps))
    }

    fn attend<L>(&self, g: &mut Graph, leaf: &L, pre: &str, nodes: Var) -> Result<AttentionOutput, NumericsError>
    where
        L: Fn(&mut Graph, &str) -> Result<Var, NumericsError>,
    {
        let heads = (0..self.config.heads)
            .map(|k| leaf(g, &format!("{pre}.attn.w{k}")))
            .collect::<Result<Vec<_>, _>>()?;
        let mix = leaf(g, &format!("{pre}.attn.a"))?;
        let gamma = leaf(g, &format!("{pre}.ln.gamma"))?;
        let beta = leaf(g, &format!("{pre}.ln.beta"))?;
        multi_head_attention(g, nodes, &heads, mix, gamma, beta, self.config.layer_norm_eps)
    }

    /// Forward pass returning plain arrays.
    pub fn run(&self, params: &ParameterStore, window: &Tensor) -> Result<AttentionBundle, NumericsError> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, params, window, false)?;
        Ok(out.bundle(&g))
    }
}

/// Mean squared error over all `n × T` entries.
pub fn reconstruction_loss(bundle: &AttentionBundle, window: &Tensor) -> Result<f64, NumericsError> {
    if bundle.reconstruction.shape() != window.shape() {
        return Err(NumericsError::Shape {
            node: "reconstruction_loss".into(),
            detail: format!("{:?} vs {:?}", bundle.reconstruction.shape(), window.shape()),
        });
    }
    let n = window.len() as f64;
    Ok(bundle
        .reconstruction
        .data()
        .iter()
        .zip(window.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}
