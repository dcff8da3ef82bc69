//! Differentiable surrogate editors `f(x, c) -> y`.
//!
//! Two architecture classes are provided:
//!
//! * `cond-conv`: a stack of 3x3 convolutions with tanh activations where each
//!   layer adds a bias field that is a linear function of the embedding.
//! * `cond-mlp`: a per-pixel MLP applied to every 3x3 patch, with the
//!   embedding concatenated to the patch at the input layer.
//!
//! Both end in `0.5 + 0.5 tanh(.)` so edited images stay in `(0, 1)`. No layer
//! carries a constant bias, so `c = 0` removes every conditioning term and a
//! zero image maps to a zero latent.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndtensor::{Graph, Tensor, Var};

/// Multiplier applied to `uniform(-0.5, 0.5) / sqrt(fan_in)` weights.
pub const INIT_GAIN: f64 = 4.0;

/// Extra factor on the embedding weights. Keeps the edit smooth enough in
/// `c` that sign steps of a few hundredths still descend.
pub const COND_GAIN: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "cond-conv")]
    CondConv,
    #[serde(rename = "cond-mlp")]
    CondMlp,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::CondConv => "cond-conv",
            Family::CondMlp => "cond-mlp",
        }
    }

    fn default_depth(self) -> [usize; 2] {
        match self {
            Family::CondConv => [2, 3],
            Family::CondMlp => [1, 2],
        }
    }

    fn default_width(self) -> [usize; 2] {
        match self {
            Family::CondConv => [8, 12],
            Family::CondMlp => [12, 16],
        }
    }

    fn stream(self) -> u64 {
        match self {
            Family::CondConv => 1,
            Family::CondMlp => 2,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cond-conv" => Ok(Family::CondConv),
            "cond-mlp" => Ok(Family::CondMlp),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

fn default_channels() -> usize {
    3
}

fn default_embed_dim() -> usize {
    16
}


/// Recipe for one member of a model family.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFamilySpec {
    pub family: String,
    pub seed: u64,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// Inclusive range the hidden width is drawn from; family default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_range: Option<[usize; 2]>,
    /// Inclusive range the depth is drawn from; family default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_range: Option<[usize; 2]>,
}

impl ModelFamilySpec {
    pub fn new(family: Family, seed: u64) -> Self {
        Self {
            family: family.name().to_string(),
            seed,
            channels: default_channels(),
            embed_dim: default_embed_dim(),
            width_range: None,
            depth_range: None,
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim;
        self
    }

    pub fn label(&self) -> String {
        format!("{}#{}", self.family, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub family: Family,
    pub seed: u64,
    pub channels: usize,
    pub embed_dim: usize,
    pub width: usize,
    /// Conv layers for `cond-conv`; hidden 1x1 layers after the patch layer for `cond-mlp`.
    pub depth: usize,
}

/// A differentiable editor. Implementations record their computation on a
/// [`Graph`] so gradients with respect to both the image and the embedding
/// are available.
pub trait EditModel: Send + Sync {
    fn descriptor(&self) -> &ModelDescriptor;

    fn forward_on(&self, g: &Graph, x: Var, c: Var) -> Result<Var>;

    /// The conditioning-free first half of the network.
    fn encoder_on(&self, _g: &Graph, _x: Var) -> Result<Var> {
        Err(Error::NoEncoder)
    }

    fn forward(&self, x: &Tensor, c: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let (xv, cv) = (g.constant(x.clone())?, g.constant(c.clone())?);
        let y = self.forward_on(&g, xv, cv)?;
        Ok(g.value(y))
    }

    fn encoder_output(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let xv = g.constant(x.clone())?;
        let z = self.encoder_on(&g, xv)?;
        Ok(g.value(z))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    /// `[k, k, c_in, c_out]`
    kernel: Tensor,
    /// `[embed_dim, c_out]` when the layer is conditioned.
    cond: Option<Tensor>,
    pad: usize,
}

impl Layer {
    fn apply(&self, g: &Graph, h: Var, c: Option<Var>) -> Result<Var> {
        let k = g.constant(self.kernel.clone())?;
        let pre = g.conv2d(h, k, self.pad)?;
        match (&self.cond, c) {
            (Some(w), Some(c)) => {
                let d = w.shape()[0];
                let cout = w.shape()[1];
                let row = g.reshape(c, &[1, d])?;
                let b = g.matmul(row, g.constant(w.clone())?)?;
                let b = g.reshape(b, &[cout])?;
                let field = g.broadcast(b, &g.shape(pre))?;
                g.add(pre, field)
            }
            _ => Ok(pre),
        }
    }
}

/// Randomly initialised member of a [`Family`].
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    descriptor: ModelDescriptor,
    layers: Vec<Layer>,
}

fn uniform_weights(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let scale = INIT_GAIN / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-0.5..0.5) * scale)
}

fn draw_in(range: [usize; 2], rng: &mut ChaCha8Rng) -> Result<usize> {
    let [lo, hi] = range;
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("invalid range [{lo}, {hi}]")));
    }
    Ok(rng.gen_range(lo..=hi))
}

/// Builds the model described by `spec`; identical specs give bitwise-identical parameters.
pub fn build_model(spec: &ModelFamilySpec) -> Result<Surrogate> {
    let family: Family = spec.family.parse()?;
    if spec.channels == 0 || spec.embed_dim == 0 {
        return Err(Error::Config("channels and embed_dim must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(family.stream());
    let depth = draw_in(spec.depth_range.unwrap_or(family.default_depth()), &mut rng)?;
    let width = draw_in(spec.width_range.unwrap_or(family.default_width()), &mut rng)?;
    let (ch, d) = (spec.channels, spec.embed_dim);

    let mut layers = Vec::new();
    match family {
        Family::CondConv => {
            if depth < 2 {
                return Err(Error::Config("cond-conv needs at least 2 layers".into()));
            }
            for i in 0..depth {
                let cin = if i == 0 { ch } else { width };
                let cout = if i + 1 == depth { ch } else { width };
                layers.push(Layer {
                    kernel: uniform_weights(&[3, 3, cin, cout], 9 * cin, &mut rng),
                    cond: Some(uniform_weights(&[d, cout], d, &mut rng).scale(COND_GAIN)),
                    pad: 1,
                });
            }
        }
        Family::CondMlp => {
            // patch layer sees 9*ch pixel values plus the embedding
            let fan = 9 * ch + d;
            layers.push(Layer {
                kernel: uniform_weights(&[3, 3, ch, width], fan, &mut rng),
                cond: Some(uniform_weights(&[d, width], fan, &mut rng).scale(COND_GAIN)),
                pad: 1,
            });
            for _ in 0..depth {
                layers.push(Layer {
                    kernel: uniform_weights(&[1, 1, width, width], width, &mut rng),
                    cond: None,
                    pad: 0,
                });
            }
            layers.push(Layer {
                kernel: uniform_weights(&[1, 1, width, ch], width, &mut rng),
                cond: None,
                pad: 0,
            });
        }
    }
    Ok(Surrogate {
        descriptor: ModelDescriptor {
            family,
            seed: spec.seed,
            channels: ch,
            embed_dim: d,
            width,
            depth,
        },
        layers,
    })
}

impl Surrogate {
    /// Every parameter tensor in layer order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.kernel).chain(l.cond.as_ref()))
            .collect()
    }

    fn check_image(&self, g: &Graph, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.descriptor.channels {
            return Err(Error::shape("model input", &s, &[0, 0, self.descriptor.channels]));
        }
        Ok(())
    }

    fn encoder_layers(&self) -> usize {
        match self.descriptor.family {
            Family::CondConv => (self.layers.len() / 2).max(1),
            Family::CondMlp => 1,
        }
    }
}

impl EditModel for Surrogate {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    fn forward_on(&self, g: &Graph, x: Var, c: Var) -> Result<Var> {
        self.check_image(g, x)?;
        let cs = g.shape(c);
        if cs != [self.descriptor.embed_dim] {
            return Err(Error::shape("embedding", &cs, &[self.descriptor.embed_dim]));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.apply(g, h, Some(c))?;
            h = g.tanh(pre)?;
            if i == last {
                let half = g.scale(h, 0.5)?;
                let shift = g.constant(Tensor::full(&g.shape(half), 0.5))?;
                h = g.add(half, shift)?;
            }
        }
        Ok(h)
    }

    fn encoder_on(&self, g: &Graph, x: Var) -> Result<Var> {
        self.check_image(g, x)?;
        let mut h = x;
        for layer in &self.layers[..self.encoder_layers()] {
            h = g.tanh(layer.apply(g, h, None)?)?;
        }
        Ok(h)
    }
}

/// Per-run view of a model that counts gradient evaluations.
///
/// The counter increments once per backward pass. Plain forward passes are free.
pub struct Instrumented<'m> {
    model: &'m dyn EditModel,
    grad_calls: Cell<u64>,
}

impl<'m> Instrumented<'m> {
    pub fn new(model: &'m dyn EditModel) -> Self {
        Self {
            model,
            grad_calls: Cell::new(0),
        }
    }

    pub fn model(&self) -> &'m dyn EditModel {
        self.model
    }

    pub fn grad_calls(&self) -> u64 {
        self.grad_calls.get()
    }

    pub fn forward(&self, x: &Tensor, c: &Tensor) -> Result<Tensor> {
        self.model.forward(x, c)
    }

    pub fn encoder_output(&self, x: &Tensor) -> Result<Tensor> {
        self.model.encoder_output(x)
    }

    /// Value of `head(f(x, c))` and its gradient with respect to `x`.
    pub fn grad_x(
        &self,
        x: &Tensor,
        c: &Tensor,
        head: impl FnOnce(&Graph, Var) -> Result<Var>,
    ) -> Result<(f64, Tensor)> {
        let g = Graph::new();
        let xv = g.leaf(x.clone())?;
        let cv = g.constant(c.clone())?;
        let y = self.model.forward_on(&g, xv, cv)?;
        self.finish(&g, head(&g, y)?, xv)
    }

    /// Value of `head(f(x, c))` and its gradient with respect to `c`.
    pub fn grad_c(
        &self,
        x: &Tensor,
        c: &Tensor,
        head: impl FnOnce(&Graph, Var) -> Result<Var>,
    ) -> Result<(f64, Tensor)> {
        let g = Graph::new();
        let xv = g.constant(x.clone())?;
        let cv = g.leaf(c.clone())?;
        let y = self.model.forward_on(&g, xv, cv)?;
        self.finish(&g, head(&g, y)?, cv)
    }

    /// Value of `head(encoder(x))` and its gradient with respect to `x`.
    pub fn encoder_grad_x(
        &self,
        x: &Tensor,
        head: impl FnOnce(&Graph, Var) -> Result<Var>,
    ) -> Result<(f64, Tensor)> {
        let g = Graph::new();
        let xv = g.leaf(x.clone())?;
        let z = self.model.encoder_on(&g, xv)?;
        self.finish(&g, head(&g, z)?, xv)
    }

    fn finish(&self, g: &Graph, out: Var, wrt: Var) -> Result<(f64, Tensor)> {
        let value = g.value(out).item()?;
        let mut grads = g.backward(out)?;
        self.grad_calls.set(self.grad_calls.get() + 1);
        Ok((value, grads.take(wrt)?))
    }
}
