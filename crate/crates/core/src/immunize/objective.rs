use crate::error::{Error, Result};
use crate::models::Instrumented;
use crate::ndtensor::{sign, Graph, Tensor, Var};

/// Mean squared error between two images of the same shape.
pub fn loss(y: &Tensor, y0: &Tensor) -> Result<f64> {
    if y.shape() != y0.shape() {
        return Err(Error::shape("loss", y.shape(), y0.shape()));
    }
    let n = y.len() as f64;
    Ok(y.data().iter().zip(y0.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Records `mean((y - target)^2)` on the graph.
pub fn mse_on(g: &Graph, y: Var, target: &Tensor) -> Result<Var> {
    let t = g.constant(target.clone())?;
    let d = g.sub(y, t)?;
    g.mean(g.mul(d, d)?)
}

/// Elementwise clamp to `[-eps, eps]`.
pub fn project_linf(delta: &Tensor, eps: f64) -> Tensor {
    delta.map(|v| v.clamp(-eps, eps))
}

/// `delta + step * sign(direction)`, leaving entries with a zero sign untouched.
pub(crate) fn sign_step(delta: &Tensor, direction: &Tensor, step: f64) -> Tensor {
    Tensor::from_fn(delta.shape(), |i| {
        let s = sign(direction.data()[i]);
        if s == 0.0 {
            delta.data()[i]
        } else {
            delta.data()[i] + step * s
        }
    })
}

/// `y0 = f(x0, c)` under the original embedding.
pub fn compute_benign_target(session: &Instrumented<'_>, x0: &Tensor, c: &Tensor) -> Result<Tensor> {
    session.forward(x0, c)
}

/// A scalar loss of a perturbation with an available gradient.
///
/// Every call to [`Objective::value_and_grad`] is one gradient evaluation.
pub trait Objective {
    fn value_and_grad(&self, delta: &Tensor) -> Result<(f64, Tensor)>;

    fn value(&self, delta: &Tensor) -> Result<f64>;
}

#[derive(Clone, Debug)]
enum Target {
    Full { embedding: Tensor, y0: Tensor },
    Encoder { z0: Tensor },
}

/// `L(delta) = MSE(f(x0 + delta, e), y0)` or, for the encoder target,
/// `MSE(enc(x0 + delta), enc(x0))`.
pub struct ImageObjective<'s, 'm> {
    session: &'s Instrumented<'m>,
    x0: Tensor,
    target: Target,
}

impl<'s, 'm> ImageObjective<'s, 'm> {
    pub fn full(session: &'s Instrumented<'m>, x0: &Tensor, embedding: &Tensor, y0: &Tensor) -> Self {
        Self {
            session,
            x0: x0.clone(),
            target: Target::Full {
                embedding: embedding.clone(),
                y0: y0.clone(),
            },
        }
    }

    pub fn encoder(session: &'s Instrumented<'m>, x0: &Tensor) -> Result<Self> {
        let z0 = session.encoder_output(x0)?;
        Ok(Self {
            session,
            x0: x0.clone(),
            target: Target::Encoder { z0 },
        })
    }

    pub fn x0(&self) -> &Tensor {
        &self.x0
    }
}

impl Objective for ImageObjective<'_, '_> {
    fn value_and_grad(&self, delta: &Tensor) -> Result<(f64, Tensor)> {
        let x = self.x0.add(delta)?;
        match &self.target {
            Target::Full { embedding, y0 } => self.session.grad_x(&x, embedding, |g, y| mse_on(g, y, y0)),
            Target::Encoder { z0 } => self.session.encoder_grad_x(&x, |g, z| mse_on(g, z, z0)),
        }
    }

    fn value(&self, delta: &Tensor) -> Result<f64> {
        let x = self.x0.add(delta)?;
        match &self.target {
            Target::Full { embedding, y0 } => loss(&self.session.forward(&x, embedding)?, y0),
            Target::Encoder { z0 } => loss(&self.session.encoder_output(&x)?, z0),
        }
    }
}
