use crate::error::{Error, Result};
use crate::nn::Model;

/// Momentum buffers, one per parameter in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Velocity {
    buffers: Vec<Vec<f32>>,
}

impl Velocity {
    pub fn new() -> Self {
        Self::default()
    }
}

/// `v ← μv − lr·(g + wd·θ)`, `θ ← θ + v` for every parameter. Weight decay
/// applies to conv and linear weights only. Gradients are checked for
/// non-finite entries before anything is modified.
pub fn sgd_step(model: &mut Model, lr: f64, momentum: f64, weight_decay: f64, velocity: &mut Velocity) -> Result<()> {
    let mut params = model.params_mut();
    for p in params.iter() {
        if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: 0,
                step: 0,
                detail: format!("non-finite gradient {} in {}[{i}]", p.grad[i], p.name),
            });
        }
    }
    if velocity.buffers.len() != params.len() {
        velocity.buffers = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
    }
    let (lr, mu) = (lr as f32, momentum as f32);
    for (p, v) in params.iter_mut().zip(&mut velocity.buffers) {
        if v.len() != p.value.len() {
            return Err(Error::Shape(format!("velocity for {} has the wrong length", p.name)));
        }
        let wd = if p.dims.len() > 1 { weight_decay as f32 } else { 0.0 };
        for ((theta, &g), vel) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
            *vel = mu * *vel - lr * (g + wd * *theta);
            *theta += *vel;
        }
    }
    Ok(())
}
