//! Adam with decoupled weight decay, and an exponential moving average of
//! the weights.

use crate::error::{EfmError, Result};
use crate::model::mlp::{FieldApproximator, Parameters};

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step_count: u64,
    pub first_moment: Parameters,
    pub second_moment: Parameters,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
}

impl OptimizerState {
    pub fn new(net: &FieldApproximator, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: net.params.zeros_like(),
            second_moment: net.params.zeros_like(),
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
        }
    }
}

/// One bias-corrected Adam step; weight decay is applied to the parameters
/// directly rather than through the gradient.
pub fn optimizer_step(net: &mut FieldApproximator, grad: &Parameters, state: &mut OptimizerState) -> Result<()> {
    if !net.params.same_shape(grad) || !net.params.same_shape(&state.first_moment) {
        return Err(EfmError::ShapeMismatch("gradient does not match parameters".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    state.first_moment.zip_mut_with(grad, |m, g| *m = b1 * *m + (1.0 - b1) * g);
    state.second_moment.zip_mut_with(grad, |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let wd = state.weight_decay;
    let eps = state.eps_opt;
    for ((p, m), v) in net
        .params
        .layers
        .iter_mut()
        .zip(&state.first_moment.layers)
        .zip(&state.second_moment.layers)
    {
        ndarray::Zip::from(&mut p.weight).and(&m.weight).and(&v.weight).for_each(|w, &m, &v| {
            *w -= lr * ((m / c1) / ((v / c2).sqrt() + eps) + wd * *w);
        });
        ndarray::Zip::from(&mut p.bias).and(&m.bias).and(&v.bias).for_each(|w, &m, &v| {
            *w -= lr * ((m / c1) / ((v / c2).sqrt() + eps) + wd * *w);
        });
    }
    Ok(())
}

/// Shadow copy of the parameters, `shadow <- decay * shadow + (1 - decay) * current`.
#[derive(Debug, Clone)]
pub struct EmaState {
    pub shadow: Parameters,
    pub decay: f64,
    template: FieldApproximator,
}

impl EmaState {
    pub fn new(net: &FieldApproximator, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(EfmError::InvalidArgument(format!("ema decay {decay} not in [0, 1)")));
        }
        Ok(Self {
            shadow: net.params.clone(),
            decay,
            template: net.clone(),
        })
    }

    pub fn update(&mut self, net: &FieldApproximator) -> Result<()> {
        if !self.shadow.same_shape(&net.params) {
            return Err(EfmError::ShapeMismatch("EMA shadow does not match network".into()));
        }
        let d = self.decay;
        self.shadow.zip_mut_with(&net.params, |s, c| *s = d * *s + (1.0 - d) * c);
        Ok(())
    }

    /// A new network carrying the shadow parameters.
    pub fn apply(&self) -> FieldApproximator {
        let mut net = self.template.clone();
        net.params = self.shadow.clone();
        net
    }
}

pub fn ema_update(ema: &mut EmaState, net: &FieldApproximator) -> Result<()> {
    ema.update(net)
}

pub fn ema_apply(ema: &EmaState) -> FieldApproximator {
    ema.apply()
}
