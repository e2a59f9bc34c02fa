//! Adam with bias-corrected moment estimates.

use crate::nn::network::{Gradients, Network};
use crate::nn::{NnError, Result, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments for every parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros_like(params: &[&Tensor<T>]) -> Self {
        Self {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub(crate) fn check_matches(&self, params: &[&Tensor<T>]) -> Result<()> {
        let ok = self.first_moment.len() == params.len()
            && self.second_moment.len() == params.len()
            && params.iter().zip(&self.first_moment).zip(&self.second_moment).all(
                |((p, m), v)| p.shape() == m.shape() && p.shape() == v.shape(),
            );
        if ok {
            Ok(())
        } else {
            Err(NnError::Shape("optimizer state does not match parameters".into()))
        }
    }
}

/// One Adam update of `params` in place. `step` is the 1-based step index
/// used for bias correction.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    first: &mut [T],
    second: &mut [T],
    step: u64,
    learning_rate: T,
    config: &AdamConfig,
) {
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let eps = T::lit(config.epsilon);
    let one = T::one();
    let c1 = one - T::lit(config.beta1.powi(step as i32));
    let c2 = one - T::lit(config.beta2.powi(step as i32));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(first.iter_mut()).zip(second.iter_mut()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
}

impl<T: Scalar> Network<T> {
    /// Applies one Adam step to every parameter and advances the step counter.
    pub fn adam_step(
        &mut self,
        gradients: &Gradients<T>,
        learning_rate: T,
        config: &AdamConfig,
    ) -> Result<()> {
        {
            let params = self.parameters();
            self.optimizer.check_matches(&params)?;
            if gradients.tensors.len() != params.len()
                || params.iter().zip(&gradients.tensors).any(|(p, g)| p.shape() != g.shape())
            {
                return Err(NnError::Shape("gradients do not match parameters".into()));
            }
        }
        let mut state = std::mem::take(&mut self.optimizer);
        state.step += 1;
        let step = state.step;
        for (((p, g), m), v) in self
            .parameters_mut()
            .into_iter()
            .zip(&gradients.tensors)
            .zip(state.first_moment.iter_mut())
            .zip(state.second_moment.iter_mut())
        {
            adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), step, learning_rate, config);
        }
        self.optimizer = state;
        Ok(())
    }
}

/// [`Network::adam_step`] with the default hyperparameters.
pub fn adam_step<T: Scalar>(
    network: &mut Network<T>,
    gradients: &Gradients<T>,
    learning_rate: T,
) -> Result<()> {
    network.adam_step(gradients, learning_rate, &AdamConfig::default())
}
