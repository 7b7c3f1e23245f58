use ndarray::{Array1, Array2, Zip};

use super::mlp::{Gradients, Mlp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Adam with bias-corrected first and second moments.
pub(crate) struct Adam {
    params: AdamParams,
    step: i32,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(model: &Mlp, params: AdamParams) -> Self {
        let zw = || {
            model
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect()
        };
        let zb = || model.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect();
        Self {
            params,
            step: 0,
            m_w: zw(),
            v_w: zw(),
            m_b: zb(),
            v_b: zb(),
        }
    }

    pub fn update(&mut self, model: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        };
        for (l, layer) in model.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.weights)
                .and(&mut self.m_w[l])
                .and(&mut self.v_w[l])
                .and(&grads.weights[l])
                .for_each(apply);
            Zip::from(&mut layer.bias)
                .and(&mut self.m_b[l])
                .and(&mut self.v_b[l])
                .and(&grads.biases[l])
                .for_each(apply);
        }
    }
}
