//! Dense layers, parameter blending and the adaptive-moment optimizer shared
//! by the spiking actor and the critics.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y = W x + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn uniform<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut l = Self::zeros(input, output);
        l.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
        l.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        l
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn same_shape(&self, other: &Linear) -> bool {
        self.weight.dim() == other.weight.dim() && self.bias.len() == other.bias.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }

    pub fn scale(&mut self, k: f64) {
        self.weight *= k;
        self.bias *= k;
    }

    pub fn add_assign(&mut self, other: &Linear) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// `θ′ ← τθ + (1 − τ)θ′`, elementwise.
pub fn soft_update(live: &Linear, target: &mut Linear, tau: f64) -> Result<()> {
    if !live.same_shape(target) {
        return Err(Error::Config(format!(
            "soft update between {:?} and {:?} layers",
            live.weight.dim(),
            target.weight.dim()
        )));
    }
    let blend = |t: &mut f64, l: &f64| *t = tau * l + (1.0 - tau) * *t;
    target.weight.zip_mut_with(&live.weight, blend);
    target.bias.zip_mut_with(&live.bias, blend);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer over a fixed list of layers.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Linear>,
    v: Vec<Linear>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, layers: &[&Linear]) -> Self {
        let m: Vec<Linear> = layers.iter().map(|l| l.zeros_like()).collect();
        Self {
            cfg,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One step. `grads[k] == None` leaves layer `k` (and its moments) untouched.
    pub fn step(&mut self, layers: &mut [&mut Linear], grads: &[Option<&Linear>]) {
        debug_assert_eq!(layers.len(), self.m.len());
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        for (k, layer) in layers.iter_mut().enumerate() {
            let Some(g) = grads[k] else { continue };
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((p, g), m), v) in layer
                .weight
                .iter_mut()
                .zip(g.weight.iter())
                .zip(m.weight.iter_mut())
                .zip(v.weight.iter_mut())
            {
                update(p, *g, m, v);
            }
            for (((p, g), m), v) in layer
                .bias
                .iter_mut()
                .zip(g.bias.iter())
                .zip(m.bias.iter_mut())
                .zip(v.bias.iter_mut())
            {
                update(p, *g, m, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn soft_update_endpoints() {
        let live = Linear {
            weight: array![[1.0, 2.0]],
            bias: array![3.0],
        };
        let mut target = Linear::zeros(2, 1);
        soft_update(&live, &mut target, 1.0).unwrap();
        assert_eq!(target, live);

        let mut t = Linear::zeros(2, 1);
        soft_update(&live, &mut t, 0.005).unwrap();
        assert_eq!(t.weight[[0, 0]], 0.005);

        let mut wrong = Linear::zeros(3, 1);
        assert!(soft_update(&live, &mut wrong, 0.5).is_err());
    }

    #[test]
    fn soft_update_decays_geometrically() {
        let live = Linear {
            weight: array![[1.0]],
            bias: array![-2.0],
        };
        let mut target = Linear {
            weight: array![[0.0]],
            bias: array![4.0],
        };
        let tau: f64 = 0.05;
        for k in 1..=100 {
            soft_update(&live, &mut target, tau).unwrap();
            let decay = (1.0 - tau).powi(k);
            assert!(((target.weight[[0, 0]] - 1.0).abs() - decay).abs() < 1e-14);
            assert!(((target.bias[0] + 2.0).abs() - 6.0 * decay).abs() < 1e-13);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let mut layer = Linear {
            weight: array![[0.5, -0.5]],
            bias: array![0.0],
        };
        let g = Linear {
            weight: array![[2.0, -0.1]],
            bias: array![0.0],
        };
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &[&layer]);
        opt.step(&mut [&mut layer], &[Some(&g)]);
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        let expect0 = 0.5 - 0.1 * 2.0 / (2.0 + 1e-8);
        let expect1 = -0.5 + 0.1 * 0.1 / (0.1 + 1e-8);
        assert_eq!(layer.weight[[0, 0]], expect0);
        assert_eq!(layer.weight[[0, 1]], expect1);
        assert_eq!(layer.bias[0], 0.0);
    }

    #[test]
    fn adam_skips_frozen_layers() {
        let mut a = Linear::zeros(2, 2);
        let mut b = Linear::zeros(2, 2);
        let mut g = Linear::zeros(2, 2);
        g.weight.fill(1.0);
        let mut opt = Adam::new(AdamConfig::with_lr(0.01), &[&a, &b]);
        opt.step(&mut [&mut a, &mut b], &[Some(&g), None]);
        assert!(a.weight.iter().all(|&w| w < 0.0));
        assert_eq!(b, Linear::zeros(2, 2));
    }
}
