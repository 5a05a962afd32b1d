//! Adam with bias correction, plus the named-parameter wrapper the networks
//! and checkpoints are built from.

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng64;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Defaults for the adversarial networks: lr 2e-4, beta1 0.5.
    pub fn gan() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Defaults for the auxiliary task networks (detector, segmenter).
    pub fn task() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A named learnable tensor.
pub struct Param {
    name: String,
    value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<Param> {
        Ok(Param {
            name: name.into(),
            value: Tensor::from_vec(shape, values, true)?,
        })
    }

    /// Uniform init in [-bound, bound], seeded.
    pub fn init_uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut Rng64) -> Param {
        let count: usize = shape.iter().product();
        let values: Vec<f64> = (0..count).map(|_| rng.uniform(-bound, bound)).collect();
        Param {
            name: name.into(),
            value: Tensor::from_vec(shape, values, true).expect("consistent shape"),
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Param {
        let count: usize = shape.iter().product();
        Param {
            name: name.into(),
            value: Tensor::from_vec(shape, vec![0.0; count], true).expect("consistent shape"),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.value
    }

    /// The tensor to feed into a forward pass. Frozen parameters enter the
    /// graph as constants so no gradient ever reaches them.
    pub fn input(&self, frozen: bool) -> Tensor {
        if frozen {
            self.value.detach()
        } else {
            self.value.clone()
        }
    }

    pub fn zero_grad(&self) {
        self.value.zero_grad();
    }

    pub fn set(&self, values: &[f64]) {
        self.value.set_values(values);
    }
}

/// Adam state over an ordered parameter list.
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[&Param]) -> Adam {
        Adam {
            cfg,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor().len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor().len()]).collect(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// One update over the same parameter list the state was built for.
    /// Parameters without a populated gradient are treated as zero-gradient.
    pub fn step(&mut self, params: &[&Param]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("state built for {} params, got {}", self.m.len(), params.len()),
            ));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, p) in params.iter().enumerate() {
            let grad = p.tensor().grad();
            if let Some(g) = &grad {
                if g.len() != self.m[i].len() {
                    return Err(Error::shape(
                        "adam_step",
                        format!("gradient of {} has wrong size", p.name()),
                    ));
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        what: format!("gradient of parameter {}", p.name()),
                    });
                }
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.tensor().update_values(|vals| {
                for j in 0..vals.len() {
                    let g = grad.as_ref().map_or(0.0, |g| g[j]);
                    m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g;
                    v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g * g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    vals[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                }
            });
        }
        Ok(())
    }

    /// Flattened state for checkpointing: step counter plus per-parameter
    /// first/second moment buffers.
    pub fn export_state(&self) -> (u64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (self.t, self.m.clone(), self.v.clone())
    }

    pub fn restore_state(&mut self, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::invalid("adam_restore", "moment count mismatch"));
        }
        for (a, b) in m.iter().zip(&self.m) {
            if a.len() != b.len() {
                return Err(Error::invalid("adam_restore", "moment size mismatch"));
            }
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_in_place() {
        let p = Param::new("w", &[2], vec![1.0, -1.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::gan(), &[&p]);
        opt.step(&[&p]).unwrap();
        assert_eq!(p.tensor().to_vec(), vec![1.0, -1.0]);
        assert_eq!(opt.t(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // m_hat = v_hat = 1 after bias correction, so dp = -lr / (1 + eps).
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::gan()
        };
        let p = Param::new("w", &[1], vec![1.0]).unwrap();
        let loss = p.tensor().mean_all().unwrap(); // d loss / d p = 1
        loss.backward().unwrap();
        let mut opt = Adam::new(cfg, &[&p]);
        opt.step(&[&p]).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + cfg.eps);
        assert!((p.tensor().to_vec()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_aborts_naming_parameter() {
        let p = Param::new("conv1.weight", &[1], vec![0.0]).unwrap();
        // force a NaN gradient through 0/0-style values: log_clamped is safe,
        // so inject directly via a crafted loss: x * NaN constant.
        let bad = Tensor::from_vec(&[1], vec![f64::NAN], false).unwrap();
        let loss = p.tensor().mul(&bad).unwrap().mean_all().unwrap();
        loss.backward().unwrap();
        let mut opt = Adam::new(AdamConfig::gan(), &[&p]);
        let err = opt.step(&[&p]).unwrap_err();
        assert!(err.to_string().contains("conv1.weight"));
    }

    #[test]
    fn ten_steps_are_bit_deterministic() {
        let run = || {
            let mut rng = Rng64::new(9);
            let p = Param::init_uniform("w", &[4], 0.05, &mut rng);
            let target = Tensor::from_vec(&[4], vec![0.3, -0.2, 0.1, 0.0], false).unwrap();
            let mut opt = Adam::new(AdamConfig::gan(), &[&p]);
            for _ in 0..10 {
                p.zero_grad();
                let diff = p.tensor().sub(&target).unwrap();
                let loss = diff.mul(&diff).unwrap().mean_all().unwrap();
                loss.backward().unwrap();
                opt.step(&[&p]).unwrap();
            }
            p.tensor().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn moments_decay_without_gradient() {
        let p = Param::new("w", &[1], vec![0.0]).unwrap();
        let loss = p.tensor().mean_all().unwrap();
        loss.backward().unwrap();
        let mut opt = Adam::new(AdamConfig::gan(), &[&p]);
        opt.step(&[&p]).unwrap();
        let (_, m1, _) = opt.export_state();
        p.zero_grad();
        opt.step(&[&p]).unwrap(); // no grad: moments decay toward zero
        let (_, m2, _) = opt.export_state();
        assert!(m2[0][0].abs() < m1[0][0].abs());
    }
}
