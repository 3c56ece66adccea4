//! First-order optimizers over the model's flat parameter groups.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimKind {
    RmsProp,
    Sgd,
}

impl OptimKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rmsprop" => Ok(OptimKind::RmsProp),
            "sgd" => Ok(OptimKind::Sgd),
            other => Err(Error::InvalidConfig {
                detail: format!("unknown optimizer {other:?} (expected rmsprop or sgd)"),
            }),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimKind::RmsProp => "rmsprop",
            OptimKind::Sgd => "sgd",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimKind::RmsProp,
            learning_rate: 1e-2,
            rmsprop_decay: 0.95,
            rmsprop_eps: 1e-7,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig {
                detail: format!("learning_rate must be > 0, got {}", self.learning_rate),
            });
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(Error::InvalidConfig {
                detail: format!("rmsprop_decay must be in (0, 1), got {}", self.rmsprop_decay),
            });
        }
        Ok(())
    }
}

/// Optimizer with per-group running state (the RMSprop mean square).
pub struct Optimizer {
    cfg: OptimConfig,
    mean_square: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, group_sizes: &[usize]) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg,
            mean_square: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    /// One update over all parameter groups. `params[i]` and `grads[i]`
    /// must be the same group in the model's fixed ordering.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        let lr = self.cfg.learning_rate;
        match self.cfg.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.iter_mut().zip(g.iter()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimKind::RmsProp => {
                let decay = self.cfg.rmsprop_decay;
                let eps = self.cfg.rmsprop_eps;
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.mean_square) {
                    for ((pv, gv), vv) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        *vv = decay * *vv + (1.0 - decay) * gv * gv;
                        *pv -= lr * gv / (vv.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_exactly_minus_lr_grad() {
        // quadratic bowl f(p) = ½‖p‖²: gradient is p itself
        let cfg = OptimConfig {
            kind: OptimKind::Sgd,
            learning_rate: 0.1,
            ..OptimConfig::default()
        };
        let mut opt = Optimizer::new(cfg, &[3]).unwrap();
        let mut p = vec![1.0, -2.0, 0.5];
        let g = p.clone();
        opt.step(&mut [&mut p], &[&g]);
        assert_eq!(p, vec![1.0 - 0.1 * 1.0, -2.0 - 0.1 * -2.0, 0.5 - 0.1 * 0.5]);
    }

    #[test]
    fn rmsprop_moves_against_gradient_with_normalized_magnitude() {
        let cfg = OptimConfig::default();
        let mut opt = Optimizer::new(cfg, &[2]).unwrap();
        let mut p = vec![0.0, 0.0];
        let g = vec![10.0, -0.001];
        for _ in 0..200 {
            opt.step(&mut [&mut p], &[&g]);
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
        // with a constant gradient the normalized step approaches lr
        let ratio = p[0].abs() / p[1].abs();
        assert!(ratio > 0.5 && ratio < 2.0, "ratio {ratio}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = OptimConfig::default();
        cfg.learning_rate = 0.0;
        assert!(Optimizer::new(cfg, &[1]).is_err());
        assert!(OptimKind::parse("adam").is_err());
    }
}
