use super::params::ModelParams;
use crate::error::{IopError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// One bias-corrected Adam update from the accumulated gradients, which are
/// cleared afterwards.
pub fn adam_step(params: &mut ModelParams, cfg: &AdamConfig) -> Result<()> {
    for (_, p) in params.iter() {
        if let Some(bad) = p.grad.iter().find(|g| !g.is_finite()) {
            return Err(IopError::Numeric(format!("non-finite gradient {bad} in {}", p.name)));
        }
    }
    params.step += 1;
    let t = params.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let p = params.get_mut(id);
        for i in 0..p.data.len() {
            let g = p.grad[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.m[i] / c1;
            let v_hat = p.v[i] / c2;
            p.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            p.grad[i] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.add_with("x", 1, 1, vec![value]);
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(1.5);
        adam_step(&mut p, &AdamConfig::default()).unwrap();
        assert_eq!(p.get(p.id("x").unwrap()).data, vec![1.5]);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut p = single(1.5);
        let id = p.id("x").unwrap();
        p.get_mut(id).grad[0] = 3.0;
        adam_step(&mut p, &AdamConfig::with_lr(0.0)).unwrap();
        assert_eq!(p.get(id).data, vec![1.5]);
        assert_eq!(p.get(id).grad, vec![0.0]);
    }

    #[test]
    fn constant_gradient_steps_by_learning_rate() {
        let mut p = single(0.0);
        let id = p.id("x").unwrap();
        let cfg = AdamConfig::with_lr(0.01);
        let g = 0.37;
        let mut prev = 0.0;
        for _ in 0..200 {
            p.get_mut(id).grad[0] = g;
            adam_step(&mut p, &cfg).unwrap();
            let now = p.get(id).data[0];
            let expected = cfg.lr * g / (g + cfg.eps);
            assert!(((prev - now) - expected).abs() < 1e-12);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = single(0.0);
        let id = p.id("x").unwrap();
        p.get_mut(id).grad[0] = f64::NAN;
        assert!(matches!(
            adam_step(&mut p, &AdamConfig::default()),
            Err(IopError::Numeric(_))
        ));
    }
}
