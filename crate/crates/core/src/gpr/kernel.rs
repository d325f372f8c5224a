use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// Radial basis function, `exp(-d²/2σ²)`.
    Rbf,
    /// Rational quadratic, `(1 + d²/2ασ²)^-α`.
    Rq,
}

/// Covariance function over planar positions plus the observation noise and
/// diagonal jitter added to the training covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// m
    pub length_scale: f64,
    /// RQ only.
    pub rq_alpha: f64,
    /// Learned observation noise, in standardized target units squared.
    pub noise_variance: f64,
    pub jitter: f64,
}

impl KernelConfig {
    pub fn new(kind: KernelKind, length_scale: f64, rq_alpha: f64, noise_variance: f64) -> Self {
        KernelConfig {
            kind,
            length_scale,
            rq_alpha,
            noise_variance,
            jitter: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.length_scale > 0.0
            && self.length_scale.is_finite()
            && (self.kind == KernelKind::Rbf || (self.rq_alpha > 0.0 && self.rq_alpha.is_finite()))
            && self.noise_variance >= 0.0
            && self.noise_variance.is_finite()
            && self.jitter >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid kernel hyperparameters {self:?}")))
        }
    }

    /// Covariance for squared distance `d2`.
    #[inline]
    pub fn eval_sq(&self, d2: f64) -> f64 {
        let l2 = self.length_scale * self.length_scale;
        match self.kind {
            KernelKind::Rbf => (-0.5 * d2 / l2).exp(),
            KernelKind::Rq => {
                let u = 0.5 * d2 / (self.rq_alpha * l2);
                (-self.rq_alpha * u.ln_1p()).exp()
            }
        }
    }

    /// Covariance and its derivatives with respect to `ln σ` and `ln α`
    /// (the latter zero for RBF).
    pub fn eval_sq_with_grad(&self, d2: f64) -> (f64, f64, f64) {
        let l2 = self.length_scale * self.length_scale;
        match self.kind {
            KernelKind::Rbf => {
                let r = 0.5 * d2 / l2;
                let k = (-r).exp();
                (k, 2.0 * r * k, 0.0)
            }
            KernelKind::Rq => {
                let a = self.rq_alpha;
                let u = 0.5 * d2 / (a * l2);
                let lu = u.ln_1p();
                let k = (-a * lu).exp();
                let d_sigma = 2.0 * a * u * k / (1.0 + u);
                let d_alpha = k * a * (u / (1.0 + u) - lu);
                (k, d_sigma, d_alpha)
            }
        }
    }

    pub fn eval(&self, a: Point, b: Point) -> f64 {
        self.eval_sq(a.dist2(b))
    }

    /// Number of trainable hyperparameters (length scale, α for RQ, noise).
    pub fn n_params(&self) -> usize {
        match self.kind {
            KernelKind::Rbf => 2,
            KernelKind::Rq => 3,
        }
    }

    /// Log-space parameter vector: `[ln σ, (ln α), ln σₙ²]`.
    pub fn log_params(&self) -> Vec<f64> {
        let mut v = vec![self.length_scale.ln()];
        if self.kind == KernelKind::Rq {
            v.push(self.rq_alpha.ln());
        }
        v.push(self.noise_variance.ln());
        v
    }

    pub fn with_log_params(&self, p: &[f64]) -> KernelConfig {
        let mut k = *self;
        k.length_scale = p[0].exp();
        match self.kind {
            KernelKind::Rbf => k.noise_variance = p[1].exp(),
            KernelKind::Rq => {
                k.rq_alpha = p[1].exp();
                k.noise_variance = p[2].exp();
            }
        }
        k
    }
}

pub fn kernel_eval(cfg: &KernelConfig, a: Point, b: Point) -> f64 {
    cfg.eval(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance_is_one() {
        let p = Point::new(3.0, -1.0);
        for kind in [KernelKind::Rbf, KernelKind::Rq] {
            assert_eq!(kernel_eval(&KernelConfig::new(kind, 2.0, 0.7, 0.1), p, p), 1.0);
        }
    }

    #[test]
    fn rbf_at_one_length_scale() {
        let cfg = KernelConfig::new(KernelKind::Rbf, 2.5, 1.0, 0.0);
        let k = kernel_eval(&cfg, Point::new(0.0, 0.0), Point::new(1.5, 2.0));
        assert!((k - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn rq_tends_to_rbf() {
        let rbf = KernelConfig::new(KernelKind::Rbf, 1.3, 1.0, 0.0);
        let rq = KernelConfig::new(KernelKind::Rq, 1.3, 1e6, 0.0);
        for i in 0..=100 {
            let d = i as f64 * 0.1;
            assert!((rq.eval_sq(d * d) - rbf.eval_sq(d * d)).abs() < 1e-4);
        }
    }

    #[test]
    fn rq_closed_form() {
        let cfg = KernelConfig::new(KernelKind::Rq, 2.0, 0.5, 0.0);
        // (1 + 9 / (2 * 0.5 * 4))^-0.5
        let expected = (1.0f64 + 9.0 / 4.0).powf(-0.5);
        assert!((cfg.eval_sq(9.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for kind in [KernelKind::Rbf, KernelKind::Rq] {
            let cfg = KernelConfig::new(kind, 1.7, 0.8, 0.1);
            for d2 in [0.0, 0.3, 2.0, 9.0] {
                let (_, ds, da) = cfg.eval_sq_with_grad(d2);
                let h = 1e-6;
                let mut p = cfg.log_params();
                p[0] += h;
                let up = cfg.with_log_params(&p).eval_sq(d2);
                p[0] -= 2.0 * h;
                let dn = cfg.with_log_params(&p).eval_sq(d2);
                assert!((ds - (up - dn) / (2.0 * h)).abs() < 1e-8);
                if kind == KernelKind::Rq {
                    let mut p = cfg.log_params();
                    p[1] += h;
                    let up = cfg.with_log_params(&p).eval_sq(d2);
                    p[1] -= 2.0 * h;
                    let dn = cfg.with_log_params(&p).eval_sq(d2);
                    assert!((da - (up - dn) / (2.0 * h)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn validation() {
        assert!(KernelConfig::new(KernelKind::Rq, 1.0, 0.0, 0.1).validate().is_err());
        assert!(KernelConfig::new(KernelKind::Rbf, 1.0, 0.0, 0.1).validate().is_ok());
        assert!(KernelConfig::new(KernelKind::Rbf, -1.0, 1.0, 0.1).validate().is_err());
        assert!(KernelConfig::new(KernelKind::Rbf, 1.0, 1.0, -0.1).validate().is_err());
    }
}
