//! Even, smooth interaction potentials with two-sided curvature control
//! 1/c_V <= V''(t) <= c_V. Every sampler and walk in this crate requires a
//! certified potential; certification combines the analytic curvature range
//! of each family with a grid scan, and refuses families whose curvature
//! leaves the admissible window.

/// Shipped potential families.
///
/// * `Gaussian`: V(t) = kappa t^2 / 2, constant curvature kappa.
/// * `CosinePerturbed`: V(t) = t^2/2 - beta (1 - cos t), curvature
///   1 - beta cos t in [1-beta, 1+beta]; needs beta in [0, 1).
/// * `LogCosh`: V(t) = t^2/2 + lambda ln cosh t, curvature
///   1 + lambda sech^2 t in [1, 1+lambda]; needs lambda >= 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    Gaussian { kappa: f64 },
    CosinePerturbed { beta: f64 },
    LogCosh { lambda: f64 },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PotentialError {
    #[error("parameter {name} = {value} is outside the admissible range {range}")]
    BadParameter {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("certification failed: V'' ranges over [{ddv_min}, {ddv_max}], incompatible with c_V = {c_v}")]
    NotConvexEnough { ddv_min: f64, ddv_max: f64, c_v: f64 },
}

impl Potential {
    /// Construction-time sanity on parameters that make evaluation itself
    /// meaningless (NaN and friends); curvature violations are left for
    /// `certify`, which reports them with the measured range.
    pub fn validate_params(&self) -> Result<(), PotentialError> {
        match *self {
            Potential::Gaussian { kappa } => {
                if !(kappa > 0.0) || !kappa.is_finite() {
                    return Err(PotentialError::BadParameter {
                        name: "kappa",
                        value: kappa,
                        range: "(0, inf)",
                    });
                }
            }
            Potential::CosinePerturbed { beta } => {
                if !(beta >= 0.0) || !beta.is_finite() {
                    return Err(PotentialError::BadParameter {
                        name: "beta",
                        value: beta,
                        range: "[0, inf); certification requires [0, 1)",
                    });
                }
            }
            Potential::LogCosh { lambda } => {
                if !(lambda >= 0.0) || !lambda.is_finite() {
                    return Err(PotentialError::BadParameter {
                        name: "lambda",
                        value: lambda,
                        range: "[0, inf)",
                    });
                }
            }
        }
        Ok(())
    }

    pub fn v(&self, t: f64) -> f64 {
        match *self {
            Potential::Gaussian { kappa } => 0.5 * kappa * t * t,
            Potential::CosinePerturbed { beta } => 0.5 * t * t - beta * (1.0 - t.cos()),
            Potential::LogCosh { lambda } => 0.5 * t * t + lambda * ln_cosh(t),
        }
    }

    pub fn dv(&self, t: f64) -> f64 {
        match *self {
            Potential::Gaussian { kappa } => kappa * t,
            Potential::CosinePerturbed { beta } => t - beta * t.sin(),
            Potential::LogCosh { lambda } => t + lambda * t.tanh(),
        }
    }

    pub fn ddv(&self, t: f64) -> f64 {
        match *self {
            Potential::Gaussian { kappa } => kappa,
            Potential::CosinePerturbed { beta } => 1.0 - beta * t.cos(),
            Potential::LogCosh { lambda } => {
                let c = t.cosh();
                1.0 + lambda / (c * c)
            }
        }
    }

    /// Analytic curvature extrema (min V'', max V'') of the family.
    pub fn curvature_range(&self) -> (f64, f64) {
        match *self {
            Potential::Gaussian { kappa } => (kappa, kappa),
            Potential::CosinePerturbed { beta } => (1.0 - beta, 1.0 + beta),
            Potential::LogCosh { lambda } => (1.0, 1.0 + lambda),
        }
    }

    /// Tightest admissible convexity constant: c_V >= max V'' and
    /// 1/c_V <= min V''. Infinite when no finite constant works.
    pub fn c_v(&self) -> f64 {
        let (lo, hi) = self.curvature_range();
        if lo <= 0.0 {
            return f64::INFINITY;
        }
        hi.max(1.0 / lo).max(1.0)
    }

    /// Certify the two-sided curvature bound by combining the analytic range
    /// with a grid scan of V'' over [-half_width, half_width] (step `step`).
    /// On success the potential is usable by samplers and walks.
    pub fn certify_with(
        self,
        half_width: f64,
        step: f64,
    ) -> Result<CertifiedPotential, PotentialError> {
        self.validate_params()?;
        let (mut lo, mut hi) = self.curvature_range();
        let n = (2.0 * half_width / step).ceil() as usize;
        for i in 0..=n {
            let t = -half_width + step * i as f64;
            let d = self.ddv(t);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let c_v = self.c_v();
        let ok = lo > 0.0 && c_v.is_finite() && hi <= c_v * (1.0 + 1e-12) && lo >= 1.0 / c_v * (1.0 - 1e-12);
        if !ok {
            return Err(PotentialError::NotConvexEnough {
                ddv_min: lo,
                ddv_max: hi,
                c_v,
            });
        }
        Ok(CertifiedPotential {
            pot: self,
            c_v,
            ddv_min: lo,
            ddv_max: hi,
        })
    }

    /// Certify with the default grid ([-50, 50], step 1e-3).
    pub fn certify(self) -> Result<CertifiedPotential, PotentialError> {
        self.certify_with(50.0, 1e-3)
    }
}

/// log cosh without overflow for large |t|.
fn ln_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// A potential whose curvature window [1/c_V, c_V] has been verified.
/// This is the only form accepted by the Gibbs sampler and the random walk.
#[derive(Debug, Clone, Copy)]
pub struct CertifiedPotential {
    pot: Potential,
    c_v: f64,
    ddv_min: f64,
    ddv_max: f64,
}

impl CertifiedPotential {
    pub fn potential(&self) -> Potential {
        self.pot
    }

    pub fn c_v(&self) -> f64 {
        self.c_v
    }

    /// Measured curvature range from certification (analytic + grid).
    pub fn curvature_range(&self) -> (f64, f64) {
        (self.ddv_min, self.ddv_max)
    }

    pub fn v(&self, t: f64) -> f64 {
        self.pot.v(t)
    }

    pub fn dv(&self, t: f64) -> f64 {
        self.pot.dv(t)
    }

    pub fn ddv(&self, t: f64) -> f64 {
        self.pot.ddv(t)
    }

    /// Constant-curvature families admit closed-form site conditionals.
    pub fn quadratic_kappa(&self) -> Option<f64> {
        match self.pot {
            Potential::Gaussian { kappa } => Some(kappa),
            _ => None,
        }
    }
}
