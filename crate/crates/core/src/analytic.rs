//! Closed-form velocity fields for Gaussian and Gaussian-mixture data.
//!
//! With `z0 ~ N(0, I)`, `z1 ~ N(mu, sigma^2 I)` and `z_t = t z1 + (1 - t) z0`,
//! the pair `(z1, z_t)` is jointly Gaussian, so every posterior quantity of the
//! flow-matching target is linear in `z_t`. All of them share the precision
//! factor `lambda = 1 / (t^2 sigma^2 + (1 - t)^2)`, which peaks at
//! `(1 + sigma^2) / sigma^2` on `[0, 1]`.

use crate::error::{Error, Result};
use crate::numeric::{LatentVector, Timestep};
use crate::sampler::{DomainTag, VelocityField};

/// Isotropic Gaussian model `N(mu, sigma_sq * I)` of the clean data.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    mu: LatentVector,
    sigma_sq: f64,
}

impl GaussianSpec {
    pub fn new(mu: LatentVector, sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma_sq must be > 0, got {sigma_sq}")));
        }
        Ok(Self { mu, sigma_sq })
    }

    pub fn mu(&self) -> &LatentVector {
        &self.mu
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// Variance of each coordinate of `z_t`, i.e. `1 / lambda`.
    pub fn marginal_variance(&self, t: f64) -> f64 {
        t * t * self.sigma_sq + (1.0 - t) * (1.0 - t)
    }

    pub fn sample(&self, rng: &mut crate::numeric::RngState) -> LatentVector {
        let s = self.sigma_sq.sqrt();
        LatentVector::from_raw(self.mu.as_slice().iter().map(|m| m + s * rng.normal()).collect())
    }
}

/// Finite mixture of isotropic Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    components: Vec<(f64, GaussianSpec)>,
}

impl MixtureSpec {
    pub fn new(components: Vec<(f64, GaussianSpec)>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("mixture needs at least one component".into()))?;
        let d = first.1.dim();
        if let Some((_, g)) = components.iter().find(|(_, g)| g.dim() != d) {
            return Err(Error::InvalidDimension(format!(
                "mixture components disagree on dimension: {d} vs {}",
                g.dim()
            )));
        }
        if components.iter().any(|(w, _)| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be positive".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[(f64, GaussianSpec)] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    pub fn sample(&self, rng: &mut crate::numeric::RngState) -> LatentVector {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (w, g) in &self.components {
            acc += w;
            if u < acc {
                return g.sample(rng);
            }
        }
        self.components[self.components.len() - 1].1.sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowCoefficients {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// `lambda`, and the coefficients of `z0_hat = alpha * z_t + beta * mu`.
pub fn flow_coefficients(t: Timestep, sigma_sq: f64) -> FlowCoefficients {
    let t = t.get();
    let lambda = 1.0 / (t * t * sigma_sq + (1.0 - t) * (1.0 - t));
    FlowCoefficients {
        lambda,
        alpha: 1.0 - lambda * t * t * sigma_sq + lambda * t * (1.0 - t),
        beta: lambda * t * (t - 1.0),
    }
}

fn check(z_t: &LatentVector, spec: &GaussianSpec) -> Result<()> {
    z_t.check_dim(spec.dim())
}

/// `E[z1 | z_t] = mu + t sigma^2 lambda (z_t - t mu)`
pub fn posterior_mean_z1(z_t: &LatentVector, t: Timestep, spec: &GaussianSpec) -> Result<LatentVector> {
    check(z_t, spec)?;
    let t = t.get();
    let lambda = 1.0 / spec.marginal_variance(t);
    let gain = t * spec.sigma_sq * lambda;
    let mu = spec.mu.as_slice();
    Ok(LatentVector::from_raw(
        z_t.as_slice().iter().zip(mu).map(|(z, m)| m + gain * (z - t * m)).collect(),
    ))
}

/// `E[z0 | z_t] = (1 - t) lambda (z_t - t mu)`
pub fn posterior_mean_z0(z_t: &LatentVector, t: Timestep, spec: &GaussianSpec) -> Result<LatentVector> {
    check(z_t, spec)?;
    let t = t.get();
    let gain = (1.0 - t) / spec.marginal_variance(t);
    let mu = spec.mu.as_slice();
    Ok(LatentVector::from_raw(
        z_t.as_slice().iter().zip(mu).map(|(z, m)| gain * (z - t * m)).collect(),
    ))
}

/// Coefficients `(c_z, c_mu)` with `E[z1 - z0 | z_t] = c_z z_t + c_mu mu`.
pub fn velocity_coefficients(t: f64, sigma_sq: f64) -> (f64, f64) {
    let lambda = 1.0 / (t * t * sigma_sq + (1.0 - t) * (1.0 - t));
    ((t * sigma_sq - (1.0 - t)) * lambda, (1.0 - t) * lambda)
}

/// Closed-form conditional expectation of the flow-matching target `z1 - z0`.
pub fn expected_velocity(z_t: &LatentVector, t: Timestep, spec: &GaussianSpec) -> Result<LatentVector> {
    check(z_t, spec)?;
    let (cz, cm) = velocity_coefficients(t.get(), spec.sigma_sq);
    Ok(LatentVector::lincomb(cz, z_t, cm, &spec.mu))
}

/// Log of the isotropic Gaussian density `N(x; mean, var I)`.
fn log_isotropic_density(x: &[f64], mean_scale: f64, mean: &[f64], var: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, m)| (a - mean_scale * m).powi(2)).sum();
    -0.5 * sq / var - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln()
}

/// Posterior component weights given `z_t`, computed in log space.
pub fn mixture_responsibilities(z_t: &LatentVector, t: f64, spec: &MixtureSpec) -> Result<Vec<f64>> {
    let logs: Vec<f64> = spec
        .components
        .iter()
        .map(|(w, g)| {
            w.ln() + log_isotropic_density(z_t.as_slice(), t, g.mu.as_slice(), g.marginal_variance(t))
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericalDegeneracy {
            t,
            detail: format!("all responsibilities vanish at z_t = {:?}", z_t.as_slice()),
        });
    }
    let mut r: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = r.iter().sum();
    r.iter_mut().for_each(|v| *v /= total);
    Ok(r)
}

/// Exact `E[z1 - z0 | z_t]` when the clean data is a Gaussian mixture. Requires `t < 1`.
pub fn expected_velocity_mixture(
    z_t: &LatentVector,
    t: Timestep,
    spec: &MixtureSpec,
) -> Result<LatentVector> {
    z_t.check_dim(spec.dim())?;
    if t.get() >= 1.0 {
        return Err(Error::InvalidArgument(
            "mixture velocity needs t < 1; clamp to 1 - 1e-9".into(),
        ));
    }
    let r = mixture_responsibilities(z_t, t.get(), spec)?;
    let mut out = vec![0.0; spec.dim()];
    for (rk, (_, g)) in r.iter().zip(&spec.components) {
        let v = expected_velocity(z_t, t, g)?;
        for (o, vi) in out.iter_mut().zip(v.as_slice()) {
            *o += rk * vi;
        }
    }
    Ok(LatentVector::from_raw(out))
}

/// `E||z0_hat||^2` over the joint draw of `(z0, z1)`.
pub fn expected_z0_norm_sq(t: Timestep, spec: &GaussianSpec) -> f64 {
    let c = flow_coefficients(t, spec.sigma_sq);
    let t = t.get();
    let d = spec.dim() as f64;
    let mu_sq = spec.mu.norm_sq();
    let zt_sq = t * t * (mu_sq + d * spec.sigma_sq) + (1.0 - t) * (1.0 - t) * d;
    let zt_mu = t * mu_sq;
    let v = c.alpha * c.alpha * zt_sq + 2.0 * c.alpha * c.beta * zt_mu + c.beta * c.beta * mu_sq;
    v.max(0.0)
}

/// Noise implied by a velocity prediction: `z0_hat = z_t - t v`.
pub fn one_step_inversion(z_t: &LatentVector, t: Timestep, v: &LatentVector) -> LatentVector {
    z_t.axpy(-t.get(), v)
}

/// The Gaussian posterior velocity as a [`VelocityField`]; ignores the tag.
#[derive(Debug, Clone)]
pub struct GaussianField(pub GaussianSpec);

impl VelocityField for GaussianField {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn evaluate(&self, z: &LatentVector, t: Timestep, _tag: DomainTag) -> Result<LatentVector> {
        expected_velocity(z, t, &self.0)
    }
}

/// The mixture posterior velocity; `t` is clamped to `1 - 1e-9`.
#[derive(Debug, Clone)]
pub struct MixtureField(pub MixtureSpec);

pub const MIXTURE_T_MAX: f64 = 1.0 - 1e-9;

impl VelocityField for MixtureField {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn evaluate(&self, z: &LatentVector, t: Timestep, _tag: DomainTag) -> Result<LatentVector> {
        let t = Timestep::new(t.get().min(MIXTURE_T_MAX))?;
        expected_velocity_mixture(z, t, &self.0)
    }
}
