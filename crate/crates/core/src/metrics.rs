//! Distribution-level scores for translated point clouds: Fréchet distance
//! between Gaussian fits and a normalized displacement ("structure") score.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::nn::mlp::Batch;
use crate::numeric::{gaussian_fit, norm, LatentVector};

const SYMMETRY_TOL: f64 = 1e-8;
const NEGATIVE_EIG_TOL: f64 = 1e-10;

/// Mean and covariance of a Gaussian fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    mean: LatentVector,
    covariance: DMatrix<f64>,
}

impl GaussianSummary {
    pub fn new(mean: LatentVector, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.dim();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::InvalidDimension(format!(
                "covariance is {}x{}, mean has {d} entries",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if max_asymmetry(&covariance) > 1e-10 * covariance.amax().max(1.0) {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        Ok(Self { mean, covariance })
    }

    pub fn fit(samples: &Batch) -> Result<Self> {
        let rows: Vec<LatentVector> = samples.iter_rows().map(|r| LatentVector::from_raw(r.to_vec())).collect();
        let (mean, covariance) = gaussian_fit(&rows)?;
        Ok(Self { mean, covariance })
    }

    pub fn mean(&self) -> &LatentVector {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Square root of a symmetric PSD matrix plus the number of eigenvalues that
/// had to be clamped to zero (negative beyond round-off).
pub fn matrix_sqrt_psd_clamped(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    if !m.is_square() {
        return Err(Error::InvalidDimension(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    if max_asymmetry(m) > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!("matrix asymmetric by {:e}", max_asymmetry(m))));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut clamped = 0;
    let roots = eig.eigenvalues.map(|l| {
        if l < -NEGATIVE_EIG_TOL * scale {
            clamped += 1;
        }
        l.max(0.0).sqrt()
    });
    let q = &eig.eigenvectors;
    let r = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok(((&r + r.transpose()) * 0.5, clamped))
}

pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    matrix_sqrt_psd_clamped(m).map(|(r, _)| r)
}

/// Fréchet distance together with a flag set when the square root needed the
/// clamped-eigenvalue fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frechet {
    pub value: f64,
    pub clamped: bool,
}

pub fn frechet_distance_checked(p: &GaussianSummary, q: &GaussianSummary) -> Result<Frechet> {
    if p.dim() != q.dim() {
        return Err(Error::InvalidDimension(format!("{} vs {}", p.dim(), q.dim())));
    }
    let mean_term = (&p.mean - &q.mean).norm_sq();
    // (S1 S2)^{1/2} has the same trace as (sqrt(S1) S2 sqrt(S1))^{1/2}, which is symmetric.
    let (r1, c1) = matrix_sqrt_psd_clamped(&p.covariance)?;
    let inner = &r1 * &q.covariance * &r1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let (cross, c2) = matrix_sqrt_psd_clamped(&inner)?;
    let value = mean_term + p.covariance.trace() + q.covariance.trace() - 2.0 * cross.trace();
    Ok(Frechet { value: value.max(0.0), clamped: c1 + c2 > 0 })
}

pub fn frechet_distance(p: &GaussianSummary, q: &GaussianSummary) -> Result<f64> {
    frechet_distance_checked(p, q).map(|f| f.value)
}

/// Mean per-pair displacement divided by the mean input norm.
pub fn structure_score(inputs: &Batch, outputs: &Batch) -> Result<f64> {
    if inputs.rows() != outputs.rows() || inputs.cols() != outputs.cols() {
        return Err(Error::InvalidArgument(format!(
            "batch shapes differ: {}x{} vs {}x{}",
            inputs.rows(),
            inputs.cols(),
            outputs.rows(),
            outputs.cols()
        )));
    }
    if inputs.rows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = inputs.rows() as f64;
    let mut disp = 0.0;
    let mut scale = 0.0;
    let mut diff = vec![0.0; inputs.cols()];
    for (a, b) in inputs.iter_rows().zip(outputs.iter_rows()) {
        for (d, (x, y)) in diff.iter_mut().zip(a.iter().zip(b)) {
            *d = y - x;
        }
        disp += norm(&diff);
        scale += norm(a);
    }
    if scale == 0.0 {
        return Err(Error::InvalidArgument("inputs have zero mean norm".into()));
    }
    Ok((disp / n) / (scale / n))
}
