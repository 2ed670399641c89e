use rflab::analytic::expected_velocity;
use rflab::experiments::fig4::{self, Fig4Config};
use rflab::experiments::theorem1::{self, Theorem1Config};
use rflab::numeric::sample_standard_normal;
use rflab::sampler::euler_sample;
use rflab::{DomainTag, GaussianField, GaussianSpec, LatentVector, RngState, Schedule};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[test]
fn standard_normal_stream_passes_chi_squared() {
    let (bins, draws) = (20usize, 100_000usize);
    let normal = Normal::standard();
    let edges: Vec<f64> = (1..bins).map(|k| normal.inverse_cdf(k as f64 / bins as f64)).collect();
    let mut counts = vec![0usize; bins];
    let mut rng = RngState::new(2024);
    let z = sample_standard_normal(&mut rng, draws).unwrap();
    for &x in z.as_slice() {
        counts[edges.partition_point(|&e| e < x)] += 1;
    }
    let expected = draws as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-squared {stat:.2} >= {critical:.2}");
}

#[test]
fn euler_samples_land_on_the_mean() {
    let mu = LatentVector::new(vec![3.0, -1.0]).unwrap();
    let field = GaussianField(GaussianSpec::new(mu.clone(), 0.25).unwrap());
    let schedule = Schedule::uniform(50).unwrap();
    let mut rng = RngState::new(3);
    let n = 10_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let z0 = sample_standard_normal(&mut rng, 2).unwrap();
        let out = euler_sample(&field, &z0, &schedule, DomainTag::None).unwrap();
        for (s, x) in sum.iter_mut().zip(out.final_z().as_slice()) {
            *s += x;
        }
    }
    for (s, m) in sum.iter().zip(mu.as_slice()) {
        assert!((s / n as f64 - m).abs() < 0.05, "mean {} vs {m}", s / n as f64);
    }
}

#[test]
fn kernel_oracle_rejects_a_sign_flipped_closed_form() {
    let cfg = Theorem1Config::default();
    assert!(theorem1::run(&cfg).unwrap().passed);
    let mutant = |z: &LatentVector, t: rflab::Timestep, spec: &GaussianSpec| {
        let right = expected_velocity(z, t, spec)?;
        // flip the sign of the z_t coefficient: v' = v - 2 c_z z
        let (cz, _) = rflab::analytic::velocity_coefficients(t.get(), spec.sigma_sq());
        Ok(right.axpy(-2.0 * cz, z))
    };
    let r = theorem1::run_against(&cfg, &mutant).unwrap();
    assert!(!r.passed, "mutant passed with max rel err {}", r.max_rel_err);
    assert!(r.max_rel_err > 0.5);
}

#[test]
fn averaged_curves_have_the_expected_shape() {
    let cfg = Fig4Config { runs: 1000, marginal_draws: 1000, ..Fig4Config::default() };
    let (report, _) = fig4::run(&cfg).unwrap();
    for w in report.rows.windows(2) {
        assert!(w[1].z0_norm < w[0].z0_norm, "z0 norm rises at t={}", w[1].t);
        assert!(w[1].cos_sim > w[0].cos_sim, "cosine falls at t={}", w[1].t);
    }
    assert!((report.final_cos - 1.0).abs() <= 1e-6);
}
