//! Central finite-difference checks of every hand-written gradient.

use std::io::Write;

use crate::adversarial::{gan_losses, latent_cycle_loss, latent_identity_loss, Projection};
use crate::error::Result;
use crate::nn::flow_matching::{flow_matching_loss, FmBatch};
use crate::nn::mlp::Batch;
use crate::nn::nets::{DiscParams, NetParams, Parameterized};
use crate::numeric::{LatentVector, RngState};
use crate::sampler::DomainTag;
use crate::translation::{InversionConfig, Strategy};

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub config: usize,
    pub loss: &'static str,
    pub checked: usize,
    pub max_rel_err: f64,
}

fn check_params<P: Parameterized + Clone>(
    params: &P,
    analytic: &[f64],
    eps: f64,
    loss: impl Fn(&P) -> Result<f64>,
) -> Result<(usize, f64)> {
    let mut worst = 0.0f64;
    let mut p = params.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = p.values()[i];
        p.values_mut()[i] = orig + eps;
        let up = loss(&p)?;
        p.values_mut()[i] = orig - eps;
        let down = loss(&p)?;
        p.values_mut()[i] = orig;
        worst = worst.max(relative_error(a, (up - down) / (2.0 * eps)));
    }
    Ok((analytic.len(), worst))
}

fn random_batch(rng: &mut RngState, rows: usize, cols: usize, scale: f64) -> Batch {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Batch::from_vec(rows, cols, data).expect("shape is consistent")
}

/// Runs every loss over `configs` random configurations with step `eps`.
pub fn run(configs: usize, eps: f64, seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    let inv = InversionConfig::new(0.4)?;
    for k in 0..configs {
        let mut rng = RngState::new(seed).substream(k as u64);
        let net_seed = seed.wrapping_mul(31).wrapping_add(k as u64);
        let net = NetParams::new(2, &[16, 16], net_seed)?;

        // flow matching, 8 items with mixed timesteps and tags
        let items: Vec<_> = (0..8)
            .map(|i| {
                let z0 = LatentVector::new(vec![rng.normal(), rng.normal()])?;
                let z1 = LatentVector::new(vec![2.0 * rng.normal(), 2.0 * rng.normal()])?;
                Ok((z0, z1, rng.uniform(), DomainTag::ALL[i % 3]))
            })
            .collect::<Result<_>>()?;
        let batch = FmBatch::from_items(&items)?;
        let (_, g) = flow_matching_loss(&net, &batch)?;
        let (n, e) = check_params(&net, &g.0, eps, |p| Ok(flow_matching_loss(p, &batch)?.0))?;
        out.push(GradCheck { config: k, loss: "flow_matching", checked: n, max_rel_err: e });

        // discriminator losses on a 2-8-1 network
        let disc = DiscParams::new(2, &[8], net_seed ^ 0x5a5a)?;
        let real = random_batch(&mut rng, 8, 2, 1.5);
        let fake = random_batch(&mut rng, 8, 2, 1.5);
        let gl = gan_losses(&disc, &real, &fake)?;
        let (n, e) = check_params(&disc, &gl.disc_grads.0, eps, |p| Ok(gan_losses(p, &real, &fake)?.d_loss))?;
        out.push(GradCheck { config: k, loss: "gan_discriminator", checked: n, max_rel_err: e });
        let mut worst = 0.0f64;
        for i in 0..fake.data().len() {
            let mut f = fake.clone();
            f.data_mut()[i] += eps;
            let up = gan_losses(&disc, &real, &f)?.g_loss;
            f.data_mut()[i] -= 2.0 * eps;
            let down = gan_losses(&disc, &real, &f)?.g_loss;
            worst = worst.max(relative_error(gl.d_fake.data()[i], (up - down) / (2.0 * eps)));
        }
        out.push(GradCheck { config: k, loss: "gan_generator", checked: fake.data().len(), max_rel_err: worst });

        // reconstruction losses through each strategy in turn
        let strategy = Strategy::ALL[k % 3];
        let proj = Projection::new(2, net_seed);
        let z = random_batch(&mut rng, 8, 2, 1.5);
        let mut g = net.zero_grads();
        latent_cycle_loss(&net, strategy, inv, &proj, &z, DomainTag::A2b, DomainTag::B2a, 1.0, &mut g)?;
        let (n, e) = check_params(&net, &g.0, eps, |p| {
            let mut scratch = p.zero_grads();
            Ok(latent_cycle_loss(p, strategy, inv, &proj, &z, DomainTag::A2b, DomainTag::B2a, 0.0, &mut scratch)?.total())
        })?;
        out.push(GradCheck { config: k, loss: "cycle", checked: n, max_rel_err: e });

        let mut g = net.zero_grads();
        latent_identity_loss(&net, strategy, inv, &proj, &z, DomainTag::B2a, 1.0, &mut g)?;
        let (n, e) = check_params(&net, &g.0, eps, |p| {
            let mut scratch = p.zero_grads();
            Ok(latent_identity_loss(p, strategy, inv, &proj, &z, DomainTag::B2a, 0.0, &mut scratch)?.total())
        })?;
        out.push(GradCheck { config: k, loss: "identity", checked: n, max_rel_err: e });
    }
    Ok(out)
}

/// Columns `config, loss, checked, max_rel_err`.
pub fn write_csv<W: Write>(out: W, checks: &[GradCheck]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config", "loss", "checked", "max_rel_err"])?;
    for c in checks {
        w.write_record([c.config.to_string(), c.loss.to_string(), c.checked.to_string(), c.max_rel_err.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
