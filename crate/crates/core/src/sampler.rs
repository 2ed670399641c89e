//! Explicit Euler integration of the flow ODE from noise (`t = 0`) to data
//! (`t = 1`), with per-step instrumentation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analytic::one_step_inversion;
use crate::error::{Error, Result};
use crate::numeric::{cosine_similarity, LatentVector, Timestep};

/// Discrete stand-in for a text prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    #[default]
    None,
    A2b,
    B2a,
}

impl DomainTag {
    pub const ALL: [DomainTag; 3] = [DomainTag::None, DomainTag::A2b, DomainTag::B2a];

    pub fn index(self) -> usize {
        match self {
            DomainTag::None => 0,
            DomainTag::A2b => 1,
            DomainTag::B2a => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::None => "none",
            DomainTag::A2b => "a2b",
            DomainTag::B2a => "b2a",
        }
    }
}

/// Anything that can be queried as `v(z, t, tag)`.
pub trait VelocityField {
    fn dim(&self) -> usize;

    fn evaluate(&self, z: &LatentVector, t: Timestep, tag: DomainTag) -> Result<LatentVector>;
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&self, z: &LatentVector, t: Timestep, tag: DomainTag) -> Result<LatentVector> {
        (**self).evaluate(z, t, tag)
    }
}

/// Strictly increasing timesteps inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule(Vec<f64>);

impl Schedule {
    pub fn new(timesteps: Vec<f64>) -> Result<Self> {
        if timesteps.len() < 2 {
            return Err(Error::InvalidArgument("schedule needs at least 2 timesteps".into()));
        }
        if timesteps[0] < 0.0 || timesteps[timesteps.len() - 1] > 1.0 {
            return Err(Error::InvalidArgument("schedule must lie in [0, 1]".into()));
        }
        if timesteps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("schedule must be strictly increasing".into()));
        }
        Ok(Self(timesteps))
    }

    /// `steps + 1` evenly spaced points from 0 to 1.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("need at least one step".into()));
        }
        Self::new((0..=steps).map(|i| i as f64 / steps as f64).collect())
    }

    pub fn timesteps(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub z: LatentVector,
    pub v: LatentVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn final_z(&self) -> &LatentVector {
        &self.records[self.records.len() - 1].z
    }
}

/// Integrates `dz/dt = v(z, t)` with `z_{i+1} = z_i + (t_{i+1} - t_i) v(z_i, t_i)`.
///
/// The field is also evaluated at the last timestep so every record carries a velocity.
pub fn euler_sample<F: VelocityField + ?Sized>(
    field: &F,
    z_init: &LatentVector,
    schedule: &Schedule,
    tag: DomainTag,
) -> Result<Trajectory> {
    if !z_init.is_finite() {
        return Err(Error::NonFinite("initial latent".into()));
    }
    z_init.check_dim(field.dim())?;
    let ts = schedule.timesteps();
    let mut records = Vec::with_capacity(ts.len());
    let mut z = z_init.clone();
    for (i, &t) in ts.iter().enumerate() {
        let v = field.evaluate(&z, Timestep::new(t)?, tag)?;
        if !v.is_finite() {
            return Err(Error::Divergence {
                stage: format!("euler step {i} (t={t})"),
                detail: "non-finite velocity".into(),
            });
        }
        let next = ts.get(i + 1).map(|&tn| z.axpy(tn - t, &v));
        records.push(TrajectoryRecord { t, z, v });
        match next {
            Some(n) => z = n,
            None => break,
        }
    }
    Ok(Trajectory { records })
}

/// One row of the velocity/noise diagnostics along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub t: f64,
    /// `None` when the velocity at this record is the zero vector.
    pub cos_sim: Option<f64>,
    pub z0_norm: f64,
}

/// Cosine between each record's velocity and `z_final`, and the norm of the
/// one-step noise estimate `z - t v`.
pub fn trajectory_curves(traj: &Trajectory, z_final: &LatentVector) -> Result<Vec<CurveRow>> {
    if z_final.norm() == 0.0 {
        return Err(Error::UndefinedDirection("final sample is the zero vector".into()));
    }
    traj.records
        .iter()
        .map(|r| {
            let t = Timestep::new(r.t)?;
            let cos_sim = match cosine_similarity(&r.v, z_final) {
                Ok(c) => Some(c),
                Err(Error::UndefinedDirection(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(CurveRow { t: r.t, cos_sim, z0_norm: one_step_inversion(&r.z, t, &r.v).norm() })
        })
        .collect()
}

/// Per-step averages over many runs, reduced in run order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedRow {
    pub t: f64,
    pub cos_sim: f64,
    /// Root mean square of `||z0_hat||`, the quantity whose square has a closed form.
    pub z0_norm_rms: f64,
    pub z0_norm_mean: f64,
}

pub fn average_curves(runs: &[Vec<CurveRow>]) -> Result<Vec<AveragedRow>> {
    let first = runs.first().ok_or_else(|| Error::InvalidArgument("no runs to average".into()))?;
    let steps = first.len();
    if runs.iter().any(|r| r.len() != steps) {
        return Err(Error::InvalidArgument("runs have different lengths".into()));
    }
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps {
        let (mut cos, mut ncos, mut sq, mut abs) = (0.0, 0usize, 0.0, 0.0);
        for run in runs {
            let row = run[i];
            if let Some(c) = row.cos_sim {
                cos += c;
                ncos += 1;
            }
            sq += row.z0_norm * row.z0_norm;
            abs += row.z0_norm;
        }
        let n = runs.len() as f64;
        out.push(AveragedRow {
            t: first[i].t,
            cos_sim: if ncos > 0 { cos / ncos as f64 } else { f64::NAN },
            z0_norm_rms: (sq / n).sqrt(),
            z0_norm_mean: abs / n,
        });
    }
    Ok(out)
}

/// Writes `run_id, step_index, t, cos_sim, z0_norm`; a missing cosine is an empty field.
pub fn write_curves_csv<W: Write>(out: W, runs: &[Vec<CurveRow>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "step_index", "t", "cos_sim", "z0_norm"])?;
    for (run_id, rows) in runs.iter().enumerate() {
        for (step, row) in rows.iter().enumerate() {
            w.write_record([
                run_id.to_string(),
                step.to_string(),
                row.t.to_string(),
                row.cos_sim.map(|c| c.to_string()).unwrap_or_default(),
                row.z0_norm.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{GaussianField, GaussianSpec};
    use crate::numeric::{sample_standard_normal, RngState};

    fn lv(v: &[f64]) -> LatentVector {
        LatentVector::new(v.to_vec()).unwrap()
    }

    struct Constant(LatentVector);
    impl VelocityField for Constant {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn evaluate(&self, _: &LatentVector, _: Timestep, _: DomainTag) -> Result<LatentVector> {
            Ok(self.0.clone())
        }
    }

    struct Linear;
    impl VelocityField for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&self, z: &LatentVector, _: Timestep, _: DomainTag) -> Result<LatentVector> {
            Ok(z.clone())
        }
    }

    struct Exploding;
    impl VelocityField for Exploding {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&self, _: &LatentVector, t: Timestep, _: DomainTag) -> Result<LatentVector> {
            let v = if t.get() > 0.4 { f64::INFINITY } else { 1.0 };
            Ok(LatentVector::from_raw(vec![v]))
        }
    }

    fn gaussian() -> GaussianField {
        GaussianField(GaussianSpec::new(lv(&[3.0, -1.0]), 0.25).unwrap())
    }

    #[test]
    fn constant_field_single_step() {
        let c = lv(&[0.5, -2.0]);
        let traj = euler_sample(&Constant(c.clone()), &lv(&[1.0, 1.0]), &Schedule::uniform(1).unwrap(), DomainTag::None)
            .unwrap();
        assert_eq!(traj.records.len(), 2);
        assert_eq!(traj.final_z().as_slice(), &[1.5, -1.0]);
    }

    #[test]
    fn linear_field_hand_euler() {
        let s = Schedule::new(vec![0.0, 0.5, 1.0]).unwrap();
        let traj = euler_sample(&Linear, &lv(&[1.0]), &s, DomainTag::None).unwrap();
        assert_eq!(traj.records[1].z[0], 1.5);
        assert_eq!(traj.records[2].z[0], 2.25);
    }

    #[test]
    fn divergence_reports_timestep() {
        let err = euler_sample(&Exploding, &lv(&[0.0]), &Schedule::uniform(4).unwrap(), DomainTag::None)
            .unwrap_err();
        match err {
            Error::Divergence { stage, .. } => assert!(stage.contains("t=0.5"), "{stage}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(vec![0.0]).is_err());
        assert!(Schedule::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(Schedule::new(vec![-0.1, 0.5]).is_err());
        assert!(Schedule::new(vec![0.2, 1.1]).is_err());
        assert_eq!(Schedule::uniform(50).unwrap().len(), 51);
    }

    #[test]
    fn records_chain_by_euler_rule() {
        let mut rng = RngState::new(4);
        let z = sample_standard_normal(&mut rng, 2).unwrap();
        let s = Schedule::new(vec![0.0, 0.13, 0.4, 0.77, 0.9, 1.0]).unwrap();
        let traj = euler_sample(&gaussian(), &z, &s, DomainTag::None).unwrap();
        for w in traj.records.windows(2) {
            let again = w[0].z.axpy(w[1].t - w[0].t, &w[0].v);
            assert_eq!(again, w[1].z);
        }
    }

    #[test]
    fn gaussian_field_transports_to_mean() {
        let field = gaussian();
        let s = Schedule::uniform(50).unwrap();
        let mut rng = RngState::new(21);
        let n = 10_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let z = sample_standard_normal(&mut rng, 2).unwrap();
            let traj = euler_sample(&field, &z, &s, DomainTag::None).unwrap();
            mean[0] += traj.final_z()[0] / n as f64;
            mean[1] += traj.final_z()[1] / n as f64;
        }
        assert!((mean[0] - 3.0).abs() < 0.05 && (mean[1] + 1.0).abs() < 0.05, "{mean:?}");
    }

    #[test]
    fn refinement_shrinks_endpoint_change() {
        let field = gaussian();
        let mut rng = RngState::new(8);
        let z = sample_standard_normal(&mut rng, 2).unwrap();
        let end = |k| {
            euler_sample(&field, &z, &Schedule::uniform(k).unwrap(), DomainTag::None)
                .unwrap()
                .final_z()
                .clone()
        };
        let mut prev = f64::INFINITY;
        for k in [8, 16, 32, 64, 128] {
            let diff = (&end(2 * k) - &end(k)).norm();
            assert!(diff < prev, "k={k}: {diff} !< {prev}");
            prev = diff;
        }
    }

    #[test]
    fn curves_endpoints_on_gaussian_field() {
        let mut rng = RngState::new(2);
        let z = sample_standard_normal(&mut rng, 2).unwrap();
        let traj = euler_sample(&gaussian(), &z, &Schedule::uniform(50).unwrap(), DomainTag::None).unwrap();
        let rows = trajectory_curves(&traj, traj.final_z()).unwrap();
        assert_eq!(rows[0].z0_norm, z.norm());
        let last = rows.last().unwrap();
        assert!((last.cos_sim.unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_velocity_row_is_missing() {
        let traj = euler_sample(&Constant(lv(&[0.0, 0.0])), &lv(&[1.0, 2.0]), &Schedule::uniform(2).unwrap(), DomainTag::None)
            .unwrap();
        let rows = trajectory_curves(&traj, traj.final_z()).unwrap();
        assert!(rows.iter().all(|r| r.cos_sim.is_none()));
        assert!(trajectory_curves(&traj, &lv(&[0.0, 0.0])).is_err());
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &[rows]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run_id,step_index,t,cos_sim,z0_norm\n0,0,0,,"), "{text}");
    }
}
