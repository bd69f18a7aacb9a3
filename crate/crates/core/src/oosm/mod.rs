//! OOSM processing strategies around a common filter loop: discard,
//! re-run from a stored Gaussian (GARP), smoother-based reweighting
//! (SEPF-EKS), and the cost-constrained selective filter.

mod window;

pub use window::{Slot, WindowStore};

use rand::Rng;
use thiserror::Error;

use crate::mat::{self, MatError, Matrix, Vector};
use crate::model::{GaussianDensity, ModelError, SensorModel, StateModel};
use crate::pf::{self, GaussianSummary, ParticleSet, PfError};
use crate::select::{self, ArrivalLog, SelectError, SelectionConfig};
use crate::sim::{Measurement, OosmRecord};
use crate::smooth::{self, SmoothError, SmoothedWindow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OosmError {
    #[error("invalid OOSM at step {k}: {reason}")]
    InvalidRecord { k: usize, reason: String },
    #[error(transparent)]
    Pf(#[from] PfError),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Matrix(#[from] MatError),
}

/// How a filter treats late measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Ignore every OOSM.
    Discard,
    /// Re-run from the stored summary before the earliest OOSM.
    Garp,
    /// Reweight current particles for every OOSM.
    SepfEks,
    /// Reweight only high-utility OOSMs within a cost budget; escalate to
    /// a re-run when reweighting collapses the sample.
    Selective(SelectionConfig),
}

/// OOSMs of one arrival step sharing an origin step.
#[derive(Debug, Clone, PartialEq)]
pub struct OosmGroup {
    pub tau: usize,
    /// Bit `s` set when sensor `s` contributes.
    pub mask: u32,
    /// Sorted by sensor index.
    pub measurements: Vec<Measurement>,
}

/// Groups a batch by origin step, ascending; each group sorted by sensor.
pub fn group_by_origin(z: &[OosmRecord]) -> Vec<OosmGroup> {
    let mut sorted: Vec<&OosmRecord> = z.iter().collect();
    sorted.sort_by_key(|r| (r.origin, r.sensor));
    let mut groups: Vec<OosmGroup> = Vec::new();
    for r in sorted {
        match groups.last_mut() {
            Some(g) if g.tau == r.origin => {
                g.mask |= 1 << r.sensor;
                g.measurements.push(r.measurement());
            }
            _ => groups.push(OosmGroup {
                tau: r.origin,
                mask: 1 << r.sensor,
                measurements: vec![r.measurement()],
            }),
        }
    }
    groups
}

/// Running counters of one filter instance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterStats {
    pub steps: usize,
    pub oosm_received: usize,
    pub groups_received: usize,
    /// OOSMs whose group passed the admission threshold.
    pub oosm_admitted: usize,
    pub groups_admitted: usize,
    /// Reweighting sweeps, one per processed group.
    pub sepf_sweeps: usize,
    /// Reweighting sweeps at each step.
    pub sweeps_per_step: Vec<u32>,
    pub garp_runs: usize,
    /// SIR steps repeated by re-runs.
    pub garp_sweeps: usize,
    /// Selective steps that fell back to a re-run.
    pub escalations: usize,
    /// OOSMs fused by a re-run rather than by reweighting.
    pub rerun_oosm: usize,
    /// Steps or reweightings where every weight underflowed.
    pub underflow_events: usize,
    /// Per-particle conditioning products, one per particle per group.
    pub conditioned_matvecs: u64,
}

/// Log-likelihood of an OOSM group for each current particle.
///
/// The linearized joint of `(X_τ, X_k)` is conditioned on `X_k = ξ_i`; the
/// conditional mean is affine in `ξ_i` with a gain and covariance computed
/// once, so each particle costs one matrix-vector product.
pub fn particle_conditioned_likelihoods<S: SensorModel>(
    sw: &SmoothedWindow,
    ps: &ParticleSet,
    group: &OosmGroup,
    sensors: &[S],
    matvecs: &mut u64,
) -> Result<Vec<f64>, OosmError> {
    let tau = group.tau;
    let mu_tau = sw.mean(tau)?;
    let mu_k = sw.mean(sw.end())?;
    let (gain, sigma) = conditioning_terms(sw, tau)?;
    let (h, q) = smooth::stacked_jacobian(sw, tau, sensors, group.mask)?;
    let density = GaussianDensity::new(mat::symmetrized(&h * &sigma * h.transpose() + q))?;

    let d = sw.state_dim();
    let m = density.dim();
    let chosen: Vec<(&S, &[f64])> = group
        .measurements
        .iter()
        .map(|z| (&sensors[z.sensor], z.value.as_slice()))
        .collect();
    let mut dev = Vector::zeros(d);
    let mut cond = Vector::zeros(d);
    let mut pred = vec![0.0; m];
    let mut innov = vec![0.0; m];
    let mut out = Vec::with_capacity(ps.len());
    for i in 0..ps.len() {
        for (dv, (x, mk)) in dev.iter_mut().zip(ps.particle(i).iter().zip(mu_k.iter())) {
            *dv = x - mk;
        }
        cond.copy_from(mu_tau);
        cond.gemv(1.0, &gain, &dev, 1.0);
        let mut row = 0;
        for (s, z) in &chosen {
            let ms = s.meas_dim();
            s.measure_into(cond.as_slice(), &mut pred[row..row + ms]);
            s.innovation_into(z, &pred[row..row + ms], &mut innov[row..row + ms]);
            row += ms;
        }
        out.push(density.log_pdf(&innov));
    }
    *matvecs += ps.len() as u64;
    Ok(out)
}

/// A particle filter with a rolling window and an OOSM strategy.
pub struct OosmFilter<'a, M: StateModel, S: SensorModel> {
    model: &'a M,
    sensors: &'a [S],
    strategy: Strategy,
    n_particles: usize,
    particles: ParticleSet,
    window: WindowStore,
    arrivals: ArrivalLog,
    k: usize,
    stats: FilterStats,
}

impl<'a, M: StateModel, S: SensorModel> OosmFilter<'a, M, S> {
    /// Draws the initial particles from `prior`.
    pub fn new<R: Rng + ?Sized>(
        model: &'a M,
        sensors: &'a [S],
        strategy: Strategy,
        prior: &GaussianSummary,
        n_particles: usize,
        max_delay: usize,
        rng: &mut R,
    ) -> Result<Self, OosmError> {
        if let Strategy::Selective(cfg) = &strategy {
            cfg.validate()?;
        }
        let particles = pf::sample_gaussian(prior, n_particles, rng)?;
        let window = WindowStore::new(max_delay, 0, pf::save_gauss(&particles));
        Ok(Self {
            model,
            sensors,
            strategy,
            n_particles,
            particles,
            window,
            arrivals: ArrivalLog::new(),
            k: 0,
            stats: FilterStats::default(),
        })
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    pub fn window(&self) -> &WindowStore {
        &self.window
    }

    pub fn stats(&self) -> &FilterStats {
        &self.stats
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    /// Weighted mean position of the current particles.
    pub fn estimate(&self) -> (f64, f64) {
        self.particles.mean_position()
    }

    pub fn summary(&self) -> GaussianSummary {
        pf::save_gauss(&self.particles)
    }

    /// One filter step: SIR update with the undelayed measurements `y`,
    /// store the summary, then hand the late batch `z` to the strategy.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        y: &[Measurement],
        z: &[OosmRecord],
        rng: &mut R,
    ) -> Result<(), OosmError> {
        let k = self.k + 1;
        self.validate_batch(k, y, z)?;
        self.k = k;
        let flags = pf::sir_step(&mut self.particles, y, self.model, self.sensors, rng)?;
        if flags.weight_underflow {
            self.stats.underflow_events += 1;
        }
        self.window
            .push(k, pf::save_gauss(&self.particles), y.to_vec());
        for m in y {
            self.arrivals.mark(m.sensor, m.time);
        }

        self.stats.steps += 1;
        self.stats.sweeps_per_step.push(0);
        if !z.is_empty() {
            let groups = group_by_origin(z);
            self.stats.oosm_received += z.len();
            self.stats.groups_received += groups.len();
            match self.strategy {
                Strategy::Discard => {}
                Strategy::Garp => {
                    self.stats.oosm_admitted += z.len();
                    self.stats.groups_admitted += groups.len();
                    self.process_garp(z, rng)?;
                }
                Strategy::SepfEks => self.process_sepf_eks(&groups)?,
                Strategy::Selective(cfg) => self.process_selective(z, &groups, &cfg, rng)?,
            }
            // bookkeeping after selection so candidates see the pre-arrival state
            for r in z {
                self.arrivals.mark(r.sensor, r.origin);
            }
        }
        Ok(())
    }

    fn validate_batch(&self, k: usize, y: &[Measurement], z: &[OosmRecord]) -> Result<(), OosmError> {
        let bad = |reason: String| Err(OosmError::InvalidRecord { k, reason });
        let n = self.sensors.len();
        if let Some(m) = y.iter().find(|m| m.sensor >= n || m.time != k) {
            return bad(format!("undelayed measurement from sensor {} at step {}", m.sensor, m.time));
        }
        for r in z {
            if r.sensor >= n {
                return bad(format!("unknown sensor {}", r.sensor));
            }
            if r.arrival != k || r.origin > k || r.origin == 0 || k - r.origin > self.window.max_delay() {
                return bad(format!("origin {} arrival {} outside the delay window", r.origin, r.arrival));
            }
        }
        let mut keys: Vec<(usize, usize)> = z.iter().map(|r| (r.origin, r.sensor)).collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate (origin, sensor) in batch".into());
        }
        Ok(())
    }

    /// Smooths the stored summaries over `max(first slot, k − ℓ) ..= k`.
    pub fn smooth(&self) -> Result<SmoothedWindow, OosmError> {
        let start = self
            .window
            .first_step()
            .max(self.k.saturating_sub(self.window.max_delay()));
        Ok(smooth::rts_smooth(start, &self.window.summaries_from(start), self.model)?)
    }

    /// Stores `z` at their origin steps, then re-runs SIR from the summary
    /// before the earliest origin through the current step.
    pub fn process_garp<R: Rng + ?Sized>(&mut self, z: &[OosmRecord], rng: &mut R) -> Result<(), OosmError> {
        let Some(t0) = z.iter().map(|r| r.origin).min() else {
            return Ok(());
        };
        for r in z {
            self.window.add_measurement(r.measurement());
        }
        let k = self.k;
        let start = self
            .window
            .slot(t0 - 1)
            .ok_or(OosmError::InvalidRecord {
                k,
                reason: format!("no stored summary before step {t0}"),
            })?
            .summary
            .clone();
        self.particles = pf::sample_gaussian(&start, self.n_particles, rng)?;
        for j in t0..=k {
            let slot = self.window.slot_mut(j).expect("window covers the delay horizon");
            let flags = pf::sir_step(&mut self.particles, &slot.measurements, self.model, self.sensors, rng)?;
            if flags.weight_underflow {
                self.stats.underflow_events += 1;
            }
            slot.summary = pf::save_gauss(&self.particles);
        }
        self.stats.garp_runs += 1;
        self.stats.garp_sweeps += k - t0 + 1;
        self.stats.rerun_oosm += z.len();
        Ok(())
    }

    /// Reweights by one group. On total underflow the previous weights are
    /// restored and `false` is returned.
    fn reweight_group(&mut self, sw: &SmoothedWindow, group: &OosmGroup) -> Result<bool, OosmError> {
        let ll = particle_conditioned_likelihoods(
            sw,
            &self.particles,
            group,
            self.sensors,
            &mut self.stats.conditioned_matvecs,
        )?;
        let before = self.particles.weights().to_vec();
        self.stats.sepf_sweeps += 1;
        *self.stats.sweeps_per_step.last_mut().expect("inside a step") += 1;
        if self.particles.reweight_log(&ll) {
            Ok(true)
        } else {
            self.particles.restore_weights(&before);
            self.stats.underflow_events += 1;
            Ok(false)
        }
    }

    fn store_groups(&mut self, groups: &[&OosmGroup]) {
        for g in groups {
            for m in &g.measurements {
                self.window.add_measurement(m.clone());
            }
        }
        if let Some(slot) = self.window.slot_mut(self.k) {
            slot.summary = pf::save_gauss(&self.particles);
        }
    }

    /// Reweights the current particles for every group, ascending origin.
    /// Particle locations never move.
    pub fn process_sepf_eks(&mut self, groups: &[OosmGroup]) -> Result<(), OosmError> {
        if groups.is_empty() {
            return Ok(());
        }
        let sw = self.smooth()?;
        for g in groups {
            self.reweight_group(&sw, g)?;
            self.stats.groups_admitted += 1;
            self.stats.oosm_admitted += g.measurements.len();
        }
        let all: Vec<&OosmGroup> = groups.iter().collect();
        self.store_groups(&all);
        Ok(())
    }

    /// Admits groups whose utility clears the step's threshold and
    /// reweights by them; escalates the whole batch to a re-run when the
    /// effective sample size collapses below `ν` times its prior value.
    pub fn process_selective<R: Rng + ?Sized>(
        &mut self,
        z: &[OosmRecord],
        groups: &[OosmGroup],
        cfg: &SelectionConfig,
        rng: &mut R,
    ) -> Result<(), OosmError> {
        let sw = self.smooth()?;
        let candidates = select::enumerate_candidates(&sw, self.k, &self.arrivals, self.sensors, cfg)?;
        let threshold = select::calc_gamma(&candidates, cfg.c_ave);

        let mut admitted: Vec<&OosmGroup> = Vec::new();
        for g in groups {
            let diminished = match candidates.iter().find(|c| c.tau == g.tau && c.combo == g.mask) {
                Some(c) => c.diminished,
                None => select::combo_utility(&sw, g.tau, self.sensors, g.mask)? / cfg.unit_cost,
            };
            if threshold.admits(diminished) {
                admitted.push(g);
            }
        }
        self.stats.groups_admitted += admitted.len();
        self.stats.oosm_admitted += admitted.iter().map(|g| g.measurements.len()).sum::<usize>();

        let mut degenerate = false;
        for g in &admitted {
            let n_prior = pf::effective_sample_size(&self.particles);
            let ok = self.reweight_group(&sw, g)?;
            let n_post = if ok { pf::effective_sample_size(&self.particles) } else { 0.0 };
            if n_post < cfg.nu * n_prior {
                degenerate = true;
                break;
            }
        }

        if degenerate {
            self.stats.escalations += 1;
            self.process_garp(z, rng)
        } else {
            if !admitted.is_empty() {
                self.store_groups(&admitted);
            }
            Ok(())
        }
    }
}

/// Stacked measurement vector of a group, in sensor order.
pub fn stacked_values(group: &OosmGroup) -> Vector {
    Vector::from_iterator(
        group.measurements.iter().map(|m| m.value.len()).sum(),
        group.measurements.iter().flat_map(|m| m.value.iter().copied()),
    )
}

/// Gain `C_τ R_k⁻¹` and conditional covariance `Σ_τ` used by the
/// particle-conditioned likelihood.
pub fn conditioning_terms(sw: &SmoothedWindow, tau: usize) -> Result<(Matrix, Matrix), OosmError> {
    let c = sw.lag_cov(tau)?;
    // G = C R_k⁻¹ from R_k Gᵀ = Cᵀ
    let gain = mat::spd_solve(sw.cov(sw.end())?, &c.transpose())?.transpose();
    let sigma = mat::symmetrized(sw.cov(tau)? - &gain * c.transpose());
    Ok((gain, sigma))
}
