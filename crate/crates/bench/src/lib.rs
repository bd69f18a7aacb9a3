//! Fixtures shared by the criterion benchmarks.
//!
//! Each fixture is a snapshot of the default tracking scenario after a few
//! filtering steps, so kernels are timed on realistic particle clouds and
//! smoothing windows.

use oosm_core::harness::run_rng;
use oosm_core::oosm::{group_by_origin, OosmGroup};
use oosm_core::select::{self, ArrivalLog, CandidateUtility, SelectionConfig};
use oosm_core::sim::{self, Measurement};
use oosm_core::{BearingSensor, CoordinatedTurn, GaussianSummary, OosmFilter, ParticleSet, ScenarioConfig, SmoothedWindow, Strategy};
use rand_chacha::ChaCha8Rng;

pub struct Snapshot {
    pub cfg: ScenarioConfig,
    pub model: CoordinatedTurn,
    pub sensors: Vec<BearingSensor>,
    pub particles: ParticleSet,
    /// Filtered summaries over the smoothing window, oldest first.
    pub summaries: Vec<GaussianSummary>,
    pub window_start: usize,
    pub smoothed: SmoothedWindow,
    /// Undelayed measurements of the step after the snapshot.
    pub next_measurements: Vec<Measurement>,
    /// A delayed group with every sensor, at the oldest smoothed step.
    pub group: OosmGroup,
    pub candidates: Vec<CandidateUtility>,
    pub rng: ChaCha8Rng,
}

/// Runs SEPF-EKS for `steps` steps of run 0 with `n_particles` particles.
pub fn snapshot(n_particles: usize, steps: usize) -> Snapshot {
    let cfg = ScenarioConfig {
        n_particles,
        ..ScenarioConfig::default()
    };
    let model = cfg.state_model().expect("default model");
    let sensors = cfg.bearing_sensors().expect("default sensors");
    let truth = sim::generate_truth(&cfg);
    let stream = sim::generate_measurements(&truth, &cfg, &sensors, &mut run_rng(cfg.seed, 0, 0));
    let mut rng = run_rng(cfg.seed, 0, 1);

    let (particles, summaries, window_start, smoothed) = {
        let mut filter =
            OosmFilter::new(&model, &sensors, Strategy::SepfEks, &cfg.prior(), n_particles, cfg.max_delay, &mut rng)
                .expect("filter");
        for k in 1..=steps {
            let a = &stream.arrivals[k];
            filter.step(&a.undelayed, &a.oosm, &mut rng).expect("step");
        }
        let smoothed = filter.smooth().expect("smoothing");
        let start = smoothed.start();
        (filter.particles().clone(), filter.window().summaries_from(start), start, smoothed)
    };

    let tau = smoothed.start().max(1);
    let records: Vec<_> = stream.generated[tau]
        .iter()
        .map(|m| oosm_core::OosmRecord {
            sensor: m.sensor,
            origin: tau,
            arrival: steps,
            value: m.value.clone(),
        })
        .collect();
    let group = group_by_origin(&records).remove(0);

    let sel = SelectionConfig::new(cfg.c_ave, cfg.nu, cfg.p_osm, cfg.max_delay).expect("selection config");
    let candidates =
        select::enumerate_candidates(&smoothed, steps, &ArrivalLog::new(), &sensors, &sel).expect("candidates");

    Snapshot {
        next_measurements: stream.generated[steps + 1].clone(),
        cfg,
        model,
        sensors,
        particles,
        summaries,
        window_start,
        smoothed,
        group,
        candidates,
        rng,
    }
}
