//! Scenario configuration, ground truth, and the lossy delaying channel.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::{Matrix, Vector};
use crate::model::{BearingSensor, CoordinatedTurn, ModelError, SensorModel};
use crate::pf::GaussianSummary;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A measurement taken by `sensor` at step `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub sensor: usize,
    pub time: usize,
    pub value: Vec<f64>,
}

impl Measurement {
    pub fn new(sensor: usize, time: usize, value: Vec<f64>) -> Self {
        Self {
            sensor,
            time,
            value,
        }
    }
}

/// A measurement taken at `origin` that reaches the fusion centre at
/// `arrival > origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct OosmRecord {
    pub sensor: usize,
    pub origin: usize,
    pub arrival: usize,
    pub value: Vec<f64>,
}

impl OosmRecord {
    pub fn delay(&self) -> usize {
        self.arrival - self.origin
    }

    pub fn measurement(&self) -> Measurement {
        Measurement::new(self.sensor, self.origin, self.value.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SensorConfig {
    pub x: f64,
    pub y: f64,
    /// Bearing noise standard deviation, radians.
    pub sigma: f64,
}

/// Every constant of a tracking scenario. Field names are the JSON keys.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of filtering steps after the initial state.
    pub duration_steps: usize,
    pub sampling_period_s: f64,
    pub turn_radius_m: f64,
    pub speed_kmh: f64,
    /// Initial target position; the target starts heading along +y.
    pub start_position_m: [f64; 2],
    /// Clockwise turn when true.
    pub clockwise: bool,
    /// Diagonal of the filter process-noise covariance V.
    pub process_noise_diag: [f64; 5],
    pub sensors: Vec<SensorConfig>,
    /// Probability that a measurement reaches the fusion centre at all.
    pub p_osm: f64,
    /// Maximum delay ℓ in steps.
    pub max_delay: usize,
    /// Deliver every zero-delay measurement regardless of `p_osm`.
    pub always_deliver_undelayed: bool,
    pub prior_mean: [f64; 5],
    pub prior_cov_diag: [f64; 5],
    pub n_particles: usize,
    pub runs: usize,
    pub seed: u64,
    /// Average SEPF-EKS sweeps allowed per step for the selective filter.
    pub c_ave: f64,
    /// ESS-ratio threshold that escalates a reweighting to a re-run.
    pub nu: f64,
    pub c_ave_sweep: Vec<f64>,
    /// Steps at which the sweep reports RMS.
    pub sweep_report_steps: Vec<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration_steps: 40,
            sampling_period_s: 1.0,
            turn_radius_m: 500.0,
            speed_kmh: 200.0,
            start_position_m: [-500.0, 500.0],
            clockwise: true,
            process_noise_diag: [30.0 * 30.0, 30.0 * 30.0, 100.0, 100.0, 0.01],
            sensors: vec![
                SensorConfig {
                    x: -200.0,
                    y: 0.0,
                    sigma: 0.05,
                },
                SensorConfig {
                    x: 200.0,
                    y: 0.0,
                    sigma: 0.05,
                },
                SensorConfig {
                    x: -750.0,
                    y: 750.0,
                    sigma: 0.05,
                },
            ],
            p_osm: 0.7,
            max_delay: 5,
            always_deliver_undelayed: false,
            prior_mean: [0.0; 5],
            prior_cov_diag: [1000.0 * 1000.0, 1000.0 * 1000.0, 900.0, 900.0, 0.01],
            n_particles: 2000,
            runs: 200,
            seed: 2011,
            c_ave: 0.6,
            nu: 1.0 / 40.0,
            c_ave_sweep: vec![0.0, 0.1, 0.2, 0.4, 0.5, 0.6, 0.78, 1.0, 1.3, 2.0],
            sweep_report_steps: vec![10, 20, 30],
        }
    }
}

impl ScenarioConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check(1)
    }

    /// Like [`validate`](Self::validate) but also accepts `max_delay = 0`,
    /// the delay-free channel used for comparisons.
    pub fn validate_allowing_no_delay(&self) -> Result<(), ConfigError> {
        self.check(0)
    }

    fn check(&self, min_delay: usize) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.duration_steps == 0 {
            return bad("duration_steps must be positive");
        }
        if !(self.sampling_period_s > 0.0) {
            return bad("sampling_period_s must be positive");
        }
        if (self.sampling_period_s - 1.0).abs() > 1e-12 {
            return bad("the coordinated-turn model is discretized for a 1 s period");
        }
        if !(self.turn_radius_m > 0.0) {
            return bad("turn_radius_m must be positive");
        }
        if self.process_noise_diag.iter().any(|v| !(*v > 0.0)) {
            return bad("process noise variances must be positive");
        }
        if self.prior_cov_diag.iter().any(|v| !(*v > 0.0)) {
            return bad("prior variances must be positive");
        }
        if self.sensors.is_empty() || self.sensors.len() > 16 {
            return bad("between 1 and 16 sensors are supported");
        }
        if self.sensors.iter().any(|s| !(s.sigma > 0.0)) {
            return bad("sensor sigma must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_osm) {
            return bad("p_osm must lie in [0, 1]");
        }
        if self.max_delay < min_delay {
            return bad("max_delay must be at least 1");
        }
        if self.n_particles == 0 || self.runs == 0 {
            return bad("n_particles and runs must be positive");
        }
        if self.c_ave.is_nan() || self.c_ave < 0.0 || self.c_ave_sweep.iter().any(|c| c.is_nan() || *c < 0.0) {
            return bad("c_ave must be non-negative");
        }
        if !(self.nu >= 0.0 && self.nu <= 1.0) {
            return bad("nu must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn speed_mps(&self) -> f64 {
        self.speed_kmh / 3.6
    }

    /// Signed turn rate of the truth, negative for clockwise motion.
    pub fn true_turn_rate(&self) -> f64 {
        let w = self.speed_mps() / self.turn_radius_m;
        if self.clockwise {
            -w
        } else {
            w
        }
    }

    pub fn state_model(&self) -> Result<CoordinatedTurn, ModelError> {
        CoordinatedTurn::new(Matrix::from_diagonal(&Vector::from_row_slice(
            &self.process_noise_diag,
        )))
    }

    pub fn bearing_sensors(&self) -> Result<Vec<BearingSensor>, ModelError> {
        self.sensors
            .iter()
            .enumerate()
            .map(|(i, s)| BearingSensor::new(i, (s.x, s.y), s.sigma))
            .collect()
    }

    pub fn prior(&self) -> GaussianSummary {
        GaussianSummary::new(
            Vector::from_row_slice(&self.prior_mean),
            Matrix::from_diagonal(&Vector::from_row_slice(&self.prior_cov_diag)),
        )
    }
}

/// Noise-free circular truth, steps `0..=duration_steps`.
pub fn generate_truth(cfg: &ScenarioConfig) -> Vec<Vector> {
    let speed = cfg.speed_mps();
    let w = cfg.true_turn_rate();
    let mut x = [cfg.start_position_m[0], cfg.start_position_m[1], 0.0, speed, w];
    let model = crate::model::CoordinatedTurn::new(Matrix::identity(5, 5))
        .expect("identity noise is positive definite");
    let mut out = Vec::with_capacity(cfg.duration_steps + 1);
    out.push(Vector::from_row_slice(&x));
    for _ in 0..cfg.duration_steps {
        let mut next = [0.0; 5];
        crate::model::StateModel::transition_into(&model, &x, &mut next);
        x = next;
        out.push(Vector::from_row_slice(&x));
    }
    out
}

/// Everything the fusion centre receives at one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepArrivals {
    /// Zero-delay measurements taken at this step.
    pub undelayed: Vec<Measurement>,
    /// Late measurements arriving at this step.
    pub oosm: Vec<OosmRecord>,
}

/// Per-step arrivals plus the complete, undelayed record of every
/// generated measurement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementStream {
    /// Indexed by step; entry 0 is always empty.
    pub arrivals: Vec<StepArrivals>,
    /// Every generated measurement at its origin step, delivered or not.
    pub generated: Vec<Vec<Measurement>>,
    pub dropped: usize,
    /// Delivered after the final step; never seen by a filter.
    pub truncated: usize,
}

impl MeasurementStream {
    pub fn generated_count(&self) -> usize {
        self.generated.iter().map(Vec::len).sum()
    }

    pub fn delivered_count(&self) -> usize {
        self.arrivals
            .iter()
            .map(|a| a.undelayed.len() + a.oosm.len())
            .sum()
    }

    pub fn oosm_count(&self) -> usize {
        self.arrivals.iter().map(|a| a.oosm.len()).sum()
    }
}

/// Noisy bearings for steps `1..=T` routed through the lossy channel.
///
/// Each measurement is dropped with probability `1 − p_osm`; otherwise its
/// delay is uniform on `{0, …, ℓ}`. Arrivals past the final step are counted
/// as truncated.
pub fn generate_measurements<R: Rng + ?Sized>(
    truth: &[Vector],
    cfg: &ScenarioConfig,
    sensors: &[BearingSensor],
    rng: &mut R,
) -> MeasurementStream {
    let steps = truth.len();
    let mut stream = MeasurementStream {
        arrivals: vec![StepArrivals::default(); steps],
        generated: vec![Vec::new(); steps],
        dropped: 0,
        truncated: 0,
    };
    for (k, x) in truth.iter().enumerate().skip(1) {
        for (s, sensor) in sensors.iter().enumerate() {
            let sigma = cfg.sensors[s].sigma;
            let noise: f64 = rng.sample(StandardNormal);
            let value = sensor.measure(x.as_slice())[0] + sigma * noise;
            stream.generated[k].push(Measurement::new(s, k, vec![value]));

            let delivered: bool = rng.random::<f64>() < cfg.p_osm;
            let delay = rng.random_range(0..=cfg.max_delay);
            if delay == 0 && (delivered || cfg.always_deliver_undelayed) {
                stream.arrivals[k]
                    .undelayed
                    .push(Measurement::new(s, k, vec![value]));
            } else if !delivered {
                stream.dropped += 1;
            } else if k + delay < steps {
                stream.arrivals[k + delay].oosm.push(OosmRecord {
                    sensor: s,
                    origin: k,
                    arrival: k + delay,
                    value: vec![value],
                });
            } else {
                stream.truncated += 1;
            }
        }
    }
    stream
}
