//! Utility scoring and cost-constrained admission of delayed measurements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat;
use crate::model::SensorModel;
use crate::smooth::{self, SmoothError, SmoothedWindow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("origin step {tau} is not inside the delay window at step {k}")]
    OutOfWindow { tau: usize, k: usize },
    #[error("invalid selection config: {0}")]
    Config(String),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Average SEPF-EKS sweeps allowed per step.
    pub c_ave: f64,
    /// ESS-ratio degeneracy threshold.
    pub nu: f64,
    pub p_osm: f64,
    pub max_delay: usize,
    pub unit_cost: f64,
}

impl SelectionConfig {
    pub fn new(c_ave: f64, nu: f64, p_osm: f64, max_delay: usize) -> Result<Self, SelectError> {
        let cfg = Self {
            c_ave,
            nu,
            p_osm,
            max_delay,
            unit_cost: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SelectError> {
        let bad = |m: &str| Err(SelectError::Config(m.into()));
        if self.c_ave.is_nan() || self.c_ave < 0.0 {
            return bad("c_ave must be non-negative");
        }
        // ν = 0 is the never-escalate limit used for comparisons
        if !(0.0..=1.0).contains(&self.nu) {
            return bad("nu must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.p_osm) {
            return bad("p_osm must lie in [0, 1]");
        }
        if !(self.unit_cost > 0.0) {
            return bad("unit_cost must be positive");
        }
        Ok(())
    }
}

/// A possible arrival at step `k`: sensors `combo` reporting on step `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateUtility {
    pub tau: usize,
    /// Bit `s` set when sensor `s` is in the combination.
    pub combo: u32,
    pub utility: f64,
    pub arrival_prob: f64,
    pub cost: f64,
    /// Utility per unit cost.
    pub diminished: f64,
}

/// Which (sensor, step) measurements have reached the fusion centre.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrivalLog {
    arrived: Vec<u32>,
}

impl ArrivalLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark(&mut self, sensor: usize, tau: usize) {
        if self.arrived.len() <= tau {
            self.arrived.resize(tau + 1, 0);
        }
        self.arrived[tau] |= 1 << sensor;
    }

    pub fn has_arrived(&self, sensor: usize, tau: usize) -> bool {
        self.arrived.get(tau).is_some_and(|m| m & (1 << sensor) != 0)
    }

    /// Bitmask of sensors whose step-`tau` measurement is still outstanding.
    pub fn pending(&self, tau: usize, n_sensors: usize) -> u32 {
        let all = if n_sensors >= 32 { u32::MAX } else { (1u32 << n_sensors) - 1 };
        all & !self.arrived.get(tau).copied().unwrap_or(0)
    }
}

fn check_window(cfg: &SelectionConfig, tau: usize, k: usize) -> Result<usize, SelectError> {
    if tau >= k || k - tau > cfg.max_delay {
        return Err(SelectError::OutOfWindow { tau, k });
    }
    Ok(k - tau)
}

/// Probability that `sensor`'s step-`tau` measurement arrives at `k`,
/// under the uniform delay model.
pub fn arrival_prob_single(
    cfg: &SelectionConfig,
    log: &ArrivalLog,
    tau: usize,
    k: usize,
    sensor: usize,
) -> Result<f64, SelectError> {
    let d = check_window(cfg, tau, k)?;
    if log.has_arrived(sensor, tau) {
        return Ok(0.0);
    }
    Ok(cfg.p_osm / (cfg.max_delay + 1 - d) as f64)
}

/// Probability that exactly the sensors in `combo` (out of `n_sensors`)
/// report on step `tau` at step `k`.
pub fn arrival_prob_combo(
    cfg: &SelectionConfig,
    log: &ArrivalLog,
    tau: usize,
    k: usize,
    combo: u32,
    n_sensors: usize,
) -> Result<f64, SelectError> {
    let mut p = 1.0;
    for s in 0..n_sensors {
        let ps = arrival_prob_single(cfg, log, tau, k, s)?;
        p *= if combo & (1 << s) != 0 { ps } else { 1.0 - ps };
    }
    Ok(p)
}

/// `tr R_XY R_YY⁻¹ R_YX` for the stacked measurement of `combo` at `tau`.
pub fn combo_utility<S: SensorModel>(
    sw: &SmoothedWindow,
    tau: usize,
    sensors: &[S],
    combo: u32,
) -> Result<f64, SelectError> {
    let (h, q) = smooth::stacked_jacobian(sw, tau, sensors, combo)?;
    let ryy = smooth::meas_covariance_h(sw, tau, &h, &q)?;
    let rxy = smooth::cross_covariance_h(sw, tau, &h)?;
    let solved = mat::spd_solve(&ryy, &rxy.transpose()).map_err(SmoothError::from)?;
    Ok((rxy * solved).trace().max(0.0))
}

/// Every `(τ, I)` that could arrive at step `k`: `τ` over the delay window
/// and `I` a nonempty subset of the sensors still outstanding at `τ`.
///
/// `log` must reflect arrivals before step `k`.
pub fn enumerate_candidates<S: SensorModel>(
    sw: &SmoothedWindow,
    k: usize,
    log: &ArrivalLog,
    sensors: &[S],
    cfg: &SelectionConfig,
) -> Result<Vec<CandidateUtility>, SelectError> {
    let n = sensors.len();
    let first = k.saturating_sub(cfg.max_delay).max(sw.start()).max(1);
    let mut out = Vec::new();
    for tau in first..k {
        let pending = log.pending(tau, n);
        // iterate nonempty submasks of `pending` in ascending order
        let mut combos: Vec<u32> = Vec::new();
        let mut sub = pending;
        while sub != 0 {
            combos.push(sub);
            sub = (sub - 1) & pending;
        }
        combos.reverse();
        for combo in combos {
            let utility = combo_utility(sw, tau, sensors, combo)?;
            // one reweighting sweep per combination, whatever its size
            let cost = cfg.unit_cost;
            out.push(CandidateUtility {
                tau,
                combo,
                utility,
                arrival_prob: arrival_prob_combo(cfg, log, tau, k, combo, n)?,
                cost,
                diminished: utility / cost,
            });
        }
    }
    Ok(out)
}

/// Result of threshold selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub gamma: f64,
    /// Candidates with `diminished ≥ gamma`, in admission order.
    pub admitted: Vec<CandidateUtility>,
    /// Expected cost `Σ p·C` of the admitted set.
    pub expected_cost: f64,
}

impl Threshold {
    pub fn admits(&self, diminished: f64) -> bool {
        diminished >= self.gamma
    }
}

/// Smallest threshold `γ` whose admitted set `{R̃ ≥ γ}` has expected cost
/// at most `c_ave`; `+∞` when even the top candidate is too expensive.
///
/// Candidates are ranked by `(R̃ desc, τ asc, combo asc)`. Candidates with
/// equal `R̃` are admitted or rejected together, so the cut only falls at
/// the end of a tie group.
pub fn calc_gamma(candidates: &[CandidateUtility], c_ave: f64) -> Threshold {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        b.diminished
            .total_cmp(&a.diminished)
            .then(a.tau.cmp(&b.tau))
            .then(a.combo.cmp(&b.combo))
    });
    let mut psi = 0.0;
    let mut cut = 0;
    let mut cost_at_cut = 0.0;
    for (n, c) in sorted.iter().enumerate() {
        psi += c.arrival_prob * c.cost;
        if psi > c_ave {
            break;
        }
        let group_end = sorted
            .get(n + 1)
            .is_none_or(|next| next.diminished < c.diminished);
        if group_end {
            cut = n + 1;
            cost_at_cut = psi;
        }
    }
    sorted.truncate(cut);
    Threshold {
        gamma: sorted.last().map_or(f64::INFINITY, |c| c.diminished),
        admitted: sorted,
        expected_cost: cost_at_cut,
    }
}
