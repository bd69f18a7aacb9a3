//! Sampling-importance-resampling particle filter primitives.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::mat::{self, MatError, Matrix, Vector};
use crate::model::{SensorModel, StateModel};
use crate::sim::Measurement;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error("particle set must hold at least one particle")]
    Empty,
    #[error("measurement refers to unknown sensor {0}")]
    UnknownSensor(usize),
    #[error(transparent)]
    Matrix(#[from] MatError),
}

/// Weighted particle cloud. States are stored row-major, one row per
/// particle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    dim: usize,
    states: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleSet {
    /// Equally weighted particles from row-major states.
    pub fn from_states(dim: usize, states: Vec<f64>) -> Result<Self, PfError> {
        if dim == 0 || states.is_empty() || !states.len().is_multiple_of(dim) {
            return Err(PfError::Empty);
        }
        let n = states.len() / dim;
        Ok(Self {
            dim,
            states,
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// Particles with explicit weights; weights are normalized.
    pub fn with_weights(dim: usize, states: Vec<f64>, weights: Vec<f64>) -> Result<Self, PfError> {
        let mut ps = Self::from_states(dim, states)?;
        if weights.len() != ps.len() {
            return Err(PfError::Empty);
        }
        ps.weights = weights;
        ps.normalize();
        Ok(ps)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Replaces the weights wholesale, e.g. to undo a failed reweighting.
    pub fn restore_weights(&mut self, weights: &[f64]) {
        assert_eq!(weights.len(), self.len());
        self.weights.copy_from_slice(weights);
    }

    pub fn set_uniform(&mut self) {
        let w = 1.0 / self.len() as f64;
        self.weights.iter_mut().for_each(|x| *x = w);
    }

    /// Normalizes weights to sum to one. Returns `false` (and resets to
    /// uniform) when the total is zero or not finite.
    pub fn normalize(&mut self) -> bool {
        let total: f64 = self.weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            self.set_uniform();
            return false;
        }
        self.weights.iter_mut().for_each(|w| *w /= total);
        true
    }

    /// Multiplies weights by `exp(log_lik)` in the log domain with the
    /// maximum subtracted before exponentiation.
    ///
    /// Returns `false` on total underflow, in which case the weights are
    /// reset to uniform.
    pub fn reweight_log(&mut self, log_lik: &[f64]) -> bool {
        debug_assert_eq!(log_lik.len(), self.len());
        let mut max = f64::NEG_INFINITY;
        let mut lw: Vec<f64> = Vec::with_capacity(self.len());
        for (w, l) in self.weights.iter().zip(log_lik) {
            let v = w.ln() + l;
            let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
            max = max.max(v);
            lw.push(v);
        }
        if !max.is_finite() {
            self.set_uniform();
            return false;
        }
        for (w, v) in self.weights.iter_mut().zip(&lw) {
            *w = (v - max).exp();
        }
        self.normalize()
    }

    /// Weighted mean of the first two state components. Needs `dim ≥ 2`.
    pub fn mean_position(&self) -> (f64, f64) {
        let (mut x, mut y) = (0.0, 0.0);
        for (i, w) in self.weights.iter().enumerate() {
            let p = self.particle(i);
            x += w * p[0];
            y += w * p[1];
        }
        (x, y)
    }
}

/// Mean and covariance of a state distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianSummary {
    pub fn new(mean: Vector, cov: Matrix) -> Self {
        Self { mean, cov }
    }
}

/// `1 / Σ ωᵢ²`; zero for an all-zero weight vector.
pub fn effective_sample_size(ps: &ParticleSet) -> f64 {
    let sq: f64 = ps.weights.iter().map(|w| w * w).sum();
    if sq > 0.0 {
        1.0 / sq
    } else {
        0.0
    }
}

/// Weighted sample mean and covariance of the particle set.
pub fn save_gauss(ps: &ParticleSet) -> GaussianSummary {
    let d = ps.dim;
    let mut mean = vec![0.0; d];
    for (i, w) in ps.weights.iter().enumerate() {
        for (m, x) in mean.iter_mut().zip(ps.particle(i)) {
            *m += w * x;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    let mut dev = vec![0.0; d];
    for (i, w) in ps.weights.iter().enumerate() {
        for ((dv, x), m) in dev.iter_mut().zip(ps.particle(i)).zip(&mean) {
            *dv = x - m;
        }
        for r in 0..d {
            let wr = w * dev[r];
            for c in r..d {
                cov[(r, c)] += wr * dev[c];
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    GaussianSummary::new(Vector::from_vec(mean), cov)
}

/// `n` equally weighted draws from `N(g.mean, g.cov)`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    g: &GaussianSummary,
    n: usize,
    rng: &mut R,
) -> Result<ParticleSet, PfError> {
    if n == 0 {
        return Err(PfError::Empty);
    }
    let d = g.mean.len();
    let l = mat::psd_factor(&g.cov)?;
    let mut states = vec![0.0; n * d];
    let mut z = vec![0.0; d];
    let mut lz = vec![0.0; d];
    for row in states.chunks_exact_mut(d) {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        mat::lower_mul_into(&l, &z, &mut lz);
        for ((s, m), e) in row.iter_mut().zip(g.mean.iter()).zip(&lz) {
            *s = m + e;
        }
    }
    ParticleSet::from_states(d, states)
}

/// Systematic resampling: one uniform offset, `N` evenly spaced pointers.
/// Leaves uniform weights.
pub fn systematic_resample<R: Rng + ?Sized>(ps: &mut ParticleSet, rng: &mut R) {
    let n = ps.len();
    let d = ps.dim;
    let step = 1.0 / n as f64;
    let u0: f64 = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(ps.states.len());
    let mut cum = ps.weights[0];
    let mut j = 0;
    for i in 0..n {
        let u = u0 + i as f64 * step;
        while u > cum && j + 1 < n {
            j += 1;
            cum += ps.weights[j];
        }
        out.extend_from_slice(&ps.states[j * d..(j + 1) * d]);
    }
    ps.states = out;
    ps.set_uniform();
}

/// Outcome flags of one filter step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepFlags {
    /// Every weight underflowed; weights were reset to uniform.
    pub weight_underflow: bool,
}

/// Propagates each particle through the dynamics with a process-noise
/// draw. Weights are untouched.
pub fn propagate<M, R>(ps: &mut ParticleSet, model: &M, rng: &mut R)
where
    M: StateModel + ?Sized,
    R: Rng + ?Sized,
{
    let d = ps.dim;
    let l = model.process_noise_factor();
    let mut fx = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut noise = vec![0.0; d];
    for row in ps.states.chunks_exact_mut(d) {
        model.transition_into(row, &mut fx);
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        mat::lower_mul_into(l, &z, &mut noise);
        for ((r, f), e) in row.iter_mut().zip(&fx).zip(&noise) {
            *r = f + e;
        }
    }
}

/// Multiplies weights by the joint likelihood of `meas` (no propagation,
/// no resampling).
pub fn weight_by_measurements<S: SensorModel>(
    ps: &mut ParticleSet,
    meas: &[Measurement],
    sensors: &[S],
) -> Result<StepFlags, PfError> {
    if meas.is_empty() {
        return Ok(StepFlags::default());
    }
    let mut bound = Vec::with_capacity(meas.len());
    for m in meas {
        let s = sensors.get(m.sensor).ok_or(PfError::UnknownSensor(m.sensor))?;
        bound.push((s, m.value.as_slice()));
    }
    let mut ll = vec![0.0; ps.len()];
    for (i, l) in ll.iter_mut().enumerate() {
        let x = ps.particle(i);
        *l = bound.iter().map(|(s, z)| s.log_likelihood(x, z)).sum();
    }
    Ok(StepFlags {
        weight_underflow: !ps.reweight_log(&ll),
    })
}

/// One SIR step: propagate with the prior as proposal, weight by the
/// step's measurements, normalize, then resample systematically.
pub fn sir_step<M, S, R>(
    ps: &mut ParticleSet,
    meas: &[Measurement],
    model: &M,
    sensors: &[S],
    rng: &mut R,
) -> Result<StepFlags, PfError>
where
    M: StateModel + ?Sized,
    S: SensorModel,
    R: Rng + ?Sized,
{
    propagate(ps, model, rng);
    let flags = weight_by_measurements(ps, meas, sensors)?;
    systematic_resample(ps, rng);
    Ok(flags)
}
