//! State-space models: dynamics, sensors, and their Jacobians.
//!
//! Hot paths (particle propagation, likelihoods) work on raw `&[f64]`
//! slices; Jacobians and covariances are returned as dense matrices for
//! the smoother.

use std::f64::consts::PI;

use crate::mat::{self, MatError, Matrix, Vector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("target coincides with sensor {0}; bearing undefined")]
    CoincidentTarget(usize),
    #[error("state has dimension {got}, model expects {expected}")]
    StateDimension { expected: usize, got: usize },
    #[error(transparent)]
    Matrix(#[from] MatError),
}

/// Markov transition `X_k = f(X_{k-1}) + ϑ_k`, `ϑ_k ~ N(0, V)`.
pub trait StateModel {
    fn state_dim(&self) -> usize;
    /// Writes `f(x)` into `out`.
    fn transition_into(&self, x: &[f64], out: &mut [f64]);
    /// Jacobian of `f` at `x`.
    fn jacobian(&self, x: &[f64]) -> Matrix;
    fn process_noise(&self) -> &Matrix;
    /// Lower square-root factor of the process noise.
    fn process_noise_factor(&self) -> &Matrix;

    fn transition(&self, x: &[f64]) -> Vector {
        let mut out = vec![0.0; self.state_dim()];
        self.transition_into(x, &mut out);
        Vector::from_vec(out)
    }
}

/// Measurement map `Y = h(X) + ζ`, `ζ ~ N(0, Q)`.
pub trait SensorModel {
    fn id(&self) -> usize;
    fn meas_dim(&self) -> usize;
    /// Writes `h(x)` into `out`.
    fn measure_into(&self, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, x: &[f64]) -> Result<Matrix, ModelError>;
    fn noise(&self) -> &GaussianDensity;
    /// Innovation components are angles and wrap to (−π, π].
    fn angular(&self) -> bool;

    fn measure(&self, x: &[f64]) -> Vector {
        let mut out = vec![0.0; self.meas_dim()];
        self.measure_into(x, &mut out);
        Vector::from_vec(out)
    }

    /// `z − ĥ`, wrapped when the sensor is angular.
    fn innovation_into(&self, z: &[f64], predicted: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = if self.angular() {
                angle_diff(z[i], predicted[i])
            } else {
                z[i] - predicted[i]
            };
        }
    }

    /// `log N(z; h(x), Q)`.
    fn log_likelihood(&self, x: &[f64], z: &[f64]) -> f64 {
        let m = self.meas_dim();
        let mut pred = [0.0; 8];
        let mut innov = [0.0; 8];
        assert!(m <= 8, "measurement dimension above 8 not supported");
        self.measure_into(x, &mut pred[..m]);
        self.innovation_into(z, &pred[..m], &mut innov[..m]);
        self.noise().log_pdf(&innov[..m])
    }
}

/// Zero-mean Gaussian density with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    cov: Matrix,
    chol: Matrix,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(cov: Matrix) -> Result<Self, MatError> {
        let chol = mat::cholesky(&cov)?;
        let n = cov.nrows() as f64;
        let log_det: f64 = (0..cov.nrows()).map(|i| chol[(i, i)].ln()).sum::<f64>() * 2.0;
        let log_norm = -0.5 * (n * (2.0 * PI).ln() + log_det);
        Ok(Self {
            cov,
            chol,
            log_norm,
        })
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn log_pdf(&self, r: &[f64]) -> f64 {
        let n = self.chol.nrows();
        debug_assert_eq!(r.len(), n);
        if n == 1 {
            let s = r[0] / self.chol[(0, 0)];
            return self.log_norm - 0.5 * s * s;
        }
        // forward substitution L·y = r; quadratic form is |y|²
        let mut y = [0.0; 16];
        assert!(n <= 16, "density dimension above 16 not supported");
        let mut quad = 0.0;
        for i in 0..n {
            let mut acc = r[i];
            for j in 0..i {
                acc -= self.chol[(i, j)] * y[j];
            }
            y[i] = acc / self.chol[(i, i)];
            quad += y[i] * y[i];
        }
        self.log_norm - 0.5 * quad
    }
}

/// `(a − b)` wrapped to (−π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

/// Below this |ω| the turn coefficients use their Taylor series.
pub const TURN_RATE_SERIES_BELOW: f64 = 1e-6;

/// `(sin ω / ω, (1 − cos ω) / ω)` and their derivatives in ω.
fn turn_coefficients(w: f64) -> (f64, f64, f64, f64) {
    if w.abs() < TURN_RATE_SERIES_BELOW {
        let w2 = w * w;
        let a = 1.0 - w2 / 6.0 + w2 * w2 / 120.0;
        let b = w / 2.0 - w * w2 / 24.0;
        let da = -w / 3.0 + w * w2 / 30.0;
        let db = 0.5 - w2 / 8.0 + w2 * w2 / 144.0;
        (a, b, da, db)
    } else {
        let (s, c) = w.sin_cos();
        // 1 − cos ω via the half angle avoids cancellation at small ω
        let one_minus_c = 2.0 * (0.5 * w).sin().powi(2);
        let a = s / w;
        let b = one_minus_c / w;
        let da = (w * c - s) / (w * w);
        let db = (w * s - one_minus_c) / (w * w);
        (a, b, da, db)
    }
}

/// Applies the unit-period coordinated-turn map to `[px, py, vx, vy, ω]`.
fn ct_apply(x: &[f64], out: &mut [f64]) {
    let (px, py, vx, vy, w) = (x[0], x[1], x[2], x[3], x[4]);
    let (a, b, _, _) = turn_coefficients(w);
    let (s, c) = w.sin_cos();
    out[0] = px + a * vx - b * vy;
    out[1] = py + b * vx + a * vy;
    out[2] = c * vx - s * vy;
    out[3] = s * vx + c * vy;
    out[4] = w;
}

fn ct_jacobian(x: &[f64]) -> Matrix {
    let (vx, vy, w) = (x[2], x[3], x[4]);
    let (a, b, da, db) = turn_coefficients(w);
    let (s, c) = w.sin_cos();
    let mut f = Matrix::identity(5, 5);
    f[(0, 2)] = a;
    f[(0, 3)] = -b;
    f[(0, 4)] = da * vx - db * vy;
    f[(1, 2)] = b;
    f[(1, 3)] = a;
    f[(1, 4)] = db * vx + da * vy;
    f[(2, 2)] = c;
    f[(2, 3)] = -s;
    f[(2, 4)] = -s * vx - c * vy;
    f[(3, 2)] = s;
    f[(3, 3)] = c;
    f[(3, 4)] = c * vx - s * vy;
    f
}

/// Coordinated turn with unknown constant turn rate, sampling period 1 s.
/// State is `[px, py, vx, vy, ω]`.
#[derive(Debug, Clone)]
pub struct CoordinatedTurn {
    noise: Matrix,
    noise_factor: Matrix,
}

impl CoordinatedTurn {
    pub fn new(process_noise: Matrix) -> Result<Self, ModelError> {
        if process_noise.shape() != (5, 5) {
            return Err(ModelError::StateDimension {
                expected: 5,
                got: process_noise.nrows(),
            });
        }
        let noise_factor = mat::psd_factor(&process_noise)?;
        Ok(Self {
            noise: process_noise,
            noise_factor,
        })
    }
}

impl StateModel for CoordinatedTurn {
    fn state_dim(&self) -> usize {
        5
    }
    fn transition_into(&self, x: &[f64], out: &mut [f64]) {
        ct_apply(x, out);
    }
    fn jacobian(&self, x: &[f64]) -> Matrix {
        ct_jacobian(x)
    }
    fn process_noise(&self) -> &Matrix {
        &self.noise
    }
    fn process_noise_factor(&self) -> &Matrix {
        &self.noise_factor
    }
}

/// `(f(x), F(x))` for the coordinated-turn model.
pub fn ct_transition(x: &Vector) -> Result<(Vector, Matrix), ModelError> {
    if x.len() != 5 {
        return Err(ModelError::StateDimension {
            expected: 5,
            got: x.len(),
        });
    }
    let mut out = [0.0; 5];
    ct_apply(x.as_slice(), &mut out);
    Ok((Vector::from_row_slice(&out), ct_jacobian(x.as_slice())))
}

/// Bearing-only sensor at a fixed planar position.
#[derive(Debug, Clone)]
pub struct BearingSensor {
    id: usize,
    position: (f64, f64),
    noise: GaussianDensity,
}

impl BearingSensor {
    pub fn new(id: usize, position: (f64, f64), sigma: f64) -> Result<Self, ModelError> {
        let noise = GaussianDensity::new(Matrix::from_element(1, 1, sigma * sigma))?;
        Ok(Self {
            id,
            position,
            noise,
        })
    }

    pub fn position(&self) -> (f64, f64) {
        self.position
    }
}

impl SensorModel for BearingSensor {
    fn id(&self) -> usize {
        self.id
    }
    fn meas_dim(&self) -> usize {
        1
    }
    fn measure_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = (x[1] - self.position.1).atan2(x[0] - self.position.0);
    }
    fn jacobian(&self, x: &[f64]) -> Result<Matrix, ModelError> {
        let dx = x[0] - self.position.0;
        let dy = x[1] - self.position.1;
        let r2 = dx * dx + dy * dy;
        if r2 == 0.0 {
            return Err(ModelError::CoincidentTarget(self.id));
        }
        let mut h = Matrix::zeros(1, x.len());
        h[(0, 0)] = -dy / r2;
        h[(0, 1)] = dx / r2;
        Ok(h)
    }
    fn noise(&self) -> &GaussianDensity {
        &self.noise
    }
    fn angular(&self) -> bool {
        true
    }
    fn log_likelihood(&self, x: &[f64], z: &[f64]) -> f64 {
        let pred = (x[1] - self.position.1).atan2(x[0] - self.position.0);
        self.noise.log_pdf(&[angle_diff(z[0], pred)])
    }
}

/// `(h(x), H(x))` for a bearing sensor.
pub fn bearing_measure(x: &Vector, sensor: &BearingSensor) -> Result<(f64, Matrix), ModelError> {
    let h = sensor.jacobian(x.as_slice())?;
    Ok((sensor.measure(x.as_slice())[0], h))
}

/// Linear-Gaussian dynamics `X_k = A·X_{k-1} + ϑ_k`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    transition: Matrix,
    noise: Matrix,
    noise_factor: Matrix,
}

impl LinearModel {
    pub fn new(transition: Matrix, process_noise: Matrix) -> Result<Self, ModelError> {
        let n = transition.nrows();
        if transition.ncols() != n || process_noise.shape() != (n, n) {
            return Err(ModelError::StateDimension {
                expected: n,
                got: process_noise.nrows(),
            });
        }
        let noise_factor = mat::psd_factor(&process_noise)?;
        Ok(Self {
            transition,
            noise: process_noise,
            noise_factor,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.transition
    }
}

impl StateModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.transition.nrows()
    }
    fn transition_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.transition.nrows();
        for i in 0..n {
            out[i] = (0..n).map(|j| self.transition[(i, j)] * x[j]).sum();
        }
    }
    fn jacobian(&self, _x: &[f64]) -> Matrix {
        self.transition.clone()
    }
    fn process_noise(&self) -> &Matrix {
        &self.noise
    }
    fn process_noise_factor(&self) -> &Matrix {
        &self.noise_factor
    }
}

/// Linear sensor `Y = C·X + ζ`.
#[derive(Debug, Clone)]
pub struct LinearSensor {
    id: usize,
    matrix: Matrix,
    noise: GaussianDensity,
}

impl LinearSensor {
    pub fn new(id: usize, matrix: Matrix, noise_cov: Matrix) -> Result<Self, ModelError> {
        if noise_cov.nrows() != matrix.nrows() {
            return Err(ModelError::StateDimension {
                expected: matrix.nrows(),
                got: noise_cov.nrows(),
            });
        }
        Ok(Self {
            id,
            matrix,
            noise: GaussianDensity::new(noise_cov)?,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

impl SensorModel for LinearSensor {
    fn id(&self) -> usize {
        self.id
    }
    fn meas_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn measure_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.matrix.nrows()) {
            *o = (0..self.matrix.ncols()).map(|j| self.matrix[(i, j)] * x[j]).sum();
        }
    }
    fn jacobian(&self, _x: &[f64]) -> Result<Matrix, ModelError> {
        Ok(self.matrix.clone())
    }
    fn noise(&self) -> &GaussianDensity {
        &self.noise
    }
    fn angular(&self) -> bool {
        false
    }
}
