//! Extended Rauch–Tung–Striebel smoothing over the stored window and the
//! linearized covariances derived from it.

use thiserror::Error;

use crate::mat::{self, MatError, Matrix, Vector};
use crate::model::{ModelError, SensorModel, StateModel};
use crate::pf::GaussianSummary;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothError {
    #[error("window is empty")]
    EmptyWindow,
    #[error("step {0} lies outside the smoothed window")]
    OutOfWindow(usize),
    #[error("sensor {0} is not configured")]
    UnknownSensor(usize),
    #[error(transparent)]
    Matrix(#[from] MatError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Smoothed moments for steps `start..=end`.
///
/// `transition[i]` is the Jacobian mapping step `start + i` to the next one,
/// `products[i]` is `F_{end, start+i}` and `lag_covs[i]` is
/// `cov(X_{start+i}, X_end)` under the smoothed joint.
#[derive(Debug, Clone)]
pub struct SmoothedWindow {
    start: usize,
    means: Vec<Vector>,
    covs: Vec<Matrix>,
    transition: Vec<Matrix>,
    products: Vec<Matrix>,
    lag_covs: Vec<Matrix>,
}

impl SmoothedWindow {
    /// Builds a window from an unconditioned Gaussian chain: `covs[i]` are
    /// marginal covariances and `transition[i]` maps step `i` to `i + 1`.
    pub fn from_chain(
        start: usize,
        means: Vec<Vector>,
        covs: Vec<Matrix>,
        transition: Vec<Matrix>,
    ) -> Result<Self, SmoothError> {
        if means.is_empty() || means.len() != covs.len() || transition.len() + 1 != means.len() {
            return Err(SmoothError::EmptyWindow);
        }
        let products = accumulate_products(&transition, means[0].len());
        let lag_covs = covs
            .iter()
            .zip(&products)
            .map(|(r, f)| r * f.transpose())
            .collect();
        Ok(Self {
            start,
            means,
            covs,
            transition,
            products,
            lag_covs,
        })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// The current step `k`.
    pub fn end(&self) -> usize {
        self.start + self.means.len() - 1
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn contains(&self, tau: usize) -> bool {
        tau >= self.start && tau <= self.end()
    }

    fn idx(&self, tau: usize) -> Result<usize, SmoothError> {
        if self.contains(tau) {
            Ok(tau - self.start)
        } else {
            Err(SmoothError::OutOfWindow(tau))
        }
    }

    pub fn mean(&self, tau: usize) -> Result<&Vector, SmoothError> {
        Ok(&self.means[self.idx(tau)?])
    }

    pub fn cov(&self, tau: usize) -> Result<&Matrix, SmoothError> {
        Ok(&self.covs[self.idx(tau)?])
    }

    /// Jacobian of the transition from `tau` to `tau + 1`.
    pub fn transition_jacobian(&self, tau: usize) -> Result<&Matrix, SmoothError> {
        let i = self.idx(tau)?;
        self.transition.get(i).ok_or(SmoothError::OutOfWindow(tau + 1))
    }

    /// `F_{k,τ}`, the linearized map from `tau` to the window end.
    pub fn product(&self, tau: usize) -> Result<&Matrix, SmoothError> {
        Ok(&self.products[self.idx(tau)?])
    }

    /// `F_{m,n}` for `n ≤ m` inside the window.
    pub fn transition_product(&self, m: usize, n: usize) -> Result<Matrix, SmoothError> {
        let (im, in_) = (self.idx(m)?, self.idx(n)?);
        assert!(in_ <= im, "transition_product needs n ≤ m");
        let d = self.state_dim();
        let mut f = Matrix::identity(d, d);
        for j in in_..im {
            f = &self.transition[j] * f;
        }
        Ok(f)
    }

    /// `cov(X_τ, X_k)` under the smoothed joint.
    pub fn lag_cov(&self, tau: usize) -> Result<&Matrix, SmoothError> {
        Ok(&self.lag_covs[self.idx(tau)?])
    }
}

fn accumulate_products(transition: &[Matrix], d: usize) -> Vec<Matrix> {
    let n = transition.len() + 1;
    let mut products = vec![Matrix::identity(d, d); n];
    for i in (0..n - 1).rev() {
        products[i] = &products[i + 1] * &transition[i];
    }
    products
}

/// Backward RTS pass over filtered summaries for steps
/// `start..start + filtered.len()`.
///
/// Transition Jacobians are taken at the filtered means; the sweep runs
/// once without relinearization.
pub fn rts_smooth<M: StateModel + ?Sized>(
    start: usize,
    filtered: &[GaussianSummary],
    model: &M,
) -> Result<SmoothedWindow, SmoothError> {
    let n = filtered.len();
    let last = filtered.last().ok_or(SmoothError::EmptyWindow)?;
    let d = last.mean.len();

    let mut means = vec![last.mean.clone(); n];
    let mut covs = vec![last.cov.clone(); n];
    let mut lag_covs = vec![last.cov.clone(); n];
    let mut transition = Vec::with_capacity(n.saturating_sub(1));
    for s in &filtered[..n - 1] {
        transition.push(model.jacobian(s.mean.as_slice()));
    }

    for i in (0..n - 1).rev() {
        let GaussianSummary { mean: mu, cov: p } = &filtered[i];
        let f = &transition[i];
        let p_pred = mat::symmetrized(f * p * f.transpose() + model.process_noise());
        // K = P Fᵀ P_pred⁻¹, solved as P_pred Kᵀ = F P
        let gain = mat::spd_solve(&p_pred, &(f * p))?.transpose();
        let predicted = model.transition(mu.as_slice());
        means[i] = mu + &gain * (&means[i + 1] - predicted);
        covs[i] = mat::symmetrized(p + &gain * (&covs[i + 1] - &p_pred) * gain.transpose());
        lag_covs[i] = &gain * &lag_covs[i + 1];
    }
    debug_assert_eq!(means[0].len(), d);

    let products = accumulate_products(&transition, d);
    Ok(SmoothedWindow {
        start,
        means,
        covs,
        transition,
        products,
        lag_covs,
    })
}

/// Stacked Jacobian at the smoothed mean and block-diagonal noise for the
/// sensors selected by `mask` (bit `s` selects `sensors[s]`).
pub fn stacked_jacobian<S: SensorModel>(
    sw: &SmoothedWindow,
    tau: usize,
    sensors: &[S],
    mask: u32,
) -> Result<(Matrix, Matrix), SmoothError> {
    let x = sw.mean(tau)?;
    if (mask as u64) >> sensors.len() != 0 {
        return Err(SmoothError::UnknownSensor(31 - mask.leading_zeros() as usize));
    }
    let chosen: Vec<&S> = (0..sensors.len())
        .filter(|s| mask & (1 << s) != 0)
        .map(|s| &sensors[s])
        .collect();
    let m: usize = chosen.iter().map(|s| s.meas_dim()).sum();
    let mut h = Matrix::zeros(m, sw.state_dim());
    let mut q = Matrix::zeros(m, m);
    let mut row = 0;
    for s in chosen {
        let ms = s.meas_dim();
        h.rows_mut(row, ms).copy_from(&s.jacobian(x.as_slice())?);
        q.view_mut((row, row), (ms, ms)).copy_from(s.noise().cov());
        row += ms;
    }
    Ok((h, q))
}

/// `H R̃_τ Hᵀ + Q`.
pub fn meas_covariance_h(sw: &SmoothedWindow, tau: usize, h: &Matrix, q: &Matrix) -> Result<Matrix, SmoothError> {
    let r = sw.cov(tau)?;
    Ok(mat::symmetrized(h * r * h.transpose() + q))
}

/// `F_{k,τ} R̃_τ Hᵀ`.
pub fn cross_covariance_h(sw: &SmoothedWindow, tau: usize, h: &Matrix) -> Result<Matrix, SmoothError> {
    Ok(sw.product(tau)? * sw.cov(tau)? * h.transpose())
}

/// `cov(Y_m, Y_n) = H_m F_{m,n} R̃_n H_nᵀ` for `n < m`, noise-free.
pub fn meas_cross_covariance_h(
    sw: &SmoothedWindow,
    m: usize,
    hm: &Matrix,
    n: usize,
    hn: &Matrix,
) -> Result<Matrix, SmoothError> {
    Ok(hm * sw.transition_product(m, n)? * sw.cov(n)? * hn.transpose())
}

/// Measurement covariance of the stacked sensors in `mask` at `tau`.
pub fn meas_covariance<S: SensorModel>(
    sw: &SmoothedWindow,
    tau: usize,
    sensors: &[S],
    mask: u32,
) -> Result<Matrix, SmoothError> {
    let (h, q) = stacked_jacobian(sw, tau, sensors, mask)?;
    meas_covariance_h(sw, tau, &h, &q)
}

/// Cross-covariance of `X_k` with the stacked measurement at `tau`.
pub fn cross_covariance<S: SensorModel>(
    sw: &SmoothedWindow,
    tau: usize,
    sensors: &[S],
    mask: u32,
) -> Result<Matrix, SmoothError> {
    let (h, _) = stacked_jacobian(sw, tau, sensors, mask)?;
    cross_covariance_h(sw, tau, &h)
}
