//! Monte-Carlo benchmark harness: the five benchmarked filters, RMS
//! curves, cost statistics, the `C_ave` sweep, and the block-diagonal
//! approximation study.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::mat::{self, MatError, Matrix, Vector};
use crate::model::{BearingSensor, CoordinatedTurn, ModelError};
use crate::oosm::{FilterStats, OosmError, OosmFilter, Strategy};
use crate::select::{SelectError, SelectionConfig};
use crate::sim::{self, ConfigError, MeasurementStream, ScenarioConfig};
use crate::smooth::{self, SmoothError, SmoothedWindow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Oosm(#[from] OosmError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
    #[error(transparent)]
    Matrix(#[from] MatError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown filter {0:?}; expected one of PFall, PFmis, SEPF-EKS, PF-GS, PF-SEL")]
    UnknownFilter(String),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterKind {
    /// Every measurement at its origin step; no delays at all.
    PfAll,
    /// Zero-delay measurements only.
    PfMis,
    SepfEks,
    /// Re-run from the stored Gaussian for every OOSM batch.
    PfGs,
    /// Selective processing.
    PfSel,
}

impl FilterKind {
    pub const ALL: [FilterKind; 5] = [
        FilterKind::PfAll,
        FilterKind::PfMis,
        FilterKind::SepfEks,
        FilterKind::PfGs,
        FilterKind::PfSel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::PfAll => "PFall",
            FilterKind::PfMis => "PFmis",
            FilterKind::SepfEks => "SEPF-EKS",
            FilterKind::PfGs => "PF-GS",
            FilterKind::PfSel => "PF-SEL",
        }
    }

    fn strategy(self, cfg: &ScenarioConfig) -> Result<Strategy, HarnessError> {
        Ok(match self {
            FilterKind::PfAll | FilterKind::PfMis => Strategy::Discard,
            FilterKind::SepfEks => Strategy::SepfEks,
            FilterKind::PfGs => Strategy::Garp,
            FilterKind::PfSel => Strategy::Selective(SelectionConfig::new(
                cfg.c_ave,
                cfg.nu,
                cfg.p_osm,
                cfg.max_delay,
            )?),
        })
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "pfall" | "all" => Ok(FilterKind::PfAll),
            "pfmis" | "mis" => Ok(FilterKind::PfMis),
            "sepfeks" | "sepf" => Ok(FilterKind::SepfEks),
            "pfgs" | "gs" | "garp" => Ok(FilterKind::PfGs),
            "pfsel" | "sel" => Ok(FilterKind::PfSel),
            _ => Err(HarnessError::UnknownFilter(s.to_string())),
        }
    }
}

/// Parses a comma-separated filter list; `"all"` selects all five.
pub fn parse_filters(list: &str) -> Result<Vec<FilterKind>, HarnessError> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(FilterKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let kind: FilterKind = part.parse()?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    if out.is_empty() {
        return Err(HarnessError::UnknownFilter(list.to_string()));
    }
    Ok(out)
}

/// `√((1/M) Σᵢ (x̂ᵢ − x)² + (ŷᵢ − y)²)` per step.
pub fn rms_curve(estimates: &[Vec<(f64, f64)>], truth: &[(f64, f64)]) -> Result<Vec<f64>, HarnessError> {
    if estimates.is_empty() {
        return Err(HarnessError::Dimension("no runs".into()));
    }
    if let Some(bad) = estimates.iter().find(|e| e.len() != truth.len()) {
        return Err(HarnessError::Dimension(format!(
            "run has {} steps, truth has {}",
            bad.len(),
            truth.len()
        )));
    }
    let m = estimates.len() as f64;
    Ok((0..truth.len())
        .map(|k| {
            let (tx, ty) = truth[k];
            let sum: f64 = estimates
                .iter()
                .map(|e| (e[k].0 - tx).powi(2) + (e[k].1 - ty).powi(2))
                .sum();
            (sum / m).sqrt()
        })
        .collect())
}

/// One filter's aggregate over all Monte-Carlo runs.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub kind: FilterKind,
    /// RMS position error for steps `1..=T`.
    pub rms: Vec<f64>,
    /// Squared position error, `[run][step − 1]`.
    pub sq_err: Vec<Vec<f64>>,
    pub oosm_received: usize,
    pub groups_received: usize,
    pub admitted_frac_groups: f64,
    pub admitted_frac_individual: f64,
    /// Share of received OOSMs fused by a re-run.
    pub garp_frac: f64,
    pub sweeps_per_step: f64,
    /// Standard error of `sweeps_per_step` across runs.
    pub sweeps_per_step_se: f64,
    pub escalations: usize,
    pub underflow_events: usize,
    /// Total filter time over all runs; not reproducible.
    pub wall_s: f64,
}

impl FilterReport {
    /// Mean RMS over steps `from..=to` (1-based, inclusive).
    pub fn mean_rms(&self, from: usize, to: usize) -> f64 {
        let slice = &self.rms[from - 1..to];
        slice.iter().sum::<f64>() / slice.len() as f64
    }

    /// RMS at step `k` (1-based).
    pub fn rms_at(&self, k: usize) -> f64 {
        self.rms[k - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub steps: usize,
    pub runs: usize,
    pub truth: Vec<(f64, f64)>,
    pub filters: Vec<FilterReport>,
    pub generated: usize,
    pub dropped: usize,
}

impl RunReport {
    pub fn filter(&self, kind: FilterKind) -> Option<&FilterReport> {
        self.filters.iter().find(|f| f.kind == kind)
    }
}

struct RunOutcome {
    estimates: Vec<(f64, f64)>,
    stats: FilterStats,
    wall_s: f64,
}

/// Independent stream `lane` of run `run` under `seed`. Measurements use
/// lane 0; every filter uses lane 1 so filters share their random draws.
pub fn run_rng(seed: u64, run: usize, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64 * 2 + lane);
    rng
}

struct Scenario {
    model: CoordinatedTurn,
    sensors: Vec<BearingSensor>,
    truth: Vec<Vector>,
}

impl Scenario {
    fn new(cfg: &ScenarioConfig) -> Result<Self, HarnessError> {
        Ok(Self {
            model: cfg.state_model()?,
            sensors: cfg.bearing_sensors()?,
            truth: sim::generate_truth(cfg),
        })
    }

    fn stream(&self, cfg: &ScenarioConfig, run: usize) -> MeasurementStream {
        sim::generate_measurements(&self.truth, cfg, &self.sensors, &mut run_rng(cfg.seed, run, 0))
    }

    fn run_filter(
        &self,
        cfg: &ScenarioConfig,
        run: usize,
        stream: &MeasurementStream,
        kind: FilterKind,
    ) -> Result<RunOutcome, HarnessError> {
        let started = Instant::now();
        let mut rng = run_rng(cfg.seed, run, 1);
        let mut filter = OosmFilter::new(
            &self.model,
            &self.sensors,
            kind.strategy(cfg)?,
            &cfg.prior(),
            cfg.n_particles,
            cfg.max_delay,
            &mut rng,
        )?;
        let mut estimates = Vec::with_capacity(cfg.duration_steps);
        for k in 1..=cfg.duration_steps {
            let a = &stream.arrivals[k];
            match kind {
                FilterKind::PfAll => filter.step(&stream.generated[k], &[], &mut rng)?,
                _ => filter.step(&a.undelayed, &a.oosm, &mut rng)?,
            }
            estimates.push(filter.estimate());
        }
        Ok(RunOutcome {
            estimates,
            stats: filter.stats().clone(),
            wall_s: started.elapsed().as_secs_f64(),
        })
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn aggregate(kind: FilterKind, outcomes: Vec<RunOutcome>, truth: &[(f64, f64)]) -> Result<FilterReport, HarnessError> {
    let mut estimates = Vec::with_capacity(outcomes.len());
    let mut total = FilterStats::default();
    let mut per_run_sweeps = Vec::with_capacity(outcomes.len());
    let mut wall_s = 0.0;
    for o in outcomes {
        let s = &o.stats;
        total.oosm_received += s.oosm_received;
        total.groups_received += s.groups_received;
        total.oosm_admitted += s.oosm_admitted;
        total.groups_admitted += s.groups_admitted;
        total.sepf_sweeps += s.sepf_sweeps;
        total.steps += s.steps;
        total.rerun_oosm += s.rerun_oosm;
        total.escalations += s.escalations;
        total.underflow_events += s.underflow_events;
        per_run_sweeps.push(ratio(s.sepf_sweeps, s.steps));
        wall_s += o.wall_s;
        estimates.push(o.estimates);
    }
    let rms = rms_curve(&estimates, truth)?;
    let sq_err = estimates
        .iter()
        .map(|e| {
            e.iter()
                .zip(truth)
                .map(|(p, t)| (p.0 - t.0).powi(2) + (p.1 - t.1).powi(2))
                .collect()
        })
        .collect();
    let (_, se) = mean_and_se(&per_run_sweeps);
    Ok(FilterReport {
        kind,
        rms,
        sq_err,
        oosm_received: total.oosm_received,
        groups_received: total.groups_received,
        admitted_frac_groups: ratio(total.groups_admitted, total.groups_received),
        admitted_frac_individual: ratio(total.oosm_admitted, total.oosm_received),
        garp_frac: ratio(total.rerun_oosm, total.oosm_received),
        sweeps_per_step: ratio(total.sepf_sweeps, total.steps),
        sweeps_per_step_se: se,
        escalations: total.escalations,
        underflow_events: total.underflow_events,
        wall_s,
    })
}

/// Runs `cfg.runs` seeded trials of each requested filter in parallel.
/// Within a run all filters see the same measurements and random draws.
pub fn run_benchmark(cfg: &ScenarioConfig, filters: &[FilterKind]) -> Result<RunReport, HarnessError> {
    cfg.validate_allowing_no_delay()?;
    let scenario = Scenario::new(cfg)?;
    let truth: Vec<(f64, f64)> = scenario.truth[1..].iter().map(|x| (x[0], x[1])).collect();

    let per_run: Vec<(Vec<RunOutcome>, usize, usize)> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let stream = scenario.stream(cfg, run);
            let outcomes = filters
                .iter()
                .map(|&kind| scenario.run_filter(cfg, run, &stream, kind))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((outcomes, stream.generated_count(), stream.dropped))
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut by_filter: Vec<Vec<RunOutcome>> = filters.iter().map(|_| Vec::with_capacity(cfg.runs)).collect();
    let (mut generated, mut dropped) = (0, 0);
    for (outcomes, g, d) in per_run {
        generated += g;
        dropped += d;
        for (slot, o) in by_filter.iter_mut().zip(outcomes) {
            slot.push(o);
        }
    }
    let reports = filters
        .iter()
        .zip(by_filter)
        .map(|(&kind, outcomes)| aggregate(kind, outcomes, &truth))
        .collect::<Result<_, _>>()?;
    Ok(RunReport {
        steps: cfg.duration_steps,
        runs: cfg.runs,
        truth,
        filters: reports,
        generated,
        dropped,
    })
}

/// One `C_ave` setting of the complexity sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub c_ave: f64,
    pub report: FilterReport,
}

/// Runs the selective filter once per `C_ave` value, on identical seeds.
pub fn complexity_sweep(cfg: &ScenarioConfig, c_aves: &[f64]) -> Result<Vec<SweepPoint>, HarnessError> {
    c_aves
        .iter()
        .map(|&c_ave| {
            let cfg = ScenarioConfig {
                c_ave,
                ..cfg.clone()
            };
            let mut report = run_benchmark(&cfg, &[FilterKind::PfSel])?;
            Ok(SweepPoint {
                c_ave,
                report: report.filters.remove(0),
            })
        })
        .collect()
}

/// Random linear-Gaussian systems for the block-diagonal study.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Params {
    pub systems: usize,
    pub state_dim: usize,
    pub sensors: usize,
    pub meas_dim: usize,
    /// Number of delayed steps in the window.
    pub window: usize,
    pub sigmas: Vec<f64>,
    pub seed: u64,
}

impl Default for Theorem1Params {
    fn default() -> Self {
        Self {
            systems: 20,
            state_dim: 4,
            sensors: 3,
            meas_dim: 1,
            window: 3,
            sigmas: vec![1.0, 10.0, 100.0, 1000.0],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Row {
    pub system: usize,
    pub sigma: f64,
    /// `tr R_XZ R_ZZ⁻¹ R_ZX`.
    pub exact: f64,
    /// `tr R_XZ B⁻¹ R_ZX` with `B` the block diagonal of `R_ZZ`.
    pub blockdiag: f64,
    pub abs_diff: f64,
    /// Upper bound on `abs_diff`; `+∞` where the bound does not apply.
    pub bound: f64,
}

impl Theorem1Row {
    pub fn bound_valid(&self) -> bool {
        self.bound.is_finite()
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

struct LinearSystem {
    sw: SmoothedWindow,
    /// `h[m][s]` for delayed step `m` and sensor `s`.
    h: Vec<Vec<Matrix>>,
}

fn random_system(p: &Theorem1Params, rng: &mut ChaCha8Rng) -> Result<LinearSystem, HarnessError> {
    let n = p.state_dim;
    let steps = p.window + 1;
    let a = random_matrix(n, n, 1.0, rng);
    let mut r = &a * a.transpose() / n as f64 + Matrix::identity(n, n) * 0.5;
    let mut covs = Vec::with_capacity(steps);
    let mut trans = Vec::with_capacity(steps - 1);
    for _ in 0..steps - 1 {
        covs.push(r.clone());
        let f = Matrix::identity(n, n) * 0.9 + random_matrix(n, n, 0.3 / (n as f64).sqrt(), rng);
        let b = random_matrix(n, n, 0.5, rng);
        let v = &b * b.transpose() / n as f64 + Matrix::identity(n, n) * 0.1;
        r = mat::symmetrized(&f * &r * f.transpose() + v);
        trans.push(f);
    }
    covs.push(r);
    let h = (0..p.window)
        .map(|_| {
            (0..p.sensors)
                .map(|_| random_matrix(p.meas_dim, n, 1.0, rng))
                .collect()
        })
        .collect();
    Ok(LinearSystem {
        sw: SmoothedWindow::from_chain(0, vec![Vector::zeros(n); steps], covs, trans)?,
        h,
    })
}

fn theorem1_rows(p: &Theorem1Params, system: usize, sys: &LinearSystem) -> Result<Vec<Theorem1Row>, HarnessError> {
    let md = p.meas_dim;
    let blocks = p.window * p.sensors;
    let nz = blocks * md;
    let idx = |m: usize, s: usize| (m * p.sensors + s) * md;

    // noise-free parts; σ²I is added to the diagonal blocks per row
    let mut r0 = Matrix::zeros(nz, nz);
    let mut rxz = Matrix::zeros(p.state_dim, nz);
    for m in 0..p.window {
        for s in 0..p.sensors {
            let hm = &sys.h[m][s];
            rxz.columns_mut(idx(m, s), md)
                .copy_from(&smooth::cross_covariance_h(&sys.sw, m, hm)?);
            for n in 0..=m {
                for j in 0..p.sensors {
                    let c = smooth::meas_cross_covariance_h(&sys.sw, m, hm, n, &sys.h[n][j])?;
                    r0.view_mut((idx(m, s), idx(n, j)), (md, md)).copy_from(&c);
                    r0.view_mut((idx(n, j), idx(m, s)), (md, md)).copy_from(&c.transpose());
                }
            }
        }
    }
    let mut b0 = Matrix::zeros(nz, nz);
    for i in 0..blocks {
        let o = i * md;
        b0.view_mut((o, o), (md, md)).copy_from(&r0.view((o, o), (md, md)));
    }
    let diff = &b0 - &r0;
    // diagonal tiles of B − R are zero and contribute nothing
    let rho_gap = mat::spectral_radius_bound_blocks(&mat::tile(&diff, &vec![md; blocks])?)?;
    let rho_cross = mat::symmetric_spectral_radius(&mat::symmetrized(&rxz * rxz.transpose()))?;

    let quad = |s: &Matrix| -> Result<f64, HarnessError> {
        let solved = mat::spd_solve(s, &rxz.transpose())?;
        Ok((&rxz * solved).trace())
    };
    p.sigmas
        .iter()
        .map(|&sigma| {
            let lam = sigma * sigma;
            let noise = Matrix::identity(nz, nz) * lam;
            let exact = quad(&(&r0 + &noise))?;
            let blockdiag = quad(&(&b0 + &noise))?;
            let bound = if lam > rho_gap {
                nz as f64 * rho_gap * rho_cross / ((lam - rho_gap) * lam)
            } else {
                f64::INFINITY
            };
            Ok(Theorem1Row {
                system,
                sigma,
                exact,
                blockdiag,
                abs_diff: (exact - blockdiag).abs(),
                bound,
            })
        })
        .collect()
}

/// Exact versus block-diagonal utility traces on random linear systems
/// over a ladder of measurement-noise scales, with the proof's bound.
pub fn theorem1_study(p: &Theorem1Params) -> Result<Vec<Theorem1Row>, HarnessError> {
    if p.systems == 0 || p.state_dim == 0 || p.sensors == 0 || p.meas_dim == 0 || p.window == 0 {
        return Err(HarnessError::Dimension("all study dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut rows = Vec::new();
    for system in 0..p.systems {
        let sys = random_system(p, &mut rng)?;
        rows.extend(theorem1_rows(p, system, &sys)?);
    }
    Ok(rows)
}

/// `%.9g`-style formatting: nine significant digits, trailing zeros
/// trimmed, `inf`/`-inf`/`nan` for non-finite values.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), sign, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn rms_csv(report: &RunReport) -> String {
    let mut out = String::from("step,filter,rms_m\n");
    for f in &report.filters {
        for (i, r) in f.rms.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", i + 1, f.kind, fmt_sig(*r));
        }
    }
    out
}

pub fn stats_csv(report: &RunReport) -> String {
    let mut out =
        String::from("filter,admitted_frac_groups,admitted_frac_individual,garp_frac,sweeps_per_step,wall_s\n");
    for f in &report.filters {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            f.kind,
            fmt_sig(f.admitted_frac_groups),
            fmt_sig(f.admitted_frac_individual),
            fmt_sig(f.garp_frac),
            fmt_sig(f.sweeps_per_step),
            fmt_sig(f.wall_s)
        );
    }
    out
}

pub fn sweep_csv(points: &[SweepPoint], report_steps: &[usize]) -> String {
    let mut out = String::from("c_ave,step,rms_m,sweeps_per_step\n");
    for p in points {
        for &k in report_steps.iter().filter(|&&k| k >= 1 && k <= p.report.rms.len()) {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_sig(p.c_ave),
                k,
                fmt_sig(p.report.rms_at(k)),
                fmt_sig(p.report.sweeps_per_step)
            );
        }
    }
    out
}

pub fn theorem1_csv(rows: &[Theorem1Row]) -> String {
    let mut out = String::from("sigma,exact,blockdiag,abs_diff,bound\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_sig(r.sigma),
            fmt_sig(r.exact),
            fmt_sig(r.blockdiag),
            fmt_sig(r.abs_diff),
            fmt_sig(r.bound)
        );
    }
    out
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}
