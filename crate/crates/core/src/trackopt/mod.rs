//! Per-track ray-offset denoising.
//!
//! Every visible point `p_i` of a lifted track may slide along its camera ray
//! `r_i` by a scalar `delta_i`, giving `p'_i = p_i + delta_i r_i`. The offsets
//! minimise
//!
//! ```text
//! sigma(m) * L_static + (1 - sigma(m)) * L_dynamic + L_reg
//! ```
//!
//! where `L_static = sum_ij |p'_i - p'_j|^2 / Np^2` pulls all positions of the
//! track together (`Np` is the mean point norm), `L_dynamic` penalises
//! ray-projected discrete acceleration over several window sizes, `L_reg`
//! keeps offsets small in disparity space, and `sigma(m)` is a logistic gate
//! on the track's 2D motion magnitude `m`.
//!
//! `Np` is recomputed at every iterate but treated as a constant when
//! differentiating. Sums run over visible frames only; an acceleration term
//! needs all three of its frames visible.

mod adam;
mod problem;
mod trail;

pub use adam::Adam;
pub use trail::{nearest_rank_percentile, trail_motion_magnitude, MotionMagnitude};

use serde::{Deserialize, Serialize};

use crate::par::{self, Parallelism};
use crate::tracks::Track3D;
use problem::RayProblem;

#[derive(Debug, thiserror::Error)]
pub enum OptError {
    #[error("track {track_id}: need at least {needed} visible frames, have {have}")]
    TooFewFrames { track_id: u32, needed: usize, have: usize },
    #[error("track {track_id}: {got} offsets for {expected} visible frames")]
    OffsetLength { track_id: u32, expected: usize, got: usize },
    #[error("track {track_id}: offset {delta} at or below -{dist} collapses the depth")]
    OffsetOutOfRange { track_id: u32, delta: f64, dist: f64 },
    #[error("invalid optimizer config: {0}")]
    Config(String),
}

/// Scalar offsets along the camera rays, one per visible frame in frame order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OffsetVector(pub Vec<f64>);

impl OffsetVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub steps: usize,
    pub lambda_reg: f64,
    /// Laplacian window sizes, frames.
    pub windows: Vec<usize>,
    /// Trail window for the motion magnitude, frames.
    pub trail_window: usize,
    /// Gate midpoint, pixels.
    pub m0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Adjusted depth never drops below this fraction of the original.
    pub min_depth_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            steps: 100,
            lambda_reg: 1e-4,
            windows: vec![1, 3, 5],
            trail_window: 16,
            m0: 20.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            min_depth_fraction: 0.01,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        let bad = |m: &str| Err(OptError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return bad("windows must be a nonempty set of positive sizes");
        }
        if self.trail_window == 0 {
            return bad("trail_window must be at least 1");
        }
        if !(self.lambda_reg >= 0.0) {
            return bad("lambda_reg must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps positive");
        }
        if !(self.min_depth_fraction > 0.0 && self.min_depth_fraction < 1.0) {
            return bad("min_depth_fraction must be in (0, 1)");
        }
        Ok(())
    }
}

/// Logistic gate `1 / (1 + exp(m - m0))`, evaluated without overflow.
pub fn sigma_gate(m: f64, m0: f64) -> f64 {
    let x = m - m0;
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

fn checked_problem(track: &Track3D, deltas: &OffsetVector, windows: &[usize]) -> Result<RayProblem, OptError> {
    let problem = RayProblem::new(track, windows);
    if deltas.len() != problem.len() {
        return Err(OptError::OffsetLength { track_id: track.track_id, expected: problem.len(), got: deltas.len() });
    }
    Ok(problem)
}

fn require_frames(track: &Track3D, problem: &RayProblem, needed: usize) -> Result<(), OptError> {
    if problem.len() < needed {
        return Err(OptError::TooFewFrames { track_id: track.track_id, needed, have: problem.len() });
    }
    Ok(())
}

fn check_offsets(track: &Track3D, problem: &RayProblem, deltas: &OffsetVector) -> Result<(), OptError> {
    if let Some((delta, dist)) = problem.offset_violation(deltas.as_slice()) {
        return Err(OptError::OffsetOutOfRange { track_id: track.track_id, delta, dist });
    }
    Ok(())
}

/// Static loss `sum_ij |p'_i - p'_j|^2 / Np^2` over visible frames, via
/// the identity `sum_ij |p_i - p_j|^2 = 2 n sum_i |p_i - mean|^2`.
pub fn static_loss(track: &Track3D, deltas: &OffsetVector) -> Result<f64, OptError> {
    let problem = checked_problem(track, deltas, &[])?;
    require_frames(track, &problem, 2)?;
    Ok(problem.static_term(deltas.as_slice(), None))
}

/// Ray-projected discrete acceleration energy over `windows`. Zero when no
/// window fits.
pub fn dynamic_loss(track: &Track3D, deltas: &OffsetVector, windows: &[usize]) -> Result<f64, OptError> {
    let problem = checked_problem(track, deltas, windows)?;
    Ok(problem.dynamic_term(deltas.as_slice(), None))
}

/// Disparity-space regulariser `lambda * sum_i (1/(delta_i + d_i) - 1/d_i)^2`
/// with `d_i = |p_i - c_i|`.
pub fn reg_loss(track: &Track3D, deltas: &OffsetVector, lambda_reg: f64) -> Result<f64, OptError> {
    let problem = checked_problem(track, deltas, &[])?;
    check_offsets(track, &problem, deltas)?;
    Ok(problem.reg_term(deltas.as_slice(), lambda_reg, None))
}

/// Full gated objective at `deltas`.
pub fn objective(track: &Track3D, deltas: &OffsetVector, m: f64, cfg: &OptimizerConfig) -> Result<f64, OptError> {
    let problem = checked_problem(track, deltas, &cfg.windows)?;
    require_frames(track, &problem, 2)?;
    check_offsets(track, &problem, deltas)?;
    Ok(problem.evaluate(deltas.as_slice(), sigma_gate(m, cfg.m0), cfg.lambda_reg, None).total())
}

/// Gradient of [`objective`] with respect to each offset, holding the static
/// normaliser at its value for `deltas`.
pub fn analytic_gradient(
    track: &Track3D,
    deltas: &OffsetVector,
    m: f64,
    cfg: &OptimizerConfig,
) -> Result<Vec<f64>, OptError> {
    let problem = checked_problem(track, deltas, &cfg.windows)?;
    require_frames(track, &problem, 2)?;
    check_offsets(track, &problem, deltas)?;
    let mut grad = vec![0.0; problem.len()];
    problem.evaluate(deltas.as_slice(), sigma_gate(m, cfg.m0), cfg.lambda_reg, Some(&mut grad));
    Ok(grad)
}

/// Objective value split into its terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub static_loss: f64,
    pub dynamic_loss: f64,
    pub reg_loss: f64,
    pub sigma: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.sigma * self.static_loss + (1.0 - self.sigma) * self.dynamic_loss + self.reg_loss
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizedTrack {
    pub deltas: OffsetVector,
    /// Input track with every visible point moved along its ray.
    pub track: Track3D,
    /// Objective before the first step and after every step.
    pub loss_trace: Vec<f64>,
    pub initial: LossTerms,
    pub last: LossTerms,
    /// Set when the last iterate was worse than the start; `deltas` then
    /// holds the best iterate seen instead of the last one.
    pub diverged: bool,
}

impl OptimizedTrack {
    pub fn initial_objective(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn final_objective(&self) -> f64 {
        *self.loss_trace.last().expect("trace holds the initial value")
    }
}

/// Runs Adam from zero offsets for `cfg.steps` steps. After every step the
/// offsets are clamped so the adjusted depth stays above
/// `cfg.min_depth_fraction` of the original.
pub fn optimize_track(track: &Track3D, m: &MotionMagnitude, cfg: &OptimizerConfig) -> Result<OptimizedTrack, OptError> {
    cfg.validate()?;
    let problem = RayProblem::new(track, &cfg.windows);
    require_frames(track, &problem, 2)?;
    let n = problem.len();
    let sigma = sigma_gate(m.m, cfg.m0);
    let lower: Vec<f64> = problem.distances().iter().map(|d| -(1.0 - cfg.min_depth_fraction) * d).collect();

    let mut deltas = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let initial = problem.evaluate(&deltas, sigma, cfg.lambda_reg, Some(&mut grad));
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(initial.total());
    let mut best = (initial.total(), deltas.clone());
    let mut last = initial;

    let mut adam = Adam::new(n, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    for _ in 0..cfg.steps {
        adam.step(&mut deltas, &grad);
        for (d, lo) in deltas.iter_mut().zip(&lower) {
            if *d < *lo {
                *d = *lo;
            }
        }
        last = problem.evaluate(&deltas, sigma, cfg.lambda_reg, Some(&mut grad));
        let total = last.total();
        trace.push(total);
        if total < best.0 {
            best = (total, deltas.clone());
        }
    }

    let diverged = !(last.total() <= initial.total());
    if diverged {
        log::warn!(
            "track {}: objective rose from {} to {}; keeping best iterate {}",
            track.track_id,
            initial.total(),
            last.total(),
            best.0
        );
        deltas = best.1;
        last = problem.evaluate(&deltas, sigma, cfg.lambda_reg, None);
    }
    Ok(OptimizedTrack {
        track: track.offset_along_rays(&deltas),
        deltas: OffsetVector(deltas),
        loss_trace: trace,
        initial,
        last,
        diverged,
    })
}

/// Optimises every track independently. Results are in input order and do
/// not depend on `par`.
pub fn optimize_tracks(
    tracks: &[Track3D],
    magnitudes: &[MotionMagnitude],
    cfg: &OptimizerConfig,
    par: Parallelism,
) -> Vec<Result<OptimizedTrack, OptError>> {
    assert_eq!(tracks.len(), magnitudes.len(), "one magnitude per track");
    let jobs: Vec<(&Track3D, &MotionMagnitude)> = tracks.iter().zip(magnitudes).collect();
    par::map(par, &jobs, |(t, m)| optimize_track(t, m, cfg))
}

/// Loss trace as CSV (`step,objective`).
pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("step,objective\n");
    for (i, v) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{v:e}\n"));
    }
    out
}
