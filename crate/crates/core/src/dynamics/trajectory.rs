use std::collections::VecDeque;

use crate::netcore::{NetError, StateMatrix};

use super::{DynamicsError, LoopMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryStatus {
    Converged,
    Cycling,
    Diverged,
    MaxIters,
}

impl TrajectoryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::Cycling => "cycling",
            Self::Diverged => "diverged",
            Self::MaxIters => "max_iters",
        }
    }
}

/// Stopping rules for [`run_trajectory`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Absolute Frobenius step size counted as converged.
    pub converge: f64,
    /// Consecutive sub-tolerance steps required.
    pub converge_steps: usize,
    /// Divergence once `‖x_t‖ > factor · max(‖x_1‖, 1)`.
    pub divergence_factor: f64,
    /// Number of recent states kept for cycle detection.
    pub cycle_buffer: usize,
    pub cycle: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            converge: 1e-10,
            converge_steps: 3,
            divergence_factor: 1e6,
            cycle_buffer: 64,
            cycle: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub status: TrajectoryStatus,
    /// Most recent states, oldest first; the last entry is the final state.
    pub iterates_kept: VecDeque<StateMatrix>,
    /// Index `t` of the state `x_t` at which convergence was declared.
    pub t_converged: Option<usize>,
    /// `residuals[t-1] = ‖x_t − x_{t−1}‖`, with `x_0 = e`.
    pub residuals: Vec<f64>,
    /// Number of steps taken.
    pub iterations: usize,
    pub period: Option<usize>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateMatrix {
        self.iterates_kept
            .back()
            .expect("at least the initial state is kept")
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Iterates `x_1 = f(e, x0)`, `x_{t+1} = f(x_t, x0)` until a stopping rule fires.
pub fn run_trajectory(
    map: &impl LoopMap,
    x0: &StateMatrix,
    e: &StateMatrix,
    max_iters: usize,
    tols: &Tolerances,
) -> Result<Trajectory, DynamicsError> {
    if max_iters == 0 {
        return Err(DynamicsError::Precondition(
            "max_iters must be at least 1".into(),
        ));
    }
    let keep = tols.cycle_buffer.max(2);
    let mut kept: VecDeque<StateMatrix> = VecDeque::with_capacity(keep + 1);
    kept.push_back(e.clone());
    let mut residuals = Vec::new();
    let mut threshold = f64::INFINITY;
    let mut quiet = 0;
    let finish = |status, kept, residuals, iterations, t_converged, period| Trajectory {
        status,
        iterates_kept: kept,
        t_converged,
        residuals,
        iterations,
        period,
    };

    for t in 1..=max_iters {
        let prev = kept.back().expect("non-empty");
        let next = match map.step(prev, x0) {
            Ok(x) => x,
            Err(DynamicsError::Net(NetError::NumericOverflow)) => {
                return Ok(finish(
                    TrajectoryStatus::Diverged,
                    kept,
                    residuals,
                    t,
                    None,
                    None,
                ));
            }
            Err(e) => return Err(e),
        };
        let res = next.distance(prev);
        let norm = next.norm();
        if t == 1 {
            threshold = tols.divergence_factor * norm.max(1.0);
        }
        residuals.push(res);
        if !norm.is_finite() || norm > threshold {
            kept.push_back(next);
            return Ok(finish(
                TrajectoryStatus::Diverged,
                kept,
                residuals,
                t,
                None,
                None,
            ));
        }
        quiet = if res < tols.converge { quiet + 1 } else { 0 };
        if quiet >= tols.converge_steps {
            kept.push_back(next);
            return Ok(finish(
                TrajectoryStatus::Converged,
                kept,
                residuals,
                t,
                Some(t),
                None,
            ));
        }
        // A revisit at lag >= 2 that is tight both absolutely and relative to
        // the current step size is a cycle; slow spirals into a fixed point
        // are left to the convergence rule.
        if res > tols.cycle {
            let n = kept.len();
            let hit = (2..=n).find(|&lag| {
                let gap = kept[n - lag].distance(&next);
                gap < tols.cycle && gap < 1e-2 * res
            });
            if let Some(period) = hit {
                kept.push_back(next);
                return Ok(finish(
                    TrajectoryStatus::Cycling,
                    kept,
                    residuals,
                    t,
                    None,
                    Some(period),
                ));
            }
        }
        kept.push_back(next);
        if kept.len() > keep {
            kept.pop_front();
        }
    }
    Ok(finish(
        TrajectoryStatus::MaxIters,
        kept,
        residuals,
        max_iters,
        None,
        None,
    ))
}
