//! The bandwidth multi-objective program: objectives f1/f2 over the scalar
//! transport allocation b, a strong-Wolfe line search, the epsilon-constraint
//! descent loop, Pareto classification, and a convexity probe.
//!
//! Both objectives are strictly increasing in b (the SINR noise term grows
//! with bandwidth), so the constrained descent lands on the lower clamp; the
//! loop exists to certify that against the printed conditions rather than to
//! hunt an interior point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::PowerModel;
use crate::utility::subcarrier_block_hz;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParetoError {
    #[error("bandwidth must be > 0 Hz, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("SINR {0} is too small; objective degenerate")]
    DegenerateSinr(f64),
    #[error("direction is not a descent direction (slope {0})")]
    NotDescent(f64),
    #[error("no step satisfying both Wolfe conditions within the budget")]
    StepNotFound,
    #[error("start violates the constraint: f2(b0) = {f2} > eps = {eps}")]
    Infeasible { f2: f64, eps: f64 },
    #[error("descent exceeded {0} iterations")]
    MaxIters(usize),
}

/// Everything the scalar objectives need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MopParams {
    pub power: PowerModel,
    /// Per-service transmit power t_u, watts.
    pub tx_power_w: f64,
    /// Received signal power |h^H e|^2 t_u, watts.
    pub signal_power_w: f64,
    /// Co-slice interference power, watts.
    pub interference_w: f64,
    /// Noise density N0, W/Hz.
    pub n0: f64,
    pub mu: u8,
    /// TTI duration, seconds.
    pub dt: f64,
}

impl MopParams {
    /// (P0 + phi t)(Pc + t): the power product in both objectives.
    fn power_product(&self) -> f64 {
        (self.power.static_power_w + self.power.pa_slope * self.tx_power_w)
            * (self.power.circuit_power_w + self.tx_power_w)
    }
}

/// gamma(b) = signal / (N0 b + I).
pub fn gamma_of_b(b: f64, params: &MopParams) -> Result<f64, ParetoError> {
    if b <= 0.0 {
        return Err(ParetoError::NonPositiveBandwidth(b));
    }
    Ok(params.signal_power_w / (params.n0 * b + params.interference_w))
}

const SINR_FLOOR: f64 = 1e-15;

/// f1(b) = (P0 + phi t)(Pc + t) / ln(1 + gamma(b)).
pub fn f1(b: f64, params: &MopParams) -> Result<f64, ParetoError> {
    let gamma = gamma_of_b(b, params)?;
    if gamma <= SINR_FLOOR {
        return Err(ParetoError::DegenerateSinr(gamma));
    }
    Ok(params.power_product() / gamma.ln_1p())
}

/// f2(b) = dt (P0 + phi t)(Pc + t) / (f_d ln(1 + gamma(b))); identically
/// f1 * dt / f_d.
pub fn f2(b: f64, params: &MopParams) -> Result<f64, ParetoError> {
    let value = f1(b, params)? * params.dt / subcarrier_block_hz(params.mu);
    debug_assert!({
        let direct = params.dt * params.power_product()
            / (subcarrier_block_hz(params.mu) * gamma_of_b(b, params).unwrap().ln_1p());
        (value - direct).abs() <= 1e-12 * direct.abs()
    });
    Ok(value)
}

/// Analytic d f1 / d b. With D = N0 b + I and S the signal power:
/// f1' = A S N0 / (D (D + S) ln^2(1 + S/D)), strictly positive.
pub fn grad_f1(b: f64, params: &MopParams) -> Result<f64, ParetoError> {
    let gamma = gamma_of_b(b, params)?;
    if gamma <= SINR_FLOOR {
        return Err(ParetoError::DegenerateSinr(gamma));
    }
    let d = params.n0 * b + params.interference_w;
    let l = gamma.ln_1p();
    Ok(params.power_product() * params.signal_power_w * params.n0
        / (d * (d + params.signal_power_w) * l * l))
}

/// A step accepted by the strong-Wolfe pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WolfeStep {
    pub alpha: f64,
    pub evaluations: usize,
}

const WOLFE_EVAL_BUDGET: usize = 60;

/// Scalar strong-Wolfe line search along direction `d` from `x`:
/// sufficient decrease f(x + a d) <= f(x) + c1 a f'(x) d and curvature
/// |f'(x + a d) d| <= c2 |f'(x) d|, found by bracketing plus zoom bisection.
///
/// `alpha_max` bounds the search so the objective is only evaluated on its
/// domain.
pub fn wolfe_search<F, G>(
    f: F,
    grad: G,
    x: f64,
    d: f64,
    c1: f64,
    c2: f64,
    alpha_max: f64,
) -> Result<WolfeStep, ParetoError>
where
    F: Fn(f64) -> Result<f64, ParetoError>,
    G: Fn(f64) -> Result<f64, ParetoError>,
{
    debug_assert!(0.0 < c1 && c1 < c2 && c2 < 1.0);
    let f0 = f(x)?;
    let slope0 = grad(x)? * d;
    if slope0 >= 0.0 {
        return Err(ParetoError::NotDescent(slope0));
    }
    let mut evals = 2usize;
    let spend = |n: &mut usize| -> Result<(), ParetoError> {
        *n += 1;
        if *n > WOLFE_EVAL_BUDGET {
            Err(ParetoError::StepNotFound)
        } else {
            Ok(())
        }
    };

    let phi = |a: f64| f(x + a * d);
    let dphi = |a: f64| -> Result<f64, ParetoError> { Ok(grad(x + a * d)? * d) };
    let sufficient = |a: f64, fa: f64| fa <= f0 + c1 * a * slope0;
    let curvature = |ga: f64| ga.abs() <= c2 * slope0.abs();

    // Bracketing phase.
    let mut a_prev = 0.0f64;
    let mut f_prev = f0;
    let mut a = (alpha_max * 0.5).min(alpha_max);
    if a <= 0.0 {
        return Err(ParetoError::StepNotFound);
    }
    let (mut lo, mut hi, mut f_lo);
    loop {
        let fa = phi(a)?;
        spend(&mut evals)?;
        if !sufficient(a, fa) || (a_prev > 0.0 && fa >= f_prev) {
            lo = a_prev;
            f_lo = f_prev;
            hi = a;
            break;
        }
        let ga = dphi(a)?;
        spend(&mut evals)?;
        if curvature(ga) {
            return Ok(WolfeStep {
                alpha: a,
                evaluations: evals,
            });
        }
        if ga >= 0.0 {
            lo = a;
            f_lo = fa;
            hi = a_prev;
            break;
        }
        a_prev = a;
        f_prev = fa;
        if a >= alpha_max {
            // Ran out of room while still descending steeply.
            return Err(ParetoError::StepNotFound);
        }
        a = (a * 2.0).min(alpha_max);
    }

    // Zoom phase: bisect the bracket.
    for _ in 0..WOLFE_EVAL_BUDGET {
        let mid = 0.5 * (lo + hi);
        let fm = phi(mid)?;
        spend(&mut evals)?;
        if !sufficient(mid, fm) || fm >= f_lo {
            hi = mid;
            continue;
        }
        let gm = dphi(mid)?;
        spend(&mut evals)?;
        if curvature(gm) {
            return Ok(WolfeStep {
                alpha: mid,
                evaluations: evals,
            });
        }
        if gm * (hi - lo) >= 0.0 {
            hi = lo;
        }
        lo = mid;
        f_lo = fm;
        if (hi - lo).abs() < 1e-14 * (1.0 + lo.abs()) {
            break;
        }
    }
    Err(ParetoError::StepNotFound)
}

/// Result of one epsilon-constraint bandwidth solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthSolution {
    pub b_star: f64,
    pub gamma_star: f64,
    pub iterations: usize,
    pub f1_value: f64,
    pub f2_value: f64,
}

/// Minimize f1 subject to f2 <= eps by gradient descent with Wolfe steps,
/// iterates clamped to [b_min, b_max].
#[allow(clippy::too_many_arguments)]
pub fn epsilon_constraint_minimize(
    params: &MopParams,
    c1: f64,
    c2: f64,
    eps: Option<f64>,
    eps_prime: f64,
    max_iters: usize,
    b0: f64,
    b_min: f64,
    b_max: f64,
) -> Result<BandwidthSolution, ParetoError> {
    debug_assert!(b_min > 0.0 && b_min <= b_max);
    let eps = match eps {
        Some(e) => e,
        None => f2(b_max, params)?,
    };
    let f2_start = f2(b0, params)?;
    if f2_start > eps * (1.0 + 1e-12) {
        return Err(ParetoError::Infeasible { f2: f2_start, eps });
    }

    let mut x = b0.clamp(b_min, b_max);
    let mut f_cur = f1(x, params)?;
    let mut clamps = 0usize;
    for iter in 1..=max_iters {
        if f2(x, params)? > eps {
            // The constraint gates further descent; stop at the last
            // feasible iterate.
            return finish(params, x, iter);
        }
        let g = grad_f1(x, params)?;
        let d = -g;
        if x - b_min <= 1e-12 * b_min {
            // Already at the lower clamp; descent can only leave the domain.
            clamps += 1;
            if clamps >= 2 || iter == 1 {
                return finish(params, x, iter);
            }
            continue;
        }
        let alpha_max = (x - b_min) / g;
        let alpha = match wolfe_search(
            |b| f1(b, params),
            |b| grad_f1(b, params),
            x,
            d,
            c1,
            c2,
            alpha_max,
        ) {
            Ok(step) => step.alpha,
            // With a monotone objective the minimizer sits on the clamp;
            // treat an exhausted search as a full step to the boundary.
            Err(ParetoError::StepNotFound) => alpha_max,
            Err(e) => return Err(e),
        };
        let mut x_next = x + alpha * d;
        if x_next <= b_min {
            x_next = b_min;
            clamps += 1;
        }
        let f_next = f1(x_next, params)?;
        debug_assert!(
            f_next <= f_cur * (1.0 + 1e-12),
            "descent must not increase f1"
        );
        let delta = (f_next - f_cur).abs();
        x = x_next;
        f_cur = f_next;
        if delta < eps_prime || clamps >= 2 {
            return finish(params, x, iter);
        }
    }
    Err(ParetoError::MaxIters(max_iters))
}

fn finish(params: &MopParams, b: f64, iterations: usize) -> Result<BandwidthSolution, ParetoError> {
    Ok(BandwidthSolution {
        b_star: b,
        gamma_star: gamma_of_b(b, params)?,
        iterations,
        f1_value: f1(b, params)?,
        f2_value: f2(b, params)?,
    })
}

/// Pareto classification of a solved point against the boundary eps2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParetoTag {
    ParetoOptimal,
    WeaklyParetoOptimal,
    Infeasible,
}

impl std::fmt::Display for ParetoTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParetoTag::ParetoOptimal => write!(f, "PO"),
            ParetoTag::WeaklyParetoOptimal => write!(f, "WPO"),
            ParetoTag::Infeasible => write!(f, "infeasible"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoVerdict {
    pub tag: ParetoTag,
    pub f2_value: f64,
    /// f2 - eps2.
    pub boundary_gap: f64,
}

/// On the boundary: Pareto optimal; strictly inside: weakly Pareto optimal;
/// outside: infeasible.
pub fn pareto_classify(f2_value: f64, eps2: f64, tol: f64) -> ParetoVerdict {
    let gap = f2_value - eps2;
    let tag = if gap.abs() <= tol {
        ParetoTag::ParetoOptimal
    } else if gap < 0.0 {
        ParetoTag::WeaklyParetoOptimal
    } else {
        ParetoTag::Infeasible
    };
    ParetoVerdict {
        tag,
        f2_value,
        boundary_gap: gap,
    }
}

/// Convexity probe report over a log-spaced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    /// Minimum second central difference of the samples, normalized by
    /// max |f|.
    pub min_normalized_second_diff: f64,
    pub pass: bool,
    pub points: usize,
}

/// Probe convexity of `f` by second central differences of its samples on a
/// log-spaced grid over [b_lo, b_hi]: passes when the minimum normalized
/// difference stays above -1e-8.
pub fn convexity_probe<F: Fn(f64) -> f64>(
    f: F,
    b_lo: f64,
    b_hi: f64,
    n_points: usize,
) -> ConvexityReport {
    debug_assert!(0.0 < b_lo && b_lo < b_hi && n_points >= 16);
    let ys: Vec<f64> = (0..n_points)
        .map(|i| {
            let x = (b_lo.ln() + (b_hi.ln() - b_lo.ln()) * i as f64 / (n_points - 1) as f64).exp();
            f(x)
        })
        .collect();
    let scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(1e-300);
    let mut min_diff = f64::INFINITY;
    for i in 1..n_points - 1 {
        min_diff = min_diff.min((ys[i - 1] - 2.0 * ys[i] + ys[i + 1]) / scale);
    }
    ConvexityReport {
        min_normalized_second_diff: min_diff,
        pass: min_diff >= -1e-8,
        points: n_points,
    }
}
