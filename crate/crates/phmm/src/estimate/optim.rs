//! Limited-memory BFGS ascent with Armijo backtracking.
//!
//! Written directly against closures returning the objective and its
//! gradient so it can maximise either the analytic-gradient objective or a
//! finite-difference fallback. Non-finite trial values are treated as failed
//! steps, so the iterate can never leave the feasible region with a worse
//! objective than it entered.

use crate::error::{Error, Result};

const MEMORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 50;
/// Curvature threshold below which an (s, y) pair is skipped.
const CURVATURE_EPS: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct Ascent {
    pub x: Vec<f64>,
    /// Final objective value (the maximised quantity).
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial value.
    /// Non-decreasing by construction.
    pub accepted: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Maximises `value_grad` starting from `x0`.
///
/// `value` evaluates the objective alone (used inside the line search);
/// `value_grad` returns the objective and its gradient. Stops when the
/// gradient sup-norm drops below `grad_tol`, when an accepted step improves
/// the objective by less than `tol * (1 + |f|)`, or after `max_iter`
/// iterations.
pub(crate) fn maximize<F, G>(
    mut value: F,
    mut value_grad: G,
    x0: Vec<f64>,
    max_iter: usize,
    tol: f64,
    grad_tol: f64,
) -> Result<Ascent>
where
    F: FnMut(&[f64]) -> Result<f64>,
    G: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let dim = x0.len();
    let mut x = x0;
    let (mut f, mut g) = value_grad(&x)?;
    if !f.is_finite() {
        return Ok(Ascent {
            x,
            value: f,
            iterations: 0,
            converged: false,
            accepted: vec![f],
        });
    }
    let mut accepted = vec![f];
    // (s, y) pairs, oldest first, plus rho = 1 / (s . y).
    let mut pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..max_iter {
        if norm_inf(&g) <= grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Two-loop recursion on the ascent direction (H approximates the
        // inverse negative Hessian, applied to the gradient).
        let mut d = g.clone();
        let mut alphas = vec![0.0; pairs.len()];
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alphas[k] = a;
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
        }
        if let Some((s, y, _)) = pairs.last() {
            let scale = dot(s, y) / dot(y, y);
            for di in d.iter_mut() {
                *di *= scale;
            }
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (alphas[k] - b) * si;
            }
        }
        // Fall back to steepest ascent if the direction is not uphill.
        let mut slope = dot(&g, &d);
        if !slope.is_finite() || slope <= 1e-12 * norm2(&g) * norm2(&d) {
            d = g.clone();
            slope = dot(&g, &g);
        }

        let mut step = if pairs.is_empty() {
            // First iteration: a cautious unit-ish step.
            (1.0 / norm_inf(&d).max(1.0)).min(1.0)
        } else {
            1.0
        };
        let mut x_new = vec![0.0; dim];
        let mut f_new = f64::NEG_INFINITY;
        let mut ok = false;
        for _ in 0..MAX_BACKTRACKS {
            for ((xn, xi), di) in x_new.iter_mut().zip(&x).zip(&d) {
                *xn = xi + step * di;
            }
            let trial = value(&x_new)?;
            if trial.is_finite() && trial >= f + ARMIJO_C1 * step * slope {
                f_new = trial;
                ok = true;
                break;
            }
            step *= BACKTRACK;
        }
        if !ok {
            // No acceptable step along this direction; give up here. The
            // current iterate is the best point seen.
            break;
        }

        let (f_check, g_new) = value_grad(&x_new)?;
        // The gradient evaluation recomputes the objective; they must agree.
        debug_assert!((f_check - f_new).abs() <= 1e-8 * (1.0 + f_new.abs()));
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > CURVATURE_EPS * norm2(&s) * norm2(&y) {
            if pairs.len() == MEMORY {
                pairs.remove(0);
            }
            pairs.push((s, y, 1.0 / sy));
        }

        let improvement = f_new - f;
        x = x_new;
        g = g_new;
        f = f_new;
        accepted.push(f);
        if improvement.abs() <= tol * (1.0 + f.abs()) {
            converged = true;
            break;
        }
    }
    if dim == 0 {
        converged = true;
    }
    if accepted.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::FitFailure(
            "optimizer produced a non-monotone accepted sequence".into(),
        ));
    }
    Ok(Ascent { x, value: f, iterations, converged, accepted })
}
