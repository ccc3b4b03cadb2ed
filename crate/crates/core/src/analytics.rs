//! Expected particle counts of the on/off branching Brownian motion, the
//! Gaussian tail bound and the first-moment bound on the rightmost particle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Expected active (`x`) and dormant (`y`) counts at time `t` for a single
/// active start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountCurve {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub a: f64,
}

impl CountCurve {
    pub fn total(&self) -> f64 {
        self.x + self.y
    }
}

/// `(c - 1)^2 + 2 c c' + c'^2 + 2 c'`.
pub fn discriminant(c: f64, c_prime: f64) -> f64 {
    (c - 1.0).powi(2) + 2.0 * c * c_prime + c_prime * c_prime + 2.0 * c_prime
}

fn check_rates(c: f64, c_prime: f64) -> Result<()> {
    for (field, value) in [("c", c), ("c_prime", c_prime)] {
        if !value.is_finite() {
            return Err(Error::NonFiniteRate { field });
        }
        if value < 0.0 {
            return Err(Error::NegativeRate { field, value });
        }
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time {t} must be finite and >= 0")))
    }
}

/// Closed-form expected counts for unit branching rate.
pub fn expected_counts_closed_form(c: f64, c_prime: f64, t: f64) -> Result<CountCurve> {
    check_rates(c, c_prime)?;
    check_time(t)?;
    let a = discriminant(c, c_prime);
    let sa = a.sqrt();
    let (x, y) = if sa >= 1e-3 {
        let up = ((-c - c_prime + 1.0 + sa) / 2.0 * t).exp();
        let down = (-(c + c_prime - 1.0 + sa) / 2.0 * t).exp();
        let x = (c_prime - c + sa + 1.0) / 2.0 * up / sa - (c_prime - c - sa + 1.0) / 2.0 * down / sa;
        let y = c * up / sa - c * down / sa;
        (x, y)
    } else {
        // Near the double root the printed form cancels; use
        // e^{rt} (cosh(ht) + k sinh(ht)/h) with a series for sinh(ht)/h.
        let h = sa / 2.0;
        let z = h * t;
        let r = (1.0 - c - c_prime) / 2.0;
        let sinhc = t * (1.0 + z * z / 6.0 + z.powi(4) / 120.0);
        let e = (r * t).exp();
        (e * (z.cosh() + (c_prime - c + 1.0) / 2.0 * sinhc), e * c * sinhc)
    };
    Ok(CountCurve { t, x, y, a })
}

pub const ODE_STEP: f64 = 1e-4;

/// Expected counts from RK4 on `x' = (s - c) x + c' y`, `y' = c x - c' y`.
pub fn expected_counts_ode(params: &ModelParams, t: f64) -> Result<CountCurve> {
    params.validate()?;
    check_time(t)?;
    let (s, c, cp) = (params.s, params.c, params.c_prime);
    let f = |x: f64, y: f64| ((s - c) * x + cp * y, c * x - cp * y);
    let steps = (t / ODE_STEP).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { t / steps as f64 };
    let (mut x, mut y) = (1.0, 0.0);
    for _ in 0..steps {
        let k1 = f(x, y);
        let k2 = f(x + 0.5 * h * k1.0, y + 0.5 * h * k1.1);
        let k3 = f(x + 0.5 * h * k2.0, y + 0.5 * h * k2.1);
        let k4 = f(x + h * k3.0, y + h * k3.1);
        x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        y += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    Ok(CountCurve { t, x, y, a: discriminant(c, cp) })
}

/// Asymptotic upper bound on the speed of the rightmost particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedBound {
    pub lambda_star: f64,
}

/// `λ* = sqrt(1 - c - c' + sqrt(a))`.
pub fn speed_bound(c: f64, c_prime: f64) -> Result<SpeedBound> {
    check_rates(c, c_prime)?;
    let a = discriminant(c, c_prime);
    let q = c + c_prime - 1.0;
    // sqrt(a) - q = 4 c' / (sqrt(a) + q); avoids cancellation for large rates.
    let squared = if q > 0.0 { 4.0 * c_prime / (a.sqrt() + q) } else { a.sqrt() - q };
    Ok(SpeedBound { lambda_star: squared.sqrt() })
}

fn require_unit_selection(params: &ModelParams) -> Result<()> {
    if params.s == 1.0 {
        Ok(())
    } else {
        Err(Error::UnsupportedSelection { s: params.s })
    }
}

/// [`speed_bound`] for full parameters; only the unit branching rate is
/// supported.
pub fn speed_bound_for(params: &ModelParams) -> Result<SpeedBound> {
    require_unit_selection(params)?;
    speed_bound(params.c, params.c_prime)
}

/// `e^{-x^2/2} / (x sqrt(2 pi))`, an upper bound on the standard normal
/// tail for `x > 0`.
pub fn gaussian_tail_bound(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::NonPositiveArgument(x));
    }
    Ok((-0.5 * x * x).exp() / (x * (2.0 * std::f64::consts::PI).sqrt()))
}

/// First-moment bound on `P(some particle is beyond λ t)` for unit
/// branching rate: `(x(t) + y(t)) · tail(λ sqrt(t))`.
pub fn crossing_prob_bound(c: f64, c_prime: f64, lambda: f64, t: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveArgument(lambda));
    }
    if !(t > 0.0) {
        return Err(Error::NonPositiveArgument(t));
    }
    let counts = expected_counts_closed_form(c, c_prime, t)?;
    Ok(counts.total() * gaussian_tail_bound(lambda * t.sqrt())?)
}

/// [`crossing_prob_bound`] for full parameters; only the unit branching
/// rate is supported.
pub fn crossing_prob_bound_for(params: &ModelParams, lambda: f64, t: f64) -> Result<f64> {
    require_unit_selection(params)?;
    crossing_prob_bound(params.c, params.c_prime, lambda, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub total: f64,
    /// Crossing bound at the table's λ, absent at `t = 0`.
    pub bound_lambda: Option<f64>,
}

/// Expected counts on a time grid. Uses the closed form for `s = 1` and
/// the ODE otherwise; the crossing bound is filled only for `s = 1`.
pub fn count_table(params: &ModelParams, times: &[f64], lambda: f64) -> Result<Vec<CountRow>> {
    times
        .iter()
        .map(|&t| {
            let unit = params.s == 1.0;
            let curve = if unit {
                expected_counts_closed_form(params.c, params.c_prime, t)?
            } else {
                expected_counts_ode(params, t)?
            };
            let bound_lambda = if unit && t > 0.0 && lambda > 0.0 {
                Some(crossing_prob_bound(params.c, params.c_prime, lambda, t)?)
            } else {
                None
            };
            Ok(CountRow { t, x: curve.x, y: curve.y, total: curve.total(), bound_lambda })
        })
        .collect()
}

/// Table CSV: header `t,x,y,total,bound_lambda`.
pub fn write_count_table_csv<W: std::io::Write>(mut w: W, rows: &[CountRow]) -> std::io::Result<()> {
    writeln!(w, "t,x,y,total,bound_lambda")?;
    for r in rows {
        let bound = r.bound_lambda.map(|b| b.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.t, r.x, r.y, r.total, bound)?;
    }
    Ok(())
}
