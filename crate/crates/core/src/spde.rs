//! Time steppers for the seed-bank SPDE
//!
//! ```text
//! du = [Δu/2 + c(v - u) + s(u² - u) - m1 u + m2 (1 - u)] dt + sqrt(nu u(1-u)) dW
//! dv = c'(u - v) dt
//! ```
//!
//! in its coupled form and in the equivalent delay form, where `v` is
//! replaced by `e^{-c't} v0 + c' ∫ e^{-c'(t-r)} u(r) dr`. Both forms advance
//! `v` (respectively the delay integral) with the same exponential integrator
//! so that they agree to rounding error for any noise realisation.
//!
//! Space-time white noise is approximated on the lattice by independent
//! standard Gaussians per site and step, scaled by `sqrt(dt / dx)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_fields, noise_coefficient, validate_params, FieldPair, InitialCondition, Lattice, ModelParams};
use crate::rng;

/// Standard Gaussian draws for one time step, one per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePanel {
    pub xi: Vec<f64>,
}

impl NoisePanel {
    pub fn zeros(n: usize) -> Self {
        Self { xi: vec![0.0; n] }
    }

    /// Panel for `step` of the replicate stream `replicate_key`; see
    /// [`replicate_key`].
    pub fn draw(replicate_key: u64, step: u64, n: usize) -> Self {
        let mut panel = Self { xi: Vec::with_capacity(n) };
        panel.refill(replicate_key, step, n);
        panel
    }

    fn refill(&mut self, replicate_key: u64, step: u64, n: usize) {
        let mut r = rng::stream(replicate_key, step);
        self.xi.clear();
        self.xi.extend((0..n).map(|_| rng::gaussian(&mut r)));
    }

    /// Spatially reversed panel, for `x -> -x` symmetry checks.
    pub fn mirrored(&self) -> Self {
        let mut xi = self.xi.clone();
        xi.reverse();
        Self { xi }
    }
}

/// Key of the noise stream of replicate `index` under `master_seed`.
pub fn replicate_key(master_seed: u64, index: u64) -> u64 {
    rng::derive(master_seed, index)
}

#[inline]
fn drift(u: f64, v: f64, p: &ModelParams) -> f64 {
    p.c * (v - u) + p.s * (u * u - u) - p.m1 * u + p.m2 * (1.0 - u)
}

/// How the Wright–Fisher noise enters the `u` update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScheme {
    /// Deterministic part first, giving `w`, then a two-point kick
    /// `u' = (1 - k) w + k 1{Φ(ξ) < w}` with `k = sqrt(nu dt / dx)`. The kick
    /// has mean zero and variance `(σ(w) sqrt(dt/dx))²`, the same as the
    /// Gaussian increment, but keeps `u'` in `[0, 1]` without clamping.
    #[default]
    TwoPoint,
    /// Plain Euler–Maruyama `u + drift dt + σ(u) sqrt(dt/dx) ξ`, clamped
    /// into `[0, 1]`. Clamping at `u ≈ 0` or `1`, where `σ ~ sqrt(u)`,
    /// creates mass, so first moments drift upwards near the edges.
    GaussianClamp,
}

/// `nu dt / dx`, the per-step variance factor of the lattice noise.
pub fn noise_strength(p: &ModelParams, lattice: &Lattice) -> f64 {
    p.nu * lattice.dt / lattice.dx
}

fn check_noise_strength(p: &ModelParams, lattice: &Lattice, scheme: NoiseScheme) -> Result<()> {
    let kappa = noise_strength(p, lattice);
    if scheme == NoiseScheme::TwoPoint && kappa > 1.0 {
        return Err(Error::NoiseTooStrong { kappa });
    }
    Ok(())
}

#[inline]
fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// One explicit step of `u` given the current `v` (or its delay
/// reconstruction). Writes into `out` and returns the number of entries that
/// had to be clamped back into `[0, 1]`.
fn advance_u(
    u: &[f64],
    v: &[f64],
    p: &ModelParams,
    lattice: &Lattice,
    noise: Option<&NoisePanel>,
    scheme: NoiseScheme,
    out: &mut [f64],
) -> u64 {
    let n = u.len();
    debug_assert!(n >= 3 && v.len() == n && out.len() == n);
    let dt = lattice.dt;
    let diff = 0.5 * dt / (lattice.dx * lattice.dx);
    let noise_scale = (dt / lattice.dx).sqrt();
    let jump = (p.nu.sqrt() * noise_scale).min(1.0);
    let xi = noise.filter(|_| p.nu > 0.0).map(|panel| {
        assert_eq!(panel.xi.len(), n, "noise panel size mismatch");
        panel.xi.as_slice()
    });
    let mut clamps = 0;
    let mut clamp = |x: f64| {
        if (0.0..=1.0).contains(&x) {
            x
        } else {
            clamps += 1;
            x.clamp(0.0, 1.0)
        }
    };
    for i in 0..n {
        // Zero-flux ends: the ghost node mirrors the interior neighbour.
        let left = if i == 0 { u[1] } else { u[i - 1] };
        let right = if i == n - 1 { u[n - 2] } else { u[i + 1] };
        let ui = u[i];
        let det = ui + diff * ((left + right) - 2.0 * ui) + dt * drift(ui, v[i], p);
        out[i] = match (xi, scheme) {
            (None, _) => clamp(det),
            (Some(xi), NoiseScheme::GaussianClamp) => {
                clamp(det + noise_coefficient(ui, p.nu) * noise_scale * xi[i])
            }
            (Some(xi), NoiseScheme::TwoPoint) => {
                let w = clamp(det);
                let hit = if normal_cdf(xi[i]) < w { 1.0 } else { 0.0 };
                (1.0 - jump) * w + jump * hit
            }
        };
    }
    clamps
}

/// Result of one step: the new fields and the number of clamp events.
#[derive(Debug, Clone, PartialEq)]
pub struct Stepped<T> {
    pub state: T,
    pub clamps: u64,
}

/// One step of the coupled `(u, v)` system with the default noise scheme.
pub fn step_coupled(
    f: &FieldPair,
    p: &ModelParams,
    lattice: &Lattice,
    noise: &NoisePanel,
) -> Stepped<FieldPair> {
    step_coupled_with(f, p, lattice, noise, NoiseScheme::default())
}

pub fn step_coupled_with(
    f: &FieldPair,
    p: &ModelParams,
    lattice: &Lattice,
    noise: &NoisePanel,
    scheme: NoiseScheme,
) -> Stepped<FieldPair> {
    let mut next = f.clone();
    let clamps = step_coupled_in_place(f, p, lattice, Some(noise), scheme, &mut next);
    Stepped { state: next, clamps }
}

fn step_coupled_in_place(
    f: &FieldPair,
    p: &ModelParams,
    lattice: &Lattice,
    noise: Option<&NoisePanel>,
    scheme: NoiseScheme,
    next: &mut FieldPair,
) -> u64 {
    let mut clamps = advance_u(&f.u, &f.v, p, lattice, noise, scheme, &mut next.u);
    let decay = (-p.c_prime * lattice.dt).exp();
    for ((nv, &v), &u) in next.v.iter_mut().zip(&f.v).zip(&f.u) {
        let w = u + decay * (v - u);
        if !(0.0..=1.0).contains(&w) {
            clamps += 1;
        }
        *nv = w.clamp(0.0, 1.0);
    }
    next.t = f.t + lattice.dt;
    clamps
}

/// History carried by the delay form: the running delay integral
/// `S = c' ∫ e^{-c'(t-r)} u(r) dr` and the decayed initial dormant field
/// `e^{-c't} v0`. Their sum is `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayState {
    pub integral: Vec<f64>,
    pub v0_decay: Vec<f64>,
}

impl DelayState {
    pub fn new(v0: &[f64]) -> Self {
        Self { integral: vec![0.0; v0.len()], v0_decay: v0.to_vec() }
    }

    pub fn v(&self) -> Vec<f64> {
        self.integral.iter().zip(&self.v0_decay).map(|(s, d)| d + s).collect()
    }
}

/// One step of the delay form. `u` is advanced with the same drift as
/// [`step_coupled`] with `v` reconstructed from the history.
pub fn step_delay(
    u: &[f64],
    d: &DelayState,
    p: &ModelParams,
    lattice: &Lattice,
    noise: &NoisePanel,
) -> Stepped<(Vec<f64>, DelayState)> {
    step_delay_with(u, d, p, lattice, noise, NoiseScheme::default())
}

pub fn step_delay_with(
    u: &[f64],
    d: &DelayState,
    p: &ModelParams,
    lattice: &Lattice,
    noise: &NoisePanel,
    scheme: NoiseScheme,
) -> Stepped<(Vec<f64>, DelayState)> {
    let v = d.v();
    let mut next_u = vec![0.0; u.len()];
    let clamps = advance_u(u, &v, p, lattice, Some(noise), scheme, &mut next_u);
    let decay = (-p.c_prime * lattice.dt).exp();
    let integral = d.integral.iter().zip(u).map(|(s, &ui)| decay * s + (1.0 - decay) * ui).collect();
    let v0_decay = d.v0_decay.iter().map(|w| decay * w).collect();
    Stepped { state: (next_u, DelayState { integral, v0_decay }), clamps }
}

/// Level-set trace `(t, front)` of `p = 1 - u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontTrace {
    pub threshold: f64,
    pub samples: Vec<(f64, f64)>,
}

impl FrontTrace {
    pub fn new(threshold: f64) -> Self {
        Self { threshold, samples: Vec::new() }
    }
}

/// Rightmost point where `p = 1 - u` is still at least `theta`, linearly
/// interpolated between the bracketing grid points.
pub fn front_position(f: &FieldPair, lattice: &Lattice, theta: f64) -> Result<f64> {
    let n = f.u.len();
    let last = (0..n).rev().find(|&i| 1.0 - f.u[i] >= theta).ok_or(Error::NoCrossing { theta })?;
    if last == n - 1 {
        return Err(Error::NoCrossing { theta });
    }
    let (hi, lo) = (1.0 - f.u[last], 1.0 - f.u[last + 1]);
    Ok(lattice.x(last) + (hi - theta) / (hi - lo) * lattice.dx)
}

/// Mirror of [`front_position`] for fronts where `p` increases to the right:
/// leftmost point where `p` reaches `theta`.
fn front_position_rising(f: &FieldPair, lattice: &Lattice, theta: f64) -> Result<f64> {
    let first = f.u.iter().position(|&u| 1.0 - u >= theta).ok_or(Error::NoCrossing { theta })?;
    if first == 0 {
        return Err(Error::NoCrossing { theta });
    }
    let (hi, lo) = (1.0 - f.u[first], 1.0 - f.u[first - 1]);
    Ok(lattice.x(first) - (hi - theta) / (hi - lo) * lattice.dx)
}

/// Least-squares slope of the front over `window`, with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub speed: f64,
    pub std_error: f64,
    pub samples: usize,
}

pub const MIN_SPEED_SAMPLES: usize = 10;

pub fn invasion_speed(trace: &FrontTrace, window: (f64, f64)) -> Result<SpeedEstimate> {
    let pts: Vec<(f64, f64)> =
        trace.samples.iter().copied().filter(|&(t, _)| t >= window.0 && t <= window.1).collect();
    let n = pts.len();
    if n < MIN_SPEED_SAMPLES {
        return Err(Error::InsufficientSamples { found: n, needed: MIN_SPEED_SAMPLES });
    }
    let nf = n as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let x_mean = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - t_mean) * (p.1 - x_mean)).sum();
    let speed = sxy / sxx;
    let intercept = x_mean - speed * t_mean;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - speed * p.0).powi(2)).sum();
    let std_error = (rss / (nf - 2.0) / sxx).sqrt();
    Ok(SpeedEstimate { speed, std_error, samples: n })
}

/// Settings of one SPDE run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdeOptions {
    pub horizon: f64,
    /// Snapshot (and front) every this many steps; the final state is always
    /// recorded.
    pub record_every: usize,
    pub theta: f64,
    /// Abort once the front is this many grid spacings from an end.
    pub boundary_margin_cells: f64,
    #[serde(default)]
    pub scheme: NoiseScheme,
}

impl SpdeOptions {
    pub fn new(horizon: f64, record_every: usize) -> Self {
        Self { horizon, record_every, theta: 0.5, boundary_margin_cells: 10.0, scheme: NoiseScheme::TwoPoint }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdeRun {
    pub snapshots: Vec<FieldPair>,
    pub front: FrontTrace,
    pub clamp_count: u64,
}

impl SpdeRun {
    pub fn last(&self) -> &FieldPair {
        self.snapshots.last().expect("a run always records its initial state")
    }
}

#[derive(Clone, Copy)]
enum FrontKind {
    Falling,
    Rising,
}

/// Runs the coupled scheme from `ic` to `opts.horizon`. Noise for step `k`
/// is [`NoisePanel::draw`]`(key, k, n)`, so the run is a pure function of
/// its arguments.
pub fn run_spde(
    ic: &InitialCondition,
    p: &ModelParams,
    lattice: &Lattice,
    opts: &SpdeOptions,
    key: u64,
) -> Result<SpdeRun> {
    validate_params(p, lattice)?;
    check_noise_strength(p, lattice, opts.scheme)?;
    if !(opts.theta > 0.0 && opts.theta < 1.0) {
        return Err(Error::InvalidArgument(format!("front threshold {} not in (0,1)", opts.theta)));
    }
    let steps = lattice.steps_for(opts.horizon)?;
    let record_every = opts.record_every.max(1);
    let n = lattice.len();
    let kind = match ic {
        InitialCondition::HeavisideRight => Some(FrontKind::Falling),
        InitialCondition::HeavisideLeft => Some(FrontKind::Rising),
        _ => None,
    };
    let margin = opts.boundary_margin_cells * lattice.dx;

    let mut current = build_fields(ic, lattice)?;
    let mut next = current.clone();
    let mut panel = NoisePanel::zeros(n);
    let mut run = SpdeRun { snapshots: Vec::new(), front: FrontTrace::new(opts.theta), clamp_count: 0 };

    let front_of = |f: &FieldPair| -> Option<f64> {
        match kind? {
            FrontKind::Falling => front_position(f, lattice, opts.theta).ok(),
            FrontKind::Rising => front_position_rising(f, lattice, opts.theta).ok(),
        }
    };

    for step in 0..=steps {
        if step > 0 {
            let noise = if p.nu > 0.0 {
                panel.refill(key, (step - 1) as u64, n);
                Some(&panel)
            } else {
                None
            };
            run.clamp_count += step_coupled_in_place(&current, p, lattice, noise, opts.scheme, &mut next);
            next.t = step as f64 * lattice.dt;
            std::mem::swap(&mut current, &mut next);
        }
        let front = front_of(&current);
        if let Some(x) = front {
            if x - lattice.x_min < margin || lattice.x_last() - x < margin {
                return Err(Error::BoundaryContact { t: current.t, front: x, margin });
            }
        }
        if step % record_every == 0 || step == steps {
            if let Some(x) = front {
                run.front.samples.push((current.t, x));
            }
            run.snapshots.push(current.clone());
        }
    }
    Ok(run)
}

/// Discrete Gaussian heat kernel for time `tau`, truncated at `8 sqrt(tau)`
/// and renormalised to unit mass. Index `k` holds the weight of offset
/// `k - half_width`.
fn heat_kernel(tau: f64, dx: f64) -> Vec<f64> {
    let half = ((8.0 * tau.sqrt()) / dx).floor() as usize;
    let mut w: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let y = (k as f64 - half as f64) * dx;
            (-y * y / (2.0 * tau)).exp()
        })
        .collect();
    let mass: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= mass);
    w
}

/// Reflects an out-of-range index about the end nodes.
#[inline]
fn reflect(mut j: isize, n: usize) -> usize {
    let last = n as isize - 1;
    loop {
        if j < 0 {
            j = -j;
        } else if j > last {
            j = 2 * last - j;
        } else {
            return j as usize;
        }
    }
}

fn convolve(values: &[f64], kernel: &[f64], out: &mut [f64]) {
    let n = values.len();
    let half = (kernel.len() / 2) as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            acc += w * values[reflect(i as isize + k as isize - half, n)];
        }
        *o = acc;
    }
}

/// Deterministic solver built on the mild (heat-kernel) form
/// `u(t+τ) = G_τ * u(t) + ∫ G_{t+τ-r} * b(r) dr`, with the drift integral
/// done by the trapezoidal rule over macro steps `τ = 10 dt` and `v`
/// advanced by the exponential integrator with `u` linear over the step.
pub fn mild_deterministic(
    ic: &InitialCondition,
    p: &ModelParams,
    lattice: &Lattice,
    horizon: f64,
) -> Result<FieldPair> {
    if p.nu != 0.0 {
        return Err(Error::RequiresDeterministic { nu: p.nu });
    }
    p.validate()?;
    let mut f = build_fields(ic, lattice)?;
    if horizon <= 0.0 {
        return Ok(f);
    }
    let macro_steps = (horizon / (10.0 * lattice.dt) - 1e-9).ceil().max(1.0) as usize;
    let tau = horizon / macro_steps as f64;
    let kernel = heat_kernel(tau, lattice.dx);
    let decay = (-p.c_prime * tau).exp();
    // ∫_0^τ c' e^{-c'(τ-r)} (r/τ) dr, the weight of the end-of-step slope.
    let ramp = if p.c_prime > 0.0 { 1.0 - (1.0 - decay) / (p.c_prime * tau) } else { 0.0 };

    let n = f.len();
    let mut buf = vec![0.0; n];
    let mut u_pred = vec![0.0; n];
    let mut v_pred = vec![0.0; n];
    for step in 0..macro_steps {
        for i in 0..n {
            buf[i] = f.u[i] + tau * drift(f.u[i], f.v[i], p);
        }
        convolve(&buf, &kernel, &mut u_pred);
        for i in 0..n {
            v_pred[i] = f.u[i] + decay * (f.v[i] - f.u[i]);
        }
        for i in 0..n {
            buf[i] = f.u[i] + 0.5 * tau * drift(f.u[i], f.v[i], p);
        }
        let mut u_next = vec![0.0; n];
        convolve(&buf, &kernel, &mut u_next);
        for i in 0..n {
            u_next[i] += 0.5 * tau * drift(u_pred[i], v_pred[i], p);
            f.v[i] = v_pred[i] + ramp * (u_pred[i] - f.u[i]);
        }
        f.u = u_next;
        f.t = (step + 1) as f64 * tau;
    }
    Ok(f)
}

/// Snapshot CSV: header `t,x,u,v`, one row per snapshot and grid point.
pub fn write_snapshots_csv<W: std::io::Write>(
    mut w: W,
    lattice: &Lattice,
    snapshots: &[FieldPair],
) -> std::io::Result<()> {
    writeln!(w, "t,x,u,v")?;
    for f in snapshots {
        for i in 0..f.len() {
            writeln!(w, "{},{},{},{}", f.t, lattice.x(i), f.u[i], f.v[i])?;
        }
    }
    Ok(())
}

/// Front CSV: header `t,front`.
pub fn write_front_csv<W: std::io::Write>(mut w: W, trace: &FrontTrace) -> std::io::Result<()> {
    writeln!(w, "t,front")?;
    for (t, x) in &trace.samples {
        writeln!(w, "{t},{x}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fkpp(c: f64, c_prime: f64) -> ModelParams {
        ModelParams::fkpp_seed_bank(c, c_prime)
    }

    #[test]
    fn constant_fields_are_fixed_points_without_reaction() {
        let l = Lattice::new(-2.0, 2.0, 0.1, 0.004).unwrap();
        let p = ModelParams { c: 0.7, c_prime: 2.0, s: 0.0, m1: 0.0, m2: 0.0, nu: 0.0 };
        let f = build_fields(&InitialCondition::Constant { u: 0.4, v: 0.4 }, &l).unwrap();
        let next = step_coupled(&f, &p, &l, &NoisePanel::draw(1, 0, l.len()));
        for (a, b) in next.state.u.iter().zip(&f.u) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in next.state.v.iter().zip(&f.v) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(next.clamps, 0);
    }

    #[test]
    fn all_ones_is_absorbing() {
        let l = Lattice::new(-2.0, 2.0, 0.1, 0.004).unwrap();
        let p = ModelParams { c: 1.0, c_prime: 3.0, s: 2.0, m1: 0.0, m2: 0.5, nu: 4.0 };
        let f = build_fields(&InitialCondition::Constant { u: 1.0, v: 1.0 }, &l).unwrap();
        let next = step_coupled(&f, &p, &l, &NoisePanel::draw(9, 3, l.len()));
        assert_eq!(next.state.u, f.u);
        assert_eq!(next.state.v, f.v);
    }

    #[test]
    fn heaviside_first_step_stencil() {
        // Site left of 0: u = v = 0, right neighbour 1. Only the Laplacian
        // contributes: 0.5 * dt / dx^2 * 1 = 0.2.
        let l = Lattice::new(-1.0, 1.0, 0.1, 0.004).unwrap();
        let f = build_fields(&InitialCondition::HeavisideRight, &l).unwrap();
        let next = step_coupled(&f, &fkpp(1.0, 1.0), &l, &NoisePanel::zeros(l.len()));
        let i = 9;
        assert!((l.x(i) + 0.1).abs() < 1e-12);
        assert!((next.state.u[i] - 0.2).abs() < 1e-12, "{}", next.state.u[i]);
        assert_eq!(next.state.v[i], 0.0);
        assert!((next.state.t - 0.004).abs() < 1e-15);
    }

    #[test]
    fn delay_first_step_is_bitwise_coupled() {
        let l = Lattice::new(-5.0, 5.0, 0.1, 0.0025).unwrap();
        let p = ModelParams { c: 1.0, c_prime: 1.0, s: 1.0, m1: 0.2, m2: 0.1, nu: 0.5 };
        let ic = InitialCondition::Table(vec![
            crate::model::TablePoint { x: -1.0, u: 0.2, v: 0.9 },
            crate::model::TablePoint { x: 1.0, u: 0.8, v: 0.1 },
        ]);
        let f = build_fields(&ic, &l).unwrap();
        let panel = NoisePanel::draw(5, 0, l.len());
        let coupled = step_coupled(&f, &p, &l, &panel);
        let delay = step_delay(&f.u, &DelayState::new(&f.v), &p, &l, &panel);
        assert_eq!(coupled.state.u, delay.state.0);
    }

    #[test]
    fn delay_with_frozen_dormancy_keeps_v0() {
        let l = Lattice::new(-2.0, 2.0, 0.1, 0.0025).unwrap();
        let p = ModelParams { c: 1.0, c_prime: 0.0, s: 1.0, m1: 0.0, m2: 0.0, nu: 1.0 };
        let f = build_fields(&InitialCondition::HeavisideRight, &l).unwrap();
        let mut u = f.u.clone();
        let mut d = DelayState::new(&f.v);
        for k in 0..100 {
            let out = step_delay(&u, &d, &p, &l, &NoisePanel::draw(3, k, l.len()));
            (u, d) = out.state;
        }
        assert!(d.integral.iter().all(|&s| s == 0.0));
        assert_eq!(d.v(), f.v);
    }

    #[test]
    fn delay_matches_coupled_over_many_steps() {
        let l = Lattice::new(-5.0, 5.0, 0.1, 0.0025).unwrap();
        let p = ModelParams { c: 1.0, c_prime: 1.0, s: 1.0, m1: 0.0, m2: 0.0, nu: 0.5 };
        let mut f = build_fields(&InitialCondition::HeavisideRight, &l).unwrap();
        let mut u = f.u.clone();
        let mut d = DelayState::new(&f.v);
        let key = replicate_key(11, 0);
        let mut worst: f64 = 0.0;
        for k in 0..1000 {
            let panel = NoisePanel::draw(key, k, l.len());
            f = step_coupled(&f, &p, &l, &panel).state;
            (u, d) = step_delay(&u, &d, &p, &l, &panel).state;
            for (a, b) in f.u.iter().zip(&u) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst <= 1e-12, "max deviation {worst}");
    }

    #[test]
    fn horizon_zero_returns_initial() {
        let l = Lattice::new(-5.0, 5.0, 0.1, 0.0025).unwrap();
        let run = run_spde(
            &InitialCondition::HeavisideRight,
            &fkpp(1.0, 1.0),
            &l,
            &SpdeOptions::new(0.0, 10),
            1,
        )
        .unwrap();
        assert_eq!(run.snapshots.len(), 1);
        assert_eq!(run.snapshots[0], build_fields(&InitialCondition::HeavisideRight, &l).unwrap());
    }

    #[test]
    fn runs_are_deterministic_in_seed() {
        let l = Lattice::new(-5.0, 5.0, 0.1, 0.0025).unwrap();
        let p = ModelParams { nu: 1.0, ..fkpp(1.0, 1.0) };
        let opts = SpdeOptions::new(0.5, 20);
        let ic = InitialCondition::HeavisideRight;
        let a = run_spde(&ic, &p, &l, &opts, 42).unwrap();
        let b = run_spde(&ic, &p, &l, &opts, 42).unwrap();
        let c = run_spde(&ic, &p, &l, &opts, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.last().u, c.last().u);
    }

    #[test]
    fn classical_fkpp_front_stays_monotone() {
        let l = Lattice::new(-10.0, 30.0, 0.1, 0.0025).unwrap();
        let p = fkpp(0.0, 0.0);
        let run = run_spde(&InitialCondition::HeavisideRight, &p, &l, &SpdeOptions::new(5.0, 100), 0)
            .unwrap();
        assert_eq!(run.clamp_count, 0);
        for snap in &run.snapshots {
            assert!(snap.u.windows(2).all(|w| w[0] <= w[1]), "t = {}", snap.t);
        }
    }

    #[test]
    fn boundary_contact_aborts() {
        let l = Lattice::new(-3.0, 3.0, 0.1, 0.0025).unwrap();
        let err = run_spde(
            &InitialCondition::HeavisideRight,
            &fkpp(0.0, 0.0),
            &l,
            &SpdeOptions::new(5.0, 100),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BoundaryContact { .. }), "{err:?}");
    }

    #[test]
    fn mirrored_step_is_exact_mirror() {
        let l = Lattice::new(-3.0, 3.0, 0.1, 0.0025).unwrap();
        let p = ModelParams { c: 1.0, c_prime: 0.5, s: 1.0, m1: 0.1, m2: 0.2, nu: 0.0 };
        let mut right = build_fields(&InitialCondition::HeavisideRight, &l).unwrap();
        let mut left = build_fields(&InitialCondition::HeavisideLeft, &l).unwrap();
        assert_eq!(left, right.mirrored());
        for k in 0..200 {
            let panel = NoisePanel::draw(77, k, l.len());
            right = step_coupled(&right, &p, &l, &panel).state;
            left = step_coupled(&left, &p, &l, &panel.mirrored()).state;
        }
        assert_eq!(left, right.mirrored());
    }

    #[test]
    fn mirrored_noise_keeps_symmetry() {
        let l = Lattice::new(-3.0, 3.0, 0.1, 0.0025).unwrap();
        let p = ModelParams { c: 1.0, c_prime: 0.5, s: 1.0, m1: 0.0, m2: 0.0, nu: 1.0 };
        let mut right = build_fields(&InitialCondition::HeavisideRight, &l).unwrap();
        let mut left = build_fields(&InitialCondition::HeavisideLeft, &l).unwrap();
        for k in 0..200 {
            let panel = NoisePanel::draw(78, k, l.len());
            right = step_coupled(&right, &p, &l, &panel).state;
            left = step_coupled(&left, &p, &l, &panel.mirrored()).state;
        }
        assert_eq!(left, right.mirrored());
    }

    #[test]
    fn front_of_exact_heaviside() {
        // p = 1 on x < 0 and p(0) = 0: the crossing lies inside the cell
        // bracketing the jump, within dx/2 of the jump.
        let l = Lattice::new(-1.0, 1.0, 0.1, 0.0025).unwrap();
        let f = build_fields(&InitialCondition::HeavisideRight, &l).unwrap();
        let x = front_position(&f, &l, 0.5).unwrap();
        assert!(x.abs() <= 0.05 + 1e-12, "{x}");
        // p = 1 on x <= 0, p = 0 beyond.
        let u: Vec<f64> = l.positions().iter().map(|&x| if x <= 1e-12 { 0.0 } else { 1.0 }).collect();
        let g = FieldPair { v: u.clone(), u, t: 0.0 };
        let x = front_position(&g, &l, 0.5).unwrap();
        assert!((0.0..=0.05 + 1e-12).contains(&x), "{x}");
        let x = front_position(&g, &l, 1.0).unwrap();
        assert!(x.abs() < 1e-12, "{x}");
    }

    #[test]
    fn front_of_linear_profile() {
        let l = Lattice::new(-1.0, 2.0, 0.1, 0.0025).unwrap();
        let u: Vec<f64> = l.positions().iter().map(|&x| x.clamp(0.0, 1.0)).collect();
        let f = FieldPair { v: u.clone(), u, t: 0.0 };
        assert!((front_position(&f, &l, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((front_position(&f, &l, 0.25).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn front_needs_a_crossing() {
        let l = Lattice::new(-1.0, 1.0, 0.1, 0.0025).unwrap();
        let f = build_fields(&InitialCondition::Constant { u: 0.8, v: 0.8 }, &l).unwrap();
        assert_eq!(front_position(&f, &l, 0.5), Err(Error::NoCrossing { theta: 0.5 }));
        let g = build_fields(&InitialCondition::Constant { u: 0.0, v: 0.0 }, &l).unwrap();
        assert_eq!(front_position(&g, &l, 0.5), Err(Error::NoCrossing { theta: 0.5 }));
    }

    #[test]
    fn speed_of_exact_line() {
        let trace = FrontTrace {
            threshold: 0.5,
            samples: (0..50).map(|k| (k as f64 * 0.5, 2.0 + 1.3 * k as f64 * 0.5)).collect(),
        };
        let est = invasion_speed(&trace, (0.0, 30.0)).unwrap();
        assert!((est.speed - 1.3).abs() < 1e-12);
        assert!(est.std_error < 1e-10);
        let flat = FrontTrace { threshold: 0.5, samples: (0..20).map(|k| (k as f64, 3.0)).collect() };
        assert_eq!(invasion_speed(&flat, (0.0, 30.0)).unwrap().speed, 0.0);
        assert_eq!(
            invasion_speed(&flat, (0.0, 5.0)),
            Err(Error::InsufficientSamples { found: 6, needed: 10 })
        );
    }

    #[test]
    fn mild_rejects_noise() {
        let l = Lattice::new(-1.0, 1.0, 0.1, 0.0025).unwrap();
        let p = ModelParams { nu: 0.3, ..fkpp(1.0, 1.0) };
        assert_eq!(
            mild_deterministic(&InitialCondition::HeavisideRight, &p, &l, 1.0),
            Err(Error::RequiresDeterministic { nu: 0.3 })
        );
    }

    #[test]
    fn kernel_has_unit_mass_and_variance_tau() {
        let (tau, dx) = (0.01, 0.02);
        let k = heat_kernel(tau, dx);
        let half = (k.len() / 2) as f64;
        let mass: f64 = k.iter().sum();
        let var: f64 = k.iter().enumerate().map(|(j, w)| w * ((j as f64 - half) * dx).powi(2)).sum();
        assert!((mass - 1.0).abs() < 1e-14);
        assert!((var - tau).abs() < 1e-9, "{var}");
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-9, 5), 1);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn snapshot_csv_layout() {
        let l = Lattice::new(0.0, 0.2, 0.1, 0.0025).unwrap();
        let f = FieldPair { u: vec![0.0, 0.5, 1.0], v: vec![1.0, 0.5, 0.0], t: 0.25 };
        let mut out = Vec::new();
        write_snapshots_csv(&mut out, &l, &[f]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next(), Some("t,x,u,v"));
        assert_eq!(text.lines().nth(2), Some("0.25,0.1,0.5,0.5"));
    }
}
