//! Parameters, lattice geometry, fields and initial conditions shared by the
//! SPDE solvers and the dual particle system.
//!
//! The field `u` is the frequency of the wild type (`u = 1 - p` where `p` is
//! the beneficial allele) in the active population and `v` its frequency in
//! the dormant population. Both live on a uniform 1-D lattice with zero-flux
//! ends.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rates of the seed-bank system; the same six numbers parametrise the dual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Active to dormant switching rate.
    pub c: f64,
    /// Dormant to active switching rate.
    pub c_prime: f64,
    /// Selection strength (branching rate of the dual).
    pub s: f64,
    /// Mutation towards the beneficial allele (killing weight of the dual).
    pub m1: f64,
    /// Mutation away from the beneficial allele (death rate of the dual).
    pub m2: f64,
    /// Reproduction variance (coalescence rate of the dual).
    pub nu: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { c: 1.0, c_prime: 1.0, s: 1.0, m1: 0.0, m2: 0.0, nu: 0.0 }
    }
}

impl ModelParams {
    pub fn fkpp_seed_bank(c: f64, c_prime: f64) -> Self {
        Self { c, c_prime, s: 1.0, m1: 0.0, m2: 0.0, nu: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in self.fields() {
            if !value.is_finite() {
                return Err(Error::NonFiniteRate { field });
            }
            if value < 0.0 {
                return Err(Error::NegativeRate { field, value });
            }
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("c", self.c),
            ("c_prime", self.c_prime),
            ("s", self.s),
            ("m1", self.m1),
            ("m2", self.m2),
            ("nu", self.nu),
        ]
    }

    pub fn is_deterministic(&self) -> bool {
        self.nu == 0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Reflecting ends: the ghost value outside the domain mirrors the
    /// interior neighbour.
    #[default]
    ZeroFlux,
}

/// Uniform grid `x_i = x_min + i dx`, `i = 0..n`, together with the time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub dt: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl Lattice {
    /// Checks the geometry; time-step stability is left to [`validate_params`].
    pub fn new(x_min: f64, x_max: f64, dx: f64, dt: f64) -> Result<Self> {
        let lattice = Self { x_min, x_max, dx, dt, boundary: Boundary::ZeroFlux };
        lattice.check_geometry()?;
        Ok(lattice)
    }

    /// Lattice with `dt = dx^2 / 4`.
    pub fn with_default_dt(x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        Self::new(x_min, x_max, dx, dx * dx / 4.0)
    }

    fn check_geometry(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.dx, self.dt].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidLattice("non-finite geometry".into()));
        }
        if self.x_min >= self.x_max {
            return Err(Error::InvalidLattice(format!(
                "x_min = {} must be below x_max = {}",
                self.x_min, self.x_max
            )));
        }
        if self.dx <= 0.0 || self.dt <= 0.0 {
            return Err(Error::InvalidLattice("dx and dt must be positive".into()));
        }
        if self.len() < 3 {
            return Err(Error::InvalidLattice(format!("{} grid points, need 3", self.len())));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.x_max - self.x_min) / self.dx).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    /// Right end of the grid as actually laid out.
    pub fn x_last(&self) -> f64 {
        self.x(self.len() - 1)
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.x(i)).collect()
    }

    /// `dx^2 / 2`, the largest stable explicit step for the `Δ/2` operator.
    pub fn stability_limit(&self) -> f64 {
        self.dx * self.dx / 2.0
    }

    /// Number of whole steps covering `horizon`.
    pub fn steps_for(&self, horizon: f64) -> Result<usize> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be finite and >= 0")));
        }
        let steps = horizon / self.dt;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} is not a multiple of dt = {}",
                self.dt
            )));
        }
        Ok(rounded as usize)
    }
}

/// Checks every parameter and lattice invariant; the error names the
/// offending field.
pub fn validate_params(params: &ModelParams, lattice: &Lattice) -> Result<()> {
    params.validate()?;
    lattice.check_geometry()?;
    let limit = lattice.stability_limit();
    // Relative slack so that dt = dx^2/2 computed in floating point passes.
    if lattice.dt > limit * (1.0 + 1e-12) {
        return Err(Error::UnstableTimeStep { dt: lattice.dt, limit });
    }
    Ok(())
}

/// Discretised `(u, v)` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl FieldPair {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// True when every entry of both fields lies in `[0, 1]`.
    pub fn in_unit_interval(&self) -> bool {
        self.u.iter().chain(&self.v).all(|w| (0.0..=1.0).contains(w))
    }

    pub fn u_at(&self, lattice: &Lattice, x: f64) -> f64 {
        interpolate(&self.u, lattice, x)
    }

    pub fn v_at(&self, lattice: &Lattice, x: f64) -> f64 {
        interpolate(&self.v, lattice, x)
    }

    /// Mirror image under `x -> -x` for a lattice symmetric about zero.
    pub fn mirrored(&self) -> Self {
        let mut u = self.u.clone();
        let mut v = self.v.clone();
        u.reverse();
        v.reverse();
        Self { u, v, t: self.t }
    }
}

/// Linear interpolation of grid values, constant beyond the ends.
pub fn interpolate(values: &[f64], lattice: &Lattice, x: f64) -> f64 {
    let n = values.len();
    let s = (x - lattice.x_min) / lattice.dx;
    if s <= 0.0 {
        return values[0];
    }
    if s >= (n - 1) as f64 {
        return values[n - 1];
    }
    let i = s.floor() as usize;
    let w = s - i as f64;
    if w == 0.0 {
        return values[i];
    }
    (1.0 - w) * values[i] + w * values[i + 1]
}

/// One row of a tabulated initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TablePoint {
    pub x: f64,
    pub u: f64,
    pub v: f64,
}

/// Initial data `(u_0, v_0)` as a function on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `u_0 = v_0 = 1` on `[0, inf)`, 0 elsewhere.
    HeavisideRight,
    /// `u_0 = v_0 = 1` on `(-inf, 0]`, 0 elsewhere.
    HeavisideLeft,
    Constant { u: f64, v: f64 },
    /// Piecewise-linear through the points (sorted by `x`), flat outside.
    Table(Vec<TablePoint>),
}

impl InitialCondition {
    pub fn check(&self) -> Result<()> {
        match self {
            Self::HeavisideRight | Self::HeavisideLeft => Ok(()),
            Self::Constant { u, v } => {
                for value in [*u, *v] {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(Error::TableOutOfRange { x: f64::NAN, value });
                    }
                }
                Ok(())
            }
            Self::Table(points) => {
                if points.is_empty() {
                    return Err(Error::InvalidArgument("empty initial-condition table".into()));
                }
                for p in points {
                    for value in [p.u, p.v] {
                        if !(0.0..=1.0).contains(&value) {
                            return Err(Error::TableOutOfRange { x: p.x, value });
                        }
                    }
                }
                if points.windows(2).any(|w| !(w[0].x < w[1].x)) {
                    return Err(Error::InvalidArgument("table x values must increase".into()));
                }
                Ok(())
            }
        }
    }

    pub fn u0(&self, x: f64) -> f64 {
        match self {
            Self::HeavisideRight => indicator(x >= 0.0),
            Self::HeavisideLeft => indicator(x <= 0.0),
            Self::Constant { u, .. } => *u,
            Self::Table(points) => table_lookup(points, x, |p| p.u),
        }
    }

    pub fn v0(&self, x: f64) -> f64 {
        match self {
            Self::HeavisideRight | Self::HeavisideLeft => self.u0(x),
            Self::Constant { v, .. } => *v,
            Self::Table(points) => table_lookup(points, x, |p| p.v),
        }
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn table_lookup(points: &[TablePoint], x: f64, pick: impl Fn(&TablePoint) -> f64) -> f64 {
    let k = points.partition_point(|p| p.x <= x);
    if k == 0 {
        return pick(&points[0]);
    }
    if k == points.len() {
        return pick(&points[k - 1]);
    }
    let (a, b) = (&points[k - 1], &points[k]);
    let w = (x - a.x) / (b.x - a.x);
    (1.0 - w) * pick(a) + w * pick(b)
}

/// Samples the initial condition on the lattice at `t = 0`.
pub fn build_fields(ic: &InitialCondition, lattice: &Lattice) -> Result<FieldPair> {
    ic.check()?;
    let xs = lattice.positions();
    // Snap to the grid so that the point at x = 0 is exactly 0.
    let snap = |x: f64| if x.abs() < 1e-9 * lattice.dx { 0.0 } else { x };
    let u = xs.iter().map(|&x| ic.u0(snap(x))).collect();
    let v = xs.iter().map(|&x| ic.v0(snap(x))).collect();
    Ok(FieldPair { u, v, t: 0.0 })
}

/// Wright–Fisher noise amplitude `sqrt(nu u (1 - u))`, with `u` clamped to
/// `[0, 1]` first.
#[inline]
pub fn noise_coefficient(u: f64, nu: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    (nu * u * (1.0 - u)).sqrt()
}
