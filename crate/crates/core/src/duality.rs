//! Side-by-side estimates of the two halves of the moment duality, from
//! independent SPDE and particle-system pipelines.

use serde::{Deserialize, Serialize};

use crate::dual::{simulate_dual, DualOptions, Marker};
use crate::error::{Error, Result};
use crate::model::{FieldPair, InitialCondition, Lattice, ModelParams};
use crate::rng;
use crate::spde::{run_spde, SpdeOptions};
use crate::stats::{self, MeanEstimate};

/// Both sides of one duality identity with the acceptance verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub lhs: f64,
    pub se_lhs: f64,
    pub rhs: f64,
    pub se_rhs: f64,
    pub n_lhs: usize,
    pub n_rhs: usize,
    pub discrepancy_sigmas: f64,
    /// Fixed discretisation allowance.
    pub allowance: f64,
    /// Three combined standard errors.
    pub mc_slack: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl DualityReport {
    pub fn new(lhs: MeanEstimate, rhs: MeanEstimate, allowance: f64) -> Self {
        let diff = (lhs.mean - rhs.mean).abs();
        let sigma = lhs.std_error.hypot(rhs.std_error);
        let discrepancy_sigmas = if sigma > 0.0 {
            diff / sigma
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let mc_slack = 3.0 * sigma;
        let tolerance = allowance + mc_slack;
        Self {
            lhs: lhs.mean,
            se_lhs: lhs.std_error,
            rhs: rhs.mean,
            se_rhs: rhs.std_error,
            n_lhs: lhs.n,
            n_rhs: rhs.n,
            discrepancy_sigmas,
            allowance,
            mc_slack,
            tolerance,
            pass: diff <= tolerance,
        }
    }

    pub fn discrepancy(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Inputs of [`moment_duality_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentDualitySetup {
    pub ic: InitialCondition,
    pub params: ModelParams,
    pub lattice: Lattice,
    pub dual_initial: Vec<(f64, Marker)>,
    pub t: f64,
    pub n_spde: usize,
    pub n_dual: usize,
    pub dual: DualOptions,
    pub allowance: f64,
}

/// `E[∏ u(t, x_β) ∏ v(t, y_γ)]` from SPDE replicates against
/// `E[∏ u_0(M_t^β) ∏ v_0(M_t^γ) e^{-m1 A_t}]` from dual replicates.
pub fn moment_duality_check(setup: &MomentDualitySetup, seed: u64) -> Result<DualityReport> {
    let MomentDualitySetup { ic, params, lattice, dual_initial, t, .. } = setup;
    if dual_initial.is_empty() {
        return Err(Error::EmptyInitial);
    }
    let margin = 10.0 * lattice.dx;
    for &(x, _) in dual_initial {
        if !(x >= lattice.x_min + margin && x <= lattice.x_last() - margin) {
            return Err(Error::InvalidArgument(format!("dual start {x} is not inside the grid with margin {margin}")));
        }
    }

    let opts = SpdeOptions::new(*t, usize::MAX);
    let read_off = |f: &FieldPair| -> f64 {
        dual_initial
            .iter()
            .map(|&(x, m)| match m {
                Marker::Active => f.u_at(lattice, x),
                Marker::Dormant => f.v_at(lattice, x),
            })
            .product()
    };
    let n_spde = if params.is_deterministic() { 1 } else { setup.n_spde };
    let lhs = stats::replicates(n_spde, rng::derive(seed, rng::tag::SPDE), |key| {
        Ok(read_off(run_spde(ic, params, lattice, &opts, key)?.last()))
    })?;

    let dual = DualOptions { prune_gap: None, record_every: None, ..setup.dual };
    let rhs = stats::replicates(setup.n_dual, rng::derive(seed, rng::tag::DUAL), |key| {
        let run = simulate_dual(dual_initial, params, *t, &dual, key)?;
        let product: f64 = run
            .particles
            .iter()
            .map(|q| match q.state {
                Marker::Active => ic.u0(q.pos),
                Marker::Dormant => ic.v0(q.pos),
            })
            .product();
        Ok(product * run.weight)
    })?;

    Ok(DualityReport::new(MeanEstimate::from_samples(&lhs), MeanEstimate::from_samples(&rhs), setup.allowance))
}

/// Compares `u(t, x)` of a deterministic run from the right Heaviside
/// start with the empirical law of the rightmost dual particle started
/// from a single active particle at 0, one report per probe.
#[allow(clippy::too_many_arguments)]
pub fn max_cdf_check(
    params: &ModelParams,
    t: f64,
    probes: &[f64],
    n_dual: usize,
    seed: u64,
    pde: &FieldPair,
    lattice: &Lattice,
    dual: &DualOptions,
    allowance: f64,
) -> Result<Vec<DualityReport>> {
    if params.m1 != 0.0 || params.m2 != 0.0 || params.nu != 0.0 {
        return Err(Error::InvalidArgument("the max-CDF identity needs m1 = m2 = nu = 0".into()));
    }
    if (pde.t - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::InvalidArgument(format!("PDE state is at t = {}, expected {t}", pde.t)));
    }
    let dual = DualOptions { prune_gap: None, record_every: None, ..*dual };
    let maxima = stats::replicates(n_dual, rng::derive(seed, rng::tag::DUAL), |key| {
        simulate_dual(&[(0.0, Marker::Active)], params, t, &dual, key)?.rightmost()
    })?;
    Ok(probes
        .iter()
        .map(|&x| {
            let hits = maxima.iter().filter(|&&m| m <= x).count();
            DualityReport::new(MeanEstimate::exact(pde.u_at(lattice, x)), MeanEstimate::binomial(hits, n_dual), allowance)
        })
        .collect())
}

/// Runs the deterministic PDE from the right Heaviside start and then
/// [`max_cdf_check`].
#[allow(clippy::too_many_arguments)]
pub fn max_cdf_pipeline(
    params: &ModelParams,
    lattice: &Lattice,
    t: f64,
    probes: &[f64],
    n_dual: usize,
    seed: u64,
    dual: &DualOptions,
    allowance: f64,
) -> Result<Vec<DualityReport>> {
    let run = run_spde(&InitialCondition::HeavisideRight, params, lattice, &SpdeOptions::new(t, usize::MAX), seed)?;
    max_cdf_check(params, t, probes, n_dual, seed, run.last(), lattice, dual, allowance)
}
