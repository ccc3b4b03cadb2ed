//! On/off branching coalescing Brownian motion with killing.
//!
//! Active particles diffuse, branch at rate `s`, die at rate `m2` and fall
//! dormant at rate `c`; dormant particles sit still until they wake up at
//! rate `c'`. Pairs of active particles coalesce once their intersection
//! local time passes an exponential clock. The killing integral
//! `A = ∫ |I_s| ds` weights the dual expectation by `exp(-m1 A)`.
//!
//! Time is discretised with step `dt`. Within a step each particle resolves
//! at most one discrete event, chosen as the first arrival among competing
//! exponentials; then every active particle moves by an exact Gaussian
//! increment. The pair local time is approximated by the occupation
//! estimator `dt / (2 eps) 1{|Δ| < eps}`.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{self, SimRng};
use crate::stats::{self, MeanEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marker {
    Active,
    Dormant,
}

impl Marker {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Active => "active",
            Self::Dormant => "dormant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub id: u64,
    pub pos: f64,
    pub state: Marker,
    pub alive: bool,
}

impl Particle {
    #[inline]
    pub fn is_active(&self) -> bool {
        self.state == Marker::Active
    }
}

/// Local time accumulated by one unordered pair, and the exponential level
/// at which the pair coalesces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairClock {
    pub local_time: f64,
    pub threshold: f64,
}

/// Discretisation and bookkeeping options of the particle system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualOptions {
    pub dt: f64,
    /// Bandwidth of the local-time estimator.
    pub eps: f64,
    /// Drop particles more than this far behind the rightmost one.
    pub prune_gap: Option<f64>,
    pub cap: usize,
    /// Record a trace sample every this many steps (start and end are
    /// always recorded).
    pub record_every: Option<usize>,
    /// Move active particles. Off for count-only runs.
    pub motion: bool,
    /// Accumulate pair local times even when `nu = 0`.
    pub track_local_time: bool,
}

pub const DEFAULT_DUAL_DT: f64 = 1e-3;
pub const DEFAULT_PRUNE_GAP: f64 = 15.0;
pub const DEFAULT_CAP: usize = 5_000_000;

/// Default bandwidth `4 sqrt(dt)`.
pub fn default_eps(dt: f64) -> f64 {
    4.0 * dt.sqrt()
}

impl Default for DualOptions {
    fn default() -> Self {
        Self::with_dt(DEFAULT_DUAL_DT)
    }
}

impl DualOptions {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            eps: default_eps(dt),
            prune_gap: None,
            cap: DEFAULT_CAP,
            record_every: None,
            motion: true,
            track_local_time: false,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dual time step {} must be positive", self.dt)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("bandwidth {} must be positive", self.eps)));
        }
        if let Some(g) = self.prune_gap {
            if !(g > 0.0) {
                return Err(Error::InvalidArgument(format!("prune gap {g} must be positive")));
            }
        }
        Ok(())
    }
}

/// The particle configuration at one time.
#[derive(Debug, Clone)]
pub struct DualSystem {
    pub particles: Vec<Particle>,
    pub t: f64,
    /// Killing integral `∫ |I_s| ds`.
    pub occupation: f64,
    pub pruned: bool,
    pair_clocks: HashMap<(u64, u64), PairClock>,
    opts: DualOptions,
    rng: SimRng,
    next_id: u64,
    steps: u64,
    scratch: Vec<usize>,
}

/// Sets up the system from `(position, marker)` pairs; ids follow the input
/// order.
pub fn init_dual(
    initial: &[(f64, Marker)],
    params: &ModelParams,
    opts: &DualOptions,
    key: u64,
) -> Result<DualSystem> {
    if initial.is_empty() {
        return Err(Error::EmptyInitial);
    }
    params.validate()?;
    opts.check()?;
    let particles: Vec<Particle> = initial
        .iter()
        .enumerate()
        .map(|(i, &(pos, state))| Particle { id: i as u64, pos, state, alive: true })
        .collect();
    Ok(DualSystem {
        next_id: particles.len() as u64,
        particles,
        t: 0.0,
        occupation: 0.0,
        pruned: false,
        pair_clocks: HashMap::new(),
        opts: *opts,
        rng: rng::stream(key, 0),
        steps: 0,
        scratch: Vec::new(),
    })
}

impl DualSystem {
    pub fn n_active(&self) -> usize {
        self.particles.iter().filter(|p| p.is_active()).count()
    }

    pub fn n_dormant(&self) -> usize {
        self.particles.len() - self.n_active()
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn options(&self) -> &DualOptions {
        &self.opts
    }

    /// Local time accumulated so far by the pair `(a, b)`, if it ever met.
    pub fn pair_clock(&self, a: u64, b: u64) -> Option<PairClock> {
        self.pair_clocks.get(&(a.min(b), a.max(b))).copied()
    }

    /// Advances the system by one step of length `dt`.
    pub fn step(&mut self, p: &ModelParams) {
        let dt = self.opts.dt;
        let n_before = self.particles.len();
        self.occupation += self.n_active() as f64 * dt;

        let event_rate = p.s + p.m2 + p.c;
        let p_event = -(-event_rate * dt).exp_m1();
        let p_wake = -(-p.c_prime * dt).exp_m1();
        let mut deaths = false;
        for i in 0..n_before {
            let particle = self.particles[i];
            match particle.state {
                Marker::Active if p_event > 0.0 => {
                    let u: f64 = self.rng.random();
                    if u < p_event {
                        // Reuse the uniform to pick which clock rang first.
                        let r = u / p_event * event_rate;
                        if r < p.s {
                            let id = self.next_id;
                            self.next_id += 1;
                            self.particles.push(Particle { id, ..particle });
                        } else if r < p.s + p.m2 {
                            self.particles[i].alive = false;
                            deaths = true;
                        } else {
                            self.particles[i].state = Marker::Dormant;
                        }
                    }
                }
                Marker::Dormant if p_wake > 0.0 && self.rng.random::<f64>() < p_wake => {
                    self.particles[i].state = Marker::Active;
                }
                _ => {}
            }
        }
        if deaths {
            self.particles.retain(|q| q.alive);
        }

        if self.opts.motion {
            let sd = dt.sqrt();
            for q in self.particles.iter_mut().filter(|q| q.is_active()) {
                q.pos += sd * rng::gaussian(&mut self.rng);
            }
        }

        if p.nu > 0.0 || self.opts.track_local_time {
            self.accrue_local_time(p.nu);
        }

        if let Some(gap) = self.opts.prune_gap {
            if let Some(max) = self.rightmost_pos() {
                let before = self.particles.len();
                self.particles.retain(|q| q.pos >= max - gap);
                self.pruned |= self.particles.len() < before;
            }
        }

        self.steps += 1;
        self.t = self.steps as f64 * dt;
    }

    /// Sweeps active pairs in position order; pairs closer than `eps` gain
    /// local time and coalesce once it reaches their threshold.
    ///
    /// The estimator converges to the occupation density `∫ δ(Δ_s) ds`,
    /// which is half the semimartingale local time of `Δ` (`d<Δ> = 2 ds`).
    /// An `Exp(nu/2)` clock on the local time is therefore an `Exp(nu)`
    /// clock on this accumulator.
    fn accrue_local_time(&mut self, nu: f64) {
        let eps = self.opts.eps;
        let gain = self.opts.dt / (2.0 * eps);
        let mut order = std::mem::take(&mut self.scratch);
        order.clear();
        order.extend((0..self.particles.len()).filter(|&i| self.particles[i].is_active()));
        if order.len() < 2 {
            self.scratch = order;
            return;
        }
        let ps = &self.particles;
        order.sort_unstable_by(|&a, &b| ps[a].pos.total_cmp(&ps[b].pos).then(ps[a].id.cmp(&ps[b].id)));

        let mut merged = false;
        for a in 0..order.len() {
            let pa = self.particles[order[a]];
            if !pa.alive {
                continue;
            }
            for &jb in &order[a + 1..] {
                let pb = self.particles[jb];
                if pb.pos - pa.pos >= eps {
                    break;
                }
                if !pb.alive {
                    continue;
                }
                let key = (pa.id.min(pb.id), pa.id.max(pb.id));
                let rng = &mut self.rng;
                let clock = self
                    .pair_clocks
                    .entry(key)
                    .or_insert_with(|| PairClock { local_time: 0.0, threshold: rng::exponential(rng, nu) });
                clock.local_time += gain;
                if clock.local_time >= clock.threshold {
                    self.pair_clocks.remove(&key);
                    // The lower id survives.
                    let (victim, _) = if pa.id > pb.id { (order[a], jb) } else { (jb, order[a]) };
                    self.particles[victim].alive = false;
                    merged = true;
                    if victim == order[a] {
                        break;
                    }
                }
            }
        }
        self.scratch = order;
        if merged {
            self.particles.retain(|q| q.alive);
        }
        if self.pair_clocks.len() > 64 + 8 * self.particles.len() {
            let live: HashSet<u64> = self.particles.iter().map(|q| q.id).collect();
            self.pair_clocks.retain(|(a, b), _| live.contains(a) && live.contains(b));
        }
    }

    fn rightmost_pos(&self) -> Option<f64> {
        self.particles.iter().map(|q| q.pos).reduce(f64::max)
    }

    pub fn sample(&self) -> DualSample {
        let n_active = self.n_active();
        DualSample {
            t: self.t,
            n_active,
            n_dormant: self.particles.len() - n_active,
            rightmost: self.rightmost_pos(),
            occupation: self.occupation,
        }
    }
}

/// Position of the rightmost particle, active or dormant.
pub fn rightmost(sys: &DualSystem) -> Result<f64> {
    sys.rightmost_pos().ok_or(Error::Extinct)
}

/// `exp(-m1 ∫ |I_s| ds)`.
pub fn killing_weight(sys: &DualSystem, m1: f64) -> f64 {
    (-m1 * sys.occupation).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualSample {
    pub t: f64,
    pub n_active: usize,
    pub n_dormant: usize,
    pub rightmost: Option<f64>,
    pub occupation: f64,
}

#[derive(Debug, Clone)]
pub struct DualRun {
    pub particles: Vec<Particle>,
    pub trace: Vec<DualSample>,
    pub t: f64,
    pub occupation: f64,
    pub weight: f64,
    pub pruned: bool,
}

impl DualRun {
    pub fn n_active(&self) -> usize {
        self.particles.iter().filter(|p| p.is_active()).count()
    }

    pub fn n_dormant(&self) -> usize {
        self.particles.len() - self.n_active()
    }

    pub fn rightmost(&self) -> Result<f64> {
        self.particles.iter().map(|q| q.pos).reduce(f64::max).ok_or(Error::Extinct)
    }
}

/// Runs the particle system from `initial` up to `horizon`.
pub fn simulate_dual(
    initial: &[(f64, Marker)],
    params: &ModelParams,
    horizon: f64,
    opts: &DualOptions,
    key: u64,
) -> Result<DualRun> {
    let mut sys = init_dual(initial, params, opts, key)?;
    let steps = whole_steps(horizon, opts.dt)?;
    let mut trace = vec![sys.sample()];
    for k in 1..=steps {
        if sys.is_empty() {
            sys.t = horizon;
            break;
        }
        sys.step(params);
        if sys.len() > opts.cap {
            return Err(Error::ExplosionGuard { count: sys.len(), cap: opts.cap, t: sys.t });
        }
        if let Some(every) = opts.record_every {
            if k % every.max(1) == 0 && k != steps {
                trace.push(sys.sample());
            }
        }
    }
    if steps > 0 {
        trace.push(sys.sample());
    }
    Ok(DualRun {
        weight: killing_weight(&sys, params.m1),
        t: sys.t,
        occupation: sys.occupation,
        pruned: sys.pruned,
        trace,
        particles: sys.particles,
    })
}

fn whole_steps(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be finite and >= 0")));
    }
    let steps = horizon / dt;
    let rounded = steps.round();
    if (steps - rounded).abs() > 1e-6 * rounded.max(1.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} is not a multiple of dt = {dt}")));
    }
    Ok(rounded as usize)
}

/// Both sides of the many-to-one identity
/// `E Σ_{β∈K_t} F(M_t^β) = E|K_t| · E F(B_t)` for `F = 1{x >= x0}`,
/// where `B` is a single on/off Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManyToOne {
    pub lhs: MeanEstimate,
    pub rhs: MeanEstimate,
    pub mean_count: MeanEstimate,
    pub single_probability: MeanEstimate,
}

/// Estimates both sides from three independent sets of `n` replicates:
/// branching runs, count-only runs and single on/off Brownian motions.
pub fn many_to_one_estimate(
    params: &ModelParams,
    x0: f64,
    t: f64,
    n: usize,
    opts: &DualOptions,
    seed: u64,
) -> Result<ManyToOne> {
    if params.m1 != 0.0 || params.m2 != 0.0 || params.nu != 0.0 {
        return Err(Error::InvalidArgument("many-to-one needs m1 = m2 = nu = 0".into()));
    }
    let start = [(0.0, Marker::Active)];
    let opts = DualOptions { prune_gap: None, record_every: None, ..*opts };

    let sums = stats::replicates(n, rng::derive(seed, rng::tag::DUAL), |key| {
        let run = simulate_dual(&start, params, t, &opts, key)?;
        Ok(run.particles.iter().filter(|q| q.pos >= x0).count() as f64)
    })?;
    let count_opts = DualOptions { motion: false, ..opts };
    let counts = stats::replicates(n, rng::derive(seed, rng::tag::COUNTS), |key| {
        Ok(simulate_dual(&start, params, t, &count_opts, key)?.particles.len() as f64)
    })?;
    let single = ModelParams { s: 0.0, ..*params };
    let hits = stats::replicates(n, rng::derive(seed, rng::tag::SINGLE), |key| {
        let run = simulate_dual(&start, &single, t, &opts, key)?;
        Ok(run.particles[0].pos >= x0)
    })?;

    let mean_count = MeanEstimate::from_samples(&counts);
    let single_probability = MeanEstimate::binomial(hits.iter().filter(|&&h| h).count(), n);
    Ok(ManyToOne {
        lhs: MeanEstimate::from_samples(&sums),
        rhs: mean_count.product(&single_probability),
        mean_count,
        single_probability,
    })
}

/// Mean pair local time at `t` of two independent Brownian motions started
/// together at 0 and never switched off, as accumulated by the particle
/// system's estimator.
pub fn calibrate_local_time(t: f64, eps: f64, dt: f64, n: usize, seed: u64) -> Result<MeanEstimate> {
    let params = ModelParams { c: 0.0, c_prime: 0.0, s: 0.0, m1: 0.0, m2: 0.0, nu: 0.0 };
    let opts = DualOptions { eps, track_local_time: true, ..DualOptions::with_dt(dt) };
    let start = [(0.0, Marker::Active), (0.0, Marker::Active)];
    let steps = whole_steps(t, dt)?;
    let samples = stats::replicates(n, rng::derive(seed, rng::tag::LOCAL_TIME), |key| {
        let mut sys = init_dual(&start, &params, &opts, key)?;
        for _ in 0..steps {
            sys.step(&params);
        }
        Ok(sys.pair_clock(0, 1).map_or(0.0, |c| c.local_time))
    })?;
    Ok(MeanEstimate::from_samples(&samples))
}

/// Trace CSV: header `t,n_active,n_dormant,rightmost,A`; `rightmost` is
/// empty once the system is extinct.
pub fn write_trace_csv<W: std::io::Write>(mut w: W, trace: &[DualSample]) -> std::io::Result<()> {
    writeln!(w, "t,n_active,n_dormant,rightmost,A")?;
    for s in trace {
        let right = s.rightmost.map(|x| x.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", s.t, s.n_active, s.n_dormant, right, s.occupation)?;
    }
    Ok(())
}

/// Particle dump: header `id,pos,state`.
pub fn write_particles_csv<W: std::io::Write>(mut w: W, particles: &[Particle]) -> std::io::Result<()> {
    writeln!(w, "id,pos,state")?;
    for q in particles {
        writeln!(w, "{},{},{}", q.id, q.pos, q.state.as_str())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates(c: f64, c_prime: f64, s: f64, m2: f64, nu: f64) -> ModelParams {
        ModelParams { c, c_prime, s, m1: 0.0, m2, nu }
    }

    #[test]
    fn init_counts() {
        let p = ModelParams::default();
        let opts = DualOptions::default();
        let sys = init_dual(&[(0.0, Marker::Active)], &p, &opts, 1).unwrap();
        assert_eq!((sys.n_active(), sys.n_dormant()), (1, 0));
        assert_eq!(sys.t, 0.0);
        assert_eq!(sys.occupation, 0.0);
        let sys = init_dual(&[(0.0, Marker::Dormant)], &p, &opts, 1).unwrap();
        assert_eq!((sys.n_active(), sys.n_dormant()), (0, 1));
        assert!(matches!(init_dual(&[], &p, &opts, 1), Err(Error::EmptyInitial)));
    }

    #[test]
    fn pure_brownian_variance() {
        let p = rates(0.0, 0.0, 0.0, 0.0, 0.0);
        let opts = DualOptions::with_dt(0.01);
        let finals = stats::replicates(20_000, 3, |key| {
            Ok(simulate_dual(&[(0.0, Marker::Active)], &p, 1.0, &opts, key)?.particles[0].pos)
        })
        .unwrap();
        let m = MeanEstimate::from_samples(&finals);
        let var = finals.iter().map(|x| x * x).sum::<f64>() / finals.len() as f64;
        assert!(m.mean.abs() < 4.0 * m.std_error, "{m:?}");
        // Var of the sample variance of N(0,1) is 2/n.
        assert!((var - 1.0).abs() < 4.0 * (2.0f64 / 20_000.0).sqrt(), "{var}");
    }

    #[test]
    fn dormant_particle_is_frozen() {
        let p = rates(1.0, 0.0, 3.0, 2.0, 1.0);
        let run = simulate_dual(&[(0.7, Marker::Dormant)], &p, 2.0, &DualOptions::default(), 8).unwrap();
        assert_eq!(run.particles.len(), 1);
        assert_eq!(run.particles[0].pos, 0.7);
        assert_eq!(run.particles[0].state, Marker::Dormant);
        assert_eq!(run.occupation, 0.0);
        assert_eq!(run.weight, 1.0);
    }

    #[test]
    fn no_coalescence_without_noise() {
        let p = rates(0.0, 0.0, 0.0, 0.0, 0.0);
        let opts = DualOptions { track_local_time: true, ..DualOptions::with_dt(0.01) };
        let run = simulate_dual(&[(0.0, Marker::Active), (0.0, Marker::Active)], &p, 5.0, &opts, 2)
            .unwrap();
        assert_eq!(run.particles.len(), 2);
    }

    #[test]
    fn coalescence_keeps_lower_id() {
        let p = rates(0.0, 0.0, 0.0, 0.0, 1e6);
        let opts = DualOptions::with_dt(0.001);
        let run = simulate_dual(&[(0.0, Marker::Active), (0.0, Marker::Active)], &p, 0.01, &opts, 4)
            .unwrap();
        assert_eq!(run.particles.len(), 1);
        assert_eq!(run.particles[0].id, 0);
    }

    #[test]
    fn dormant_particles_never_coalesce() {
        let p = rates(0.0, 0.0, 0.0, 0.0, 1e6);
        let start = [(0.0, Marker::Dormant), (0.0, Marker::Dormant), (0.0, Marker::Active)];
        let run = simulate_dual(&start, &p, 1.0, &DualOptions::default(), 4).unwrap();
        assert_eq!(run.particles.len(), 3);
    }

    #[test]
    fn killing_weight_of_always_active_particle() {
        let p = ModelParams { m1: 0.5, ..rates(0.0, 0.0, 0.0, 0.0, 0.0) };
        let run = simulate_dual(&[(0.0, Marker::Active)], &p, 2.0, &DualOptions::default(), 1).unwrap();
        assert!((run.occupation - 2.0).abs() < 1e-9);
        assert!((run.weight - (-1.0f64).exp()).abs() < 1e-9);
        let p0 = ModelParams { m1: 0.0, ..p };
        let run = simulate_dual(&[(0.0, Marker::Active)], &p0, 2.0, &DualOptions::default(), 1).unwrap();
        assert_eq!(run.weight, 1.0);
    }

    #[test]
    fn rightmost_includes_dormant() {
        let p = rates(0.0, 0.0, 0.0, 0.0, 0.0);
        let opts = DualOptions::default();
        let sys = init_dual(&[(1.0, Marker::Active), (2.5, Marker::Dormant)], &p, &opts, 0).unwrap();
        assert_eq!(rightmost(&sys).unwrap(), 2.5);
        let sys = init_dual(&[(0.0, Marker::Active)], &p, &opts, 0).unwrap();
        assert_eq!(rightmost(&sys).unwrap(), 0.0);
    }

    #[test]
    fn extinction_reports() {
        let p = rates(0.0, 0.0, 0.0, 1e4, 0.0);
        let run = simulate_dual(&[(0.0, Marker::Active)], &p, 1.0, &DualOptions::default(), 0).unwrap();
        assert!(run.particles.is_empty());
        assert_eq!(run.rightmost(), Err(Error::Extinct));
        assert_eq!(run.t, 1.0);
        assert_eq!(run.trace.last().unwrap().rightmost, None);
    }

    #[test]
    fn horizon_zero_is_identity() {
        let p = ModelParams { m1: 3.0, ..ModelParams::default() };
        let run = simulate_dual(&[(0.3, Marker::Active)], &p, 0.0, &DualOptions::default(), 0).unwrap();
        assert_eq!(run.particles, vec![Particle { id: 0, pos: 0.3, state: Marker::Active, alive: true }]);
        assert_eq!(run.weight, 1.0);
        assert_eq!(run.trace.len(), 1);
    }

    #[test]
    fn explosion_guard_trips() {
        let p = rates(0.0, 0.0, 5.0, 0.0, 0.0);
        let opts = DualOptions { cap: 100, ..DualOptions::with_dt(0.01) };
        let err = simulate_dual(&[(0.0, Marker::Active)], &p, 5.0, &opts, 0).unwrap_err();
        assert!(matches!(err, Error::ExplosionGuard { cap: 100, .. }), "{err:?}");
    }

    #[test]
    fn deterministic_in_seed() {
        let p = rates(1.0, 1.0, 1.0, 0.2, 2.0);
        let opts = DualOptions { record_every: Some(100), ..DualOptions::default() };
        let a = simulate_dual(&[(0.0, Marker::Active), (0.1, Marker::Active)], &p, 1.0, &opts, 12).unwrap();
        let b = simulate_dual(&[(0.0, Marker::Active), (0.1, Marker::Active)], &p, 1.0, &opts, 12).unwrap();
        assert_eq!(a.particles, b.particles);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 11);
    }

    #[test]
    fn step_invariants_hold() {
        let p = rates(1.0, 1.0, 1.0, 0.3, 1.0);
        let opts = DualOptions::default();
        let mut sys = init_dual(&[(0.0, Marker::Active), (0.0, Marker::Dormant)], &p, &opts, 5).unwrap();
        let mut max_n = sys.len();
        for _ in 0..2000 {
            let before: HashMap<u64, Particle> = sys.particles.iter().map(|q| (q.id, *q)).collect();
            let a = sys.occupation;
            sys.step(&p);
            assert!(sys.occupation >= a);
            for q in &sys.particles {
                if let Some(old) = before.get(&q.id) {
                    if old.state == Marker::Dormant && q.state == Marker::Dormant {
                        assert_eq!(old.pos, q.pos);
                    }
                }
            }
            max_n = max_n.max(sys.len());
            if sys.is_empty() {
                break;
            }
        }
        assert!(sys.occupation <= max_n as f64 * sys.t + 1e-9);
    }

    #[test]
    fn classical_bbm_without_dormancy() {
        let p = rates(0.0, 1.0, 1.0, 0.0, 0.0);
        let opts = DualOptions { record_every: Some(1), ..DualOptions::default() };
        let run = simulate_dual(&[(0.0, Marker::Active)], &p, 3.0, &opts, 6).unwrap();
        assert!(run.trace.iter().all(|s| s.n_dormant == 0));
        assert!(run.n_active() >= 1);
    }

    #[test]
    fn pruning_drops_stragglers() {
        let p = rates(0.0, 0.0, 0.0, 0.0, 0.0);
        let opts = DualOptions { prune_gap: Some(1.0), ..DualOptions::with_dt(0.01) };
        let run = simulate_dual(&[(0.0, Marker::Active), (-5.0, Marker::Dormant)], &p, 0.01, &opts, 0)
            .unwrap();
        assert!(run.pruned);
        assert_eq!(run.particles.len(), 1);
        assert_eq!(run.particles[0].id, 0);
    }

    /// With motion off, the per-step transition frequencies of the counts
    /// match the rate table: births `s i`, a→d `c i`, d→a `c' j`.
    #[test]
    fn count_chain_matches_rates() {
        let (s, c, c_prime) = (1.0, 0.7, 1.3);
        let p = rates(c, c_prime, s, 0.0, 0.0);
        let dt = 0.01;
        let opts = DualOptions { motion: false, ..DualOptions::with_dt(dt) };
        let (i0, j0) = (3usize, 2usize);
        let mut start = vec![(0.0, Marker::Active); i0];
        start.extend(vec![(0.0, Marker::Dormant); j0]);
        let trials = 200_000;
        let outcomes = stats::replicates(trials, 21, |key| {
            let mut sys = init_dual(&start, &p, &opts, key)?;
            let ids_dormant: Vec<u64> =
                sys.particles.iter().filter(|q| !q.is_active()).map(|q| q.id).collect();
            sys.step(&p);
            let births = sys.len() - (i0 + j0);
            let woke = sys.particles.iter().filter(|q| ids_dormant.contains(&q.id) && q.is_active()).count();
            let slept = sys
                .particles
                .iter()
                .filter(|q| q.id < (i0 + j0) as u64 && !ids_dormant.contains(&q.id) && !q.is_active())
                .count();
            Ok([births as f64, slept as f64, woke as f64])
        })
        .unwrap();
        let expect = [s * i0 as f64 * dt, c * i0 as f64 * dt, c_prime * j0 as f64 * dt];
        for k in 0..3 {
            let col: Vec<f64> = outcomes.iter().map(|o| o[k]).collect();
            let est = MeanEstimate::from_samples(&col);
            // O(dt^2) discretisation bias is far below 3 SE here.
            assert!(
                (est.mean - expect[k]).abs() <= 3.0 * est.std_error,
                "column {k}: {est:?} vs {}",
                expect[k]
            );
        }
    }

    #[test]
    fn local_time_with_huge_bandwidth_is_occupation_ceiling() {
        let est = calibrate_local_time(1.0, 1e6, 1e-3, 10, 1).unwrap();
        assert!((est.mean - 1.0 / 2e6).abs() < 1e-15, "{est:?}");
        assert_eq!(calibrate_local_time(0.0, 0.04, 1e-3, 10, 1).unwrap().mean, 0.0);
    }

    /// After k steps the gap is exactly N(0, 2 k dt), so the estimator's
    /// mean is a finite sum of normal probabilities.
    #[test]
    fn local_time_matches_discrete_expectation() {
        let (t, dt) = (1.0, 1e-3);
        let eps = default_eps(dt);
        let steps = (t / dt).round() as usize;
        let exact: f64 = (1..=steps)
            .map(|k| {
                let sd = (2.0 * k as f64 * dt).sqrt();
                dt / (2.0 * eps) * libm::erf(eps / sd / std::f64::consts::SQRT_2)
            })
            .sum();
        let est = calibrate_local_time(t, eps, dt, 4_000, 17).unwrap();
        assert!((est.mean - exact).abs() <= 4.0 * est.std_error, "{est:?} vs {exact}");
    }

    #[test]
    fn many_to_one_requires_plain_bbm() {
        let p = ModelParams { nu: 1.0, ..ModelParams::default() };
        assert!(many_to_one_estimate(&p, 0.0, 1.0, 10, &DualOptions::default(), 0).is_err());
    }

    #[test]
    fn many_to_one_trivial_cases() {
        let opts = DualOptions::with_dt(0.01);
        // No branching: one particle, both sides estimate P(B_t >= x0).
        let p = rates(1.0, 1.0, 0.0, 0.0, 0.0);
        let r = many_to_one_estimate(&p, 0.5, 1.0, 20_000, &opts, 3).unwrap();
        assert_eq!(r.mean_count.mean, 1.0);
        assert!((r.lhs.mean - r.rhs.mean).abs() <= 3.0 * (r.lhs.std_error + r.rhs.std_error));
        // x0 = -inf counts every particle.
        let p = rates(1.0, 1.0, 1.0, 0.0, 0.0);
        let r = many_to_one_estimate(&p, f64::NEG_INFINITY, 1.0, 2_000, &opts, 3).unwrap();
        assert_eq!(r.single_probability.mean, 1.0);
        assert_eq!(r.rhs.mean, r.mean_count.mean);
    }

    #[test]
    fn csv_headers() {
        let mut out = Vec::new();
        write_trace_csv(&mut out, &[DualSample { t: 0.0, n_active: 1, n_dormant: 0, rightmost: None, occupation: 0.0 }])
            .unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "t,n_active,n_dormant,rightmost,A\n0,1,0,,0\n");
        let mut out = Vec::new();
        write_particles_csv(&mut out, &[Particle { id: 3, pos: 1.5, state: Marker::Dormant, alive: true }])
            .unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "id,pos,state\n3,1.5,dormant\n");
    }
}
