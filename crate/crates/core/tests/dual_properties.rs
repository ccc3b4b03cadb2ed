use seedbank_core::dual::{many_to_one_estimate, simulate_dual, DualOptions, Marker};
use seedbank_core::model::ModelParams;
use seedbank_core::rng;
use seedbank_core::stats::{self, MeanEstimate};

#[test]
fn exponential_survival() {
    let p = ModelParams { c: 0.0, c_prime: 0.0, s: 0.0, m1: 0.0, m2: 1.0, nu: 0.0 };
    let n = 100_000;
    let opts = DualOptions { motion: false, ..DualOptions::default() };
    let alive = stats::replicates(n, 31, |key| {
        Ok(!simulate_dual(&[(0.0, Marker::Active)], &p, 1.0, &opts, key)?.particles.is_empty())
    })
    .unwrap();
    let est = MeanEstimate::binomial(alive.iter().filter(|&&a| a).count(), n);
    let exact = (-1.0f64).exp();
    assert!((exact - 0.3679).abs() < 1e-4);
    assert!((est.mean - exact).abs() <= 3.0 * est.std_error, "{est:?}");
}

#[test]
fn classical_branching_has_no_dormancy() {
    let p = ModelParams { c: 0.0, ..ModelParams::default() };
    let opts = DualOptions { record_every: Some(10), ..DualOptions::default() };
    for key in 0..20 {
        let run = simulate_dual(&[(0.0, Marker::Active)], &p, 2.0, &opts, key).unwrap();
        assert!(run.trace.iter().all(|s| s.n_dormant == 0));
    }
}

/// Active time of one exact two-state path started active over `[0, t]`.
fn active_time(r: &mut rng::SimRng, c: f64, c_prime: f64, t: f64) -> f64 {
    let (mut clock, mut active, mut total) = (0.0, true, 0.0);
    while clock < t {
        let rate = if active { c } else { c_prime };
        let end = (clock + rng::exponential(r, rate)).min(t);
        if active {
            total += end - clock;
        }
        clock = end;
        active = !active;
    }
    total
}

/// The branching sum is the single-path expectation tilted by the
/// exponential of the active time, `E[e^{s A_t} F(B_t)]`.
#[test]
fn branching_sum_is_active_time_tilted() {
    let (c, c_prime, t, x0) = (1.0, 1.0, 2.0, 1.0);
    let mut r = rng::stream(77, 0);
    let oracle: Vec<f64> = (0..400_000)
        .map(|_| {
            let a = active_time(&mut r, c, c_prime, t);
            let tail = if a > 0.0 { 0.5 * libm::erfc(x0 / (2.0 * a).sqrt()) } else { 0.0 };
            a.exp() * tail
        })
        .collect();
    let oracle = MeanEstimate::from_samples(&oracle);
    let p = ModelParams::fkpp_seed_bank(c, c_prime);
    let est = many_to_one_estimate(&p, x0, t, 20_000, &DualOptions::default(), 5).unwrap();
    let slack = 3.0 * oracle.std_error.hypot(est.lhs.std_error) + 0.01;
    assert!((est.lhs.mean - oracle.mean).abs() <= slack, "{:?} vs {oracle:?}", est.lhs);
    // The product form misses the tilt and sits clearly below.
    assert!(est.rhs.mean < oracle.mean - 0.05, "{:?}", est.rhs);
}

#[test]
fn mean_count_matches_exact_switching_chain() {
    let mut r = rng::stream(3, 0);
    let samples: Vec<f64> = (0..200_000).map(|_| active_time(&mut r, 1.0, 1.0, 2.0).exp()).collect();
    let oracle = MeanEstimate::from_samples(&samples);
    let exact = seedbank_core::analytics::expected_counts_closed_form(1.0, 1.0, 2.0).unwrap();
    assert!((oracle.mean - exact.total()).abs() <= 4.0 * oracle.std_error);
}
