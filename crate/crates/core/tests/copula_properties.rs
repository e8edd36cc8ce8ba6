use bitr::copula::*;
use bitr::data::{Dataset, Observation, Outcome, WeightConfig};
use bitr::marginal::MarginalFit;
use bitr::normal;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

fn mixed_partial(fam: CopulaFamily, u: f64, v: f64, theta: f64, h: f64) -> f64 {
    let c = |a: f64, b: f64| link_value(fam, a, b, theta);
    (c(u + h, v + h) - c(u + h, v - h) - c(u - h, v + h) + c(u - h, v - h)) / (4.0 * h * h)
}

#[test]
fn density_matches_finite_difference_mixed_partial() {
    for fam in CopulaFamily::ALL {
        for theta in [1.5, 2.0, 3.0] {
            for u in GRID {
                for v in GRID {
                    let fd = mixed_partial(fam, u, v, theta, 1e-5);
                    let exact = copula_density(fam, u, v, theta).unwrap();
                    let rel = (exact - fd).abs() / exact.abs();
                    assert!(rel < 1e-4, "{fam} θ={theta} ({u},{v}): exact {exact} fd {fd}");
                }
            }
        }
    }
}

#[test]
fn frank_negative_dependence_density() {
    for u in GRID {
        for v in GRID {
            let fd = mixed_partial(CopulaFamily::Frank, u, v, -4.0, 1e-5);
            let exact = copula_density(CopulaFamily::Frank, u, v, -4.0).unwrap();
            assert!((exact - fd).abs() / exact < 1e-4);
        }
    }
}

fn family_and_theta() -> impl Strategy<Value = (CopulaFamily, f64)> {
    prop_oneof![
        (0.01f64..30.0).prop_map(|t| (CopulaFamily::Clayton, t)),
        (1.0001f64..30.0).prop_map(|t| (CopulaFamily::Gumbel, t)),
        (-30.0f64..30.0).prop_map(|t| (CopulaFamily::Frank, t)),
    ]
}

proptest! {
    #[test]
    fn frechet_bounds((fam, theta) in family_and_theta(), u in 0.001f64..0.999, v in 0.001f64..0.999) {
        let c = link_eval(fam, u, v, theta).unwrap();
        let lower = (u + v - 1.0).max(0.0);
        let upper = u.min(v);
        prop_assert!(c >= lower - 1e-12 && c <= upper + 1e-12, "{} θ={} C={}", fam, theta, c);
    }

    #[test]
    fn margins_recovered_at_one((fam, theta) in family_and_theta(), u in 0.001f64..0.999) {
        prop_assert!((link_value(fam, u, 1.0, theta) - u).abs() < 1e-12);
        prop_assert!((link_value(fam, 1.0, u, theta) - u).abs() < 1e-12);
        prop_assert_eq!(link_value(fam, u, 0.0, theta), 0.0);
    }

    #[test]
    fn link_is_nondecreasing((fam, theta) in family_and_theta(), u in 0.01f64..0.9, v in 0.01f64..0.9, du in 0.0f64..0.09) {
        prop_assert!(link_value(fam, u + du, v, theta) >= link_value(fam, u, v, theta) - 1e-12);
    }
}

/// Uncensored lognormal pairs whose survival ranks follow a Clayton copula.
fn clean_clayton(n: usize, theta: f64, seed: u64) -> (Dataset, MarginalFit, MarginalFit) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta1 = vec![0.8, -0.5];
    let beta2 = vec![-0.3, 1.0];
    let obs = (0..n)
        .map(|_| {
            let x = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let u: f64 = rng.gen_range(1e-12..1.0);
            let w: f64 = rng.gen_range(1e-12..1.0);
            let v = clayton_conditional_inverse(u, w, theta);
            let mean1 = beta1[0] * x[0] + beta1[1] * x[1];
            let mean2 = beta2[0] * x[0] + beta2[1] * x[1];
            Observation {
                y1: (mean1 - normal::quantile(u)).exp(),
                y2: (mean2 - normal::quantile(v)).exp(),
                delta1: true,
                delta2: true,
                x,
                a: 0,
            }
        })
        .collect();
    let fit = |beta: Vec<f64>, outcome| MarginalFit {
        beta,
        gamma: 1.0,
        outcome,
        arm: 0,
        c: WeightConfig::BASELINE,
    };
    (
        Dataset::new(obs, 2, 0).unwrap(),
        fit(beta1, Outcome::First),
        fit(beta2, Outcome::Second),
    )
}

fn no_censoring(_t: f64, _x: &[f64]) -> f64 {
    1.0
}

#[test]
fn theta_recovered_on_clean_clayton_data() {
    for theta in [2.0, 3.0] {
        let (d, m1, m2) = clean_clayton(2000, theta, 0);
        let fit = fit_theta(&d, &m1, &m2, &no_censoring, &no_censoring, CopulaFamily::Clayton).unwrap();
        assert!((fit.theta - theta).abs() <= 0.25, "θ̂ = {} for θ = {theta}", fit.theta);
        assert!(!fit.at_boundary);
    }
}

#[test]
fn theta_recovery_holds_across_draws() {
    // sd of θ̂ is about 0.1 here, so an occasional draw may leave the ±0.25 band
    let estimates: Vec<f64> = (0..10)
        .map(|seed| {
            let (d, m1, m2) = clean_clayton(2000, 3.0, 1000 + seed);
            fit_theta(&d, &m1, &m2, &no_censoring, &no_censoring, CopulaFamily::Clayton).unwrap().theta
        })
        .collect();
    let inside = estimates.iter().filter(|t| (*t - 3.0).abs() <= 0.25).count();
    assert!(inside >= 9, "{estimates:?}");
    let mean = estimates.iter().sum::<f64>() / 10.0;
    assert!((mean - 3.0).abs() < 0.1, "mean θ̂ {mean}");
}

#[test]
fn theta_search_trace_is_monotone() {
    let (d, m1, m2) = clean_clayton(500, 2.0, 3);
    let search = fit_theta_traced(&d, &m1, &m2, &no_censoring, &no_censoring, CopulaFamily::Gumbel).unwrap();
    for w in search.trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn cross_validation_prefers_clayton_on_clayton_data() {
    let reps = 20;
    let hits = (0..reps)
        .filter(|&r| {
            let (d, m1, m2) = clean_clayton(500, 3.0, 100 + r);
            let fam = select_link_cv(&d, &m1, &m2, &no_censoring, &no_censoring, &CopulaFamily::ALL, 5, r).unwrap();
            fam == CopulaFamily::Clayton
        })
        .count();
    assert!(hits as f64 >= 0.7 * reps as f64, "Clayton chosen {hits}/{reps}");
}

#[test]
fn single_candidate_skips_cross_validation() {
    let (d, m1, m2) = clean_clayton(3, 2.0, 5);
    let fam = select_link_cv(&d, &m1, &m2, &no_censoring, &no_censoring, &[CopulaFamily::Frank], 5, 0).unwrap();
    assert_eq!(fam, CopulaFamily::Frank);
    assert!(select_link_cv(&d, &m1, &m2, &no_censoring, &no_censoring, &CopulaFamily::ALL, 5, 0).is_err());
}
