use bgwcoal::empirical::{empirical_multivariate, empirical_pair_cdf, run_replicas, StudyOptions};
use bgwcoal::offspring::OffspringMeasure;
use bgwcoal::psi::SolverConfig;
use bgwcoal::simulator::{sample_and_trace, simulate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn binary() -> OffspringMeasure {
    OffspringMeasure::binary(2.0, 1.0).unwrap()
}

#[test]
fn pairwise_matrix_is_symmetric_and_ultrametric() {
    let m = OffspringMeasure::new([(0, 1.0), (2, 1.5), (3, 0.5)]).unwrap();
    let mut checked = 0;
    for seed in 0..30 {
        let forest = simulate(&m, 2, 1.5, seed).unwrap();
        if forest.population() < 5 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample_and_trace(&forest, 5, &mut rng).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(s.pairwise(i, j).to_bits(), s.pairwise(j, i).to_bits());
                if i == j {
                    continue;
                }
                let v = s.pairwise(i, j);
                assert!(v.is_infinite() || (v > 0.0 && v <= 1.5));
                for k in 0..5 {
                    if k != i && k != j {
                        assert!(v <= s.pairwise(i, k).max(s.pairwise(k, j)));
                    }
                }
            }
        }
        let star = s.t_star();
        assert_eq!(star.len(), 4);
        assert!(star.windows(2).all(|w| w[0] <= w[1]));
        checked += 1;
    }
    assert!(checked > 5);
}

#[test]
fn replicas_are_reproducible_and_order_free() {
    let m = binary();
    let a = run_replicas(&m, 3, 1.0, 2, &StudyOptions::new(500, 11)).unwrap();
    let b = run_replicas(&m, 3, 1.0, 2, &StudyOptions::new(500, 11).with_threads(3)).unwrap();
    assert_eq!(a, b);
    let c = run_replicas(&m, 3, 1.0, 2, &StudyOptions::new(500, 12)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn first_pair_marginal_matches_pair_study() {
    // k = 2 in the multivariate study samples exactly what the pair study samples.
    let m = binary();
    let cfg = SolverConfig::default();
    let opts = StudyOptions::new(20_000, 3);
    let pair = empirical_pair_cdf(&m, 2, 1.0, &[0.5], &opts, &cfg).unwrap();
    let multi = empirical_multivariate(&m, 2, 1.0, 2, 4, &opts, &cfg).unwrap();
    for t1 in [0.1, 0.5, 1.0] {
        assert_eq!(pair.unconditional.cdf(t1), multi.first_pair.cdf(t1));
    }
    assert!(multi.report.passed(), "{}", multi.report.to_csv());
}

#[test]
fn pure_death_multivariate_mass_is_at_infinity() {
    let m = OffspringMeasure::pure_death(0.5).unwrap();
    let study = empirical_multivariate(
        &m,
        4,
        1.0,
        3,
        4,
        &StudyOptions::new(2_000, 1),
        &SolverConfig::default(),
    )
    .unwrap();
    assert!(study.cells.is_empty());
    assert_eq!(study.infinite + study.insufficient, 2_000);
}

#[test]
fn pair_study_passes_for_supercritical_measure() {
    let m = OffspringMeasure::new([(0, 1.0), (2, 1.0), (3, 0.5)]).unwrap();
    let study = empirical_pair_cdf(
        &m,
        1,
        1.0,
        &[0.2, 0.6, 1.0],
        &StudyOptions::new(20_000, 21),
        &SolverConfig::default(),
    )
    .unwrap();
    assert!(study.report.passed(), "{}", study.report.to_csv());
}
