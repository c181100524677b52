use lierate::reference_data as data;
use lierate::sde::{MeasureChange, MeasureKind, TimeGrid};
use lierate::ssa::{generator_from_coeffs, ssa_sample, GeneratorPath};
use lierate::xva::{
    collateral_path, path_outcome, run_xva, simulate_portfolio, standard_regimes, CollateralRegime, CsaTerms, PortfolioSpec, XvaSetup,
};
use lierate::{rng, Executor};
use proptest::prelude::*;

fn setup(m1: usize, m2: usize, terms: CsaTerms) -> XvaSetup {
    XvaSetup {
        params: data::hist_params(),
        measure: MeasureChange::from_free(MeasureKind::Exponential, &data::H_EXPONENTIAL[1]).unwrap(),
        rating_grid: TimeGrid::with_rate(1.0, 24).unwrap(),
        m1,
        m2,
        portfolio: PortfolioSpec {
            v0: 0.0,
            n: 24,
            sigma_scale: 1e7,
            horizon: 1.0,
            seed: 5,
        },
        terms,
        bank_initial: 0,
        counterparty_initial: 1,
        seed: 42,
    }
}

#[test]
fn portfolio_variance_matches_components() {
    let spec = PortfolioSpec {
        v0: 1e6,
        n: 24,
        sigma_scale: 1e7,
        horizon: 1.0,
        seed: 9,
    };
    let grid = TimeGrid::new(1.0, 52).unwrap();
    let n = 100_000;
    let v = simulate_portfolio(&spec, &grid, n, 3, Executor::Parallel).unwrap();
    let vt: Vec<f64> = (0..n).map(|m| v.path(m)[52]).collect();
    let mean = vt.iter().sum::<f64>() / n as f64;
    let var = vt.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let expected = spec.draw().unwrap().variance(1.0);
    // standard error of a Gaussian sample variance
    let se = expected * (2.0 / (n - 1) as f64).sqrt();
    assert!((var - expected).abs() <= 3.0 * se, "{var} vs {expected}");
    assert!((mean - 1e6).abs() <= 3.0 * (expected / n as f64).sqrt());
}

#[test]
fn threshold_limits_are_exact_and_triggers_lie_between() {
    let inf = CsaTerms::symmetric(vec![f64::INFINITY; 4], 0.6).unwrap();
    let zero = CsaTerms::symmetric(vec![0.0; 4], 0.6).unwrap();
    let trig = CsaTerms::symmetric(data::TRIGGER_THRESHOLDS.to_vec(), 0.6).unwrap();
    let regimes = vec![
        CollateralRegime::Uncollateralized,
        CollateralRegime::Perfect,
        CollateralRegime::Triggers(trig.clone()),
        CollateralRegime::Triggers(inf),
        CollateralRegime::Triggers(zero),
    ];
    let run = run_xva(&setup(40, 25, trig), &regimes, Executor::Parallel).unwrap();
    let [unc, perf, tr, tinf, tzero] = &run.results[..] else { panic!() };
    assert_eq!((tinf.cva, tinf.dva), (unc.cva, unc.dva));
    assert_eq!((tzero.cva, tzero.dva), (perf.cva, perf.dva));
    assert!(perf.cva <= tr.cva && tr.cva <= unc.cva, "{perf:?} {tr:?} {unc:?}");
    assert!(perf.dva <= tr.dva && tr.dva <= unc.dva);
    for r in &run.results {
        assert_eq!(r.bva, r.dva - r.cva);
        assert_eq!(r.paths, 1000);
    }
    assert!(unc.counts.counterparty_first + unc.counts.bank_first > 0);
}

#[test]
fn runs_are_schedule_independent() {
    let trig = CsaTerms::symmetric(data::TRIGGER_THRESHOLDS.to_vec(), 0.6).unwrap();
    let s = setup(8, 10, trig.clone());
    let a = run_xva(&s, &standard_regimes(&trig), Executor::Sequential).unwrap();
    let b = run_xva(&s, &standard_regimes(&trig), Executor::Parallel).unwrap();
    assert_eq!(a.results, b.results);
}

#[test]
fn collateral_sign_convention() {
    // counterparty posts when the bank is in the money beyond its threshold
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let frozen = GeneratorPath::constant(TimeGrid::new(1.0, 1).unwrap(), &generator_from_coeffs(4, vec![0.0; 9]).unwrap()).unwrap();
    let xb = ssa_sample(&frozen, 0, &mut rng::stream(0, "t", &[])).unwrap();
    let xc = ssa_sample(&frozen, 1, &mut rng::stream(0, "t", &[])).unwrap();
    let regime = CollateralRegime::Triggers(CsaTerms::symmetric(data::TRIGGER_THRESHOLDS.to_vec(), 0.6).unwrap());
    let c = collateral_path(&[0.0, 7e6, -12e6, 3e6, 6e6], &grid, &xb, &xc, &regime).unwrap();
    assert_eq!(c, vec![0.0, 2e6, -2e6, 0.0, 1e6]);
}

fn fixed_paths() -> (TimeGrid, Vec<Vec<f64>>, Vec<(lierate::ssa::RatingPath, lierate::ssa::RatingPath)>) {
    let rgrid = TimeGrid::with_rate(1.0, 4).unwrap();
    let gen = generator_from_coeffs(4, vec![0.4, 0.2, 0.3, 0.5, 0.6, 0.8, 0.2, 1.0, 1.5]).unwrap();
    let g = GeneratorPath::constant(rgrid, &gen).unwrap();
    let grid = TimeGrid::with_rate(1.0, 52).unwrap();
    let portfolio = PortfolioSpec {
        v0: 0.0,
        n: 5,
        sigma_scale: 1e7,
        horizon: 1.0,
        seed: 1,
    }
    .draw()
    .unwrap();
    let mut values = Vec::new();
    let mut ratings = Vec::new();
    for m in 0..200 {
        values.push(portfolio.value_path(&grid, 7, m));
        let xb = ssa_sample(&g, m % 3, &mut rng::stream(1, "b", &[m as u64])).unwrap();
        let xc = ssa_sample(&g, (m + 1) % 3, &mut rng::stream(1, "c", &[m as u64])).unwrap();
        ratings.push((xb, xc));
    }
    (grid, values, ratings)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exposure_is_monotone_in_thresholds(
        lo in prop::collection::vec(0.0..2e7f64, 4),
        bump in prop::collection::vec(0.0..2e7f64, 4),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let small = CollateralRegime::Triggers(CsaTerms::symmetric(lo, 0.6).unwrap());
        let large = CollateralRegime::Triggers(CsaTerms::symmetric(hi, 0.6).unwrap());
        let (grid, values, ratings) = fixed_paths();
        for (v, (xb, xc)) in values.iter().zip(&ratings) {
            let a = path_outcome(v, &grid, xb, xc, &small, 0.6, 0.6).unwrap();
            let b = path_outcome(v, &grid, xb, xc, &large, 0.6, 0.6).unwrap();
            prop_assert!(a.cva <= b.cva && a.dva <= b.dva);
        }
    }
}
