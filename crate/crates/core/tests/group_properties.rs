use lierate::cohort::{reconstruct, CohortMatrix, WeightMatrix};
use lierate::io::{read_rating_matrix, write_rating_matrix};
use lierate::lie::{algebra_from_coeffs, coord_count, expm_general, mat_exp, validate_stochastic, AlgebraCoeffs};
use lierate::reference_data as data;
use lierate::SquareMatrix;
use proptest::prelude::*;

fn generator(max_k: usize, max_coeff: f64) -> impl Strategy<Value = SquareMatrix> {
    (2..=max_k).prop_flat_map(move |k| {
        prop::collection::vec(0.0..max_coeff, coord_count(k)).prop_map(move |c| algebra_from_coeffs(&AlgebraCoeffs::new(k, c).unwrap()))
    })
}

fn same_k_pair(max_k: usize, max_coeff: f64) -> impl Strategy<Value = (SquareMatrix, SquareMatrix)> {
    (2..=max_k).prop_flat_map(move |k| {
        let one = prop::collection::vec(0.0..max_coeff, coord_count(k))
            .prop_map(move |c| algebra_from_coeffs(&AlgebraCoeffs::new(k, c).unwrap()));
        (one.clone(), one)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn exponential_lands_in_group(a in generator(6, 5.0)) {
        let r = mat_exp(&a).unwrap();
        let rep = validate_stochastic(r.as_matrix(), 1e-10);
        prop_assert!(rep.passed, "{rep}");
    }

    #[test]
    fn exponential_agrees_with_pade(a in generator(5, 5.0)) {
        let r = mat_exp(&a).unwrap();
        let oracle = expm_general(&a);
        prop_assert!(r.as_matrix().max_abs_diff(&oracle).unwrap() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn products_stay_in_group((a, b) in same_k_pair(5, 3.0)) {
        let prod = mat_exp(&a).unwrap().compose(&mat_exp(&b).unwrap()).unwrap();
        prop_assert!(validate_stochastic(prod.as_matrix(), 1e-10).passed);
    }

    #[test]
    fn one_parameter_subgroup(a in generator(5, 2.0), s in 0.0..2.0f64, t in 0.0..2.0f64) {
        let lhs = mat_exp(&a.scale(s)).unwrap().compose(&mat_exp(&a.scale(t)).unwrap()).unwrap();
        let rhs = mat_exp(&a.scale(s + t)).unwrap();
        prop_assert!(lhs.as_matrix().max_abs_diff(rhs.as_matrix()).unwrap() < 1e-12);
    }

    #[test]
    fn reconstruction_rows_sum_to_one(w in prop::collection::vec(1e-6..10.0f64, 16)) {
        let c = CohortMatrix::new(data::cohort_matrix()).unwrap();
        let f = WeightMatrix::new(SquareMatrix::from_row_major(4, w).unwrap()).unwrap();
        let rec = reconstruct(&c, &f).unwrap();
        for s in rec.as_matrix().row_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!(rec[(i, j)] >= data::cohort_matrix()[(i, j)]);
            }
        }
    }

    #[test]
    fn matrix_csv_roundtrip_is_exact(v in prop::collection::vec(-1e12..1e12f64, 9)) {
        let labels: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let m = SquareMatrix::from_row_major(3, v).unwrap();
        let back = read_rating_matrix(&write_rating_matrix(&labels, &m, None).unwrap()).unwrap();
        prop_assert_eq!(back.matrix, m);
    }
}
