use pailab::cutmetric::{cut_norm_exact, cut_norm_heuristic, operator_bound, pool_to_grid};
use pailab::gntk::{complexity_term, flipped_labels, path_density, GramMatrix};
use pailab::limitg::GridKernel;
use pailab::numkit::{erf, erfinv, top_count, QuantileTable, Rng64};
use pailab::saliency::{make_mask, random_scores, rank_correlation};
use pailab::Matrix;
use proptest::prelude::*;

fn matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0..3.0f64, r * c)
            .prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

fn perm(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    Rng64::new(seed).shuffle(&mut p);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cut_norm_is_permutation_invariant(b in matrix(8), seed in any::<u64>()) {
        let rows = perm(b.rows(), seed);
        let cols = perm(b.cols(), seed ^ 1);
        let v = cut_norm_exact(&b).unwrap().value;
        let w = cut_norm_exact(&b.permuted(&rows, &cols)).unwrap().value;
        prop_assert!((v - w).abs() <= 1e-12 * v.max(1.0));
    }

    #[test]
    fn heuristic_exact_bound_ordering(b in matrix(9), seed in any::<u64>()) {
        let exact = cut_norm_exact(&b).unwrap();
        let heur = cut_norm_heuristic(&b, 4, &mut Rng64::new(seed)).unwrap().value;
        prop_assert!(heur <= exact.value + 1e-12);
        prop_assert!(exact.value <= operator_bound(&b) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn cut_norm_triangle_and_scaling(a in matrix(6), c in -4.0..4.0f64) {
        let b = a.map(|v| (3.0 * v).sin());
        let sum = Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] + b[(i, j)]);
        let na = cut_norm_exact(&a).unwrap().value;
        let nb = cut_norm_exact(&b).unwrap().value;
        prop_assert!(cut_norm_exact(&sum).unwrap().value <= na + nb + 1e-12);
        let scaled = cut_norm_exact(&a.map(|v| c * v)).unwrap().value;
        prop_assert!((scaled - c.abs() * na).abs() <= 1e-12 * (1.0 + scaled));
    }

    #[test]
    fn mask_keeps_floor_rho_entries(r in 1usize..40, c in 1usize..40, rho in 0.01..1.0f64, seed in any::<u64>()) {
        let mut rng = Rng64::new(seed);
        let f = random_scores(r, c, &mut rng);
        let mask = make_mask(&f, rho, &mut rng).unwrap();
        prop_assert_eq!(mask.count_ones(), top_count(rho, r * c));
    }

    #[test]
    fn pooling_preserves_mean_on_even_blocks(g in 1usize..6, mult in 1usize..5, seed in any::<u64>()) {
        let n = g * mult;
        let p = Matrix::from_vec(n, n, Rng64::new(seed).normal_vec(n * n)).unwrap();
        let w = pool_to_grid(&p, g).unwrap();
        prop_assert!((w.mean() - p.mean()).abs() <= 1e-12);
    }

    #[test]
    fn complexity_scales_inversely(m in 2usize..8, c in 0.1..10.0f64, seed in any::<u64>()) {
        let mut rng = Rng64::new(seed);
        let a = Matrix::from_vec(m, m, rng.normal_vec(m * m)).unwrap();
        let k = Matrix::from_fn(m, m, |i, j| {
            (0..m).map(|l| a[(i, l)] * a[(j, l)]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }
        });
        let y = rng.normal_vec(m);
        let (v, j0) = complexity_term(&GramMatrix::new(k.clone()).unwrap(), &y).unwrap();
        let (w, j1) = complexity_term(&GramMatrix::new(k.map(|x| c * x)).unwrap(), &y).unwrap();
        prop_assert_eq!((j0, j1), (0.0, 0.0));
        prop_assert!((w * c - v).abs() <= 1e-9 * v);
    }

    #[test]
    fn complexity_permutation_invariant(m in 2usize..8, seed in any::<u64>()) {
        let mut rng = Rng64::new(seed);
        let a = Matrix::from_vec(m, m, rng.normal_vec(m * m)).unwrap();
        let k = Matrix::from_fn(m, m, |i, j| {
            (0..m).map(|l| a[(i, l)] * a[(j, l)]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }
        });
        let y = rng.normal_vec(m);
        let p = perm(m, seed);
        let yp: Vec<f64> = p.iter().map(|&i| y[i]).collect();
        let v = complexity_term(&GramMatrix::new(k.clone()).unwrap(), &y).unwrap().0;
        let w = complexity_term(&GramMatrix::new(k.permuted(&p, &p)).unwrap(), &yp).unwrap().0;
        prop_assert!((v - w).abs() <= 1e-9 * v.abs().max(1.0));
    }

    #[test]
    fn path_density_of_constants(g in 1usize..12, a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64) {
        let k = |v| GridKernel::constant(g, v).unwrap();
        let p = path_density(&k(a), &k(b), &k(c)).unwrap();
        for v in p {
            prop_assert!((v - a * b * c).abs() <= 1e-14);
        }
    }

    #[test]
    fn label_flips_count(m in 1usize..200, eta in 0.0..=1.0f64, seed in any::<u64>()) {
        let y: Vec<f64> = (0..m).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let flipped = flipped_labels(&y, &perm(m, seed), eta).unwrap();
        let changed = y.iter().zip(&flipped).filter(|(a, b)| a != b).count();
        prop_assert_eq!(changed, (eta * m as f64).round() as usize);
    }

    #[test]
    fn erfinv_inverts_erf(x in -3.0..3.0f64) {
        prop_assert!((erfinv(erf(x)).unwrap() - x).abs() <= 1e-9);
    }

    #[test]
    fn quantile_query_monotone(samples in prop::collection::vec(-5.0..5.0f64, 1..50), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let t = QuantileTable::from_samples(samples).unwrap();
        let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
        prop_assert!(t.query(lo.max(1e-12)) <= t.query(hi.max(1e-12)));
    }

    #[test]
    fn spearman_of_monotone_map_is_one(v in prop::collection::vec(-5.0..5.0f64, 3..40)) {
        let w: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        if let Ok(r) = rank_correlation(&v, &w) {
            prop_assert!((r - 1.0).abs() <= 1e-12);
        }
    }
}
