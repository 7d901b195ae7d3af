use nalgebra::{DMatrix, SymmetricEigen};
use nowcast_core::data::{synthesize_panel, ExogenousMatrix, WeekRange};
use nowcast_core::dimred::{
    pca_fit, pls_fit, project, select_pca_components, select_var_components, Reduction, ScoreMatrix,
};
use nowcast_core::preprocess::standardize_columns;
use nowcast_core::stats;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

fn matrix(cols: Vec<Vec<f64>>) -> ExogenousMatrix {
    let mut x = ExogenousMatrix::new(cols[0].len());
    for (i, c) in cols.into_iter().enumerate() {
        x.insert(format!("x{i}"), c).unwrap();
    }
    x
}

fn weeks(first: u32, last: u32) -> WeekRange {
    WeekRange::new(first, last).unwrap()
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

/// A state's standardised exogenous block from the synthetic panel, with
/// its case series.
fn panel_block(train_end: u32) -> (ExogenousMatrix, Vec<f64>) {
    let panel = synthesize_panel(7, 2, 200, 26).unwrap();
    let (_, s) = panel.states().next().unwrap();
    let mut exog = s.exog.clone();
    let train = weeks(1, train_end);
    exog.retain(|_, c| stats::sample_variance(&c[..train_end as usize]) > 1e-12);
    let (z, _) = standardize_columns(&exog, train).unwrap();
    (z, s.cases.values().to_vec())
}

#[test]
fn pca_variances_match_eigen_oracle() {
    // columns with sample covariance exactly [[2,1],[1,2]]
    let n = 400;
    let a = normals(1, n);
    let b = normals(2, n);
    let raw = DMatrix::from_fn(n, 2, |i, j| if j == 0 { a[i] } else { b[i] });
    let mean = raw.row_mean();
    let centred = DMatrix::from_fn(n, 2, |i, j| raw[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let whiten = cov.cholesky().unwrap().l().try_inverse().unwrap();
    let white = &centred * whiten.transpose();
    let target = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let shaped = &white * target.cholesky().unwrap().l().transpose();
    let cols: Vec<Vec<f64>> = (0..2).map(|j| shaped.column(j).iter().copied().collect()).collect();
    let basis = pca_fit(&matrix(cols), weeks(1, n as u32)).unwrap();
    assert!((basis.strengths[0] - 3.0).abs() < 1e-9);
    assert!((basis.strengths[1] - 1.0).abs() < 1e-9);

    // panel block against a symmetric eigen-decomposition of its covariance
    let (x, _) = panel_block(150);
    let basis = pca_fit(&x, weeks(1, 150)).unwrap();
    let cols: Vec<&[f64]> = x.columns().map(|(_, c)| &c[..150]).collect();
    let m = cols.len();
    let c = DMatrix::from_fn(m, m, |i, j| sample_cov(cols[i], cols[j]));
    let mut oracle: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    oracle.sort_by(|a, b| b.total_cmp(a));
    for (got, want) in basis.strengths.iter().zip(&oracle) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn pca_loadings_are_orthonormal_and_scores_uncorrelated() {
    let (x, _) = panel_block(150);
    let basis = pca_fit(&x, weeks(1, 150)).unwrap();
    for (i, a) in basis.rotation.iter().enumerate() {
        for (j, b) in basis.rotation.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot - want).abs() < 1e-8);
        }
        let pivot = a
            .iter()
            .copied()
            .fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        assert!(pivot > 0.0);
    }
    let scores = project(&x, &basis).unwrap();
    let k = scores.n_components();
    for i in 0..k {
        for j in 0..i {
            let c = sample_cov(&scores.columns[i][..150], &scores.columns[j][..150]);
            assert!(c.abs() < 1e-6);
        }
    }
    assert!(basis.strengths.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn pca_conserves_total_variance() {
    let (x, _) = panel_block(150);
    let basis = pca_fit(&x, weeks(1, 150)).unwrap();
    let total: f64 = x.columns().map(|(_, c)| stats::sample_variance(&c[..150])).sum();
    let scores: f64 = basis.strengths.iter().sum();
    assert!((total - scores).abs() <= 1e-6 * total);
}

#[test]
fn projection_reproduces_training_scores_and_ignores_later_rows() {
    let (x, _) = panel_block(150);
    let basis = pca_fit(&x, weeks(1, 150)).unwrap();
    let scores = project(&x, &basis).unwrap();
    // direct (x - mean) v on the training block
    for (a, v) in basis.rotation.iter().enumerate() {
        for t in [0usize, 77, 149] {
            let row = x.row(t);
            let direct: f64 = row
                .iter()
                .zip(&basis.centers)
                .zip(v)
                .map(|((r, c), w)| (r - c) * w)
                .sum();
            assert!((scores.columns[a][t] - direct).abs() < 1e-10);
        }
    }
    // poison the weeks after training
    let mut poisoned = x.clone();
    for name in x.names().to_vec() {
        for v in &mut poisoned.column_mut(&name).unwrap()[150..] {
            *v = 1e6;
        }
    }
    let basis2 = pca_fit(&poisoned, weeks(1, 150)).unwrap();
    assert_eq!(basis, basis2);
    let scores2 = project(&poisoned, &basis2).unwrap();
    for (a, b) in scores.columns.iter().zip(&scores2.columns) {
        assert_eq!(a[..150], b[..150]);
    }
}

#[test]
fn projection_rejects_a_different_variable_set() {
    let (x, _) = panel_block(150);
    let basis = pca_fit(&x, weeks(1, 150)).unwrap();
    let mut other = x.clone();
    other.insert("extra", vec![0.0; x.n_weeks()]).unwrap();
    assert!(project(&other, &basis).is_err());
    let mut fewer = x.clone();
    let first = x.names()[0].clone();
    fewer.retain(|k, _| k != first);
    assert!(project(&fewer, &basis).is_err());
}

#[test]
fn exact_copy_of_response_is_selected_first() {
    let y = normals(11, 100);
    let mut columns: Vec<Vec<f64>> = (0..5).map(|i| normals(20 + i, 100)).collect();
    columns.push(y.clone());
    let scores = ScoreMatrix {
        method: Reduction::Pca,
        labels: (1..=6).map(|i| format!("pc{i}")).collect(),
        components: (0..6).collect(),
        columns,
    };
    let chosen = select_pca_components(&scores, &y, weeks(1, 100));
    assert_eq!(chosen.n_components(), 5);
    assert_eq!(chosen.components[0], 5);

    let few = scores.select(&[0, 1, 2]);
    assert_eq!(select_pca_components(&few, &y, weeks(1, 100)).n_components(), 3);
}

#[test]
fn pca_selection_matches_brute_force_ranking() {
    let (x, y) = panel_block(150);
    let train = weeks(1, 150);
    let basis = pca_fit(&x, train).unwrap();
    let scores = project(&x, &basis).unwrap();
    let chosen = select_pca_components(&scores, &y, train);
    let mut keyed: Vec<(f64, usize)> = scores
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| (stats::pearson(&c[..150], &y[..150]).unwrap().abs(), i))
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let oracle: Vec<usize> = keyed.iter().take(5).map(|k| k.1).collect();
    assert_eq!(chosen.components, oracle);
}

#[test]
fn ccf_selection_matches_brute_force_scan() {
    let (x, y) = panel_block(150);
    let train = weeks(1, 150);
    let scores = project(&x, &pca_fit(&x, train).unwrap()).unwrap();
    let chosen = select_var_components(&scores, &y, train);
    let mut keyed: Vec<(f64, usize)> = scores
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let best = (1..=8)
                .map(|lag| {
                    // direct ccf at this lag
                    let (xs, ys) = (&c[..150], &y[..150]);
                    let (mx, my) = (stats::mean(xs), stats::mean(ys));
                    let sx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>().sqrt();
                    let sy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>().sqrt();
                    let num: f64 = (lag..150).map(|t| (xs[t - lag] - mx) * (ys[t] - my)).sum();
                    (num / (sx * sy)).abs()
                })
                .fold(0.0, f64::max);
            (best, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let oracle: Vec<usize> = keyed.iter().take(5).map(|k| k.1).collect();
    assert_eq!(chosen.components, oracle);
    assert_eq!(chosen.n_components(), 5);
    // deterministic under fixed input
    assert_eq!(chosen, select_var_components(&scores, &y, train));
}

#[test]
fn pls_finds_a_near_perfect_predictor() {
    let y = normals(3, 120);
    let eps = normals(4, 120);
    // other columns carry no sample covariance with y
    let ym = stats::mean(&y);
    let yc: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let yy: f64 = yc.iter().map(|v| v * v).sum();
    let mut cols: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let c = normals(40 + i, 120);
            let b = c.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>() / yy;
            c.iter().zip(&yc).map(|(a, v)| a - b * v).collect()
        })
        .collect();
    cols.push(y.iter().zip(&eps).map(|(a, e)| a + 1e-4 * e).collect());
    let x = matrix(cols);
    let (z, _) = standardize_columns(&x, weeks(1, 120)).unwrap();
    let (_, scores) = pls_fit(&z, &y, weeks(1, 120), 5).unwrap();
    let r = stats::pearson(&scores.columns[0], &y).unwrap();
    assert!(r.abs() > 0.999);
}

#[test]
fn pls_scores_are_orthogonal_and_first_dominates_columns() {
    let (x, y) = panel_block(150);
    let train = weeks(1, 150);
    let (basis, scores) = pls_fit(&x, &y, train, 5).unwrap();
    assert!(basis.n_components() <= 5);
    let k = scores.n_components();
    for i in 0..k {
        for j in 0..i {
            let dot: f64 = scores.columns[i][..150]
                .iter()
                .zip(&scores.columns[j][..150])
                .map(|(a, b)| a * b)
                .sum();
            assert!(dot.abs() < 1e-6, "{i},{j}: {dot}");
        }
    }
    let first = sample_cov(&scores.columns[0][..150], &y[..150]);
    for (_, c) in x.columns() {
        assert!(first.abs() + 1e-9 >= sample_cov(&c[..150], &y[..150]).abs());
    }
}

#[test]
fn pls_residual_variance_shrinks_with_components() {
    let (x, y) = panel_block(150);
    let train = weeks(1, 150);
    let y_train = &y[..150];
    let mut last = f64::INFINITY;
    for k in 1..=5 {
        let (_, scores) = pls_fit(&x, &y, train, k).unwrap();
        let cols: Vec<Vec<f64>> = scores.columns.iter().map(|c| c[..150].to_vec()).collect();
        // orthogonal scores: regress y on each in turn
        let ym = stats::mean(y_train);
        let mut r: Vec<f64> = y_train.iter().map(|v| v - ym).collect();
        for c in &cols {
            let q = c.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / c.iter().map(|a| a * a).sum::<f64>();
            r.iter_mut().zip(c).for_each(|(ri, ci)| *ri -= q * ci);
        }
        let v = stats::population_variance(&r);
        assert!(v <= last + 1e-9);
        last = v;
    }
}

#[test]
fn pls_rejects_constant_response() {
    let (x, _) = panel_block(150);
    assert!(pls_fit(&x, &vec![3.0; 200], weeks(1, 150), 5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pca_total_variance_is_conserved(seed in 0u64..1000, m in 2usize..7) {
        let cols: Vec<Vec<f64>> = (0..m).map(|j| normals(seed * 31 + j as u64, 40)).collect();
        let x = matrix(cols);
        let basis = pca_fit(&x, weeks(1, 40)).unwrap();
        let total: f64 = x.columns().map(|(_, c)| stats::sample_variance(c)).sum();
        let got: f64 = basis.strengths.iter().sum();
        prop_assert!((total - got).abs() <= 1e-6 * total);
        prop_assert!(basis.strengths.windows(2).all(|w| w[0] >= w[1]));
    }
}
