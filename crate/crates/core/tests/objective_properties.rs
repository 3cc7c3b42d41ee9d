mod common;

use common::*;
use fedfilm::objective::{client_local_update, local_gradient, local_loss, ClientState};
use fedfilm::{identity_adapter, run_federated_fit, AggregationMode, TrainConfig};
use proptest::prelude::*;

const GRID: [f64; 3] = [0.0, 1e-3, 0.5];

fn problem() -> impl Strategy<
    Value = (
        Vec<Vec<f64>>,
        Vec<Vec<f64>>,
        Vec<Vec<f64>>,
        usize,
        Vec<f64>,
        Vec<f64>,
    ),
> {
    (1usize..=8, 1usize..=32, 1usize..=4).prop_flat_map(|(d, m, b)| {
        let v = move |n: usize, s: f64| prop::collection::vec(prop::collection::vec(-s..s, d), n);
        (
            v(m, 3.0),
            v(b, 2.0),
            v(b, 2.0),
            0..b,
            prop::collection::vec(-2.0..2.0f64, d),
            prop::collection::vec(-2.0..2.0f64, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_central_differences(
        (cells, g_rows, b_rows, row, gamma, beta) in problem(),
        mu_i in 0usize..3,
        lambda_i in 0usize..3,
    ) {
        let (mu, lambda) = (GRID[mu_i], GRID[lambda_i]);
        let snapshot = adapter(&g_rows, &b_rows);
        let views: Vec<&[f64]> = cells.iter().map(Vec::as_slice).collect();
        let (gg, gb) = local_gradient(&views, &gamma, &beta, &snapshot, row, mu, lambda).unwrap();
        let f = |g: &[f64], b: &[f64]| local_loss(&views, g, b, &snapshot, row, mu, lambda).unwrap();
        let h = 1e-5;
        for j in 0..gamma.len() {
            let (mut p, mut m) = (gamma.clone(), gamma.clone());
            p[j] += h;
            m[j] -= h;
            let numeric = (f(&p, &beta) - f(&m, &beta)) / (2.0 * h);
            prop_assert!((numeric - gg[j]).abs() <= 1e-5 * gg[j].abs().max(1.0), "dgamma[{}]: {} vs {}", j, gg[j], numeric);
            let (mut p, mut m) = (beta.clone(), beta.clone());
            p[j] += h;
            m[j] -= h;
            let numeric = (f(&gamma, &p) - f(&gamma, &m)) / (2.0 * h);
            prop_assert!((numeric - gb[j]).abs() <= 1e-5 * gb[j].abs().max(1.0), "dbeta[{}]: {} vs {}", j, gb[j], numeric);
        }
    }

    #[test]
    fn loss_is_finite_and_non_negative(
        (cells, g_rows, b_rows, row, gamma, beta) in problem(),
        mu_i in 0usize..3,
        lambda_i in 0usize..3,
    ) {
        let snapshot = adapter(&g_rows, &b_rows);
        let views: Vec<&[f64]> = cells.iter().map(Vec::as_slice).collect();
        let loss = local_loss(&views, &gamma, &beta, &snapshot, row, GRID[mu_i], GRID[lambda_i]).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }

    #[test]
    fn proximal_drift_is_monotone_in_mu((cells, g_rows, b_rows, _, _, _) in problem()) {
        let mut last = f64::INFINITY;
        for mu in [0.0, 1e-3, 1e-1, 10.0] {
            let (g, b) = closed_form_minimizer(&cells, &g_rows[0], &b_rows[0], mu, 1e-3);
            let dist = g.iter().zip(&g_rows[0]).chain(b.iter().zip(&b_rows[0]))
                .map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dist <= last);
            last = dist;
        }
    }
}

#[test]
fn closed_form_oracle_is_stationary() {
    let mut r = rng(11);
    let cells = random_rows(&mut r, 20, 3, 2.0);
    let snapshot = adapter(&[vec![1.1, 0.9, 1.0]], &[vec![0.2, -0.1, 0.3]]);
    let (mu, lambda) = (0.3, 0.05);
    let (g, b) = closed_form_minimizer(&cells, snapshot.gamma(), snapshot.beta(), mu, lambda);
    let views: Vec<&[f64]> = cells.iter().map(Vec::as_slice).collect();
    let (gg, gb) = local_gradient(&views, &g, &b, &snapshot, 0, mu, lambda).unwrap();
    assert!(
        gg.iter().chain(&gb).all(|v| v.abs() < 1e-12),
        "{gg:?} {gb:?}"
    );
}

#[test]
fn single_batch_pipeline_reaches_least_squares_solution() {
    let mut r = rng(12);
    let cells: Vec<Vec<f64>> = (0..80)
        .map(|_| {
            vec![
                1.0 + random_rows(&mut r, 1, 1, 1.0)[0][0],
                -0.5 + random_rows(&mut r, 1, 1, 2.0)[0][0],
            ]
        })
        .collect();
    let emb = matrix(&cells);
    let meta = metadata(&vec![0; cells.len()], None);
    // start away from the solution so the check is not vacuous
    let init = adapter(&[vec![1.3, 0.7]], &[vec![-0.4, 0.5]]);
    let cfg = TrainConfig {
        mu: 0.0,
        lambda: 0.0,
        learning_rate: 1e-2,
        local_epochs: 500,
        rounds: 1,
        minibatch_size: cells.len(),
        train_fraction: 1.0,
        ..TrainConfig::default()
    };
    let fit = run_federated_fit(&emb, &meta, &cfg, init.clone()).unwrap();
    let (g, b) = closed_form_minimizer(&cells, init.gamma(), init.beta(), 0.0, 0.0);
    for j in 0..2 {
        assert!((fit.adapter.gamma()[j] - g[j]).abs() < 1e-3);
        assert!((fit.adapter.beta()[j] - b[j]).abs() < 1e-3);
    }
}

#[test]
fn single_batch_modes_agree() {
    let mut r = rng(13);
    let cells = random_rows(&mut r, 50, 3, 2.0);
    let emb = matrix(&cells);
    let meta = metadata(&vec![0; 50], None);
    let fit = |mode| {
        let cfg = TrainConfig {
            aggregation_mode: mode,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        run_federated_fit(&emb, &meta, &cfg, identity_adapter(&names(1), 3).unwrap())
            .unwrap()
            .adapter
    };
    assert_eq!(
        fit(AggregationMode::FullTable),
        fit(AggregationMode::RowRestricted)
    );
}

#[test]
fn local_update_is_a_function_of_its_inputs() {
    let mut r = rng(14);
    let cells = random_rows(&mut r, 600, 4, 2.0);
    let emb = matrix(&cells);
    let all: Vec<usize> = (0..600).collect();
    let cfg = TrainConfig::default();
    let snapshot = identity_adapter(&names(1), 4).unwrap();
    let run = |client_index: usize, round: usize| {
        let mut state = ClientState::new("b0".into(), 0, client_index, &all, 4, &cfg).unwrap();
        let u = client_local_update(&mut state, &emb, &snapshot, &cfg, round).unwrap();
        (u.gamma, u.beta, u.train_loss)
    };
    assert_eq!(run(0, 0), run(0, 0));
    // a different shuffle stream visits mini-batches in a different order
    assert_ne!(run(0, 0), run(0, 1));
    assert_ne!(run(0, 0), run(1, 0));
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let mut r = rng(15);
    let cells = random_rows(&mut r, 30, 2, 2.0);
    let emb = matrix(&cells);
    let meta = metadata(&(0..30).map(|i| i % 3).collect::<Vec<_>>(), None);
    let init = adapter(
        &[vec![1.0, 2.0], vec![0.5, 1.5], vec![1.0, 1.0]],
        &[vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.25, 0.5]],
    );
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let fit = run_federated_fit(&emb, &meta, &cfg, init.clone()).unwrap();
    assert_eq!(fit.adapter, init);
    assert_eq!(fit.log.records().count(), 7 * 3);
}
