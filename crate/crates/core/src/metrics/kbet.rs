//! Per-label kBET acceptance with a chi-square goodness-of-fit test.

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::metrics::neighbors::NeighborGraph;

pub const DEFAULT_ALPHA: f64 = 0.05;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x > 0` (Lanczos approximation with reflection).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;

fn lower_series(a: f64, x: f64) -> f64 {
    let mut sum = 1.0 / a;
    let mut term = sum;
    let mut ap = a;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn upper_fraction(a: f64, x: f64) -> f64 {
    // modified Lentz
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - lower_series(a, x)
    } else {
        upper_fraction(a, x)
    }
}

/// Survival function of the chi-square distribution.
pub fn chi_square_sf(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    gamma_q(df as f64 / 2.0, statistic / 2.0).clamp(0.0, 1.0)
}

/// Pearson statistic of `observed` against `expected_props * sum(observed)`.
/// Categories with zero expected share are left out of the test.
pub fn pearson_statistic(observed: &[usize], expected_props: &[f64]) -> (f64, usize) {
    let total: usize = observed.iter().sum();
    let mut stat = 0.0;
    let mut categories = 0usize;
    for (&o, &p) in observed.iter().zip(expected_props) {
        if p <= 0.0 {
            continue;
        }
        categories += 1;
        let e = p * total as f64;
        stat += (o as f64 - e).powi(2) / e;
    }
    (stat, categories.saturating_sub(1))
}

/// Mean over labels of the share of cells whose neighbourhood batch counts
/// pass the test at level `alpha`.
///
/// Neighbourhoods are the `min(k, n_label - 1)` nearest cells of the same
/// label. Labels with a single batch accept by convention.
pub fn kbet_per_label(
    emb: &EmbeddingMatrix,
    batches: &[usize],
    labels: &[usize],
    k: usize,
    alpha: f64,
) -> Result<f64> {
    let mut distinct = batches.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Validation("kBET needs at least two batches".into()));
    }
    if labels.len() != emb.n_cells() || batches.len() != emb.n_cells() {
        return Err(Error::Dimension(
            "labels/batches do not match embedding".into(),
        ));
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut rates = Vec::new();
    for label in 0..n_labels {
        let cells: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if cells.is_empty() {
            continue;
        }
        let mut present: Vec<usize> = cells.iter().map(|&i| batches[i]).collect();
        present.sort_unstable();
        present.dedup();
        if present.len() < 2 {
            rates.push(1.0);
            continue;
        }
        let local: Vec<usize> = cells
            .iter()
            .map(|&i| present.binary_search(&batches[i]).expect("present batch"))
            .collect();
        let mut props = vec![0.0; present.len()];
        for &b in &local {
            props[b] += 1.0;
        }
        props.iter_mut().for_each(|p| *p /= cells.len() as f64);

        let sub = emb.select(&cells)?;
        let graph = NeighborGraph::build(&sub, k)?;
        let mut accepted = 0usize;
        for list in &graph.neighbors {
            let mut counts = vec![0usize; present.len()];
            for &j in list {
                counts[local[j]] += 1;
            }
            let (stat, df) = pearson_statistic(&counts, &props);
            if chi_square_sf(stat, df) >= alpha {
                accepted += 1;
            }
        }
        rates.push(accepted as f64 / cells.len() as f64);
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_function_reference_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn chi_square_two_df_closed_form() {
        // df = 2: sf(x) = exp(-x/2)
        for x in [0.1, 1.0, 5.0, 30.0] {
            assert!((chi_square_sf(x, 2) - (-x / 2.0).exp()).abs() < 1e-14);
        }
        assert_eq!(chi_square_sf(0.0, 3), 1.0);
    }

    #[test]
    fn one_sided_neighbourhood_statistic() {
        let (stat, df) = pearson_statistic(&[15, 0], &[0.5, 0.5]);
        assert!((stat - 15.0).abs() < 1e-12);
        assert_eq!(df, 1);
        assert!(chi_square_sf(stat, df) < 0.001);
        let (stat, _) = pearson_statistic(&[2, 4], &[1.0 / 3.0, 2.0 / 3.0]);
        assert!(stat.abs() < 1e-12);
    }
}
