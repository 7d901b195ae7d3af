//! Moran's I over a state adjacency graph with binary weights, and its
//! one-sided permutation test.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub const MORAN_PERMUTATIONS: usize = 9999;
pub const MORAN_SEED: u64 = 0x6d6f_7261_6e5f_6931;
/// Permuted statistics within this of the observed one count as ties.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub seed: u64,
    /// Always "binary": each undirected edge contributes weight one in
    /// both directions.
    pub weights: String,
}

fn check(values: &[f64], edges: &[(usize, usize)]) -> Result<()> {
    if values.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: values.len(),
        });
    }
    if edges.is_empty() {
        return Err(Error::InvalidInput("Moran's I needs at least one edge".into()));
    }
    if let Some((a, b)) = edges
        .iter()
        .find(|(a, b)| a == b || *a >= values.len() || *b >= values.len())
    {
        return Err(Error::InvalidInput(format!("invalid edge ({a}, {b})")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Moran's I values".into()));
    }
    if stats::population_variance(values) == 0.0 {
        return Err(Error::InvalidInput("Moran's I is undefined for constant values".into()));
    }
    Ok(())
}

fn statistic(values: &[f64], edges: &[(usize, usize)]) -> f64 {
    let n = values.len() as f64;
    let m = stats::mean(values);
    let z: Vec<f64> = values.iter().map(|v| v - m).collect();
    let cross: f64 = edges.iter().map(|&(a, b)| 2.0 * z[a] * z[b]).sum();
    let total_weight = 2.0 * edges.len() as f64;
    let ss: f64 = z.iter().map(|v| v * v).sum();
    (n / total_weight) * cross / ss
}

/// Moran's I for `values[i]` at node `i`; `edges` are undirected.
pub fn morans_i_statistic(values: &[f64], edges: &[(usize, usize)]) -> Result<f64> {
    check(values, edges)?;
    Ok(statistic(values, edges))
}

/// Statistic plus the Monte Carlo p-value
/// `(1 + #{permuted >= observed}) / (permutations + 1)`.
pub fn morans_i(values: &[f64], edges: &[(usize, usize)], permutations: usize, seed: u64) -> Result<MoranTest> {
    check(values, edges)?;
    if permutations == 0 {
        return Err(Error::InvalidInput("at least one permutation is needed".into()));
    }
    let observed = statistic(values, edges);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = values.to_vec();
    let mut at_least = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        if statistic(&shuffled, edges) >= observed - TIE_TOL {
            at_least += 1;
        }
    }
    Ok(MoranTest {
        statistic: observed,
        p_value: (1 + at_least) as f64 / (permutations + 1) as f64,
        permutations,
        seed,
        weights: "binary".into(),
    })
}

/// Exact permutation p-value: the share of all orderings of the values
/// whose statistic reaches the observed one. Limited to ten nodes.
pub fn morans_i_exact_p(values: &[f64], edges: &[(usize, usize)]) -> Result<f64> {
    check(values, edges)?;
    if values.len() > 10 {
        return Err(Error::InvalidInput(
            "exhaustive enumeration is limited to 10 nodes".into(),
        ));
    }
    let observed = statistic(values, edges);
    let mut perm = values.to_vec();
    let (mut hits, mut total) = (0u64, 0u64);
    // Heap's algorithm
    let n = perm.len();
    let mut c = vec![0usize; n];
    let mut visit = |p: &[f64]| {
        total += 1;
        if statistic(p, edges) >= observed - TIE_TOL {
            hits += 1;
        }
    };
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}
