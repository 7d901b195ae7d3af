//! Principal components and partial least squares scores of the exogenous
//! matrix, plus the rules that pick which scores feed the regression and
//! vector-autoregressive models.
//!
//! Every basis is fitted on a training range only. Scores for later weeks
//! are obtained by [`project`] with the stored centres and rotation, so a
//! change to test-range inputs never moves a training-range score.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{ExogenousMatrix, WeekRange};
use crate::error::{Error, Result};
use crate::stats;

/// Scores retained for the downstream models.
pub const MAX_COMPONENTS: usize = 5;

/// Longest lag scanned when ranking scores by cross-correlation.
pub const MAX_CCF_LAG: usize = 8;

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Pca,
    Pls,
}

/// A linear map from the exogenous columns to component scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBasis {
    pub method: Reduction,
    /// Column names in the order the rotation expects them.
    pub names: Vec<String>,
    /// Training-range column means subtracted before projecting.
    pub centers: Vec<f64>,
    /// Projection vectors, one per component, each of length `names.len()`.
    /// For PCA these are the loadings; for PLS the rotation
    /// `W (P'W)^-1` that reproduces the deflated scores in one step.
    pub rotation: Vec<Vec<f64>>,
    /// Score variance (PCA) or score/response covariance (PLS) on the
    /// training range, per component.
    pub strengths: Vec<f64>,
}

/// Component score series, one column per retained component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub method: Reduction,
    pub labels: Vec<String>,
    /// Index of each column in the basis it was projected from.
    pub components: Vec<usize>,
    pub columns: Vec<Vec<f64>>,
}

impl ProjectionBasis {
    pub fn n_components(&self) -> usize {
        self.rotation.len()
    }

    /// Keeps the listed components, in the given order.
    pub fn select(&self, components: &[usize]) -> ProjectionBasis {
        ProjectionBasis {
            method: self.method,
            names: self.names.clone(),
            centers: self.centers.clone(),
            rotation: components.iter().map(|&c| self.rotation[c].clone()).collect(),
            strengths: components.iter().map(|&c| self.strengths[c]).collect(),
        }
    }

    /// Scores of one row of raw (already standardised) column values.
    pub fn project_row(&self, row: &[f64]) -> Vec<f64> {
        debug_assert_eq!(row.len(), self.names.len());
        self.rotation
            .iter()
            .map(|r| {
                row.iter()
                    .zip(&self.centers)
                    .zip(r)
                    .map(|((x, c), w)| (x - c) * w)
                    .sum()
            })
            .collect()
    }

    fn label(&self, component: usize) -> String {
        let prefix = match self.method {
            Reduction::Pca => "pc",
            Reduction::Pls => "pls",
        };
        format!("{prefix}{}", component + 1)
    }
}

impl ScoreMatrix {
    pub fn n_components(&self) -> usize {
        self.columns.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Columns at the given positions (not component indices).
    pub fn select(&self, positions: &[usize]) -> ScoreMatrix {
        ScoreMatrix {
            method: self.method,
            labels: positions.iter().map(|&i| self.labels[i].clone()).collect(),
            components: positions.iter().map(|&i| self.components[i]).collect(),
            columns: positions.iter().map(|&i| self.columns[i].clone()).collect(),
        }
    }

    /// The first `n` weeks of every column.
    pub fn truncated(&self, n: usize) -> ScoreMatrix {
        ScoreMatrix {
            method: self.method,
            labels: self.labels.clone(),
            components: self.components.clone(),
            columns: self.columns.iter().map(|c| c[..n.min(c.len())].to_vec()).collect(),
        }
    }
}

/// Training block as an `n x m` matrix with columns in `names` order.
fn training_block(x: &ExogenousMatrix, train: WeekRange) -> Result<(Vec<String>, DMatrix<f64>)> {
    if x.is_empty() {
        return Err(Error::InvalidInput("no exogenous columns to reduce".into()));
    }
    if train.offsets().end > x.n_weeks() {
        return Err(Error::InvalidInput(format!(
            "training range {train} exceeds the {} available weeks",
            x.n_weeks()
        )));
    }
    let names = x.names().to_vec();
    let rows = train.offsets();
    let n = rows.len();
    let cols: Vec<&[f64]> = names.iter().map(|k| x.column(k).expect("own column")).collect();
    let block = DMatrix::from_fn(n, names.len(), |i, j| cols[j][rows.start + i]);
    Ok((names, block))
}

fn center_columns(block: &mut DMatrix<f64>) -> Vec<f64> {
    let n = block.nrows() as f64;
    let mut centers = Vec::with_capacity(block.ncols());
    for mut col in block.column_iter_mut() {
        let m = col.sum() / n;
        col.add_scalar_mut(-m);
        centers.push(m);
    }
    centers
}

/// Principal components of the centred training block, ordered by
/// decreasing variance. Components with a negligible singular value are
/// dropped, so two identical columns yield a single component.
pub fn pca_fit(x: &ExogenousMatrix, train: WeekRange) -> Result<ProjectionBasis> {
    let (names, mut block) = training_block(x, train)?;
    if block.nrows() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: block.nrows(),
        });
    }
    let centers = center_columns(&mut block);
    let denom = (block.nrows() - 1) as f64;
    let svd = block.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let smax = order.first().map_or(0.0, |&i| s[i]);
    if !(smax > 0.0) {
        return Err(Error::InvalidInput("exogenous training block has rank 0".into()));
    }
    let mut rotation = Vec::new();
    let mut strengths = Vec::new();
    for i in order {
        if s[i] <= RANK_TOL * smax {
            break;
        }
        let mut v: Vec<f64> = v_t.row(i).iter().copied().collect();
        // largest-magnitude entry positive
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        rotation.push(v);
        strengths.push(s[i] * s[i] / denom);
    }
    Ok(ProjectionBasis {
        method: Reduction::Pca,
        names,
        centers,
        rotation,
        strengths,
    })
}

/// PLS1 by NIPALS with deflation. Each weight vector maximises the
/// covariance between the deflated block and the current response
/// residual; fitting stops early once the block has nothing left to
/// explain.
pub fn pls_fit(x: &ExogenousMatrix, y: &[f64], train: WeekRange, k: usize) -> Result<(ProjectionBasis, ScoreMatrix)> {
    let (names, mut block) = training_block(x, train)?;
    let rows = train.offsets();
    if y.len() < rows.end {
        return Err(Error::InvalidInput("response shorter than the training range".into()));
    }
    let n = rows.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let centers = center_columns(&mut block);
    let y_train = &y[rows.clone()];
    let y_mean = stats::mean(y_train);
    let mut resid: Vec<f64> = y_train.iter().map(|v| v - y_mean).collect();
    if resid.iter().all(|v| v.abs() < 1e-12) {
        return Err(Error::InvalidInput("response is constant on the training range".into()));
    }
    let m = names.len();
    let mut weights: Vec<Vec<f64>> = Vec::new();
    let mut x_loadings: Vec<Vec<f64>> = Vec::new();
    let mut strengths = Vec::new();
    let scale0 = block.norm();
    for _ in 0..k.min(m) {
        // w = X'r / |X'r|
        let mut w: Vec<f64> = (0..m)
            .map(|j| block.column(j).iter().zip(&resid).map(|(a, b)| a * b).sum())
            .collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > RANK_TOL * scale0.max(1.0)) || block.norm() <= RANK_TOL * scale0 {
            break;
        }
        w.iter_mut().for_each(|v| *v /= norm);
        let t: Vec<f64> = (0..n).map(|i| (0..m).map(|j| block[(i, j)] * w[j]).sum()).collect();
        let tt: f64 = t.iter().map(|v| v * v).sum();
        if !(tt > 0.0) {
            break;
        }
        let p: Vec<f64> = (0..m)
            .map(|j| block.column(j).iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / tt)
            .collect();
        let q = resid.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / tt;
        for j in 0..m {
            for i in 0..n {
                block[(i, j)] -= t[i] * p[j];
            }
        }
        resid.iter_mut().zip(&t).for_each(|(r, ti)| *r -= q * ti);
        // covariance of the score with the original response
        let cov = t.iter().zip(y_train).map(|(a, b)| a * (b - y_mean)).sum::<f64>() / (n - 1) as f64;
        strengths.push(cov);
        weights.push(w);
        x_loadings.push(p);
    }
    if weights.is_empty() {
        return Err(Error::InvalidInput(
            "exogenous block carries no response covariance".into(),
        ));
    }
    let rotation = pls_rotation(&weights, &x_loadings);
    let basis = ProjectionBasis {
        method: Reduction::Pls,
        names,
        centers,
        rotation,
        strengths,
    };
    let scores = project(x, &basis)?;
    Ok((basis, scores))
}

/// `R = W (P'W)^-1`, so that scores of new rows are `(x - centre) R`.
fn pls_rotation(weights: &[Vec<f64>], loadings: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = weights.len();
    let m = weights[0].len();
    let w = DMatrix::from_fn(m, k, |i, a| weights[a][i]);
    let p = DMatrix::from_fn(m, k, |i, a| loadings[a][i]);
    // P'W is unit upper triangular for NIPALS, hence always invertible
    let ptw = p.transpose() * &w;
    let inv = ptw.try_inverse().expect("P'W is unit triangular");
    let r = w * inv;
    (0..k).map(|a| r.column(a).iter().copied().collect()).collect()
}

/// Scores for every week of `x`. Columns must match the basis by name.
pub fn project(x: &ExogenousMatrix, basis: &ProjectionBasis) -> Result<ScoreMatrix> {
    let cols: Vec<&[f64]> = basis
        .names
        .iter()
        .map(|k| {
            x.column(k)
                .ok_or_else(|| Error::InvalidInput(format!("column {k:?} is missing from the projection input")))
        })
        .collect::<Result<_>>()?;
    if x.n_columns() != basis.names.len() {
        return Err(Error::InvalidInput(format!(
            "projection expects {} columns, got {}",
            basis.names.len(),
            x.n_columns()
        )));
    }
    let n = x.n_weeks();
    let mut columns = vec![vec![0.0; n]; basis.n_components()];
    let mut row = vec![0.0; cols.len()];
    for t in 0..n {
        for (r, c) in row.iter_mut().zip(&cols) {
            *r = c[t];
        }
        for (a, s) in basis.project_row(&row).into_iter().enumerate() {
            columns[a][t] = s;
        }
    }
    Ok(ScoreMatrix {
        method: basis.method,
        labels: (0..basis.n_components()).map(|a| basis.label(a)).collect(),
        components: (0..basis.n_components()).collect(),
        columns,
    })
}

/// Positions of the `MAX_COMPONENTS` largest keys, largest first, ties to
/// the lower position.
fn top_positions(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    idx.truncate(MAX_COMPONENTS);
    idx
}

/// The scores most strongly correlated with `y` on the training range.
pub fn select_pca_components(scores: &ScoreMatrix, y: &[f64], train: WeekRange) -> ScoreMatrix {
    let rows = train.offsets();
    let keys: Vec<f64> = scores
        .columns
        .iter()
        .map(|c| stats::pearson(&c[rows.clone()], &y[rows.clone()]).map_or(0.0, f64::abs))
        .collect();
    scores.select(&top_positions(&keys))
}

/// Largest absolute cross-correlation between a lagged score and `y`.
pub fn max_lagged_correlation(score: &[f64], y: &[f64]) -> f64 {
    (1..=MAX_CCF_LAG)
        .map(|lag| stats::cross_correlation(score, y, lag).abs())
        .fold(0.0, f64::max)
}

/// The scores whose lags 1 to 8 cross-correlate most strongly with `y` on
/// the training range.
pub fn select_var_components(scores: &ScoreMatrix, y: &[f64], train: WeekRange) -> ScoreMatrix {
    let rows = train.offsets();
    let keys: Vec<f64> = scores
        .columns
        .iter()
        .map(|c| max_lagged_correlation(&c[rows.clone()], &y[rows.clone()]))
        .collect();
    scores.select(&top_positions(&keys))
}
