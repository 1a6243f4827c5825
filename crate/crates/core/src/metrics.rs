//! Correlation, explained variance and dictionary alignment scores.
//!
//! Multichannel series are compared on their channel-concatenated flattening;
//! [`EvalReport`] additionally carries one entry per channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    if a.len() < 2 {
        return Err(Error::Undefined("correlation needs at least 2 points".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("correlation with a zero-variance series".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2_score(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred)?;
    if truth.is_empty() {
        return Err(Error::Undefined("R² of an empty series".into()));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("R² with constant truth".into()));
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// `‖truth − pred‖ / ‖truth‖` over all entries.
pub fn rmse_relative(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred)?;
    let denom: f64 = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::Undefined("relative error against all-zero truth".into()));
    }
    let num: f64 = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (t - p).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: usize,
    pub pearson_r: Option<f64>,
    pub r2: Option<f64>,
}

/// Pearson r, R² and relative error of a prediction, overall and per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pearson_r: f64,
    pub r2: f64,
    pub rmse: f64,
    pub per_channel: Vec<ChannelReport>,
}

impl EvalReport {
    /// Compares two `channels × samples` matrices.
    pub fn compare(truth: &Matrix, pred: &Matrix) -> Result<Self> {
        if truth.shape() != pred.shape() {
            return Err(Error::dim(format!(
                "truth is {:?}, prediction is {:?}",
                truth.shape(),
                pred.shape()
            )));
        }
        // Row-major flattening concatenates whole channels.
        let flat = |m: &Matrix| -> Vec<f64> { m.transpose().as_slice().to_vec() };
        let (t, p) = (flat(truth), flat(pred));
        let per_channel = (0..truth.nrows())
            .map(|ch| {
                let tr: Vec<f64> = truth.row(ch).iter().copied().collect();
                let pr: Vec<f64> = pred.row(ch).iter().copied().collect();
                ChannelReport {
                    channel: ch,
                    pearson_r: pearson_r(&tr, &pr).ok(),
                    r2: r2_score(&tr, &pr).ok(),
                }
            })
            .collect();
        Ok(Self {
            pearson_r: pearson_r(&t, &p)?,
            r2: r2_score(&t, &p)?,
            rmse: rmse_relative(&t, &p)?,
            per_channel,
        })
    }
}

/// Result of matching learned operators to ground-truth ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `assignment[i]` is the learned operator matched to truth operator `i`.
    pub assignment: Vec<usize>,
    /// Absolute normalized inner product for each truth operator, in `[0, 1]`.
    pub scores: Vec<f64>,
    /// `+1` or `−1` for each truth operator.
    pub signs: Vec<f64>,
}

impl Alignment {
    pub fn mean_score(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    pub fn min_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn cosine(a: &Matrix, b: &Matrix) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

/// Matches learned operators to truth by maximal total `|cos|` similarity.
///
/// The assignment is optimal (Hungarian method); signs are resolved per
/// matched pair.
pub fn align_dictionaries(learned: &[Matrix], truth: &[Matrix]) -> Result<Alignment> {
    if learned.len() != truth.len() {
        return Err(Error::dim(format!(
            "{} learned operators vs {} truth operators",
            learned.len(),
            truth.len()
        )));
    }
    for (i, (l, t)) in learned.iter().zip(truth).enumerate() {
        if l.shape() != t.shape() || l.shape() != truth[0].shape() {
            return Err(Error::dim(format!("operator {i} shape mismatch")));
        }
    }
    let n = truth.len();
    let sim: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| learned.iter().map(|l| cosine(l, t)).collect())
        .collect();
    let weights: Vec<Vec<f64>> = sim.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect();
    let assignment = max_weight_assignment(&weights);
    let scores = (0..n).map(|i| weights[i][assignment[i]]).collect();
    let signs = (0..n)
        .map(|i| if sim[i][assignment[i]] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    Ok(Alignment {
        assignment,
        scores,
        signs,
    })
}

/// Maximum-weight perfect matching on a square weight table.
fn max_weight_assignment(w: &[Vec<f64>]) -> Vec<usize> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    // Hungarian algorithm (potentials form) on costs = −weights.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = -w[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}
