use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Scores with one row per trial and one column per method. Lower is better.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTable {
    methods: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn new(methods: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if methods.len() < 2 {
            return Err(Error::Table(format!("need at least 2 methods, got {}", methods.len())));
        }
        if rows.len() < 2 {
            return Err(Error::Table(format!("need at least 2 rows, got {}", rows.len())));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != methods.len()) {
            return Err(Error::Table(format!("row {i} has {} entries for {} methods", rows[i].len(), methods.len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Table("scores must be finite".into()));
        }
        Ok(Self { methods, rows })
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.methods.len()
    }

    /// Average within-row rank of each column.
    pub fn mean_ranks(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_cols()];
        for row in &self.rows {
            for (s, r) in sums.iter_mut().zip(rank_row(row)) {
                *s += r;
            }
        }
        sums.iter().map(|s| s / self.n_rows() as f64).collect()
    }
}

/// Ascending ranks starting at 1; ties share their average rank.
pub fn rank_row(row: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && row[idx[j + 1]] == row[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub mean_ranks: Vec<f64>,
    /// Every row is constant, so the ranks carry no information.
    pub degenerate: bool,
}

/// Friedman's test with the chi-square approximation (`c − 1` dof).
pub fn friedman_test(table: &ScoreTable) -> FriedmanResult {
    let n = table.n_rows() as f64;
    let c = table.n_cols() as f64;
    let mean_ranks = table.mean_ranks();
    let degenerate = table.rows().iter().all(|r| r.iter().all(|v| *v == r[0]));
    let centre = (c + 1.0) / 2.0;
    let spread: f64 = mean_ranks.iter().map(|r| (r - centre).powi(2)).sum();
    let statistic = 12.0 * n / (c * (c + 1.0)) * spread;
    let chi2 = ChiSquared::new(c - 1.0).expect("at least one degree of freedom");
    let p_value = if statistic <= 0.0 { 1.0 } else { chi2.sf(statistic) };
    FriedmanResult { statistic, p_value, mean_ranks, degenerate }
}

/// Two-sided Nemenyi critical values `q_α = q_range(α; c, ∞)/√2`.
const NEMENYI_ALPHAS: [f64; 3] = [0.05, 0.01, 0.001];
const NEMENYI_Q: [[f64; 9]; 3] = [
    [1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320, 3.030878, 3.101730, 3.163684],
    [2.575829, 2.913494, 3.113250, 3.254686, 3.363740, 3.452213, 3.526471, 3.590339, 3.646292],
    [3.290527, 3.580402, 3.753891, 3.877599, 3.973468, 4.051548, 4.117291, 4.173985, 4.223766],
];

/// Tabulated critical value for `groups ∈ 2..=10` and `α ∈ {0.05, 0.01, 0.001}`.
pub fn nemenyi_q(groups: usize, alpha: f64) -> Result<f64> {
    let row = NEMENYI_ALPHAS.iter().position(|a| (a - alpha).abs() < 1e-12);
    match (row, groups) {
        (Some(r), 2..=10) => Ok(NEMENYI_Q[r][groups - 2]),
        _ => Err(Error::TableLookup { groups, alpha }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NemenyiResult {
    pub alpha: f64,
    pub q: f64,
    pub critical_difference: f64,
    pub mean_ranks: Vec<f64>,
    /// `significant[i][j]` iff `|R̄_i − R̄_j| ≥ CD`.
    pub significant: Vec<Vec<bool>>,
}

impl NemenyiResult {
    pub fn separates(&self, i: usize, j: usize) -> bool {
        self.significant[i][j]
    }
}

pub fn nemenyi_test(table: &ScoreTable, alpha: f64) -> Result<NemenyiResult> {
    let c = table.n_cols();
    let n = table.n_rows() as f64;
    let q = nemenyi_q(c, alpha)?;
    let cd = q * ((c * (c + 1)) as f64 / (6.0 * n)).sqrt();
    let mean_ranks = table.mean_ranks();
    let significant = (0..c)
        .map(|i| (0..c).map(|j| i != j && (mean_ranks[i] - mean_ranks[j]).abs() >= cd).collect())
        .collect();
    Ok(NemenyiResult { alpha, q, critical_difference: cd, mean_ranks, significant })
}
