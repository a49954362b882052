use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    pub group_means: Vec<f64>,
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    beta_reg(a, b, x.clamp(0.0, 1.0))
}

/// Upper tail `P(F > f)` of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    regularized_incomplete_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0)
}

/// One-way analysis of variance across `groups`.
pub fn anova_one_way(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::Invalid(format!("anova needs at least 2 groups, got {}", groups.len())));
    }
    if let Some((i, g)) = groups.iter().enumerate().find(|(_, g)| g.len() < 2) {
        return Err(Error::Invalid(format!("group {i} has {} measurements, need at least 2", g.len())));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("anova measurements".into()));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let g = groups.len();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let means: Vec<f64> = groups.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let ss_between: f64 = groups
        .iter()
        .zip(&means)
        .map(|(v, m)| v.len() as f64 * (m - grand).powi(2))
        .sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&means)
        .map(|(v, m)| v.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        .sum();
    if ss_within <= 0.0 {
        return Err(Error::DegenerateInput("zero within-group variance".into()));
    }
    let (df_between, df_within) = (g - 1, n - g);
    let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
    let p = f_survival(f, df_between as f64, df_within as f64);
    Ok(AnovaResult {
        f,
        p,
        df_between,
        df_within,
        ss_between,
        ss_within,
        group_means: means,
    })
}
