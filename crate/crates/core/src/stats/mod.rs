//! Effect estimation on the outcome table.
//!
//! Random-effects logistic and frailty Cox models are approximated by
//! fixed-effects fits with persona-clustered sandwich standard errors. Tests
//! are Wald tests against the standard normal.

mod baseline;
mod cox;
mod design;
mod ks;
mod linalg;
mod lmm;
mod logistic;
mod mediation;
mod paired;

pub mod synthetic;

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result, StatsError};

pub use baseline::{baseline_validation, BaselineAssociation, BaselineReport, Measure as BaselineMeasure};
pub use cox::{fit_cox, fit_cox_matrix, CoxOptions};
pub use design::{DesignMatrix, DesignSpec, Moderator, Term, COVARIATES, INTERCEPT};
pub use ks::{ks_uniform, permutation_null, KsResult, PermutationNull};
pub use linalg::collinear_columns;
pub use lmm::{fit_lmm, fit_lmm_matrix, LmmMethod, LmmOptions};
pub use logistic::{fit_logistic, fit_logistic_matrix, LogisticOptions};
pub use mediation::{mediation, mediation_xy, Mediation};
pub use paired::{efficacy, paired_effects, Contrast, PairedEffect};

/// Gradient tolerance shared by the iterative fitters.
pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ols,
    Lmm,
    Logistic,
    Cox,
}

/// How standard errors were computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeKind {
    ModelBased,
    ClusterRobust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub statistic: f64,
    pub p_value: f64,
}

impl TermEstimate {
    pub fn new(term: impl Into<String>, estimate: f64, se: f64) -> Self {
        let statistic = if se > 0.0 {
            estimate / se
        } else if estimate == 0.0 {
            0.0
        } else {
            estimate.signum() * f64::INFINITY
        };
        TermEstimate {
            term: term.into(),
            estimate,
            se,
            statistic,
            p_value: two_sided_p(statistic),
        }
    }

    /// Odds or hazard ratio: `exp(estimate)`.
    pub fn ratio(&self) -> f64 {
        self.estimate.exp()
    }
}

/// Two-sided standard-normal p-value.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return 1.0;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub persona: f64,
    pub residual: f64,
    /// Ratio persona / residual.
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub outcome: String,
    pub n_obs: usize,
    pub n_groups: usize,
    pub terms: Vec<TermEstimate>,
    pub variance: Option<VarianceComponents>,
    pub log_likelihood: f64,
    pub convergence: Convergence,
    pub se_kind: SeKind,
}

impl FitResult {
    pub fn term(&self, name: &str) -> Option<&TermEstimate> {
        self.terms.iter().find(|t| t.term == name)
    }

    /// Looks up a term, failing with a data error naming it.
    pub fn require(&self, name: &str) -> Result<&TermEstimate> {
        self.term(name)
            .ok_or_else(|| Error::Data(format!("fit for {} has no term {name}", self.outcome)))
    }

    pub fn estimates(&self) -> DVector<f64> {
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|t| t.estimate))
    }
}

/// Writes `model,outcome,term,estimate,se,statistic,p_value` rows.
pub fn write_fits_csv<W: Write>(w: W, fits: &[FitResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "outcome", "term", "estimate", "se", "statistic", "p_value"])?;
    for f in fits {
        let model = serde_json::to_value(f.model)?;
        let model = model.as_str().unwrap_or_default();
        for t in &f.terms {
            out.write_record([
                model,
                &f.outcome,
                &t.term,
                &t.estimate.to_string(),
                &t.se.to_string(),
                &t.statistic.to_string(),
                &t.p_value.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<fits csv>", e))?;
    Ok(())
}

/// Ordinary least squares with classical standard errors.
pub fn fit_ols(d: &DesignMatrix, outcome: &str) -> Result<FitResult> {
    let (n, p) = (d.n_obs(), d.x.ncols());
    if n <= p {
        return Err(StatsError::EmptySample(format!("{n} observations for {p} terms")).into());
    }
    linalg::check_full_rank(&d.x, &d.names)?;
    let xtx = d.x.transpose() * &d.x;
    let inv = linalg::spd_inverse(&xtx, &d.names)?;
    let beta = &inv * (d.x.transpose() * &d.y);
    let resid = &d.y - &d.x * &beta;
    let rss = resid.norm_squared();
    let sigma2 = rss / (n - p) as f64;
    let terms = d
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| TermEstimate::new(name, beta[j], (sigma2 * inv[(j, j)]).max(0.0).sqrt()))
        .collect();
    let s2_ml = (rss / n as f64).max(f64::MIN_POSITIVE);
    Ok(FitResult {
        model: ModelKind::Ols,
        outcome: outcome.to_string(),
        n_obs: n,
        n_groups: d.n_groups(),
        terms,
        variance: Some(VarianceComponents {
            persona: 0.0,
            residual: sigma2,
            rho: 0.0,
        }),
        log_likelihood: -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * s2_ml).ln() + 1.0),
        convergence: Convergence {
            iterations: 0,
            gradient_norm: (d.x.transpose() * resid).amax(),
        },
        se_kind: SeKind::ModelBased,
    })
}
