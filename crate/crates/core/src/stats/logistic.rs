//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use super::design::{DesignMatrix, DesignSpec, INTERCEPT};
use super::linalg::{check_full_rank, cluster_sandwich, spd_inverse, spd_solve};
use super::{Convergence, FitResult, ModelKind, SeKind, TermEstimate, GRAD_TOL, MAX_ITER};
use crate::error::{Result, StatsError};
use crate::outcomes::OutcomeTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Persona-clustered sandwich errors instead of model-based ones.
    pub cluster_robust: bool,
    /// A coefficient times its covariate range beyond this is treated as
    /// divergence caused by separation.
    pub divergence_bound: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iter: MAX_ITER,
            tol: GRAD_TOL,
            cluster_robust: true,
            divergence_bound: 15.0,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter().zip(y.iter()).map(|(e, yi)| yi * e - softplus(*e)).sum()
}

/// Whether the Newton decrement `½ gᵀH⁻¹g` is below the rounding scale of
/// the log-likelihood.
pub(crate) fn at_resolution(grad: &DVector<f64>, step: &DVector<f64>, ll: f64) -> bool {
    0.5 * grad.dot(step) <= 1e-12 * (1.0 + ll.abs())
}

pub(crate) fn column_ranges(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter().map(|c| c.max() - c.min()).collect()
}

pub(crate) struct Irls {
    pub beta: DVector<f64>,
    pub history: Vec<f64>,
    pub gradient_norm: f64,
    pub converged: bool,
}

pub(crate) fn irls(d: &DesignMatrix, opts: &LogisticOptions) -> Result<Irls, StatsError> {
    let (n, p) = (d.n_obs(), d.x.ncols());
    let mut beta = DVector::zeros(p);
    let mut ll = log_likelihood(&d.x, &d.y, &beta);
    let mut history = vec![ll];
    let mut gradient_norm = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let eta = &d.x * &beta;
        let mu = eta.map(sigmoid);
        let grad = d.x.transpose() * (&d.y - &mu);
        gradient_norm = grad.amax();
        if gradient_norm < opts.tol {
            return Ok(Irls { beta, history, gradient_norm, converged: true });
        }
        let mut xw = d.x.clone();
        for i in 0..n {
            let w = mu[i] * (1.0 - mu[i]);
            xw.row_mut(i).scale_mut(w);
        }
        let info = d.x.transpose() * xw;
        let step = match spd_solve(&info, &grad, &d.names) {
            Ok(s) => s,
            // Vanishing weights: the fit has run off to infinity.
            Err(_) => break,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let cand_ll = log_likelihood(&d.x, &d.y, &cand);
            if cand_ll >= ll {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No step improves the likelihood in floating point. That is
            // convergence when the predicted gain is below its resolution.
            let converged = at_resolution(&grad, &step, ll);
            return Ok(Irls { beta, history, gradient_norm, converged });
        }
        history.push(ll);
    }
    let eta = &d.x * &beta;
    let grad = d.x.transpose() * (&d.y - eta.map(sigmoid));
    gradient_norm = gradient_norm.min(grad.amax());
    Ok(Irls {
        converged: grad.amax() < opts.tol,
        beta,
        history,
        gradient_norm,
    })
}

pub fn fit_logistic(spec: &DesignSpec, table: &OutcomeTable) -> Result<FitResult> {
    let d = DesignMatrix::build(spec, table, true)?;
    fit_logistic_matrix(&d, spec.outcome.name(), &LogisticOptions::default())
}

pub fn fit_logistic_matrix(d: &DesignMatrix, outcome: &str, opts: &LogisticOptions) -> Result<FitResult> {
    let (n, p) = (d.n_obs(), d.x.ncols());
    if d.y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(StatsError::OneClass(format!("{outcome} is not binary")).into());
    }
    let ones = d.y.sum();
    if ones == 0.0 || ones == n as f64 {
        return Err(StatsError::OneClass(outcome.to_string()).into());
    }
    check_full_rank(&d.x, &d.names)?;
    let fit = irls(d, opts)?;
    let ranges = column_ranges(&d.x);
    let diverged = d
        .names
        .iter()
        .enumerate()
        .filter(|(j, name)| *name != INTERCEPT && fit.beta[*j].abs() * ranges[*j] > opts.divergence_bound)
        .max_by(|a, b| fit.beta[a.0].abs().total_cmp(&fit.beta[b.0].abs()));
    if let Some((_, name)) = diverged {
        return Err(StatsError::Separation(format!("{outcome}: coefficient for {name} diverges")).into());
    }
    if !fit.converged {
        return Err(StatsError::NonConvergence {
            iterations: fit.history.len() - 1,
            gradient_norm: fit.gradient_norm,
        }
        .into());
    }
    let mu = (&d.x * &fit.beta).map(sigmoid);
    let mut xw = d.x.clone();
    for i in 0..n {
        xw.row_mut(i).scale_mut(mu[i] * (1.0 - mu[i]));
    }
    let bread = spd_inverse(&(d.x.transpose() * xw), &d.names)?;
    let cov = if opts.cluster_robust {
        let (gidx, ng) = d.group_index();
        let mut scores = vec![DVector::zeros(p); ng];
        for i in 0..n {
            scores[gidx[i]].axpy(d.y[i] - mu[i], &d.x.row(i).transpose(), 1.0);
        }
        cluster_sandwich(&bread, &scores)
    } else {
        bread
    };
    Ok(FitResult {
        model: ModelKind::Logistic,
        outcome: outcome.to_string(),
        n_obs: n,
        n_groups: d.n_groups(),
        terms: d
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| TermEstimate::new(name, fit.beta[j], cov[(j, j)].max(0.0).sqrt()))
            .collect(),
        variance: None,
        log_likelihood: *fit.history.last().expect("history starts non-empty"),
        convergence: Convergence {
            iterations: fit.history.len() - 1,
            gradient_norm: fit.gradient_norm,
        },
        se_kind: if opts.cluster_robust {
            SeKind::ClusterRobust
        } else {
            SeKind::ModelBased
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcomes::Outcome;
    use crate::stats::synthetic::{synthetic_table, Gaussian};
    use crate::stats::Term;
    use crate::Error;
    use proptest::prelude::*;

    fn design(x: &[f64], y: &[f64]) -> DesignMatrix {
        let n = x.len();
        let mut data = Vec::new();
        for v in x {
            data.extend([1.0, *v]);
        }
        DesignMatrix::from_parts(
            vec![INTERCEPT.into(), "x".into()],
            DMatrix::from_row_slice(n, 2, &data),
            DVector::from_column_slice(y),
            (0..n as u64).collect(),
        )
    }

    #[test]
    fn intercept_only_half() {
        let d = DesignMatrix::from_parts(
            vec![INTERCEPT.into()],
            DMatrix::from_element(6, 1, 1.0),
            DVector::from_vec(vec![0., 1., 0., 1., 1., 0.]),
            (0..6).collect(),
        );
        let f = fit_logistic_matrix(&d, "y", &LogisticOptions::default()).unwrap();
        assert!(f.terms[0].estimate.abs() < 1e-12);
    }

    /// Brute-force grid search over the two coefficients: a coarse pass
    /// locates the basin, a 1e-3 pass refines it.
    fn grid_argmax(d: &DesignMatrix) -> (f64, f64) {
        let ll = |a: f64, b: f64| log_likelihood(&d.x, &d.y, &DVector::from_vec(vec![a, b]));
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in -200..=200 {
            for j in -200..=200 {
                let (a, b) = (i as f64 * 0.05, j as f64 * 0.05);
                let v = ll(a, b);
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        let (_, a0, b0) = best;
        for i in -100..=100 {
            for j in -100..=100 {
                let (a, b) = (a0 + i as f64 * 1e-3, b0 + j as f64 * 1e-3);
                let v = ll(a, b);
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn six_point_grid_oracle() {
        let d = design(&[0., 1., 2., 3., 4., 5.], &[0., 0., 1., 0., 1., 1.]);
        let f = fit_logistic_matrix(&d, "y", &LogisticOptions::default()).unwrap();
        let (a, b) = grid_argmax(&d);
        assert!((f.terms[0].estimate - a).abs() < 2e-3, "{} vs {a}", f.terms[0].estimate);
        assert!((f.terms[1].estimate - b).abs() < 2e-3, "{} vs {b}", f.terms[1].estimate);
    }

    #[test]
    fn separation_is_diagnosed() {
        let d = design(&[0., 1., 2., 3., 4., 5.], &[0., 0., 0., 1., 1., 1.]);
        assert!(matches!(
            fit_logistic_matrix(&d, "y", &LogisticOptions::default()),
            Err(Error::Stats(StatsError::Separation(_)))
        ));
    }

    #[test]
    fn one_class_rejected() {
        let d = design(&[0., 1., 2.], &[1., 1., 1.]);
        assert!(matches!(
            fit_logistic_matrix(&d, "y", &LogisticOptions::default()),
            Err(Error::Stats(StatsError::OneClass(_)))
        ));
    }

    #[test]
    fn recovers_odds_ratio_on_table() {
        let mut g = Gaussian::new(2);
        let t = synthetic_table(3000, 2, |_, arm, r| {
            let eta = -0.5 + if arm.is_ros() { -0.22 } else { 0.0 };
            r.chronic = Some(u8::from(g.uniform() < sigmoid(eta)));
        });
        let f = fit_logistic(&DesignSpec::new(Outcome::Chronic, vec![Term::Ros]), &t).unwrap();
        let ros = f.require("ros").unwrap();
        assert!((ros.estimate + 0.22).abs() < 4.0 * ros.se, "{ros:?}");
        assert_eq!(f.se_kind, SeKind::ClusterRobust);
        assert_eq!(ros.ratio(), ros.estimate.exp());
    }

    proptest! {
        #[test]
        fn likelihood_never_decreases(ys in proptest::collection::vec(0u8..2, 12), xs in proptest::collection::vec(-3.0f64..3.0, 12)) {
            let y: Vec<f64> = ys.iter().map(|v| f64::from(*v)).collect();
            let d = design(&xs, &y);
            let fit = irls(&d, &LogisticOptions::default()).unwrap();
            for w in fit.history.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }
    }
}
