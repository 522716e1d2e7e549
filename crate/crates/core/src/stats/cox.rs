//! Cox proportional hazards with Breslow ties.

use nalgebra::{DMatrix, DVector};

use super::design::{DesignMatrix, DesignSpec};
use super::linalg::{check_full_rank, cluster_sandwich};
use super::logistic::{at_resolution, column_ranges};
use super::{Convergence, FitResult, ModelKind, SeKind, TermEstimate, GRAD_TOL, MAX_ITER};
use crate::error::{Error, Result, StatsError};
use crate::outcomes::{Outcome, OutcomeTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub cluster_robust: bool,
    /// A coefficient times its covariate range beyond this is treated as a
    /// monotone likelihood.
    pub divergence_bound: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            max_iter: MAX_ITER,
            tol: GRAD_TOL,
            cluster_robust: true,
            divergence_bound: 10.0,
        }
    }
}

/// Risk-set sums at one distinct event time.
struct EventTime {
    time: f64,
    deaths: f64,
    s0: f64,
    s1: DVector<f64>,
}

struct PartialLik {
    ll: f64,
    grad: DVector<f64>,
    info: DMatrix<f64>,
    times: Vec<EventTime>,
}

fn partial_likelihood(d: &DesignMatrix, beta: &DVector<f64>, order: &[usize]) -> PartialLik {
    let p = d.x.ncols();
    let eta = &d.x * beta;
    let shift = eta.max();
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut times = Vec::new();
    // `order` sorts subjects by descending time; risk sets grow as we go.
    let mut k = 0;
    while k < order.len() {
        let t = d.y[order[k]];
        let mut deaths = 0.0;
        let mut xsum = DVector::zeros(p);
        let mut etasum = 0.0;
        while k < order.len() && d.y[order[k]] == t {
            let i = order[k];
            let xi = d.x.row(i).transpose();
            let w = (eta[i] - shift).exp();
            s0 += w;
            s1.axpy(w, &xi, 1.0);
            s2.ger(w, &xi, &xi, 1.0);
            if d.status[i] {
                deaths += 1.0;
                xsum += &xi;
                etasum += eta[i] - shift;
            }
            k += 1;
        }
        if deaths > 0.0 {
            let xbar = &s1 / s0;
            ll += etasum - deaths * s0.ln();
            grad += xsum - &xbar * deaths;
            info += (&s2 / s0 - &xbar * xbar.transpose()) * deaths;
            times.push(EventTime {
                time: t,
                deaths,
                s0,
                s1: s1.clone(),
            });
        }
    }
    PartialLik { ll, grad, info, times }
}

/// Per-subject score residuals, rescaled to the unshifted linear predictor.
fn score_residuals(d: &DesignMatrix, beta: &DVector<f64>, times: &[EventTime]) -> Vec<DVector<f64>> {
    let p = d.x.ncols();
    let eta = &d.x * beta;
    let shift = eta.max();
    // Ascending event times with cumulative hazard increments.
    let mut asc: Vec<&EventTime> = times.iter().collect();
    asc.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut cum_h0 = Vec::with_capacity(asc.len());
    let mut cum_h1 = Vec::with_capacity(asc.len());
    let (mut h0, mut h1) = (0.0, DVector::zeros(p));
    for e in &asc {
        h0 += e.deaths / e.s0;
        h1 += &e.s1 * (e.deaths / (e.s0 * e.s0));
        cum_h0.push(h0);
        cum_h1.push(h1.clone());
    }
    (0..d.n_obs())
        .map(|i| {
            let xi = d.x.row(i).transpose();
            let ti = d.y[i];
            let idx = asc.partition_point(|e| e.time <= ti);
            let mut r = DVector::zeros(p);
            if d.status[i] {
                let e = asc[idx - 1];
                r += &xi - &e.s1 / e.s0;
            }
            if idx > 0 {
                let w = (eta[i] - shift).exp();
                r -= (&xi * cum_h0[idx - 1] - &cum_h1[idx - 1]) * w;
            }
            r
        })
        .collect()
}

pub fn fit_cox(spec: &DesignSpec, table: &OutcomeTable) -> Result<FitResult> {
    if spec.outcome != Outcome::Mortality {
        return Err(Error::Usage(format!(
            "Cox model needs the mortality outcome, got {}",
            spec.outcome.name()
        )));
    }
    let d = DesignMatrix::build(spec, table, false)?;
    fit_cox_matrix(&d, spec.outcome.name(), &CoxOptions::default())
}

/// Fits on a design whose `y` holds event or censoring times and whose
/// `status` marks events. The design must not contain an intercept.
pub fn fit_cox_matrix(d: &DesignMatrix, outcome: &str, opts: &CoxOptions) -> Result<FitResult> {
    let (n, p) = (d.n_obs(), d.x.ncols());
    if !d.status.iter().any(|s| *s) {
        return Err(StatsError::NoEvents.into());
    }
    check_full_rank(&d.x, &d.names)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| d.y[*b].total_cmp(&d.y[*a]));

    let mut beta = DVector::zeros(p);
    let mut cur = partial_likelihood(d, &beta, &order);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        if cur.grad.amax() < opts.tol {
            converged = true;
            break;
        }
        let Some(chol) = cur.info.clone().cholesky() else { break };
        let step = chol.solve(&cur.grad);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let pl = partial_likelihood(d, &cand, &order);
            if pl.ll >= cur.ll {
                next = Some((cand, pl));
                break;
            }
            t *= 0.5;
        }
        let Some((b, pl)) = next else {
            converged = at_resolution(&cur.grad, &step, cur.ll);
            break;
        };
        beta = b;
        cur = pl;
        iterations += 1;
    }
    if !converged && cur.grad.amax() < opts.tol {
        converged = true;
    }
    let ranges = column_ranges(&d.x);
    if let Some((_, name)) = d
        .names
        .iter()
        .enumerate()
        .filter(|(j, _)| beta[*j].abs() * ranges[*j] > opts.divergence_bound)
        .max_by(|a, b| beta[a.0].abs().total_cmp(&beta[b.0].abs()))
    {
        return Err(StatsError::MonotoneLikelihood { term: name.clone() }.into());
    }
    if !converged {
        return Err(StatsError::NonConvergence {
            iterations,
            gradient_norm: cur.grad.amax(),
        }
        .into());
    }
    let bread = cur.info.clone().cholesky().map(|c| c.inverse());
    let ses: Vec<f64> = match bread {
        Some(bread) => {
            let cov = if opts.cluster_robust {
                let (gidx, ng) = d.group_index();
                let mut scores = vec![DVector::zeros(p); ng];
                for (i, r) in score_residuals(d, &beta, &cur.times).into_iter().enumerate() {
                    scores[gidx[i]] += r;
                }
                cluster_sandwich(&bread, &scores)
            } else {
                bread
            };
            (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect()
        }
        // No information about some coefficient (e.g. a covariate that is
        // constant over every risk set).
        None => (0..p)
            .map(|j| {
                let v = cur.info[(j, j)];
                if v > 0.0 {
                    1.0 / v.sqrt()
                } else {
                    f64::INFINITY
                }
            })
            .collect(),
    };
    Ok(FitResult {
        model: ModelKind::Cox,
        outcome: outcome.to_string(),
        n_obs: n,
        n_groups: d.n_groups(),
        terms: d
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| TermEstimate::new(name, beta[j], ses[j]))
            .collect(),
        variance: None,
        log_likelihood: cur.ll,
        convergence: Convergence {
            iterations,
            gradient_norm: cur.grad.amax(),
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
    use crate::stats::synthetic::{synthetic_table, Gaussian};
    use crate::stats::Term;

    fn design(t: &[f64], status: &[bool], x: &[f64]) -> DesignMatrix {
        let n = t.len();
        let mut d = DesignMatrix::from_parts(
            vec!["x".into()],
            DMatrix::from_column_slice(n, 1, x),
            DVector::from_column_slice(t),
            (0..n as u64).collect(),
        );
        d.status = status.to_vec();
        d
    }

    /// Breslow partial log-likelihood written out directly.
    fn direct_pl(t: &[f64], status: &[bool], x: &[f64], b: f64) -> f64 {
        let mut ll = 0.0;
        for i in 0..t.len() {
            if status[i] {
                let risk: f64 = (0..t.len()).filter(|j| t[*j] >= t[i]).map(|j| (b * x[j]).exp()).sum();
                ll += b * x[i] - risk.ln();
            }
        }
        ll
    }

    #[test]
    fn three_subject_grid_oracle() {
        let (t, s, x) = ([1.0, 2.0, 3.0], [true, true, false], [0.0, 1.0, 0.0]);
        let f = fit_cox_matrix(&design(&t, &s, &x), "m", &CoxOptions::default()).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in -50_000..=50_000 {
            let b = k as f64 * 1e-4;
            let v = direct_pl(&t, &s, &x, b);
            if v > best.0 {
                best = (v, b);
            }
        }
        let b = f.terms[0].estimate;
        assert!((b - best.1).abs() < 1e-4, "{b} vs grid {}", best.1);
        assert!((b - 2f64.sqrt().ln()).abs() < 1e-8);
    }

    #[test]
    fn all_events_in_one_group_is_monotone() {
        let d = design(&[1.0, 2.0, 3.0], &[true, true, false], &[1.0, 0.0, 0.0]);
        match fit_cox_matrix(&d, "m", &CoxOptions::default()) {
            Err(Error::Stats(StatsError::MonotoneLikelihood { term })) => assert_eq!(term, "x"),
            other => panic!("expected monotone likelihood, got {other:?}"),
        }
    }

    #[test]
    fn constant_covariate_gives_zero() {
        let d = design(&[1.0, 2.0, 3.0, 4.0], &[true, false, true, false], &[2.0; 4]);
        let f = fit_cox_matrix(&d, "m", &CoxOptions::default()).unwrap();
        assert_eq!(f.terms[0].estimate, 0.0);
        assert_eq!(f.terms[0].p_value, 1.0);
    }

    #[test]
    fn no_events() {
        let d = design(&[1.0, 2.0], &[false, false], &[0.0, 1.0]);
        assert!(matches!(
            fit_cox_matrix(&d, "m", &CoxOptions::default()),
            Err(Error::Stats(StatsError::NoEvents))
        ));
    }

    #[test]
    fn ties_match_direct_breslow() {
        let t = [2.0, 2.0, 2.0, 3.0, 3.0, 5.0, 6.0];
        let s = [true, true, false, true, false, true, false];
        let x = [0.5, -1.0, 0.2, 1.5, 0.0, -0.3, 0.7];
        let f = fit_cox_matrix(&design(&t, &s, &x), "m", &CoxOptions::default()).unwrap();
        let b = f.terms[0].estimate;
        let h = 1e-5;
        let g = (direct_pl(&t, &s, &x, b + h) - direct_pl(&t, &s, &x, b - h)) / (2.0 * h);
        assert!(g.abs() < 1e-6, "gradient at optimum {g}");
        assert!((f.log_likelihood - direct_pl(&t, &s, &x, b)).abs() < 1e-10);
    }

    #[test]
    fn recovers_hazard_ratio_on_table() {
        // Exponential hazards with a 0.7 ratio, censored at age 65.
        let mut g = Gaussian::new(4);
        let t = synthetic_table(3000, 4, |_, arm, r| {
            let rate = 0.004 * if arm.is_ros() { 0.7 } else { 1.0 };
            let life = 6.0 - (1.0 - g.uniform()).ln() / rate;
            if life < 65.0 {
                r.mortality = 1;
                r.death_age = life.floor() as u32;
            }
        });
        let f = fit_cox(&DesignSpec::new(Outcome::Mortality, vec![Term::Ros]), &t).unwrap();
        let ros = f.require("ros").unwrap();
        assert!((ros.estimate - 0.7f64.ln()).abs() < 4.0 * ros.se, "{ros:?}");
        assert_eq!(f.n_obs, 12_000);
    }

    #[test]
    fn robust_se_close_to_model_se_without_clustering() {
        let mut g = Gaussian::new(9);
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| g.sample()).collect();
        let t: Vec<f64> = x.iter().map(|xi| -(1.0 - g.uniform()).ln() / (0.5 * (0.4 * xi).exp())).collect();
        let s: Vec<bool> = t.iter().map(|ti| *ti < 3.0).collect();
        let t: Vec<f64> = t.iter().map(|ti| ti.min(3.0)).collect();
        let d = design(&t, &s, &x);
        let robust = fit_cox_matrix(&d, "m", &CoxOptions::default()).unwrap();
        let model = fit_cox_matrix(&d, "m", &CoxOptions { cluster_robust: false, ..CoxOptions::default() }).unwrap();
        let ratio = robust.terms[0].se / model.terms[0].se;
        assert!((0.8..1.25).contains(&ratio), "ratio {ratio}");
        assert_eq!(robust.terms[0].estimate, model.terms[0].estimate);
    }
}
