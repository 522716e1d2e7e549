//! Random-intercept linear mixed model.
//!
//! Within a persona the covariance is `σ²(I + ρJ)`, whose inverse is
//! `σ⁻²(I − ρ/(1+nρ) J)`. β and σ² are profiled out, leaving a scalar search
//! over ρ, done by golden section on `τ = ln(1 + ρ)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{DesignMatrix, DesignSpec};
use super::linalg::check_full_rank;
use super::{Convergence, FitResult, ModelKind, SeKind, TermEstimate, VarianceComponents};
use crate::error::{Result, StatsError};
use crate::outcomes::OutcomeTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmmMethod {
    Reml,
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmOptions {
    pub method: LmmMethod,
    /// Skip the search and use this variance ratio.
    pub fixed_rho: Option<f64>,
    pub rho_max: f64,
    /// Width of the final bracket on `ln(1 + ρ)`.
    pub tol: f64,
}

impl Default for LmmOptions {
    fn default() -> Self {
        LmmOptions {
            method: LmmMethod::Reml,
            fixed_rho: None,
            rho_max: 1e6,
            tol: 1e-8,
        }
    }
}

struct Profile<'a> {
    d: &'a DesignMatrix,
    gidx: Vec<usize>,
    sizes: Vec<f64>,
    /// Per-group column sums of X.
    sx: Vec<DVector<f64>>,
    /// Per-group sums of y.
    sy: Vec<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    method: LmmMethod,
}

struct Eval {
    objective: f64,
    beta: DVector<f64>,
    a_inv: DMatrix<f64>,
    sigma2: f64,
}

impl<'a> Profile<'a> {
    fn new(d: &'a DesignMatrix, method: LmmMethod) -> Self {
        let (gidx, ng) = d.group_index();
        let p = d.x.ncols();
        let mut sizes = vec![0.0; ng];
        let mut sx = vec![DVector::zeros(p); ng];
        let mut sy = vec![0.0; ng];
        for (i, g) in gidx.iter().enumerate() {
            sizes[*g] += 1.0;
            sx[*g] += d.x.row(i).transpose();
            sy[*g] += d.y[i];
        }
        Profile {
            xtx: d.x.transpose() * &d.x,
            xty: d.x.transpose() * &d.y,
            d,
            gidx,
            sizes,
            sx,
            sy,
            method,
        }
    }

    fn weights(&self, rho: f64) -> Vec<f64> {
        self.sizes.iter().map(|n| rho / (1.0 + n * rho)).collect()
    }

    fn eval(&self, rho: f64) -> Result<Eval, StatsError> {
        let w = self.weights(rho);
        let mut a = self.xtx.clone();
        let mut b = self.xty.clone();
        for (g, wg) in w.iter().enumerate() {
            if *wg == 0.0 {
                continue;
            }
            a.ger(-wg, &self.sx[g], &self.sx[g], 1.0);
            b.axpy(-wg * self.sy[g], &self.sx[g], 1.0);
        }
        let chol = a.clone().cholesky().ok_or_else(|| StatsError::Collinear {
            terms: self.d.names.clone(),
        })?;
        let beta = chol.solve(&b);
        let logdet_a = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        // Quadratic form of the residuals, computed directly for accuracy.
        let resid = &self.d.y - &self.d.x * &beta;
        let mut rsum = vec![0.0; self.sizes.len()];
        for (i, g) in self.gidx.iter().enumerate() {
            rsum[*g] += resid[i];
        }
        let q = resid.norm_squared() - w.iter().zip(&rsum).map(|(wg, s)| wg * s * s).sum::<f64>();
        let q = q.max(0.0);
        let logdet_v: f64 = self.sizes.iter().map(|n| (1.0 + n * rho).ln()).sum();
        let n = self.d.n_obs() as f64;
        let p = self.d.x.ncols() as f64;
        let two_pi = 2.0 * std::f64::consts::PI;
        let (dof, extra) = match self.method {
            LmmMethod::Ml => (n, 0.0),
            LmmMethod::Reml => (n - p, logdet_a),
        };
        let sigma2 = q / dof;
        let objective = dof * (two_pi * sigma2.max(f64::MIN_POSITIVE)).ln() + dof + logdet_v + extra;
        Ok(Eval {
            objective,
            beta,
            a_inv: chol.inverse(),
            sigma2,
        })
    }
}

fn golden_min<F: FnMut(f64) -> Result<f64, StatsError>>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<(f64, usize), StatsError> {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let mut it = 0;
    while b - a > tol && it < 500 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d)?;
        }
        it += 1;
    }
    Ok(((a + b) / 2.0, it))
}

pub fn fit_lmm(spec: &DesignSpec, table: &OutcomeTable) -> Result<FitResult> {
    let d = DesignMatrix::build(spec, table, true)?;
    fit_lmm_matrix(&d, spec.outcome.name(), &LmmOptions::default())
}

pub fn fit_lmm_matrix(d: &DesignMatrix, outcome: &str, opts: &LmmOptions) -> Result<FitResult> {
    let (n, p) = (d.n_obs(), d.x.ncols());
    let prof = Profile::new(d, opts.method);
    let multi = prof.sizes.iter().filter(|s| **s >= 2.0).count();
    if prof.sizes.len() < 2 || multi < 2 {
        return Err(StatsError::EmptySample(
            "mixed model needs at least 2 personas with 2 or more clones".into(),
        )
        .into());
    }
    if n <= p {
        return Err(StatsError::EmptySample(format!("{n} observations for {p} terms")).into());
    }
    check_full_rank(&d.x, &d.names)?;

    let (rho, iterations, gradient_norm) = match opts.fixed_rho {
        Some(r) => (r, 0, 0.0),
        None => {
            let t_max = opts.rho_max.ln_1p();
            let obj = |t: f64| prof.eval(t.exp_m1()).map(|e| e.objective);
            let (t_star, it) = golden_min(obj, 0.0, t_max, opts.tol)?;
            // The objective is not guaranteed unimodal; compare with both ends.
            let mut best = (prof.eval(t_star.exp_m1())?.objective, t_star);
            for t in [0.0, t_max] {
                let f = prof.eval(t.exp_m1())?.objective;
                if f < best.0 {
                    best = (f, t);
                }
            }
            let t = best.1;
            let h = 1e-5;
            let grad = if t - h > 0.0 && t + h < t_max {
                let fp = prof.eval((t + h).exp_m1())?.objective;
                let fm = prof.eval((t - h).exp_m1())?.objective;
                ((fp - fm) / (2.0 * h)).abs()
            } else {
                0.0
            };
            (t.exp_m1(), it, grad)
        }
    };
    let e = prof.eval(rho)?;
    let terms = d
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| TermEstimate::new(name, e.beta[j], (e.sigma2 * e.a_inv[(j, j)]).max(0.0).sqrt()))
        .collect();
    Ok(FitResult {
        model: ModelKind::Lmm,
        outcome: outcome.to_string(),
        n_obs: n,
        n_groups: prof.sizes.len(),
        terms,
        variance: Some(VarianceComponents {
            persona: rho * e.sigma2,
            residual: e.sigma2,
            rho,
        }),
        log_likelihood: -0.5 * e.objective,
        convergence: Convergence {
            iterations,
            gradient_norm,
        },
        se_kind: SeKind::ModelBased,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcomes::Outcome;
    use crate::persona::Arm;
    use crate::stats::paired::{paired_effects, Contrast};
    use crate::stats::synthetic::{log_wealth_table, synthetic_table, Gaussian};
    use crate::stats::{fit_ols, DesignSpec};

    /// Dense GLS at a given ρ: an independent oracle.
    fn dense_gls(d: &DesignMatrix, rho: f64) -> DVector<f64> {
        let n = d.n_obs();
        let mut v = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j && d.groups[i] == d.groups[j] {
                    v[(i, j)] = rho;
                } else if i == j {
                    v[(i, j)] = 1.0 + rho;
                }
            }
        }
        let vi = v.try_inverse().unwrap();
        let a = d.x.transpose() * &vi * &d.x;
        let b = d.x.transpose() * &vi * &d.y;
        a.try_inverse().unwrap() * b
    }

    #[test]
    fn noise_free_effect_is_exact() {
        let mut g = Gaussian::new(5);
        let mut icpt = 0.0;
        let t = synthetic_table(30, 5, |_, arm, r| {
            if arm == Arm::Sham6 {
                icpt = 3.0 * g.sample();
            }
            r.log_wealth = Some(10.0 + icpt + if arm.is_ros() { 0.2 } else { 0.0 });
        });
        let f = fit_lmm(&DesignSpec::new(Outcome::LogWealth, vec![crate::stats::Term::Ros]), &t).unwrap();
        assert!((f.require("ros").unwrap().estimate - 0.2).abs() < 1e-9);
        // ρ runs to its ceiling, leaving σ² at persona variance / ρ_max.
        let v = f.variance.unwrap();
        assert!(v.rho >= 0.999 * LmmOptions::default().rho_max);
        assert!(v.residual <= v.persona * 1.01e-6, "{v:?}");
    }

    #[test]
    fn matches_dense_gls_oracle() {
        let t = log_wealth_table(20, 17, 0.18, 0.3, 0.1);
        let spec = DesignSpec::treatment(Outcome::LogWealth);
        let d = DesignMatrix::build(&spec, &t, true).unwrap();
        let f = fit_lmm_matrix(&d, "log_wealth", &LmmOptions::default()).unwrap();
        let rho = f.variance.unwrap().rho;
        assert!(rho > 1.0, "persona variance should dominate, rho = {rho}");
        let oracle = dense_gls(&d, rho);
        for (j, t) in f.terms.iter().enumerate() {
            assert!((t.estimate - oracle[j]).abs() < 1e-8, "{}: {} vs {}", t.term, t.estimate, oracle[j]);
        }
    }

    #[test]
    fn rho_zero_reduces_to_ols() {
        let t = log_wealth_table(25, 3, 0.1, 0.5, 0.2);
        let d = DesignMatrix::build(&DesignSpec::full(Outcome::LogWealth), &t, true).unwrap();
        let opts = LmmOptions {
            fixed_rho: Some(0.0),
            ..LmmOptions::default()
        };
        let f = fit_lmm_matrix(&d, "log_wealth", &opts).unwrap();
        let o = fit_ols(&d, "log_wealth").unwrap();
        for (a, b) in f.terms.iter().zip(&o.terms) {
            assert!((a.estimate - b.estimate).abs() < 1e-8);
            assert!((a.se - b.se).abs() < 1e-8);
        }
    }

    #[test]
    fn balanced_contrasts_equal_paired_means() {
        let t = log_wealth_table(40, 8, 0.25, 0.4, 0.3);
        let f = fit_lmm(&DesignSpec::full(Outcome::LogWealth), &t).unwrap();
        let pe = paired_effects(&t, Outcome::LogWealth).unwrap();
        let get = |c: Contrast| pe.iter().find(|e| e.contrast == c).unwrap().mean;
        let ros = f.require("ros").unwrap().estimate;
        let inter = f.require("ros:age6").unwrap().estimate;
        assert!((ros - get(Contrast::RosVsShamAge18)).abs() < 1e-8);
        assert!((ros + inter - get(Contrast::RosVsShamAge6)).abs() < 1e-8);
        assert!((inter - get(Contrast::Interaction)).abs() < 1e-8);
    }

    #[test]
    fn collinear_terms_are_named() {
        let t = log_wealth_table(10, 1, 0.1, 0.3, 0.1);
        let spec = DesignSpec::new(
            Outcome::LogWealth,
            vec![crate::stats::Term::Ros, crate::stats::Term::Ros],
        );
        match fit_lmm(&spec, &t) {
            Err(crate::Error::Stats(StatsError::Collinear { terms })) => assert_eq!(terms, vec!["ros"]),
            other => panic!("expected collinearity, got {other:?}"),
        }
    }

    #[test]
    fn too_few_personas() {
        let t = log_wealth_table(1, 1, 0.1, 0.3, 0.1);
        assert!(fit_lmm(&DesignSpec::treatment(Outcome::LogWealth), &t).is_err());
    }

    #[test]
    fn ml_and_reml_agree_on_fixed_effects_when_balanced() {
        let t = log_wealth_table(30, 4, 0.2, 0.3, 0.1);
        let d = DesignMatrix::build(&DesignSpec::treatment(Outcome::LogWealth), &t, true).unwrap();
        let reml = fit_lmm_matrix(&d, "y", &LmmOptions::default()).unwrap();
        let ml = fit_lmm_matrix(
            &d,
            "y",
            &LmmOptions {
                method: LmmMethod::Ml,
                ..LmmOptions::default()
            },
        )
        .unwrap();
        // Within-persona terms do not depend on ρ in a balanced design.
        let a = reml.require("ros").unwrap().estimate;
        let b = ml.require("ros").unwrap().estimate;
        assert!((a - b).abs() < 1e-10);
        assert!(ml.variance.unwrap().persona <= reml.variance.unwrap().persona + 1e-12);
    }
}
