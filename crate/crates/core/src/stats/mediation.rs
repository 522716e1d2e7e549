//! Single-mediator path analysis with the Sobel test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{DesignMatrix, INTERCEPT};
use super::{fit_ols, TermEstimate};
use crate::error::{Result, StatsError};
use crate::outcomes::{Outcome, OutcomeTable};
use crate::persona::Arm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mediation {
    /// Treatment → mediator.
    pub a: TermEstimate,
    /// Mediator → outcome, controlling for treatment.
    pub b: TermEstimate,
    /// Direct treatment → outcome path.
    pub direct: TermEstimate,
    /// `a · b` with the Sobel standard error.
    pub indirect: TermEstimate,
    pub n: usize,
}

/// Paths for treatment `t`, mediator `m` and outcome `y`.
pub fn mediation_xy(t: &[f64], m: &[f64], y: &[f64]) -> Result<Mediation> {
    let n = t.len();
    let mean = m.iter().sum::<f64>() / n.max(1) as f64;
    if n < 4 || m.iter().all(|v| (v - mean).abs() < 1e-12) {
        return Err(StatsError::Degenerate("mediator has no variance".into()).into());
    }
    let groups: Vec<u64> = (0..n as u64).collect();
    let mut xa = Vec::with_capacity(2 * n);
    let mut xb = Vec::with_capacity(3 * n);
    for i in 0..n {
        xa.extend([1.0, t[i]]);
        xb.extend([1.0, t[i], m[i]]);
    }
    let da = DesignMatrix::from_parts(
        vec![INTERCEPT.into(), "treatment".into()],
        DMatrix::from_row_slice(n, 2, &xa),
        DVector::from_column_slice(m),
        groups.clone(),
    );
    let db = DesignMatrix::from_parts(
        vec![INTERCEPT.into(), "treatment".into(), "mediator".into()],
        DMatrix::from_row_slice(n, 3, &xb),
        DVector::from_column_slice(y),
        groups,
    );
    let fa = fit_ols(&da, "mediator")?;
    let fb = fit_ols(&db, "outcome")?;
    let a = fa.terms[1].clone();
    let b = fb.terms[2].clone();
    let sobel = (a.estimate.powi(2) * b.se.powi(2) + b.estimate.powi(2) * a.se.powi(2)).sqrt();
    Ok(Mediation {
        indirect: TermEstimate::new("indirect", a.estimate * b.estimate, sobel),
        a,
        b,
        direct: fb.terms[1].clone(),
        n,
    })
}

/// Mediation of the ROS effect on `outcome` through behavioral resilience,
/// over survivors in `arms`.
pub fn mediation(table: &OutcomeTable, outcome: Outcome, arms: &[Arm]) -> Result<Mediation> {
    let (mut t, mut m, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for r in table.records.iter().filter(|r| arms.contains(&r.arm)) {
        if let (Some(mv), Some(yv)) = (r.behavioral_resilience_z, outcome.value(r)) {
            t.push(f64::from(u8::from(r.arm.is_ros())));
            m.push(mv);
            y.push(yv);
        }
    }
    mediation_xy(&t, &m, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::synthetic::Gaussian;

    #[test]
    fn exact_chain() {
        let mut g = Gaussian::new(1);
        let n = 200;
        let t: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let noise: Vec<f64> = (0..n).map(|_| g.sample()).collect();
        let m: Vec<f64> = t.iter().zip(&noise).map(|(t, e)| 0.5 * t + e).collect();
        let y: Vec<f64> = m.iter().map(|m| 0.4 * m).collect();
        let r = mediation_xy(&t, &m, &y).unwrap();
        assert!((r.b.estimate - 0.4).abs() < 1e-12);
        assert!((r.indirect.estimate - 0.4 * r.a.estimate).abs() < 1e-12);

        // With no mediator noise at all the paths are exact.
        let m2: Vec<f64> = t.iter().enumerate().map(|(i, t)| 0.5 * t + if i % 4 < 2 { 0.1 } else { -0.1 }).collect();
        let y2: Vec<f64> = m2.iter().map(|m| 0.4 * m).collect();
        let r2 = mediation_xy(&t, &m2, &y2).unwrap();
        assert!((r2.indirect.estimate - 0.2).abs() < 1e-12);
    }

    #[test]
    fn null_a_path() {
        let t: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        // Mediator balanced across treatment groups.
        let m: Vec<f64> = (0..40).map(|i| ((i / 2) % 2) as f64).collect();
        let y: Vec<f64> = m.iter().map(|m| 2.0 * m).collect();
        let r = mediation_xy(&t, &m, &y).unwrap();
        assert!(r.a.estimate.abs() < 1e-12 && r.indirect.estimate.abs() < 1e-12);
    }

    #[test]
    fn constant_mediator() {
        let t = [0.0, 1.0, 0.0, 1.0, 0.0];
        assert!(mediation_xy(&t, &[1.0; 5], &t).is_err());
    }

    #[test]
    fn sobel_coverage() {
        let mut g = Gaussian::new(77);
        let mut covered = 0;
        for _ in 0..200 {
            let n = 300;
            let t: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
            let m: Vec<f64> = t.iter().map(|t| 0.5 * t + 0.5 * g.sample()).collect();
            let y: Vec<f64> = m.iter().map(|m| 0.4 * m + 0.5 * g.sample()).collect();
            let r = mediation_xy(&t, &m, &y).unwrap();
            if (r.indirect.estimate - 0.2).abs() <= 3.0 * r.indirect.se {
                covered += 1;
            }
        }
        assert!(covered >= 190, "covered {covered}/200");
    }
}
