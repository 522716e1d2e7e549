//! Kolmogorov–Smirnov uniformity test and the arm-permutation null.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::DesignSpec;
use super::fit_lmm;
use crate::error::Result;
use crate::outcomes::{Outcome, OutcomeTable};
use crate::persona::Arm;
use crate::rng::splitmix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = f64::from(k);
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u32 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample test against Uniform(0, 1), with Stephens' small-sample
/// scaling of the asymptotic distribution.
pub fn ks_uniform(samples: &[f64]) -> KsResult {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in s.iter().enumerate() {
        let v = v.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - v).max(v - i as f64 / n);
    }
    let sn = n.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_q((sn + 0.12 + 0.11 / sn) * d),
        n: s.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationNull {
    pub outcome: Outcome,
    pub p_values: Vec<f64>,
    pub ks: KsResult,
}

/// Randomly permutes arm labels among each persona's clones and refits the
/// full mixed model, collecting the treatment p-value of every replication.
pub fn permutation_null(table: &OutcomeTable, outcome: Outcome, reps: usize, seed: u64) -> Result<PermutationNull> {
    let spec = DesignSpec::full(outcome);
    let p_values = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(rep as u64)));
            let mut t = table.clone();
            let mut perm = Arm::ALL;
            let mut current = u64::MAX;
            // Records are grouped by persona; draw one permutation per persona.
            let mut order: Vec<usize> = (0..t.records.len()).collect();
            order.sort_by_key(|i| (t.records[*i].persona_id, t.records[*i].arm.index()));
            for i in order {
                let r = &mut t.records[i];
                if r.persona_id != current {
                    current = r.persona_id;
                    perm.shuffle(&mut rng);
                }
                r.arm = perm[r.arm.index()];
            }
            Ok(fit_lmm(&spec, &t)?.require("ros")?.p_value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PermutationNull {
        outcome,
        ks: ks_uniform(&p_values),
        p_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::synthetic::{log_wealth_table, Gaussian};

    #[test]
    fn uniform_sample_passes() {
        let mut g = Gaussian::new(1);
        let u: Vec<f64> = (0..500).map(|_| g.uniform()).collect();
        assert!(ks_uniform(&u).p_value > 0.01);
    }

    #[test]
    fn skewed_sample_fails() {
        let mut g = Gaussian::new(2);
        let u: Vec<f64> = (0..200).map(|_| g.uniform().powi(2)).collect();
        assert!(ks_uniform(&u).p_value < 1e-4);
    }

    #[test]
    fn p_value_matches_monte_carlo() {
        // Null distribution of D for n = 50 estimated by simulation.
        let mut g = Gaussian::new(3);
        let n = 50;
        let d_obs = 0.17;
        let trials = 20_000;
        let mut exceed = 0;
        for _ in 0..trials {
            let u: Vec<f64> = (0..n).map(|_| g.uniform()).collect();
            if ks_uniform(&u).statistic >= d_obs {
                exceed += 1;
            }
        }
        let mc = exceed as f64 / trials as f64;
        let sn = (n as f64).sqrt();
        let p = kolmogorov_q((sn + 0.12 + 0.11 / sn) * d_obs);
        assert!((p - mc).abs() < 0.01, "formula {p} vs simulation {mc}");
    }

    #[test]
    fn permutation_p_values_are_uniform() {
        let t = log_wealth_table(150, 6, 0.3, 0.3, 0.2);
        let r = permutation_null(&t, Outcome::LogWealth, 60, 9).unwrap();
        assert_eq!(r.p_values.len(), 60);
        assert!(r.ks.p_value > 0.001, "{:?}", r.ks);
        // A real effect of 0.3 is unmistakable without permutation.
        let f = fit_lmm(&DesignSpec::full(Outcome::LogWealth), &t).unwrap();
        assert!(f.require("ros").unwrap().p_value < 1e-10);
    }
}
