use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::regressor::ridge_solve;
use crate::env::ActionId;
use crate::error::{Error, Result};

/// Q over a scalar state in [0, 1]: per action, a weighted sum of Gaussian
/// bumps `exp(−(s − μ_j)² / 2σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBasisQ {
    pub centers: Vec<f64>,
    pub sigma: f64,
    /// One row of J weights per action.
    pub weights: Vec<Vec<f64>>,
}

impl GBasisQ {
    pub fn zeros(centers: Vec<f64>, sigma: f64) -> Self {
        let j = centers.len();
        GBasisQ {
            centers,
            sigma,
            weights: vec![vec![0.0; j]; ActionId::COUNT],
        }
    }

    pub fn basis(&self, s: f64) -> Vec<f64> {
        let two_var = 2.0 * self.sigma * self.sigma;
        self.centers
            .iter()
            .map(|m| (-(s - m) * (s - m) / two_var).exp())
            .collect()
    }

    pub fn q(&self, s: f64, a: ActionId) -> f64 {
        let phi = self.basis(s);
        self.weights[a.index()].iter().zip(&phi).map(|(w, p)| w * p).sum()
    }

    pub fn q_all(&self, s: f64) -> [f64; ActionId::COUNT] {
        let phi = self.basis(s);
        let mut out = [0.0; ActionId::COUNT];
        for (a, w) in self.weights.iter().enumerate() {
            out[a] = w.iter().zip(&phi).map(|(w, p)| w * p).sum();
        }
        out
    }

    pub fn max_q(&self, s: f64) -> f64 {
        self.q_all(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FviConfig {
    pub gamma: f64,
    pub centers: Vec<f64>,
    pub sigma: f64,
    pub iterations: usize,
    pub ridge: f64,
    /// Stop when no weight moves more than this.
    pub tolerance: f64,
}

impl Default for FviConfig {
    fn default() -> Self {
        FviConfig {
            gamma: 0.9,
            centers: vec![0.25, 0.5, 0.75],
            sigma: 0.25,
            iterations: 50,
            ridge: 1e-6,
            tolerance: 1e-10,
        }
    }
}

/// A transition with states already mapped to estimated AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarExperience {
    pub s: f64,
    pub action: ActionId,
    pub reward: f64,
    pub s_next: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct FviOutcome {
    pub q: GBasisQ,
    /// Mean squared Bellman residual of the refit Q after each iteration.
    pub residuals: Vec<f64>,
    /// Actions with no experience; their weights stay zero.
    pub unseen: Vec<ActionId>,
}

/// Fitted value iteration: compute Bellman targets with the current Q,
/// refit each action's weights by ridge least squares, repeat.
pub fn fvi_train(data: &[ScalarExperience], cfg: &FviConfig) -> Result<FviOutcome> {
    if data.is_empty() {
        return Err(Error::invalid("FVI needs at least one experience"));
    }
    if cfg.centers.is_empty() || !(cfg.sigma > 0.0) || !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(Error::invalid("FVI needs centers, σ > 0 and γ in [0, 1]"));
    }
    let mut q = GBasisQ::zeros(cfg.centers.clone(), cfg.sigma);
    let j = cfg.centers.len();
    let phis: Vec<Vec<f64>> = data.iter().map(|e| q.basis(e.s)).collect();
    let next_phis: Vec<Vec<f64>> = data.iter().map(|e| q.basis(e.s_next)).collect();
    let by_action: Vec<Vec<usize>> = ActionId::ALL
        .iter()
        .map(|&a| (0..data.len()).filter(|&i| data[i].action == a).collect())
        .collect();
    let unseen: Vec<ActionId> = ActionId::ALL
        .iter()
        .copied()
        .filter(|a| by_action[a.index()].is_empty())
        .collect();
    if !unseen.is_empty() {
        tracing::debug!(?unseen, "actions without experience keep zero weights");
    }
    // Normal-equation matrices are fixed across iterations.
    let grams: Vec<DMatrix<f64>> = by_action
        .iter()
        .map(|idx| {
            let mut g = DMatrix::zeros(j, j);
            for &i in idx {
                let p = DVector::from_column_slice(&phis[i]);
                g += &p * p.transpose();
            }
            g
        })
        .collect();

    let max_next = |q: &GBasisQ, i: usize| -> f64 {
        q.weights
            .iter()
            .map(|w| w.iter().zip(&next_phis[i]).map(|(w, p)| w * p).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let targets = |q: &GBasisQ| -> Vec<f64> {
        data.iter()
            .enumerate()
            .map(|(i, e)| if e.terminal { e.reward } else { e.reward + cfg.gamma * max_next(q, i) })
            .collect()
    };

    let mut residuals = Vec::new();
    for _ in 0..cfg.iterations {
        let y = targets(&q);
        let mut next = q.clone();
        for (a, idx) in by_action.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let mut rhs = DVector::zeros(j);
            for &i in idx {
                rhs += DVector::from_column_slice(&phis[i]) * y[i];
            }
            let w = ridge_solve(grams[a].clone(), rhs, cfg.ridge)?;
            next.weights[a] = w.iter().copied().collect();
        }
        let moved = q
            .weights
            .iter()
            .flatten()
            .zip(next.weights.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        let y = targets(&q);
        let res = data
            .iter()
            .zip(&phis)
            .zip(&y)
            .map(|((e, p), y)| {
                let qa: f64 = q.weights[e.action.index()].iter().zip(p).map(|(w, p)| w * p).sum();
                (y - qa) * (y - qa)
            })
            .sum::<f64>()
            / data.len() as f64;
        residuals.push(res);
        if !res.is_finite() {
            return Err(Error::Diverged(residuals.len() as u64));
        }
        if moved <= cfg.tolerance {
            break;
        }
    }
    Ok(FviOutcome { q, residuals, unseen })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(s: f64, a: ActionId, r: f64, s2: f64, t: bool) -> ScalarExperience {
        ScalarExperience {
            s,
            action: a,
            reward: r,
            s_next: s2,
            terminal: t,
        }
    }

    #[test]
    fn zero_rewards_zero_q() {
        let data: Vec<_> = (0..20)
            .map(|i| exp(i as f64 / 20.0, ActionId::ALL[i % 5], 0.0, 0.5, i % 3 == 0))
            .collect();
        let out = fvi_train(&data, &FviConfig::default()).unwrap();
        assert!(out.q.weights.iter().flatten().all(|&w| w == 0.0));
    }

    #[test]
    fn single_terminal_one_basis() {
        let cfg = FviConfig {
            centers: vec![0.5],
            ..Default::default()
        };
        let out = fvi_train(&[exp(0.5, ActionId::ShowList, 7.0, 0.5, true)], &cfg).unwrap();
        // φ(0.5) = 1, so w = 7 / (1 + ridge)
        let expect = 7.0 / (1.0 + cfg.ridge);
        assert!((out.q.q(0.5, ActionId::ShowList) - expect).abs() < 1e-12);
        assert_eq!(out.unseen.len(), 4);
    }

    #[test]
    fn basis_values() {
        let q = GBasisQ::zeros(vec![0.25, 0.5, 0.75], 0.25);
        let phi = q.basis(0.5);
        assert_eq!(phi[1], 1.0);
        assert!((phi[0] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((phi[0] - phi[2]).abs() < 1e-15);
    }
}
