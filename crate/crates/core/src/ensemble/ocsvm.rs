//! One-class SVM with an RBF kernel, solved by SMO on the dual
//!
//! ```text
//! min ½ αᵀQα   s.t.  0 ≤ αᵢ ≤ 1,  Σαᵢ = ν·l
//! ```
//!
//! (the libsvm scaling). The decision value is `Σ αᵢ K(xᵢ, x) − ρ`;
//! negative values are outliers.

use crate::codec::{BinReader, BinWriter};
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OneClassSvmParams {
    pub nu: f64,
    pub gamma: f64,
    /// KKT violation tolerance for the stopping rule.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl OneClassSvmParams {
    pub fn new(nu: f64, gamma: f64) -> Self {
        Self {
            nu,
            gamma,
            tolerance: 1e-10,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneClassSvm {
    support: Vec<Vec<f64>>,
    coef: Vec<f64>,
    rho: f64,
    gamma: f64,
}

pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Result of the dual solve, exposed for verification.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

/// SMO with second-order working-set selection.
pub fn solve_dual(points: &[Vec<f64>], params: &OneClassSvmParams) -> Result<DualSolution> {
    let l = points.len();
    if l == 0 {
        return Err(Error::invalid("one-class SVM needs training rows"));
    }
    if !(params.nu > 0.0 && params.nu <= 1.0) {
        return Err(Error::invalid(format!("nu = {} outside (0, 1]", params.nu)));
    }
    if !(params.gamma > 0.0) {
        return Err(Error::invalid(format!(
            "gamma = {} must be positive",
            params.gamma
        )));
    }
    let q: Vec<Vec<f64>> = points
        .iter()
        .map(|a| points.iter().map(|b| rbf(a, b, params.gamma)).collect())
        .collect();

    let total = params.nu * l as f64;
    let full = (total.floor() as usize).min(l);
    let mut alpha = vec![0.0; l];
    alpha.iter_mut().take(full).for_each(|a| *a = 1.0);
    if full < l {
        alpha[full] = total - full as f64;
    }
    let mut grad: Vec<f64> = (0..l)
        .map(|t| (0..l).map(|s| q[t][s] * alpha[s]).sum())
        .collect();

    let mut iterations = 0;
    loop {
        // i: most violating index that can still increase.
        let mut g_max = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..l {
            if alpha[t] < 1.0 && -grad[t] >= g_max {
                g_max = -grad[t];
                i = t;
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..l {
            if alpha[t] > 0.0 {
                g_max2 = g_max2.max(grad[t]);
                if i == usize::MAX {
                    continue;
                }
                let diff = g_max + grad[t];
                if diff > 0.0 {
                    let quad = (q[i][i] + q[t][t] - 2.0 * q[i][t]).max(TAU);
                    let obj = -diff * diff / quad;
                    if obj <= best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        if g_max + g_max2 < params.tolerance || i == usize::MAX || j == usize::MAX {
            break;
        }
        if iterations >= params.max_iterations {
            return Err(Error::NoConvergence {
                iterations,
                violation: g_max + g_max2,
            });
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = (q[i][i] + q[j][j] - 2.0 * q[i][j]).max(TAU);
        let delta = (grad[i] - grad[j]) / quad;
        let sum = old_i + old_j;
        alpha[i] -= delta;
        alpha[j] += delta;
        if sum > 1.0 {
            if alpha[i] > 1.0 {
                alpha[i] = 1.0;
                alpha[j] = sum - 1.0;
            }
        } else if alpha[j] < 0.0 {
            alpha[j] = 0.0;
            alpha[i] = sum;
        }
        if sum > 1.0 {
            if alpha[j] > 1.0 {
                alpha[j] = 1.0;
                alpha[i] = sum - 1.0;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = sum;
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..l {
            grad[t] += q[t][i] * di + q[t][j] * dj;
        }
    }

    // ρ: mean gradient over free variables, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free) = (0.0, 0usize);
    for t in 0..l {
        if alpha[t] >= 1.0 {
            lb = lb.max(grad[t]);
        } else if alpha[t] <= 0.0 {
            ub = ub.min(grad[t]);
        } else {
            free += 1;
            free_sum += grad[t];
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(DualSolution {
        alpha,
        rho,
        iterations,
    })
}

impl OneClassSvm {
    pub fn fit(points: &[Vec<f64>], params: &OneClassSvmParams) -> Result<Self> {
        let sol = solve_dual(points, params)?;
        let (support, coef): (Vec<Vec<f64>>, Vec<f64>) = points
            .iter()
            .zip(&sol.alpha)
            .filter(|(_, &a)| a > 0.0)
            .map(|(p, &a)| (p.clone(), a))
            .unzip();
        Ok(Self {
            support,
            coef,
            rho: sol.rho,
            gamma: params.gamma,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn support_vectors(&self) -> usize {
        self.support.len()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, a)| a * rbf(s, x, self.gamma))
            .sum::<f64>()
            - self.rho
    }

    pub fn is_anomaly(&self, x: &[f64]) -> bool {
        self.decision(x) < 0.0
    }

    pub(crate) fn write(&self, w: &mut BinWriter) {
        w.f64(self.gamma);
        w.f64(self.rho);
        w.f64_block(&self.coef);
        for s in &self.support {
            w.f64_block(s);
        }
    }

    pub(crate) fn read(r: &mut BinReader<'_>) -> Result<Self> {
        let gamma = r.f64()?;
        let rho = r.f64()?;
        let coef = r.f64_block()?;
        let support = (0..coef.len())
            .map(|_| r.f64_block())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            support,
            coef,
            rho,
            gamma,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_constraints_hold() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()])
            .collect();
        let sol = solve_dual(&pts, &OneClassSvmParams::new(0.3, 0.5)).unwrap();
        let sum: f64 = sol.alpha.iter().sum();
        assert!((sum - 6.0).abs() < 1e-9);
        assert!(sol.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn single_point_far_probe_is_anomalous() {
        let svm = OneClassSvm::fit(&[vec![0.0, 0.0]], &OneClassSvmParams::new(0.5, 0.5)).unwrap();
        assert!(svm.is_anomaly(&[50.0, 50.0]));
    }

    #[test]
    fn bad_parameters_rejected() {
        let pts = vec![vec![0.0]];
        assert!(OneClassSvm::fit(&pts, &OneClassSvmParams::new(0.0, 1.0)).is_err());
        assert!(OneClassSvm::fit(&pts, &OneClassSvmParams::new(1.5, 1.0)).is_err());
        assert!(OneClassSvm::fit(&pts, &OneClassSvmParams::new(0.5, 0.0)).is_err());
    }
}
