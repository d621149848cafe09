//! Trust-region policy updates: conjugate-gradient solve of the damped
//! Fisher system and a KL-constrained backtracking line search.

use crate::error::{AgailError, Result};
use crate::numcore::Matrix;
use crate::policy::{RolloutBatch, StochasticPolicy};

#[derive(Debug, Clone)]
pub struct TrpoConfig {
    /// Trust-region radius δ on the mean KL divergence.
    pub max_kl: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_coeff: f64,
    pub backtrack_steps: usize,
    /// Minimum actual/expected improvement ratio at the accepted point.
    pub accept_ratio: f64,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        TrpoConfig {
            max_kl: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_coeff: 0.8,
            backtrack_steps: 10,
            accept_ratio: 0.1,
        }
    }
}

/// Outcome of one trust-region step.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub accepted: bool,
    /// Measured mean KL(old ‖ new) at the accepted parameters (0 when
    /// rejected or skipped).
    pub kl: f64,
    pub surrogate_improvement: f64,
    pub backtracks: usize,
    pub cg_residual: f64,
}

/// Solves `F x = b` for a symmetric positive semi-definite operator given
/// as a closure. Returns the solution and the final residual norm.
pub fn conjugate_gradient(
    fisher_vec_product: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rs_old: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..iters {
        if rs_old.sqrt() < tol {
            break;
        }
        let fp = fisher_vec_product(&p);
        if fp.iter().any(|v| !v.is_finite()) {
            return Err(AgailError::Numerical(
                "conjugate gradient: non-finite operator output".into(),
            ));
        }
        let p_fp: f64 = p.iter().zip(&fp).map(|(a, b)| a * b).sum();
        if p_fp <= 0.0 {
            break; // numerically lost positive-definiteness
        }
        let alpha = rs_old / p_fp;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * fp[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs_old;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rs_old = rs_new;
    }
    Ok((x, rs_old.sqrt()))
}

/// Fisher-vector products are estimated on a deterministic subsample of
/// the batch to bound the per-iteration cost.
const FVP_MAX_STATES: usize = 1024;

/// One TRPO update on the policy. Accepted parameters satisfy mean
/// KL(old ‖ new) ≤ 1.5·δ with positive surrogate improvement; otherwise
/// the parameters are restored bit-identically.
pub fn trpo_update(
    policy: &mut StochasticPolicy,
    batch: &RolloutBatch,
    cfg: &TrpoConfig,
) -> Result<StepReport> {
    let n = batch.states.len();
    assert!(n > 0, "empty batch");
    let adv = &batch.advantages;

    // Degenerate batch: no gradient signal, report a no-op.
    let mean = adv.iter().sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    if var < 1e-12 && mean.abs() < 1e-12 {
        return Ok(StepReport::default());
    }

    let states = Matrix::from_rows(&batch.states);
    let db = policy.dist_batch(&states);
    let frozen = policy.freeze(&db);
    let old_log_probs = policy.log_probs_from(&db, &batch.actions);

    // Surrogate gradient at the old parameters: mean advantage-weighted score.
    let weights: Vec<f64> = adv.iter().map(|a| a / n as f64).collect();
    let g = policy.score_weighted_grad(&db, &batch.actions, &weights);
    let g_norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if g_norm < 1e-12 {
        return Ok(StepReport::default());
    }

    // Subsampled states for Fisher-vector products.
    let stride = (n / FVP_MAX_STATES).max(1);
    let sub_rows: Vec<Vec<f64>> = batch.states.iter().step_by(stride).cloned().collect();
    let sub_states = Matrix::from_rows(&sub_rows);
    let sub_db = policy.dist_batch(&sub_states);
    let fvp = |v: &[f64]| {
        let mut out = policy.fisher_vector_product(&sub_db, v);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += cfg.cg_damping * vi;
        }
        out
    };

    let (dir, cg_residual) = conjugate_gradient(&fvp, &g, cfg.cg_iters, 1e-10)?;
    let d_fd: f64 = dir
        .iter()
        .zip(fvp(&dir))
        .map(|(a, b)| a * b)
        .sum();
    if d_fd <= 0.0 || !d_fd.is_finite() {
        return Ok(StepReport::default());
    }
    let full_step_scale = (2.0 * cfg.max_kl / d_fd).sqrt();
    let expected_improvement_full: f64 =
        g.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() * full_step_scale;

    let old_params = policy.policy_params_flat();
    let surrogate = |p: &mut StochasticPolicy| -> f64 {
        let db = p.dist_batch(&states);
        let lps = p.log_probs_from(&db, &batch.actions);
        let mut s = 0.0;
        for i in 0..n {
            s += (lps[i] - old_log_probs[i]).exp() * adv[i];
        }
        s / n as f64
    };
    let surrogate_old = adv.iter().sum::<f64>() / n as f64;

    let mut scale = full_step_scale;
    for k in 0..cfg.backtrack_steps {
        let cand: Vec<f64> = old_params
            .iter()
            .zip(&dir)
            .map(|(p, d)| p + scale * d)
            .collect();
        policy.set_policy_params_flat(&cand);
        let db_new = policy.dist_batch(&states);
        let kl = policy.mean_kl_from(&frozen, &db_new);
        let improve = surrogate(policy) - surrogate_old;
        let expected = expected_improvement_full * cfg.backtrack_coeff.powi(k as i32);
        if kl.is_finite()
            && kl <= 1.5 * cfg.max_kl
            && improve > 0.0
            && improve / expected > cfg.accept_ratio
        {
            return Ok(StepReport {
                accepted: true,
                kl,
                surrogate_improvement: improve,
                backtracks: k,
                cg_residual,
            });
        }
        scale *= cfg.backtrack_coeff;
    }
    policy.set_policy_params_flat(&old_params);
    Ok(StepReport {
        accepted: false,
        kl: 0.0,
        surrogate_improvement: 0.0,
        backtracks: cfg.backtrack_steps,
        cg_residual,
    })
}
