//! Stochastic policies with categorical or diagonal-Gaussian heads, a
//! value head sharing the trunk, and generalized advantage estimation.
//!
//! Parameter layout conventions (flat vectors):
//!
//! - policy parameters: trunk ‖ policy head ‖ log-std (Gaussian only)
//! - value parameters: trunk ‖ value head
//!
//! The trunk is shared, so TRPO moves it through the policy vector and the
//! value regression moves it through the value vector.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::envs::{Action, ActionSpace};
use crate::error::{AgailError, Result};
use crate::numcore::{solve_spd, Activation, BatchCache, Matrix, Mlp};

const HIDDEN: usize = 100;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyHead {
    Categorical { n: usize },
    Gaussian { dim: usize },
}

/// Policy network with shared trunk: three 100-unit tanh layers feeding a
/// linear policy head and a linear scalar value head. Continuous policies
/// carry a state-independent learned log-std, initialized to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    trunk: Mlp,
    policy_head: Mlp,
    value_head: Mlp,
    log_std: Vec<f64>,
    head: PolicyHead,
}

/// Cached batch forward pass through trunk and policy head.
pub struct DistBatch {
    trunk_cache: BatchCache,
    head_cache: BatchCache,
}

impl DistBatch {
    /// Per-row distribution parameters: logits, or Gaussian means.
    pub fn params(&self) -> &Matrix {
        self.head_cache.output()
    }
}

/// Distribution parameters detached from the network, for KL against a
/// snapshot taken before an update.
#[derive(Debug, Clone)]
pub struct FrozenDist {
    pub params: Matrix,
    pub log_std: Vec<f64>,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|l| l.exp()).collect()
}

impl StochasticPolicy {
    pub fn new(state_dim: usize, action_space: &ActionSpace, rng: &mut ChaCha8Rng) -> Self {
        let (head, out_dim) = match action_space {
            ActionSpace::Discrete(n) => (PolicyHead::Categorical { n: *n }, *n),
            ActionSpace::Box { low, .. } => (PolicyHead::Gaussian { dim: low.len() }, low.len()),
        };
        let trunk = Mlp::new(
            &[state_dim, HIDDEN, HIDDEN, HIDDEN],
            &[Activation::Tanh, Activation::Tanh, Activation::Tanh],
            rng,
        );
        let policy_head = Mlp::new(&[HIDDEN, out_dim], &[Activation::Identity], rng);
        let value_head = Mlp::new(&[HIDDEN, 1], &[Activation::Identity], rng);
        let log_std = match &head {
            PolicyHead::Categorical { .. } => vec![],
            PolicyHead::Gaussian { dim } => vec![0.0; *dim],
        };
        StochasticPolicy {
            trunk,
            policy_head,
            value_head,
            log_std,
            head,
        }
    }

    pub fn head(&self) -> &PolicyHead {
        &self.head
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    // ----- parameter plumbing ---------------------------------------------

    pub fn policy_param_count(&self) -> usize {
        self.trunk.param_count() + self.policy_head.param_count() + self.log_std.len()
    }

    pub fn policy_params_flat(&self) -> Vec<f64> {
        let mut p = self.trunk.params_flat();
        p.extend(self.policy_head.params_flat());
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_policy_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.policy_param_count());
        let nt = self.trunk.param_count();
        let nh = self.policy_head.param_count();
        self.trunk.set_params_flat(&params[..nt]);
        self.policy_head.set_params_flat(&params[nt..nt + nh]);
        self.log_std.copy_from_slice(&params[nt + nh..]);
    }

    pub fn value_param_count(&self) -> usize {
        self.trunk.param_count() + self.value_head.param_count()
    }

    pub fn value_params_flat(&self) -> Vec<f64> {
        let mut p = self.trunk.params_flat();
        p.extend(self.value_head.params_flat());
        p
    }

    pub fn set_value_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.value_param_count());
        let nt = self.trunk.param_count();
        self.trunk.set_params_flat(&params[..nt]);
        self.value_head.set_params_flat(&params[nt..]);
    }

    // ----- single-state distribution ops ----------------------------------

    fn dist_params(&self, s: &[f64]) -> Result<Vec<f64>> {
        let h = self.trunk.forward(s)?;
        self.policy_head.forward(&h)
    }

    /// Samples an action and returns it with its log-probability.
    pub fn act(&self, s: &[f64], rng: &mut ChaCha8Rng) -> Result<(Action, f64)> {
        let params = self.dist_params(s)?;
        match &self.head {
            PolicyHead::Categorical { .. } => {
                let logp = log_softmax(&params);
                let u: f64 = rng.gen();
                let mut cum = 0.0;
                let mut pick = logp.len() - 1;
                for (i, lp) in logp.iter().enumerate() {
                    cum += lp.exp();
                    if u < cum {
                        pick = i;
                        break;
                    }
                }
                Ok((Action::Discrete(pick), logp[pick]))
            }
            PolicyHead::Gaussian { dim } => {
                let mut a = Vec::with_capacity(*dim);
                let mut lp = 0.0;
                for j in 0..*dim {
                    let z: f64 = rng.sample(StandardNormal);
                    let sigma = self.log_std[j].exp();
                    a.push(params[j] + sigma * z);
                    lp += -0.5 * LN_2PI - self.log_std[j] - 0.5 * z * z;
                }
                Ok((Action::Continuous(a), lp))
            }
        }
    }

    /// Deterministic action: argmax logits, or the Gaussian mean.
    pub fn act_greedy(&self, s: &[f64]) -> Result<Action> {
        let params = self.dist_params(s)?;
        match &self.head {
            PolicyHead::Categorical { .. } => {
                let mut best = 0;
                for (i, v) in params.iter().enumerate() {
                    if *v > params[best] {
                        best = i;
                    }
                }
                Ok(Action::Discrete(best))
            }
            PolicyHead::Gaussian { .. } => Ok(Action::Continuous(params)),
        }
    }

    fn log_prob_from_params(&self, params: &[f64], a: &Action) -> f64 {
        match (&self.head, a) {
            (PolicyHead::Categorical { .. }, Action::Discrete(i)) => log_softmax(params)[*i],
            (PolicyHead::Gaussian { dim }, Action::Continuous(v)) => {
                let mut lp = 0.0;
                for j in 0..*dim {
                    let sigma = self.log_std[j].exp();
                    let z = (v[j] - params[j]) / sigma;
                    lp += -0.5 * LN_2PI - self.log_std[j] - 0.5 * z * z;
                }
                lp
            }
            _ => panic!("action kind does not match policy head"),
        }
    }

    pub fn log_prob(&self, s: &[f64], a: &Action) -> Result<f64> {
        Ok(self.log_prob_from_params(&self.dist_params(s)?, a))
    }

    pub fn entropy(&self, s: &[f64]) -> Result<f64> {
        let params = self.dist_params(s)?;
        Ok(match &self.head {
            PolicyHead::Categorical { .. } => {
                let lp = log_softmax(&params);
                -lp.iter().map(|l| l.exp() * l).sum::<f64>()
            }
            PolicyHead::Gaussian { dim } => (0..*dim)
                .map(|j| 0.5 * (LN_2PI + 1.0) + self.log_std[j])
                .sum(),
        })
    }

    pub fn value(&self, s: &[f64]) -> Result<f64> {
        let h = self.trunk.forward(s)?;
        Ok(self.value_head.forward(&h)?[0])
    }

    /// KL(old ‖ new) at one state.
    pub fn kl(old: &StochasticPolicy, new: &StochasticPolicy, s: &[f64]) -> Result<f64> {
        let po = old.dist_params(s)?;
        let pn = new.dist_params(s)?;
        Ok(kl_closed_form(
            &old.head,
            &po,
            &old.log_std,
            &pn,
            &new.log_std,
        ))
    }

    // ----- batch ops -------------------------------------------------------

    pub fn dist_batch(&self, states: &Matrix) -> DistBatch {
        let trunk_cache = self.trunk.forward_batch(states);
        let head_cache = self.policy_head.forward_batch(trunk_cache.output());
        DistBatch {
            trunk_cache,
            head_cache,
        }
    }

    pub fn freeze(&self, db: &DistBatch) -> FrozenDist {
        FrozenDist {
            params: db.params().clone(),
            log_std: self.log_std.clone(),
        }
    }

    pub fn log_probs_from(&self, db: &DistBatch, actions: &[Action]) -> Vec<f64> {
        (0..db.params().rows())
            .map(|i| self.log_prob_from_params(db.params().row(i), &actions[i]))
            .collect()
    }

    pub fn entropy_mean_from(&self, db: &DistBatch) -> f64 {
        let n = db.params().rows();
        let total: f64 = (0..n)
            .map(|i| {
                let params = db.params().row(i);
                match &self.head {
                    PolicyHead::Categorical { .. } => {
                        let lp = log_softmax(params);
                        -lp.iter().map(|l| l.exp() * l).sum::<f64>()
                    }
                    PolicyHead::Gaussian { dim } => (0..*dim)
                        .map(|j| 0.5 * (LN_2PI + 1.0) + self.log_std[j])
                        .sum(),
                }
            })
            .sum();
        total / n as f64
    }

    /// Mean KL(frozen ‖ current) over the batch.
    pub fn mean_kl_from(&self, old: &FrozenDist, db: &DistBatch) -> f64 {
        let n = db.params().rows();
        let total: f64 = (0..n)
            .map(|i| {
                kl_closed_form(
                    &self.head,
                    old.params.row(i),
                    &old.log_std,
                    db.params().row(i),
                    &self.log_std,
                )
            })
            .sum();
        total / n as f64
    }

    /// `Σ_i w_i ∇_θ log π(a_i | s_i)` in the flat policy layout.
    pub fn score_weighted_grad(
        &self,
        db: &DistBatch,
        actions: &[Action],
        weights: &[f64],
    ) -> Vec<f64> {
        let n = db.params().rows();
        assert_eq!(actions.len(), n);
        assert_eq!(weights.len(), n);
        let out_dim = db.params().cols();
        let mut upstream = Matrix::zeros(n, out_dim);
        let mut logstd_grad = vec![0.0; self.log_std.len()];
        for i in 0..n {
            let params = db.params().row(i);
            let w = weights[i];
            match (&self.head, &actions[i]) {
                (PolicyHead::Categorical { .. }, Action::Discrete(a)) => {
                    let p = softmax(params);
                    let row = upstream.row_mut(i);
                    for (j, pj) in p.iter().enumerate() {
                        row[j] = w * (if j == *a { 1.0 } else { 0.0 } - pj);
                    }
                }
                (PolicyHead::Gaussian { dim }, Action::Continuous(v)) => {
                    let row = upstream.row_mut(i);
                    for j in 0..*dim {
                        let sigma2 = (2.0 * self.log_std[j]).exp();
                        let diff = v[j] - params[j];
                        row[j] = w * diff / sigma2;
                        logstd_grad[j] += w * (diff * diff / sigma2 - 1.0);
                    }
                }
                _ => panic!("action kind does not match policy head"),
            }
        }
        let (head_grads, d_trunk_out) = self.policy_head.backward_batch(&db.head_cache, &upstream);
        let (trunk_grads, _) = self.trunk.backward_batch(&db.trunk_cache, &d_trunk_out);
        let mut g = trunk_grads;
        g.extend(head_grads);
        g.extend(logstd_grad);
        g
    }

    /// Fisher-vector product of the mean-KL Hessian at the current
    /// parameters: `F v = Jᵀ M J v`, with `M` the closed-form Fisher of the
    /// head distribution. Exact at the expansion point, where the KL
    /// gradient vanishes.
    pub fn fisher_vector_product(&self, db: &DistBatch, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.policy_param_count());
        let nt = self.trunk.param_count();
        let nh = self.policy_head.param_count();
        let (v_trunk, rest) = v.split_at(nt);
        let (v_head, v_logstd) = rest.split_at(nh);

        let n = db.params().rows();
        let d_trunk_out = self.trunk.jvp_batch(&db.trunk_cache, v_trunk, None);
        let mut dz = self
            .policy_head
            .jvp_batch(&db.head_cache, v_head, Some(&d_trunk_out));

        for i in 0..n {
            let params = db.params().row(i);
            match &self.head {
                PolicyHead::Categorical { .. } => {
                    let p = softmax(params);
                    let row = dz.row_mut(i);
                    let dot: f64 = p.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
                    for (j, pj) in p.iter().enumerate() {
                        row[j] = (pj * row[j] - pj * dot) / n as f64;
                    }
                }
                PolicyHead::Gaussian { dim } => {
                    let row = dz.row_mut(i);
                    for j in 0..*dim {
                        let sigma2 = (2.0 * self.log_std[j]).exp();
                        row[j] = row[j] / sigma2 / n as f64;
                    }
                }
            }
        }

        let (head_grads, d_out) = self.policy_head.backward_batch(&db.head_cache, &dz);
        let (trunk_grads, _) = self.trunk.backward_batch(&db.trunk_cache, &d_out);
        let mut out = trunk_grads;
        out.extend(head_grads);
        // Log-std block of the KL Hessian is 2·I, independent of the state.
        out.extend(v_logstd.iter().map(|x| 2.0 * x));
        out
    }

    /// Refits the value head in closed form by ridge regression of the
    /// targets on frozen trunk features. The trunk is trained only by
    /// the policy objective, so the fit cannot move the action
    /// distribution, and the exact solve tracks targets of any scale
    /// immediately.
    pub fn fit_value_ridge(
        &mut self,
        states: &Matrix,
        targets: &[f64],
        ridge: f64,
    ) -> Result<()> {
        let n = states.rows();
        assert_eq!(targets.len(), n);
        let tc = self.trunk.forward_batch(states);
        let phi = tc.output();
        let d = phi.cols() + 1; // trailing constant feature for the bias
        let mut a = Matrix::zeros(d, d);
        let mut b = vec![0.0f64; d];
        let feat = |row: &[f64], j: usize| if j < row.len() { row[j] } else { 1.0 };
        for i in 0..n {
            let row = phi.row(i);
            for j in 0..d {
                let fj = feat(row, j);
                b[j] += fj * targets[i] / n as f64;
                for k in j..d {
                    let v = a.get(j, k) + fj * feat(row, k) / n as f64;
                    a.set(j, k, v);
                    a.set(k, j, v);
                }
            }
        }
        for j in 0..d {
            a.set(j, j, a.get(j, j) + ridge);
        }
        let w = solve_spd(&a, &b).ok_or_else(|| {
            AgailError::Numerical("value ridge system not positive definite".into())
        })?;
        let head = &mut self.value_head.layers_mut()[0];
        head.weight.data_mut().copy_from_slice(&w[..d - 1]);
        head.bias[0] = w[d - 1];
        Ok(())
    }

    pub fn values_batch(&self, states: &Matrix) -> Vec<f64> {
        let tc = self.trunk.forward_batch(states);
        let vc = self.value_head.forward_batch(tc.output());
        (0..states.rows()).map(|i| vc.output().get(i, 0)).collect()
    }

    /// Mean-squared-error value regression: returns the loss and its
    /// gradient in the flat value layout.
    pub fn value_loss_grad(&self, states: &Matrix, targets: &[f64]) -> (f64, Vec<f64>) {
        let n = states.rows();
        assert_eq!(targets.len(), n);
        let tc = self.trunk.forward_batch(states);
        let vc = self.value_head.forward_batch(tc.output());
        let mut upstream = Matrix::zeros(n, 1);
        let mut loss = 0.0;
        for i in 0..n {
            let diff = vc.output().get(i, 0) - targets[i];
            loss += diff * diff;
            upstream.set(i, 0, 2.0 * diff / n as f64);
        }
        let (head_grads, d_out) = self.value_head.backward_batch(&vc, &upstream);
        let (trunk_grads, _) = self.trunk.backward_batch(&tc, &d_out);
        let mut g = trunk_grads;
        g.extend(head_grads);
        (loss / n as f64, g)
    }

    /// Mean negative log-likelihood of the given actions and its gradient
    /// in the flat policy layout (behavior-cloning loss).
    pub fn nll_loss_grad(&self, states: &Matrix, actions: &[Action]) -> (f64, Vec<f64>) {
        let db = self.dist_batch(states);
        let n = states.rows();
        let lps = self.log_probs_from(&db, actions);
        let nll = -lps.iter().sum::<f64>() / n as f64;
        let weights = vec![-1.0 / n as f64; n];
        (nll, self.score_weighted_grad(&db, actions, &weights))
    }

    // ----- serialization ---------------------------------------------------

    /// Writes the checkpoint format: a header naming env and algorithm,
    /// then trunk, policy head, value head, and the log-std vector.
    pub fn save(&self, path: &Path, env_name: &str, algorithm: &str) -> Result<()> {
        let mut out = String::new();
        let head_tag = match &self.head {
            PolicyHead::Categorical { n } => format!("categorical:{n}"),
            PolicyHead::Gaussian { dim } => format!("gaussian:{dim}"),
        };
        out.push_str(&format!(
            "AGAIL-CKPT v1 env={env_name} algo={algorithm} head={head_tag}\n"
        ));
        self.trunk.write_text(&mut out);
        self.policy_head.write_text(&mut out);
        self.value_head.write_text(&mut out);
        let ls: Vec<String> = self.log_std.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("log_std {}\n", ls.join(" ")));
        fs::write(path, out)?;
        Ok(())
    }

    /// Loads a checkpoint, returning the policy plus its header fields
    /// `(env, algorithm)`.
    pub fn load(path: &Path) -> Result<(StochasticPolicy, String, String)> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let perr = |line: usize, msg: &str| AgailError::Parse {
            path: path.display().to_string(),
            line,
            message: msg.to_string(),
        };
        let header = lines.next().ok_or_else(|| perr(1, "empty file"))?;
        let mut env = None;
        let mut algo = None;
        let mut head_tag = None;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("AGAIL-CKPT") || parts.next() != Some("v1") {
            return Err(perr(1, "bad checkpoint magic"));
        }
        for kv in parts {
            match kv.split_once('=') {
                Some(("env", v)) => env = Some(v.to_string()),
                Some(("algo", v)) => algo = Some(v.to_string()),
                Some(("head", v)) => head_tag = Some(v.to_string()),
                _ => return Err(perr(1, "bad header field")),
            }
        }
        let head_tag = head_tag.ok_or_else(|| perr(1, "missing head field"))?;
        let head = match head_tag.split_once(':') {
            Some(("categorical", n)) => PolicyHead::Categorical {
                n: n.parse().map_err(|_| perr(1, "bad head size"))?,
            },
            Some(("gaussian", d)) => PolicyHead::Gaussian {
                dim: d.parse().map_err(|_| perr(1, "bad head size"))?,
            },
            _ => return Err(perr(1, "bad head tag")),
        };
        let trunk = Mlp::read_text(&mut lines).map_err(|e| perr(0, &e.to_string()))?;
        let policy_head = Mlp::read_text(&mut lines).map_err(|e| perr(0, &e.to_string()))?;
        let value_head = Mlp::read_text(&mut lines).map_err(|e| perr(0, &e.to_string()))?;
        let ls_line = lines.next().ok_or_else(|| perr(0, "missing log_std"))?;
        let ls_body = ls_line
            .strip_prefix("log_std")
            .ok_or_else(|| perr(0, "missing log_std"))?;
        let log_std: Vec<f64> = ls_body
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| perr(0, "bad log_std value")))
            .collect::<Result<_>>()?;
        Ok((
            StochasticPolicy {
                trunk,
                policy_head,
                value_head,
                log_std,
                head,
            },
            env.ok_or_else(|| perr(1, "missing env field"))?,
            algo.ok_or_else(|| perr(1, "missing algo field"))?,
        ))
    }
}

fn kl_closed_form(
    head: &PolicyHead,
    old_params: &[f64],
    old_log_std: &[f64],
    new_params: &[f64],
    new_log_std: &[f64],
) -> f64 {
    match head {
        PolicyHead::Categorical { .. } => {
            let lo = log_softmax(old_params);
            let ln = log_softmax(new_params);
            lo.iter()
                .zip(&ln)
                .map(|(a, b)| a.exp() * (a - b))
                .sum()
        }
        PolicyHead::Gaussian { dim } => (0..*dim)
            .map(|j| {
                let (lo, ln) = (old_log_std[j], new_log_std[j]);
                let (so2, sn2) = ((2.0 * lo).exp(), (2.0 * ln).exp());
                let dmu = old_params[j] - new_params[j];
                ln - lo + (so2 + dmu * dmu) / (2.0 * sn2) - 0.5
            })
            .sum(),
    }
}

// ----- rollout batches and advantage estimation ---------------------------

/// Aligned arrays over concatenated episodes of one rollout.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    /// Rewards used for the policy update (true or composed).
    pub rewards: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Exclusive end index of each episode within the arrays.
    pub episode_ends: Vec<usize>,
}

/// Generalized advantage estimation over concatenated episodes with no
/// terminal bootstrap (terminal value 0).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    episode_ends: &[usize],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    gae_bootstrapped(
        rewards,
        values,
        episode_ends,
        &vec![0.0; episode_ends.len()],
        gamma,
        lambda,
    )
}

/// GAE with a per-episode terminal value: 0 for episodes that actually
/// terminated, V of the cut-off state for episodes truncated by the
/// horizon.
pub fn gae_bootstrapped(
    rewards: &[f64],
    values: &[f64],
    episode_ends: &[usize],
    terminal_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(episode_ends.len(), terminal_values.len());
    let mut advantages = vec![0.0; rewards.len()];
    let mut start = 0;
    for (&end, &terminal_v) in episode_ends.iter().zip(terminal_values) {
        let mut acc = 0.0;
        for t in (start..end).rev() {
            let next_v = if t + 1 < end { values[t + 1] } else { terminal_v };
            let delta = rewards[t] + gamma * next_v - values[t];
            acc = delta + gamma * lambda * acc;
            advantages[t] = acc;
        }
        start = end;
    }
    let returns: Vec<f64> = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    (advantages, returns)
}

/// In-place standardization to zero mean and unit standard deviation.
/// Left untouched when the batch is degenerate (near-zero variance).
pub fn normalize_advantages(advantages: &mut [f64]) -> bool {
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    if var < 1e-12 {
        return false;
    }
    let std = var.sqrt();
    for a in advantages.iter_mut() {
        *a = (*a - mean) / std;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sub_rng, Stream};

    fn rng(seed: u64) -> ChaCha8Rng {
        sub_rng(seed, Stream::Other(7))
    }

    /// Policy whose trunk is zeroed so the head params are the bias values.
    fn fixed_policy(space: &ActionSpace, head_bias: &[f64], log_std: &[f64]) -> StochasticPolicy {
        let mut p = StochasticPolicy::new(3, space, &mut rng(0));
        let mut params = vec![0.0; p.policy_param_count()];
        let nt = p.trunk.param_count();
        let nh = p.policy_head.param_count();
        // head bias sits after the head weights
        let bias_off = nt + nh - head_bias.len();
        params[bias_off..nt + nh].copy_from_slice(head_bias);
        params[nt + nh..].copy_from_slice(log_std);
        p.set_policy_params_flat(&params);
        p
    }

    #[test]
    fn uniform_categorical_log_prob() {
        let p = fixed_policy(&ActionSpace::Discrete(2), &[0.0, 0.0], &[]);
        let lp = p.log_prob(&[0.1, 0.2, 0.3], &Action::Discrete(0)).unwrap();
        assert!((lp + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gaussian_act_log_prob_self_consistent() {
        let space = ActionSpace::Box {
            low: vec![-1.0, -1.0],
            high: vec![1.0, 1.0],
        };
        let p = StochasticPolicy::new(3, &space, &mut rng(1));
        let s = [0.3, -0.2, 0.5];
        let mut r = rng(2);
        for _ in 0..20 {
            let (a, lp) = p.act(&s, &mut r).unwrap();
            let lp2 = p.log_prob(&s, &a).unwrap();
            assert!((lp - lp2).abs() < 1e-10, "{lp} vs {lp2}");
        }
    }

    #[test]
    fn categorical_sampling_frequencies() {
        // logits ln(0.2), ln(0.3), ln(0.5)
        let p = fixed_policy(
            &ActionSpace::Discrete(3),
            &[0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()],
            &[],
        );
        let probs = [0.2, 0.3, 0.5];
        let s = [0.0, 0.0, 0.0];
        let mut r = rng(3);
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            if let (Action::Discrete(a), _) = p.act(&s, &mut r).unwrap() {
                counts[a] += 1;
            }
        }
        for i in 0..3 {
            let sigma = (n as f64 * probs[i] * (1.0 - probs[i])).sqrt();
            let diff = (counts[i] as f64 - n as f64 * probs[i]).abs();
            assert!(diff <= 3.0 * sigma, "action {i}: off by {diff}, σ={sigma}");
        }
    }

    #[test]
    fn gaussian_log_prob_at_mean() {
        let space = ActionSpace::Box {
            low: vec![-1.0],
            high: vec![1.0],
        };
        let p = fixed_policy(&space, &[0.7], &[0.0]);
        let lp = p
            .log_prob(&[0.0, 0.0, 0.0], &Action::Continuous(vec![0.7]))
            .unwrap();
        assert!((lp + 0.5 * LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn uniform_categorical_entropy_is_ln_n() {
        for n in [2usize, 3, 5] {
            let p = fixed_policy(&ActionSpace::Discrete(n), &vec![0.0; n], &[]);
            let h = p.entropy(&[0.0, 0.0, 0.0]).unwrap();
            assert!((h - (n as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn categorical_entropy_nonnegative() {
        let mut r = rng(4);
        use rand::Rng;
        for _ in 0..20 {
            let p = StochasticPolicy::new(3, &ActionSpace::Discrete(4), &mut r.clone());
            let s: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
            assert!(p.entropy(&s).unwrap() >= 0.0);
        }
    }

    #[test]
    fn gaussian_entropy_closed_form() {
        let space = ActionSpace::Box {
            low: vec![-1.0],
            high: vec![1.0],
        };
        let p = fixed_policy(&space, &[0.0], &[0.4]);
        let sigma = 0.4f64.exp();
        let expect = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln();
        assert!((p.entropy(&[0.0, 0.0, 0.0]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn kl_self_is_zero_and_closed_form_matches() {
        let p = StochasticPolicy::new(3, &ActionSpace::Discrete(4), &mut rng(5));
        let s = [0.1, -0.5, 0.9];
        assert!(StochasticPolicy::kl(&p, &p, &s).unwrap().abs() < 1e-14);

        // Two 1-D Gaussians: hand closed form ln(σ2/σ1) + (σ1²+(μ1−μ2)²)/(2σ2²) − ½
        let space = ActionSpace::Box {
            low: vec![-1.0],
            high: vec![1.0],
        };
        let p1 = fixed_policy(&space, &[0.3], &[0.2]);
        let p2 = fixed_policy(&space, &[-0.4], &[-0.1]);
        let (mu1, mu2) = (0.3, -0.4);
        let (s1, s2) = (0.2f64.exp(), (-0.1f64).exp());
        let expect = (s2 / s1).ln() + (s1 * s1 + (mu1 - mu2) * (mu1 - mu2)) / (2.0 * s2 * s2) - 0.5;
        let got = StochasticPolicy::kl(&p1, &p2, &s).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn score_grad_matches_finite_differences() {
        for space in [
            ActionSpace::Discrete(3),
            ActionSpace::Box {
                low: vec![-1.0, -1.0],
                high: vec![1.0, 1.0],
            },
        ] {
            let p = StochasticPolicy::new(3, &space, &mut rng(6));
            let mut r = rng(7);
            let states = Matrix::from_rows(&[
                vec![0.2, -0.4, 0.6],
                vec![-0.1, 0.3, 0.5],
            ]);
            let actions: Vec<Action> = (0..2)
                .map(|i| match &space {
                    ActionSpace::Discrete(_) => Action::Discrete(i % 3),
                    ActionSpace::Box { .. } => {
                        use rand::Rng;
                        Action::Continuous((0..2).map(|_| r.gen_range(-1.0..1.0)).collect())
                    }
                })
                .collect();
            let weights = [0.7, -1.3];
            let db = p.dist_batch(&states);
            let g = p.score_weighted_grad(&db, &actions, &weights);

            let eps = 1e-5;
            let base = p.policy_params_flat();
            // check a deterministic subset of coordinates for speed
            for i in (0..base.len()).step_by(997) {
                let eval = |pv: &[f64]| {
                    let mut q = p.clone();
                    q.set_policy_params_flat(pv);
                    let db = q.dist_batch(&states);
                    q.log_probs_from(&db, &actions)
                        .iter()
                        .zip(&weights)
                        .map(|(lp, w)| w * lp)
                        .sum::<f64>()
                };
                let mut pv = base.clone();
                pv[i] += eps;
                let hi = eval(&pv);
                pv[i] = base[i] - eps;
                let lo = eval(&pv);
                let fd = (hi - lo) / (2.0 * eps);
                assert!(
                    (g[i] - fd).abs() / fd.abs().max(1.0) <= 1e-4,
                    "coord {i}: {} vs {fd}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn fvp_is_symmetric_and_matches_kl_hessian() {
        use rand::Rng;
        let p = StochasticPolicy::new(2, &ActionSpace::Discrete(3), &mut rng(8));
        let states = Matrix::from_rows(&[vec![0.4, -0.6], vec![-0.2, 0.1], vec![0.9, 0.3]]);
        let db = p.dist_batch(&states);
        let mut r = rng(9);
        let dim = p.policy_param_count();
        let u: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let fu = p.fisher_vector_product(&db, &u);
        let fv = p.fisher_vector_product(&db, &v);
        let ufv: f64 = u.iter().zip(&fv).map(|(a, b)| a * b).sum();
        let vfu: f64 = v.iter().zip(&fu).map(|(a, b)| a * b).sum();
        assert!((ufv - vfu).abs() <= 1e-8, "{ufv} vs {vfu}");

        // vᵀFv should match the second-order KL expansion:
        // KL(θ ‖ θ + εv) ≈ ½ ε² vᵀFv.
        let frozen = p.freeze(&db);
        let eps = 1e-4;
        let mut q = p.clone();
        let base = p.policy_params_flat();
        let shifted: Vec<f64> = base.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        q.set_policy_params_flat(&shifted);
        let kl = q.mean_kl_from(&frozen, &q.dist_batch(&states));
        let vfv: f64 = v.iter().zip(&fv).map(|(a, b)| a * b).sum();
        let quad = 0.5 * eps * eps * vfv;
        assert!(
            (kl - quad).abs() / quad.abs().max(1e-12) < 1e-2,
            "{kl} vs {quad}"
        );
    }

    #[test]
    fn value_grad_matches_finite_differences() {
        let p = StochasticPolicy::new(3, &ActionSpace::Discrete(2), &mut rng(10));
        let states = Matrix::from_rows(&[vec![0.2, -0.4, 0.6], vec![-0.1, 0.3, 0.5]]);
        let targets = [1.5, -0.7];
        let (_, g) = p.value_loss_grad(&states, &targets);
        let base = p.value_params_flat();
        let eps = 1e-5;
        for i in (0..base.len()).step_by(991) {
            let eval = |pv: &[f64]| {
                let mut q = p.clone();
                q.set_value_params_flat(pv);
                let vs = q.values_batch(&states);
                vs.iter()
                    .zip(&targets)
                    .map(|(v, t)| (v - t) * (v - t))
                    .sum::<f64>()
                    / 2.0
            };
            let mut pv = base.clone();
            pv[i] += eps;
            let hi = eval(&pv);
            pv[i] = base[i] - eps;
            let lo = eval(&pv);
            let fd = (hi - lo) / (2.0 * eps);
            assert!((g[i] - fd).abs() / fd.abs().max(1.0) <= 1e-4);
        }
    }

    #[test]
    fn gae_lambda_zero_is_one_step_td() {
        let rewards = [1.0, 2.0, 3.0];
        let values = [0.5, 0.6, 0.7];
        let (adv, _) = gae(&rewards, &values, &[3], 0.9, 0.0);
        assert!((adv[0] - (1.0 + 0.9 * 0.6 - 0.5)).abs() < 1e-12);
        assert!((adv[1] - (2.0 + 0.9 * 0.7 - 0.6)).abs() < 1e-12);
        assert!((adv[2] - (3.0 - 0.7)).abs() < 1e-12);
    }

    #[test]
    fn gae_lambda_one_zero_values_is_reward_to_go() {
        let rewards = [1.0, 1.0, 1.0];
        let values = [0.0, 0.0, 0.0];
        let gamma = 0.5;
        let (adv, ret) = gae(&rewards, &values, &[3], gamma, 1.0);
        assert!((adv[0] - (1.0 + 0.5 + 0.25)).abs() < 1e-12);
        assert!((adv[2] - 1.0).abs() < 1e-12);
        assert_eq!(adv, ret);
    }

    #[test]
    fn gae_matches_double_loop_oracle() {
        use rand::Rng;
        let mut r = rng(11);
        let n = 20;
        let rewards: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (gamma, lambda) = (0.97, 0.9);
        let (adv, _) = gae(&rewards, &values, &[n], gamma, lambda);
        // brute force: A_t = Σ_k (γλ)^k δ_{t+k}
        for t in 0..n {
            let mut acc = 0.0;
            for k in 0..(n - t) {
                let idx = t + k;
                let next_v = if idx + 1 < n { values[idx + 1] } else { 0.0 };
                let delta = rewards[idx] + gamma * next_v - values[idx];
                acc += (gamma * lambda).powi(k as i32) * delta;
            }
            assert!((adv[t] - acc).abs() < 1e-10, "t={t}: {} vs {acc}", adv[t]);
        }
    }

    #[test]
    fn advantage_normalization() {
        use rand::Rng;
        let mut r = rng(12);
        let mut adv: Vec<f64> = (0..100).map(|_| r.gen_range(-5.0..5.0)).collect();
        assert!(normalize_advantages(&mut adv));
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
        let mut flat = vec![3.0; 10];
        assert!(!normalize_advantages(&mut flat));
        assert_eq!(flat, vec![3.0; 10]);
    }

    #[test]
    fn checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        for space in [
            ActionSpace::Discrete(2),
            ActionSpace::Box {
                low: vec![-1.0],
                high: vec![1.0],
            },
        ] {
            let p = StochasticPolicy::new(4, &space, &mut rng(13));
            p.save(&path, "cartpole", "trpo").unwrap();
            let (q, env, algo) = StochasticPolicy::load(&path).unwrap();
            assert_eq!(p, q);
            assert_eq!(env, "cartpole");
            assert_eq!(algo, "trpo");
        }
    }
}
