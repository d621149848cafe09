//! The guide: a posterior network `Q(a_E | a, s)` scoring demonstrated
//! actions against the action the current policy takes at the same state.
//! Its likelihood of the demonstrated action is the auxiliary reward, and
//! minimizing its negative log-likelihood tightens the variational lower
//! bound on the mutual information between demonstrated and policy
//! actions.

use rand_chacha::ChaCha8Rng;

use crate::envs::{Action, ActionSpace};
use crate::error::{AgailError, Result};
use crate::numcore::{Activation, AdamState, Matrix, Mlp};
use crate::policy::PolicyHead;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One training/evaluation sample: the demonstrated state, the encoded
/// action the policy produced there, and the demonstrated action.
#[derive(Debug, Clone)]
pub struct GuideSample {
    pub state: Vec<f64>,
    pub policy_action: Vec<f64>,
    pub expert_action: Action,
}

/// Negative log-likelihood before and after one update.
#[derive(Debug, Clone)]
pub struct GuideReport {
    pub nll_before: f64,
    pub nll_after: f64,
}

/// Posterior network over expert actions given `(s, a)`. Discrete heads
/// emit categorical logits; continuous heads emit per-dimension mean and
/// log-std. One set of weights is shared across all demonstrated states
/// and actions.
#[derive(Debug, Clone)]
pub struct Guide {
    net: Mlp,
    head: PolicyHead,
    state_dim: usize,
    action_dim: usize,
    adam: AdamState,
}

impl Guide {
    pub fn new(
        state_dim: usize,
        action_space: &ActionSpace,
        learning_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Guide {
        let action_dim = action_space.encoded_dim();
        let (head, out_dim) = match action_space {
            ActionSpace::Discrete(n) => (PolicyHead::Categorical { n: *n }, *n),
            ActionSpace::Box { low, .. } => {
                (PolicyHead::Gaussian { dim: low.len() }, 2 * low.len())
            }
        };
        let net = Mlp::new(
            &[state_dim + action_dim, 100, 100, 100, out_dim],
            &[
                Activation::Tanh,
                Activation::Tanh,
                Activation::Tanh,
                Activation::Identity,
            ],
            rng,
        );
        let adam = AdamState::new(net.param_count(), learning_rate);
        Guide {
            net,
            head,
            state_dim,
            action_dim,
            adam,
        }
    }

    pub fn head(&self) -> &PolicyHead {
        &self.head
    }

    fn inputs(&self, batch: &[GuideSample]) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = batch
            .iter()
            .map(|s| {
                if s.state.len() != self.state_dim || s.policy_action.len() != self.action_dim {
                    return Err(AgailError::Input("guide sample dims mismatch".into()));
                }
                let mut v = s.state.clone();
                v.extend_from_slice(&s.policy_action);
                Ok(v)
            })
            .collect::<Result<_>>()?;
        Ok(Matrix::from_rows(&rows))
    }

    fn log_q_row(&self, params: &[f64], expert_action: &Action) -> f64 {
        match (&self.head, expert_action) {
            (PolicyHead::Categorical { n }, Action::Discrete(a)) => {
                let max = params.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse =
                    max + params.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                debug_assert!(*a < *n);
                params[*a] - lse
            }
            (PolicyHead::Gaussian { dim }, Action::Continuous(v)) => {
                let mut lp = 0.0;
                for j in 0..*dim {
                    let (mu, ell) = (params[j], params[dim + j]);
                    let z = (v[j] - mu) * (-ell).exp();
                    lp += -0.5 * LN_2PI - ell - 0.5 * z * z;
                }
                lp
            }
            _ => panic!("expert action kind does not match guide head"),
        }
    }

    /// Mean negative log-likelihood of the demonstrated actions.
    pub fn nll(&self, batch: &[GuideSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(AgailError::Input("guide nll: empty batch".into()));
        }
        let inputs = self.inputs(batch)?;
        let cache = self.net.forward_batch(&inputs);
        let total: f64 = batch
            .iter()
            .enumerate()
            .map(|(i, s)| -self.log_q_row(cache.output().row(i), &s.expert_action))
            .sum();
        Ok(total / batch.len() as f64)
    }

    /// Mean NLL and its gradient over the flat parameters.
    pub fn nll_grad(&self, batch: &[GuideSample]) -> Result<(f64, Vec<f64>)> {
        let nll = self.nll(batch)?;
        let inputs = self.inputs(batch)?;
        let cache = self.net.forward_batch(&inputs);
        let n = batch.len() as f64;
        let out_dim = self.net.output_dim();
        let mut upstream = Matrix::zeros(batch.len(), out_dim);
        for (i, sample) in batch.iter().enumerate() {
            let params = cache.output().row(i).to_vec();
            let row = upstream.row_mut(i);
            match (&self.head, &sample.expert_action) {
                (PolicyHead::Categorical { .. }, Action::Discrete(a)) => {
                    let max = params.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = params.iter().map(|z| (z - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for (j, e) in exps.iter().enumerate() {
                        row[j] = (e / sum - if j == *a { 1.0 } else { 0.0 }) / n;
                    }
                }
                (PolicyHead::Gaussian { dim }, Action::Continuous(v)) => {
                    for j in 0..*dim {
                        let (mu, ell) = (params[j], params[dim + j]);
                        let inv_sigma = (-ell).exp();
                        let z = (v[j] - mu) * inv_sigma;
                        row[j] = -z * inv_sigma / n;
                        row[dim + j] = (1.0 - z * z) / n;
                    }
                }
                _ => panic!("expert action kind does not match guide head"),
            }
        }
        let (grads, _) = self.net.backward_batch(&cache, &upstream);
        Ok((nll, grads))
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.net.params_flat()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        self.net.set_params_flat(params);
    }

    /// One Adam step minimizing the mean NLL. A no-op on an empty batch
    /// (no demonstrated actions survived masking).
    pub fn update(&mut self, batch: &[GuideSample]) -> Result<Option<GuideReport>> {
        if batch.is_empty() {
            return Ok(None);
        }
        let (nll_before, grads) = self.nll_grad(batch)?;
        let mut params = self.net.params_flat();
        self.adam.step(&mut params, &grads)?;
        self.net.set_params_flat(&params);
        Ok(Some(GuideReport {
            nll_before,
            nll_after: self.nll(batch)?,
        }))
    }

    #[cfg(test)]
    pub(crate) fn set_zero_for_test(&mut self) {
        self.net.set_params_flat(&vec![0.0; self.net.param_count()]);
    }

    /// Bounded guidance reward in (0, 1]: posterior mass of the
    /// demonstrated action (discrete), or its density normalized by the
    /// density at the mode (continuous).
    pub fn reward(&self, expert_action: &Action, policy_action: &[f64], s: &[f64]) -> Result<f64> {
        let mut input = s.to_vec();
        input.extend_from_slice(policy_action);
        let params = self.net.forward(&input)?;
        Ok(match (&self.head, expert_action) {
            (PolicyHead::Categorical { .. }, Action::Discrete(a)) => {
                let max = params.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse =
                    max + params.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                (params[*a] - lse).exp()
            }
            (PolicyHead::Gaussian { dim }, Action::Continuous(v)) => {
                let mut quad = 0.0;
                for j in 0..*dim {
                    let z = (v[j] - params[j]) * (-params[dim + j]).exp();
                    quad += z * z;
                }
                (-0.5 * quad).exp()
            }
            _ => panic!("expert action kind does not match guide head"),
        })
    }

    /// Variational-lower-bound estimate `mean log Q + Ĥ(a_E)` with the
    /// demonstrated-action entropy estimated from the batch marginal.
    pub fn lower_bound_estimate(&self, eval_batch: &[GuideSample]) -> Result<f64> {
        if eval_batch.is_empty() {
            return Err(AgailError::Input("lower bound: empty batch".into()));
        }
        let mean_log_q = -self.nll(eval_batch)?;
        Ok(mean_log_q + empirical_action_entropy(eval_batch, &self.head))
    }
}

/// Entropy of the demonstrated-action marginal: empirical frequencies for
/// discrete actions, per-dimension Gaussian fit for continuous ones.
fn empirical_action_entropy(batch: &[GuideSample], head: &PolicyHead) -> f64 {
    match head {
        PolicyHead::Categorical { n } => {
            let mut counts = vec![0usize; *n];
            for s in batch {
                if let Action::Discrete(a) = &s.expert_action {
                    counts[*a] += 1;
                }
            }
            let total = batch.len() as f64;
            counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / total;
                    -p * p.ln()
                })
                .sum()
        }
        PolicyHead::Gaussian { dim } => {
            let total = batch.len() as f64;
            (0..*dim)
                .map(|j| {
                    let vals: Vec<f64> = batch
                        .iter()
                        .map(|s| match &s.expert_action {
                            Action::Continuous(v) => v[j],
                            _ => unreachable!(),
                        })
                        .collect();
                    let mean = vals.iter().sum::<f64>() / total;
                    let var =
                        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / total;
                    0.5 * (LN_2PI + 1.0) + 0.5 * var.max(1e-12).ln()
                })
                .sum()
        }
    }
}
