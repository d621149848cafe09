//! Discriminators: state-only `D(s)` for AGAIL and state-GAIL, and
//! state-action `D(s, a)` for the GAIL baseline.
//!
//! Label convention: the discriminator outputs the probability that its
//! input came from the *expert* (expert = 1, policy = 0), so its output is
//! directly usable as a reward that pays the policy for visiting
//! expert-like states.

use rand_chacha::ChaCha8Rng;

use crate::error::{AgailError, Result};
use crate::numcore::{Activation, AdamState, Matrix, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorMode {
    StateOnly,
    StateAction,
}

/// Logistic classifier over states (or state-action pairs) ending in a
/// single logit.
#[derive(Debug, Clone)]
pub struct Discriminator {
    net: Mlp,
    mode: DiscriminatorMode,
    state_dim: usize,
    action_dim: usize,
    adam: AdamState,
}

/// Binary cross-entropy before and after one update.
#[derive(Debug, Clone)]
pub struct DiscriminatorReport {
    pub bce_before: f64,
    pub bce_after: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Discriminator {
    /// `action_dim` is the encoded action width (one-hot size for
    /// discrete actions); it must be 0 for [`DiscriminatorMode::StateOnly`].
    pub fn new(
        mode: DiscriminatorMode,
        state_dim: usize,
        action_dim: usize,
        learning_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Discriminator {
        let input_dim = match mode {
            DiscriminatorMode::StateOnly => {
                assert_eq!(action_dim, 0, "state-only discriminator takes no action");
                state_dim
            }
            DiscriminatorMode::StateAction => state_dim + action_dim,
        };
        let net = Mlp::new(
            &[input_dim, 100, 100, 100, 1],
            &[
                Activation::Tanh,
                Activation::Tanh,
                Activation::Tanh,
                Activation::Identity,
            ],
            rng,
        );
        let adam = AdamState::new(net.param_count(), learning_rate);
        Discriminator {
            net,
            mode,
            state_dim,
            action_dim,
            adam,
        }
    }

    pub fn mode(&self) -> DiscriminatorMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Probability the input came from the expert. The encoded action is
    /// required exactly when the mode is state-action.
    pub fn expert_prob(&self, s: &[f64], encoded_action: Option<&[f64]>) -> Result<f64> {
        let input = self.build_input(s, encoded_action)?;
        Ok(sigmoid(self.net.forward(&input)?[0]))
    }

    fn build_input(&self, s: &[f64], encoded_action: Option<&[f64]>) -> Result<Vec<f64>> {
        if s.len() != self.state_dim {
            return Err(AgailError::Input(format!(
                "discriminator: state dim {} != {}",
                s.len(),
                self.state_dim
            )));
        }
        match (self.mode, encoded_action) {
            (DiscriminatorMode::StateOnly, None) => Ok(s.to_vec()),
            (DiscriminatorMode::StateOnly, Some(_)) => Err(AgailError::Input(
                "state-only discriminator given an action".into(),
            )),
            (DiscriminatorMode::StateAction, Some(a)) if a.len() == self.action_dim => {
                let mut v = s.to_vec();
                v.extend_from_slice(a);
                Ok(v)
            }
            (DiscriminatorMode::StateAction, Some(a)) => Err(AgailError::Input(format!(
                "discriminator: action dim {} != {}",
                a.len(),
                self.action_dim
            ))),
            (DiscriminatorMode::StateAction, None) => Err(AgailError::Input(
                "state-action discriminator needs an action".into(),
            )),
        }
    }

    /// Expert probabilities for a batch of already-assembled inputs.
    pub fn expert_probs_batch(&self, inputs: &Matrix) -> Vec<f64> {
        let cache = self.net.forward_batch(inputs);
        (0..inputs.rows())
            .map(|i| sigmoid(cache.output().get(i, 0)))
            .collect()
    }

    /// Mean binary cross-entropy of the labeled batches.
    pub fn bce(&self, policy_inputs: &Matrix, expert_inputs: &Matrix) -> f64 {
        let eps = 1e-12;
        let mut loss = 0.0;
        for p in self.expert_probs_batch(policy_inputs) {
            loss += -(1.0 - p + eps).ln();
        }
        for p in self.expert_probs_batch(expert_inputs) {
            loss += -(p + eps).ln();
        }
        loss / (policy_inputs.rows() + expert_inputs.rows()) as f64
    }

    /// BCE and its gradient over the flat parameters.
    pub fn bce_loss_grad(
        &self,
        policy_inputs: &Matrix,
        expert_inputs: &Matrix,
    ) -> (f64, Vec<f64>) {
        let loss = self.bce(policy_inputs, expert_inputs);
        let total = (policy_inputs.rows() + expert_inputs.rows()) as f64;
        let mut grads = vec![0.0; self.net.param_count()];
        // dBCE/dlogit = σ(z) for policy samples, σ(z) − 1 for expert samples
        for (inputs, is_expert) in [(policy_inputs, false), (expert_inputs, true)] {
            let cache = self.net.forward_batch(inputs);
            let mut upstream = Matrix::zeros(inputs.rows(), 1);
            for i in 0..inputs.rows() {
                let p = sigmoid(cache.output().get(i, 0));
                upstream.set(i, 0, (p - if is_expert { 1.0 } else { 0.0 }) / total);
            }
            let (g, _) = self.net.backward_batch(&cache, &upstream);
            for (acc, gi) in grads.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        (loss, grads)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.net.params_flat()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        self.net.set_params_flat(params);
    }

    /// One Adam step on binary cross-entropy with labels expert = 1,
    /// policy = 0. Batches must be non-empty and of equal size.
    pub fn update(
        &mut self,
        policy_inputs: &Matrix,
        expert_inputs: &Matrix,
    ) -> Result<DiscriminatorReport> {
        if policy_inputs.rows() == 0 || expert_inputs.rows() == 0 {
            return Err(AgailError::Input("discriminator update: empty batch".into()));
        }
        if policy_inputs.rows() != expert_inputs.rows() {
            return Err(AgailError::Input(format!(
                "discriminator update: batch sizes differ ({} vs {})",
                policy_inputs.rows(),
                expert_inputs.rows()
            )));
        }
        let (bce_before, grads) = self.bce_loss_grad(policy_inputs, expert_inputs);
        let mut params = self.net.params_flat();
        self.adam.step(&mut params, &grads)?;
        self.net.set_params_flat(&params);
        Ok(DiscriminatorReport {
            bce_before,
            bce_after: self.bce(policy_inputs, expert_inputs),
        })
    }

    #[cfg(test)]
    pub(crate) fn set_zero_for_test(&mut self) {
        self.zero_params();
    }

    #[cfg(test)]
    fn zero_params(&mut self) {
        self.net.set_params_flat(&vec![0.0; self.net.param_count()]);
    }
}

/// Bayes-optimal discriminator on a finite state set:
/// `D*(s) = ν_E(s) / (ν_E(s) + ν_π(s))` under the expert-label convention.
/// States with zero mass in both tables yield `None` and are excluded
/// from comparisons.
pub fn bayes_optimal_check(tabular_nu_pi: &[f64], tabular_nu_e: &[f64]) -> Vec<Option<f64>> {
    assert_eq!(tabular_nu_pi.len(), tabular_nu_e.len());
    tabular_nu_pi
        .iter()
        .zip(tabular_nu_e)
        .map(|(&pi, &e)| {
            if pi + e == 0.0 {
                None
            } else {
                Some(e / (e + pi))
            }
        })
        .collect()
}
