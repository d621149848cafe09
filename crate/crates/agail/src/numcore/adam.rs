use crate::error::{AgailError, Result};

/// Adam optimizer state for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> AdamState {
        AdamState {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(AgailError::Input(format!(
                "adam_step: shape mismatch (state {}, params {}, grads {})",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(AgailError::Numerical(
                "adam_step: non-finite gradient".into(),
            ));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut st = AdamState::new(3, 1e-3);
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // Unrolling the recurrence at t=1: m̂ = g, v̂ = g², so the update is
        // lr·g/(|g| + ε) ≈ lr·sign(g).
        let lr = 1e-2;
        let mut st = AdamState::new(2, lr);
        let mut p = vec![0.0, 0.0];
        st.step(&mut p, &[3.0, -0.25]).unwrap();
        assert!((p[0] + lr).abs() < 1e-8, "{}", p[0]);
        assert!((p[1] - lr).abs() < 1e-7, "{}", p[1]);
    }

    #[test]
    fn two_steps_match_hand_unrolled_recurrence() {
        let lr = 1e-3;
        let g = 0.7;
        let mut st = AdamState::new(1, lr);
        let mut p = vec![0.0];
        st.step(&mut p, &[g]).unwrap();
        st.step(&mut p, &[-g]).unwrap();

        // Hand recurrence with (β1, β2, ε) = (0.9, 0.999, 1e-8).
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let upd1 = lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * (-g);
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        let upd2 =
            lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        let expected = -upd1 - upd2;
        assert!((p[0] - expected).abs() < 1e-15, "{} vs {}", p[0], expected);
        // First moment after g then -g: m2 = g(β1 − β1²)·(1 − β1)/(1 − β1)… i.e. (1-β1)(β1−1)g
        assert!((m2 - (1.0 - b1) * (b1 - 1.0) * g).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_error() {
        let mut st = AdamState::new(1, 1e-3);
        let mut p = vec![0.0];
        assert!(st.step(&mut p, &[f64::NAN]).is_err());
    }
}
