use super::{NdArray, NumError, Result, Scalar};

/// Adam hyperparameters. Only the learning rate varies between runs;
/// the moment decays and epsilon keep their customary defaults.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_learning_rate(1e-4)
    }
}

/// Bias-corrected Adam over a fixed list of parameter arrays.
pub struct Adam<E> {
    cfg: AdamConfig,
    first_moment: Vec<NdArray<E>>,
    second_moment: Vec<NdArray<E>>,
    step: u64,
}

impl<E: Scalar> Adam<E> {
    pub fn new(cfg: AdamConfig, shapes: &[Vec<usize>]) -> Self {
        Self {
            cfg,
            first_moment: shapes.iter().map(|s| NdArray::zeros(s)).collect(),
            second_moment: shapes.iter().map(|s| NdArray::zeros(s)).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. `grads[i]` pairs with `params[i]`.
    pub fn step(&mut self, params: &mut [NdArray<E>], grads: &[NdArray<E>]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(NumError::InvalidArgument {
                op: "adam_step",
                message: format!(
                    "{} params, {} grads, optimizer built for {}",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            });
        }
        self.step += 1;
        let b1 = E::from_f64(self.cfg.beta1);
        let b2 = E::from_f64(self.cfg.beta2);
        let eps = E::from_f64(self.cfg.epsilon);
        let alpha = E::from_f64(self.cfg.learning_rate);
        let bias1 = E::from_f64(1.0 - self.cfg.beta1.powi(self.step as i32));
        let bias2 = E::from_f64(1.0 - self.cfg.beta2.powi(self.step as i32));
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            param.same_shape(grad, "adam_step")?;
            param.same_shape(m, "adam_step")?;
            for (((p, &g), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (E::one() - b1) * g;
                *vi = b2 * *vi + (E::one() - b2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p = *p - alpha * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(data: Vec<f64>) -> NdArray<f64> {
        NdArray::from_vec(&[data.len()], data).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.1), &[vec![3]]);
        let mut params = vec![arr(vec![1.0, -2.0, 3.0])];
        let grads = vec![arr(vec![0.0, 0.0, 0.0])];
        adam.step(&mut params, &grads).unwrap();
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0, 3.0]);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        // With bias correction, the first update is alpha * g/(|g| + eps').
        let alpha = 0.01;
        let mut adam = Adam::new(AdamConfig::with_learning_rate(alpha), &[vec![2]]);
        let mut params = vec![arr(vec![0.0, 0.0])];
        let grads = vec![arr(vec![5.0, -0.25])];
        adam.step(&mut params, &grads).unwrap();
        assert!((params[0].data()[0] + alpha).abs() < 1e-6);
        assert!((params[0].data()[1] - alpha).abs() < 1e-6);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        // Hand-rolled scalar Adam for a single weight.
        let (alpha, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let gs = [2.0_f64, -1.0];
        let mut w = 0.3_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for (t, &g) in gs.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            w -= alpha * m_hat / (v_hat.sqrt() + eps);
        }

        let mut adam = Adam::new(AdamConfig::with_learning_rate(alpha), &[vec![1]]);
        let mut params = vec![arr(vec![0.3])];
        for &g in &gs {
            adam.step(&mut params, &[arr(vec![g])]).unwrap();
        }
        assert!((params[0].data()[0] - w).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.0), &[vec![2]]);
        let mut params = vec![arr(vec![4.0, 5.0])];
        adam.step(&mut params, &[arr(vec![1.0, -1.0])]).unwrap();
        assert_eq!(params[0].data(), &[4.0, 5.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut adam = Adam::new(AdamConfig::default(), &[vec![2]]);
        let mut params = vec![arr(vec![1.0, 2.0])];
        let err = adam.step(&mut params, &[arr(vec![1.0])]).unwrap_err();
        assert!(matches!(err, NumError::ShapeMismatch { .. }));
    }
}
