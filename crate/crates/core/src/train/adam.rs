use super::TrainError;
use crate::model::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moments for every block of a [`ParamSet`], with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || params.blocks().iter().map(|b| vec![0.0; b.value.numel()]).collect();
        OptimizerState { config, first: zeros(), second: zeros(), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update at learning rate `lr`. `grads` is aligned with the
    /// parameter blocks; `None` leaves a block and its moments untouched. A
    /// non-finite gradient rejects the whole step before anything changes.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>], lr: f64) -> Result<(), TrainError> {
        if grads.len() != params.len() {
            return Err(TrainError::InvalidConfig(format!(
                "{} gradient blocks for {} parameter blocks",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let block = params.block(i);
            if g.len() != block.value.numel() {
                return Err(TrainError::InvalidConfig(format!(
                    "gradient for {} has {} entries, expected {}",
                    block.name,
                    g.len(),
                    block.value.numel()
                )));
            }
            if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteGradient { block: block.name.clone(), index: pos });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for ((p, gi), (mi, vi)) in params.value_mut(i).data_mut().iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(values: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        let n = values.len();
        p.push("p", Tensor::new([1, n], values));
        p
    }

    #[test]
    fn zero_gradient_changes_nothing_but_the_counter() {
        let mut p = single(vec![1.0, -2.0]);
        let before = p.clone();
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        opt.step(&mut p, &[Some(vec![0.0, 0.0])], 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = single(vec![0.0]);
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        for _ in 0..50 {
            opt.step(&mut p, &[Some(vec![3.0])], 0.01).unwrap();
        }
        assert!(p.block(0).value.data()[0] < -0.4);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = single(vec![0.8, -1.5, 0.3]);
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        let mut steps = 0;
        while p.block(0).value.norm() >= 1e-3 && steps < 2000 {
            let grad = p.block(0).value.data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &[Some(grad)], 1e-2).unwrap();
            steps += 1;
        }
        assert!(p.block(0).value.norm() < 1e-3, "after {steps} steps");
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = single(vec![1.0, 2.0]);
        let before = p.clone();
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        let err = opt.step(&mut p, &[Some(vec![0.5, f64::NAN])], 0.1).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient { index: 1, .. }));
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 0);
    }
}
