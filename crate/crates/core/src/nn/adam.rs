use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::scalar::Scalar;

/// Adam moments for one parameter vector, with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub lr: T,
    pub weight_decay: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(param_count: usize, lr: T, weight_decay: T) -> Self {
        Self {
            m: vec![T::zero(); param_count],
            v: vec![T::zero(); param_count],
            step: 0,
            lr,
            weight_decay,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    pub fn for_net(net: &MlpParams<T>, lr: T, weight_decay: T) -> Self {
        Self::new(net.param_count(), lr, weight_decay)
    }

    /// One update. Non-finite gradients leave both parameters and moments untouched.
    pub fn apply(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer sized for {} parameters, got {} / {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "gradient entry {i} is {} at optimizer step {}",
                grads[i], self.step
            )));
        }
        self.step += 1;
        let one = T::one();
        let t = self.step as i32;
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        let shrink = one - self.lr * self.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] = params[i] * shrink - self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn step_net(&mut self, net: &mut MlpParams<T>, grads: &[T]) -> Result<()> {
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "gradient entry {i} is {} at optimizer step {}",
                grads[i], self.step
            )));
        }
        self.apply(net.params_mut(), grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_without_decay_are_identity() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut a = AdamState::new(3, 2e-4, 0.0);
        a.apply(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(a.step, 1);
    }

    #[test]
    fn first_step_is_a_signed_lr_step() {
        let mut p = vec![0.0f64, 0.0];
        let mut a = AdamState::new(2, 2e-4, 0.0);
        a.apply(&mut p, &[3.0, -0.01]).unwrap();
        assert!((p[0] + 2e-4).abs() < 1e-9);
        assert!((p[1] - 2e-4).abs() < 1e-8);
    }

    #[test]
    fn decay_shrinks_geometrically() {
        let mut p = vec![1.0];
        let mut a = AdamState::new(1, 2e-4, 1e-2);
        for _ in 0..3 {
            a.apply(&mut p, &[0.0]).unwrap();
        }
        assert!((p[0] - (1.0f64 - 2e-6).powi(3)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = vec![0.3, 0.7];
        let mut a = AdamState::new(2, 0.0, 1e-2);
        a.apply(&mut p, &[1.0, -4.0]).unwrap();
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![0.3];
        let mut a = AdamState::new(1, 1e-3, 0.0);
        assert!(matches!(a.apply(&mut p, &[f64::NAN]), Err(Error::Numerical(_))));
        assert_eq!((p[0], a.step, a.m[0]), (0.3, 0, 0.0));
    }
}
