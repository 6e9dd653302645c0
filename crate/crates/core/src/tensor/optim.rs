use super::{ParamStore, Scalar};
use crate::error::{Result, ScanError};

/// Adam with bias correction. Moment buffers live on each [`super::Parameter`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of every parameter from its gradient buffer.
    pub fn step<T: Scalar>(&self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(ScanError::MissingGrad(p.name.clone()));
        }
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let eps = T::of(self.eps);
        for p in params.iter_mut() {
            p.step += 1;
            let t = p.step as i32;
            let c1 = T::of(1.0 - self.beta1.powi(t));
            let c2 = T::of(1.0 - self.beta2.powi(t));
            let lr = T::of(self.lr);
            let (values, grad) = split_value_grad(&mut p.tensor);
            for (((x, &g), m), v) in values
                .iter_mut()
                .zip(grad)
                .zip(p.first_moment.iter_mut())
                .zip(p.second_moment.iter_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn split_value_grad<T: Scalar>(t: &mut super::Tensor<T>) -> (&mut [T], &[T]) {
    let grad = t.grad.as_deref().expect("checked above");
    (t.data.as_mut_slice(), grad)
}

/// Scale all gradients by `max_norm / norm` when the global L2 norm exceeds
/// `max_norm`. Returns the norm measured before clipping.
pub fn clip_grad_norm<T: Scalar>(params: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter_map(|p| p.tensor.grad())
        .flat_map(|g| g.iter())
        .map(|&v| v.f64() * v.f64())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = T::of(max_norm / norm);
        for p in params.iter_mut() {
            if let Some(g) = p.tensor.grad_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(x)).unwrap();
        s
    }

    fn grad_norm(s: &ParamStore<f64>) -> f64 {
        s.iter()
            .flat_map(|p| p.tensor.grad().unwrap().to_vec())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut s = single(1.5);
        s.iter_mut().for_each(|p| p.tensor.accumulate_grad(&[0.0]));
        Adam::new(0.1).step(&mut s).unwrap();
        assert_eq!(s.flat_values(), vec![1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let lr = 5e-4;
        let mut s = single(0.0);
        s.iter_mut().for_each(|p| p.tensor.accumulate_grad(&[1.0]));
        Adam::new(lr).step(&mut s).unwrap();
        // m_hat = 1, v_hat = 1, so the update is lr / (1 + eps).
        let want = -lr / (1.0 + 1e-8);
        assert!((s.flat_values()[0] - want).abs() < 1e-6);
        assert_eq!(s.get(crate::tensor::ParamId(0)).step(), 1);
    }

    #[test]
    fn minimizes_square() {
        let mut s = single(1.0);
        let adam = Adam::new(0.05);
        for _ in 0..200 {
            s.zero_grad();
            let x = s.flat_values()[0];
            s.iter_mut().for_each(|p| p.tensor.accumulate_grad(&[2.0 * x]));
            adam.step(&mut s).unwrap();
        }
        assert!(s.flat_values()[0].abs() < 0.1, "{}", s.flat_values()[0]);
    }

    #[test]
    fn missing_grad_is_error() {
        let mut s = single(1.0);
        assert!(matches!(Adam::new(0.1).step(&mut s), Err(ScanError::MissingGrad(_))));
    }

    #[test]
    fn clip_examples() {
        let mut s = ParamStore::<f64>::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        s.iter_mut().for_each(|p| p.tensor.accumulate_grad(&[0.03, 0.04]));
        assert!((clip_grad_norm(&mut s, 0.1) - 0.05).abs() < 1e-15);
        assert_eq!(s.iter().next().unwrap().tensor.grad().unwrap(), &[0.03, 0.04]);

        s.zero_grad();
        s.iter_mut().for_each(|p| p.tensor.accumulate_grad(&[0.6, 0.8]));
        assert!((clip_grad_norm(&mut s, 0.1) - 1.0).abs() < 1e-15);
        assert!((grad_norm(&s) - 0.1).abs() < 1e-12);

        s.zero_grad();
        s.iter_mut().for_each(|p| p.tensor.accumulate_grad(&[0.0, 0.0]));
        assert_eq!(clip_grad_norm(&mut s, 0.1), 0.0);
        assert_eq!(s.iter().next().unwrap().tensor.grad().unwrap(), &[0.0, 0.0]);
    }
}
