//! Gradient descent with classical momentum.

use ndarray::Array2;

pub struct MomentumSgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Array2<f64>>,
}

impl MomentumSgd {
    pub fn new(learning_rate: f64, momentum: f64, shapes: &[(usize, usize)]) -> Self {
        MomentumSgd {
            learning_rate,
            momentum,
            velocity: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    /// v <- momentum * v + g;  p <- p - lr * v
    pub fn step(&mut self, params: &mut [super::Param], grads: &[Array2<f64>]) {
        debug_assert_eq!(params.len(), grads.len());
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            vel.zip_mut_with(grad, |v, &g| *v = *v * self.momentum + g);
            param.value.zip_mut_with(vel, |p, &v| *p -= self.learning_rate * v);
        }
    }
}
