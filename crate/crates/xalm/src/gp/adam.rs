//! Adaptive-moment gradient-ascent updates for the hyperparameter search.

use ndarray::Array1;

#[derive(Debug)]
pub(crate) struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Array1<f64>,
    v: Array1<f64>,
    t: u32,
}

impl Adam {
    pub fn new(dim: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: Array1::zeros(dim),
            v: Array1::zeros(dim),
            t: 0,
        }
    }

    /// One ascent step along `gradient` (bias-corrected first/second moments).
    pub fn step(&mut self, params: &mut Array1<f64>, gradient: &Array1<f64>) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gradient[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * gradient[i] * gradient[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] += self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ascends_a_concave_quadratic() {
        // maximize −(x−3)²: gradient 2(3−x).
        let mut params = array![0.0];
        let mut adam = Adam::new(1, 0.1, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            let grad = array![2.0 * (3.0 - params[0])];
            adam.step(&mut params, &grad);
        }
        assert!((params[0] - 3.0).abs() < 1e-2, "got {}", params[0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr·sign(grad).
        let mut params = array![1.0, 1.0];
        let mut adam = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut params, &array![5.0, -0.25]);
        assert!((params[0] - 1.1).abs() < 1e-6);
        assert!((params[1] - 0.9).abs() < 1e-6);
    }
}
