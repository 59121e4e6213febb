use serde::{Deserialize, Serialize};

use super::DenseArray;

/// Pointwise activations with their derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    /// ELU with alpha = 1.
    Elu,
    Softplus,
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softplus_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => relu(x),
            Activation::Elu => elu(x),
            Activation::Softplus => softplus(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => relu_grad(x),
            Activation::Elu => elu_grad(x),
            Activation::Softplus => softplus_grad(x),
        }
    }

    pub fn forward(self, x: &DenseArray) -> DenseArray {
        let mut y = x.clone();
        if self != Activation::Identity {
            y.data_mut().iter_mut().for_each(|v| *v = self.apply(*v));
        }
        y
    }

    /// Gradient w.r.t. the pre-activation `x` given upstream `dy`.
    pub fn backward(self, x: &DenseArray, dy: &DenseArray) -> DenseArray {
        let mut dx = dy.clone();
        if self != Activation::Identity {
            dx.data_mut()
                .iter_mut()
                .zip(x.data())
                .for_each(|(g, &xv)| *g *= self.derivative(xv));
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert!((elu(-50.0) + 1.0).abs() < 1e-9);
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(relu(-2.0), 0.0);
        assert_eq!(relu(3.0), 3.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-30.0) > 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_differences() {
        let h = 1e-6;
        for act in [Activation::Elu, Activation::Softplus, Activation::Relu] {
            for &x in &[-2.3, -0.4, 0.7, 3.1] {
                let num = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                let ana = act.derivative(x);
                assert!((num - ana).abs() < 1e-8, "{act:?} at {x}: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn elu_derivative_continuous_at_zero() {
        assert!((elu_grad(-1e-12) - elu_grad(1e-12)).abs() < 1e-11);
    }
}
