//! Central-difference gradient verification.

use super::Parameterized;
use crate::error::Result;

/// Relative error between an analytic and a numeric gradient, both given as
/// flat vectors: `‖a − n‖ / max(‖a‖ + ‖n‖, 1e-8)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-parameter relative error.
    pub max_rel_error: f64,
    pub per_param: Vec<(String, f64)>,
}

/// Compares the gradients written by `loss_and_grad` with central
/// differences of `loss` at step `h`, one named parameter at a time.
///
/// `loss_and_grad` must zero and then fill every parameter gradient;
/// `loss` must be deterministic and leave the model unchanged.
pub fn gradient_check<M, G, L>(
    model: &mut M,
    mut loss_and_grad: G,
    mut loss: L,
    h: f64,
) -> Result<GradCheckReport>
where
    M: Parameterized,
    G: FnMut(&mut M) -> Result<f64>,
    L: FnMut(&M) -> Result<f64>,
{
    loss_and_grad(model)?;
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let mut per_param = Vec::with_capacity(names.len());
    for (pi, name) in names.into_iter().enumerate() {
        let n = analytic[pi].len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params()[pi].value.data()[i];
            model.params_mut()[pi].value.data_mut()[i] = orig + h;
            let lp = loss(model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig - h;
            let lm = loss(model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig;
            *slot = (lp - lm) / (2.0 * h);
        }
        per_param.push((name, relative_error(&analytic[pi], &numeric)));
    }
    let max_rel_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_param,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{DenseArray, Param};

    struct Scalar(Param);

    impl Parameterized for Scalar {
        fn params(&self) -> Vec<&Param> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            vec![&mut self.0]
        }
    }

    fn model(x: f64) -> Scalar {
        Scalar(Param::new("x", DenseArray::new(vec![1], vec![x]).unwrap()))
    }

    #[test]
    fn quadratic() {
        let mut m = model(3.0);
        let rep = gradient_check(
            &mut m,
            |m| {
                let x = m.0.value.data()[0];
                m.0.grad.data_mut()[0] = 2.0 * x;
                Ok(x * x)
            },
            |m| Ok(m.0.value.data()[0].powi(2)),
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-9);
    }

    #[test]
    fn doubled_backward_is_detected() {
        let mut m = model(3.0);
        let rep = gradient_check(
            &mut m,
            |m| {
                let x = m.0.value.data()[0];
                m.0.grad.data_mut()[0] = 2.0 * 2.0 * x;
                Ok(x * x)
            },
            |m| Ok(m.0.value.data()[0].powi(2)),
            1e-6,
        )
        .unwrap();
        assert!((rep.max_rel_error - 1.0 / 3.0).abs() < 1e-6);
    }
}
