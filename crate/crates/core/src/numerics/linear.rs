use rand::Rng;

use super::{DenseArray, Param};
use crate::error::{shape_err, Result};
use crate::par;

/// Gradients returned by [`linear_backward`].
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: DenseArray,
    pub weight: DenseArray,
    pub bias: DenseArray,
}

fn check(
    input: &DenseArray,
    weight: &DenseArray,
    bias: &DenseArray,
) -> Result<(usize, usize, usize)> {
    let [m, n] = weight.shape() else {
        return shape_err(format!(
            "linear weights must be m×n, got {:?}",
            weight.shape()
        ));
    };
    let batch = match input.shape() {
        [k] if k == n => 1,
        [b, k] if k == n => *b,
        s => return shape_err(format!("linear expects inputs of width {n}, got {s:?}")),
    };
    if bias.shape() != [*m] {
        return shape_err(format!("linear bias must be [{m}], got {:?}", bias.shape()));
    }
    Ok((batch, *m, *n))
}

/// Affine map `W·x + b` applied to a vector or to each row of a batch.
pub fn linear(input: &DenseArray, weight: &DenseArray, bias: &DenseArray) -> Result<DenseArray> {
    let (batch, m, n) = check(input, weight, bias)?;
    let shape = if input.ndim() == 1 {
        vec![m]
    } else {
        vec![batch, m]
    };
    let mut out = DenseArray::zeros(&shape);
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    par::for_each_chunk_mut(out.data_mut(), m, |bi, y| {
        let xr = &x[bi * n..(bi + 1) * n];
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = b[o]
                + w[o * n..(o + 1) * n]
                    .iter()
                    .zip(xr)
                    .map(|(a, c)| a * c)
                    .sum::<f64>();
        }
    });
    out.ensure_finite("linear")?;
    Ok(out)
}

pub fn linear_backward(
    input: &DenseArray,
    weight: &DenseArray,
    dout: &DenseArray,
) -> Result<LinearGrads> {
    let m = weight.shape().first().copied().unwrap_or(0);
    let (batch, m, n) = check(input, weight, &DenseArray::zeros(&[m]))?;
    if dout.len() != batch * m {
        return shape_err(format!(
            "linear upstream gradient has {} values, expected {}",
            dout.len(),
            batch * m
        ));
    }
    let x = input.data();
    let w = weight.data();
    let g = dout.data();
    let mut dx = DenseArray::zeros(input.shape());
    par::for_each_chunk_mut(dx.data_mut(), n, |bi, dxr| {
        let gr = &g[bi * m..(bi + 1) * m];
        for (o, &go) in gr.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            for (d, wv) in dxr.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                *d += go * wv;
            }
        }
    });
    let acc = par::ordered_sum(batch, m * n + m, |items, acc| {
        let (dw, db) = acc.split_at_mut(m * n);
        for bi in items {
            let xr = &x[bi * n..(bi + 1) * n];
            let gr = &g[bi * m..(bi + 1) * m];
            for (o, &go) in gr.iter().enumerate() {
                db[o] += go;
                if go == 0.0 {
                    continue;
                }
                for (d, xv) in dw[o * n..(o + 1) * n].iter_mut().zip(xr) {
                    *d += go * xv;
                }
            }
        }
    });
    let (dw, db) = acc.split_at(m * n);
    Ok(LinearGrads {
        input: dx,
        weight: DenseArray::new(vec![m, n], dw.to_vec())?,
        bias: DenseArray::new(vec![m], db.to_vec())?,
    })
}

/// Fully connected layer owning its weights.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                DenseArray::from_fn(&[fan_out, fan_in], |_| rng.gen_range(-bound..bound)),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                DenseArray::from_fn(&[fan_out], |_| rng.gen_range(-bound..bound)),
            ),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn forward(&self, input: &DenseArray) -> Result<DenseArray> {
        linear(input, &self.weight.value, &self.bias.value)
    }

    pub fn backward(&mut self, input: &DenseArray, dout: &DenseArray) -> Result<DenseArray> {
        let g = linear_backward(input, &self.weight.value, dout)?;
        self.weight.grad.add_assign(&g.weight)?;
        self.bias.grad.add_assign(&g.bias)?;
        Ok(g.input)
    }
}
