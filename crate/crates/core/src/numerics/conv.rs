//! One-dimensional "same" convolution (cross-correlation) with zero padding.

use rand::Rng;

use super::{DenseArray, Param};
use crate::error::{shape_err, Result};
use crate::par;

/// Gradients returned by [`conv1d_backward`].
#[derive(Debug, Clone)]
pub struct Conv1dGrads {
    pub input: DenseArray,
    pub weight: DenseArray,
    pub bias: DenseArray,
}

struct Dims {
    batch: usize,
    cin: usize,
    cout: usize,
    len: usize,
    k: usize,
}

fn dims(input: &DenseArray, weight: &DenseArray, bias: &DenseArray) -> Result<Dims> {
    let (batch, cin, len) = match input.shape() {
        [c, l] => (1, *c, *l),
        [b, c, l] => (*b, *c, *l),
        s => return shape_err(format!("conv1d input must be 2-D or 3-D, got {s:?}")),
    };
    let [cout, win, k] = weight.shape() else {
        return shape_err(format!(
            "conv1d kernels must be out×in×k, got {:?}",
            weight.shape()
        ));
    };
    if *win != cin {
        return shape_err(format!(
            "conv1d kernels expect {win} input channels, got {cin}"
        ));
    }
    if k % 2 == 0 {
        return shape_err(format!("conv1d kernel size must be odd, got {k}"));
    }
    if bias.shape() != [*cout] {
        return shape_err(format!(
            "conv1d bias must be [{cout}], got {:?}",
            bias.shape()
        ));
    }
    Ok(Dims {
        batch,
        cin,
        cout: *cout,
        len,
        k: *k,
    })
}

/// Valid output range `[lo, hi)` for tap offset `shift` on a length-`len`
/// signal; `None` when the tap falls entirely into the padding.
#[inline]
fn tap_range(shift: isize, len: usize) -> Option<(usize, usize)> {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo < hi).then_some((lo, hi))
}

fn forward_item(x: &[f64], w: &[f64], bias: &[f64], d: &Dims, y: &mut [f64]) {
    let pad = (d.k / 2) as isize;
    for o in 0..d.cout {
        let yrow = &mut y[o * d.len..(o + 1) * d.len];
        yrow.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..d.cin {
            let xrow = &x[i * d.len..(i + 1) * d.len];
            let wrow = &w[(o * d.cin + i) * d.k..(o * d.cin + i + 1) * d.k];
            for (kk, &wk) in wrow.iter().enumerate() {
                let shift = kk as isize - pad;
                let Some((lo, hi)) = tap_range(shift, d.len) else {
                    continue;
                };
                let xs = &xrow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                for (yv, xv) in yrow[lo..hi].iter_mut().zip(xs) {
                    *yv += wk * xv;
                }
            }
        }
    }
}

/// Cross-correlation with zero "same" padding plus bias.
///
/// `input` is `channels × length` or `batch × channels × length`; the output
/// keeps the input rank and length.
pub fn conv1d(input: &DenseArray, weight: &DenseArray, bias: &DenseArray) -> Result<DenseArray> {
    let d = dims(input, weight, bias)?;
    let mut out_shape = input.shape().to_vec();
    let rank = out_shape.len();
    out_shape[rank - 2] = d.cout;
    let mut out = DenseArray::zeros(&out_shape);
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let in_stride = d.cin * d.len;
    par::for_each_chunk_mut(out.data_mut(), d.cout * d.len, |bi, y| {
        forward_item(&x[bi * in_stride..(bi + 1) * in_stride], w, b, &d, y);
    });
    out.ensure_finite("conv1d")?;
    Ok(out)
}

/// Backward pass of [`conv1d`] given the upstream gradient `dout`.
pub fn conv1d_backward(
    input: &DenseArray,
    weight: &DenseArray,
    dout: &DenseArray,
) -> Result<Conv1dGrads> {
    let cout = weight.shape().first().copied().unwrap_or(0);
    let bias = DenseArray::zeros(&[cout]);
    let d = dims(input, weight, &bias)?;
    let mut expect = input.shape().to_vec();
    let rank = expect.len();
    expect[rank - 2] = d.cout;
    if dout.shape() != expect.as_slice() {
        return shape_err(format!(
            "conv1d upstream gradient {:?}, expected {:?}",
            dout.shape(),
            expect
        ));
    }
    let pad = (d.k / 2) as isize;
    let x = input.data();
    let w = weight.data();
    let g = dout.data();
    let in_stride = d.cin * d.len;
    let out_stride = d.cout * d.len;

    let mut dx = DenseArray::zeros(input.shape());
    par::for_each_chunk_mut(dx.data_mut(), in_stride, |bi, dxb| {
        let gb = &g[bi * out_stride..(bi + 1) * out_stride];
        for o in 0..d.cout {
            let grow = &gb[o * d.len..(o + 1) * d.len];
            for i in 0..d.cin {
                let dxrow = &mut dxb[i * d.len..(i + 1) * d.len];
                let wrow = &w[(o * d.cin + i) * d.k..(o * d.cin + i + 1) * d.k];
                for (kk, &wk) in wrow.iter().enumerate() {
                    let shift = kk as isize - pad;
                    let Some((lo, hi)) = tap_range(shift, d.len) else {
                        continue;
                    };
                    let dxs =
                        &mut dxrow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (dv, gv) in dxs.iter_mut().zip(&grow[lo..hi]) {
                        *dv += wk * gv;
                    }
                }
            }
        }
    });

    let wlen = d.cout * d.cin * d.k;
    let acc = par::ordered_sum(d.batch, wlen + d.cout, |items, acc| {
        let (dw, db) = acc.split_at_mut(wlen);
        for bi in items {
            let xb = &x[bi * in_stride..(bi + 1) * in_stride];
            let gb = &g[bi * out_stride..(bi + 1) * out_stride];
            for o in 0..d.cout {
                let grow = &gb[o * d.len..(o + 1) * d.len];
                db[o] += grow.iter().sum::<f64>();
                for i in 0..d.cin {
                    let xrow = &xb[i * d.len..(i + 1) * d.len];
                    let base = (o * d.cin + i) * d.k;
                    for kk in 0..d.k {
                        let shift = kk as isize - pad;
                        let Some((lo, hi)) = tap_range(shift, d.len) else {
                            continue;
                        };
                        let xs =
                            &xrow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                        dw[base + kk] +=
                            grow[lo..hi].iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    });
    let (dw, db) = acc.split_at(wlen);
    Ok(Conv1dGrads {
        input: dx,
        weight: DenseArray::new(weight.shape().to_vec(), dw.to_vec())?,
        bias: DenseArray::new(vec![d.cout], db.to_vec())?,
    })
}

/// Convolution layer owning its kernels and an optional bias.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Option<Param>,
    cout: usize,
}

impl Conv1d {
    /// Uniform init in `±1/sqrt(in·k)`.
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::without_bias(name, cin, cout, k, rng);
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let bias = DenseArray::from_fn(&[cout], |_| rng.gen_range(-bound..bound));
        layer.bias = Some(Param::new(format!("{name}.bias"), bias));
        layer
    }

    /// Kernels only; used in front of batch normalization, which would
    /// cancel a bias anyway.
    pub fn without_bias(name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let weight = DenseArray::from_fn(&[cout, cin, k], |_| rng.gen_range(-bound..bound));
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: None,
            cout,
        }
    }

    pub fn forward(&self, input: &DenseArray) -> Result<DenseArray> {
        match &self.bias {
            Some(b) => conv1d(input, &self.weight.value, &b.value),
            None => conv1d(input, &self.weight.value, &DenseArray::zeros(&[self.cout])),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, input: &DenseArray, dout: &DenseArray) -> Result<DenseArray> {
        let g = conv1d_backward(input, &self.weight.value, dout)?;
        self.weight.grad.add_assign(&g.weight)?;
        if let Some(b) = &mut self.bias {
            b.grad.add_assign(&g.bias)?;
        }
        Ok(g.input)
    }
}
