//! Batch normalization over `batch × channels × length` (or `batch × features`).

use serde::{Deserialize, Serialize};

use super::{DenseArray, Param};
use crate::error::{shape_err, FldError, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub mode: BnMode,
    xhat: DenseArray,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    count: usize,
}

impl BnCache {
    pub fn batch_mean(&self) -> &[f64] {
        &self.batch_mean
    }

    pub fn batch_var(&self) -> &[f64] {
        &self.batch_var
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: DenseArray,
    pub running_var: DenseArray,
    pub momentum: f64,
    pub eps: f64,
}

fn layout(x: &DenseArray) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [b, c] => Ok((*b, *c, 1)),
        [b, c, l] => Ok((*b, *c, *l)),
        s => shape_err(format!("batchnorm input must be 2-D or 3-D, got {s:?}")),
    }
}

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(
                format!("{name}.gamma"),
                DenseArray::filled(&[channels], 1.0),
            ),
            beta: Param::new(format!("{name}.beta"), DenseArray::zeros(&[channels])),
            running_mean: DenseArray::zeros(&[channels]),
            running_var: DenseArray::filled(&[channels], 1.0),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&self, x: &DenseArray, mode: BnMode) -> Result<(DenseArray, BnCache)> {
        let (b, c, l) = layout(x)?;
        if c != self.channels() {
            return shape_err(format!(
                "batchnorm expects {} channels, got {c}",
                self.channels()
            ));
        }
        let count = b * l;
        let xd = x.data();
        let (mean, var) = match mode {
            BnMode::Train => {
                if b < 2 {
                    return Err(FldError::BatchTooSmall(b));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        s += xd[(bi * c + ch) * l..(bi * c + ch + 1) * l]
                            .iter()
                            .sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut v = 0.0;
                    for bi in 0..b {
                        v += xd[(bi * c + ch) * l..(bi * c + ch + 1) * l]
                            .iter()
                            .map(|x| (x - m) * (x - m))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = v / count as f64;
                }
                (mean, var)
            }
            BnMode::Eval => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = DenseArray::zeros(x.shape());
        let mut y = DenseArray::zeros(x.shape());
        let g = self.gamma.value.data();
        let be = self.beta.value.data();
        {
            let xh = xhat.data_mut();
            let yd = y.data_mut();
            for bi in 0..b {
                for ch in 0..c {
                    let off = (bi * c + ch) * l;
                    for t in off..off + l {
                        let h = (xd[t] - mean[ch]) * inv_std[ch];
                        xh[t] = h;
                        yd[t] = g[ch] * h + be[ch];
                    }
                }
            }
        }
        y.ensure_finite("batchnorm")?;
        Ok((
            y,
            BnCache {
                mode,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                count,
            },
        ))
    }

    /// Accumulates gamma/beta gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &BnCache, dy: &DenseArray) -> Result<DenseArray> {
        if dy.shape() != cache.xhat.shape() {
            return shape_err(format!(
                "batchnorm upstream gradient {:?}, expected {:?}",
                dy.shape(),
                cache.xhat.shape()
            ));
        }
        let (b, c, l) = layout(dy)?;
        let g = self.gamma.value.data();
        let dyd = dy.data();
        let xh = cache.xhat.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * l;
                for t in off..off + l {
                    dgamma[ch] += dyd[t] * xh[t];
                    dbeta[ch] += dyd[t];
                }
            }
        }
        let mut dx = DenseArray::zeros(dy.shape());
        let dxd = dx.data_mut();
        let m = cache.count as f64;
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * l;
                let scale = g[ch] * cache.inv_std[ch];
                match cache.mode {
                    BnMode::Train => {
                        let mdy = dbeta[ch] / m;
                        let mdyx = dgamma[ch] / m;
                        for t in off..off + l {
                            dxd[t] = scale * (dyd[t] - mdy - xh[t] * mdyx);
                        }
                    }
                    BnMode::Eval => {
                        for t in off..off + l {
                            dxd[t] = scale * dyd[t];
                        }
                    }
                }
            }
        }
        self.gamma
            .grad
            .data_mut()
            .iter_mut()
            .zip(&dgamma)
            .for_each(|(a, v)| *a += v);
        self.beta
            .grad
            .data_mut()
            .iter_mut()
            .zip(&dbeta)
            .for_each(|(a, v)| *a += v);
        Ok(dx)
    }

    /// Folds a train-mode batch's statistics into the running estimates
    /// (unbiased variance, exponential moving average).
    pub fn update_running(&mut self, cache: &BnCache) {
        if cache.mode != BnMode::Train {
            return;
        }
        let n = cache.count as f64;
        let corr = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let mom = self.momentum;
        for (r, m) in self
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(&cache.batch_mean)
        {
            *r = (1.0 - mom) * *r + mom * m;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = (1.0 - mom) * *r + mom * v * corr;
        }
    }
}
