//! Comparison models: a variational autoencoder over flattened segments and
//! a one-step feed-forward predictor.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::state::{push_param, StateDict};
use crate::error::{shape_err, Result};
use crate::numerics::{
    softplus, softplus_grad, Activation, DenseArray, Linear, Mlp, MlpCache, Param, Parameterized,
};
use crate::signal::NormalizationStats;

/// Added to the softplus output so `ln σ` stays finite.
const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub d: usize,
    pub h: usize,
    /// Latent width per segment.
    pub c: usize,
    pub hidden: Vec<usize>,
    pub beta: f64,
}

impl VaeConfig {
    pub fn new(d: usize, h: usize, c: usize) -> Self {
        Self {
            d,
            h,
            c,
            hidden: vec![512, 256, 128],
            beta: 1e-3,
        }
    }
}

/// `KL(N(μ, σ²) ‖ N(0, 1))` summed over a latent vector.
pub fn kl_standard_normal(mean: &[f64], std: &[f64]) -> f64 {
    mean.iter()
        .zip(std)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0) - s.ln())
        .sum()
}

#[derive(Clone, Debug)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub norm: NormalizationStats,
    pub encoder: Mlp,
    pub mean_head: Linear,
    pub std_head: Linear,
    pub decoder: Mlp,
}

/// Outputs of [`VaeModel::forward`], each `batch × width`.
#[derive(Clone, Debug)]
pub struct VaeOutput {
    pub recon: DenseArray,
    pub mean: DenseArray,
    pub std: DenseArray,
}

pub struct VaeLoss {
    pub total: f64,
    pub mse: f64,
    pub kl: f64,
}

impl VaeModel {
    pub fn new(config: VaeConfig, norm: NormalizationStats, rng: &mut impl Rng) -> Result<Self> {
        if config.hidden.is_empty() {
            return shape_err("VAE needs at least one hidden layer");
        }
        let io = config.d * config.h;
        let mut enc_sizes = vec![io];
        enc_sizes.extend(&config.hidden);
        let last = *config.hidden.last().expect("non-empty");
        let mut dec_sizes = vec![config.c];
        dec_sizes.extend(config.hidden.iter().rev());
        dec_sizes.push(io);
        Ok(Self {
            encoder: Mlp::new(
                "vae.enc",
                &enc_sizes,
                Activation::Relu,
                Activation::Relu,
                rng,
            ),
            mean_head: Linear::new("vae.mean", last, config.c, rng),
            std_head: Linear::new("vae.std", last, config.c, rng),
            decoder: Mlp::new(
                "vae.dec",
                &dec_sizes,
                Activation::Relu,
                Activation::Identity,
                rng,
            ),
            config,
            norm,
        })
    }

    /// Encodes flattened segments (`batch × d·H`). With `noise` the latent
    /// is the reparameterized sample `μ + σ·ε`, otherwise the mean.
    pub fn forward(&self, x: &DenseArray, noise: Option<&DenseArray>) -> Result<VaeOutput> {
        Ok(self.forward_cached(x, noise)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn forward_cached(
        &self,
        x: &DenseArray,
        noise: Option<&DenseArray>,
    ) -> Result<(
        VaeOutput,
        (MlpCache, DenseArray, DenseArray, DenseArray, MlpCache),
    )> {
        let (hid, ecache) = self.encoder.forward(x)?;
        let mean = self.mean_head.forward(&hid)?;
        let s_pre = self.std_head.forward(&hid)?;
        let mut std = s_pre.clone();
        std.data_mut()
            .iter_mut()
            .for_each(|v| *v = softplus(*v) + STD_FLOOR);
        let mut z = mean.clone();
        if let Some(eps) = noise {
            if eps.shape() != mean.shape() {
                return shape_err("VAE noise must match the latent shape");
            }
            for ((zv, s), e) in z.data_mut().iter_mut().zip(std.data()).zip(eps.data()) {
                *zv += s * e;
            }
        }
        let (recon, dcache) = self.decoder.forward(&z)?;
        Ok((
            VaeOutput {
                recon,
                mean,
                std: std.clone(),
            },
            (ecache, hid, s_pre, z, dcache),
        ))
    }

    pub fn sample_noise(&self, batch: usize, rng: &mut impl Rng) -> DenseArray {
        DenseArray::from_fn(&[batch, self.config.c], |_| rng.sample(StandardNormal))
    }

    /// `MSE + β·KL`, KL summed over latent units and averaged over the batch.
    pub fn loss(&self, x: &DenseArray, noise: Option<&DenseArray>) -> Result<VaeLoss> {
        let out = self.forward(x, noise)?;
        Ok(self.loss_terms(x, &out))
    }

    fn loss_terms(&self, x: &DenseArray, out: &VaeOutput) -> VaeLoss {
        let mse = out
            .recon
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / x.len() as f64;
        let batch = out.mean.dim(0);
        let kl = kl_standard_normal(out.mean.data(), out.std.data()) / batch as f64;
        VaeLoss {
            total: mse + self.config.beta * kl,
            mse,
            kl,
        }
    }

    pub fn loss_backward(&mut self, x: &DenseArray, noise: Option<&DenseArray>) -> Result<VaeLoss> {
        let (out, (ecache, hid, s_pre, _z, dcache)) = self.forward_cached(x, noise)?;
        let l = self.loss_terms(x, &out);
        let n = x.len() as f64;
        let batch = out.mean.dim(0) as f64;
        let beta = self.config.beta;
        let drecon = DenseArray::new(
            out.recon.shape().to_vec(),
            out.recon
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| 2.0 * (a - b) / n)
                .collect(),
        )?;
        let dz = self.decoder.backward(&dcache, &drecon)?;
        let m = out.mean.data();
        let s = out.std.data();
        let mut dmean = dz.clone();
        let mut dstd_pre = dz.clone();
        for k in 0..m.len() {
            dmean.data_mut()[k] = dz.data()[k] + beta * m[k] / batch;
            let e = noise.map(|e| e.data()[k]).unwrap_or(0.0);
            let ds = dz.data()[k] * e + beta * (s[k] - 1.0 / s[k]) / batch;
            dstd_pre.data_mut()[k] = ds * softplus_grad(s_pre.data()[k]);
        }
        let mut dh = self.mean_head.backward(&hid, &dmean)?;
        dh.add_assign(&self.std_head.backward(&hid, &dstd_pre)?)?;
        self.encoder.backward(&ecache, &dh)?;
        Ok(l)
    }
}

impl Parameterized for VaeModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend([&self.mean_head.weight, &self.mean_head.bias]);
        v.extend([&self.std_head.weight, &self.std_head.bias]);
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend([&mut self.mean_head.weight, &mut self.mean_head.bias]);
        v.extend([&mut self.std_head.weight, &mut self.std_head.bias]);
        v.extend(self.decoder.params_mut());
        v
    }
}

impl StateDict for VaeModel {
    fn state_slots(&mut self) -> Vec<(String, &mut DenseArray)> {
        let mut out = Vec::new();
        for p in self.params_mut() {
            push_param(&mut out, p);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfConfig {
    pub d: usize,
    pub h: usize,
    pub hidden: Vec<usize>,
}

impl FfConfig {
    pub fn new(d: usize, h: usize) -> Self {
        Self {
            d,
            h,
            hidden: vec![512, 512],
        }
    }
}

/// Maps a flattened segment `s_t` to `s_{t+1}`.
#[derive(Clone, Debug)]
pub struct FfModel {
    pub config: FfConfig,
    pub norm: NormalizationStats,
    pub net: Mlp,
}

impl FfModel {
    pub fn new(config: FfConfig, norm: NormalizationStats, rng: &mut impl Rng) -> Self {
        let io = config.d * config.h;
        let mut sizes = vec![io];
        sizes.extend(&config.hidden);
        sizes.push(io);
        Self {
            net: Mlp::new("ff", &sizes, Activation::Elu, Activation::Identity, rng),
            config,
            norm,
        }
    }

    /// `i`-fold composition of the one-step map on `batch × d·H` inputs.
    pub fn predict(&self, x: &DenseArray, i: usize) -> Result<DenseArray> {
        let mut cur = x.clone();
        for _ in 0..i {
            cur = self.net.predict(&cur)?;
        }
        Ok(cur)
    }

    /// All steps `1..=n`: returned as `n` arrays shaped like `x`.
    pub fn rollout(&self, x: &DenseArray, n: usize) -> Result<Vec<DenseArray>> {
        let mut out = Vec::with_capacity(n);
        let mut cur = x.clone();
        for _ in 0..n {
            cur = self.net.predict(&cur)?;
            out.push(cur.clone());
        }
        Ok(out)
    }

    pub fn loss(&self, x: &DenseArray, y: &DenseArray) -> Result<f64> {
        let p = self.net.predict(x)?;
        Ok(mse(&p, y))
    }

    pub fn loss_backward(&mut self, x: &DenseArray, y: &DenseArray) -> Result<f64> {
        let (p, cache) = self.net.forward(x)?;
        let n = y.len() as f64;
        let g = DenseArray::new(
            p.shape().to_vec(),
            p.data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| 2.0 * (a - b) / n)
                .collect(),
        )?;
        self.net.backward(&cache, &g)?;
        Ok(mse(&p, y))
    }
}

fn mse(a: &DenseArray, b: &DenseArray) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / a.len() as f64
}

impl Parameterized for FfModel {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

impl StateDict for FfModel {
    fn state_slots(&mut self) -> Vec<(String, &mut DenseArray)> {
        let mut out = Vec::new();
        for p in self.net.params_mut() {
            push_param(&mut out, p);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_vae(beta: f64) -> VaeModel {
        let mut cfg = VaeConfig::new(2, 3, 2);
        cfg.hidden = vec![5, 4];
        cfg.beta = beta;
        VaeModel::new(
            cfg,
            NormalizationStats::identity(2),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap()
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_standard_normal(&[0.0], &[1.0]), 0.0);
        assert!((kl_standard_normal(&[1.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn beta_zero_is_mse() {
        let m = small_vae(0.0);
        let x = DenseArray::from_fn(&[3, 6], |i| (i as f64 * 0.3).sin());
        let l = m.loss(&x, None).unwrap();
        assert_eq!(l.total, l.mse);
    }

    #[test]
    fn vae_gradients() {
        let mut m = small_vae(0.1);
        let x = DenseArray::from_fn(&[3, 6], |i| (i as f64 * 0.7).cos());
        let eps = m.sample_noise(3, &mut ChaCha8Rng::seed_from_u64(2));
        let rep = gradient_check(
            &mut m,
            |m| {
                m.zero_grad();
                Ok(m.loss_backward(&x, Some(&eps))?.total)
            },
            |m| Ok(m.loss(&x, Some(&eps))?.total),
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-5, "{:?}", rep.per_param);
    }

    #[test]
    fn ff_zero_weights_and_composition() {
        let mut cfg = FfConfig::new(2, 3);
        cfg.hidden = vec![4];
        let mut m = FfModel::new(
            cfg,
            NormalizationStats::identity(2),
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let x = DenseArray::from_fn(&[2, 6], |i| i as f64 * 0.1);
        let three = m.predict(&x, 3).unwrap();
        let manual = m
            .predict(&m.predict(&m.predict(&x, 1).unwrap(), 1).unwrap(), 1)
            .unwrap();
        assert_eq!(three, manual);
        for p in m.params_mut() {
            p.value.fill(0.0);
        }
        assert!(m.predict(&x, 2).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ff_gradients() {
        let mut cfg = FfConfig::new(2, 3);
        cfg.hidden = vec![5, 4];
        let mut m = FfModel::new(
            cfg,
            NormalizationStats::identity(2),
            &mut ChaCha8Rng::seed_from_u64(4),
        );
        let x = DenseArray::from_fn(&[3, 6], |i| (i as f64 * 0.4).sin());
        let y = DenseArray::from_fn(&[3, 6], |i| (i as f64 * 0.2).cos());
        let rep = gradient_check(
            &mut m,
            |m| {
                m.zero_grad();
                m.loss_backward(&x, &y)
            },
            |m| m.loss(&x, &y),
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-5, "{:?}", rep.per_param);
    }
}
