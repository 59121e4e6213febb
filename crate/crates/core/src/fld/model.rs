//! Convolutional encoder, spectral parameterization with a learned phase
//! head, sinusoidal latent reconstruction and convolutional decoder.

use rand::Rng;

use super::spectral::{
    channel_parameters, channel_parameters_backward, reconstruct_channel,
    reconstruct_channel_backward, ChannelCache, LatentParameterization, LatentState,
};
use super::state::{push_bn, push_param, StateDict};
use super::FldConfig;
use crate::error::{invalid, shape_err, Result};
use crate::numerics::{
    atan2_phase, atan2_phase_grad, Activation, BatchNorm1d, BnCache, BnMode, Conv1d, DenseArray,
    Param, Parameterized, RealDft,
};
use crate::signal::NormalizationStats;

/// Convolution followed by optional batch normalization and an activation.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub bn: Option<BatchNorm1d>,
    pub act: Activation,
}

#[derive(Clone, Debug)]
struct BlockCache {
    input: DenseArray,
    pre_act: DenseArray,
    bn: Option<BnCache>,
}

impl ConvBlock {
    fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        norm: bool,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let conv_name = format!("{name}.conv");
        let conv = if norm {
            Conv1d::without_bias(&conv_name, cin, cout, k, rng)
        } else {
            Conv1d::new(&conv_name, cin, cout, k, rng)
        };
        Self {
            conv,
            bn: norm.then(|| BatchNorm1d::new(&format!("{name}.bn"), cout)),
            act,
        }
    }

    fn forward(&self, x: DenseArray, mode: BnMode) -> Result<(DenseArray, BlockCache)> {
        let y = self.conv.forward(&x)?;
        let (pre_act, bn) = match &self.bn {
            Some(bn) => {
                let (y, c) = bn.forward(&y, mode)?;
                (y, Some(c))
            }
            None => (y, None),
        };
        let out = self.act.forward(&pre_act);
        Ok((
            out,
            BlockCache {
                input: x,
                pre_act,
                bn,
            },
        ))
    }

    fn infer(&self, x: &DenseArray) -> Result<DenseArray> {
        let y = self.conv.forward(x)?;
        let y = match &self.bn {
            Some(bn) => bn.forward(&y, BnMode::Eval)?.0,
            None => y,
        };
        Ok(self.act.forward(&y))
    }

    fn backward(&mut self, cache: &BlockCache, dy: &DenseArray) -> Result<DenseArray> {
        let mut g = self.act.backward(&cache.pre_act, dy);
        if let (Some(bn), Some(c)) = (&mut self.bn, &cache.bn) {
            g = bn.backward(c, &g)?;
        }
        self.conv.backward(&cache.input, &g)
    }

    fn update_running(&mut self, cache: &BlockCache) {
        if let (Some(bn), Some(c)) = (&mut self.bn, &cache.bn) {
            bn.update_running(c);
        }
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.conv.weight];
        v.extend(self.conv.bias.as_ref());
        if let Some(bn) = &self.bn {
            v.push(&bn.gamma);
            v.push(&bn.beta);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.conv.weight];
        v.extend(self.conv.bias.as_mut());
        if let Some(bn) = &mut self.bn {
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        v
    }

    fn slots<'a>(&'a mut self, out: &mut Vec<(String, &'a mut DenseArray)>) {
        push_param(out, &mut self.conv.weight);
        if let Some(b) = &mut self.conv.bias {
            push_param(out, b);
        }
        if let Some(bn) = &mut self.bn {
            push_bn(out, bn);
        }
    }
}

/// Latent quantities of a batch of encoded segments, each stored flat as
/// `batch × c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub c: usize,
    /// `batch × c × H` latent curves.
    pub z: DenseArray,
    pub phi: Vec<f64>,
    pub f: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Encoding {
    pub fn batch(&self) -> usize {
        self.phi.len() / self.c
    }

    pub fn state(&self, item: usize) -> LatentState {
        LatentState {
            phi: self.phi[item * self.c..(item + 1) * self.c].to_vec(),
        }
    }

    pub fn theta(&self, item: usize) -> LatentParameterization {
        let r = item * self.c..(item + 1) * self.c;
        LatentParameterization {
            f: self.f[r.clone()].to_vec(),
            a: self.a[r.clone()].to_vec(),
            b: self.b[r].to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
struct EncodeCache {
    blocks: Vec<BlockCache>,
    spectra: Vec<ChannelCache>,
    phase_norm: DenseArray,
    phase_bn: BnCache,
}

/// Batch-norm statistics gathered by a training forward pass; folded into
/// the running estimates by [`FldModel::update_running`].
#[derive(Clone, Debug)]
pub struct RunningUpdate {
    enc: Vec<BlockCache>,
    phase: BnCache,
    dec: Vec<BlockCache>,
}

/// Weighted loss and its per-horizon terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    pub per_horizon: Vec<f64>,
}

/// `Σ_i αⁱ·L_i`.
pub fn combine_losses(per_horizon: &[f64], alpha: f64) -> f64 {
    per_horizon
        .iter()
        .enumerate()
        .map(|(i, l)| alpha.powi(i as i32) * l)
        .sum()
}

#[derive(Clone, Debug)]
pub struct FldModel {
    pub config: FldConfig,
    pub norm: NormalizationStats,
    pub encoder: Vec<ConvBlock>,
    /// `c × 2 × H`: one `H → 2` map per channel. No bias: the batch
    /// normalization that follows absorbs it.
    pub phase_weight: Param,
    /// Normalizes the `2c` phase features.
    pub phase_bn: BatchNorm1d,
    pub decoder: Vec<ConvBlock>,
    dft: RealDft,
    grid: Vec<f64>,
}

impl FldModel {
    pub fn new(config: FldConfig, norm: NormalizationStats, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if norm.dim() != config.d {
            return shape_err(format!(
                "normalization has {} dims, config has {}",
                norm.dim(),
                config.d
            ));
        }
        let FldConfig {
            d,
            c,
            h,
            hidden,
            kernel: k,
            ..
        } = config;
        let e = Activation::Elu;
        let encoder = vec![
            ConvBlock::new("enc.0", d, hidden, k, true, e, rng),
            ConvBlock::new("enc.1", hidden, hidden, k, true, e, rng),
            ConvBlock::new("enc.2", hidden, c, k, true, e, rng),
        ];
        let bound = 1.0 / (h as f64).sqrt();
        let phase_weight = Param::new(
            "phase.weight",
            DenseArray::from_fn(&[c, 2, h], |_| rng.gen_range(-bound..bound)),
        );
        let last_act = if config.final_activation {
            Activation::Elu
        } else {
            Activation::Identity
        };
        let decoder = vec![
            ConvBlock::new("dec.0", c, hidden, k, true, e, rng),
            ConvBlock::new("dec.1", hidden, hidden, k, true, e, rng),
            ConvBlock::new(
                "dec.2",
                hidden,
                d,
                k,
                config.final_activation,
                last_act,
                rng,
            ),
        ];
        Ok(Self {
            dft: RealDft::new(h)?,
            grid: config.time_grid(),
            phase_bn: BatchNorm1d::new("phase.bn", 2 * c),
            config,
            norm,
            encoder,
            phase_weight,
            decoder,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Accepts `d × H` or `batch × d × H` and returns the 3-D view.
    fn as_batch(&self, x: &DenseArray, channels: usize) -> Result<DenseArray> {
        let h = self.config.h;
        match x.shape() {
            [ch, l] if *ch == channels && *l == h => x.clone().reshape(&[1, channels, h]),
            [_, ch, l] if *ch == channels && *l == h => Ok(x.clone()),
            s => shape_err(format!(
                "expected [batch, {channels}, {h}] or [{channels}, {h}], got {s:?}"
            )),
        }
    }

    fn encode_inner(&self, x: &DenseArray, mode: BnMode) -> Result<(Encoding, EncodeCache)> {
        let x = self.as_batch(x, self.config.d)?;
        let (c, h, dt) = (self.config.c, self.config.h, self.config.dt);
        let batch = x.dim(0);
        let mut blocks = Vec::with_capacity(3);
        let mut cur = x;
        for blk in &self.encoder {
            let (y, cache) = blk.forward(cur, mode)?;
            blocks.push(cache);
            cur = y;
        }
        let z = cur;
        let zd = z.data();

        let mut spectra = Vec::with_capacity(batch * c);
        let (mut f, mut a, mut b) = (
            vec![0.0; batch * c],
            vec![0.0; batch * c],
            vec![0.0; batch * c],
        );
        for bi in 0..batch {
            for ch in 0..c {
                let row = &zd[(bi * c + ch) * h..(bi * c + ch + 1) * h];
                let (fv, av, bv, cache) = channel_parameters(&self.dft, row, dt)?;
                f[bi * c + ch] = fv;
                a[bi * c + ch] = av;
                b[bi * c + ch] = bv;
                spectra.push(cache);
            }
        }

        let w = self.phase_weight.value.data();
        let mut raw = DenseArray::zeros(&[batch, 2 * c]);
        {
            let rd = raw.data_mut();
            for bi in 0..batch {
                for ch in 0..c {
                    let row = &zd[(bi * c + ch) * h..(bi * c + ch + 1) * h];
                    for o in 0..2 {
                        let wr = &w[(ch * 2 + o) * h..(ch * 2 + o + 1) * h];
                        rd[bi * 2 * c + 2 * ch + o] =
                            wr.iter().zip(row).map(|(p, q)| p * q).sum::<f64>();
                    }
                }
            }
        }
        let (phase_norm, phase_bn) = self.phase_bn.forward(&raw, mode)?;
        let pn = phase_norm.data();
        let mut phi = vec![0.0; batch * c];
        for bi in 0..batch {
            for ch in 0..c {
                let sx = pn[bi * 2 * c + 2 * ch];
                let sy = pn[bi * 2 * c + 2 * ch + 1];
                phi[bi * c + ch] = atan2_phase(sy, sx)?;
            }
        }
        Ok((
            Encoding { c, z, phi, f, a, b },
            EncodeCache {
                blocks,
                spectra,
                phase_norm,
                phase_bn,
            },
        ))
    }

    /// Latent curves, phases and parameterizations of normalized segments.
    pub fn encode(&self, x: &DenseArray, mode: BnMode) -> Result<Encoding> {
        Ok(self.encode_inner(x, mode)?.0)
    }

    /// `c × H` (or `batch × c × H`) latent curve of a normalized segment.
    pub fn encode_latent(&self, x: &DenseArray, mode: BnMode) -> Result<DenseArray> {
        let single = x.ndim() == 2;
        let z = self.encode(x, mode)?.z;
        if single {
            z.reshape(&[self.config.c, self.config.h])
        } else {
            Ok(z)
        }
    }

    /// Latent curves `(n+1)·batch × c × H` for prediction steps `0..=n`,
    /// step-major.
    pub fn rollout_latent(&self, enc: &Encoding, n: usize) -> DenseArray {
        let (c, h, dt) = (self.config.c, self.config.h, self.config.dt);
        let batch = enc.batch();
        let mut out = DenseArray::zeros(&[(n + 1) * batch, c, h]);
        let od = out.data_mut();
        for i in 0..=n {
            let shift = i as f64 * dt;
            for bi in 0..batch {
                for ch in 0..c {
                    let k = bi * c + ch;
                    let phi = enc.phi[k] + enc.f[k] * shift;
                    let off = ((i * batch + bi) * c + ch) * h;
                    reconstruct_channel(
                        phi,
                        enc.f[k],
                        enc.a[k],
                        enc.b[k],
                        &self.grid,
                        &mut od[off..off + h],
                    );
                }
            }
        }
        out
    }

    fn decode_inner(
        &self,
        zhat: DenseArray,
        mode: BnMode,
    ) -> Result<(DenseArray, Vec<BlockCache>)> {
        let mut caches = Vec::with_capacity(3);
        let mut cur = zhat;
        for blk in &self.decoder {
            let (y, cache) = blk.forward(cur, mode)?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, caches))
    }

    /// Normalized segments from latent curves (`c × H` or `batch × c × H`).
    pub fn decode(&self, zhat: &DenseArray, mode: BnMode) -> Result<DenseArray> {
        let single = zhat.ndim() == 2;
        let z = self.as_batch(zhat, self.config.c)?;
        let out = if mode == BnMode::Eval {
            let mut cur = z;
            for blk in &self.decoder {
                cur = blk.infer(&cur)?;
            }
            cur
        } else {
            self.decode_inner(z, mode)?.0
        };
        if single {
            out.reshape(&[self.config.d, self.config.h])
        } else {
            Ok(out)
        }
    }

    /// Predicted normalized segment `i` steps ahead (eval-mode statistics).
    pub fn predict(&self, segment: &DenseArray, i: usize) -> Result<DenseArray> {
        let enc = self.encode(segment, BnMode::Eval)?;
        if enc.batch() != 1 {
            return shape_err("predict takes a single d×H segment");
        }
        let mut shifted = enc.clone();
        let step = i as f64 * self.config.dt;
        for k in 0..shifted.phi.len() {
            shifted.phi[k] = enc.phi[k] + enc.f[k] * step;
        }
        let z = self.rollout_latent(&shifted, 0);
        self.decode(&z.reshape(&[self.config.c, self.config.h])?, BnMode::Eval)
    }

    /// Predictions for steps `0..=n` of a single segment: `(n+1) × d × H`.
    pub fn predict_horizons(&self, segment: &DenseArray, n: usize) -> Result<DenseArray> {
        let enc = self.encode(segment, BnMode::Eval)?;
        let z = self.rollout_latent(&enc, n);
        self.decode(&z, BnMode::Eval)
    }

    fn check_batch(&self, segments: &DenseArray, n: usize) -> Result<(usize, DenseArray)> {
        let FldConfig { d, h, .. } = self.config;
        let [steps, batch, dd, hh] = segments.shape() else {
            return shape_err(format!(
                "training batch must be (N+1)×batch×d×H, got {:?}",
                segments.shape()
            ));
        };
        if *dd != d || *hh != h {
            return shape_err(format!("segments are {dd}×{hh}, model expects {d}×{h}"));
        }
        if n + 1 > *steps {
            return invalid(format!(
                "horizon {n} needs {} segments per item, batch holds {steps}",
                n + 1
            ));
        }
        let input = DenseArray::new(
            vec![*batch, d, h],
            segments.data()[..batch * d * h].to_vec(),
        )?;
        Ok((*batch, input))
    }

    fn horizon_losses(pred: &DenseArray, segments: &DenseArray, n: usize, per: usize) -> Vec<f64> {
        let (p, s) = (pred.data(), segments.data());
        (0..=n)
            .map(|i| {
                let r = i * per..(i + 1) * per;
                p[r.clone()]
                    .iter()
                    .zip(&s[r])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / per as f64
            })
            .collect()
    }

    /// `L = Σ_{i=0..n} αⁱ·MSE(ŝ'_{t+i}, s_{t+i})` on a batch laid out as
    /// `(N+1) × batch × d × H` with the input segments first.
    pub fn loss(
        &self,
        segments: &DenseArray,
        n: usize,
        alpha: f64,
        mode: BnMode,
    ) -> Result<LossOutput> {
        let (batch, input) = self.check_batch(segments, n)?;
        let enc = self.encode(&input, mode)?;
        let pred = self.decode(&self.rollout_latent(&enc, n), mode)?;
        let per = batch * self.config.d * self.config.h;
        let per_horizon = Self::horizon_losses(&pred, segments, n, per);
        Ok(LossOutput {
            total: combine_losses(&per_horizon, alpha),
            per_horizon,
        })
    }

    /// Forward and backward pass; gradients are accumulated into the
    /// parameters. Running statistics are left untouched.
    pub fn loss_backward(
        &mut self,
        segments: &DenseArray,
        n: usize,
        alpha: f64,
        mode: BnMode,
    ) -> Result<(LossOutput, RunningUpdate)> {
        let (batch, input) = self.check_batch(segments, n)?;
        let FldConfig { c, h, d, dt, .. } = self.config;
        let (enc, ecache) = self.encode_inner(&input, mode)?;
        let zhat = self.rollout_latent(&enc, n);
        let (pred, dcache) = self.decode_inner(zhat, mode)?;
        let per = batch * d * h;
        let per_horizon = Self::horizon_losses(&pred, segments, n, per);
        let total = combine_losses(&per_horizon, alpha);

        let mut dpred = DenseArray::zeros(pred.shape());
        {
            let (p, s, g) = (pred.data(), segments.data(), dpred.data_mut());
            for i in 0..=n {
                let scale = alpha.powi(i as i32) * 2.0 / per as f64;
                for k in i * per..(i + 1) * per {
                    g[k] = scale * (p[k] - s[k]);
                }
            }
        }
        let mut g = dpred;
        for (blk, cache) in self.decoder.iter_mut().zip(&dcache).rev() {
            g = blk.backward(cache, &g)?;
        }
        let dzhat = g;

        // sinusoidal layer
        let dzd = dzhat.data();
        let mut dlat = vec![[0.0f64; 4]; batch * c];
        for i in 0..=n {
            let shift = i as f64 * dt;
            for bi in 0..batch {
                for ch in 0..c {
                    let k = bi * c + ch;
                    let off = ((i * batch + bi) * c + ch) * h;
                    reconstruct_channel_backward(
                        enc.phi[k],
                        enc.f[k],
                        enc.a[k],
                        &self.grid,
                        shift,
                        &dzd[off..off + h],
                        &mut dlat[k],
                    );
                }
            }
        }

        // phase head
        let pn = ecache.phase_norm.data();
        let mut dpn = DenseArray::zeros(&[batch, 2 * c]);
        {
            let g = dpn.data_mut();
            for bi in 0..batch {
                for ch in 0..c {
                    let sx = pn[bi * 2 * c + 2 * ch];
                    let sy = pn[bi * 2 * c + 2 * ch + 1];
                    let (gy, gx) = atan2_phase_grad(sy, sx);
                    let dphi = dlat[bi * c + ch][0];
                    g[bi * 2 * c + 2 * ch] = dphi * gx;
                    g[bi * 2 * c + 2 * ch + 1] = dphi * gy;
                }
            }
        }
        let draw = self.phase_bn.backward(&ecache.phase_bn, &dpn)?;
        let drd = draw.data();
        let zd = enc.z.data();
        let mut dz = DenseArray::zeros(enc.z.shape());
        {
            let w = self.phase_weight.value.data();
            let dw = self.phase_weight.grad.data_mut();
            let dzm = dz.data_mut();
            for bi in 0..batch {
                for ch in 0..c {
                    let zoff = (bi * c + ch) * h;
                    for o in 0..2 {
                        let gv = drd[bi * 2 * c + 2 * ch + o];
                        let woff = (ch * 2 + o) * h;
                        for t in 0..h {
                            dw[woff + t] += gv * zd[zoff + t];
                            dzm[zoff + t] += gv * w[woff + t];
                        }
                    }
                }
            }
            // spectral parameters
            for bi in 0..batch {
                for ch in 0..c {
                    let k = bi * c + ch;
                    let [_, df, da, db] = dlat[k];
                    let gz =
                        channel_parameters_backward(&self.dft, &ecache.spectra[k], dt, df, da, db)?;
                    let zoff = k * h;
                    for (t, v) in gz.iter().enumerate() {
                        dzm[zoff + t] += v;
                    }
                }
            }
        }

        let mut g = dz;
        for (blk, cache) in self.encoder.iter_mut().zip(&ecache.blocks).rev() {
            g = blk.backward(cache, &g)?;
        }
        Ok((
            LossOutput { total, per_horizon },
            RunningUpdate {
                enc: ecache.blocks,
                phase: ecache.phase_bn,
                dec: dcache,
            },
        ))
    }

    pub fn update_running(&mut self, upd: &RunningUpdate) {
        for (blk, c) in self.encoder.iter_mut().zip(&upd.enc) {
            blk.update_running(c);
        }
        self.phase_bn.update_running(&upd.phase);
        for (blk, c) in self.decoder.iter_mut().zip(&upd.dec) {
            blk.update_running(c);
        }
    }

    /// Normalizes a raw `d × H` segment with the model's statistics.
    pub fn normalize_segment(&self, raw: &DenseArray) -> DenseArray {
        let mut s = raw.clone();
        self.norm.apply_segment(s.data_mut(), self.config.h);
        s
    }
}

impl Parameterized for FldModel {
    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.encoder.iter().flat_map(|b| b.params()).collect();
        v.push(&self.phase_weight);
        v.push(&self.phase_bn.gamma);
        v.push(&self.phase_bn.beta);
        v.extend(self.decoder.iter().flat_map(|b| b.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self
            .encoder
            .iter_mut()
            .flat_map(|b| b.params_mut())
            .collect();
        v.push(&mut self.phase_weight);
        v.push(&mut self.phase_bn.gamma);
        v.push(&mut self.phase_bn.beta);
        v.extend(self.decoder.iter_mut().flat_map(|b| b.params_mut()));
        v
    }
}

impl StateDict for FldModel {
    fn state_slots(&mut self) -> Vec<(String, &mut DenseArray)> {
        let mut out = Vec::new();
        for b in &mut self.encoder {
            b.slots(&mut out);
        }
        push_param(&mut out, &mut self.phase_weight);
        push_bn(&mut out, &mut self.phase_bn);
        for b in &mut self.decoder {
            b.slots(&mut out);
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

    fn tiny() -> FldModel {
        let mut cfg = FldConfig::new(4, 2, 16, 3);
        cfg.hidden = 6;
        cfg.kernel = 5;
        FldModel::new(
            cfg,
            NormalizationStats::identity(4),
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap()
    }

    fn batch(n: usize, b: usize) -> DenseArray {
        DenseArray::from_fn(&[n + 1, b, 4, 16], |i| {
            let t = (i % 16) as f64;
            let dim = (i / 16) % 4;
            let item = (i / 64) % b;
            let step = i / (64 * b);
            (0.4 * (t + step as f64) + dim as f64 + 0.3 * item as f64).sin()
                * (1.0 + 0.2 * dim as f64)
        })
    }

    #[test]
    fn full_gradient_check() {
        let mut m = tiny();
        let x = batch(3, 3);
        let rep = gradient_check(
            &mut m,
            |m| {
                m.zero_grad();
                Ok(m.loss_backward(&x, 3, 0.8, BnMode::Train)?.0.total)
            },
            |m| Ok(m.loss(&x, 3, 0.8, BnMode::Train)?.total),
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-5, "{:?}", rep.per_param);
    }

    #[test]
    fn eval_gradient_check_with_final_activation() {
        let mut cfg = FldConfig::new(4, 2, 16, 2);
        cfg.hidden = 4;
        cfg.kernel = 3;
        cfg.final_activation = true;
        let mut m = FldModel::new(
            cfg,
            NormalizationStats::identity(4),
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let x = batch(2, 1);
        let rep = gradient_check(
            &mut m,
            |m| {
                m.zero_grad();
                Ok(m.loss_backward(&x, 2, 1.0, BnMode::Eval)?.0.total)
            },
            |m| Ok(m.loss(&x, 2, 1.0, BnMode::Eval)?.total),
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-5, "{:?}", rep.per_param);
    }

    #[test]
    fn weighted_sum() {
        assert_eq!(combine_losses(&[4.0, 2.0, 1.0], 0.5), 5.25);
    }

    #[test]
    fn zero_horizon_is_reconstruction() {
        let m = tiny();
        let x = batch(3, 2);
        let l0 = m.loss(&x, 0, 1.0, BnMode::Eval).unwrap();
        let l3 = m.loss(&x, 3, 1.0, BnMode::Eval).unwrap();
        assert_eq!(l0.per_horizon.len(), 1);
        assert_eq!(l0.per_horizon[0], l3.per_horizon[0]);
        assert!(m.loss(&x, 4, 1.0, BnMode::Eval).is_err());
    }

    #[test]
    fn perfect_targets_zero_loss() {
        let m = tiny();
        let x = batch(2, 2);
        let input = DenseArray::new(vec![2, 4, 16], x.data()[..128].to_vec()).unwrap();
        let enc = m.encode(&input, BnMode::Eval).unwrap();
        let pred = m.decode(&m.rollout_latent(&enc, 2), BnMode::Eval).unwrap();
        // first slab must stay the input; later slabs become the predictions
        let mut targets = x.clone();
        targets.data_mut()[128..].copy_from_slice(&pred.data()[128..]);
        let l = m.loss(&targets, 2, 1.0, BnMode::Eval).unwrap();
        assert_eq!(l.per_horizon[1], 0.0);
        assert_eq!(l.per_horizon[2], 0.0);
    }

    #[test]
    fn predict_steps() {
        let m = tiny();
        let seg = batch(0, 1).reshape(&[4, 16]).unwrap();
        let enc = m.encode(&seg, BnMode::Eval).unwrap();
        let p0 = m.predict(&seg, 0).unwrap();
        let rec = m.decode(&m.rollout_latent(&enc, 0), BnMode::Eval).unwrap();
        assert_eq!(p0.data(), rec.data());
        let mut manual = enc.clone();
        for k in 0..2 {
            manual.phi[k] = enc.phi[k] + enc.f[k] * m.config.dt;
        }
        let z1 = m.rollout_latent(&manual, 0);
        let p1 = m.predict(&seg, 1).unwrap();
        assert_eq!(p1.data(), m.decode(&z1, BnMode::Eval).unwrap().data());
        let all = m.predict_horizons(&seg, 3).unwrap();
        assert_eq!(&all.data()[64..128], p1.data());
    }

    #[test]
    fn identical_segments_identical_latents() {
        let m = tiny();
        let seg = batch(0, 1).into_data();
        let mut two = seg.clone();
        two.extend(&seg);
        let enc = m
            .encode(&DenseArray::new(vec![2, 4, 16], two).unwrap(), BnMode::Eval)
            .unwrap();
        assert_eq!(enc.z.row(0), enc.z.row(1));
        assert_eq!(enc.state(0), enc.state(1));
    }

    #[test]
    fn shape_errors() {
        let m = tiny();
        assert!(m
            .encode(&DenseArray::zeros(&[3, 16]), BnMode::Eval)
            .is_err());
        assert!(m
            .decode(&DenseArray::zeros(&[3, 16]), BnMode::Eval)
            .is_err());
    }

    #[test]
    fn state_round_trip() {
        let m = tiny();
        let mut other = FldModel::new(
            m.config.clone(),
            m.norm.clone(),
            &mut ChaCha8Rng::seed_from_u64(77),
        )
        .unwrap();
        other.load_state(m.state_arrays()).unwrap();
        assert_eq!(other.state_arrays(), m.state_arrays());
        let mut arrays = m.state_arrays();
        arrays.push(("bogus".into(), DenseArray::zeros(&[1])));
        assert!(other.load_state(arrays).is_err());
        let mut arrays = m.state_arrays();
        arrays.pop();
        assert!(other.load_state(arrays).is_err());
    }
}
