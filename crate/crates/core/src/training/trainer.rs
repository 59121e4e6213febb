use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{ModelConfig, ModelKind, TrainedModel};
use crate::error::{FldError, Result};
use crate::fld::FldConfig;
use crate::numerics::{Adam, AdamConfig, BnMode, DenseArray, Parameterized};
use crate::signal::{Corpus, NormalizationStats, Trajectory};

/// Loss of one training iteration, averaged over its mini-batch steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub terms: Vec<f64>,
}

/// Per-iteration training losses. For the latent dynamics models the terms
/// are the per-horizon losses `L_0..L_N`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub term_names: Vec<String>,
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn initial(&self) -> Option<f64> {
        self.records.first().map(|r| r.total)
    }

    pub fn last(&self) -> Option<f64> {
        self.records.last().map(|r| r.total)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["iteration".to_string(), "loss".to_string()];
        header.extend(self.term_names.iter().cloned());
        out.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), format!("{:?}", r.total)];
            row.extend(r.terms.iter().map(|v| format!("{v:?}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// A trained model and how it got there.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub model: TrainedModel,
    pub history: LossHistory,
    pub train_config: TrainConfig,
    pub iterations: usize,
}

/// Trains `kind` on `corpus`. The baselines take `d`, `H` and `c` from
/// `fld_config`.
pub fn train(
    kind: ModelKind,
    corpus: &Corpus,
    train_config: &TrainConfig,
    fld_config: &FldConfig,
) -> Result<TrainRun> {
    train_model(
        &ModelConfig::for_kind(kind, fld_config),
        corpus,
        train_config,
    )
}

struct Sampler {
    trajs: Vec<Trajectory>,
    anchors: Vec<(usize, usize)>,
    d: usize,
    h: usize,
}

impl Sampler {
    fn new(
        corpus: &Corpus,
        norm: &NormalizationStats,
        d: usize,
        h: usize,
        lookahead: usize,
    ) -> Result<Self> {
        let mut trajs = Vec::with_capacity(corpus.len());
        let mut anchors = Vec::new();
        for (ti, t) in corpus.trajectories.iter().enumerate() {
            if t.dim() != d {
                return Err(FldError::Shape(format!(
                    "trajectory {ti} has {} dims, model expects {d}",
                    t.dim()
                )));
            }
            if t.len() >= lookahead {
                anchors.extend((0..=t.len() - lookahead).map(|s| (ti, s)));
            }
            trajs.push(norm.apply(t)?);
        }
        if anchors.is_empty() {
            let longest = corpus
                .trajectories
                .iter()
                .map(|t| t.len())
                .max()
                .unwrap_or(0);
            return Err(FldError::TooShort {
                len: longest,
                needed: lookahead,
            });
        }
        Ok(Self {
            trajs,
            anchors,
            d,
            h,
        })
    }

    fn pool(&self, size: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
        (0..size)
            .map(|_| self.anchors[rng.gen_range(0..self.anchors.len())])
            .collect()
    }

    /// `steps × batch × d × H` with segment `i` of item `b` starting `i`
    /// frames after its anchor.
    fn stacked(&self, items: &[(usize, usize)], steps: usize) -> DenseArray {
        let per = self.d * self.h;
        let b = items.len();
        let mut out = DenseArray::zeros(&[steps, b, self.d, self.h]);
        let od = out.data_mut();
        for i in 0..steps {
            for (bi, &(t, s)) in items.iter().enumerate() {
                let off = (i * b + bi) * per;
                self.trajs[t].write_segment(s + i, self.h, &mut od[off..off + per]);
            }
        }
        out
    }

    fn flat(&self, items: &[(usize, usize)], shift: usize) -> DenseArray {
        let per = self.d * self.h;
        let mut out = DenseArray::zeros(&[items.len(), per]);
        let od = out.data_mut();
        for (bi, &(t, s)) in items.iter().enumerate() {
            self.trajs[t].write_segment(s + shift, self.h, &mut od[bi * per..(bi + 1) * per]);
        }
        out
    }
}

fn term_names(config: &ModelConfig) -> Vec<String> {
    match config {
        ModelConfig::Fld(c) | ModelConfig::Pae(c) => (0..=c.n).map(|i| format!("L_{i}")).collect(),
        ModelConfig::Vae(_) => vec!["mse".into(), "kl".into()],
        ModelConfig::Ff(_) => vec!["mse".into()],
    }
}

/// One optimizer step on a mini-batch; returns the loss and its terms.
fn step(
    model: &mut TrainedModel,
    sampler: &Sampler,
    items: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    model.zero_grad();
    match model {
        TrainedModel::Fld(m) | TrainedModel::Pae(m) => {
            let (n, alpha) = (m.config.n, m.config.alpha);
            let batch = sampler.stacked(items, n + 1);
            let (out, upd) = m.loss_backward(&batch, n, alpha, BnMode::Train)?;
            if out.total.is_finite() {
                m.update_running(&upd);
            }
            Ok((out.total, out.per_horizon))
        }
        TrainedModel::Vae(m) => {
            let x = sampler.flat(items, 0);
            let noise = m.sample_noise(items.len(), rng);
            let l = m.loss_backward(&x, Some(&noise))?;
            Ok((l.total, vec![l.mse, l.kl]))
        }
        TrainedModel::Ff(m) => {
            let x = sampler.flat(items, 0);
            let y = sampler.flat(items, 1);
            let l = m.loss_backward(&x, &y)?;
            Ok((l, vec![l]))
        }
    }
}

/// Trains a model from scratch. Each iteration draws a pool of
/// `mini_batches × batch_size` anchors (with replacement) and makes
/// `epochs` shuffled passes over it, one Adam step per mini-batch.
/// Normalization statistics are fitted on the whole corpus.
pub fn train_model(config: &ModelConfig, corpus: &Corpus, tc: &TrainConfig) -> Result<TrainRun> {
    tc.validate()?;
    if corpus.is_empty() {
        return Err(FldError::Empty("training corpus".into()));
    }
    let norm = NormalizationStats::fit(corpus.trajectories.iter())?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut model = config.build(norm.clone(), &mut rng)?;
    let (d, h) = config.dims();
    let sampler = Sampler::new(corpus, &norm, d, h, config.lookahead())?;
    let mut adam = Adam::new(AdamConfig {
        lr: tc.lr,
        weight_decay: tc.weight_decay,
        ..AdamConfig::default()
    })?;
    let names = term_names(config);
    let mut history = LossHistory {
        term_names: names.clone(),
        records: Vec::with_capacity(tc.max_iterations),
    };
    log::info!(
        "training {} ({} parameters) on {} anchors for {} iterations",
        config.kind(),
        model.num_parameters(),
        sampler.anchors.len(),
        tc.max_iterations
    );
    let report_every = (tc.max_iterations / 10).max(1);
    for it in 0..tc.max_iterations {
        let mut pool = sampler.pool(tc.pool_size(), &mut rng);
        let mut total = 0.0;
        let mut terms = vec![0.0; names.len()];
        let mut count = 0usize;
        for _ in 0..tc.epochs {
            pool.shuffle(&mut rng);
            for batch in pool.chunks(tc.batch_size) {
                let (l, t) = match step(&mut model, &sampler, batch, &mut rng) {
                    Err(FldError::NonFinite(_)) => (f64::NAN, Vec::new()),
                    r => r?,
                };
                if !l.is_finite() {
                    return Err(FldError::Diverged {
                        iteration: it,
                        loss: l,
                    });
                }
                adam.step(model.params_mut())?;
                total += l;
                for (acc, v) in terms.iter_mut().zip(&t) {
                    *acc += v;
                }
                count += 1;
            }
        }
        let k = count as f64;
        terms.iter_mut().for_each(|v| *v /= k);
        history.records.push(LossRecord {
            iteration: it,
            total: total / k,
            terms,
        });
        if (it + 1) % report_every == 0 {
            log::info!(
                "iteration {}/{}: loss {:.6}",
                it + 1,
                tc.max_iterations,
                total / k
            );
        }
    }
    Ok(TrainRun {
        model,
        history,
        train_config: tc.clone(),
        iterations: tc.max_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_synthetic, SyntheticMotionSpec};

    fn corpus(frames: usize) -> Corpus {
        let spec = SyntheticMotionSpec {
            base_frequency: 1.5,
            dt: 0.02,
            amplitude: vec![1.0, 0.5, 0.8],
            phase_offset: vec![0.0, 0.25, 0.1],
            mean: vec![0.0, 1.0, -0.5],
            harmonics: vec![1.0],
            noise_std: 0.0,
            frames,
            seed: 0,
            time_offset: 0.0,
            label: None,
        };
        Corpus::new(vec![generate_synthetic(&spec).unwrap()]).unwrap()
    }

    fn tiny() -> (FldConfig, TrainConfig) {
        (
            FldConfig {
                hidden: 4,
                kernel: 3,
                ..FldConfig::new(3, 2, 8, 3)
            },
            TrainConfig {
                max_iterations: 3,
                epochs: 2,
                mini_batches: 2,
                batch_size: 4,
                lr: 1e-3,
                seed: 5,
                ..Default::default()
            },
        )
    }

    #[test]
    fn history_shape() {
        let (f, t) = tiny();
        let run = train(ModelKind::Fld, &corpus(40), &t, &f).unwrap();
        assert_eq!(run.history.records.len(), 3);
        assert_eq!(run.history.term_names, ["L_0", "L_1", "L_2", "L_3"]);
        assert!(run.history.records.iter().all(|r| r.terms.len() == 4));
        let mut buf = Vec::new();
        run.history.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,loss,L_0,L_1,L_2,L_3\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn deterministic() {
        let (f, t) = tiny();
        let c = corpus(40);
        let a = train(ModelKind::Fld, &c, &t, &f).unwrap();
        let b = train(ModelKind::Fld, &c, &t, &f).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.state_arrays(), b.model.state_arrays());
    }

    #[test]
    fn pae_equals_zero_horizon() {
        let (f, t) = tiny();
        let c = corpus(40);
        let pae = train(ModelKind::Pae, &c, &t, &f).unwrap();
        let fld0 = train(ModelKind::Fld, &c, &t, &FldConfig { n: 0, ..f }).unwrap();
        assert_eq!(pae.history, fld0.history);
        assert_eq!(pae.model.state_arrays(), fld0.model.state_arrays());
    }

    #[test]
    fn too_short() {
        let (f, t) = tiny();
        let err = train(ModelKind::Fld, &corpus(10), &t, &f).unwrap_err();
        assert!(matches!(err, FldError::TooShort { needed: 11, .. }));
        // the autoencoder only needs one window
        train(ModelKind::Pae, &corpus(10), &t, &f).unwrap();
    }

    #[test]
    fn divergence_aborts() {
        let (f, mut t) = tiny();
        t.lr = 1e300;
        let err = train(ModelKind::Ff, &corpus(40), &t, &FldConfig { ..f }).unwrap_err();
        assert!(matches!(err, FldError::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn baselines_train() {
        let (f, t) = tiny();
        let c = corpus(40);
        for kind in [ModelKind::Vae, ModelKind::Ff] {
            let run = train(kind, &c, &t, &f).unwrap();
            assert_eq!(run.model.kind(), kind);
            assert!(run.history.last().unwrap().is_finite());
        }
    }
}
