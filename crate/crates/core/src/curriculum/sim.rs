//! Curriculum simulation: sampler → surrogate learner → skill-performance
//! buffer → sampler update, with per-episode traces.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{alp_compute, OfflineBuffer, SkillPerformanceBuffer, SkillPerformanceRecord};
use super::gmm::EmConfig;
use super::reward::exploration_factor;
use super::sampler::{AlpGmmConfig, Sampler, SamplerKind};
use super::surrogate::{LandscapeConfig, Preset, SurrogateLandscape};
use crate::error::{invalid, Result};
use crate::numerics::{
    stats, wrap_cycles, Activation, Adam, AdamConfig, DenseArray, Mlp, Parameterized,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Latent channels; θ has `3·channels` coordinates.
    pub channels: usize,
    /// Targets drawn and practised per iteration.
    pub envs: usize,
    /// Number of most recent targets γ and running performance are taken over.
    pub window: usize,
    pub alp: AlpGmmConfig,
    pub em: EmConfig,
    /// Overrides the preset geometry when set.
    pub landscape: Option<LandscapeConfig>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            envs: 32,
            window: 4096,
            alp: AlpGmmConfig::default(),
            em: EmConfig::default(),
            landscape: None,
        }
    }
}

impl SimConfig {
    pub fn landscape_for(&self, preset: Preset) -> LandscapeConfig {
        self.landscape
            .clone()
            .unwrap_or_else(|| LandscapeConfig::preset(preset, 3 * self.channels))
    }
}

/// One collected episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub theta: Vec<f64>,
    /// Initial phase drawn with the target; the surrogate ignores it.
    pub phi0: Vec<f64>,
    pub performance: f64,
    pub alp: f64,
    pub gamma: f64,
    pub region: Option<usize>,
    pub unlearnable: bool,
}

/// Running statistics after one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub gamma: f64,
    pub running_performance: f64,
    /// Share of this iteration's targets inside unlearnable regions.
    pub unlearnable_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct SimRun {
    pub sampler: SamplerKind,
    pub preset: Preset,
    pub seed: u64,
    pub config: SimConfig,
    pub rows: Vec<TraceRow>,
    pub summary: Vec<IterationSummary>,
    /// Iterations after which ALP-GMM refitted.
    pub updates: Vec<usize>,
    pub landscape: SurrogateLandscape,
    pub offline: OfflineBuffer,
}

/// Runs `iterations` training iterations. Each draws `envs` targets θ with a
/// phase from `[−0.5, 0.5)^c`; every region gets one practice step weighted
/// by its share of the environments, then all targets are evaluated. Every
/// `collection_interval` iterations the batch goes into the skill-performance
/// buffer with its ALP; every `update_interval` iterations the sampler refits.
pub fn run_curriculum_sim(
    kind: SamplerKind,
    preset: Preset,
    iterations: usize,
    seed: u64,
    config: &SimConfig,
) -> Result<SimRun> {
    if config.channels == 0 || config.envs == 0 || config.window < 2 {
        return invalid("simulation needs channels, environments and a window of at least 2");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut landscape, offline) = config.landscape_for(preset).generate(&mut rng)?;
    let mut alp_cfg = config.alp.clone();
    alp_cfg.em.seed = seed;
    let mut sampler = Sampler::build(
        kind,
        &offline,
        &alp_cfg,
        &EmConfig {
            seed,
            ..config.em.clone()
        },
    )?;
    let baseline = offline.points();
    let mut skill = SkillPerformanceBuffer::skill_buffer();
    let mut window: VecDeque<(Vec<f64>, f64)> = VecDeque::with_capacity(config.window);
    let mut rows = Vec::new();
    let mut summary = Vec::with_capacity(iterations);
    let mut updates = Vec::new();
    for it in 0..iterations {
        let mut targets = Vec::with_capacity(config.envs);
        let mut visits = vec![0usize; landscape.regions.len()];
        for _ in 0..config.envs {
            let theta = sampler.sample(&mut rng)?;
            let phi0: Vec<f64> = (0..config.channels)
                .map(|_| wrap_cycles(rng.gen_range(-0.5..0.5)))
                .collect();
            if let Some(i) = landscape.locate(&theta) {
                visits[i] += 1;
            }
            targets.push((theta, phi0));
        }
        // practice is shared out over the environments of one iteration
        for (i, &n) in visits.iter().enumerate() {
            if n > 0 {
                landscape.practice(i, n as f64 / config.envs as f64);
            }
        }
        let mut batch = Vec::with_capacity(config.envs);
        for (theta, phi0) in targets {
            let out = landscape.evaluate(&theta, &mut rng)?;
            if window.len() == config.window {
                window.pop_front();
            }
            window.push_back((theta.clone(), out.performance));
            batch.push((theta, phi0, out));
        }
        let running: Vec<Vec<f64>> = window.iter().map(|w| w.0.clone()).collect();
        let gamma = exploration_factor(&running, &baseline)?;
        let perf: Vec<f64> = window.iter().map(|w| w.1).collect();
        let unlearnable = |o: &super::surrogate::SurrogateOutcome| {
            o.region.is_some_and(|i| !landscape.regions[i].learnable)
        };
        summary.push(IterationSummary {
            iteration: it,
            gamma,
            running_performance: stats::mean(&perf),
            unlearnable_fraction: batch.iter().filter(|b| unlearnable(&b.2)).count() as f64
                / batch.len() as f64,
        });
        if (it + 1) % config.alp.collection_interval == 0 {
            for (theta, phi0, out) in batch {
                let alp = alp_compute(&theta, out.performance, &skill);
                skill.push(SkillPerformanceRecord::new(
                    theta.clone(),
                    out.performance,
                    it,
                )?);
                sampler.observe(&theta, alp)?;
                rows.push(TraceRow {
                    iteration: it,
                    sampler: kind,
                    seed,
                    unlearnable: unlearnable(&out),
                    theta,
                    phi0,
                    performance: out.performance,
                    alp,
                    gamma,
                    region: out.region,
                });
            }
        }
        if (it + 1) % config.alp.update_interval == 0 && sampler.update()? {
            updates.push(it);
        }
    }
    Ok(SimRun {
        sampler: kind,
        preset,
        seed,
        config: config.clone(),
        rows,
        summary,
        updates,
        landscape,
        offline,
    })
}

impl SimRun {
    /// γ once the running window is full.
    pub fn settled_gamma(&self) -> Vec<f64> {
        let skip = self
            .config
            .window
            .div_ceil(self.config.envs)
            .saturating_sub(1);
        self.summary.iter().skip(skip).map(|s| s.gamma).collect()
    }

    pub fn final_running_performance(&self) -> Option<f64> {
        self.summary.last().map(|s| s.running_performance)
    }

    /// Share of targets from iteration `start` on that fell into unlearnable regions.
    pub fn unlearnable_fraction_from(&self, start: usize) -> Option<f64> {
        let tail = self.summary.get(start..)?;
        if tail.is_empty() {
            return None;
        }
        Some(tail.iter().map(|s| s.unlearnable_fraction).sum::<f64>() / tail.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W, labels: Option<&[String]>) -> Result<()> {
        write_traces(std::slice::from_ref(self), out, labels)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?, None)
    }
}

/// Per-iteration running statistics of several runs.
pub fn write_summaries<W: Write>(runs: &[SimRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "sampler",
        "preset",
        "seed",
        "gamma",
        "running_r",
        "unlearnable_fraction",
    ])?;
    for run in runs {
        for s in &run.summary {
            w.write_record([
                s.iteration.to_string(),
                run.sampler.to_string(),
                run.preset.to_string(),
                run.seed.to_string(),
                s.gamma.to_string(),
                s.running_performance.to_string(),
                s.unlearnable_fraction.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Header comment lines describing every column and the ALP scaling.
pub const TRACE_NOTES: &str = "\
# r: surrogate performance in [0, 1]; alp: |r - r_nearest| over the skill-performance buffer\n\
# gamma: mean over theta channels of std(running window)/std(offline encodings)\n\
# alp is min-max scaled into the theta coordinate range before alp-gmm fitting\n";

/// Writes runs one after another under a single header. `labels` adds a
/// predicted motion type per row, in row order across runs.
pub fn write_traces<W: Write>(
    runs: &[SimRun],
    mut out: W,
    labels: Option<&[String]>,
) -> Result<()> {
    out.write_all(TRACE_NOTES.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    let dim = runs
        .first()
        .and_then(|r| r.rows.first())
        .map(|r| r.theta.len())
        .unwrap_or(0);
    let mut header = vec!["iteration".to_string(), "sampler".into(), "seed".into()];
    header.extend((0..dim).map(|i| format!("theta_{i}")));
    header.extend(
        ["r", "alp", "gamma", "region_id", "unlearnable"]
            .iter()
            .map(|s| s.to_string()),
    );
    if labels.is_some() {
        header.push("predicted_type".into());
    }
    w.write_record(&header)?;
    let mut k = 0;
    for run in runs {
        for r in &run.rows {
            let mut rec = vec![
                r.iteration.to_string(),
                r.sampler.to_string(),
                r.seed.to_string(),
            ];
            rec.extend(r.theta.iter().map(|v| v.to_string()));
            rec.push(r.performance.to_string());
            rec.push(r.alp.to_string());
            rec.push(r.gamma.to_string());
            rec.push(r.region.map(|i| i.to_string()).unwrap_or_default());
            rec.push((r.unlearnable as u8).to_string());
            if let Some(l) = labels {
                rec.push(l.get(k).cloned().unwrap_or_default());
            }
            k += 1;
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Motion-type classifier over θ trained on surrogate region labels.
#[derive(Clone, Debug)]
pub struct OracleClassifier {
    pub net: Mlp,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub hidden: Vec<usize>,
    pub samples: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            hidden: vec![1024, 512],
            samples: 4000,
            epochs: 20,
            batch: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Label of a θ: the region's index, `u` for unlearnable regions, `none`
/// outside all regions.
pub fn region_label(landscape: &SurrogateLandscape, theta: &[f64]) -> String {
    match landscape.locate(theta) {
        None => "none".into(),
        Some(i) if !landscape.regions[i].learnable => "u".into(),
        Some(i) => i.to_string(),
    }
}

impl OracleClassifier {
    /// Trains on θ drawn half from the regions and half uniformly from their
    /// bounding box.
    pub fn train(landscape: &SurrogateLandscape, cfg: &OracleConfig) -> Result<Self> {
        if cfg.samples == 0 || cfg.batch == 0 {
            return invalid("classifier needs samples and a positive batch size");
        }
        let dim = landscape.dim();
        let mut labels: Vec<String> = vec!["none".into(), "u".into()];
        labels.extend(
            landscape
                .regions
                .iter()
                .enumerate()
                .filter(|(_, r)| r.learnable)
                .map(|(i, _)| i.to_string()),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (lo, hi) =
            landscape
                .regions
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    let m = r.centre.iter().fold((lo, hi), |(a, b), c| {
                        (a.min(c - r.radius), b.max(c + r.radius))
                    });
                    m
                });
        let xs: Vec<Vec<f64>> = (0..cfg.samples)
            .map(|i| {
                if i % 2 == 0 {
                    let r = &landscape.regions[rng.gen_range(0..landscape.regions.len())];
                    r.centre
                        .iter()
                        .map(|c| c + rng.gen_range(-r.radius..r.radius) / (dim as f64).sqrt())
                        .collect()
                } else {
                    (0..dim).map(|_| rng.gen_range(lo..hi)).collect()
                }
            })
            .collect();
        let ys: Vec<usize> = xs
            .iter()
            .map(|x| {
                let l = region_label(landscape, x);
                labels.iter().position(|s| *s == l).expect("known label")
            })
            .collect();
        let mut sizes = vec![dim];
        sizes.extend(&cfg.hidden);
        sizes.push(labels.len());
        let mut net = Mlp::new(
            "oracle",
            &sizes,
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        );
        let mut adam = Adam::new(AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        })?;
        let mut order: Vec<usize> = (0..xs.len()).collect();
        for _ in 0..cfg.epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            for chunk in order.chunks(cfg.batch) {
                let x = DenseArray::new(
                    vec![chunk.len(), dim],
                    chunk.iter().flat_map(|&i| xs[i].iter().copied()).collect(),
                )?;
                let (logits, cache) = net.forward(&x)?;
                let y: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
                let (_, grad) = softmax_cross_entropy(&logits, &y);
                net.zero_grad();
                net.backward(&cache, &grad)?;
                adam.step(net.params_mut())?;
            }
        }
        Ok(Self { net, labels })
    }

    pub fn predict(&self, thetas: &[Vec<f64>]) -> Result<Vec<String>> {
        if thetas.is_empty() {
            return Ok(Vec::new());
        }
        let dim = thetas[0].len();
        let x = DenseArray::new(
            vec![thetas.len(), dim],
            thetas.iter().flatten().copied().collect(),
        )?;
        let logits = self.net.predict(&x)?;
        let k = self.labels.len();
        Ok((0..thetas.len())
            .map(|i| {
                let row = &logits.data()[i * k..(i + 1) * k];
                let best = (0..k)
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .expect("labels");
                self.labels[best].clone()
            })
            .collect())
    }
}

/// Mean cross-entropy of `[n, k]` logits and its gradient.
fn softmax_cross_entropy(logits: &DenseArray, y: &[usize]) -> (f64, DenseArray) {
    let (n, k) = (logits.dim(0), logits.dim(1));
    let mut grad = DenseArray::zeros(&[n, k]);
    let mut loss = 0.0;
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for j in 0..k {
            let p = (row[j] - m).exp() / z;
            grad.data_mut()[i * k + j] = (p - (j == y[i]) as u8 as f64) / n as f64;
        }
        loss += -(row[y[i]] - m - z.ln());
    }
    (loss / n as f64, grad)
}
