use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::roll::{propagate, target_frame, LatentRollState};
use crate::error::{invalid, shape_err, FldError, Result};
use crate::fld::{FldModel, LatentParameterization};
use crate::numerics::stats::quantile;
use crate::numerics::{BnMode, DenseArray};
use crate::par;
use crate::signal::{Corpus, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Loss threshold `ε`; proposals with a larger loss are rejected.
    pub epsilon: f64,
    /// Propagation horizon of the gate loss.
    pub n: usize,
    pub alpha: f64,
    /// Quantile of the calibration losses that `ε` was set to.
    pub quantile: Option<f64>,
    /// Anchors the calibration losses were computed on.
    pub calibration_anchors: usize,
    /// CRC32 of the calibration corpus samples, hex.
    pub corpus_digest: Option<String>,
}

impl GateConfig {
    /// Threshold `epsilon` with the model's training horizon and weighting.
    pub fn new(epsilon: f64, model: &FldModel) -> Result<Self> {
        let g = Self {
            epsilon,
            n: model.config.n,
            alpha: model.config.alpha,
            quantile: None,
            calibration_anchors: 0,
            corpus_digest: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid(format!(
                "gate threshold must be positive, got {}",
                self.epsilon
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return invalid(format!("alpha must be positive, got {}", self.alpha));
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.n + 1
    }
}

/// `Σ_{i=0..n} αⁱ·MSE` of the prediction from the first of `n+1` normalized
/// segments, with eval-mode statistics. This is the training loss evaluated
/// on a batch of one.
pub fn gate_loss(model: &FldModel, segments: &[DenseArray], n: usize, alpha: f64) -> Result<f64> {
    if segments.len() != n + 1 {
        return invalid(format!(
            "gate loss needs {} segments, got {}",
            n + 1,
            segments.len()
        ));
    }
    let (d, h) = (model.config.d, model.config.h);
    let mut stack = DenseArray::zeros(&[n + 1, 1, d, h]);
    for (i, s) in segments.iter().enumerate() {
        if s.shape() != [d, h] {
            return shape_err(format!(
                "segment {i} is {:?}, expected [{d}, {h}]",
                s.shape()
            ));
        }
        stack.data_mut()[i * d * h..(i + 1) * d * h].copy_from_slice(s.data());
    }
    Ok(model.loss(&stack, n, alpha, BnMode::Eval)?.total)
}

/// Gate losses at anchors `0, stride, 2·stride, …` of every trajectory long
/// enough for `H + n` frames.
pub fn anchor_losses(
    model: &FldModel,
    corpus: &Corpus,
    n: usize,
    alpha: f64,
    stride: usize,
) -> Result<Vec<f64>> {
    if stride == 0 {
        return invalid("anchor stride must be positive");
    }
    let h = model.config.h;
    let mut jobs = Vec::new();
    let mut normalized = Vec::with_capacity(corpus.len());
    for (ti, t) in corpus.trajectories.iter().enumerate() {
        normalized.push(model.norm.apply(t)?);
        if t.len() >= h + n {
            jobs.extend((0..=t.len() - h - n).step_by(stride).map(|s| (ti, s)));
        }
    }
    if jobs.is_empty() {
        return Err(FldError::Empty(format!(
            "no trajectory in the corpus has the {} frames a gate anchor needs",
            h + n
        )));
    }
    par::map_indexed(jobs.len(), |k| -> Result<f64> {
        let (ti, s) = jobs[k];
        let segs = (0..=n)
            .map(|i| normalized[ti].segment_matrix(s + i, h))
            .collect::<Result<Vec<_>>>()?;
        gate_loss(model, &segs, n, alpha)
    })
    .into_iter()
    .collect()
}

/// Sets `ε` to the `q`-quantile of per-anchor gate losses on the training
/// corpus, using the model's own horizon and weighting.
pub fn calibrate_threshold(
    model: &FldModel,
    corpus: &Corpus,
    q: f64,
    stride: usize,
) -> Result<GateConfig> {
    if corpus.is_empty() {
        return Err(FldError::Empty("calibration corpus".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return invalid(format!("quantile must lie in (0, 1], got {q}"));
    }
    let (n, alpha) = (model.config.n, model.config.alpha);
    let losses = anchor_losses(model, corpus, n, alpha, stride)?;
    let epsilon = quantile(&losses, q)?;
    let mut hasher = crc32fast::Hasher::new();
    for t in &corpus.trajectories {
        for v in t.data() {
            hasher.update(&v.to_le_bytes());
        }
    }
    let g = GateConfig {
        epsilon,
        n,
        alpha,
        quantile: Some(q),
        calibration_anchors: losses.len(),
        corpus_digest: Some(format!("{:08x}", hasher.finalize())),
    };
    g.validate()?;
    Ok(g)
}

/// The most recent `N+1` raw `d × H` segments, oldest first.
#[derive(Clone, Debug)]
pub struct InputBuffer {
    capacity: usize,
    segments: VecDeque<DenseArray>,
}

impl InputBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return invalid("input buffer capacity must be positive");
        }
        Ok(Self {
            capacity,
            segments: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.segments.len() == self.capacity
    }

    /// Appends the newest segment, dropping the oldest when full.
    pub fn push(&mut self, segment: DenseArray) {
        if self.is_full() {
            self.segments.pop_front();
        }
        self.segments.push_back(segment);
    }

    pub fn clear(&mut self) {
        self.segments.clear();
    }

    pub fn segments(&self) -> impl Iterator<Item = &DenseArray> {
        self.segments.iter()
    }

    pub fn newest(&self) -> Option<&DenseArray> {
        self.segments.back()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
    NoInput,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateDecision {
    pub verdict: Verdict,
    /// Absent for `no_input`.
    pub loss: Option<f64>,
    pub state: LatentRollState,
    /// Denormalized newest frame decoded from `state`.
    pub target_frame: Vec<f64>,
}

/// One gate update. An empty buffer propagates the state; a full one is
/// scored and either re-encoded from its newest segment (accepted) or
/// ignored in favour of propagation (rejected).
pub fn gate_step(
    buffer: &InputBuffer,
    state: &LatentRollState,
    gate: &GateConfig,
    model: &FldModel,
) -> Result<GateDecision> {
    let dt = model.config.dt;
    if buffer.is_empty() {
        let next = propagate(state, dt);
        return Ok(GateDecision {
            verdict: Verdict::NoInput,
            loss: None,
            target_frame: target_frame(model, &next)?,
            state: next,
        });
    }
    if buffer.len() != gate.segments() || !buffer.is_full() {
        return Err(FldError::PartialBuffer {
            filled: buffer.len(),
            capacity: gate.segments(),
        });
    }
    let normalized: Vec<DenseArray> = buffer
        .segments()
        .map(|s| model.normalize_segment(s))
        .collect();
    let loss = gate_loss(model, &normalized, gate.n, gate.alpha)?;
    let (verdict, next) = if loss <= gate.epsilon {
        let mut s = LatentRollState::encode(model, normalized.last().expect("full buffer"))?;
        s.step = state.step + 1;
        (Verdict::Accepted, s)
    } else {
        (Verdict::Rejected, propagate(state, dt))
    };
    Ok(GateDecision {
        verdict,
        loss: Some(loss),
        target_frame: target_frame(model, &next)?,
        state: next,
    })
}

/// JSON-lines record of one gate step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub step: u64,
    pub verdict: Verdict,
    pub loss: Option<f64>,
    pub phi: Vec<f64>,
    pub theta: LatentParameterization,
    pub target_frame: Vec<f64>,
}

/// Frame-by-frame gate. Each incoming frame extends the history; once
/// `H + N` consecutive frames are present the buffer holds `N + 1`
/// segments one frame apart and every step is scored. Until then, and
/// whenever input is absent, the state propagates and the step reports
/// `no_input`.
pub struct GateStream<'m> {
    model: &'m FldModel,
    gate: GateConfig,
    frames: VecDeque<Vec<f64>>,
    buffer: InputBuffer,
    state: LatentRollState,
    step: u64,
}

impl<'m> GateStream<'m> {
    pub fn new(model: &'m FldModel, gate: GateConfig, initial: LatentRollState) -> Result<Self> {
        gate.validate()?;
        if initial.theta.channels() != model.config.c {
            return shape_err(format!(
                "initial state has {} channels, model has {}",
                initial.theta.channels(),
                model.config.c
            ));
        }
        Ok(Self {
            buffer: InputBuffer::new(gate.segments())?,
            model,
            gate,
            frames: VecDeque::new(),
            state: initial,
            step: 0,
        })
    }

    pub fn state(&self) -> &LatentRollState {
        &self.state
    }

    /// Processes one step. `None` means no user input this step; it also
    /// breaks the history so the buffer must refill.
    pub fn push(&mut self, frame: Option<&[f64]>) -> Result<GateRecord> {
        let (d, h) = (self.model.config.d, self.model.config.h);
        let empty = InputBuffer::new(1)?;
        let decision = match frame {
            None => {
                self.frames.clear();
                self.buffer.clear();
                gate_step(&empty, &self.state, &self.gate, self.model)?
            }
            Some(f) => {
                if f.len() != d {
                    return shape_err(format!("frame has {} values, model expects {d}", f.len()));
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(FldError::NonFinite("gate input frame".into()));
                }
                self.frames.push_back(f.to_vec());
                if self.frames.len() > h {
                    self.frames.pop_front();
                }
                if self.frames.len() == h {
                    let mut seg = DenseArray::zeros(&[d, h]);
                    for (t, fr) in self.frames.iter().enumerate() {
                        for (j, v) in fr.iter().enumerate() {
                            seg.data_mut()[j * h + t] = *v;
                        }
                    }
                    self.buffer.push(seg);
                }
                if self.buffer.is_full() {
                    gate_step(&self.buffer, &self.state, &self.gate, self.model)?
                } else {
                    gate_step(&empty, &self.state, &self.gate, self.model)?
                }
            }
        };
        self.state = decision.state.clone();
        let rec = GateRecord {
            step: self.step,
            verdict: decision.verdict,
            loss: decision.loss,
            phi: decision.state.phi.phi.clone(),
            theta: decision.state.theta.clone(),
            target_frame: decision.target_frame,
        };
        self.step += 1;
        Ok(rec)
    }

    /// Runs a whole trajectory through the gate.
    pub fn run(&mut self, trajectory: &Trajectory) -> Result<Vec<GateRecord>> {
        trajectory.frames().map(|f| self.push(Some(f))).collect()
    }
}

/// Share of scored steps (accepted or rejected) that were accepted; `None`
/// when no step was scored.
pub fn acceptance_rate(records: &[GateRecord]) -> Option<f64> {
    let scored: Vec<_> = records
        .iter()
        .filter(|r| r.verdict != Verdict::NoInput)
        .collect();
    if scored.is_empty() {
        return None;
    }
    let acc = scored
        .iter()
        .filter(|r| r.verdict == Verdict::Accepted)
        .count();
    Some(acc as f64 / scored.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::super::roll::synthesize;
    use super::*;
    use crate::fld::FldConfig;
    use crate::signal::NormalizationStats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> FldModel {
        let cfg = FldConfig {
            hidden: 4,
            kernel: 3,
            ..FldConfig::new(2, 2, 8, 3)
        };
        FldModel::new(
            cfg,
            NormalizationStats::identity(2),
            &mut ChaCha8Rng::seed_from_u64(6),
        )
        .unwrap()
    }

    fn state() -> LatentRollState {
        LatentRollState::new(
            vec![0.1, -0.3],
            LatentParameterization {
                f: vec![1.5, 2.5],
                a: vec![1.0, 0.5],
                b: vec![0.0, 0.2],
            },
        )
        .unwrap()
    }

    #[test]
    fn buffer_is_fifo() {
        let mut b = InputBuffer::new(3).unwrap();
        for k in 0..5 {
            b.push(DenseArray::filled(&[1, 1], k as f64));
        }
        assert!(b.is_full());
        let v: Vec<f64> = b.segments().map(|s| s.data()[0]).collect();
        assert_eq!(v, [2.0, 3.0, 4.0]);
        assert!(InputBuffer::new(0).is_err());
    }

    #[test]
    fn empty_buffer_propagates() {
        let m = model();
        let g = GateConfig::new(1.0, &m).unwrap();
        let s = state();
        let dec = gate_step(&InputBuffer::new(4).unwrap(), &s, &g, &m).unwrap();
        assert_eq!(dec.verdict, Verdict::NoInput);
        assert_eq!(dec.loss, None);
        assert_eq!(dec.state.phi.phi[0], 0.1 + 1.5 * 0.02);
        assert_eq!(dec.target_frame, target_frame(&m, &dec.state).unwrap());
    }

    #[test]
    fn partial_buffer_is_error() {
        let m = model();
        let g = GateConfig::new(1.0, &m).unwrap();
        let mut b = InputBuffer::new(4).unwrap();
        b.push(DenseArray::zeros(&[2, 8]));
        let err = gate_step(&b, &state(), &g, &m).unwrap_err();
        assert!(matches!(
            err,
            FldError::PartialBuffer {
                filled: 1,
                capacity: 4
            }
        ));
    }

    fn noise_buffer(seed: u64) -> InputBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = InputBuffer::new(4).unwrap();
        for _ in 0..4 {
            b.push(DenseArray::from_fn(&[2, 8], |_| rng.gen_range(-3.0..3.0)));
        }
        b
    }

    #[test]
    fn verdict_follows_threshold_and_is_monotone() {
        let m = model();
        let b = noise_buffer(1);
        let s = state();
        let lo = gate_step(&b, &s, &GateConfig::new(1e-9, &m).unwrap(), &m).unwrap();
        assert_eq!(lo.verdict, Verdict::Rejected);
        assert_eq!(lo.state, propagate(&s, 0.02));
        let l = lo.loss.unwrap();
        let at = gate_step(&b, &s, &GateConfig::new(l, &m).unwrap(), &m).unwrap();
        assert_eq!(at.verdict, Verdict::Accepted);
        let hi = gate_step(&b, &s, &GateConfig::new(2.0 * l, &m).unwrap(), &m).unwrap();
        assert_eq!(hi.verdict, Verdict::Accepted);
        let newest = b.newest().unwrap();
        assert_eq!(
            hi.state.theta,
            LatentRollState::encode(&m, newest).unwrap().theta
        );
    }

    #[test]
    fn gate_loss_equals_training_loss() {
        let m = model();
        let b = noise_buffer(2);
        let segs: Vec<DenseArray> = b.segments().cloned().collect();
        let g = gate_loss(&m, &segs, 3, 0.9).unwrap();
        let mut stack = DenseArray::zeros(&[4, 1, 2, 8]);
        for (i, s) in segs.iter().enumerate() {
            stack.data_mut()[i * 16..(i + 1) * 16].copy_from_slice(s.data());
        }
        assert_eq!(g, m.loss(&stack, 3, 0.9, BnMode::Eval).unwrap().total);
    }

    #[test]
    fn calibration() {
        let m = model();
        let t = synthesize(&m, &[0.0, 0.0], &state().theta, 40).unwrap();
        let c = Corpus::new(vec![t]).unwrap();
        let losses = anchor_losses(&m, &c, 3, 1.0, 1).unwrap();
        assert_eq!(losses.len(), 40 - 8 - 3 + 1);
        let g = calibrate_threshold(&m, &c, 1.0, 1).unwrap();
        let max = losses.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(g.epsilon, max);
        assert_eq!(g.calibration_anchors, losses.len());
        assert!(calibrate_threshold(&m, &c, 0.0, 1).is_err());
        assert!(calibrate_threshold(&m, &c, 1.5, 1).is_err());
        assert!(calibrate_threshold(&m, &Corpus::new(vec![]).unwrap(), 0.5, 1).is_err());
    }

    #[test]
    fn stream_fallback_matches_synthesis() {
        let m = model();
        let g = GateConfig::new(1e-12, &m).unwrap();
        let s0 = state();
        let mut stream = GateStream::new(&m, g, s0.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut recs = Vec::new();
        for k in 0..30 {
            let fr = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            recs.push(
                stream
                    .push(if k % 13 == 12 { None } else { Some(&fr) })
                    .unwrap(),
            );
        }
        assert!(recs.iter().all(|r| r.verdict != Verdict::Accepted));
        assert_eq!(recs[9].verdict, Verdict::NoInput);
        assert_eq!(recs[10].verdict, Verdict::Rejected);
        let synth = synthesize(&m, &s0.phi.phi, &s0.theta, 31).unwrap();
        for (k, r) in recs.iter().enumerate() {
            assert_eq!(r.target_frame, synth.frame(k + 1), "step {k}");
        }
        let line = serde_json::to_string(&recs[0]).unwrap();
        assert!(line.contains("\"verdict\":\"no_input\"") && line.contains("\"loss\":null"));
        assert_eq!(acceptance_rate(&recs), Some(0.0));
    }
}
