use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::TrainedModel;
use crate::error::{invalid, FldError, Result};
use crate::fld::{FldModel, LatentParameterization};
use crate::numerics::stats::{mean, std_dev, Pca};
use crate::numerics::{BnMode, DenseArray};
use crate::par;
use crate::signal::{dimension_groups, Corpus, DimensionGroup, NormalizationStats, Trajectory};

/// Spacing of evaluation anchors, in frames.
pub const ANCHOR_STRIDE: usize = 5;

/// Added to the target norm in the relative error.
pub const ERROR_EPS: f64 = 1e-8;

pub const ERROR_DEFINITION: &str = "e_i = mean over anchors t (every 5 frames) of \
    ||pred_{t+i} - s_{t+i}||_2 / (||s_{t+i}||_2 + 1e-8), norms over the d x H segment \
    (or the group's rows) in normalized space";

/// Anything that predicts segments `t..t+n` from the segment at `t`.
pub trait HorizonPredictor: Sync {
    fn dims(&self) -> (usize, usize);
    fn normalization(&self) -> &NormalizationStats;
    /// Predictions for horizons `0..=n` given the normalized trajectory and
    /// the anchor frame.
    fn predict_at(&self, normalized: &Trajectory, t: usize, n: usize) -> Result<Vec<DenseArray>>;
}

impl HorizonPredictor for TrainedModel {
    fn dims(&self) -> (usize, usize) {
        TrainedModel::dims(self)
    }

    fn normalization(&self) -> &NormalizationStats {
        self.norm()
    }

    fn predict_at(&self, normalized: &Trajectory, t: usize, n: usize) -> Result<Vec<DenseArray>> {
        let (_, h) = TrainedModel::dims(self);
        self.predict_horizons(&normalized.segment_matrix(t, h)?, n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupErrors {
    pub group: String,
    pub start: usize,
    pub end: usize,
    pub errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelErrors {
    pub model: String,
    /// Indexed by horizon `0..=N`.
    pub errors: Vec<f64>,
    pub groups: Vec<GroupErrors>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub error_definition: String,
    pub horizon: usize,
    pub anchor_stride: usize,
    pub anchors: usize,
    pub models: Vec<ModelErrors>,
}

impl EvaluationReport {
    pub fn model(&self, name: &str) -> Option<&ModelErrors> {
        self.models.iter().find(|m| m.model == name)
    }

    /// One row per horizon per model; group columns are left empty for
    /// models that lack them.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut groups: Vec<String> = Vec::new();
        for m in &self.models {
            for g in &m.groups {
                if !groups.contains(&g.group) {
                    groups.push(g.group.clone());
                }
            }
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![
            "model".to_string(),
            "horizon".to_string(),
            "relative_error".to_string(),
        ];
        header.extend(groups.iter().map(|g| format!("relative_error_{g}")));
        out.write_record(&header)?;
        for m in &self.models {
            for (i, e) in m.errors.iter().enumerate() {
                let mut row = vec![m.model.clone(), i.to_string(), format!("{e:?}")];
                for g in &groups {
                    row.push(
                        m.groups
                            .iter()
                            .find(|x| &x.group == g)
                            .map(|x| format!("{:?}", x.errors[i]))
                            .unwrap_or_default(),
                    );
                }
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer_pretty(std::fs::File::create(path)?, self)?;
        Ok(())
    }
}

/// Anchor frames `0, 5, 10, …` whose horizon-`n` target fits in `len`.
pub fn evaluation_anchors(len: usize, h: usize, n: usize) -> Result<Vec<usize>> {
    if len < h + n {
        return Err(FldError::TooShort { len, needed: h + n });
    }
    Ok((0..=len - h - n).step_by(ANCHOR_STRIDE).collect())
}

fn rel_error(pred: &[f64], target: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, s) in pred.iter().zip(target) {
        num += (p - s) * (p - s);
        den += s * s;
    }
    num.sqrt() / (den.sqrt() + ERROR_EPS)
}

/// `(n+1) × (1 + groups)` errors at one anchor, flattened horizon-major.
fn anchor_errors(
    p: &dyn HorizonPredictor,
    normalized: &Trajectory,
    groups: &[DimensionGroup],
    t: usize,
    n: usize,
) -> Result<Vec<f64>> {
    let (_, h) = p.dims();
    let preds = p.predict_at(normalized, t, n)?;
    if preds.len() != n + 1 {
        return invalid(format!(
            "predictor returned {} horizons, expected {}",
            preds.len(),
            n + 1
        ));
    }
    let width = 1 + groups.len();
    let mut out = vec![0.0; (n + 1) * width];
    for (i, pred) in preds.iter().enumerate() {
        let target = normalized.segment_matrix(t + i, h)?;
        if pred.shape() != target.shape() {
            return invalid(format!(
                "prediction shape {:?} != target {:?}",
                pred.shape(),
                target.shape()
            ));
        }
        out[i * width] = rel_error(pred.data(), target.data());
        for (gi, g) in groups.iter().enumerate() {
            let r = g.start * h..g.end * h;
            out[i * width + 1 + gi] = rel_error(&pred.data()[r.clone()], &target.data()[r]);
        }
    }
    Ok(out)
}

/// Mean relative prediction error per horizon `0..=n` of each model on a
/// held-out trajectory, in each model's normalized space.
pub fn evaluate_prediction(
    models: &[(&str, &dyn HorizonPredictor)],
    trajectory: &Trajectory,
    n: usize,
) -> Result<EvaluationReport> {
    if models.is_empty() {
        return Err(FldError::Empty("models to evaluate".into()));
    }
    let mut out = Vec::with_capacity(models.len());
    let mut anchor_count = 0;
    for (name, p) in models {
        let (d, h) = p.dims();
        if trajectory.dim() != d {
            return Err(FldError::Shape(format!(
                "trajectory has {} dims, model `{name}` expects {d}",
                trajectory.dim()
            )));
        }
        let anchors = evaluation_anchors(trajectory.len(), h, n)?;
        anchor_count = anchors.len();
        let normalized = p.normalization().apply(trajectory)?;
        let groups = dimension_groups(d);
        let width = 1 + groups.len();
        let per_anchor = par::map_indexed(anchors.len(), |k| {
            anchor_errors(*p, &normalized, &groups, anchors[k], n)
        });
        let mut sums = vec![0.0; (n + 1) * width];
        for r in per_anchor {
            for (s, v) in sums.iter_mut().zip(r?) {
                *s += v;
            }
        }
        let k = anchors.len() as f64;
        let col = |j: usize| (0..=n).map(|i| sums[i * width + j] / k).collect::<Vec<_>>();
        out.push(ModelErrors {
            model: name.to_string(),
            errors: col(0),
            groups: groups
                .iter()
                .enumerate()
                .map(|(gi, g)| GroupErrors {
                    group: g.name.clone(),
                    start: g.start,
                    end: g.end,
                    errors: col(1 + gi),
                })
                .collect(),
        });
    }
    Ok(EvaluationReport {
        error_definition: ERROR_DEFINITION.to_string(),
        horizon: n,
        anchor_stride: ANCHOR_STRIDE,
        anchors: anchor_count,
        models: out,
    })
}

/// Mean horizon-0 error over `anchors`, computed through single-segment
/// reconstruction rather than the batched rollout.
pub fn reconstruction_error(
    model: &FldModel,
    trajectory: &Trajectory,
    anchors: &[usize],
) -> Result<f64> {
    if anchors.is_empty() {
        return Err(FldError::Empty("anchors".into()));
    }
    let normalized = model.norm.apply(trajectory)?;
    let h = model.config.h;
    let errs = par::map_indexed(anchors.len(), |k| -> Result<f64> {
        let seg = normalized.segment_matrix(anchors[k], h)?;
        let pred = model.predict(&seg, 0)?;
        Ok(rel_error(pred.data(), seg.data()))
    });
    let mut sum = 0.0;
    for e in errs {
        sum += e?;
    }
    Ok(sum / anchors.len() as f64)
}

/// Latent state and parameterization of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowLatent {
    /// First frame of the window.
    pub start: usize,
    pub phi: Vec<f64>,
    pub theta: LatentParameterization,
}

const ENCODE_CHUNK: usize = 64;

/// Encodes every window (stride 1) of a raw trajectory with eval-mode
/// statistics.
pub fn latent_track(model: &FldModel, trajectory: &Trajectory) -> Result<Vec<WindowLatent>> {
    let (d, h) = (model.config.d, model.config.h);
    if trajectory.dim() != d {
        return Err(FldError::Shape(format!(
            "trajectory has {} dims, model expects {d}",
            trajectory.dim()
        )));
    }
    if trajectory.len() < h {
        return Err(FldError::TooShort {
            len: trajectory.len(),
            needed: h,
        });
    }
    let normalized = model.norm.apply(trajectory)?;
    let windows = trajectory.len() - h + 1;
    let chunks = windows.div_ceil(ENCODE_CHUNK);
    let parts = par::map_indexed(chunks, |ci| -> Result<Vec<WindowLatent>> {
        let s0 = ci * ENCODE_CHUNK;
        let s1 = (s0 + ENCODE_CHUNK).min(windows);
        let per = d * h;
        let mut x = DenseArray::zeros(&[s1 - s0, d, h]);
        for (k, s) in (s0..s1).enumerate() {
            normalized.write_segment(s, h, &mut x.data_mut()[k * per..(k + 1) * per]);
        }
        let enc = model.encode(&x, BnMode::Eval)?;
        Ok((s0..s1)
            .enumerate()
            .map(|(k, s)| WindowLatent {
                start: s,
                phi: enc.state(k).phi,
                theta: enc.theta(k),
            })
            .collect())
    });
    let mut out = Vec::with_capacity(windows);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// `(a·sin 2πφ, a·cos 2πφ)` per channel, concatenated.
pub fn phase_features(w: &WindowLatent) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * w.phi.len());
    for (p, a) in w.phi.iter().zip(&w.theta.a) {
        v.push(a * (TAU * p).sin());
        v.push(a * (TAU * p).cos());
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    pub x: f64,
    pub y: f64,
    pub trajectory: usize,
    pub label: Option<String>,
    /// Last frame of the encoded window.
    pub frame: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentManifold {
    pub points: Vec<ManifoldPoint>,
    /// Variance captured by each of the two axes.
    pub explained_variance: Vec<f64>,
}

impl LatentManifold {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "trajectory", "label", "frame"])?;
        for p in &self.points {
            out.write_record([
                format!("{:?}", p.x),
                format!("{:?}", p.y),
                p.trajectory.to_string(),
                p.label.clone().unwrap_or_default(),
                p.frame.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Projects phase features of every window onto the two leading principal
/// axes fitted across the whole corpus.
pub fn export_latent_manifold(model: &FldModel, corpus: &Corpus) -> Result<LatentManifold> {
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (ti, t) in corpus.trajectories.iter().enumerate() {
        if t.len() < model.config.h {
            continue;
        }
        for w in latent_track(model, t)? {
            rows.push(phase_features(&w));
            meta.push((ti, t.label.clone(), w.start + model.config.h - 1));
        }
    }
    if rows.len() < 3 {
        return invalid(format!(
            "manifold export needs at least 3 frames, got {}",
            rows.len()
        ));
    }
    let pca = Pca::fit(&rows, 2)?;
    let points = rows
        .iter()
        .zip(meta)
        .map(|(r, (trajectory, label, frame))| {
            let p = pca.project(r);
            ManifoldPoint {
                x: p[0],
                y: p[1],
                trajectory,
                label,
                frame,
            }
        })
        .collect();
    Ok(LatentManifold {
        points,
        explained_variance: pca.variances.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentConstancy {
    /// `f`, `a` or `b`.
    pub component: String,
    /// Mean over trajectories of the within-trajectory std, per channel.
    pub within: Vec<f64>,
    /// Std over trajectories of the per-trajectory mean, per channel.
    pub across: Vec<f64>,
    /// `within / across`; `None` where the corpus does not vary.
    pub ratio: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiConstancyReport {
    pub components: Vec<ComponentConstancy>,
    pub mean_ratio: f64,
}

/// Across-corpus spread below which a channel is left out.
const MIN_ACROSS_STD: f64 = 1e-9;

/// How constant θ stays inside each trajectory relative to how much it
/// varies across the corpus.
pub fn quasi_constancy_report(model: &FldModel, corpus: &Corpus) -> Result<QuasiConstancyReport> {
    let tracks: Vec<Vec<WindowLatent>> = corpus
        .trajectories
        .iter()
        .filter(|t| t.len() >= model.config.h)
        .map(|t| latent_track(model, t))
        .collect::<Result<_>>()?;
    if tracks.len() < 2 {
        return invalid("quasi-constancy needs at least 2 trajectories of window length");
    }
    let c = model.config.c;
    let mut components = Vec::with_capacity(3);
    let mut ratios = Vec::new();
    for (ci, name) in ["f", "a", "b"].iter().enumerate() {
        let pick = |w: &WindowLatent, ch: usize| match ci {
            0 => w.theta.f[ch],
            1 => w.theta.a[ch],
            _ => w.theta.b[ch],
        };
        let mut comp = ComponentConstancy {
            component: name.to_string(),
            within: Vec::with_capacity(c),
            across: Vec::with_capacity(c),
            ratio: Vec::with_capacity(c),
        };
        for ch in 0..c {
            let mut within = Vec::with_capacity(tracks.len());
            let mut means = Vec::with_capacity(tracks.len());
            for tr in &tracks {
                let v: Vec<f64> = tr.iter().map(|w| pick(w, ch)).collect();
                within.push(std_dev(&v));
                means.push(mean(&v));
            }
            let w = mean(&within);
            let a = std_dev(&means);
            let scale = mean(&means).abs().max(1.0);
            let r = (a > MIN_ACROSS_STD * scale).then(|| w / a);
            if let Some(r) = r {
                ratios.push(r);
            }
            comp.within.push(w);
            comp.across.push(a);
            comp.ratio.push(r);
        }
        components.push(comp);
    }
    if ratios.is_empty() {
        return Err(FldError::Numerical(
            "parameterization does not vary across the corpus; ratio undefined".into(),
        ));
    }
    Ok(QuasiConstancyReport {
        components,
        mean_ratio: mean(&ratios),
    })
}

impl QuasiConstancyReport {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["component", "channel", "within_std", "across_std", "ratio"])?;
        for comp in &self.components {
            for ch in 0..comp.within.len() {
                out.write_record([
                    comp.component.clone(),
                    ch.to_string(),
                    format!("{:?}", comp.within[ch]),
                    format!("{:?}", comp.across[ch]),
                    comp.ratio[ch].map(|r| format!("{r:?}")).unwrap_or_default(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fld::FldConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Oracle;
    struct Constant(NormalizationStats);

    impl HorizonPredictor for Oracle {
        fn dims(&self) -> (usize, usize) {
            (1, 10)
        }
        fn normalization(&self) -> &NormalizationStats {
            static ID: std::sync::OnceLock<NormalizationStats> = std::sync::OnceLock::new();
            ID.get_or_init(|| NormalizationStats::identity(1))
        }
        fn predict_at(&self, tr: &Trajectory, t: usize, n: usize) -> Result<Vec<DenseArray>> {
            (0..=n).map(|i| tr.segment_matrix(t + i, 10)).collect()
        }
    }

    impl HorizonPredictor for Constant {
        fn dims(&self) -> (usize, usize) {
            (1, 10)
        }
        fn normalization(&self) -> &NormalizationStats {
            &self.0
        }
        fn predict_at(&self, tr: &Trajectory, t: usize, n: usize) -> Result<Vec<DenseArray>> {
            Ok(vec![tr.segment_matrix(t, 10)?; n + 1])
        }
    }

    fn sine(len: usize, period: f64) -> Trajectory {
        let data = (0..len).map(|t| (TAU * t as f64 / period).sin()).collect();
        Trajectory::new(1, data, 0.02, None).unwrap()
    }

    #[test]
    fn oracle_is_exact() {
        let r = evaluate_prediction(&[("oracle", &Oracle)], &sine(60, 20.0), 8).unwrap();
        assert_eq!(r.models[0].errors, vec![0.0; 9]);
        assert_eq!(r.anchors, evaluation_anchors(60, 10, 8).unwrap().len());
        assert_eq!(r.models[0].groups[0].group, "all");
    }

    #[test]
    fn constant_predictor_is_periodic() {
        let period = 20.0;
        let tr = sine(200, period);
        let p = Constant(NormalizationStats::identity(1));
        let r = evaluate_prediction(&[("const", &p)], &tr, 40).unwrap();
        let e = &r.models[0].errors;
        assert_eq!(e[0], 0.0);
        assert!(e[5] > e[1]);
        // a shift by one period is exact again
        assert!(e[20] < 1e-9 && e[40] < 1e-9, "{} {}", e[20], e[40]);
        // half a period flips the sign: ‖−s − s‖/‖s‖ = 2
        assert!((e[10] - 2.0).abs() < 1e-6, "{}", e[10]);
    }

    #[test]
    fn horizon_too_long() {
        let p = Constant(NormalizationStats::identity(1));
        let err = evaluate_prediction(&[("c", &p)], &sine(30, 10.0), 25).unwrap_err();
        assert!(matches!(err, FldError::TooShort { needed: 35, .. }));
    }

    #[test]
    fn csv_rows() {
        let r = evaluate_prediction(&[("a", &Oracle), ("b", &Oracle)], &sine(40, 20.0), 3).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s.lines().next().unwrap(),
            "model,horizon,relative_error,relative_error_all"
        );
        assert_eq!(s.lines().count(), 1 + 2 * 4);
    }

    fn model() -> FldModel {
        let cfg = FldConfig {
            hidden: 4,
            kernel: 3,
            ..FldConfig::new(2, 2, 10, 3)
        };
        FldModel::new(
            cfg,
            NormalizationStats::identity(2),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap()
    }

    fn two_dim(len: usize, f: f64, off: f64) -> Trajectory {
        let mut data = Vec::new();
        for t in 0..len {
            let x = TAU * f * t as f64 * 0.02 + off;
            data.extend([x.sin(), 0.5 * x.cos() + off]);
        }
        Trajectory::new(2, data, 0.02, Some(format!("f{f}"))).unwrap()
    }

    #[test]
    fn horizon_zero_matches_reconstruction() {
        let m = model();
        let tr = two_dim(40, 2.0, 0.3);
        let tm = TrainedModel::Fld(m.clone());
        let r = evaluate_prediction(&[("fld", &tm)], &tr, 3).unwrap();
        let anchors = evaluation_anchors(40, 10, 3).unwrap();
        let rec = reconstruction_error(&m, &tr, &anchors).unwrap();
        assert_eq!(r.models[0].errors[0].to_bits(), rec.to_bits());
    }

    #[test]
    fn manifold_rows_and_degenerate_points() {
        let m = model();
        let corpus = Corpus::new(vec![two_dim(30, 2.0, 0.0), two_dim(25, 3.0, 1.0)]).unwrap();
        let man = export_latent_manifold(&m, &corpus).unwrap();
        assert_eq!(man.points.len(), 21 + 16);
        assert_eq!(man.points[0].frame, 9);
        assert_eq!(man.points[21].trajectory, 1);
        let mut buf = Vec::new();
        man.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("x,y,trajectory,label,frame\n"));

        let flat = Trajectory::new(2, vec![0.25; 2 * 12], 0.02, None).unwrap();
        let man = export_latent_manifold(&m, &Corpus::new(vec![flat]).unwrap()).unwrap();
        assert!(man.points.iter().all(|p| p.x == 0.0 && p.y == 0.0));

        let short = Corpus::new(vec![two_dim(11, 2.0, 0.0)]).unwrap();
        assert!(export_latent_manifold(&m, &short).is_err());
    }

    #[test]
    fn manifold_frame_order_invariance() {
        let m = model();
        let tr = two_dim(40, 2.0, 0.0);
        let mut rev = tr.clone();
        let len = tr.len();
        for t in 0..len {
            rev.data_mut()[2 * t..2 * t + 2].copy_from_slice(tr.frame(len - 1 - t));
        }
        let a = export_latent_manifold(&m, &Corpus::new(vec![tr, rev.clone()]).unwrap()).unwrap();
        let b = export_latent_manifold(&m, &Corpus::new(vec![rev, two_dim(40, 2.0, 0.0)]).unwrap())
            .unwrap();
        let n = a.points.len() / 2;
        for k in 0..n {
            let (p, q) = (&a.points[k], &b.points[n + k]);
            assert!((p.x.abs() - q.x.abs()).abs() < 1e-9 && (p.y.abs() - q.y.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn quasi_constancy_paths() {
        let m = model();
        let c = Corpus::new(vec![two_dim(40, 2.0, 0.0), two_dim(40, 3.0, 0.7)]).unwrap();
        let r = quasi_constancy_report(&m, &c).unwrap();
        assert_eq!(r.components.len(), 3);
        assert!(r.mean_ratio.is_finite() && r.mean_ratio >= 0.0);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 2);

        let same = Corpus::new(vec![two_dim(40, 2.0, 0.0), two_dim(40, 2.0, 0.0)]).unwrap();
        assert!(matches!(
            quasi_constancy_report(&m, &same),
            Err(FldError::Numerical(_))
        ));
        let single = Corpus::new(vec![two_dim(40, 2.0, 0.0)]).unwrap();
        assert!(quasi_constancy_report(&m, &single).is_err());
    }
}
