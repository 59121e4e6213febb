use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use fld_core::curriculum::{run_curriculum_sim, write_summaries, write_traces, OracleClassifier, OracleConfig, SimConfig};
use fld_core::dynamics::{calibrate_threshold, synthesize, synthesize_transition, GateConfig, GateStream, LatentRollState};
use fld_core::fld::{default_kernel, FldConfig, FldModel, LatentParameterization};
use fld_core::signal::{family_corpus, load_csv, save_csv, Corpus, CorpusManifest, CsvOptions, Trajectory};
use fld_core::training::{
    evaluate_prediction, export_latent_manifold, load_checkpoint, train, HorizonPredictor, ModelCheckpoint,
    ModelConfig, TrainConfig, TrainedModel,
};

use crate::config::{overlay, read_object, section};
use crate::manifest::ManifestBuilder;
use crate::{Cli, Command, CurriculumArgs, EvalArgs, GateArgs, GenCorpusArgs, ManifoldArgs, SynthArgs, TrainArgs, UsageError};

pub fn run(cli: &Cli) -> Result<()> {
    let m = cli.manifest.as_deref();
    match &cli.command {
        Command::Train(a) => cmd_train(a, m),
        Command::Eval(a) => cmd_eval(a, m),
        Command::Manifold(a) => cmd_manifold(a, m),
        Command::Synth(a) => cmd_synth(a, m),
        Command::Gate(a) => cmd_gate(a, m),
        Command::Curriculum(a) => cmd_curriculum(a, m),
        Command::GenCorpus(a) => cmd_gen_corpus(a, m),
    }
}

fn need(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("{what} `{}` does not exist", path.display())).into());
    }
    Ok(())
}

fn manifest_path(explicit: Option<&Path>, out: &Path, is_dir: bool) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None if is_dir => out.join("manifest.json"),
        None => {
            let mut s = out.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
    }
}

/// Hashes a corpus manifest and every file it lists.
fn corpus_inputs(mb: &mut ManifestBuilder, path: &Path) -> Result<()> {
    mb.input(path)?;
    let m: CorpusManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &m.trajectories {
        mb.input(&base.join(&e.path))?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    need(path, "checkpoint")?;
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn load_fld(path: &Path) -> Result<FldModel> {
    let m = load_model(path)?;
    let kind = m.kind();
    m.into_fld()
        .map_err(|_| UsageError(format!("{} holds a {kind} model; this command needs fld or pae", path.display())).into())
}

fn cmd_train(a: &TrainArgs, mpath: Option<&Path>) -> Result<()> {
    need(&a.corpus, "corpus")?;
    let file = match &a.config {
        Some(p) => {
            need(p, "config")?;
            Some(read_object(p)?)
        }
        None => None,
    };
    let mut mb = ManifestBuilder::new("train");
    corpus_inputs(&mut mb, &a.corpus)?;
    if let Some(p) = &a.config {
        mb.input(p)?;
    }
    let corpus = Corpus::load(&a.corpus)?;
    let d = corpus.dim().ok_or_else(|| anyhow!("corpus {} is empty", a.corpus.display()))?;

    let model_patch = section(file.as_ref(), "model");
    let mut fc: FldConfig = overlay(&FldConfig::default(), model_patch)?;
    fc.d = d;
    if let Some(dt) = corpus.dt() {
        fc.dt = dt;
    }
    if let Some(v) = a.channels {
        fc.c = v;
    }
    if let Some(v) = a.window {
        fc.h = v;
    }
    if let Some(v) = a.horizon {
        fc.n = v;
    }
    if let Some(v) = a.hidden {
        fc.hidden = v;
    }
    let kernel_given = a.kernel.is_some() || model_patch.and_then(|m| m.get("kernel")).is_some();
    fc.kernel = a.kernel.unwrap_or(if kernel_given { fc.kernel } else { default_kernel(fc.h) });

    let mut tc: TrainConfig = overlay(&TrainConfig::default(), section(file.as_ref(), "train"))?;
    if let Some(v) = a.iters {
        tc.max_iterations = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }

    fs::create_dir_all(&a.out)?;
    let run = train(a.model, &corpus, &tc, &fc)?;
    let ckpt = a.out.join("checkpoint.fld");
    ModelCheckpoint::from_run(&run).save(&ckpt)?;
    let loss = a.out.join("loss.csv");
    run.history.save_csv(&loss)?;
    mb.output(&ckpt);
    mb.output(&loss);
    let config = json!({
        "model": ModelConfig::for_kind(a.model, &fc),
        "train": tc,
    });
    mb.finish(config, Some(tc.seed))?
        .save(&manifest_path(mpath, &a.out, true))?;
    eprintln!(
        "trained {} for {} iterations, final loss {:.6}",
        a.model,
        run.iterations,
        run.history.last().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs, mpath: Option<&Path>) -> Result<()> {
    need(&a.trajectory, "trajectory")?;
    let mut mb = ManifestBuilder::new("eval");
    let mut models = Vec::with_capacity(a.checkpoints.len());
    let mut names: Vec<String> = Vec::new();
    for p in &a.checkpoints {
        let m = load_model(p)?;
        mb.input(p)?;
        let base = m.kind().to_string();
        let mut name = base.clone();
        let mut k = 1;
        while names.contains(&name) {
            name = format!("{base}_{k}");
            k += 1;
        }
        names.push(name);
        models.push(m);
    }
    let (d, _) = models[0].dims();
    if models.iter().any(|m| m.dims().0 != d) {
        bail!("checkpoints disagree on the state dimension");
    }
    mb.input(&a.trajectory)?;
    let traj = load_csv(
        &a.trajectory,
        d,
        &CsvOptions {
            header: a.header,
            ..CsvOptions::default()
        },
    )?;
    let refs: Vec<(&str, &dyn HorizonPredictor)> = names
        .iter()
        .zip(&models)
        .map(|(n, m)| (n.as_str(), m as &dyn HorizonPredictor))
        .collect();
    let report = evaluate_prediction(&refs, &traj, a.horizons)?;
    report.save_csv(&a.out)?;
    mb.output(&a.out);
    if let Some(j) = &a.json {
        report.save_json(j)?;
        mb.output(j);
    }
    mb.finish(json!({ "horizons": a.horizons, "models": names }), None)?
        .save(&manifest_path(mpath, &a.out, false))?;
    Ok(())
}

fn cmd_manifold(a: &ManifoldArgs, mpath: Option<&Path>) -> Result<()> {
    need(&a.corpus, "corpus")?;
    let model = load_fld(&a.checkpoint)?;
    let mut mb = ManifestBuilder::new("manifold");
    mb.input(&a.checkpoint)?;
    corpus_inputs(&mut mb, &a.corpus)?;
    let corpus = Corpus::load(&a.corpus)?;
    let m = export_latent_manifold(&model, &corpus)?;
    m.save_csv(&a.out)?;
    mb.output(&a.out);
    mb.finish(json!({ "explained_variance": m.explained_variance }), None)?
        .save(&manifest_path(mpath, &a.out, false))?;
    Ok(())
}

/// Latent state given as JSON.
#[derive(Debug, Serialize, Deserialize)]
struct StateFile {
    #[serde(default)]
    phi: Option<Vec<f64>>,
    theta: LatentParameterization,
}

fn read_state(model: &FldModel, path: &Path, at: usize, header: bool) -> Result<LatentRollState> {
    need(path, "latent source")?;
    let c = model.config.c;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let s: StateFile = serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        let phi = s.phi.unwrap_or_else(|| vec![0.0; c]);
        return Ok(LatentRollState::new(phi, s.theta)?);
    }
    let traj: Trajectory = load_csv(
        path,
        model.config.d,
        &CsvOptions {
            header,
            dt: model.config.dt,
            ..CsvOptions::default()
        },
    )?;
    let seg = model.norm.apply(&traj)?.segment_matrix(at, model.config.h)?;
    Ok(LatentRollState::encode(model, &seg)?)
}

fn cmd_synth(a: &SynthArgs, mpath: Option<&Path>) -> Result<()> {
    let model = load_fld(&a.checkpoint)?;
    let mut mb = ManifestBuilder::new("synth");
    mb.input(&a.checkpoint)?;
    let src = read_state(&model, &a.theta_from, a.at, a.header)?;
    mb.input(&a.theta_from)?;
    let traj = match &a.interp_to {
        Some(p) => {
            let dst = read_state(&model, p, a.at, a.header)?;
            mb.input(p)?;
            synthesize_transition(&model, &src.phi.phi, &src.theta, &dst.theta, a.steps, a.hold)?
        }
        None => synthesize(&model, &src.phi.phi, &src.theta, a.steps)?,
    };
    save_csv(&traj, &a.out)?;
    mb.output(&a.out);
    let config = json!({
        "steps": a.steps,
        "hold": a.hold,
        "at": a.at,
        "phi": src.phi.phi,
        "theta": src.theta,
    });
    mb.finish(config, None)?.save(&manifest_path(mpath, &a.out, false))?;
    Ok(())
}

fn parse_frame(line: &str, lineno: usize) -> Result<Option<Vec<f64>>> {
    let t = line.trim();
    if t.is_empty() || t == "null" || t == "-" {
        return Ok(None);
    }
    let v: Vec<f64> = if t.starts_with('[') {
        serde_json::from_str(t).with_context(|| format!("stdin line {lineno}: bad JSON frame"))?
    } else {
        t.split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("stdin line {lineno}: bad CSV frame"))?
    };
    Ok(Some(v))
}

fn cmd_gate(a: &GateArgs, mpath: Option<&Path>) -> Result<()> {
    let model = load_fld(&a.checkpoint)?;
    let mut mb = ManifestBuilder::new("gate");
    mb.input(&a.checkpoint)?;
    let gate: GateConfig = match (&a.calibrate, a.epsilon) {
        (Some(p), _) => {
            need(p, "calibration corpus")?;
            corpus_inputs(&mut mb, p)?;
            calibrate_threshold(&model, &Corpus::load(p)?, a.quantile, a.stride)?
        }
        (None, Some(e)) => GateConfig::new(e, &model)?,
        (None, None) => return Err(UsageError("give --epsilon or --calibrate".into()).into()),
    };
    let c = model.config.c;
    let init = match &a.init {
        Some(p) => {
            mb.input(p)?;
            read_state(&model, p, 0, false)?
        }
        None => LatentRollState::new(vec![0.0; c], LatentParameterization::zeros(c))?,
    };
    let mut stream = GateStream::new(&model, gate.clone(), init)?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (i, line) in stdin.lock().lines().enumerate() {
        let frame = parse_frame(&line?, i + 1)?;
        let rec = stream.push(frame.as_deref())?;
        serde_json::to_writer(&mut out, &rec)?;
        writeln!(out)?;
    }
    out.flush()?;
    let m = mb.finish(&gate, None)?;
    match mpath {
        Some(p) => m.save(p)?,
        None => m.write_line(io::stderr())?,
    }
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || UsageError(format!("--seeds takes a count or a comma-separated list, got `{s}`"));
    if s.contains(',') {
        return s
            .split(',')
            .map(|x| x.trim().parse::<u64>().map_err(|_| bad().into()))
            .collect();
    }
    let n: u64 = s.trim().parse().map_err(|_| bad())?;
    Ok((0..n).collect())
}

#[derive(Serialize)]
struct SeedLandscape<'a> {
    seed: u64,
    landscape: &'a fld_core::curriculum::SurrogateLandscape,
}

fn cmd_curriculum(a: &CurriculumArgs, mpath: Option<&Path>) -> Result<()> {
    let seeds = parse_seeds(&a.seeds)?;
    let mut mb = ManifestBuilder::new("curriculum");
    let file = match &a.config {
        Some(p) => {
            need(p, "config")?;
            mb.input(p)?;
            Some(read_object(p)?)
        }
        None => None,
    };
    let mut cfg: SimConfig = overlay(&SimConfig::default(), file.as_ref())?;
    if let Some(e) = a.envs {
        cfg.envs = e;
    }
    let oracle_cfg: OracleConfig = overlay(&OracleConfig::default(), section(file.as_ref(), "oracle"))?;
    let runs = seeds
        .par_iter()
        .map(|&s| run_curriculum_sim(a.sampler, a.preset, a.iters, s, &cfg))
        .collect::<fld_core::Result<Vec<_>>>()?;
    let labels = if a.oracle {
        let per_run = runs
            .par_iter()
            .map(|r| {
                let clf = OracleClassifier::train(
                    &r.landscape,
                    &OracleConfig {
                        seed: r.seed,
                        ..oracle_cfg.clone()
                    },
                )?;
                let thetas: Vec<Vec<f64>> = r.rows.iter().map(|x| x.theta.clone()).collect();
                clf.predict(&thetas)
            })
            .collect::<fld_core::Result<Vec<_>>>()?;
        Some(per_run.concat())
    } else {
        None
    };
    fs::create_dir_all(&a.out)?;
    let traces = a.out.join("traces.csv");
    write_traces(&runs, io::BufWriter::new(fs::File::create(&traces)?), labels.as_deref())?;
    let summary = a.out.join("summary.csv");
    write_summaries(&runs, io::BufWriter::new(fs::File::create(&summary)?))?;
    let land = a.out.join("landscapes.json");
    let ls: Vec<SeedLandscape> = runs
        .iter()
        .map(|r| SeedLandscape {
            seed: r.seed,
            landscape: &r.landscape,
        })
        .collect();
    fs::write(&land, serde_json::to_string_pretty(&ls)?)?;
    for p in [&traces, &summary, &land] {
        mb.output(p);
    }
    let config = json!({
        "sampler": a.sampler.to_string(),
        "preset": a.preset,
        "iterations": a.iters,
        "seeds": seeds,
        "sim": cfg,
        "oracle": a.oracle.then_some(&oracle_cfg),
    });
    mb.finish(config, seeds.first().copied())?
        .save(&manifest_path(mpath, &a.out, true))?;
    for r in &runs {
        eprintln!(
            "seed {}: final running r {:.3}, gamma {:.3}",
            r.seed,
            r.final_running_performance().unwrap_or(f64::NAN),
            r.summary.last().map(|s| s.gamma).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn cmd_gen_corpus(a: &GenCorpusArgs, mpath: Option<&Path>) -> Result<()> {
    if a.per_family == 0 || a.frames == 0 {
        return Err(UsageError("--per-family and --frames must be positive".into()).into());
    }
    let mut mb = ManifestBuilder::new("gen-corpus");
    let corpus = Corpus::new(family_corpus(a.per_family, a.frames, a.noise, a.seed)?)?;
    let manifest = corpus.save(&a.out)?;
    mb.output(&manifest);
    let config = json!({
        "per_family": a.per_family,
        "frames": a.frames,
        "noise": a.noise,
    });
    let run_manifest = a.out.join("run_manifest.json");
    mb.finish(config, Some(a.seed))?
        .save(mpath.unwrap_or(&run_manifest))?;
    Ok(())
}
