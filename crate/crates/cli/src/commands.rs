use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use tdcbf::engine::{Engine, EngineConfig, CHANNELS};
use tdcbf::experiment::{self, Aggregate, ExperimentSpec, TrialResult};
use tdcbf::metrics::{improvement, sliding_eval_many, EvalResult, Evaluator, Improvement, Windowing};
use tdcbf::rirsim::Point;
use tdcbf::wav::{self, Audio};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::{BenchArgs, Cli, Command, EvaluateArgs, SeparateArgs, SimulateArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::ReferenceConfig { output } => reference_config(output.as_deref()),
        Command::Simulate(args) => simulate(cfg, args),
        Command::Separate(args) => separate(cfg, args),
        Command::Evaluate(args) => evaluate(cfg, args),
        Command::Bench(args) => bench(cfg, args),
    }
}

fn reference_config(output: Option<&Path>) -> Result<()> {
    let text = RunConfig::reference_toml();
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn output_dir(arg: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = arg
        .or_else(|| cfg.io.output_dir.clone())
        .ok_or_else(|| CliError::config("no output directory: pass --output-dir or set io.output_dir"))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub trial: u64,
    pub seed: u64,
    pub synthetic_sources: bool,
    pub sample_rate: u32,
    pub samples: usize,
    pub angles: [f64; 2],
    pub reference_mic: usize,
    pub geometry: Geometry,
    pub files: ManifestFiles,
    /// Full configuration the mixture was rendered from.
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub room_dimensions: Point,
    pub t60: f64,
    pub wall_absorption: f64,
    pub mic_positions: [Point; 2],
    pub source_positions: [Point; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFiles {
    pub mixture: String,
    pub references: [String; 2],
}

fn simulate(mut cfg: RunConfig, args: SimulateArgs) -> Result<()> {
    let (trial, synthetic) = match &args.manifest {
        Some(path) => {
            let m: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            // A manifest replays exactly; its embedded config wins.
            cfg = m.config;
            (m.trial, m.synthetic_sources)
        }
        None => {
            if let Some(a) = &args.angles {
                let [a0, a1] = a[..] else {
                    return Err(CliError::config("--angles takes two values"));
                };
                cfg.scene.source_angles = [a0, a1];
            }
            if let Some(d) = args.duration {
                cfg.duration = d;
            }
            (args.trial, args.synthetic_sources)
        }
    };
    if !(cfg.duration > 0.0) {
        return Err(CliError::config("duration must be positive"));
    }
    let dir = output_dir(args.output_dir, &cfg)?;
    let mut spec = cfg.experiment(synthetic)?;
    spec.angle_pairs = vec![cfg.scene.source_angles];
    // Pin the resolved corpus so the manifest replays without the environment.
    cfg.io.corpus = spec.corpus.clone();
    cfg.io.output_dir = None;
    let mixture = spec.mixture(0, trial)?;

    let fs = cfg.room.sample_rate;
    let reference = cfg.engine.reference;
    let files = ManifestFiles {
        mixture: "mixture.wav".into(),
        references: ["reference_0.wav".into(), "reference_1.wav".into()],
    };
    let mix = Audio { sample_rate: fs, channels: mixture.mix.to_vec() };
    wav::write(&dir.join(&files.mixture), &mix)?;
    for (img, name) in mixture.references(reference).iter().zip(&files.references) {
        wav::write_mono(&dir.join(name), fs, img)?;
    }
    if args.export_rirs {
        let rirs = tdcbf::rirsim::scene_rirs_cached(&cfg.room, &cfg.scene)?;
        for (n, per_mic) in rirs.iter().enumerate() {
            for (m, h) in per_mic.iter().enumerate() {
                wav::write_mono(&dir.join(format!("rir_s{n}_m{m}.wav")), fs, h)?;
            }
        }
    }
    let manifest = Manifest {
        trial,
        seed: cfg.seed,
        synthetic_sources: synthetic,
        sample_rate: fs,
        samples: mixture.mix[0].len(),
        angles: cfg.scene.source_angles,
        reference_mic: reference,
        geometry: Geometry {
            room_dimensions: cfg.room.dimensions,
            t60: cfg.room.t60,
            wall_absorption: cfg.room.absorption()?,
            mic_positions: cfg.scene.mic_positions(),
            source_positions: cfg.scene.source_positions(),
        },
        files,
        config: cfg,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} samples at {fs} Hz, sources at {:?} deg, to {}",
        manifest.samples,
        manifest.angles,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- separate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparateReport {
    pub preset: Option<String>,
    pub engine: EngineConfig,
    pub chunk_samples: usize,
    pub sample_rate: u32,
    pub samples: usize,
    pub delay_samples: usize,
    pub delay_ms: f64,
    pub frames_adapted: u64,
    pub banks_installed: u64,
    pub wall_seconds: f64,
    pub real_time_factor: f64,
}

fn separate(mut cfg: RunConfig, args: SeparateArgs) -> Result<()> {
    if let Some(name) = &args.preset {
        cfg.engine = EngineConfig::preset(name).map_err(|e| CliError::config(e.to_string()))?;
    }
    if args.no_adapt {
        cfg.engine.adapt = false;
    }
    let chunk = args.chunk_size.unwrap_or(cfg.bench.chunk_samples);
    if chunk == 0 {
        return Err(CliError::config("chunk size must be positive"));
    }
    let input = args
        .input
        .or_else(|| cfg.io.input.clone())
        .ok_or_else(|| CliError::config("no input: pass --input or set io.input"))?;
    let audio = wav::read(&input)?;
    if audio.channels.len() != CHANNELS {
        return Err(CliError::config(format!(
            "{} has {} channels, the engine needs {CHANNELS}",
            input.display(),
            audio.channels.len()
        )));
    }
    if audio.sample_rate != cfg.engine.sample_rate {
        return Err(CliError::config(format!(
            "{} is sampled at {} Hz, the engine runs at {} Hz",
            input.display(),
            audio.sample_rate,
            cfg.engine.sample_rate
        )));
    }
    let dir = output_dir(args.output_dir, &cfg)?;

    let mut engine = Engine::new(cfg.engine).map_err(|e| match e {
        e if e.is_numerical() => CliError::Core(e),
        e => CliError::config(e.to_string()),
    })?;
    let interleaved = audio.interleaved();
    let started = Instant::now();
    let mut out = Vec::with_capacity(interleaved.len());
    for piece in interleaved.chunks(chunk * CHANNELS) {
        engine.push_into(piece, &mut out)?;
    }
    out.extend(engine.flush()?);
    let wall = started.elapsed().as_secs_f64();

    let sep = Audio::from_interleaved(audio.sample_rate, CHANNELS, &out);
    for (n, y) in sep.channels.iter().enumerate() {
        wav::write_mono(&dir.join(format!("source_{n}.wav")), audio.sample_rate, y)?;
    }
    let ledger = engine.ledger();
    let stats = engine.stats();
    let seconds = audio.len() as f64 / audio.sample_rate as f64;
    let report = SeparateReport {
        preset: args.preset,
        engine: cfg.engine,
        chunk_samples: chunk,
        sample_rate: audio.sample_rate,
        samples: audio.len(),
        delay_samples: ledger.algorithmic_delay,
        delay_ms: ledger.delay_ms(audio.sample_rate as f64),
        frames_adapted: stats.frames,
        banks_installed: stats.banks_installed,
        wall_seconds: wall,
        real_time_factor: if seconds > 0.0 { wall / seconds } else { 0.0 },
    };
    write_json(&dir.join("report.json"), &report)?;
    println!(
        "separated {:.2} s, delay {:.2} ms, real-time factor {:.3}",
        seconds, report.delay_ms, report.real_time_factor
    );
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn load_tracks(paths: &[PathBuf]) -> Result<(u32, Vec<Vec<f64>>)> {
    let mut rate = None;
    let mut tracks = Vec::new();
    for p in paths {
        let a = wav::read(p)?;
        if *rate.get_or_insert(a.sample_rate) != a.sample_rate {
            return Err(CliError::config(format!("{} has a different sample rate", p.display())));
        }
        tracks.extend(a.channels);
    }
    Ok((rate.unwrap_or(0), tracks))
}

#[derive(Debug, Serialize)]
struct SlidingRow {
    window_start_s: f64,
    source: usize,
    estimate: usize,
    sdr: f64,
    sir: f64,
    sar: f64,
    delta_sdr: Option<f64>,
    delta_sir: Option<f64>,
    delta_sar: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EvaluateSummary {
    sample_rate: u32,
    samples: usize,
    discard_seconds: f64,
    window_seconds: f64,
    hop_seconds: f64,
    windows: usize,
    full: EvalResult,
    post: EvalResult,
    baseline_post: Option<EvalResult>,
    post_improvement: Option<Improvement>,
}

fn evaluate(cfg: RunConfig, args: EvaluateArgs) -> Result<()> {
    let (fs, est) = load_tracks(&args.estimates)?;
    let (fs_ref, refs) = load_tracks(&args.references)?;
    if fs != fs_ref {
        return Err(CliError::config("estimates and references differ in sample rate"));
    }
    if est.len() != refs.len() {
        return Err(CliError::config(format!(
            "{} estimate channels for {} references",
            est.len(),
            refs.len()
        )));
    }
    let len = refs[0].len();
    if est.iter().chain(&refs).any(|x| x.len() != len) {
        return Err(CliError::config("estimates and references differ in length"));
    }
    let mix = match &args.mixture {
        None => None,
        Some(p) => {
            let a = wav::read(p)?;
            let ch = cfg.engine.reference;
            if a.sample_rate != fs || a.len() != len || ch >= a.channels.len() {
                return Err(CliError::config(format!("{} does not match the references", p.display())));
            }
            Some(a.channels[ch].clone())
        }
    };

    let discard = args.discard_seconds.unwrap_or(cfg.eval.discard);
    let start = (discard * fs as f64).round() as usize;
    if !(discard >= 0.0) || start >= len {
        return Err(CliError::config("discard must lie inside the signal"));
    }
    let ev = &cfg.eval;
    let windowing =
        Windowing::from_seconds(ev.window, ev.hop, fs).map_err(|e| CliError::config(e.to_string()))?;
    if windowing.window > len {
        return Err(CliError::config("evaluation window exceeds the signal"));
    }
    let dir = output_dir(args.output_dir, &cfg)?;

    let slices = |v: &[Vec<f64>]| -> Vec<Vec<f64>> { v.iter().map(|x| x[start..].to_vec()).collect() };
    let refs_s: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
    let est_s: Vec<&[f64]> = est.iter().map(Vec::as_slice).collect();
    let full = tdcbf::metrics::bss_eval(&est_s, &refs_s, ev.proj_len)?;

    let post_refs = slices(&refs);
    let post_refs_s: Vec<&[f64]> = post_refs.iter().map(Vec::as_slice).collect();
    let post_eval = Evaluator::new(&post_refs_s, ev.proj_len)?;
    let post_est = slices(&est);
    let post = post_eval.eval(&post_est.iter().map(Vec::as_slice).collect::<Vec<_>>())?;

    let mut sets = vec![est_s.clone()];
    if let Some(m) = &mix {
        sets.push(vec![m.as_slice(); refs.len()]);
    }
    let curves = sliding_eval_many(&sets, &refs_s, windowing, fs, ev.proj_len, cfg!(feature = "parallel"))?;

    let (baseline_post, post_improvement) = match &mix {
        None => (None, None),
        Some(m) => {
            let tail = m[start..].to_vec();
            let base = post_eval.eval(&vec![tail.as_slice(); refs.len()])?;
            let imp = improvement(&post, &base)?;
            (Some(base), Some(imp))
        }
    };

    let mut writer = csv::Writer::from_path(dir.join("sliding.csv"))?;
    for (w, r) in curves[0].iter().enumerate() {
        let delta = match curves.get(1) {
            Some(base) => Some(improvement(r, &base[w])?),
            None => None,
        };
        for j in 0..r.sources() {
            writer.serialize(SlidingRow {
                window_start_s: r.window_start,
                source: j,
                estimate: r.permutation[j],
                sdr: r.sdr[j],
                sir: r.sir[j],
                sar: r.sar[j],
                delta_sdr: delta.as_ref().map(|d| d.sdr[j]),
                delta_sir: delta.as_ref().map(|d| d.sir[j]),
                delta_sar: delta.as_ref().map(|d| d.sar[j]),
            })?;
        }
    }
    writer.flush()?;

    println!(
        "post-{discard} s SDR {:.2} dB, SIR {:.2} dB, SAR {:.2} dB",
        post.mean_sdr(),
        post.mean_sir(),
        post.mean_sar()
    );
    if let Some(imp) = &post_improvement {
        println!(
            "improvement SDR {:+.2} dB, SIR {:+.2} dB, SAR {:+.2} dB",
            imp.mean_sdr(),
            imp.mean_sir(),
            imp.mean_sar()
        );
    }
    let summary = EvaluateSummary {
        sample_rate: fs,
        samples: len,
        discard_seconds: discard,
        window_seconds: ev.window,
        hop_seconds: ev.hop,
        windows: curves[0].len(),
        full,
        post,
        baseline_post,
        post_improvement,
    };
    write_json(&dir.join("summary.json"), &summary)
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Serialize)]
struct BenchResults<'a> {
    spec: &'a ExperimentSpec,
    aggregate: &'a [Aggregate],
    trials: &'a [TrialResult],
}

#[derive(Debug, Serialize)]
struct AggregateRow<'a> {
    condition: usize,
    angle_0: f64,
    angle_1: f64,
    method: &'a str,
    delay_samples: usize,
    delay_ms: f64,
    trials: usize,
    delta_sdr: f64,
    delta_sir: f64,
    delta_sar: f64,
    real_time_factor: f64,
}

#[derive(Debug, Serialize)]
struct CurveRow<'a> {
    condition: usize,
    angle_0: f64,
    angle_1: f64,
    method: &'a str,
    window_start_s: f64,
    delta_sdr: f64,
    delta_sir: f64,
    delta_sar: f64,
}

fn bench(mut cfg: RunConfig, args: BenchArgs) -> Result<()> {
    if args.smoke {
        cfg.bench.trials = 2;
        cfg.duration = 4.0;
        cfg.eval.discard = 2.0;
    }
    if let Some(t) = args.trials {
        cfg.bench.trials = t;
    }
    if let Some(d) = args.duration {
        cfg.duration = d;
    }
    if let Some(p) = args.presets {
        cfg.bench.presets = p;
    }
    if let Some(c) = args.chunk_size {
        cfg.bench.chunk_samples = c;
    }
    if let Some(d) = args.discard_seconds {
        cfg.eval.discard = d;
    }
    let spec = cfg.experiment(args.synthetic_sources)?;
    spec.validate().map_err(|e| CliError::config(e.to_string()))?;
    spec.methods().map_err(|e| CliError::config(e.to_string()))?;
    let dir = output_dir(args.output_dir, &cfg)?;

    let parallel = cfg!(feature = "parallel") && !args.sequential;
    let trials = experiment::run_experiment(&spec, parallel)?;
    let agg = experiment::aggregate(&trials);
    let fs = spec.room.sample_rate as f64;

    let mut writer = csv::Writer::from_path(dir.join("aggregate.csv"))?;
    for a in &agg {
        writer.serialize(AggregateRow {
            condition: a.condition,
            angle_0: a.angles[0],
            angle_1: a.angles[1],
            method: &a.method,
            delay_samples: a.delay_samples,
            delay_ms: 1e3 * a.delay_samples as f64 / fs,
            trials: a.trials,
            delta_sdr: a.delta_sdr,
            delta_sir: a.delta_sir,
            delta_sar: a.delta_sar,
            real_time_factor: a.real_time_factor,
        })?;
    }
    writer.flush()?;
    let mut writer = csv::Writer::from_path(dir.join("curves.csv"))?;
    for a in &agg {
        for (k, &t) in a.curve_time.iter().enumerate() {
            writer.serialize(CurveRow {
                condition: a.condition,
                angle_0: a.angles[0],
                angle_1: a.angles[1],
                method: &a.method,
                window_start_s: t,
                delta_sdr: a.curve_sdr[k],
                delta_sir: a.curve_sir[k],
                delta_sar: a.curve_sar[k],
            })?;
        }
    }
    writer.flush()?;
    write_json(&dir.join("results.json"), &BenchResults { spec: &spec, aggregate: &agg, trials: &trials })?;

    println!(
        "{} trials x {} conditions, {} s each, improvements over the mixture after {} s",
        spec.trials,
        spec.angle_pairs.len(),
        spec.duration,
        spec.eval.discard
    );
    println!(
        "{:<12} {:>12} {:>9} {:>8} {:>8} {:>8} {:>7}",
        "method", "angles", "delay ms", "dSDR", "dSIR", "dSAR", "RTF"
    );
    for a in &agg {
        println!(
            "{:<12} {:>12} {:>9.2} {:>8.2} {:>8.2} {:>8.2} {:>7.3}",
            a.method,
            format!("{}/{}", a.angles[0], a.angles[1]),
            1e3 * a.delay_samples as f64 / fs,
            a.delta_sdr,
            a.delta_sir,
            a.delta_sar,
            a.real_time_factor
        );
    }
    Ok(())
}
