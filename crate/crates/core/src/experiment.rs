//! Benchmark protocol: simulated two-source trials, one engine run per
//! method, post-convergence aggregates and sliding improvement curves.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{process_signal, EngineConfig, CHANNELS, PRESET_NAMES};
use crate::error::{Error, Result};
use crate::metrics::{self, improvement, sliding_eval_many, EvalResult, Evaluator, Improvement, Windowing};
use crate::par;
use crate::rirsim::{self, make_mixture, Mixture, RoomSpec, SceneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    /// Sliding-window length, seconds.
    pub window: f64,
    /// Sliding-window hop, seconds.
    pub hop: f64,
    pub proj_len: usize,
    /// Leading seconds excluded from the aggregate.
    pub discard: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            window: 2.0,
            hop: 1.0,
            proj_len: metrics::DEFAULT_PROJ_LEN,
            discard: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub room: RoomSpec,
    /// Geometry shared by all conditions; angles come from `angle_pairs`.
    pub scene: SceneSpec,
    pub angle_pairs: Vec<[f64; 2]>,
    pub trials: usize,
    /// Seconds per mixture.
    pub duration: f64,
    pub seed: u64,
    pub presets: Vec<String>,
    pub eval: EvalSpec,
    pub chunk_samples: usize,
    /// WAV corpus directory; synthetic sources when absent.
    pub corpus: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            room: RoomSpec::default(),
            scene: SceneSpec::default(),
            angle_pairs: vec![[30.0, 90.0], [30.0, 150.0]],
            trials: 12,
            duration: 20.0,
            seed: 0,
            presets: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            eval: EvalSpec::default(),
            chunk_samples: 4096,
            corpus: None,
        }
    }
}

impl ExperimentSpec {
    pub fn samples(&self) -> usize {
        (self.duration * self.room.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        if self.angle_pairs.is_empty() || self.trials == 0 || self.presets.is_empty() {
            return Err(Error::Config("need at least one angle pair, trial and preset".into()));
        }
        if !(self.eval.discard >= 0.0 && self.eval.discard < self.duration) {
            return Err(Error::Config("discard must lie inside the mixture duration".into()));
        }
        if self.eval.window > self.duration || self.eval.proj_len == 0 {
            return Err(Error::Config("evaluation window exceeds the mixture".into()));
        }
        Windowing::from_seconds(self.eval.window, self.eval.hop, self.room.sample_rate)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.presets
            .iter()
            .map(|p| {
                let engine = EngineConfig::preset(p)?;
                if engine.sample_rate != self.room.sample_rate {
                    return Err(Error::Config(format!(
                        "preset {p} runs at {} Hz, room at {} Hz",
                        engine.sample_rate, self.room.sample_rate
                    )));
                }
                Ok(Method { name: p.clone(), engine })
            })
            .collect()
    }

    fn source_pair(&self, trial: u64) -> Result<[Vec<f64>; 2]> {
        let (len, fs) = (self.samples(), self.room.sample_rate);
        match &self.corpus {
            None => Ok(rirsim::synthetic_pair(self.seed, trial, len, fs)),
            Some(dir) => {
                let files = rirsim::corpus_files(dir)?;
                Ok([
                    rirsim::corpus_source(&files, trial, 0, len, fs)?,
                    rirsim::corpus_source(&files, trial, 1, len, fs)?,
                ])
            }
        }
    }

    /// Mixture of trial `trial` under angle pair `condition`. Sources depend
    /// only on `(seed, trial)`, so conditions share their dry signals.
    pub fn mixture(&self, condition: usize, trial: u64) -> Result<Mixture> {
        let angles = *self
            .angle_pairs
            .get(condition)
            .ok_or_else(|| Error::invalid("condition out of range"))?;
        let scene = SceneSpec { source_angles: angles, ..self.scene };
        let rirs = rirsim::scene_rirs_cached(&self.room, &scene)?;
        make_mixture(&rirs, &self.source_pair(trial)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub engine: EngineConfig,
}

/// Engine output for one method. Output sample `t` estimates input time
/// `t`; it is emitted `delay` samples after input `t` arrives.
#[derive(Debug, Clone)]
pub struct MethodRun {
    /// Interleaved engine output.
    pub raw: Vec<f64>,
    /// `aligned[n][t]`, deinterleaved.
    pub aligned: [Vec<f64>; 2],
    pub delay: usize,
    /// Wall-clock seconds per second of audio.
    pub real_time_factor: f64,
}

pub fn run_method(method: &Method, mixture: &Mixture, chunk_samples: usize) -> Result<MethodRun> {
    let input = mixture.interleaved();
    let t0 = Instant::now();
    let raw = process_signal(method.engine, &input, chunk_samples)?;
    let elapsed = t0.elapsed().as_secs_f64();
    let len = mixture.mix[0].len();
    let delay = method.engine.algorithmic_delay();
    let aligned = [0, 1].map(|n| (0..len).map(|t| raw[t * CHANNELS + n]).collect());
    let audio = len as f64 / method.engine.sample_rate as f64;
    Ok(MethodRun { raw, aligned, delay, real_time_factor: elapsed / audio })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodResult {
    pub name: String,
    pub delay_samples: usize,
    pub real_time_factor: f64,
    /// Metrics after the discard window.
    pub post: EvalResult,
    pub post_improvement: Improvement,
    /// Per-window improvements over the unprocessed mixture.
    pub curve: Vec<Improvement>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub condition: usize,
    pub angles: [f64; 2],
    pub trial: u64,
    pub baseline_post: EvalResult,
    pub methods: Vec<MethodResult>,
}

/// Evaluate runs of one mixture against its reference images.
pub fn evaluate_trial(
    spec: &ExperimentSpec,
    condition: usize,
    trial: u64,
    mixture: &Mixture,
    methods: &[Method],
    runs: &[MethodRun],
    parallel: bool,
) -> Result<TrialResult> {
    let fs = spec.room.sample_rate;
    let refs_owned = mixture.references(methods.first().map_or(0, |m| m.engine.reference));
    let refs: Vec<&[f64]> = refs_owned.iter().map(Vec::as_slice).collect();
    let mix_ref = &mixture.mix[methods.first().map_or(0, |m| m.engine.reference)];

    let start = (spec.eval.discard * fs as f64).round() as usize;
    let tail = |x: &[f64]| -> Vec<f64> { x[start..].to_vec() };
    let post_refs_owned: Vec<Vec<f64>> = refs.iter().map(|r| tail(r)).collect();
    let post_refs: Vec<&[f64]> = post_refs_owned.iter().map(Vec::as_slice).collect();
    let post_eval = Evaluator::new(&post_refs, spec.eval.proj_len)?;
    let mix_tail = tail(mix_ref);
    let baseline_post = post_eval.eval(&[&mix_tail, &mix_tail])?;

    let mut sets: Vec<Vec<&[f64]>> = runs
        .iter()
        .map(|r| r.aligned.iter().map(Vec::as_slice).collect())
        .collect();
    sets.push(vec![mix_ref.as_slice(), mix_ref.as_slice()]);
    let windowing = Windowing::from_seconds(spec.eval.window, spec.eval.hop, fs)?;
    let curves = sliding_eval_many(&sets, &refs, windowing, fs, spec.eval.proj_len, parallel)?;
    let (base_curve, method_curves) = curves.split_last().expect("baseline set present");

    let mut out = Vec::with_capacity(runs.len());
    for ((m, run), curve) in methods.iter().zip(runs).zip(method_curves) {
        let est: Vec<Vec<f64>> = run.aligned.iter().map(|y| tail(y)).collect();
        let post = post_eval.eval(&[&est[0], &est[1]])?;
        let post_improvement = improvement(&post, &baseline_post)?;
        let curve = curve
            .iter()
            .zip(base_curve)
            .map(|(r, b)| improvement(r, b))
            .collect::<Result<Vec<_>>>()?;
        out.push(MethodResult {
            name: m.name.clone(),
            delay_samples: run.delay,
            real_time_factor: run.real_time_factor,
            post,
            post_improvement,
            curve,
        });
    }
    Ok(TrialResult {
        condition,
        angles: spec.angle_pairs[condition],
        trial,
        baseline_post,
        methods: out,
    })
}

pub fn run_trial(spec: &ExperimentSpec, methods: &[Method], condition: usize, trial: u64) -> Result<TrialResult> {
    let mixture = spec.mixture(condition, trial)?;
    let runs = methods
        .iter()
        .map(|m| run_method(m, &mixture, spec.chunk_samples))
        .collect::<Result<Vec<_>>>()?;
    evaluate_trial(spec, condition, trial, &mixture, methods, &runs, false)
}

/// Every (condition, trial) pair, trials fanned out over the thread pool.
pub fn run_experiment(spec: &ExperimentSpec, parallel: bool) -> Result<Vec<TrialResult>> {
    spec.validate()?;
    let mut methods = spec.methods()?;
    // Trials are the parallel axis; each engine stays single-threaded.
    for m in &mut methods {
        m.engine.parallel = false;
    }
    // Resolve the room calibration once before fanning out.
    spec.room.absorption()?;
    let jobs: Vec<(usize, u64)> = (0..spec.angle_pairs.len())
        .flat_map(|c| (0..spec.trials as u64).map(move |t| (c, t)))
        .collect();
    par::map_range(jobs.len(), parallel, |k| run_trial(spec, &methods, jobs[k].0, jobs[k].1))
        .into_iter()
        .collect()
}

/// Trial means for one (condition, method) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub condition: usize,
    pub angles: [f64; 2],
    pub method: String,
    pub delay_samples: usize,
    pub trials: usize,
    pub delta_sdr: f64,
    pub delta_sir: f64,
    pub delta_sar: f64,
    pub real_time_factor: f64,
    /// Window starts (seconds) and trial-mean improvements per window.
    pub curve_time: Vec<f64>,
    pub curve_sdr: Vec<f64>,
    pub curve_sir: Vec<f64>,
    pub curve_sar: Vec<f64>,
}

pub fn aggregate(results: &[TrialResult]) -> Vec<Aggregate> {
    let mut cells: Vec<Aggregate> = Vec::new();
    for tr in results {
        for m in &tr.methods {
            let idx = cells
                .iter()
                .position(|c| c.condition == tr.condition && c.method == m.name)
                .unwrap_or_else(|| {
                    cells.push(Aggregate {
                        condition: tr.condition,
                        angles: tr.angles,
                        method: m.name.clone(),
                        delay_samples: m.delay_samples,
                        trials: 0,
                        delta_sdr: 0.0,
                        delta_sir: 0.0,
                        delta_sar: 0.0,
                        real_time_factor: 0.0,
                        curve_time: m.curve.iter().map(|w| w.window_start).collect(),
                        curve_sdr: vec![0.0; m.curve.len()],
                        curve_sir: vec![0.0; m.curve.len()],
                        curve_sar: vec![0.0; m.curve.len()],
                    });
                    cells.len() - 1
                });
            let c = &mut cells[idx];
            c.trials += 1;
            c.delta_sdr += m.post_improvement.mean_sdr();
            c.delta_sir += m.post_improvement.mean_sir();
            c.delta_sar += m.post_improvement.mean_sar();
            c.real_time_factor += m.real_time_factor;
            for (k, w) in m.curve.iter().enumerate().take(c.curve_sdr.len()) {
                c.curve_sdr[k] += w.mean_sdr();
                c.curve_sir[k] += w.mean_sir();
                c.curve_sar[k] += w.mean_sar();
            }
        }
    }
    for c in &mut cells {
        let n = c.trials as f64;
        c.delta_sdr /= n;
        c.delta_sir /= n;
        c.delta_sar /= n;
        c.real_time_factor /= n;
        for v in c.curve_sdr.iter_mut().chain(&mut c.curve_sir).chain(&mut c.curve_sar) {
            *v /= n;
        }
    }
    cells
}

/// Centered moving average; the ends use the available neighbours.
pub fn moving_average(v: &[f64], width: usize) -> Vec<f64> {
    let h = width / 2;
    (0..v.len())
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(h), (i + h + 1).min(v.len()));
            v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// First time at which `curve` reaches `fraction` of its final value.
pub fn time_to_fraction(time: &[f64], curve: &[f64], fraction: f64) -> Option<f64> {
    let last = *curve.last()?;
    let goal = fraction * last;
    time.iter()
        .zip(curve)
        .find(|(_, v)| if last >= 0.0 { **v >= goal } else { **v <= goal })
        .map(|(t, _)| *t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        let s = ExperimentSpec::default();
        s.validate().unwrap();
        assert_eq!(s.samples(), 320000);
        assert_eq!(s.methods().unwrap().len(), 4);
        let bad = ExperimentSpec { trials: 0, ..s.clone() };
        assert!(bad.validate().is_err());
        let bad = ExperimentSpec { presets: vec!["nope".into()], ..s };
        assert!(bad.methods().is_err());
    }

    #[test]
    fn curve_helpers() {
        assert_eq!(moving_average(&[0.0, 3.0, 6.0, 9.0], 3), vec![1.5, 3.0, 6.0, 7.5]);
        assert!((slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
        assert_eq!(slope(&[1.0], &[1.0]), 0.0);
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(time_to_fraction(&t, &[0.0, 5.0, 9.0, 10.0], 0.8), Some(2.0));
        assert_eq!(time_to_fraction(&t, &[], 0.8), None);
    }

    #[test]
    fn aggregate_averages_trials() {
        let imp = |v: f64| Improvement { sdr: vec![v, v], sir: vec![v, v], sar: vec![v, v], window_start: 0.0 };
        let ev = EvalResult { sdr: vec![0.0; 2], sir: vec![0.0; 2], sar: vec![0.0; 2], permutation: vec![0, 1], window_start: 0.0 };
        let trial = |t: u64, v: f64| TrialResult {
            condition: 0,
            angles: [30.0, 90.0],
            trial: t,
            baseline_post: ev.clone(),
            methods: vec![MethodResult {
                name: "m".into(),
                delay_samples: 64,
                real_time_factor: 0.5,
                post: ev.clone(),
                post_improvement: imp(v),
                curve: vec![imp(v), imp(2.0 * v)],
            }],
        };
        let a = aggregate(&[trial(0, 1.0), trial(1, 3.0)]);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].trials, 2);
        assert_eq!(a[0].delta_sdr, 2.0);
        assert_eq!(a[0].curve_sdr, vec![2.0, 4.0]);
    }
}
