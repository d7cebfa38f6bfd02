//! Shoebox image-source room simulation and synthetic test sources.
//!
//! Walls share one absorption coefficient `a`; every reflection scales
//! pressure by `beta = sqrt(1 - a)` and each image contributes
//! `beta^order / (4 pi r)` at delay `r / c`, realized with an 81-tap
//! Hann-windowed sinc. `a` starts from Sabine's `0.161 V / (S T60)`. Image
//! sources in a non-cubic room decay more slowly than the diffuse-field
//! estimate, so by default `a` is then raised until the simulated decay has
//! the requested T60. Reverberant responses are high-passed at 50 Hz to
//! remove the low-frequency build-up of the all-positive image sum.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{C64, ZERO};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Half-width of the fractional-delay kernel (81 taps).
pub const SINC_HALF: i64 = 40;
/// Environment variable naming a directory of WAV files.
pub const CORPUS_ENV: &str = "TDCBF_CORPUS";

/// Cutoff of the high-pass applied to reverberant responses.
pub const HIGHPASS_HZ: f64 = 50.0;

pub type Point = [f64; 3];

static CALIBRATION: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomSpec {
    pub dimensions: Point,
    pub t60: f64,
    pub sample_rate: u32,
    /// Defaults to `ceil(c T60 / min dimension) + 1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_image_order: Option<usize>,
    /// Direct path only.
    pub anechoic: bool,
    pub absorption_model: AbsorptionModel,
}

/// How the uniform wall absorption is derived from the requested T60.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsorptionModel {
    /// `a = 0.161 V / (S T60)` as is.
    Sabine,
    /// Start from Sabine, then bisect `a` until the Schroeder T60 of a
    /// probe response in the same room matches the request.
    #[default]
    Calibrated,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            dimensions: [6.0, 5.0, 3.0],
            t60: 0.6,
            sample_rate: 16000,
            max_image_order: None,
            anechoic: false,
            absorption_model: AbsorptionModel::Calibrated,
        }
    }
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("room dimensions must be positive"));
        }
        if !(self.t60 > 0.0) {
            return Err(Error::invalid("T60 must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        self.sabine_absorption().map(|_| ())
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + y * z + x * z)
    }

    /// Sabine absorption, 1 for the anechoic override.
    pub fn sabine_absorption(&self) -> Result<f64> {
        if self.anechoic {
            return Ok(1.0);
        }
        let a = 0.161 * self.volume() / (self.surface() * self.t60);
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::InfeasibleSpec(format!(
                "room {:?} cannot reach T60 {} s (absorption {a:.3} > 1)",
                self.dimensions, self.t60
            )));
        }
        Ok(a)
    }

    /// Wall absorption under the configured model.
    pub fn absorption(&self) -> Result<f64> {
        let sabine = self.sabine_absorption()?;
        if self.anechoic || self.absorption_model == AbsorptionModel::Sabine {
            return Ok(sabine);
        }
        self.calibrated_absorption(sabine)
    }

    /// Probe pair used for calibration: array-like position near the centre
    /// and a source a quarter of the room away.
    fn probe_points(&self) -> (Point, Point) {
        let d = self.dimensions;
        ([0.5 * d[0], 0.4 * d[1], 0.5 * d[2]], [0.75 * d[0], 0.6 * d[1], 0.5 * d[2]])
    }

    fn calibrated_absorption(&self, sabine: f64) -> Result<f64> {
        let key = format!("{self:?}");
        let cache = CALIBRATION.get_or_init(Default::default);
        if let Some(&a) = cache.lock().expect("calibration cache").get(&key) {
            return Ok(a);
        }
        let (mic, src) = self.probe_points();
        let fs = self.sample_rate as f64;
        // A decay too steep to span the fit range counts as instantaneous.
        let t60_of = |a: f64| -> Result<f64> {
            let h = simulate_rir_with(self, a, &src, &mic)?;
            Ok(schroeder_t60(&h, fs).unwrap_or(0.0))
        };
        // Image decay is never faster than Sabine's diffuse estimate.
        if t60_of(sabine)? <= self.t60 {
            return Ok(sabine);
        }
        let (mut lo, mut hi) = (sabine, 1.0);
        if t60_of(hi)? > self.t60 {
            return Err(Error::InfeasibleSpec(format!(
                "room {:?} cannot reach T60 {} s with image sources",
                self.dimensions, self.t60
            )));
        }
        while hi - lo > 1e-4 {
            let mid = 0.5 * (lo + hi);
            if t60_of(mid)? > self.t60 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let a = 0.5 * (lo + hi);
        cache.lock().expect("calibration cache").insert(key, a);
        Ok(a)
    }

    pub fn max_order(&self) -> usize {
        self.max_image_order.unwrap_or_else(|| {
            let min = self.dimensions.iter().copied().fold(f64::INFINITY, f64::min);
            (SPEED_OF_SOUND * self.t60 / min).ceil() as usize + 1
        })
    }

    pub fn rir_len(&self) -> usize {
        (1.2 * self.t60 * self.sample_rate as f64).ceil() as usize
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.iter().zip(&self.dimensions).all(|(v, d)| *v > 0.0 && v < d)
    }
}

/// Two-microphone array with sources on a horizontal circle around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub array_center: Point,
    pub mic_spacing: f64,
    pub source_distance: f64,
    /// Degrees from the array axis (x) in the horizontal plane.
    pub source_angles: [f64; 2],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            array_center: [3.0, 2.0, 1.5],
            mic_spacing: 0.02,
            source_distance: 2.0,
            source_angles: [30.0, 90.0],
        }
    }
}

impl SceneSpec {
    pub fn with_angles(angles: [f64; 2]) -> Self {
        Self {
            source_angles: angles,
            ..Self::default()
        }
    }

    pub fn mic_positions(&self) -> [Point; 2] {
        let [x, y, z] = self.array_center;
        let h = self.mic_spacing / 2.0;
        [[x - h, y, z], [x + h, y, z]]
    }

    pub fn source_positions(&self) -> [Point; 2] {
        let [x, y, z] = self.array_center;
        self.source_angles.map(|deg| {
            let th = deg.to_radians();
            [
                x + self.source_distance * th.cos(),
                y + self.source_distance * th.sin(),
                z,
            ]
        })
    }
}

fn distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// Add `amp * sinc(n - delay)` windowed over 81 taps.
fn add_fractional_impulse(h: &mut [f64], delay: f64, amp: f64) {
    let centre = delay.round() as i64;
    let lo = (centre - SINC_HALF).max(0);
    let hi = (centre + SINC_HALF).min(h.len() as i64 - 1);
    if lo > hi {
        return;
    }
    // sin(pi (n - d)) = -(-1)^n sin(pi d); the window cosine advances by rotation.
    let sd = (PI * delay).sin();
    let step = PI / (SINC_HALF as f64 + 1.0);
    let (ds, dc) = step.sin_cos();
    let (mut ws, mut wc) = (step * (lo as f64 - delay)).sin_cos();
    let mut sign = if lo % 2 == 0 { -1.0 } else { 1.0 };
    for n in lo..=hi {
        let x = n as f64 - delay;
        let w = 0.5 * (1.0 + wc);
        let s = if x.abs() < 1e-12 { 1.0 } else { sign * sd / (PI * x) };
        h[n as usize] += amp * w * s;
        (ws, wc) = (ws * dc + wc * ds, wc * dc - ws * ds);
        sign = -sign;
    }
}

pub fn simulate_rir(room: &RoomSpec, src: &Point, mic: &Point) -> Result<Vec<f64>> {
    room.validate()?;
    simulate_rir_with(room, room.absorption()?, src, mic)
}

/// [`simulate_rir`] with the wall absorption already resolved.
pub fn simulate_rir_with(room: &RoomSpec, a: f64, src: &Point, mic: &Point) -> Result<Vec<f64>> {
    if !room.contains(src) || !room.contains(mic) {
        return Err(Error::invalid("source and microphone must lie inside the room"));
    }
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::InfeasibleSpec(format!("absorption {a} outside (0, 1]")));
    }
    let fs = room.sample_rate as f64;
    let beta = (1.0 - a).max(0.0).sqrt();
    let direct = distance(src, mic);
    let min_len = (direct / SPEED_OF_SOUND * fs).ceil() as usize + SINC_HALF as usize + 1;
    let len = room.rir_len().max(min_len);
    let mut h = vec![0.0; len];
    if room.anechoic || beta == 0.0 {
        add_fractional_impulse(&mut h, direct / SPEED_OF_SOUND * fs, 1.0 / (4.0 * PI * direct));
        return Ok(h);
    }
    for_each_image(room, src, mic, beta, len, |r, amp| {
        add_fractional_impulse(&mut h, r / SPEED_OF_SOUND * fs, amp)
    });
    // All image amplitudes are positive; remove the resulting DC build-up.
    highpass(&mut h, fs, HIGHPASS_HZ);
    Ok(h)
}

/// Visit every image within reach of an `len`-sample response, passing its
/// distance and amplitude `beta^order / (4 pi r)`.
fn for_each_image(
    room: &RoomSpec,
    src: &Point,
    mic: &Point,
    beta: f64,
    len: usize,
    mut visit: impl FnMut(f64, f64),
) {
    let fs = room.sample_rate as f64;
    let max_order = room.max_order() as i64;
    let max_dist = (len as f64 + SINC_HALF as f64) / fs * SPEED_OF_SOUND;
    let max_d2 = max_dist * max_dist;
    // Per axis: (squared image offset from the mic, reflection count),
    // nearest first so the inner loops can stop early.
    let axis_images = |k: usize| -> Vec<(f64, i64)> {
        let l = room.dimensions[k];
        let mut v = Vec::new();
        for n in -max_order..=max_order {
            for p in 0..2i64 {
                let order = (2 * n - p).abs();
                let c = (1 - 2 * p) as f64 * src[k] + 2.0 * n as f64 * l;
                let d2 = (c - mic[k]).powi(2);
                if order <= max_order && d2 <= max_d2 {
                    v.push((d2, order));
                }
            }
        }
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v
    };
    let (ix, iy, iz) = (axis_images(0), axis_images(1), axis_images(2));
    let powers: Vec<f64> = (0..=max_order).map(|o| beta.powi(o as i32)).collect();
    for &(dx2, ox) in &ix {
        for &(dy2, oy) in &iy {
            let dxy2 = dx2 + dy2;
            if dxy2 > max_d2 {
                break;
            }
            if ox + oy > max_order {
                continue;
            }
            for &(dz2, oz) in &iz {
                let d2 = dxy2 + dz2;
                if d2 > max_d2 {
                    break;
                }
                let order = ox + oy + oz;
                if order > max_order {
                    continue;
                }
                let r = d2.sqrt();
                visit(r, powers[order as usize] / (4.0 * PI * r));
            }
        }
    }
}

/// Second-order Butterworth high-pass, applied in place (causal).
pub fn highpass(x: &mut [f64], sample_rate: f64, cutoff: f64) {
    let w0 = 2.0 * PI * cutoff / sample_rate;
    let alpha = w0.sin() / std::f64::consts::SQRT_2;
    let cw = w0.cos();
    let a0 = 1.0 + alpha;
    let b = [(1.0 + cw) / 2.0 / a0, -(1.0 + cw) / a0, (1.0 + cw) / 2.0 / a0];
    let a = [-2.0 * cw / a0, (1.0 - alpha) / a0];
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let x0 = *v;
        let y0 = b[0] * x0 + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
        x2 = x1;
        x1 = x0;
        y2 = y1;
        y1 = y0;
        *v = y0;
    }
}

/// Reverberation time from Schroeder backward integration, fitted over
/// the -5 dB to -35 dB range of the decay curve and extrapolated to -60 dB.
pub fn schroeder_t60(rir: &[f64], sample_rate: f64) -> Result<f64> {
    let energy: Vec<f64> = rir.iter().map(|v| v * v).collect();
    schroeder_t60_energy(&energy, sample_rate)
}

/// As [`schroeder_t60`] from per-sample energies.
pub fn schroeder_t60_energy(energy: &[f64], sample_rate: f64) -> Result<f64> {
    let mut edc = energy.to_vec();
    for k in (0..edc.len().saturating_sub(1)).rev() {
        edc[k] += edc[k + 1];
    }
    let total = *edc.first().ok_or_else(|| Error::invalid("empty RIR"))?;
    if !(total > 0.0) {
        return Err(Error::invalid("silent RIR"));
    }
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &e) in edc.iter().enumerate() {
        let db = 10.0 * (e / total).log10();
        if (-35.0..=-5.0).contains(&db) {
            let t = k as f64 / sample_rate;
            n += 1.0;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
        }
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if !(n >= 2.0 && slope < 0.0) {
        return Err(Error::invalid("decay curve does not span -5..-35 dB"));
    }
    Ok(-60.0 / slope)
}

/// Linear convolution truncated to `out_len` samples.
pub fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; out_len];
    }
    let n = (a.len() + b.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let load = |x: &[f64]| {
        let mut v = vec![ZERO; n];
        for (d, &s) in v.iter_mut().zip(x) {
            *d = C64::new(s, 0.0);
        }
        fwd.process(&mut v);
        v
    };
    let (fa, fb) = (load(a), load(b));
    let mut prod: Vec<C64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    inv.process(&mut prod);
    let scale = 1.0 / n as f64;
    let mut out: Vec<f64> = prod.iter().take(out_len).map(|c| c.re * scale).collect();
    out.resize(out_len, 0.0);
    out
}

/// `rirs[source][mic]`.
pub type RirSet = [[Vec<f64>; 2]; 2];

pub fn scene_rirs(room: &RoomSpec, scene: &SceneSpec) -> Result<RirSet> {
    let mics = scene.mic_positions();
    let srcs = scene.source_positions();
    room.validate()?;
    let a = room.absorption()?;
    let one = |s: usize, m: usize| simulate_rir_with(room, a, &srcs[s], &mics[m]);
    Ok([[one(0, 0)?, one(0, 1)?], [one(1, 0)?, one(1, 1)?]])
}

static SCENES: OnceLock<Mutex<HashMap<String, Arc<RirSet>>>> = OnceLock::new();

/// [`scene_rirs`] memoized per process, since trials reuse a handful of
/// geometries.
pub fn scene_rirs_cached(room: &RoomSpec, scene: &SceneSpec) -> Result<Arc<RirSet>> {
    let key = format!("{room:?}|{scene:?}");
    let cache = SCENES.get_or_init(Default::default);
    if let Some(r) = cache.lock().expect("scene cache").get(&key) {
        return Ok(Arc::clone(r));
    }
    let rirs = Arc::new(scene_rirs(room, scene)?);
    cache.lock().expect("scene cache").insert(key, Arc::clone(&rirs));
    Ok(rirs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    /// `mix[mic]`.
    pub mix: [Vec<f64>; 2],
    /// `images[source][mic]`.
    pub images: [[Vec<f64>; 2]; 2],
}

impl Mixture {
    /// Each source's image at the reference microphone.
    pub fn references(&self, reference: usize) -> [Vec<f64>; 2] {
        [self.images[0][reference].clone(), self.images[1][reference].clone()]
    }

    pub fn interleaved(&self) -> Vec<f64> {
        self.mix[0].iter().zip(&self.mix[1]).flat_map(|(a, b)| [*a, *b]).collect()
    }
}

pub fn make_mixture(rirs: &RirSet, sources: &[Vec<f64>; 2]) -> Result<Mixture> {
    let len = sources[0].len();
    if sources[1].len() != len {
        return Err(Error::invalid(format!(
            "source lengths differ ({} vs {})",
            len,
            sources[1].len()
        )));
    }
    let image = |s: usize, m: usize| fft_convolve(&sources[s], &rirs[s][m], len);
    let images = [[image(0, 0), image(0, 1)], [image(1, 0), image(1, 1)]];
    let mix = [0, 1].map(|m| {
        images[0][m]
            .iter()
            .zip(&images[1][m])
            .map(|(a, b)| a + b)
            .collect::<Vec<f64>>()
    });
    Ok(Mixture { mix, images })
}

/// Nominal formant centres and bandwidths, Hz.
const FORMANTS: [(f64, f64); 4] = [(500.0, 90.0), (1500.0, 120.0), (2500.0, 160.0), (3500.0, 220.0)];

/// AR(8) coefficients `a[1..=8]` of `x[t] = e[t] - sum a_k x[t-k]`.
fn formant_ar(freqs: &[(f64, f64); 4], fs: f64) -> [f64; 8] {
    let mut poly = vec![1.0];
    for &(f, bw) in freqs {
        let r = (-PI * bw / fs).exp();
        let c = [1.0, -2.0 * r * (2.0 * PI * f / fs).cos(), r * r];
        let mut next = vec![0.0; poly.len() + 2];
        for (i, &p) in poly.iter().enumerate() {
            for (j, &q) in c.iter().enumerate() {
                next[i + j] += p * q;
            }
        }
        poly = next;
    }
    let mut a = [0.0; 8];
    a.copy_from_slice(&poly[1..9]);
    a
}

/// Speech-shaped noise: AR(8) formant-filtered Gaussian noise under a
/// syllabic (about 4 Hz) envelope with random levels and pauses. Unit RMS.
pub fn synthetic_source(seed: u64, len: usize, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speaker: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.85..1.15));
    let level = LogNormal::new(0.0, 0.5).expect("valid lognormal");
    let mut out = Vec::with_capacity(len);
    let mut state = [0.0f64; 8];
    while out.len() < len {
        if rng.random_bool(0.15) {
            let pause = (rng.random_range(0.15..0.5) * fs) as usize;
            for _ in 0..pause {
                state.rotate_right(1);
                state[0] = 0.0;
                out.push(0.0);
            }
            continue;
        }
        let mut freqs = FORMANTS;
        for (k, (f, _)) in freqs.iter_mut().enumerate() {
            *f *= speaker[k] * rng.random_range(0.8..1.2);
        }
        let a = formant_ar(&freqs, fs);
        let dur = (rng.random_range(0.12..0.32) * fs) as usize;
        let amp: f64 = level.sample(&mut rng);
        for k in 0..dur {
            let env = amp * (PI * (k as f64 + 0.5) / dur as f64).sin().powi(2);
            let e: f64 = StandardNormal.sample(&mut rng);
            let x = e - a.iter().zip(&state).map(|(c, s)| c * s).sum::<f64>();
            state.rotate_right(1);
            state[0] = x;
            out.push(env * x);
        }
    }
    out.truncate(len);
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Two independent synthetic sources for trial `trial` of a run seeded `seed`.
pub fn synthetic_pair(seed: u64, trial: u64, len: usize, sample_rate: u32) -> [Vec<f64>; 2] {
    let base = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial * 2);
    [
        synthetic_source(base, len, sample_rate),
        synthetic_source(base + 1, len, sample_rate),
    ]
}

/// Sorted WAV files of a corpus directory.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no WAV files in {}", dir.display())));
    }
    Ok(files)
}

/// Source `k` of trial `trial`: corpus files concatenated from index
/// `2 * trial + k` onward until `len` samples, then truncated. Unit RMS.
pub fn corpus_source(files: &[PathBuf], trial: u64, k: usize, len: usize, sample_rate: u32) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    let start = (2 * trial as usize + k) % files.len();
    let mut idx = start;
    while out.len() < len {
        let wav = crate::wav::read(&files[idx])?;
        if wav.sample_rate != sample_rate {
            return Err(Error::invalid(format!(
                "{} is {} Hz, expected {sample_rate}",
                files[idx].display(),
                wav.sample_rate
            )));
        }
        out.extend_from_slice(&wav.channels[0]);
        idx = (idx + 2) % files.len();
        if idx == start && out.is_empty() {
            return Err(Error::invalid("corpus holds only silent files"));
        }
    }
    out.truncate(len);
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    Ok(out)
}
