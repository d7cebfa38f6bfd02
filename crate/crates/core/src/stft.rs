//! Analysis framing, the Hann window, and weighted overlap-add synthesis.
//!
//! Frame `i` covers samples `i*shift .. i*shift + frame_len`. Inside a frame
//! the natural index `n` runs `0..F`; the centred index `tau = n - F/2` puts
//! `tau = 0` in the middle of the frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::SampleHistory;
use crate::numerics::{extend_conjugate_symmetric, Dft, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    frame_len: usize,
    shift: usize,
    window: WindowKind,
}

impl StftConfig {
    pub fn new(frame_len: usize, shift: usize) -> Result<Self> {
        if frame_len < 2 || !frame_len.is_power_of_two() {
            return Err(Error::invalid(format!(
                "frame length {frame_len} must be a power of two >= 2"
            )));
        }
        if shift == 0 || frame_len % shift != 0 {
            return Err(Error::invalid(format!(
                "shift {shift} must divide frame length {frame_len}"
            )));
        }
        let cfg = Self {
            frame_len,
            shift,
            window: WindowKind::Hann,
        };
        let w = make_window(&cfg);
        let sums = overlap_sums(&w.natural, shift, 1);
        let worst = sums
            .iter()
            .map(|s| (s - w.cola).abs())
            .fold(0.0, f64::max);
        if worst > 1e-10 * w.cola {
            return Err(Error::invalid(format!(
                "window with shift {shift} is not constant-overlap-add (deviation {worst:.3e})"
            )));
        }
        Ok(cfg)
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn window_kind(&self) -> WindowKind {
        self.window
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// First sample of frame `index`.
    pub fn frame_start(&self, index: u64) -> u64 {
        index * self.shift as u64
    }
}

/// Periodic Hann window plus its overlap-add constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    natural: Vec<f64>,
    /// `sum_k h(tau - k*shift)`.
    cola: f64,
    /// Steady-state `sum_k h^2(t - k*shift)` for each phase `t mod shift`.
    cola_sq: Vec<f64>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.natural.len()
    }

    pub fn is_empty(&self) -> bool {
        self.natural.is_empty()
    }

    /// Window in natural order, `n = 0..F`.
    pub fn natural(&self) -> &[f64] {
        &self.natural
    }

    /// Window at centred index `tau` in `[-F/2, F/2 - 1]`.
    #[inline]
    pub fn centered(&self, tau: i64) -> f64 {
        let half = (self.natural.len() / 2) as i64;
        self.natural[(tau + half) as usize]
    }

    pub fn cola_constant(&self) -> f64 {
        self.cola
    }

    /// Steady-state squared overlap sum at sample phase `t mod shift`.
    pub fn cola_sq_at(&self, t: usize) -> f64 {
        self.cola_sq[t % self.cola_sq.len()]
    }
}

fn hann(frame_len: usize) -> Vec<f64> {
    (0..frame_len)
        .map(|n| {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / frame_len as f64).cos())
        })
        .collect()
}

/// `sum_k w(t - k*shift)^power` for `t` in one shift period.
fn overlap_sums(w: &[f64], shift: usize, power: i32) -> Vec<f64> {
    let mut sums = vec![0.0; shift];
    for (n, &v) in w.iter().enumerate() {
        sums[n % shift] += v.powi(power);
    }
    sums
}

pub fn make_window(cfg: &StftConfig) -> Window {
    let natural = match cfg.window {
        WindowKind::Hann => hann(cfg.frame_len),
    };
    let sums = overlap_sums(&natural, cfg.shift, 1);
    let cola = sums.iter().sum::<f64>() / sums.len() as f64;
    let cola_sq = overlap_sums(&natural, cfg.shift, 2);
    Window {
        natural,
        cola,
        cola_sq,
    }
}

/// One analysis frame: per-bin observation vectors for bins `0..=F/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFrame {
    index: u64,
    channels: usize,
    bins: Vec<C64>,
}

impl SpectrumFrame {
    /// `bins` is bin-major: `bins[f * channels + m]`.
    pub fn new(index: u64, channels: usize, bins: Vec<C64>) -> Result<Self> {
        if channels == 0 || bins.len() % channels != 0 || bins.len() / channels < 2 {
            return Err(Error::dims("spectrum frame shape"));
        }
        Ok(Self {
            index,
            channels,
            bins,
        })
    }

    pub fn zeros(index: u64, channels: usize, num_bins: usize) -> Self {
        Self {
            index,
            channels,
            bins: vec![ZERO; channels * num_bins],
        }
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len() / self.channels
    }

    /// Frame length this one-sided spectrum belongs to.
    pub fn frame_len(&self) -> usize {
        2 * (self.num_bins() - 1)
    }

    #[inline]
    pub fn bin(&self, f: usize) -> &[C64] {
        &self.bins[f * self.channels..(f + 1) * self.channels]
    }

    #[inline]
    pub fn bin_mut(&mut self, f: usize) -> &mut [C64] {
        &mut self.bins[f * self.channels..(f + 1) * self.channels]
    }

    /// One-sided spectrum of channel `m`.
    pub fn channel(&self, m: usize) -> Vec<C64> {
        (0..self.num_bins()).map(|f| self.bin(f)[m]).collect()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.bins
    }
}

/// Windowed forward transform of frames.
#[derive(Debug, Clone)]
pub struct Analyzer {
    cfg: StftConfig,
    window: Window,
    dft: Dft,
    buf: Vec<C64>,
}

impl Analyzer {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        Ok(Self {
            cfg,
            window: make_window(&cfg),
            dft: Dft::new(cfg.frame_len)?,
            buf: vec![ZERO; cfg.frame_len],
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    /// Analyze one frame given exactly `F` samples per channel.
    pub fn analyze_slices(&mut self, channels: &[&[f64]], index: u64) -> Result<SpectrumFrame> {
        let f_len = self.cfg.frame_len;
        let nb = self.cfg.num_bins();
        let mut frame = SpectrumFrame::zeros(index, channels.len(), nb);
        for (m, samples) in channels.iter().enumerate() {
            if samples.len() != f_len {
                return Err(Error::dims(format!(
                    "frame of {} samples, expected {f_len}",
                    samples.len()
                )));
            }
            for ((b, &x), &h) in self.buf.iter_mut().zip(*samples).zip(&self.window.natural) {
                *b = C64::new(x * h, 0.0);
            }
            self.dft.forward_in_place(&mut self.buf);
            for f in 0..nb {
                frame.bin_mut(f)[m] = self.buf[f];
            }
        }
        Ok(frame)
    }

    /// Analyze frame `index` from a running history.
    pub fn analyze(&mut self, history: &SampleHistory, index: u64) -> Result<SpectrumFrame> {
        let start = self.cfg.frame_start(index) as i64;
        let f_len = self.cfg.frame_len;
        let mut slices = Vec::with_capacity(history.channels());
        for m in 0..history.channels() {
            slices.push(history.window(m, start, f_len)?);
        }
        self.analyze_slices(&slices, index)
    }

    /// Inverse transform of a one-sided spectrum to a real frame (natural
    /// order), without any synthesis window.
    pub fn frame_to_time(&mut self, half: &[C64]) -> Vec<f64> {
        extend_conjugate_symmetric(half, &mut self.buf);
        // Real signals have real DC and Nyquist bins.
        let n = self.buf.len();
        self.buf[0].im = 0.0;
        self.buf[n / 2].im = 0.0;
        self.dft.inverse_in_place(&mut self.buf);
        self.buf.iter().map(|c| c.re).collect()
    }
}

/// Output of [`synthesize`]: samples starting at absolute index `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub start: u64,
    pub channels: Vec<Vec<f64>>,
}

/// Weighted overlap-add resynthesis with the Hann window as synthesis window,
/// normalized by the steady-state `sum_k h^2(t - k*shift)`.
pub fn synthesize(frames: &[SpectrumFrame], cfg: &StftConfig) -> Result<Synthesized> {
    let Some(first) = frames.first() else {
        return Ok(Synthesized {
            start: 0,
            channels: Vec::new(),
        });
    };
    let channels = first.channels();
    for pair in frames.windows(2) {
        if pair[1].index() != pair[0].index() + 1 {
            return Err(Error::invalid(format!(
                "frame gap between {} and {}",
                pair[0].index(),
                pair[1].index()
            )));
        }
    }
    if frames
        .iter()
        .any(|fr| fr.num_bins() != cfg.num_bins() || fr.channels() != channels)
    {
        return Err(Error::dims("frame shape does not match the STFT config"));
    }
    let mut analyzer = Analyzer::new(*cfg)?;
    let f_len = cfg.frame_len;
    let start = cfg.frame_start(first.index());
    let total = (frames.len() - 1) * cfg.shift + f_len;
    let mut out = vec![vec![0.0; total]; channels];
    for (k, frame) in frames.iter().enumerate() {
        let offset = k * cfg.shift;
        for (m, dst) in out.iter_mut().enumerate() {
            let time = analyzer.frame_to_time(&frame.channel(m));
            for (n, v) in time.iter().enumerate() {
                dst[offset + n] += v * analyzer.window.natural[n];
            }
        }
    }
    for dst in out.iter_mut() {
        for (n, v) in dst.iter_mut().enumerate() {
            *v /= analyzer.window.cola_sq_at(start as usize + n);
        }
    }
    Ok(Synthesized {
        start,
        channels: out,
    })
}
