//! Streaming engine: sample ingest, frame-synchronous filter updates and
//! per-sample output.
//!
//! Frame `i` covers inputs `[i*shift, i*shift + F)` and is processed right
//! after its last sample arrives. Output `y(t)` is emitted as soon as input
//! `t + d` has been ingested, where `d = F/2 - Gamma` is the algorithmic
//! delay. Per ingested sample the order is: store, update (when a frame
//! completes), emit.
//!
//! In the time-domain modes the output is the folded FIR of the latest bank.
//! In the STFT-domain mode it is a weighted overlap-add of the frames
//! available so far, normalized by their own squared-window sum; before any
//! frame covers `t` the input passes through.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cbf::{CbfConfig, CbfState};
use crate::dereverb::{DereverbConfig, DEFAULT_RHO};
use crate::error::{Error, Result};
use crate::history::SampleHistory;
use crate::separation::SeparationConfig;
use crate::stft::{make_window, Analyzer, StftConfig, Window};
use crate::tdfilter::{BankSlot, Converter, DelayLedger, TimeFilterBank};

pub const CHANNELS: usize = 2;
pub const SOURCES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Instantaneous per-bin separation applied as a time-domain FIR.
    TdIva,
    /// Convolutional beamformer applied in the STFT domain.
    FdCbf,
    /// Convolutional beamformer applied as a time-domain FIR.
    TdCbf,
}

pub const PRESET_NAMES: [&str; 4] = ["TD-IVA-32ms", "FD-CBF-4ms", "TD-CBF-32ms", "TD-CBF-4ms"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub mode: Mode,
    pub sample_rate: u32,
    pub frame_len: usize,
    pub shift: usize,
    /// Non-causal lag-0 taps removed (`Gamma`).
    pub truncation: usize,
    /// Prediction delay `D` in frames.
    pub delay: usize,
    /// Prediction order `L` in frames; 0 disables dereverberation.
    pub order: usize,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub iss_sweeps: usize,
    pub compose_every_k_frames: usize,
    pub reference: usize,
    /// When false the filters stay at their identity initialization.
    pub adapt: bool,
    /// Fan per-bin updates out over the thread pool.
    pub parallel: bool,
}

/// The low-delay proposed configuration, TD-CBF-4ms.
impl Default for EngineConfig {
    fn default() -> Self {
        Self::preset("TD-CBF-4ms").expect("built-in preset")
    }
}

impl EngineConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            mode: Mode::TdCbf,
            sample_rate: 16000,
            frame_len: 1024,
            shift: 256,
            truncation: 0,
            delay: 2,
            order: 10,
            alpha: 0.99,
            beta: 0.999,
            rho: DEFAULT_RHO,
            iss_sweeps: 1,
            compose_every_k_frames: 1,
            reference: 0,
            adapt: true,
            parallel: crate::par::AVAILABLE,
        };
        Ok(match name {
            "TD-IVA-32ms" => Self {
                mode: Mode::TdIva,
                delay: 0,
                order: 0,
                ..base
            },
            "FD-CBF-4ms" => Self {
                mode: Mode::FdCbf,
                frame_len: 128,
                shift: 32,
                delay: 8,
                order: 10,
                ..base
            },
            "TD-CBF-32ms" => base,
            "TD-CBF-4ms" => Self {
                truncation: 448,
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?} (expected one of {PRESET_NAMES:?})"
                )))
            }
        })
    }

    pub fn stft(&self) -> Result<StftConfig> {
        StftConfig::new(self.frame_len, self.shift)
    }

    pub fn validate(&self) -> Result<()> {
        let stft = self.stft()?;
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.truncation > self.frame_len / 2 {
            return Err(Error::Config(format!(
                "truncation {} exceeds F/2 = {}",
                self.truncation,
                self.frame_len / 2
            )));
        }
        if self.compose_every_k_frames == 0 {
            return Err(Error::Config("compose_every_k_frames must be >= 1".into()));
        }
        if self.reference >= CHANNELS {
            return Err(Error::Config("reference microphone out of range".into()));
        }
        match self.mode {
            Mode::TdIva if self.order != 0 => {
                return Err(Error::Config("td-iva runs without dereverberation (order = 0)".into()))
            }
            Mode::FdCbf if self.truncation != 0 => {
                return Err(Error::Config("fd-cbf has no time-domain taps to truncate".into()))
            }
            Mode::FdCbf | Mode::TdCbf if self.order == 0 => {
                return Err(Error::Config("beamformer modes need order >= 1".into()))
            }
            Mode::TdCbf if self.delay * stft.shift() < self.frame_len / 2 => {
                return Err(Error::Config(format!(
                    "td-cbf needs delay * shift >= F/2 ({} * {} < {})",
                    self.delay,
                    self.shift,
                    self.frame_len / 2
                )))
            }
            _ => {}
        }
        self.cbf()?.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn cbf(&self) -> Result<CbfConfig> {
        let dereverb = (self.order > 0).then_some(DereverbConfig {
            delay: self.delay,
            order: self.order,
            beta: self.beta,
            rho: self.rho,
        });
        Ok(CbfConfig {
            sources: SOURCES,
            channels: CHANNELS,
            frame_len: self.frame_len,
            dereverb,
            separation: SeparationConfig {
                alpha: self.alpha,
                iss_sweeps: self.iss_sweeps,
            },
            reference: self.reference,
            parallel: self.parallel,
        })
    }

    /// Samples between an input and the first output that can depend on it.
    pub fn ledger(&self) -> Result<DelayLedger> {
        DelayLedger::new(self.frame_len, self.truncation, self.shift)
    }

    pub fn algorithmic_delay(&self) -> usize {
        self.frame_len / 2 - self.truncation.min(self.frame_len / 2)
    }
}

/// Wall-clock split between the update and filtering paths.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EngineStats {
    pub samples_in: u64,
    pub samples_out: u64,
    pub frames: u64,
    pub banks_installed: u64,
    pub update_time: Duration,
    pub filter_time: Duration,
}

/// Partial overlap-add state of the STFT-domain output.
#[derive(Debug, Clone)]
struct OverlapAdd {
    /// `(num per source, den)` for absolute times `base..`.
    pending: VecDeque<([f64; SOURCES], f64)>,
    base: u64,
}

impl OverlapAdd {
    fn add(&mut self, start: u64, frames: &[Vec<f64>], window: &[f64]) {
        let end = start + window.len() as u64;
        while self.base + (self.pending.len() as u64) < end {
            self.pending.push_back(([0.0; SOURCES], 0.0));
        }
        for (n, &h) in window.iter().enumerate() {
            let t = start + n as u64;
            if t < self.base {
                continue;
            }
            let slot = &mut self.pending[(t - self.base) as usize];
            for (acc, y) in slot.0.iter_mut().zip(frames) {
                *acc += y[n] * h;
            }
            slot.1 += h * h;
        }
    }

    /// Entry for the next output time (`base`), advancing `base`.
    fn pop(&mut self) -> Option<([f64; SOURCES], f64)> {
        self.base += 1;
        self.pending.pop_front()
    }
}

pub struct Engine {
    cfg: EngineConfig,
    stft: StftConfig,
    analyzer: Analyzer,
    window: Window,
    history: SampleHistory,
    cbf: Option<CbfState>,
    converter: Converter,
    bank: BankSlot,
    ola: OverlapAdd,
    delay: u64,
    next_frame: u64,
    next_out: u64,
    real_len: u64,
    flushed: bool,
    halted: bool,
    stats: EngineStats,
    frame_out: [f64; SOURCES],
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("cfg", &self.cfg)
            .field("ingested", &self.history.total())
            .field("next_out", &self.next_out)
            .finish()
    }
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let stft = cfg.stft()?;
        let window = make_window(&stft);
        let delay = cfg.algorithmic_delay();
        let bank = TimeFilterBank::identity(SOURCES, CHANNELS, cfg.frame_len, cfg.shift, cfg.truncation)?;
        let lags = cfg.cbf()?.lags();
        let reach = cfg.frame_len / 2 + (lags.last().copied().unwrap_or(0)) * cfg.shift;
        let capacity = (delay + reach + cfg.frame_len + 1).max(cfg.frame_len + cfg.shift);
        Ok(Self {
            cfg,
            stft,
            analyzer: Analyzer::new(stft)?,
            history: SampleHistory::new(CHANNELS, capacity),
            cbf: if cfg.adapt { Some(CbfState::new(cfg.cbf()?)?) } else { None },
            converter: Converter::new(cfg.frame_len)?,
            bank: BankSlot::new(bank),
            ola: OverlapAdd {
                pending: VecDeque::new(),
                base: 0,
            },
            window,
            delay: delay as u64,
            next_frame: 0,
            next_out: 0,
            real_len: 0,
            flushed: false,
            halted: false,
            stats: EngineStats::default(),
            frame_out: [0.0; SOURCES],
        })
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        Self::new(EngineConfig::preset(name)?)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> DelayLedger {
        *self.bank.active().ledger()
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn active_bank(&self) -> &TimeFilterBank {
        self.bank.active()
    }

    pub fn beamformer(&self) -> Option<&CbfState> {
        self.cbf.as_ref()
    }

    /// Ingest interleaved 2-channel samples, returning interleaved outputs.
    pub fn push_samples(&mut self, chunk: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(chunk.len());
        self.push_into(chunk, &mut out)?;
        Ok(out)
    }

    pub fn push_into(&mut self, chunk: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if self.flushed {
            return Err(Error::invalid("stream already flushed"));
        }
        if self.halted {
            return Err(Error::invalid("engine halted after a numerical error"));
        }
        if chunk.len() % CHANNELS != 0 {
            return Err(Error::invalid(format!(
                "chunk of {} values is not a whole number of {CHANNELS}-channel samples",
                chunk.len()
            )));
        }
        if let Some(v) = chunk.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite input sample {v}")));
        }
        let started = Instant::now();
        let mut update = Duration::ZERO;
        for sample in chunk.chunks_exact(CHANNELS) {
            self.history.push(sample);
            self.real_len += 1;
            update += self.maybe_update(true)?;
            self.emit(out)?;
        }
        self.stats.samples_in += (chunk.len() / CHANNELS) as u64;
        self.stats.update_time += update;
        self.stats.filter_time += started.elapsed().saturating_sub(update);
        Ok(())
    }

    /// Drain the delay line with zeros; total output length equals total
    /// input length. Later calls return nothing.
    pub fn flush(&mut self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        if self.flushed {
            return Ok(out);
        }
        if self.halted {
            return Err(Error::invalid("engine halted after a numerical error"));
        }
        self.flushed = true;
        let zeros = [0.0; CHANNELS];
        while self.next_out < self.real_len {
            self.history.push(&zeros);
            self.maybe_update(false)?;
            self.emit(&mut out)?;
        }
        Ok(out)
    }

    fn maybe_update(&mut self, live: bool) -> Result<Duration> {
        let end = self.stft.frame_start(self.next_frame) + self.cfg.frame_len as u64;
        if self.history.total() != end {
            return Ok(Duration::ZERO);
        }
        let index = self.next_frame;
        self.next_frame += 1;
        // Frames touching flush padding never adapt the filters.
        if !live || self.cbf.is_none() {
            return Ok(Duration::ZERO);
        }
        let started = Instant::now();
        let result = self.update_frame(index);
        if result.is_err() {
            self.halted = true;
        }
        result?;
        Ok(started.elapsed())
    }

    fn update_frame(&mut self, index: u64) -> Result<()> {
        let frame = self.analyzer.analyze(&self.history, index)?;
        let cbf = self.cbf.as_mut().expect("adaptive engine");
        cbf.process_frame(&frame)?;
        self.stats.frames += 1;
        match self.cfg.mode {
            Mode::FdCbf => {
                let est = cbf.estimates();
                let frames: Vec<Vec<f64>> =
                    est.post.iter().map(|y| self.analyzer.frame_to_time(y)).collect();
                let start = self.stft.frame_start(index);
                self.ola.add(start, &frames, self.window.natural());
            }
            Mode::TdIva | Mode::TdCbf => {
                if (index + 1) % self.cfg.compose_every_k_frames as u64 == 0 {
                    let generation = self.bank.active().generation() + 1;
                    let bank = self.converter.convert(
                        cbf.bins(),
                        &self.window,
                        self.cfg.truncation,
                        self.cfg.shift,
                        generation,
                    )?;
                    self.bank.swap(bank)?;
                    self.stats.banks_installed += 1;
                }
            }
        }
        Ok(())
    }

    fn emit(&mut self, out: &mut Vec<f64>) -> Result<()> {
        let ingested = self.history.total();
        while self.next_out + self.delay < ingested && self.next_out < self.real_len {
            let t = self.next_out;
            match self.cfg.mode {
                Mode::FdCbf => {
                    debug_assert_eq!(self.ola.base, t);
                    match self.ola.pop() {
                        Some((num, den)) if den > 0.0 => {
                            for n in 0..SOURCES {
                                self.frame_out[n] = num[n] / den;
                            }
                        }
                        _ => {
                            for n in 0..SOURCES {
                                self.frame_out[n] = self.history.sample(n, t as i64)?;
                            }
                        }
                    }
                }
                Mode::TdIva | Mode::TdCbf => {
                    self.bank
                        .active()
                        .filter_sample(&self.history, t as i64, &mut self.frame_out)?;
                }
            }
            out.extend_from_slice(&self.frame_out);
            self.next_out += 1;
            self.stats.samples_out += 1;
        }
        Ok(())
    }
}

/// Run a whole interleaved signal through a fresh engine in chunks.
pub fn process_signal(cfg: EngineConfig, interleaved: &[f64], chunk_samples: usize) -> Result<Vec<f64>> {
    let mut engine = Engine::new(cfg)?;
    let step = chunk_samples.max(1) * CHANNELS;
    let mut out = Vec::with_capacity(interleaved.len());
    for chunk in interleaved.chunks(step) {
        engine.push_into(chunk, &mut out)?;
    }
    out.extend(engine.flush()?);
    Ok(out)
}
