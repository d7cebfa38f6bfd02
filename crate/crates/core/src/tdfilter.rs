//! Time-domain realization of the composed STFT filters.
//!
//! Each `(n, m, l)` spectrum is inverse transformed, re-indexed to
//! `tau in [-F/2, F/2 - 1]` and multiplied by the centred analysis window
//! `h(tau) = 0.5 (1 + cos(2 pi tau / F))`. The output at `t` is
//!
//! ```text
//! y_n(t) = sum_m sum_l sum_tau h(tau) w_nm(tau, l) x_m(t - tau - l*shift)
//! ```
//!
//! with the lag-0 taps at `tau < -F/2 + Gamma` dropped, so `y(t)` reads no
//! input later than `t + F/2 - Gamma`. All lags of one `(n, m)` pair are
//! folded into a single kernel over `k = tau + l*shift`.

use serde::{Deserialize, Serialize};

use crate::cbf::ComposedFilter;
use crate::error::{Error, Result};
use crate::history::SampleHistory;
use crate::numerics::{extend_conjugate_symmetric, Dft, C64, ZERO};
use crate::stft::Window;

/// Relative imaginary residue tolerated in an inverse-transformed filter.
pub const REAL_RESIDUE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayLedger {
    pub frame_len: usize,
    pub truncation: usize,
    pub shift: usize,
    pub algorithmic_delay: usize,
}

impl DelayLedger {
    pub fn new(frame_len: usize, truncation: usize, shift: usize) -> Result<Self> {
        if truncation > frame_len / 2 {
            return Err(Error::invalid(format!(
                "truncation {truncation} exceeds half the frame ({})",
                frame_len / 2
            )));
        }
        Ok(Self {
            frame_len,
            truncation,
            shift,
            algorithmic_delay: frame_len / 2 - truncation,
        })
    }

    pub fn delay_ms(&self, sample_rate: f64) -> f64 {
        1e3 * self.algorithmic_delay as f64 / sample_rate
    }
}

/// Windowed taps of one `(n, m, lag)` triple, `tau` from `tau_min` up.
#[derive(Debug, Clone, PartialEq)]
pub struct TapBlock {
    pub lag: usize,
    pub tau_min: i64,
    pub taps: Vec<f64>,
}

impl TapBlock {
    pub fn at(&self, tau: i64) -> f64 {
        let j = tau - self.tau_min;
        if j < 0 {
            0.0
        } else {
            self.taps.get(j as usize).copied().unwrap_or(0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeFilterBank {
    sources: usize,
    channels: usize,
    frame_len: usize,
    shift: usize,
    ledger: DelayLedger,
    generation: u64,
    /// `blocks[(n * M + m) * lags + li]`.
    blocks: Vec<TapBlock>,
    lags: usize,
    /// Folded kernel span `k in [k_min, k_max]`.
    k_min: i64,
    k_max: i64,
    /// `reversed[n * M + m][j] = w_nm(k_max - j)`.
    reversed: Vec<Vec<f64>>,
    /// Windowed lag-0 energy removed by truncation, per `(n, m)`.
    dropped_energy: Vec<f64>,
}

impl TimeFilterBank {
    /// Unit impulse at `tau = 0` on the diagonal.
    pub fn identity(
        sources: usize,
        channels: usize,
        frame_len: usize,
        shift: usize,
        truncation: usize,
    ) -> Result<Self> {
        let ledger = DelayLedger::new(frame_len, truncation, shift)?;
        let half = (frame_len / 2) as i64;
        let tau_min = -half + truncation as i64;
        let mut blocks = Vec::with_capacity(sources * channels);
        for n in 0..sources {
            for m in 0..channels {
                let mut taps = vec![0.0; (half - tau_min) as usize];
                if n == m {
                    taps[(-tau_min) as usize] = 1.0;
                }
                blocks.push(TapBlock { lag: 0, tau_min, taps });
            }
        }
        Ok(Self::assemble(
            sources,
            channels,
            frame_len,
            shift,
            ledger,
            0,
            blocks,
            1,
            vec![0.0; sources * channels],
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        sources: usize,
        channels: usize,
        frame_len: usize,
        shift: usize,
        ledger: DelayLedger,
        generation: u64,
        blocks: Vec<TapBlock>,
        lags: usize,
        dropped_energy: Vec<f64>,
    ) -> Self {
        let k_min = blocks.iter().map(|b| b.tau_min + (b.lag * shift) as i64).min().unwrap_or(0);
        let k_max = blocks
            .iter()
            .map(|b| b.tau_min + b.taps.len() as i64 - 1 + (b.lag * shift) as i64)
            .max()
            .unwrap_or(0);
        let span = (k_max - k_min + 1) as usize;
        let reversed = blocks
            .chunks(lags)
            .map(|pair| {
                let mut rev = vec![0.0; span];
                for b in pair {
                    let off = b.tau_min + (b.lag * shift) as i64;
                    for (j, &w) in b.taps.iter().enumerate() {
                        rev[(k_max - (off + j as i64)) as usize] += w;
                    }
                }
                rev
            })
            .collect();
        Self {
            sources,
            channels,
            frame_len,
            shift,
            ledger,
            generation,
            blocks,
            lags,
            k_min,
            k_max,
            reversed,
            dropped_energy,
        }
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn ledger(&self) -> &DelayLedger {
        &self.ledger
    }

    pub fn block(&self, n: usize, m: usize, lag_index: usize) -> &TapBlock {
        &self.blocks[(n * self.channels + m) * self.lags + lag_index]
    }

    /// Span of the folded kernel in samples relative to `t`: output `t`
    /// reads inputs `t - k_max ..= t - k_min`.
    pub fn support(&self) -> (i64, i64) {
        (self.k_min, self.k_max)
    }

    /// Folded kernel `w_nm(k)`, `k` from `k_min`.
    pub fn folded(&self, n: usize, m: usize) -> Vec<f64> {
        let mut v = self.reversed[n * self.channels + m].clone();
        v.reverse();
        v
    }

    pub fn dropped_energy(&self, n: usize, m: usize) -> f64 {
        self.dropped_energy[n * self.channels + m]
    }

    /// History samples the bank needs behind the newest input it reads.
    pub fn history_len(&self) -> usize {
        (self.k_max - self.k_min + 1) as usize
    }

    /// `y(t)` for every source. Needs inputs up to `t + F/2 - Gamma`.
    #[inline]
    pub fn filter_sample(&self, history: &SampleHistory, t: i64, out: &mut [f64]) -> Result<()> {
        let len = self.history_len();
        let start = t - self.k_max;
        for (n, y) in out.iter_mut().enumerate().take(self.sources) {
            let mut acc = 0.0;
            for m in 0..self.channels {
                let x = history.window(m, start, len)?;
                acc += dot(&self.reversed[n * self.channels + m], x);
            }
            *y = acc;
        }
        Ok(())
    }
}

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Reusable inverse-transform scratch for [`to_time_domain`].
#[derive(Debug, Clone)]
pub struct Converter {
    dft: Dft,
    full: Vec<C64>,
}

impl Converter {
    pub fn new(frame_len: usize) -> Result<Self> {
        Ok(Self {
            dft: Dft::new(frame_len)?,
            full: vec![ZERO; frame_len],
        })
    }

    /// Convert one-sided per-bin filters into a windowed, truncated bank.
    pub fn convert<T: AsRef<ComposedFilter>>(
        &mut self,
        filters: &[T],
        window: &Window,
        truncation: usize,
        shift: usize,
        generation: u64,
    ) -> Result<TimeFilterBank> {
        let f_len = self.dft.len();
        if filters.len() != f_len / 2 + 1 || window.len() != f_len {
            return Err(Error::dims("need F/2 + 1 bin filters and an F-point window"));
        }
        let ledger = DelayLedger::new(f_len, truncation, shift)?;
        let first = filters[0].as_ref();
        let (n_src, m_ch, lags) = (first.sources(), first.channels(), first.lags.clone());
        if filters
            .iter()
            .any(|f| f.as_ref().lags != lags || f.as_ref().sources() != n_src || f.as_ref().channels() != m_ch)
        {
            return Err(Error::dims("bin filters disagree in shape"));
        }
        let half = (f_len / 2) as i64;
        let mut blocks = Vec::with_capacity(n_src * m_ch * lags.len());
        let mut dropped = vec![0.0; n_src * m_ch];
        let mut onesided = vec![ZERO; filters.len()];
        for n in 0..n_src {
            for m in 0..m_ch {
                for (li, &lag) in lags.iter().enumerate() {
                    for (dst, filt) in onesided.iter_mut().zip(filters) {
                        *dst = filt.as_ref().taps[li].get(n, m);
                    }
                    extend_conjugate_symmetric(&onesided, &mut self.full);
                    self.dft.inverse_in_place(&mut self.full);
                    let scale = self.full.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
                    let resid = self.full.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
                    if resid > REAL_RESIDUE_TOL * scale.max(f64::MIN_POSITIVE) && resid > 1e-300 {
                        return Err(Error::NumericalContract(format!(
                            "filter ({n},{m}) lag {lag}: imaginary residue {resid:e} vs scale {scale:e}"
                        )));
                    }
                    let tau_min = if lag == 0 { -half + truncation as i64 } else { -half };
                    let at = |tau: i64| {
                        let j = if tau < 0 { tau + f_len as i64 } else { tau } as usize;
                        self.full[j].re * window.centered(tau)
                    };
                    if lag == 0 {
                        dropped[n * m_ch + m] = (-half..tau_min).map(|t| at(t).powi(2)).sum();
                    }
                    let taps = (tau_min..half).map(at).collect();
                    blocks.push(TapBlock { lag, tau_min, taps });
                }
            }
        }
        Ok(TimeFilterBank::assemble(
            n_src,
            m_ch,
            f_len,
            shift,
            ledger,
            generation,
            blocks,
            lags.len(),
            dropped,
        ))
    }
}

/// One-shot conversion; see [`Converter::convert`].
pub fn to_time_domain<T: AsRef<ComposedFilter>>(
    filters: &[T],
    window: &Window,
    truncation: usize,
    shift: usize,
    generation: u64,
) -> Result<TimeFilterBank> {
    Converter::new(window.len())?.convert(filters, window, truncation, shift, generation)
}

/// Holder of the bank the filtering side reads.
#[derive(Debug, Clone)]
pub struct BankSlot {
    active: TimeFilterBank,
}

impl BankSlot {
    pub fn new(initial: TimeFilterBank) -> Self {
        Self { active: initial }
    }

    pub fn active(&self) -> &TimeFilterBank {
        &self.active
    }

    /// Install `fresh`, returning the bank it replaces.
    pub fn swap(&mut self, fresh: TimeFilterBank) -> Result<TimeFilterBank> {
        swap_bank(&mut self.active, fresh)
    }
}

/// Replace `current` with `fresh` if its generation is newer.
pub fn swap_bank(current: &mut TimeFilterBank, fresh: TimeFilterBank) -> Result<TimeFilterBank> {
    if fresh.generation <= current.generation {
        return Err(Error::StaleGeneration {
            current: current.generation,
            fresh: fresh.generation,
        });
    }
    if fresh.sources != current.sources
        || fresh.channels != current.channels
        || fresh.ledger != current.ledger
    {
        return Err(Error::dims("replacement bank has a different layout or delay"));
    }
    Ok(std::mem::replace(current, fresh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ComplexMatrix;
    use crate::stft::{make_window, Analyzer, StftConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_filters(f_len: usize, lags: Vec<usize>) -> Vec<ComposedFilter> {
        (0..f_len / 2 + 1).map(|_| ComposedFilter::identity(2, 2, lags.clone())).collect()
    }

    /// Filters whose time-domain responses are random and confined to
    /// `|tau| <= width`.
    fn short_random_filters(
        rng: &mut ChaCha8Rng,
        f_len: usize,
        lags: &[usize],
        width: i64,
    ) -> Vec<ComposedFilter> {
        let nb = f_len / 2 + 1;
        let dft = Dft::new(f_len).unwrap();
        let mut out: Vec<ComposedFilter> = (0..nb)
            .map(|_| ComposedFilter {
                lags: lags.to_vec(),
                taps: vec![ComplexMatrix::zeros(2, 2); lags.len()],
            })
            .collect();
        for li in 0..lags.len() {
            for n in 0..2 {
                for m in 0..2 {
                    let mut buf = vec![ZERO; f_len];
                    for tau in -width..=width {
                        let j = tau.rem_euclid(f_len as i64) as usize;
                        buf[j] = C64::new(rng.random_range(-1.0..1.0), 0.0);
                    }
                    dft.forward_in_place(&mut buf);
                    for f in 0..nb {
                        out[f].taps[li].set(n, m, buf[f]);
                    }
                }
            }
        }
        out
    }

    fn history_of(x: &[Vec<f64>]) -> SampleHistory {
        let mut h = SampleHistory::new(2, x[0].len());
        for t in 0..x[0].len() {
            h.push(&[x[0][t], x[1][t]]);
        }
        h
    }

    fn noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<Vec<f64>> {
        (0..2).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn ledger_cases() {
        let l = DelayLedger::new(1024, 448, 256).unwrap();
        assert_eq!(l.algorithmic_delay, 64);
        assert!((l.delay_ms(16000.0) - 4.0).abs() < 1e-12);
        assert_eq!(DelayLedger::new(1024, 0, 256).unwrap().algorithmic_delay, 512);
        assert_eq!(DelayLedger::new(1024, 512, 256).unwrap().algorithmic_delay, 0);
        assert!(DelayLedger::new(1024, 513, 256).is_err());
    }

    #[test]
    fn identity_spectrum_gives_unit_centre_tap() {
        let cfg = StftConfig::new(64, 16).unwrap();
        let w = make_window(&cfg);
        let bank = to_time_domain(&identity_filters(64, vec![0]), &w, 0, 16, 1).unwrap();
        for n in 0..2 {
            for m in 0..2 {
                let b = bank.block(n, m, 0);
                for tau in -32..32 {
                    let expect = if n == m && tau == 0 { 1.0 } else { 0.0 };
                    assert!((b.at(tau) - expect).abs() < 1e-15, "{n}{m} {tau}");
                }
            }
        }
        let direct = TimeFilterBank::identity(2, 2, 64, 16, 0).unwrap();
        assert_eq!(direct.folded(0, 0), bank.folded(0, 0));
    }

    #[test]
    fn truncation_bounds_the_lag0_support() {
        let cfg = StftConfig::new(1024, 256).unwrap();
        let w = make_window(&cfg);
        let filt = identity_filters(1024, vec![0, 2, 3]);
        let bank = to_time_domain(&filt, &w, 448, 256, 1).unwrap();
        assert_eq!(bank.block(0, 0, 0).tau_min, -64);
        assert_eq!(bank.block(0, 0, 0).taps.len(), 64 + 512);
        assert_eq!(bank.block(0, 0, 1).tau_min, -512);
        assert_eq!(bank.ledger().algorithmic_delay, 64);
        let causal = to_time_domain(&filt, &w, 512, 256, 1).unwrap();
        assert_eq!(causal.block(1, 0, 0).tau_min, 0);
        assert_eq!(causal.support().0, 0);
        assert_eq!(causal.support().1, 511 + 3 * 256);
    }

    #[test]
    fn asymmetric_spectrum_is_rejected() {
        let cfg = StftConfig::new(16, 4).unwrap();
        let w = make_window(&cfg);
        let mut filt = identity_filters(16, vec![0]);
        filt[0].taps[0].set(0, 0, C64::new(1.0, 0.5));
        assert!(matches!(
            to_time_domain(&filt, &w, 0, 4, 1),
            Err(Error::NumericalContract(_))
        ));
    }

    #[test]
    fn identity_bank_passes_input_and_zero_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = noise(&mut rng, 600);
        let h = history_of(&x);
        let bank = TimeFilterBank::identity(2, 2, 128, 32, 0).unwrap();
        let mut y = [0.0; 2];
        for t in 0..600 - 64 {
            bank.filter_sample(&h, t as i64, &mut y).unwrap();
            assert_eq!(y, [x[0][t], x[1][t]]);
        }
        assert!(matches!(
            bank.filter_sample(&h, 600 - 63, &mut y),
            Err(Error::NotReady(_))
        ));
        let z = history_of(&[vec![0.0; 600], vec![0.0; 600]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cw = make_window(&StftConfig::new(128, 32).unwrap());
        let filt = short_random_filters(&mut rng, 128, &[0, 4], 60);
        let bank = to_time_domain(&filt, &cw, 0, 32, 1).unwrap();
        bank.filter_sample(&z, 400, &mut y).unwrap();
        assert_eq!(y, [0.0, 0.0]);
    }

    /// The window-folded convolution at a frame centre equals STFT-domain
    /// filtering followed by reading that frame's centre sample.
    #[test]
    fn frame_centre_sample_matches_stft_filtering() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (f_len, shift) = (64, 16);
        let cfg = StftConfig::new(f_len, shift).unwrap();
        let w = make_window(&cfg);
        let lags = [0usize, 4, 5];
        let filt = short_random_filters(&mut rng, f_len, &lags, 31);
        let bank = to_time_domain(&filt, &w, 0, shift, 1).unwrap();
        let x = noise(&mut rng, 1200);
        let h = history_of(&x);
        let mut an = Analyzer::new(cfg).unwrap();
        let frames: Vec<_> = (0..60).map(|i| an.analyze(&h, i).unwrap()).collect();
        for i in 10..60usize {
            let mut y_half = vec![vec![ZERO; f_len / 2 + 1]; 2];
            for f in 0..=f_len / 2 {
                let y = filt[f].apply(|l| (l <= i).then(|| frames[i - l].bin(f)));
                y_half[0][f] = y[0];
                y_half[1][f] = y[1];
            }
            let centre = (i * shift + f_len / 2) as i64;
            let mut td = [0.0; 2];
            bank.filter_sample(&h, centre, &mut td).unwrap();
            for n in 0..2 {
                let frame = an.frame_to_time(&y_half[n]);
                assert!((frame[f_len / 2] - td[n]).abs() < 1e-12, "{} vs {}", frame[f_len / 2], td[n]);
            }
        }
    }

    #[test]
    fn short_static_filters_match_overlap_add() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (f_len, shift) = (1024, 256);
        let cfg = StftConfig::new(f_len, shift).unwrap();
        let w = make_window(&cfg);
        let lags = [0usize, 2, 3];
        let filt = short_random_filters(&mut rng, f_len, &lags, 12);
        let bank = to_time_domain(&filt, &w, 0, shift, 1).unwrap();
        let len = 16000;
        let x = noise(&mut rng, len);
        let h = history_of(&x);
        let mut an = Analyzer::new(cfg).unwrap();
        let nfr = (len - f_len) / shift + 1;
        let frames: Vec<_> = (0..nfr as u64).map(|i| an.analyze(&h, i).unwrap()).collect();
        let out: Vec<_> = (0..nfr)
            .map(|i| {
                let bins = (0..=f_len / 2)
                    .flat_map(|f| filt[f].apply(|l| (l <= i).then(|| frames[i - l].bin(f))))
                    .collect();
                crate::stft::SpectrumFrame::new(i as u64, 2, bins).unwrap()
            })
            .collect();
        let syn = crate::stft::synthesize(&out, &cfg).unwrap();
        let margin = 4 * shift + f_len;
        let (mut err, mut energy) = (0.0, 0.0);
        let mut y = [0.0; 2];
        for t in margin..len - margin {
            bank.filter_sample(&h, t as i64, &mut y).unwrap();
            for n in 0..2 {
                let r = syn.channels[n][t - syn.start as usize];
                err += (y[n] - r).powi(2);
                energy += r * r;
            }
        }
        assert!((err / energy).sqrt() < 1e-3, "relative error {}", (err / energy).sqrt());
    }

    #[test]
    fn perturbation_never_reaches_back_beyond_the_delay() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = StftConfig::new(1024, 256).unwrap();
        let w = make_window(&cfg);
        let filt = short_random_filters(&mut rng, 1024, &[0, 2, 3], 511);
        let len = 6000;
        let x = noise(&mut rng, len);
        let t0 = 3000usize;
        let mut xp = x.clone();
        xp[1][t0] += 1.0;
        let (h, hp) = (history_of(&x), history_of(&xp));
        for gamma in [0usize, 448, 512] {
            let bank = to_time_domain(&filt, &w, gamma, 256, 1).unwrap();
            let d = 512 - gamma as i64;
            let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
            let mut first_change = None;
            for t in 1000..(len as i64 - d) {
                bank.filter_sample(&h, t, &mut a).unwrap();
                bank.filter_sample(&hp, t, &mut b).unwrap();
                if a != b && first_change.is_none() {
                    first_change = Some(t);
                }
            }
            let first = first_change.unwrap();
            assert!(first >= t0 as i64 - d, "gamma {gamma}");
            // h(-F/2) = 0, so without truncation the earliest live tap is one later.
            let reach = if gamma == 0 { d - 1 } else { d };
            assert_eq!(first, t0 as i64 - reach, "gamma {gamma}");
        }
    }

    #[test]
    fn dropped_energy_grows_with_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = StftConfig::new(256, 64).unwrap();
        let w = make_window(&cfg);
        let filt = short_random_filters(&mut rng, 256, &[0, 2], 127);
        let mut last = vec![-1.0; 4];
        for gamma in (0..=128).step_by(8) {
            let bank = to_time_domain(&filt, &w, gamma, 64, 1).unwrap();
            for (k, prev) in last.iter_mut().enumerate() {
                let e = bank.dropped_energy(k / 2, k % 2);
                assert!(e >= *prev);
                *prev = e;
            }
        }
        assert_eq!(to_time_domain(&filt, &w, 0, 64, 1).unwrap().dropped_energy(0, 0), 0.0);
    }

    #[test]
    fn swap_semantics() {
        let cfg = StftConfig::new(64, 16).unwrap();
        let w = make_window(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = TimeFilterBank::identity(2, 2, 64, 16, 0).unwrap();
        let b = to_time_domain(&short_random_filters(&mut rng, 64, &[0], 8), &w, 0, 16, 1).unwrap();
        let mut slot = BankSlot::new(a.clone());
        assert!(matches!(slot.swap(a.clone()), Err(Error::StaleGeneration { .. })));

        let x = vec![vec![1.0; 400], vec![-0.5; 400]];
        let h = history_of(&x);
        let mut y = [0.0; 2];
        slot.active().filter_sample(&h, 100, &mut y).unwrap();
        let before = y;
        slot.active().filter_sample(&h, 101, &mut y).unwrap();
        assert_eq!(y, before);

        slot.swap(b.clone()).unwrap();
        slot.active().filter_sample(&h, 102, &mut y).unwrap();
        // constant input: sum of all taps times the level
        let expect: Vec<f64> = (0..2)
            .map(|n| (0..2).map(|m| b.folded(n, m).iter().sum::<f64>() * x[m][0]).sum())
            .collect();
        assert!((y[0] - expect[0]).abs() < 1e-12 && (y[1] - expect[1]).abs() < 1e-12);

        let mut a2 = a.clone();
        a2.generation = 2;
        slot.swap(a2).unwrap();
        slot.active().filter_sample(&h, 103, &mut y).unwrap();
        assert_eq!(y, [1.0, -0.5]);
    }
}
