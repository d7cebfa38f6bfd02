//! BSS-eval style SDR/SIR/SAR.
//!
//! Each estimate is split by least squares into a target part (span of the
//! matched reference delayed by `0..proj_len` taps), an interference part
//! (the rest of the span of all delayed references) and an artifact
//! residual. Signals are zero-padded by `proj_len - 1` samples so the Gram
//! matrices are exactly block Toeplitz.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{C64, ZERO};
use crate::par;

/// All ratios are clamped to `[-CAP_DB, CAP_DB]`.
pub const CAP_DB: f64 = 100.0;
pub const DEFAULT_PROJ_LEN: usize = 512;

/// Metrics indexed by source; `permutation[j]` is the estimate matched to
/// source `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub sdr: Vec<f64>,
    pub sir: Vec<f64>,
    pub sar: Vec<f64>,
    pub permutation: Vec<usize>,
    /// Window start in seconds; 0 for whole-signal evaluation.
    pub window_start: f64,
}

impl EvalResult {
    pub fn sources(&self) -> usize {
        self.sdr.len()
    }

    pub fn mean_sdr(&self) -> f64 {
        mean(&self.sdr)
    }

    pub fn mean_sir(&self) -> f64 {
        mean(&self.sir)
    }

    pub fn mean_sar(&self) -> f64 {
        mean(&self.sar)
    }
}

/// Per-source dB improvements over a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub sdr: Vec<f64>,
    pub sir: Vec<f64>,
    pub sar: Vec<f64>,
    pub window_start: f64,
}

impl Improvement {
    pub fn mean_sdr(&self) -> f64 {
        mean(&self.sdr)
    }

    pub fn mean_sir(&self) -> f64 {
        mean(&self.sir)
    }

    pub fn mean_sar(&self) -> f64 {
        mean(&self.sar)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Target, interference and artifact parts, each `len + proj_len - 1` long.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub target: Vec<f64>,
    pub interf: Vec<f64>,
    pub artif: Vec<f64>,
}

impl Decomposition {
    pub fn sdr(&self) -> f64 {
        let err: Vec<f64> = self.interf.iter().zip(&self.artif).map(|(a, b)| a + b).collect();
        ratio_db(energy(&self.target), energy(&err))
    }

    pub fn sir(&self) -> f64 {
        ratio_db(energy(&self.target), energy(&self.interf))
    }

    pub fn sar(&self) -> f64 {
        let sig: Vec<f64> = self.target.iter().zip(&self.interf).map(|(a, b)| a + b).collect();
        ratio_db(energy(&sig), energy(&self.artif))
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `10 log10(num / den)` clamped to the cap; a zero denominator is `+cap`
/// and a zero numerator `-cap`.
pub fn ratio_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        return -CAP_DB;
    }
    if den <= 0.0 {
        return CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-CAP_DB, CAP_DB)
}

/// Factorized delayed-reference space, shared across any number of
/// estimates of the same segment.
pub struct Evaluator {
    len: usize,
    proj_len: usize,
    fft_len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    spectra: Vec<Vec<C64>>,
    full: Cholesky<f64, Dyn>,
    own: Vec<Cholesky<f64, Dyn>>,
}

impl Evaluator {
    pub fn new(references: &[&[f64]], proj_len: usize) -> Result<Self> {
        let n = references.len();
        let len = references.first().map_or(0, |r| r.len());
        if n == 0 || len == 0 || proj_len == 0 {
            return Err(Error::invalid("need non-empty references and proj_len > 0"));
        }
        if references.iter().any(|r| r.len() != len) {
            return Err(Error::invalid("references must have equal lengths"));
        }
        if references.iter().any(|r| energy(r) <= 0.0) {
            return Err(Error::invalid("zero-energy reference"));
        }
        let fft_len = (len + proj_len - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(fft_len);
        let inv = planner.plan_fft_inverse(fft_len);
        let spectra: Vec<Vec<C64>> = references.iter().map(|r| spectrum(&fwd, r, fft_len)).collect();

        // xcorr[i][j][k mod fft_len] = sum_u s_i(u) s_j(u + k).
        let mut xcorr = vec![vec![Vec::new(); n]; n];
        for i in 0..n {
            for j in i..n {
                let mut v: Vec<C64> =
                    spectra[j].iter().zip(&spectra[i]).map(|(a, b)| a * b.conj()).collect();
                inv.process(&mut v);
                let scale = 1.0 / fft_len as f64;
                xcorr[i][j] = v.iter().map(|c| c.re * scale).collect::<Vec<f64>>();
            }
        }
        let lag = |i: usize, j: usize, k: i64| -> f64 {
            // rho_ij(k) = rho_ji(-k)
            let (a, b, k) = if i <= j { (i, j, k) } else { (j, i, -k) };
            xcorr[a][b][k.rem_euclid(fft_len as i64) as usize]
        };
        let l = proj_len;
        // <s_i(. - a), s_j(. - b)> = rho_ij(a - b)
        let gram = DMatrix::from_fn(n * l, n * l, |r, c| {
            let (i, a) = (r / l, r % l);
            let (j, b) = (c / l, c % l);
            lag(i, j, a as i64 - b as i64)
        });
        let full = factor(gram.clone())?;
        let own = (0..n)
            .map(|j| factor(gram.view((j * l, j * l), (l, l)).into_owned()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { len, proj_len, fft_len, fwd, inv, spectra, full, own })
    }

    pub fn sources(&self) -> usize {
        self.spectra.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn proj_len(&self) -> usize {
        self.proj_len
    }

    /// Decompose every estimate against every source: `out[e][j]`.
    pub fn decompose_all(&self, estimates: &[&[f64]]) -> Result<Vec<Vec<Decomposition>>> {
        estimates.iter().map(|e| self.decompose_against_all(e)).collect()
    }

    pub fn decompose(&self, estimate: &[f64], source: usize) -> Result<Decomposition> {
        if source >= self.sources() {
            return Err(Error::invalid("source index out of range"));
        }
        let mut all = self.decompose_against_all(estimate)?;
        Ok(all.swap_remove(source))
    }

    fn decompose_against_all(&self, estimate: &[f64]) -> Result<Vec<Decomposition>> {
        if estimate.len() != self.len {
            return Err(Error::invalid(format!(
                "estimate has {} samples, references {}",
                estimate.len(),
                self.len
            )));
        }
        let (n, l) = (self.sources(), self.proj_len);
        let out_len = self.len + l - 1;
        let est = spectrum(&self.fwd, estimate, self.fft_len);
        // c_j(tau) = <estimate, s_j(. - tau)>
        let corr: Vec<Vec<f64>> = self
            .spectra
            .iter()
            .map(|s| {
                let v: Vec<C64> = est.iter().zip(s).map(|(x, y)| x * y.conj()).collect();
                self.real_ifft(v)[..l].to_vec()
            })
            .collect();
        let rhs = DVector::from_iterator(n * l, corr.iter().flatten().copied());
        let coef_full = self.full.solve(&rhs);
        let full = self.synthesize((0..n).map(|j| (j, coef_full.rows(j * l, l).iter().copied().collect())));
        let mut padded = estimate.to_vec();
        padded.resize(out_len, 0.0);
        let artif: Vec<f64> = padded.iter().zip(&full).map(|(a, b)| a - b).collect();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let coef = self.own[j].solve(&DVector::from_column_slice(&corr[j]));
            let target = self.synthesize(std::iter::once((j, coef.iter().copied().collect())));
            let interf = full.iter().zip(&target).map(|(a, b)| a - b).collect();
            out.push(Decomposition { target, interf, artif: artif.clone() });
        }
        Ok(out)
    }

    /// `sum_j conv(coef_j, s_j)`, truncated to `len + proj_len - 1`.
    fn synthesize(&self, parts: impl Iterator<Item = (usize, Vec<f64>)>) -> Vec<f64> {
        let mut acc = vec![ZERO; self.fft_len];
        for (j, coef) in parts {
            let c = spectrum(&self.fwd, &coef, self.fft_len);
            for ((a, x), s) in acc.iter_mut().zip(&c).zip(&self.spectra[j]) {
                *a += x * s;
            }
        }
        let mut y = self.real_ifft(acc);
        y.truncate(self.len + self.proj_len - 1);
        y
    }

    fn real_ifft(&self, mut v: Vec<C64>) -> Vec<f64> {
        self.inv.process(&mut v);
        let scale = 1.0 / self.fft_len as f64;
        v.iter().map(|c| c.re * scale).collect()
    }

    /// Evaluate with the permutation maximizing mean SIR.
    pub fn eval(&self, estimates: &[&[f64]]) -> Result<EvalResult> {
        let d = self.checked_decompositions(estimates)?;
        let sir: Vec<Vec<f64>> = d.iter().map(|row| row.iter().map(Decomposition::sir).collect()).collect();
        let perm = best_permutation(self.sources(), |j, e| sir[e][j]);
        Ok(collect(&d, &perm))
    }

    /// Evaluate under a fixed permutation (`perm[j]` = estimate of source j).
    pub fn eval_with_permutation(&self, estimates: &[&[f64]], perm: &[usize]) -> Result<EvalResult> {
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.sources()).collect::<Vec<_>>() {
            return Err(Error::invalid("permutation does not match the source count"));
        }
        let d = self.checked_decompositions(estimates)?;
        Ok(collect(&d, perm))
    }

    fn checked_decompositions(&self, estimates: &[&[f64]]) -> Result<Vec<Vec<Decomposition>>> {
        if estimates.len() != self.sources() {
            return Err(Error::invalid(format!(
                "{} estimates for {} references",
                estimates.len(),
                self.sources()
            )));
        }
        self.decompose_all(estimates)
    }
}

fn spectrum(fwd: &Arc<dyn Fft<f64>>, x: &[f64], n: usize) -> Vec<C64> {
    let mut v = vec![ZERO; n];
    for (d, &s) in v.iter_mut().zip(x) {
        d.re = s;
    }
    fwd.process(&mut v);
    v
}

/// Cholesky with diagonal loading escalated until the factorization exists.
fn factor(gram: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = gram.nrows();
    let scale = gram.trace() / n as f64;
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut g = gram.clone();
        for k in 0..n {
            g[(k, k)] += jitter;
        }
        if let Some(c) = g.cholesky() {
            return Ok(c);
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 100.0 };
    }
    Err(Error::DecompositionFailure("reference Gram matrix is not positive definite".into()))
}

fn collect(d: &[Vec<Decomposition>], perm: &[usize]) -> EvalResult {
    let pick = |f: fn(&Decomposition) -> f64| -> Vec<f64> {
        perm.iter().enumerate().map(|(j, &e)| f(&d[e][j])).collect()
    };
    EvalResult {
        sdr: pick(Decomposition::sdr),
        sir: pick(Decomposition::sir),
        sar: pick(Decomposition::sar),
        permutation: perm.to_vec(),
        window_start: 0.0,
    }
}

/// Permutation `perm[j] = e` maximizing `sum_j score(j, e)`; ties keep the
/// lexicographically first.
fn best_permutation(n: usize, score: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    fn rec(
        j: usize,
        cur: &mut Vec<usize>,
        used: &mut [bool],
        acc: f64,
        best: &mut (f64, Vec<usize>),
        score: &dyn Fn(usize, usize) -> f64,
    ) {
        if j == used.len() {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for e in 0..used.len() {
            if !used[e] {
                used[e] = true;
                cur.push(e);
                rec(j + 1, cur, used, acc + score(j, e), best, score);
                cur.pop();
                used[e] = false;
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, (0..n).collect());
    rec(0, &mut Vec::new(), &mut vec![false; n], 0.0, &mut best, &score);
    best.1
}

pub fn bss_eval(estimates: &[&[f64]], references: &[&[f64]], proj_len: usize) -> Result<EvalResult> {
    if estimates.len() != references.len() {
        return Err(Error::invalid("estimate and reference counts differ"));
    }
    Evaluator::new(references, proj_len)?.eval(estimates)
}

/// Source-wise `result - baseline`. Capped inputs give finite deltas, e.g.
/// a perfect estimate scores `CAP_DB - baseline`.
pub fn improvement(result: &EvalResult, baseline: &EvalResult) -> Result<Improvement> {
    if result.sources() != baseline.sources() {
        return Err(Error::invalid("result and baseline source counts differ"));
    }
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(Improvement {
        sdr: diff(&result.sdr, &baseline.sdr),
        sir: diff(&result.sir, &baseline.sir),
        sar: diff(&result.sar, &baseline.sar),
        window_start: result.window_start,
    })
}

/// Window layout in samples: starts `0, hop, ...` while the window fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Windowing {
    pub window: usize,
    pub hop: usize,
}

impl Windowing {
    pub fn from_seconds(window: f64, hop: f64, sample_rate: u32) -> Result<Self> {
        let fs = sample_rate as f64;
        let (w, h) = ((window * fs).round(), (hop * fs).round());
        if !(w >= 1.0 && h >= 1.0) {
            return Err(Error::invalid("window and hop must be at least one sample"));
        }
        Ok(Self { window: w as usize, hop: h as usize })
    }

    pub fn starts(&self, len: usize) -> Vec<usize> {
        if self.window > len {
            return Vec::new();
        }
        (0..=(len - self.window) / self.hop).map(|k| k * self.hop).collect()
    }
}

/// Sliding evaluation of several estimate sets against one set of
/// references. Each window's reference factorization is built once and
/// shared by all sets; the permutation of each set is fixed from its
/// whole-signal evaluation. Returns `out[set][window]`.
pub fn sliding_eval_many(
    sets: &[Vec<&[f64]>],
    references: &[&[f64]],
    windowing: Windowing,
    sample_rate: u32,
    proj_len: usize,
    parallel: bool,
) -> Result<Vec<Vec<EvalResult>>> {
    let len = references.first().map_or(0, |r| r.len());
    if windowing.window > len {
        return Err(Error::invalid("window longer than the signal"));
    }
    let whole = Evaluator::new(references, proj_len)?;
    let perms = sets
        .iter()
        .map(|s| whole.eval(s).map(|r| r.permutation))
        .collect::<Result<Vec<_>>>()?;
    drop(whole);
    let starts = windowing.starts(len);
    let per_window = par::map_range(starts.len(), parallel, |w| -> Result<Vec<EvalResult>> {
        let s0 = starts[w];
        let span = s0..s0 + windowing.window;
        let refs: Vec<&[f64]> = references.iter().map(|r| &r[span.clone()]).collect();
        let ev = Evaluator::new(&refs, proj_len)?;
        sets.iter()
            .zip(&perms)
            .map(|(set, perm)| {
                let est: Vec<&[f64]> = set.iter().map(|e| &e[span.clone()]).collect();
                let mut r = ev.eval_with_permutation(&est, perm)?;
                r.window_start = s0 as f64 / sample_rate as f64;
                Ok(r)
            })
            .collect()
    });
    let per_window = per_window.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((0..sets.len())
        .map(|k| per_window.iter().map(|w| w[k].clone()).collect())
        .collect())
}

pub fn sliding_eval(
    estimates: &[&[f64]],
    references: &[&[f64]],
    window: f64,
    hop: f64,
    sample_rate: u32,
    proj_len: usize,
) -> Result<Vec<EvalResult>> {
    let windowing = Windowing::from_seconds(window, hop, sample_rate)?;
    let mut out = sliding_eval_many(
        &[estimates.to_vec()],
        references,
        windowing,
        sample_rate,
        proj_len,
        par::AVAILABLE,
    )?;
    Ok(out.swap_remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn lowpass(x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        let mut s = 0.0;
        for (o, v) in y.iter_mut().zip(x) {
            s = 0.9 * s + v;
            *o = s;
        }
        y
    }

    /// Direct normal-equation projection onto delayed copies, no FFTs.
    fn naive_projection(est: &[f64], refs: &[&[f64]], l: usize) -> Vec<f64> {
        let t = est.len();
        let out = t + l - 1;
        let cols: Vec<Vec<f64>> = refs
            .iter()
            .flat_map(|r| {
                (0..l).map(move |d| {
                    let mut c = vec![0.0; out];
                    c[d..d + t].copy_from_slice(r);
                    c
                })
            })
            .collect();
        let k = cols.len();
        let g = DMatrix::from_fn(k, k, |i, j| cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>());
        let b = DVector::from_fn(k, |i, _| cols[i].iter().zip(est).map(|(a, b)| a * b).sum::<f64>());
        let x = g.lu().solve(&b).unwrap();
        (0..out).map(|n| (0..k).map(|i| x[i] * cols[i][n]).sum::<f64>()).collect()
    }

    #[test]
    fn matches_naive_projection() {
        let (t, l) = (300, 6);
        let s0 = lowpass(&noise(1, t));
        let s1 = noise(2, t);
        let est: Vec<f64> = (0..t).map(|i| s0[i] + 0.3 * s1[i] + 0.1 * noise(3, t)[i]).collect();
        let refs: [&[f64]; 2] = [&s0, &s1];
        let ev = Evaluator::new(&refs, l).unwrap();
        let d = ev.decompose(&est, 0).unwrap();
        let tgt = naive_projection(&est, &refs[..1], l);
        let full = naive_projection(&est, &refs, l);
        for n in 0..t + l - 1 {
            assert!((d.target[n] - tgt[n]).abs() < 1e-8, "target {n}");
            assert!((d.target[n] + d.interf[n] - full[n]).abs() < 1e-8, "full {n}");
        }
    }

    #[test]
    fn decomposition_reconstructs_and_residual_is_orthogonal() {
        let (t, l) = (2000, 32);
        let s0 = lowpass(&noise(4, t));
        let s1 = noise(5, t);
        let e = noise(6, t);
        let est: Vec<f64> = (0..t).map(|i| 0.7 * s0[i] - 0.4 * s1[i] + 0.2 * e[i]).collect();
        let refs: [&[f64]; 2] = [&s0, &s1];
        let d = Evaluator::new(&refs, l).unwrap().decompose(&est, 0).unwrap();
        let scale = energy(&est).sqrt();
        for n in 0..t + l - 1 {
            let want = if n < t { est[n] } else { 0.0 };
            let got = d.target[n] + d.interf[n] + d.artif[n];
            assert!((got - want).abs() <= 1e-10 * scale);
        }
        let art = energy(&d.artif).sqrt();
        for r in refs {
            let r_norm = energy(r).sqrt();
            for delay in 0..l {
                let ip: f64 = (0..t).map(|k| r[k] * d.artif[k + delay]).sum();
                assert!(ip.abs() < 1e-8 * r_norm * art, "delay {delay}: {ip}");
            }
        }
    }

    #[test]
    fn perfect_estimate_hits_the_cap() {
        let s0 = noise(7, 4000);
        let s1 = lowpass(&noise(8, 4000));
        let refs: [&[f64]; 2] = [&s0, &s1];
        // Swapped order must be undone by the permutation.
        let r = bss_eval(&[&s1, &s0], &refs, 64).unwrap();
        assert_eq!(r.permutation, vec![1, 0]);
        for v in r.sdr.iter().chain(&r.sir).chain(&r.sar) {
            assert_eq!(*v, CAP_DB);
        }
    }

    #[test]
    fn interference_only_estimate_hits_the_negative_cap() {
        // Disjoint supports make the cross terms exactly zero.
        let t = 3000;
        let mut s0 = noise(9, t);
        let mut s1 = noise(10, t);
        s0[1400..].iter_mut().for_each(|v| *v = 0.0);
        s1[..1600].iter_mut().for_each(|v| *v = 0.0);
        let refs: [&[f64]; 2] = [&s0, &s1];
        let r = bss_eval(&[&s1, &s1], &refs, 64).unwrap();
        // Both assignments tie; the first one gives source 0 the wrong signal.
        assert_eq!(r.permutation, vec![0, 1]);
        let wrong = 0;
        assert_eq!(r.sir[wrong], -CAP_DB);
        assert_eq!(r.sdr[wrong], -CAP_DB);
        assert_eq!(r.sir[1], CAP_DB);
    }

    #[test]
    fn ten_db_white_noise_gives_ten_db_sdr() {
        let t = 32000;
        let s0 = lowpass(&noise(11, t));
        let s1 = noise(12, t);
        let mut n = noise(13, t);
        let g = (energy(&s0) / energy(&n) / 10.0).sqrt();
        n.iter_mut().for_each(|v| *v *= g);
        let est: Vec<f64> = s0.iter().zip(&n).map(|(a, b)| a + b).collect();
        let r = bss_eval(&[&est, &s1], &[&s0, &s1], DEFAULT_PROJ_LEN).unwrap();
        assert!((9.0..=11.0).contains(&r.sdr[0]), "{}", r.sdr[0]);
    }

    #[test]
    fn scale_invariance() {
        let t = 3000;
        let s0 = lowpass(&noise(14, t));
        let s1 = noise(15, t);
        let e = noise(16, t);
        let est: Vec<f64> = (0..t).map(|i| s0[i] + 0.5 * s1[i] + 0.3 * e[i]).collect();
        let refs: [&[f64]; 2] = [&s0, &s1];
        let ev = Evaluator::new(&refs, 40).unwrap();
        let base = ev.eval(&[&est, &s1]).unwrap();
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let scaled: Vec<f64> = est.iter().map(|v| c * v).collect();
            let r = ev.eval(&[&scaled, &s1]).unwrap();
            for (a, b) in r.sdr.iter().zip(&base.sdr).chain(r.sir.iter().zip(&base.sir)).chain(r.sar.iter().zip(&base.sar)) {
                assert!((a - b).abs() < 1e-9, "c={c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn instantaneous_inverse_gains_cap_minus_baseline() {
        let t = 4000;
        let s = [noise(17, t), lowpass(&noise(18, t))];
        let a = [[1.0, 0.6], [0.5, 1.0]];
        let x: Vec<Vec<f64>> = (0..2)
            .map(|m| (0..t).map(|k| a[m][0] * s[0][k] + a[m][1] * s[1][k]).collect())
            .collect();
        // Images at mic 0 are a00 s0 and a01 s1.
        let img = [
            s[0].iter().map(|v| a[0][0] * v).collect::<Vec<_>>(),
            s[1].iter().map(|v| a[0][1] * v).collect::<Vec<_>>(),
        ];
        let refs: [&[f64]; 2] = [&img[0], &img[1]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        let y: Vec<Vec<f64>> = (0..2)
            .map(|n| (0..t).map(|k| inv[n][0] * x[0][k] + inv[n][1] * x[1][k]).collect())
            .collect();
        let ev = Evaluator::new(&refs, 16).unwrap();
        let r = ev.eval(&[&y[0], &y[1]]).unwrap();
        let base = ev.eval(&[&x[0], &x[0]]).unwrap();
        let d = improvement(&r, &base).unwrap();
        for j in 0..2 {
            assert!((d.sir[j] - (CAP_DB - base.sir[j])).abs() < 1e-9);
        }
        let zero = improvement(&base, &base).unwrap();
        assert!(zero.sdr.iter().chain(&zero.sir).chain(&zero.sar).all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = noise(19, 100);
        let z = vec![0.0; 100];
        assert!(Evaluator::new(&[&s, &z], 8).is_err());
        assert!(Evaluator::new(&[&s, &s[..50]], 8).is_err());
        let ev = Evaluator::new(&[&s], 8).unwrap();
        assert!(ev.eval(&[&s[..99]]).is_err());
        assert!(ev.eval_with_permutation(&[&s], &[1]).is_err());
    }

    #[test]
    fn sliding_windows() {
        let t = 4000;
        let s0 = noise(20, t);
        let s1 = lowpass(&noise(21, t));
        let refs: [&[f64]; 2] = [&s0, &s1];
        let w = Windowing { window: 1000, hop: 700 };
        assert_eq!(w.starts(t), vec![0, 700, 1400, 2100, 2800]);
        let out = sliding_eval_many(&[vec![&s0, &s1]], &refs, w, 1000, 32, false).unwrap();
        assert_eq!(out[0].len(), 5);
        assert!(out[0].iter().all(|r| r.sdr.iter().all(|v| *v == CAP_DB)));
        assert_eq!(out[0][2].window_start, 1.4);

        let est: Vec<f64> = (0..t).map(|i| s0[i] + 0.2 * s1[i]).collect();
        let full = bss_eval(&[&est, &s1], &refs, 32).unwrap();
        let one = sliding_eval(&[&est, &s1], &refs, 4.0, 0.3, 1000, 32).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], full);
        assert!(sliding_eval(&[&est, &s1], &refs, 5.0, 1.0, 1000, 32).is_err());
    }
}
