//! Frame-level orchestration of the source-wise factorized convolutional
//! beamformer.
//!
//! Each frame runs, in order: separated estimates from the previous filters,
//! the cross-bin variance reduction, the per-source WPE update, the
//! dereverberated vectors from the new prediction filters, the weighted
//! covariance update and the ISS sweep. The composed filter of bin `f` then
//! satisfies
//!
//! ```text
//! y(i,f) = sum_l W(f,l) x(i-l,f),   l in {0} u {D..D+L-1}
//! W(f,0) row n     =  c_n q_n^H
//! W(f,D+j) row n   = -c_n q_n^H G_{n,j}^H
//! ```
//!
//! where `G_{n,j}` is the `j`-th `M x M` row block of `G_n` and `c_n` the
//! projection-back scale.

use crate::dereverb::{Coord, DelayLine, DereverbConfig, WpeState};
use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, C64, ZERO};
use crate::par;
use crate::separation::{
    estimate_variance, two_sided_energy, update_covariance, SeparationConfig, SeparationState,
    VarianceFloor,
};
use crate::stft::SpectrumFrame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfConfig {
    pub sources: usize,
    pub channels: usize,
    pub frame_len: usize,
    /// `None` disables dereverberation (pure online IVA).
    pub dereverb: Option<DereverbConfig>,
    pub separation: SeparationConfig,
    /// Microphone receiving the projection-back scale.
    pub reference: usize,
    pub parallel: bool,
}

impl CbfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 || self.sources > self.channels {
            return Err(Error::invalid(format!(
                "{} sources with {} channels",
                self.sources, self.channels
            )));
        }
        if self.reference >= self.channels {
            return Err(Error::invalid("reference microphone out of range"));
        }
        if let Some(d) = &self.dereverb {
            d.validate()?;
        }
        self.separation.validate()
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Lags carrying taps: `0` then `D..D+L-1`.
    pub fn lags(&self) -> Vec<usize> {
        let mut lags = vec![0];
        if let Some(d) = &self.dereverb {
            lags.extend(d.delay..d.delay + d.order);
        }
        lags
    }
}

/// Convolutional filter of one bin: one `N x M` tap per listed lag.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedFilter {
    pub lags: Vec<usize>,
    pub taps: Vec<ComplexMatrix>,
}

impl ComposedFilter {
    pub fn identity(sources: usize, channels: usize, lags: Vec<usize>) -> Self {
        let mut tap0 = ComplexMatrix::zeros(sources, channels);
        for n in 0..sources {
            tap0.set(n, n, C64::new(1.0, 0.0));
        }
        let mut taps = vec![ComplexMatrix::zeros(sources, channels); lags.len()];
        taps[0] = tap0;
        Self { lags, taps }
    }

    pub fn sources(&self) -> usize {
        self.taps[0].rows()
    }

    pub fn channels(&self) -> usize {
        self.taps[0].cols()
    }

    /// `sum_l W(l) x(i-l)`, with `past(l)` returning `x(i-l)` (or `None`
    /// before the stream).
    pub fn apply<'a>(&self, past: impl Fn(usize) -> Option<&'a [C64]>) -> Vec<C64> {
        let mut y = vec![ZERO; self.sources()];
        for (&lag, tap) in self.lags.iter().zip(&self.taps) {
            let Some(x) = past(lag) else { continue };
            for (n, yn) in y.iter_mut().enumerate() {
                *yn += tap.row(n).iter().zip(x).map(|(w, v)| w * v).sum::<C64>();
            }
        }
        y
    }
}

impl AsRef<ComposedFilter> for ComposedFilter {
    fn as_ref(&self) -> &ComposedFilter {
        self
    }
}

/// Build the composed taps from `G_n` (one per source, empty slice when
/// dereverberation is disabled), `Q` and optional per-source scales.
pub fn compose_filters(
    g: &[&ComplexMatrix],
    q: &ComplexMatrix,
    scales: Option<&[C64]>,
    lags: &[usize],
    out: &mut ComposedFilter,
) -> Result<()> {
    let (n_src, m) = (q.rows(), q.cols());
    let blocks = lags.len() - 1;
    if !g.is_empty() && g.len() != n_src {
        return Err(Error::dims("one prediction filter per source"));
    }
    if g.is_empty() && blocks > 0 {
        return Err(Error::dims("lagged taps need prediction filters"));
    }
    if g.iter().any(|gn| gn.rows() != blocks * m || gn.cols() != m) {
        return Err(Error::dims("prediction filter must be LM x M"));
    }
    if out.lags != lags {
        out.lags = lags.to_vec();
        out.taps = vec![ComplexMatrix::zeros(n_src, m); lags.len()];
    }
    for n in 0..n_src {
        let c = scales.map_or(C64::new(1.0, 0.0), |s| s[n]);
        let r = q.row(n);
        for (dst, &src) in out.taps[0].row_mut(n).iter_mut().zip(r) {
            *dst = c * src;
        }
        for j in 0..blocks {
            let gn = g[n];
            let row = out.taps[j + 1].row_mut(n);
            for (mm, dst) in row.iter_mut().enumerate() {
                let grow = gn.row(j * m + mm);
                let acc: C64 = r.iter().zip(grow).map(|(ra, ga)| ra * ga.conj()).sum();
                *dst = -c * acc;
            }
        }
    }
    Ok(())
}

/// All update-path state of one bin.
#[derive(Debug, Clone)]
pub struct BinState {
    wpe: Vec<WpeState>,
    sep: SeparationState,
    xbar: Vec<C64>,
    z: Vec<Vec<C64>>,
    /// `q_n^H z_n` with the previous filters.
    y_prior: Vec<C64>,
    /// Projected output with the refreshed filters.
    y_post: Vec<C64>,
    filter: ComposedFilter,
}

impl AsRef<ComposedFilter> for BinState {
    fn as_ref(&self) -> &ComposedFilter {
        &self.filter
    }
}

impl BinState {
    fn new(cfg: &CbfConfig) -> Self {
        let (n, m) = (cfg.sources, cfg.channels);
        let taps = cfg.dereverb.map_or(0, |d| d.order * m);
        let wpe = match &cfg.dereverb {
            Some(d) => (0..n).map(|_| WpeState::new(taps, m, d.rho)).collect(),
            None => Vec::new(),
        };
        Self {
            wpe,
            sep: SeparationState::new(n, m),
            xbar: vec![ZERO; taps],
            z: vec![vec![ZERO; m]; n],
            y_prior: vec![ZERO; n],
            y_post: vec![ZERO; n],
            filter: ComposedFilter::identity(n, m, cfg.lags()),
        }
    }

    pub fn wpe(&self, n: usize) -> &WpeState {
        &self.wpe[n]
    }

    pub fn wpe_mut(&mut self, n: usize) -> &mut WpeState {
        &mut self.wpe[n]
    }

    pub fn separation(&self) -> &SeparationState {
        &self.sep
    }

    pub fn separation_mut(&mut self) -> &mut SeparationState {
        &mut self.sep
    }

    pub fn filter(&self) -> &ComposedFilter {
        &self.filter
    }

    /// Estimate step: no state other than scratch buffers changes.
    fn estimate(&mut self, x: &[C64], dl: &DelayLine, f: usize) {
        if !self.wpe.is_empty() {
            dl.build_xbar(f, &mut self.xbar);
        }
        for n in 0..self.y_prior.len() {
            let mut z = std::mem::take(&mut self.z[n]);
            match self.wpe.get(n) {
                Some(w) => w.dereverberate(x, &self.xbar, &mut z),
                None => z.copy_from_slice(x),
            }
            self.y_prior[n] = self.sep.separate(n, &z);
            self.z[n] = z;
        }
    }

    fn update(&mut self, x: &[C64], sigma: &[f64], cfg: &CbfConfig, at: Coord) -> Result<()> {
        let alpha = cfg.separation.alpha;
        for n in 0..sigma.len() {
            let mut z = std::mem::take(&mut self.z[n]);
            match (&cfg.dereverb, self.wpe.get_mut(n)) {
                (Some(d), Some(w)) => {
                    w.update(x, &self.xbar, sigma[n], d.beta, Coord { source: n, ..at })?;
                    w.dereverberate(x, &self.xbar, &mut z);
                }
                _ => z.copy_from_slice(x),
            }
            update_covariance(self.sep.covariance_mut(n), &z, sigma[n], alpha);
            self.z[n] = z;
        }
        self.sep.iss_sweep(cfg.separation.iss_sweeps, at.bin)?;
        let scales = self.sep.projection_back(cfg.reference)?;
        let g: Vec<&ComplexMatrix> = self.wpe.iter().map(|w| w.filter()).collect();
        let lags = std::mem::take(&mut self.filter.lags);
        compose_filters(&g, self.sep.separation_matrix(), Some(&scales), &lags, &mut self.filter)?;
        for n in 0..sigma.len() {
            self.y_post[n] = scales[n] * self.sep.separate(n, &self.z[n]);
        }
        Ok(())
    }
}

/// Per-frame outputs across bins, source-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEstimates {
    pub index: u64,
    /// `q_n^H z_n` with the filters held before this frame.
    pub prior: Vec<Vec<C64>>,
    /// Projection-back scaled output of the refreshed filters.
    pub post: Vec<Vec<C64>>,
    pub sigma: Vec<f64>,
}

/// Complete update-path state.
#[derive(Debug, Clone)]
pub struct CbfState {
    cfg: CbfConfig,
    bins: Vec<BinState>,
    delay_line: DelayLine,
    floor: VarianceFloor,
    frames: u64,
    sigma: Vec<f64>,
}

impl CbfState {
    pub fn new(cfg: CbfConfig) -> Result<Self> {
        cfg.validate()?;
        let bins = (0..cfg.num_bins()).map(|_| BinState::new(&cfg)).collect();
        let delay_line = match &cfg.dereverb {
            Some(d) => DelayLine::new(d.delay, d.order, cfg.channels),
            None => DelayLine::new(1, 0, cfg.channels),
        };
        Ok(Self {
            cfg,
            bins,
            delay_line,
            floor: VarianceFloor::default(),
            frames: 0,
            sigma: vec![0.0; cfg.sources],
        })
    }

    pub fn config(&self) -> &CbfConfig {
        &self.cfg
    }

    pub fn frames_processed(&self) -> u64 {
        self.frames
    }

    pub fn bins(&self) -> &[BinState] {
        &self.bins
    }

    pub fn bin_mut(&mut self, f: usize) -> &mut BinState {
        &mut self.bins[f]
    }

    /// Source variances of the last processed frame.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Run the full update for the next frame. Frames must arrive in order.
    pub fn process_frame(&mut self, x: &SpectrumFrame) -> Result<()> {
        let cfg = self.cfg;
        if x.index() != self.frames {
            return Err(Error::invalid(format!(
                "frame {} arrived, expected {}",
                x.index(),
                self.frames
            )));
        }
        if x.channels() != cfg.channels || x.num_bins() != cfg.num_bins() {
            return Err(Error::dims("frame shape does not match the beamformer"));
        }

        let dl = &self.delay_line;
        par::for_each_indexed(&mut self.bins, cfg.parallel, |f, b| b.estimate(x.bin(f), dl, f));

        // Cross-bin reduction, always in bin order.
        let nb = cfg.num_bins();
        let power = (0..cfg.channels)
            .map(|m| two_sided_energy((0..nb).map(|f| x.bin(f)[m].norm_sqr()), nb))
            .sum::<f64>()
            / (cfg.channels * cfg.frame_len) as f64;
        self.floor.observe(power);
        let floor = self.floor.value();
        for n in 0..cfg.sources {
            let y: Vec<C64> = self.bins.iter().map(|b| b.y_prior[n]).collect();
            self.sigma[n] = estimate_variance(&y, cfg.frame_len, floor);
        }

        let sigma = &self.sigma;
        let frame = self.frames;
        let results = par::map_indexed(&mut self.bins, cfg.parallel, |f, b| {
            b.update(x.bin(f), sigma, &cfg, Coord { frame, bin: f, source: 0 })
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;

        if cfg.dereverb.is_some() {
            self.delay_line.push(x.clone());
        }
        self.frames += 1;
        Ok(())
    }

    /// Estimates of the last processed frame.
    pub fn estimates(&self) -> FrameEstimates {
        let n = self.cfg.sources;
        FrameEstimates {
            index: self.frames.saturating_sub(1),
            prior: (0..n).map(|s| self.bins.iter().map(|b| b.y_prior[s]).collect()).collect(),
            post: (0..n).map(|s| self.bins.iter().map(|b| b.y_post[s]).collect()).collect(),
            sigma: self.sigma.clone(),
        }
    }

    /// Output of source `n` in bin `f` with the refreshed filters.
    #[inline]
    pub fn post_estimate(&self, n: usize, f: usize) -> C64 {
        self.bins[f].y_post[n]
    }
}

/// Forgetting-weighted negative log-likelihood after frame `i = y.len()-1`:
/// `-2 sum_f ln|det Q(f)| + sum_{i'} beta^(i-i') sum_{n,f} (ln sigma_n + |Y|^2/sigma_n)
/// / sum_{i'} beta^(i-i')`.
///
/// `y[i'][n][f]`, `sigma[i'][n]`, `q[f]`. A test oracle; the runtime never
/// keeps the history.
pub fn evaluate_cost(
    y: &[Vec<Vec<C64>>],
    sigma: &[Vec<f64>],
    q: &[ComplexMatrix],
    beta: f64,
    sigma_floor: f64,
) -> Result<f64> {
    if y.len() != sigma.len() || y.is_empty() {
        return Err(Error::dims("estimate and variance histories differ"));
    }
    let last = y.len() - 1;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (yi, si)) in y.iter().zip(sigma).enumerate() {
        let w = beta.powi((last - i) as i32);
        den += w;
        for (yn, &s) in yi.iter().zip(si) {
            if s < sigma_floor {
                return Err(Error::invalid(format!("variance {s:e} below floor")));
            }
            num += w * yn.iter().map(|v| s.ln() + v.norm_sqr() / s).sum::<f64>();
        }
    }
    let mut logdet = 0.0;
    for qf in q {
        logdet += qf.determinant()?.norm().ln();
    }
    Ok(-2.0 * logdet + num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rnd(rng: &mut ChaCha8Rng) -> C64 {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn cfg(frame_len: usize, dereverb: Option<DereverbConfig>) -> CbfConfig {
        CbfConfig {
            sources: 2,
            channels: 2,
            frame_len,
            dereverb,
            separation: SeparationConfig {
                alpha: 0.99,
                iss_sweeps: 1,
            },
            reference: 0,
            parallel: false,
        }
    }

    fn wpe_cfg(delay: usize, order: usize) -> DereverbConfig {
        DereverbConfig {
            delay,
            order,
            beta: 0.999,
            rho: 1e3,
        }
    }

    fn random_frames(rng: &mut ChaCha8Rng, count: usize, nb: usize) -> Vec<SpectrumFrame> {
        (0..count)
            .map(|i| {
                let mut bins: Vec<C64> = (0..nb * 2).map(|_| rnd(rng)).collect();
                for m in 0..2 {
                    bins[m].im = 0.0;
                    bins[(nb - 1) * 2 + m].im = 0.0;
                }
                SpectrumFrame::new(i as u64, 2, bins).unwrap()
            })
            .collect()
    }

    #[test]
    fn compose_cases() {
        let q = ComplexMatrix::from_rows(2, 2, vec![c(1.0, 0.5), c(0.2, 0.0), c(0.0, -1.0), c(0.7, 0.1)])
            .unwrap();
        let g0 = ComplexMatrix::zeros(4, 2);
        let lags = [0, 2, 3];
        let mut out = ComposedFilter::identity(2, 2, lags.to_vec());
        compose_filters(&[&g0, &g0], &q, None, &lags, &mut out).unwrap();
        assert_eq!(out.taps[0], q);
        assert!(out.taps[1..].iter().all(|t| t.max_abs() == 0.0));

        let g = ComplexMatrix::from_rows(1, 1, vec![c(0.3, -0.4)]).unwrap();
        let q1 = ComplexMatrix::from_rows(1, 1, vec![c(2.0, 1.0)]).unwrap();
        let mut out = ComposedFilter::identity(1, 1, vec![0, 1]);
        compose_filters(&[&g], &q1, None, &[0, 1], &mut out).unwrap();
        let expect = -g.get(0, 0).conj() * q1.get(0, 0);
        assert!((out.taps[1].get(0, 0) - expect).norm() < 1e-15);

        let bad = ComplexMatrix::zeros(3, 2);
        assert!(matches!(
            compose_filters(&[&bad, &bad], &q, None, &lags, &mut out),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn composition_matches_two_stage_filtering() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (d, l, m) = (2, 3, 2);
        let lags: Vec<usize> = std::iter::once(0).chain(d..d + l).collect();
        for _ in 0..100 {
            let g: Vec<ComplexMatrix> = (0..2)
                .map(|_| ComplexMatrix::from_rows(l * m, m, (0..l * m * m).map(|_| rnd(&mut rng)).collect()).unwrap())
                .collect();
            let q = ComplexMatrix::from_rows(2, 2, (0..4).map(|_| rnd(&mut rng)).collect()).unwrap();
            let hist: Vec<Vec<C64>> = (0..d + l).map(|_| (0..m).map(|_| rnd(&mut rng)).collect()).collect();
            let mut filt = ComposedFilter::identity(2, 2, lags.clone());
            let gr: Vec<&ComplexMatrix> = g.iter().collect();
            compose_filters(&gr, &q, None, &lags, &mut filt).unwrap();
            let y = filt.apply(|lag| hist.get(lag).map(|v| v.as_slice()));

            let xbar: Vec<C64> = (0..l).flat_map(|j| hist[d + j].clone()).collect();
            for n in 0..2 {
                let mut w = WpeState::new(l * m, m, 1.0);
                w.set_filter(g[n].clone()).unwrap();
                let mut z = vec![ZERO; m];
                w.dereverberate(&hist[0], &xbar, &mut z);
                let yn: C64 = q.row(n).iter().zip(&z).map(|(a, b)| a * b).sum();
                assert!((y[n] - yn).norm() <= 1e-10 * yn.norm().max(1.0));
            }
        }
    }

    #[test]
    fn first_frame_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = random_frames(&mut rng, 1, 5);
        let mut st = CbfState::new(cfg(8, Some(wpe_cfg(1, 2)))).unwrap();
        st.process_frame(&frames[0]).unwrap();
        let est = st.estimates();
        for f in 0..5 {
            for n in 0..2 {
                assert_eq!(est.prior[n][f], frames[0].bin(f)[n]);
            }
        }
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = random_frames(&mut rng, 2, 5);
        let mut st = CbfState::new(cfg(8, None)).unwrap();
        assert!(matches!(st.process_frame(&frames[1]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn without_dereverb_matches_standalone_iva() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nb = 9;
        let frames = random_frames(&mut rng, 40, nb);
        let mut st = CbfState::new(cfg(16, None)).unwrap();
        let mut sep: Vec<SeparationState> = (0..nb).map(|_| SeparationState::new(2, 2)).collect();
        let mut floor = VarianceFloor::default();
        for fr in &frames {
            st.process_frame(fr).unwrap();
            let power = (0..2)
                .map(|m| two_sided_energy((0..nb).map(|f| fr.bin(f)[m].norm_sqr()), nb))
                .sum::<f64>()
                / 32.0;
            floor.observe(power);
            let sigma: Vec<f64> = (0..2)
                .map(|n| {
                    let y: Vec<C64> = (0..nb).map(|f| sep[f].separate(n, fr.bin(f))).collect();
                    estimate_variance(&y, 16, floor.value())
                })
                .collect();
            for (f, s) in sep.iter_mut().enumerate() {
                for n in 0..2 {
                    update_covariance(s.covariance_mut(n), fr.bin(f), sigma[n], 0.99);
                }
                s.iss_sweep(1, f).unwrap();
            }
            assert_eq!(st.sigma(), &sigma[..]);
            for f in 0..nb {
                assert_eq!(st.bins()[f].separation().separation_matrix(), sep[f].separation_matrix());
            }
        }
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let frames = random_frames(&mut rng, 20, 17);
        let mut a = CbfState::new(cfg(32, Some(wpe_cfg(2, 3)))).unwrap();
        let mut pcfg = cfg(32, Some(wpe_cfg(2, 3)));
        pcfg.parallel = true;
        let mut b = CbfState::new(pcfg).unwrap();
        for fr in &frames {
            a.process_frame(fr).unwrap();
            b.process_frame(fr).unwrap();
            assert_eq!(a.estimates(), b.estimates());
        }
    }

    #[test]
    fn estimate_step_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = random_frames(&mut rng, 6, 5);
        let mut st = CbfState::new(cfg(8, Some(wpe_cfg(1, 2)))).unwrap();
        for fr in &frames[..5] {
            st.process_frame(fr).unwrap();
        }
        let mut b = st.bins[2].clone();
        b.estimate(frames[5].bin(2), &st.delay_line, 2);
        let first = b.y_prior.clone();
        b.estimate(frames[5].bin(2), &st.delay_line, 2);
        assert_eq!(first, b.y_prior);
    }

    #[test]
    fn post_estimate_equals_composed_filter_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames = random_frames(&mut rng, 12, 5);
        let (d, l) = (2, 2);
        let mut st = CbfState::new(cfg(8, Some(wpe_cfg(d, l)))).unwrap();
        for (i, fr) in frames.iter().enumerate() {
            st.process_frame(fr).unwrap();
            for f in 0..5 {
                let y = st.bins[f].filter.apply(|lag| {
                    (lag <= i).then(|| frames[i - lag].bin(f))
                });
                for n in 0..2 {
                    assert!((y[n] - st.post_estimate(n, f)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn cost_cases() {
        let q = vec![ComplexMatrix::identity(2); 3];
        let y = vec![vec![vec![ZERO; 3]; 2]];
        let s = vec![vec![1.0, 1.0]];
        assert_eq!(evaluate_cost(&y, &s, &q, 0.9, 1e-12).unwrap(), 0.0);

        let sig: f64 = 2.5;
        let y = vec![vec![vec![c(sig.sqrt(), 0.0)]]];
        let q1 = vec![ComplexMatrix::identity(1)];
        let v = evaluate_cost(&y, &[vec![sig]], &q1, 0.9, 1e-12).unwrap();
        assert!((v - (sig.ln() + 1.0)).abs() < 1e-14);
        assert!(evaluate_cost(&y, &[vec![1e-20]], &q1, 0.9, 1e-12).is_err());
    }
}
