//! Online multichannel linear-prediction dereverberation (WPE) with a
//! recursive inverse-covariance update.
//!
//! For each source `n` and bin `f` the state holds a prediction filter `G`
//! (`ML x M`) and the inverse weighted covariance `R^-1` (`ML x ML`) of the
//! stacked delayed observations
//! `xbar(i) = [x(i-D); x(i-D-1); ...; x(i-D-L+1)]`.
//!
//! Per frame, with `u = R^-1 xbar`:
//!
//! ```text
//! k     = u / (beta*sigma + xbar^H u)
//! R^-1 <- (R^-1 - k u^H) / beta
//! z     = x - G^H xbar          (prediction error with the previous G)
//! G    <- G + k z^H
//! ```

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, C64, ZERO};
use crate::stft::SpectrumFrame;

/// Default initial scale of the inverse covariance.
pub const DEFAULT_RHO: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DereverbConfig {
    /// Prediction delay in frames.
    pub delay: usize,
    /// Number of prediction taps in frames.
    pub order: usize,
    /// Forgetting factor.
    pub beta: f64,
    /// `R^-1` starts as `rho * I`.
    pub rho: f64,
}

impl DereverbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delay < 1 || self.order < 1 {
            return Err(Error::invalid(format!(
                "prediction delay {} and order {} must both be >= 1",
                self.delay, self.order
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("beta {} not in (0, 1]", self.beta)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("rho {} must be positive", self.rho)));
        }
        Ok(())
    }

    /// Frames of history the delay line must retain.
    pub fn history_frames(&self) -> usize {
        self.delay + self.order - 1
    }
}

/// Where an update happened, for error reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Coord {
    pub frame: u64,
    pub bin: usize,
    pub source: usize,
}

impl Coord {
    pub(crate) fn diverged(self, what: impl Into<String>) -> Error {
        Error::NumericalDivergence {
            frame: self.frame,
            bin: self.bin,
            source_index: self.source,
            what: what.into(),
        }
    }
}

/// Past observation frames shared by every source (only `G` and `R^-1`
/// differ between sources).
#[derive(Debug, Clone)]
pub struct DelayLine {
    delay: usize,
    order: usize,
    channels: usize,
    /// Most recent frame at the front.
    frames: VecDeque<SpectrumFrame>,
}

impl DelayLine {
    pub fn new(delay: usize, order: usize, channels: usize) -> Self {
        Self {
            delay,
            order,
            channels,
            frames: VecDeque::with_capacity(delay + order),
        }
    }

    pub fn len_taps(&self) -> usize {
        self.order * self.channels
    }

    /// Record the frame just processed.
    pub fn push(&mut self, frame: SpectrumFrame) {
        let keep = (self.delay + self.order).saturating_sub(1);
        if keep == 0 {
            return;
        }
        self.frames.push_front(frame);
        self.frames.truncate(keep);
    }

    /// Stack `x(i-D, f) .. x(i-D-L+1, f)` into `out` (length `L*M`),
    /// zero-filling frames that predate the stream.
    pub fn build_xbar(&self, f: usize, out: &mut [C64]) {
        debug_assert_eq!(out.len(), self.len_taps());
        let m = self.channels;
        for j in 0..self.order {
            // frames[0] is x(i-1)
            let dst = &mut out[j * m..(j + 1) * m];
            match self.frames.get(self.delay + j - 1) {
                Some(fr) => dst.copy_from_slice(fr.bin(f)),
                None => dst.fill(ZERO),
            }
        }
    }
}

/// Dereverberation state of one source in one bin.
#[derive(Debug, Clone)]
pub struct WpeState {
    g: ComplexMatrix,
    rinv: ComplexMatrix,
    u: Vec<C64>,
    z: Vec<C64>,
}

impl WpeState {
    pub fn new(taps: usize, channels: usize, rho: f64) -> Self {
        Self {
            g: ComplexMatrix::zeros(taps, channels),
            rinv: ComplexMatrix::scaled_identity(taps, rho),
            u: vec![ZERO; taps],
            z: vec![ZERO; channels],
        }
    }

    pub fn filter(&self) -> &ComplexMatrix {
        &self.g
    }

    pub fn inverse_covariance(&self) -> &ComplexMatrix {
        &self.rinv
    }

    pub fn set_filter(&mut self, g: ComplexMatrix) -> Result<()> {
        if g.rows() != self.g.rows() || g.cols() != self.g.cols() {
            return Err(Error::dims("replacement prediction filter shape"));
        }
        self.g = g;
        Ok(())
    }

    /// `z = x - G^H xbar` with the filter currently held.
    #[inline]
    pub fn dereverberate(&self, x: &[C64], xbar: &[C64], z: &mut [C64]) {
        z.copy_from_slice(x);
        for (j, &xb) in xbar.iter().enumerate() {
            if xb == ZERO {
                continue;
            }
            for (zm, gjm) in z.iter_mut().zip(self.g.row(j)) {
                *zm -= gjm.conj() * xb;
            }
        }
    }

    /// One recursive update. `sigma` must already be floored by the caller.
    pub fn update(
        &mut self,
        x: &[C64],
        xbar: &[C64],
        sigma: f64,
        beta: f64,
        at: Coord,
    ) -> Result<()> {
        let n = xbar.len();
        debug_assert_eq!(n, self.rinv.rows());
        debug_assert!(self.rinv.hermitian_defect() <= 1e-10);

        // u = R^-1 xbar
        let mut quad = 0.0;
        for a in 0..n {
            let row = self.rinv.row(a);
            let mut acc = ZERO;
            for (r, xb) in row.iter().zip(xbar) {
                acc += r * xb;
            }
            self.u[a] = acc;
            quad += (xbar[a].conj() * acc).re;
        }
        let denom = beta * sigma + quad;
        if !(denom.is_finite() && denom > 0.0) {
            return Err(at.diverged(format!("gain denominator {denom:e}")));
        }
        let inv_denom = 1.0 / denom;
        let inv_beta = 1.0 / beta;

        // R^-1 <- (R^-1 - u u^H / denom) / beta, upper triangle mirrored.
        for a in 0..n {
            let ua = self.u[a] * inv_denom;
            let d = (self.rinv.get(a, a).re - (ua * self.u[a].conj()).re) * inv_beta;
            self.rinv.set(a, a, C64::new(d, 0.0));
            for b in a + 1..n {
                let v = (self.rinv.get(a, b) - ua * self.u[b].conj()) * inv_beta;
                self.rinv.set(a, b, v);
                self.rinv.set(b, a, v.conj());
            }
        }

        // a-priori prediction error with the previous G
        let mut z = std::mem::take(&mut self.z);
        self.dereverberate(x, xbar, &mut z);
        if z.iter().any(|v| !v.is_finite()) {
            self.z = z;
            return Err(at.diverged("non-finite prediction error"));
        }
        // G <- G + k z^H
        for a in 0..n {
            let ka = self.u[a] * inv_denom;
            if ka == ZERO {
                continue;
            }
            for (g, zm) in self.g.row_mut(a).iter_mut().zip(&z) {
                *g += ka * zm.conj();
            }
        }
        self.z = z;
        if (0..n).any(|a| !self.rinv.get(a, a).re.is_finite()) {
            return Err(at.diverged("non-finite inverse covariance"));
        }
        Ok(())
    }
}

/// Direct-form statistics `R <- beta R + xbar xbar^H / sigma` and
/// `P <- beta P + xbar x^H / sigma`. Used to check the recursion.
pub fn accumulate_direct(
    r: &mut ComplexMatrix,
    p: &mut ComplexMatrix,
    xbar: &[C64],
    x: &[C64],
    sigma: f64,
    beta: f64,
    sigma_floor: f64,
) -> Result<()> {
    if !(sigma >= sigma_floor) {
        return Err(Error::invalid(format!(
            "variance {sigma:e} below floor {sigma_floor:e}"
        )));
    }
    let n = xbar.len();
    if r.rows() != n || r.cols() != n || p.rows() != n || p.cols() != x.len() {
        return Err(Error::dims("direct-form statistics shape"));
    }
    let inv = 1.0 / sigma;
    for a in 0..n {
        for b in 0..n {
            let v = r.get(a, b) * beta + xbar[a] * xbar[b].conj() * inv;
            r.set(a, b, v);
        }
        for (m, xm) in x.iter().enumerate() {
            let v = p.get(a, m) * beta + xbar[a] * xm.conj() * inv;
            p.set(a, m, v);
        }
    }
    Ok(())
}
