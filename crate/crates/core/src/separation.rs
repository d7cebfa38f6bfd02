//! Per-bin independent vector analysis with iterative source steering.
//!
//! The separation matrix `Q` is stored with rows `q_n^H`, so that
//! `Y_n = (row n of Q) . z_n`. Each source keeps its own weighted covariance
//! `U_n = alpha U_n + (1 - alpha) z_n z_n^H / sigma_n` of its dereverberated
//! observation. An ISS sweep applies, for `k = 0..N`,
//! `Q <- Q - v_k q_k^H` with
//!
//! ```text
//! v_kk = 1 - (q_k^H U_k q_k)^(-1/2)
//! v_nk = (q_n^H U_n q_k) / (q_k^H U_n q_k)      n != k
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, C64, ZERO};

/// Absolute lower bound on any source variance.
pub const SIGMA_FLOOR_ABS: f64 = 1e-12;
/// Variance floor relative to the running mean input frame power.
pub const SIGMA_FLOOR_REL: f64 = 1e-8;
/// `q_k^H U_n q_k` below this is a degenerate steering direction.
pub const DEGENERATE_QUAD: f64 = 1e-12;
/// `|det Q|` must stay above this.
pub const MIN_ABS_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig {
    pub alpha: f64,
    pub iss_sweeps: usize,
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if self.iss_sweeps == 0 {
            return Err(Error::invalid("at least one ISS sweep per frame"));
        }
        Ok(())
    }
}

/// Frame-level variance floor tracking the running mean input power.
#[derive(Debug, Clone, Default)]
pub struct VarianceFloor {
    frames: u64,
    mean_power: f64,
}

impl VarianceFloor {
    pub fn observe(&mut self, frame_power: f64) {
        self.frames += 1;
        self.mean_power += (frame_power - self.mean_power) / self.frames as f64;
    }

    pub fn value(&self) -> f64 {
        (SIGMA_FLOOR_REL * self.mean_power).max(SIGMA_FLOOR_ABS)
    }
}

/// Two-sided `sum_f |Y(f)|^2` from a one-sided spectrum (`F/2 + 1` bins).
pub fn two_sided_energy<I>(onesided: I, num_bins: usize) -> f64
where
    I: IntoIterator<Item = f64>,
{
    onesided
        .into_iter()
        .enumerate()
        .map(|(f, e)| if f == 0 || f + 1 == num_bins { e } else { 2.0 * e })
        .sum()
}

/// `max(sum_f |Y_n(f)|^2 / F, floor)` over all `F` bins, reconstructing the
/// negative frequencies by conjugate symmetry.
pub fn estimate_variance(y: &[C64], frame_len: usize, floor: f64) -> f64 {
    let energy = two_sided_energy(y.iter().map(|v| v.norm_sqr()), y.len());
    (energy / frame_len as f64).max(floor)
}

/// `U <- alpha U + (1 - alpha) z z^H / sigma`, kept exactly Hermitian.
pub fn update_covariance(u: &mut ComplexMatrix, z: &[C64], sigma: f64, alpha: f64) {
    let m = z.len();
    debug_assert_eq!(u.rows(), m);
    let w = (1.0 - alpha) / sigma;
    for a in 0..m {
        let d = alpha * u.get(a, a).re + w * z[a].norm_sqr();
        u.set(a, a, C64::new(d, 0.0));
        for b in a + 1..m {
            let v = u.get(a, b) * alpha + z[a] * z[b].conj() * w;
            u.set(a, b, v);
            u.set(b, a, v.conj());
        }
    }
}

/// `r_a U r_b^H` for row vectors `r_a`, `r_b` (i.e. `q_a^H U q_b`).
#[inline]
fn row_form(ra: &[C64], u: &ComplexMatrix, rb: &[C64]) -> C64 {
    let mut acc = ZERO;
    for (i, &x) in ra.iter().enumerate() {
        if x == ZERO {
            continue;
        }
        let mut inner = ZERO;
        for (j, &y) in rb.iter().enumerate() {
            inner += u.get(i, j) * y.conj();
        }
        acc += x * inner;
    }
    acc
}

/// Separation state of one bin.
#[derive(Debug, Clone)]
pub struct SeparationState {
    q: ComplexMatrix,
    u: Vec<ComplexMatrix>,
    row_k: Vec<C64>,
    steer: Vec<C64>,
}

impl SeparationState {
    pub fn new(sources: usize, channels: usize) -> Self {
        let mut q = ComplexMatrix::zeros(sources, channels);
        for n in 0..sources.min(channels) {
            q.set(n, n, C64::new(1.0, 0.0));
        }
        Self {
            q,
            u: vec![ComplexMatrix::identity(channels); sources],
            row_k: vec![ZERO; channels],
            steer: vec![ZERO; sources],
        }
    }

    pub fn from_parts(q: ComplexMatrix, u: Vec<ComplexMatrix>) -> Result<Self> {
        if u.len() != q.rows() || u.iter().any(|m| m.rows() != q.cols() || m.cols() != q.cols()) {
            return Err(Error::dims("separation state shape"));
        }
        let (n, m) = (q.rows(), q.cols());
        Ok(Self {
            q,
            u,
            row_k: vec![ZERO; m],
            steer: vec![ZERO; n],
        })
    }

    pub fn sources(&self) -> usize {
        self.q.rows()
    }

    pub fn separation_matrix(&self) -> &ComplexMatrix {
        &self.q
    }

    pub fn covariance(&self, n: usize) -> &ComplexMatrix {
        &self.u[n]
    }

    pub fn covariance_mut(&mut self, n: usize) -> &mut ComplexMatrix {
        &mut self.u[n]
    }

    /// `Y_n = q_n^H z`.
    #[inline]
    pub fn separate(&self, n: usize, z: &[C64]) -> C64 {
        self.q.row(n).iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// Steering coefficients `v_k` for the current state.
    pub fn steering_vector(&self, k: usize, bin: usize) -> Result<Vec<C64>> {
        let rk = self.q.row(k);
        (0..self.sources())
            .map(|n| {
                let den = row_form(rk, &self.u[n], rk).re;
                if !(den >= DEGENERATE_QUAD) {
                    return Err(Error::DegenerateDirection {
                        source_index: n,
                        step: k,
                        bin,
                    });
                }
                Ok(if n == k {
                    C64::new(1.0 - den.sqrt().recip(), 0.0)
                } else {
                    row_form(self.q.row(n), &self.u[n], rk) / den
                })
            })
            .collect()
    }

    /// Apply `Q <- Q - v q_k^H` for a given steering vector.
    pub fn apply_steering(&mut self, k: usize, v: &[C64]) {
        self.row_k.copy_from_slice(self.q.row(k));
        for (n, &vn) in v.iter().enumerate() {
            if vn == ZERO {
                continue;
            }
            for (dst, &src) in self.q.row_mut(n).iter_mut().zip(&self.row_k) {
                *dst -= vn * src;
            }
        }
    }

    /// `sweeps` passes of `k = 0..N` rank-one updates.
    pub fn iss_sweep(&mut self, sweeps: usize, bin: usize) -> Result<()> {
        let order: Vec<usize> = (0..self.sources()).collect();
        self.iss_sweep_ordered(&order, sweeps, bin)
    }

    /// As [`Self::iss_sweep`] with the steering steps taken in `order`.
    pub fn iss_sweep_ordered(&mut self, order: &[usize], sweeps: usize, bin: usize) -> Result<()> {
        let n_src = self.sources();
        for _ in 0..sweeps {
            for &k in order {
                let mut steer = std::mem::take(&mut self.steer);
                steer.clear();
                let rk = self.q.row(k);
                for n in 0..n_src {
                    let den = row_form(rk, &self.u[n], rk).re;
                    if !(den >= DEGENERATE_QUAD) {
                        self.steer = steer;
                        return Err(Error::DegenerateDirection {
                            source_index: n,
                            step: k,
                            bin,
                        });
                    }
                    steer.push(if n == k {
                        C64::new(1.0 - den.sqrt().recip(), 0.0)
                    } else {
                        row_form(self.q.row(n), &self.u[n], rk) / den
                    });
                }
                self.apply_steering(k, &steer);
                self.steer = steer;
            }
        }
        let det = self.q.determinant()?.norm();
        if !(det > MIN_ABS_DET) {
            return Err(Error::DegenerateDirection {
                source_index: 0,
                step: n_src,
                bin,
            });
        }
        Ok(())
    }

    /// Per-source scale restoring each output to its image at `reference`
    /// microphone: entry `(reference, n)` of `Q^-1`.
    pub fn projection_back(&self, reference: usize) -> Result<Vec<C64>> {
        let inv = self.q.inverse()?;
        Ok((0..self.sources()).map(|n| inv.get(reference, n)).collect())
    }

    /// Frame-local auxiliary cost `sum_n q_n^H U_n q_n - 2 ln|det Q|`.
    pub fn surrogate_cost(&self) -> Result<f64> {
        surrogate_cost(&self.q, &self.u)
    }
}

pub fn surrogate_cost(q: &ComplexMatrix, u: &[ComplexMatrix]) -> Result<f64> {
    let quad: f64 = (0..q.rows())
        .map(|n| row_form(q.row(n), &u[n], q.row(n)).re)
        .sum();
    let det = q.determinant()?.norm();
    Ok(quad - 2.0 * det.ln())
}
