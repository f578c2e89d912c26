//! Per-frame forward/backward pass on the polyphase decomposition of the
//! high-resolution grid.
//!
//! Only the stride-`s` lattice of the propagated wave is ever constrained, so
//! the full `sM x sM` transforms are unnecessary. Writing the grid as `s^2`
//! interleaved `M x M` planes `x = s*u + a`, the lattice samples of the
//! propagated wave are
//!
//! ```text
//! psi(s*m) = IDFT_M[ sum_a DFT_M(phi_a) * G_a ](m)
//! G_a(k)   = sum_p K(k + pM) exp(-2 pi i (k + pM) a / (sM)) / (sM)^2
//! ```
//!
//! and the back-propagated correction on plane `a` is
//! `IDFT_M[ DFT_M(delta) * conj(G_a) ]`, where `delta` is the lattice change
//! made by the magnitude projection. Both are exact for the angular-spectrum
//! kernel; evanescent bins, where `K = 0`, receive no correction.
//!
//! Plane spectra are kept transposed (`[l][k]`) so column transforms run on
//! contiguous rows; `G` is stored in the same layout.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::field::PropagationKernel;

type C = Complex64;

/// Unnormalized 1D plans for plane rows (length `M_w`) and columns (`M_h`).
struct PlaneFft {
    mh: usize,
    mw: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl PlaneFft {
    fn new(mh: usize, mw: usize) -> Self {
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(mw);
        let col_fwd = planner.plan_fft_forward(mh);
        let row_inv = planner.plan_fft_inverse(mw);
        let col_inv = planner.plan_fft_inverse(mh);
        let scratch_len = [&row_fwd, &col_fwd, &row_inv, &col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            mh,
            mw,
            row_fwd,
            col_fwd,
            row_inv,
            col_inv,
            scratch_len,
        }
    }

    fn scratch(&self) -> Vec<C> {
        vec![C::default(); self.scratch_len]
    }

    /// `plane` (row-major, clobbered) -> transposed spectrum in `out`.
    fn forward(&self, plane: &mut [C], out: &mut [C], scratch: &mut [C]) {
        self.row_fwd.process_with_scratch(plane, scratch);
        transpose::transpose(plane, out, self.mw, self.mh);
        self.col_fwd.process_with_scratch(out, scratch);
    }

    /// Transposed spectrum (clobbered) -> row-major plane in `out`.
    fn inverse(&self, spectrum: &mut [C], out: &mut [C], scratch: &mut [C]) {
        self.col_inv.process_with_scratch(spectrum, scratch);
        transpose::transpose(spectrum, out, self.mh, self.mw);
        self.row_inv.process_with_scratch(out, scratch);
    }
}

/// Rows handled together when moving between row-major planes and
/// transposed spectra; keeps the strided side cache-line sized.
const TILE: usize = 8;

/// Splits a full `sM_h x sM_w` grid into `s^2` row-major `M_h x M_w` planes,
/// plane index `a_r * s + a_c`.
pub(crate) fn to_planes(grid: &Array2<C>, s: usize) -> Vec<C> {
    let (nh, nw) = grid.dim();
    let (mh, mw) = (nh / s, nw / s);
    let mut out = Vec::with_capacity(nh * nw);
    for ar in 0..s {
        for ac in 0..s {
            for u in 0..mh {
                let row = grid.row(u * s + ar);
                out.extend((0..mw).map(|v| row[v * s + ac]));
            }
        }
    }
    out
}

pub(crate) fn from_planes(planes: &[C], s: usize, mh: usize, mw: usize) -> Array2<C> {
    let mut grid = Array2::zeros((mh * s, mw * s));
    let len = mh * mw;
    for ar in 0..s {
        for ac in 0..s {
            let plane = &planes[(ar * s + ac) * len..][..len];
            for u in 0..mh {
                for v in 0..mw {
                    grid[[u * s + ar, v * s + ac]] = plane[u * mw + v];
                }
            }
        }
    }
    grid
}

/// Result of one frame update.
pub(crate) struct FrameOutcome {
    /// `sum (|psi| - sqrt(I))^2` over the lattice, before the update.
    pub residual: f64,
    pub object_finite: bool,
    pub probe_finite: bool,
}

pub(crate) struct Engine {
    s: usize,
    mh: usize,
    mw: usize,
    /// Row stride of `spectra` and `back`; padded so it is not a power of two.
    ld: usize,
    fft: PlaneFft,
    /// Lattice transfer functions, transposed, one plane per phase.
    g: Vec<C>,
    pub object: Vec<C>,
    pub probe: Vec<C>,
    max_object: f64,
    max_probe: f64,
    /// Row-transformed exit waves, `[a][l][u]`.
    spectra: Vec<C>,
    /// Column-inverted corrections, `[l][a][u]`.
    back: Vec<C>,
    lattice: Vec<C>,
    lattice_t: Vec<C>,
}

fn max_norm_sqr(v: &[C]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max)
}

impl Engine {
    pub fn new(kernel: &PropagationKernel, s: usize, object: &Array2<C>, probe: &Array2<C>) -> Self {
        let (nh, nw) = kernel.dim();
        debug_assert_eq!(object.dim(), (nh, nw));
        debug_assert_eq!(probe.dim(), (nh, nw));
        let (mh, mw) = (nh / s, nw / s);
        let len = mh * mw;
        let k = kernel.values();
        let norm = 1.0 / (nh * nw) as f64;
        let tau = std::f64::consts::TAU;
        let mut g = vec![C::default(); s * s * len];
        for ar in 0..s {
            for ac in 0..s {
                let plane = &mut g[(ar * s + ac) * len..][..len];
                for kr in 0..mh {
                    for kc in 0..mw {
                        let mut acc = C::default();
                        for p in 0..s {
                            let fr = kr + p * mh;
                            for q in 0..s {
                                let fc = kc + q * mw;
                                let kv = k[[fr, fc]];
                                if kv == C::default() {
                                    continue;
                                }
                                let angle = -tau * ((fr * ar) as f64 / nh as f64 + (fc * ac) as f64 / nw as f64);
                                acc += kv * C::from_polar(1.0, angle);
                            }
                        }
                        plane[kc * mh + kr] = acc * norm;
                    }
                }
            }
        }
        let object = to_planes(object, s);
        let probe = to_planes(probe, s);
        let ld = mh + 4;
        Self {
            s,
            mh,
            mw,
            ld,
            fft: PlaneFft::new(mh, mw),
            g,
            max_object: max_norm_sqr(&object),
            max_probe: max_norm_sqr(&probe),
            object,
            probe,
            spectra: vec![C::default(); s * s * mw * ld],
            back: vec![C::default(); s * s * mw * ld],
            lattice: vec![C::default(); len],
            lattice_t: vec![C::default(); len],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.mh * self.mw
    }

    pub fn object_grid(&self) -> Array2<C> {
        from_planes(&self.object, self.s, self.mh, self.mw)
    }

    pub fn probe_grid(&self) -> Array2<C> {
        from_planes(&self.probe, self.s, self.mh, self.mw)
    }

    /// Recomputes the cached maxima after the fields were edited externally.
    pub fn refresh_maxima(&mut self) {
        self.max_object = max_norm_sqr(&self.object);
        self.max_probe = max_norm_sqr(&self.probe);
    }

    pub fn max_object(&self) -> f64 {
        self.max_object
    }

    pub fn max_probe(&self) -> f64 {
        self.max_probe
    }

    /// Where `P(x - t)` for destination plane `a` lives: source plane and
    /// the (row, column) offset into it.
    fn source(&self, a: usize, shift: (i64, i64)) -> (usize, usize, usize) {
        let s = self.s as i64;
        let dr = (a / self.s) as i64 - shift.1;
        let dc = (a % self.s) as i64 - shift.0;
        (
            (dr.rem_euclid(s) * s + dc.rem_euclid(s)) as usize,
            dr.div_euclid(s).rem_euclid(self.mh as i64) as usize,
            dc.div_euclid(s).rem_euclid(self.mw as i64) as usize,
        )
    }

    /// Lattice samples of the propagated exit wave for a probe shifted by
    /// `shift = (dx, dy)` high-resolution samples, left in `self.lattice`.
    fn forward(&mut self, shift: (i64, i64)) {
        let (s, mh, mw, len) = (self.s, self.mh, self.mw, self.plane_len());
        let sources: Vec<_> = (0..s * s).map(|a| self.source(a, shift)).collect();
        let (probe, object, fft) = (&self.probe, &self.object, &self.fft);

        // exit wave per plane, row transforms, stored transposed
        let ld = self.ld;
        self.spectra.par_chunks_mut(mw * ld).enumerate().for_each_init(
            || (fft.scratch(), vec![C::default(); TILE * mw]),
            |(scratch, tile), (a, spectrum)| {
                let (b, qr, qc) = sources[a];
                let src = &probe[b * len..][..len];
                let obj = &object[a * len..][..len];
                for u0 in (0..mh).step_by(TILE) {
                    let rows = TILE.min(mh - u0);
                    for r in 0..rows {
                        let u = u0 + r;
                        let p = &src[((u + qr) % mh) * mw..][..mw];
                        let o = &obj[u * mw..][..mw];
                        let dst = &mut tile[r * mw..][..mw];
                        for v in 0..mw - qc {
                            dst[v] = o[v] * p[v + qc];
                        }
                        for v in mw - qc..mw {
                            dst[v] = o[v] * p[v + qc - mw];
                        }
                    }
                    fft.row_fwd.process_with_scratch(&mut tile[..rows * mw], scratch);
                    for l in 0..mw {
                        let dst = &mut spectrum[l * ld + u0..][..rows];
                        for (r, d) in dst.iter_mut().enumerate() {
                            *d = tile[r * mw + l];
                        }
                    }
                }
            },
        );

        // column transforms, weighted sum over planes
        let (spectra, g) = (&self.spectra, &self.g);
        self.lattice_t.par_chunks_mut(mh).enumerate().for_each_init(
            || (fft.scratch(), vec![C::default(); mh]),
            |(scratch, col), (l, acc)| {
                acc.iter_mut().for_each(|v| *v = C::default());
                for a in 0..s * s {
                    col.copy_from_slice(&spectra[(a * mw + l) * ld..][..mh]);
                    fft.col_fwd.process_with_scratch(col, scratch);
                    for ((dst, f), gv) in acc.iter_mut().zip(col.iter()).zip(&g[a * len + l * mh..][..mh]) {
                        *dst += f * gv;
                    }
                }
            },
        );
        let mut scratch = self.fft.scratch();
        self.fft.inverse(&mut self.lattice_t, &mut self.lattice, &mut scratch);
    }

    /// Propagated exit wave at the lattice for a probe shift, without updating.
    #[cfg(test)]
    pub fn lattice_wave(&mut self, shift: (i64, i64)) -> Array2<C> {
        self.forward(shift);
        Array2::from_shape_vec((self.mh, self.mw), self.lattice.clone()).expect("lattice shape")
    }

    /// One rPIE step for a single frame. `sqrt_intensity` is the measured
    /// amplitude, row-major `M_h x M_w`.
    pub fn update(
        &mut self,
        shift: (i64, i64),
        sqrt_intensity: &[f64],
        alpha_object: f64,
        alpha_probe: f64,
        update_probe: bool,
    ) -> FrameOutcome {
        let (s, mh, mw, len) = (self.s, self.mh, self.mw, self.plane_len());
        self.forward(shift);

        let mut residual = 0.0;
        for (psi, &amp) in self.lattice.iter_mut().zip(sqrt_intensity) {
            let mag = psi.norm();
            residual += (mag - amp) * (mag - amp);
            let projected = if mag < 1e-12 { C::new(amp, 0.0) } else { *psi * (amp / mag) };
            *psi = projected - *psi;
        }
        let mut scratch = self.fft.scratch();
        self.fft.forward(&mut self.lattice, &mut self.lattice_t, &mut scratch);

        // column inverse transforms of the back-propagated corrections
        let (delta, g, fft) = (&self.lattice_t, &self.g, &self.fft);
        let ld = self.ld;
        self.back.par_chunks_mut(s * s * ld).enumerate().for_each_init(
            || fft.scratch(),
            |scratch, (l, block)| {
                let d = &delta[l * mh..][..mh];
                for (a, col) in block.chunks_mut(ld).enumerate() {
                    let col = &mut col[..mh];
                    for ((dst, dv), gv) in col.iter_mut().zip(d).zip(&g[a * len + l * mh..][..mh]) {
                        *dst = dv * gv.conj();
                    }
                    fft.col_inv.process_with_scratch(col, scratch);
                }
            },
        );

        // Row inverse transforms fused with the update. Both updates read the
        // pre-update O and shifted P; every pixel of O and P is written
        // exactly once, so the new maxima are exact.
        let (max_o, max_p) = (self.max_object, self.max_probe);
        let sources: Vec<_> = (0..s * s).map(|a| self.source(a, shift)).collect();
        let back = &self.back;
        let mut probe_planes: Vec<Option<&mut [C]>> = self.probe.chunks_mut(len).map(Some).collect();
        let mut jobs = Vec::with_capacity(s * s);
        for (a, obj) in self.object.chunks_mut(len).enumerate() {
            let (b, qr, qc) = sources[a];
            let probe = probe_planes[b].take().expect("shift permutes planes");
            jobs.push((a, obj, probe, qr, qc));
        }
        let (new_max_o, new_max_p, object_finite, probe_finite) = jobs
            .into_par_iter()
            .map_init(
                || (fft.scratch(), vec![C::default(); TILE * mw]),
                |(scratch, tile), (a, obj, probe, qr, qc)| {
                    let mut mo: f64 = 0.0;
                    let mut mp: f64 = 0.0;
                    let mut fo = true;
                    let mut fp = true;
                    for u0 in (0..mh).step_by(TILE) {
                        let rows = TILE.min(mh - u0);
                        for l in 0..mw {
                            let src = &back[(l * s * s + a) * ld + u0..][..rows];
                            for (r, v) in src.iter().enumerate() {
                                tile[r * mw + l] = *v;
                            }
                        }
                        fft.row_inv.process_with_scratch(&mut tile[..rows * mw], scratch);
                        for r in 0..rows {
                            let u = u0 + r;
                            let dphi = &tile[r * mw..][..mw];
                            let o_row = &mut obj[u * mw..][..mw];
                            let p_row = &mut probe[((u + qr) % mh) * mw..][..mw];
                            for v in 0..mw {
                                let c = if v + qc >= mw { v + qc - mw } else { v + qc };
                                let (o, p, d) = (o_row[v], p_row[c], dphi[v]);
                                let p2 = p.norm_sqr();
                                let o2 = o.norm_sqr();
                                let no = o + p.conj() * d * ((1.0 - alpha_object) * p2 + alpha_object * max_p).recip();
                                o_row[v] = no;
                                let no2 = no.norm_sqr();
                                fo &= no2.is_finite();
                                mo = mo.max(no2);
                                if update_probe {
                                    let np = p + o.conj() * d * ((1.0 - alpha_probe) * o2 + alpha_probe * max_o).recip();
                                    p_row[c] = np;
                                    let np2 = np.norm_sqr();
                                    fp &= np2.is_finite();
                                    mp = mp.max(np2);
                                }
                            }
                        }
                    }
                    (mo, mp, fo, fp)
                },
            )
            .reduce(
                || (0.0, 0.0, true, true),
                |x, y| (x.0.max(y.0), x.1.max(y.1), x.2 && y.2, x.3 && y.3),
            );
        self.max_object = new_max_o;
        if update_probe {
            self.max_probe = new_max_p;
        }
        FrameOutcome {
            residual,
            object_finite,
            probe_finite,
        }
    }
}
