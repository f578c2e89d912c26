//! Frame-to-frame shift estimation by phase correlation.
//!
//! Frames are mean-subtracted and Hann-windowed before transforming, since
//! they are not periodic and the raw DFT would correlate the edges. The peak
//! found on the integer grid is refined with a 3x3 parabola and then by
//! evaluating the correlation directly at sub-pixel offsets.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FrameStack;
use crate::error::{Error, Result};
use crate::field::{signed_index, Dft2Pair};
use crate::trajectory::{ScanTrajectory, MIN_RELIABLE_SHARPNESS};

const MAGNITUDE_FLOOR: f64 = 1e-12;

/// Cross-power bins beyond this fraction of the Nyquist radius are dropped.
/// Point-sampled speckle is aliased, and the aliased high-frequency bins pull
/// sub-pixel estimates towards whole pixels.
const PASSBAND: f64 = 0.7;

/// Largest fraction of frame pairs allowed to fall below the sharpness gate.
pub const MAX_UNRELIABLE_FRACTION: f64 = 0.25;

/// Location and quality of a phase-correlation peak. Offsets are `[x, y]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationPeak {
    pub integer: [i64; 2],
    pub subpixel: [f64; 2],
    /// Peak value over the mean absolute correlation.
    pub sharpness: f64,
}

impl CorrelationPeak {
    pub fn shift(&self) -> [f64; 2] {
        [
            self.integer[0] as f64 + self.subpixel[0],
            self.integer[1] as f64 + self.subpixel[1],
        ]
    }

    pub fn is_reliable(&self) -> bool {
        self.sharpness >= MIN_RELIABLE_SHARPNESS
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegistrationMode {
    /// Correlate consecutive frames and accumulate.
    #[default]
    Chain,
    /// Correlate every frame against frame 0.
    Reference,
}

impl std::str::FromStr for RegistrationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(Self::Chain),
            "reference" | "to-reference" => Ok(Self::Reference),
            other => Err(Error::invalid(format!("unknown registration mode `{other}`"))),
        }
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / n as f64).cos())
        .collect()
}

/// Windowed spectrum of one frame.
struct Prepared {
    spectrum: Vec<Complex64>,
}

fn prepare(frame: &Array2<f64>, plans: &mut Dft2Pair) -> Result<Prepared> {
    if frame.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("cannot correlate an all-zero frame".into()));
    }
    let (rows, cols) = frame.dim();
    let (wr, wc) = (hann(rows), hann(cols));
    let mean = frame.mean().unwrap_or(0.0);
    let mut spectrum: Vec<Complex64> = frame
        .indexed_iter()
        .map(|((r, c), &v)| Complex64::new((v - mean) * wr[r] * wc[c], 0.0))
        .collect();
    plans.forward.process_unscaled(&mut spectrum);
    Ok(Prepared { spectrum })
}

/// Quadratic least-squares fit on the 3x3 neighbourhood; returns the vertex
/// offset `[x, y]`. Falls back to separable 1D fits when the 2D surface is not
/// a maximum, and clamps into the open unit interval.
fn parabolic_offset(n: &[[f64; 3]; 3]) -> [f64; 2] {
    // n[dy + 1][dx + 1]
    let col = |dx: usize| n[0][dx] + n[1][dx] + n[2][dx];
    let row = |dy: usize| n[dy][0] + n[dy][1] + n[dy][2];
    let bx = (col(2) - col(0)) / 6.0;
    let by = (row(2) - row(0)) / 6.0;
    let dxx = (col(2) + col(0) - 2.0 * col(1)) / 6.0;
    let dyy = (row(2) + row(0) - 2.0 * row(1)) / 6.0;
    let dxy = (n[2][2] + n[0][0] - n[0][2] - n[2][0]) / 4.0;
    // gradient zero: [2dxx dxy; dxy 2dyy] [x y]^T = -[bx by]^T
    let det = 4.0 * dxx * dyy - dxy * dxy;
    let limit = 1.0 - 1e-9;
    if dxx < 0.0 && det > 0.0 {
        let x = (-bx * 2.0 * dyy + by * dxy) / det;
        let y = (-by * 2.0 * dxx + bx * dxy) / det;
        if x.abs() < 1.0 && y.abs() < 1.0 {
            return [x, y];
        }
    }
    let fit = |m: f64, c: f64, p: f64| {
        let denom = m - 2.0 * c + p;
        if denom < 0.0 {
            (0.5 * (m - p) / denom).clamp(-limit, limit)
        } else {
            0.0
        }
    };
    [fit(n[1][0], n[1][1], n[1][2]), fit(n[0][1], n[1][1], n[2][1])]
}

fn correlate_prepared(a: &Prepared, b: &Prepared, rows: usize, cols: usize, plans: &mut Dft2Pair) -> CorrelationPeak {
    let mut cross: Vec<Complex64> = a
        .spectrum
        .iter()
        .zip(&b.spectrum)
        .enumerate()
        .map(|(k, (fa, fb))| {
            // radial frequency as a fraction of Nyquist
            let fy = 2.0 * signed_index(k / cols, rows) as f64 / rows as f64;
            let fx = 2.0 * signed_index(k % cols, cols) as f64 / cols as f64;
            if fx * fx + fy * fy > PASSBAND * PASSBAND {
                return Complex64::new(0.0, 0.0);
            }
            let v = fb * fa.conj();
            v / v.norm().max(MAGNITUDE_FLOOR)
        })
        .collect();
    let spectrum = cross.clone();
    plans.inverse.process_unscaled(&mut cross);
    let surface: Vec<f64> = cross.iter().map(|v| v.re).collect();
    let (mut best, mut peak) = (0usize, f64::MIN);
    for (k, &v) in surface.iter().enumerate() {
        if v > peak {
            peak = v;
            best = k;
        }
    }
    let mean_abs = surface.iter().map(|v| v.abs()).sum::<f64>() / surface.len() as f64;
    let sharpness = if mean_abs > 0.0 { peak / mean_abs } else { 0.0 };
    let (pr, pc) = (best / cols, best % cols);
    let mut hood = [[0.0; 3]; 3];
    for (dy, line) in hood.iter_mut().enumerate() {
        for (dx, v) in line.iter_mut().enumerate() {
            let r = (pr + rows + dy - 1) % rows;
            let c = (pc + cols + dx - 1) % cols;
            *v = surface[r * cols + c];
        }
    }
    let integer = [signed_index(pc, cols), signed_index(pr, rows)];
    let sub = parabolic_offset(&hood);
    let start = [integer[0] as f64 + sub[0], integer[1] as f64 + sub[1]];
    let refined = refine_peak(&spectrum, rows, cols, start);
    let integer = [refined[0].round() as i64, refined[1].round() as i64];
    CorrelationPeak {
        integer,
        subpixel: [refined[0] - integer[0] as f64, refined[1] - integer[1] as f64],
        sharpness,
    }
}

/// Correlation surface evaluated at arbitrary `x` (columns) and `y` (rows)
/// offsets by a direct partial DFT of the cross-power spectrum.
fn correlation_at(spectrum: &[Complex64], rows: usize, cols: usize, xs: &[f64], ys: &[f64]) -> Array2<f64> {
    let kernel = |offsets: &[f64], n: usize| {
        Array2::from_shape_fn((n, offsets.len()), |(k, m)| {
            let f = signed_index(k, n) as f64 / n as f64;
            Complex64::from_polar(1.0, std::f64::consts::TAU * f * offsets[m])
        })
    };
    let ex = kernel(xs, cols);
    let ey = kernel(ys, rows);
    let grid = ndarray::ArrayView2::from_shape((rows, cols), spectrum).expect("spectrum shape");
    let partial = grid.dot(&ex);
    ey.t().dot(&partial).mapv(|v| v.re)
}

/// Two-stage grid search for the continuous correlation maximum near `start`.
/// The whitened peak is too narrow for the 3x3 parabola to resolve offsets
/// much beyond a tenth of a pixel.
fn refine_peak(spectrum: &[Complex64], rows: usize, cols: usize, start: [f64; 2]) -> [f64; 2] {
    const POINTS: usize = 25;
    let mut centre = start;
    for half_width in [0.6, 0.06] {
        let step = 2.0 * half_width / (POINTS - 1) as f64;
        let axis = |c: f64| (0..POINTS).map(|k| c - half_width + k as f64 * step).collect::<Vec<_>>();
        let (xs, ys) = (axis(centre[0]), axis(centre[1]));
        let surface = correlation_at(spectrum, rows, cols, &xs, &ys);
        let mut best = (f64::MIN, centre);
        for ((iy, ix), &v) in surface.indexed_iter() {
            if v > best.0 {
                best = (v, [xs[ix], ys[iy]]);
            }
        }
        centre = best.1;
    }
    centre
}

/// Shift of `frame_b` relative to `frame_a`: if `frame_b` is `frame_a`
/// circularly shifted by `(x, y)`, the peak lands at `(x, y)`.
pub fn phase_correlate(frame_a: &Array2<f64>, frame_b: &Array2<f64>) -> Result<CorrelationPeak> {
    if frame_a.dim() != frame_b.dim() {
        return Err(Error::GridMismatch(format!(
            "frames are {:?} and {:?}",
            frame_a.dim(),
            frame_b.dim()
        )));
    }
    let (rows, cols) = frame_a.dim();
    let mut plans = Dft2Pair::new(rows, cols);
    let a = prepare(frame_a, &mut plans)?;
    let b = prepare(frame_b, &mut plans)?;
    Ok(correlate_prepared(&a, &b, rows, cols, &mut plans))
}

/// Estimates the per-frame shifts of a stack relative to frame 0.
pub fn estimate_trajectory(frames: &FrameStack, mode: RegistrationMode) -> Result<ScanTrajectory> {
    let count = frames.len();
    if count < 2 {
        return Err(Error::invalid(format!("registration needs at least 2 frames, got {count}")));
    }
    let (rows, cols) = frames.frame_dim();
    let prepared = frames
        .frames
        .par_iter()
        .map_init(|| Dft2Pair::new(rows, cols), |plans, f| prepare(f, plans))
        .collect::<Result<Vec<_>>>()?;
    let peaks: Vec<CorrelationPeak> = (1..count)
        .into_par_iter()
        .map_init(
            || Dft2Pair::new(rows, cols),
            |plans, j| {
                let a = match mode {
                    RegistrationMode::Chain => &prepared[j - 1],
                    RegistrationMode::Reference => &prepared[0],
                };
                correlate_prepared(a, &prepared[j], rows, cols, plans)
            },
        )
        .collect();

    let mut shifts = vec![[0.0, 0.0]; count];
    for (j, peak) in peaks.iter().enumerate().map(|(k, p)| (k + 1, p)) {
        let step = peak.shift();
        let base = match mode {
            RegistrationMode::Chain => shifts[j - 1],
            RegistrationMode::Reference => [0.0, 0.0],
        };
        shifts[j] = [base[0] + step[0], base[1] + step[1]];
    }
    let mut sharpness = vec![None];
    sharpness.extend(peaks.iter().map(|p| Some(p.sharpness)));

    let unreliable = peaks.iter().filter(|p| !p.is_reliable()).count();
    let pairs = peaks.len();
    if unreliable as f64 > MAX_UNRELIABLE_FRACTION * pairs as f64 {
        return Err(Error::Registration { unreliable, pairs });
    }
    if unreliable > 0 {
        log::warn!("{unreliable} of {pairs} frame pairs have correlation sharpness below {MIN_RELIABLE_SHARPNESS}");
    }
    let trajectory = ScanTrajectory {
        shifts,
        reference: 0,
        sharpness,
    };
    trajectory.validate()?;
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::shift_array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0))
    }

    fn stack(frames: Vec<Array2<f64>>) -> FrameStack {
        FrameStack::new(frames, 1.67, 0.532, 500.0).unwrap()
    }

    #[test]
    fn identical_frames_give_zero() {
        let a = texture(64, 1);
        let p = phase_correlate(&a, &a).unwrap();
        assert_eq!(p.integer, [0, 0]);
        assert!(p.subpixel[0].abs() < 1e-9 && p.subpixel[1].abs() < 1e-9);
        assert!(p.is_reliable());
        let b = shift_array(&a, 1, 0);
        assert!(p.sharpness > phase_correlate(&a, &b).unwrap().sharpness);
    }

    #[test]
    fn recovers_integer_shift() {
        let a = texture(64, 2);
        let b = shift_array(&a, 5, -3);
        let p = phase_correlate(&a, &b).unwrap();
        assert_eq!(p.integer, [5, -3]);
        assert!(p.subpixel[0].abs() < 0.1 && p.subpixel[1].abs() < 0.1);
    }

    #[test]
    fn rejects_zero_and_mismatched_frames() {
        let a = texture(16, 3);
        assert!(phase_correlate(&a, &Array2::zeros((16, 16))).is_err());
        assert!(phase_correlate(&a, &texture(8, 3)).is_err());
    }

    #[test]
    fn flat_frames_are_unreliable() {
        let flat = Array2::from_elem((16, 16), 2.0);
        let p = phase_correlate(&flat, &flat).unwrap();
        assert!(!p.is_reliable());
        let err = estimate_trajectory(&stack(vec![flat.clone(), flat]), RegistrationMode::Chain).unwrap_err();
        assert!(matches!(err, Error::Registration { unreliable: 1, pairs: 1 }));
    }

    #[test]
    fn subpixel_shift_of_smooth_texture() {
        // band-limited texture shifted by a Fourier phase ramp
        let a = texture(32, 4);
        let smooth = {
            let mut g = a.clone();
            for _ in 0..2 {
                let prev = g.clone();
                g.indexed_iter_mut().for_each(|((r, c), v)| {
                    let n = prev.dim().0;
                    *v = (prev[[r, c]] * 2.0
                        + prev[[(r + 1) % n, c]]
                        + prev[[(r + n - 1) % n, c]]
                        + prev[[r, (c + 1) % n]]
                        + prev[[r, (c + n - 1) % n]])
                        / 6.0
                });
            }
            g
        };
        let b = crate::field::subpixel_shift_real(&smooth, 2.3, -1.6);
        let s = phase_correlate(&smooth, &b).unwrap().shift();
        assert!((s[0] - 2.3).abs() < 0.25 && (s[1] + 1.6).abs() < 0.25, "{s:?}");
    }

    #[test]
    fn trajectory_of_identical_frames_is_zero() {
        let a = texture(32, 5);
        let t = estimate_trajectory(&stack(vec![a.clone(), a]), RegistrationMode::Chain).unwrap();
        assert_eq!(t.shifts.len(), 2);
        assert!(t.shifts.iter().flatten().all(|v| v.abs() < 1e-9));
        assert_eq!(t.sharpness[0], None);
        assert!(estimate_trajectory(&stack(vec![texture(8, 1)]), RegistrationMode::Chain).is_err());
    }

    #[test]
    fn chain_and_reference_agree_on_integer_walk() {
        let base = texture(64, 6);
        let steps = [(0, 0), (2, 1), (4, -1), (3, -3), (1, -2)];
        let frames = steps.iter().map(|&(x, y)| shift_array(&base, x, y)).collect();
        let s = stack(frames);
        for mode in [RegistrationMode::Chain, RegistrationMode::Reference] {
            let t = estimate_trajectory(&s, mode).unwrap();
            for (got, &(x, y)) in t.shifts.iter().zip(&steps) {
                assert!((got[0] - x as f64).abs() < 0.1 && (got[1] - y as f64).abs() < 0.1, "{mode:?} {got:?}");
            }
        }
    }

    #[test]
    fn mode_parses() {
        assert_eq!("chain".parse::<RegistrationMode>().unwrap(), RegistrationMode::Chain);
        assert_eq!("reference".parse::<RegistrationMode>().unwrap(), RegistrationMode::Reference);
        assert!("sideways".parse::<RegistrationMode>().is_err());
    }

    #[test]
    fn parabola_vertex() {
        // f = -(x - 0.3)^2 - 2 (y + 0.2)^2 sampled on the 3x3 stencil
        let mut n = [[0.0; 3]; 3];
        for (dy, line) in n.iter_mut().enumerate() {
            for (dx, v) in line.iter_mut().enumerate() {
                let (x, y) = (dx as f64 - 1.0, dy as f64 - 1.0);
                *v = -(x - 0.3f64).powi(2) - 2.0 * (y + 0.2f64).powi(2);
            }
        }
        let [x, y] = parabolic_offset(&n);
        assert!((x - 0.3).abs() < 1e-12 && (y + 0.2).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn antisymmetric(dx in -10i64..10, dy in -10i64..10, seed in 0u64..50) {
            let a = texture(32, seed);
            let b = shift_array(&a, dx, dy);
            let ab = phase_correlate(&a, &b).unwrap();
            let ba = phase_correlate(&b, &a).unwrap();
            prop_assert_eq!(ab.integer, [dx, dy]);
            prop_assert_eq!(ba.integer, [-dx, -dy]);
        }

        #[test]
        fn equivariant(dx in -6i64..6, dy in -6i64..6, px in -6i64..6, py in -6i64..6, seed in 0u64..50) {
            let a = texture(32, seed);
            let b = shift_array(&a, dx, dy);
            let base = phase_correlate(&a, &b).unwrap().integer;
            let pre = phase_correlate(&a, &shift_array(&b, px, py)).unwrap().integer;
            prop_assert_eq!([pre[0] - base[0], pre[1] - base[1]], [px, py]);
        }
    }
}
