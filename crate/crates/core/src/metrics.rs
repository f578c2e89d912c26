//! Reconstruction quality against ground truth.
//!
//! Phase retrieval only determines the object up to a global complex factor,
//! so every comparison first applies the least-squares optimal factor
//! `c* = sum(conj(rec) * truth) / sum(|rec|^2)` over the evaluation mask.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::simulate::{BarGroup, BarOrientation};

/// Axis-aligned rectangle of grid samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    pub fn new(row0: usize, col0: usize, rows: usize, cols: usize) -> Self {
        Self { row0, col0, rows, cols }
    }

    /// Centred region covering `fraction` of each dimension.
    pub fn central(rows: usize, cols: usize, fraction: f64) -> Self {
        let h = ((rows as f64 * fraction).round() as usize).clamp(1, rows);
        let w = ((cols as f64 * fraction).round() as usize).clamp(1, cols);
        Self::new((rows - h) / 2, (cols - w) / 2, h, w)
    }

    pub fn row_range(&self) -> Range<usize> {
        self.row0..self.row0 + self.rows
    }

    pub fn col_range(&self) -> Range<usize> {
        self.col0..self.col0 + self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_within(&self, dim: (usize, usize)) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("evaluation region is empty"));
        }
        if self.row0 + self.rows > dim.0 || self.col0 + self.cols > dim.1 {
            return Err(Error::invalid(format!("region {self:?} exceeds the {}x{} grid", dim.0, dim.1)));
        }
        Ok(())
    }

    /// Row-major pixel coordinates.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_range().flat_map(move |r| self.col_range().map(move |c| (r, c)))
    }
}

fn check_pair(recovered: &Array2<Complex64>, truth: &Array2<Complex64>, mask: &Region) -> Result<()> {
    if recovered.dim() != truth.dim() {
        return Err(Error::GridMismatch(format!(
            "recovered is {:?}, truth is {:?}",
            recovered.dim(),
            truth.dim()
        )));
    }
    mask.check_within(truth.dim())
}

/// Least-squares global factor mapping `recovered` onto `truth` over `mask`.
pub fn optimal_scale(recovered: &Array2<Complex64>, truth: &Array2<Complex64>, mask: &Region) -> Result<Complex64> {
    check_pair(recovered, truth, mask)?;
    let mut cross = Complex64::new(0.0, 0.0);
    let mut energy = 0.0;
    for idx in mask.iter() {
        let (a, b) = (recovered[idx], truth[idx]);
        cross += a.conj() * b;
        energy += a.norm_sqr();
    }
    Ok(if energy > 0.0 { cross / energy } else { Complex64::new(0.0, 0.0) })
}

/// `sqrt(sum |c* rec - truth|^2 / sum |truth|^2)` over `mask`.
pub fn phase_aligned_rmse(recovered: &Array2<Complex64>, truth: &Array2<Complex64>, mask: &Region) -> Result<f64> {
    let c = optimal_scale(recovered, truth, mask)?;
    let mut err = 0.0;
    let mut norm = 0.0;
    for idx in mask.iter() {
        err += (c * recovered[idx] - truth[idx]).norm_sqr();
        norm += truth[idx].norm_sqr();
    }
    if norm == 0.0 {
        return Err(Error::Degenerate("truth has no energy inside the mask".into()));
    }
    Ok((err / norm).sqrt())
}

/// Relative RMS difference of `|c* rec|` and `|truth|` over `mask`.
pub fn amplitude_rmse(recovered: &Array2<Complex64>, truth: &Array2<Complex64>, mask: &Region) -> Result<f64> {
    let c = optimal_scale(recovered, truth, mask)?;
    let mut err = 0.0;
    let mut norm = 0.0;
    for idx in mask.iter() {
        err += ((c * recovered[idx]).norm() - truth[idx].norm()).powi(2);
        norm += truth[idx].norm_sqr();
    }
    if norm == 0.0 {
        return Err(Error::Degenerate("truth has no energy inside the mask".into()));
    }
    Ok((err / norm).sqrt())
}

fn wrap(phase: f64) -> f64 {
    let w = (phase + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// RMS phase error in radians after removing the mean (piston) difference.
/// Pixels where the truth amplitude is below a tenth of its maximum are skipped.
pub fn phase_rms_error(recovered: &Array2<Complex64>, truth: &Array2<Complex64>, mask: &Region) -> Result<f64> {
    check_pair(recovered, truth, mask)?;
    let peak = mask.iter().map(|i| truth[i].norm()).fold(0.0, f64::max);
    let diffs: Vec<Complex64> = mask
        .iter()
        .filter(|&i| truth[i].norm() >= 0.1 * peak && recovered[i].norm() > 0.0)
        .map(|i| {
            let d = recovered[i] * truth[i].conj();
            d / d.norm()
        })
        .collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate("no pixels with usable phase inside the mask".into()));
    }
    let piston = diffs.iter().sum::<Complex64>().arg();
    let ms = diffs.iter().map(|d| wrap(d.arg() - piston).powi(2)).sum::<f64>() / diffs.len() as f64;
    Ok(ms.sqrt())
}

/// Michelson contrast of the period-folded mean profile of `|O|^2` across a
/// bar group.
pub fn bar_contrast(recovered: &Array2<Complex64>, group: &BarGroup) -> Result<f64> {
    if group.period < 2 {
        return Err(Error::invalid(format!("bar period must be at least 2 pixels, got {}", group.period)));
    }
    group.region.check_within(recovered.dim())?;
    let region = group.region;
    let (across, along) = match group.orientation {
        BarOrientation::Vertical => (region.col_range(), region.row_range()),
        BarOrientation::Horizontal => (region.row_range(), region.col_range()),
    };
    let mut bins = vec![(0.0, 0usize); group.period];
    for (k, a) in across.enumerate() {
        let mut sum = 0.0;
        for b in along.clone() {
            let idx = match group.orientation {
                BarOrientation::Vertical => (b, a),
                BarOrientation::Horizontal => (a, b),
            };
            sum += recovered[idx].norm_sqr();
        }
        let bin = &mut bins[k % group.period];
        bin.0 += sum / along.len() as f64;
        bin.1 += 1;
    }
    let means: Vec<f64> = bins.iter().filter(|b| b.1 > 0).map(|b| b.0 / b.1 as f64).collect();
    let max = means.iter().cloned().fold(f64::MIN, f64::max);
    let min = means.iter().cloned().fold(f64::MAX, f64::min);
    Ok(if max + min > 0.0 { (max - min) / (max + min) } else { 0.0 })
}

/// Samples along a straight segment, one per unit step of the longer axis.
pub fn line_path(start: (usize, usize), end: (usize, usize)) -> Vec<(usize, usize)> {
    let (dr, dc) = (end.0 as f64 - start.0 as f64, end.1 as f64 - start.1 as f64);
    let steps = dr.abs().max(dc.abs()).round() as usize;
    (0..=steps)
        .map(|k| {
            let t = if steps == 0 { 0.0 } else { k as f64 / steps as f64 };
            (
                (start.0 as f64 + t * dr).round() as usize,
                (start.1 as f64 + t * dc).round() as usize,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightProfile {
    pub position_um: Vec<f64>,
    pub height_um: Vec<f64>,
    /// Set when some adjacent unwrapped samples still differ by more than pi/2.
    pub ambiguous: bool,
}

impl HeightProfile {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("position_um,height_um\n");
        for (p, h) in self.position_um.iter().zip(&self.height_um) {
            out.push_str(&format!("{p},{h}\n"));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Unwrapped phase along `path` converted to physical height
/// `h = phase * wavelength / (2 pi delta_n)`.
pub fn phase_height_profile(
    recovered: &ComplexField,
    path: &[(usize, usize)],
    wavelength: f64,
    delta_n: f64,
) -> Result<HeightProfile> {
    if path.is_empty() {
        return Err(Error::invalid("profile path is empty"));
    }
    if !(delta_n != 0.0 && delta_n.is_finite()) || !(wavelength > 0.0) {
        return Err(Error::invalid("wavelength must be positive and refractive index difference nonzero"));
    }
    let (rows, cols) = recovered.dim();
    let mut phases = Vec::with_capacity(path.len());
    for &(r, c) in path {
        if r >= rows || c >= cols {
            return Err(Error::invalid(format!("path point ({r}, {c}) outside the grid")));
        }
        let v = recovered.data()[[r, c]];
        if v.norm() < 1e-12 {
            return Err(Error::Degenerate(format!("zero amplitude at ({r}, {c}); phase undefined")));
        }
        phases.push(v.arg());
    }
    let mut unwrapped = Vec::with_capacity(phases.len());
    let mut ambiguous = false;
    let mut offset = 0.0;
    for (k, &p) in phases.iter().enumerate() {
        if k > 0 {
            let jump = p - phases[k - 1];
            if jump > PI {
                offset -= TAU;
            } else if jump < -PI {
                offset += TAU;
            }
        }
        let u = p + offset;
        if let Some(&prev) = unwrapped.last() {
            if f64::abs(u - prev) > PI / 2.0 {
                ambiguous = true;
            }
        }
        unwrapped.push(u);
    }
    let mut position = Vec::with_capacity(path.len());
    let mut dist = 0.0;
    for (k, &(r, c)) in path.iter().enumerate() {
        if k > 0 {
            let (pr, pc) = path[k - 1];
            dist += ((r as f64 - pr as f64).powi(2) + (c as f64 - pc as f64).powi(2)).sqrt() * recovered.pitch();
        }
        position.push(dist);
    }
    let scale = wavelength / (TAU * delta_n);
    Ok(HeightProfile {
        position_um: position,
        height_um: unwrapped.iter().map(|p| p * scale).collect(),
        ambiguous,
    })
}

/// Bar contrast entry of an [`EvalReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarContrast {
    pub period: usize,
    pub orientation: BarOrientation,
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub amplitude_rmse: f64,
    pub phase_rms_rad: f64,
    pub mask: Region,
    #[serde(default)]
    pub bar_contrast: Vec<BarContrast>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_rms_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_max_px: Option<f64>,
}

/// Object-quality part of an [`EvalReport`].
pub fn evaluate(recovered: &Array2<Complex64>, truth: &Array2<Complex64>, mask: Region, bars: &[BarGroup]) -> Result<EvalReport> {
    let bar_contrast = bars
        .iter()
        .map(|g| {
            Ok(BarContrast {
                period: g.period,
                orientation: g.orientation,
                contrast: bar_contrast(recovered, g)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        rmse: phase_aligned_rmse(recovered, truth, &mask)?,
        amplitude_rmse: amplitude_rmse(recovered, truth, &mask)?,
        phase_rms_rad: phase_rms_error(recovered, truth, &mask)?,
        mask,
        bar_contrast,
        trajectory_rms_px: None,
        trajectory_max_px: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{bar_groups, make_object, ObjectSource};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn identical_fields_score_zero() {
        let t = random(16, 16, 1);
        let mask = Region::central(16, 16, 0.5);
        assert!(phase_aligned_rmse(&t, &t, &mask).unwrap() < 1e-15);
        assert!(amplitude_rmse(&t, &t, &mask).unwrap() < 1e-15);
        assert!(phase_rms_error(&t, &t, &mask).unwrap() < 1e-7);
    }

    #[test]
    fn global_factor_is_quotiented_out() {
        let t = random(16, 16, 2);
        let rec = t.mapv(|v| v * Complex64::new(0.3, 0.4));
        let mask = Region::central(16, 16, 0.5);
        assert!(phase_aligned_rmse(&rec, &t, &mask).unwrap() < 1e-12);
    }

    /// Brute-force check: projecting onto the best global factor can only
    /// shrink a perturbation of relative norm 0.05, and a random perturbation
    /// is nearly orthogonal to the truth so it shrinks only slightly.
    #[test]
    fn perturbation_bounds() {
        let t = random(64, 64, 3);
        let mask = Region::new(0, 0, 64, 64);
        let noise = random(64, 64, 4);
        let tn: f64 = t.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let nn: f64 = noise.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let rec = &t + &noise.mapv(|v| v * (0.05 * tn / nn));
        let e = phase_aligned_rmse(&rec, &t, &mask).unwrap();
        assert!((0.045..=0.05).contains(&e), "rmse {e}");
        // scanning a grid of factors never beats the closed form
        let mut best = f64::MAX;
        for i in -20..=20 {
            for k in -20..=20 {
                let c = Complex64::new(1.0 + i as f64 * 0.002, k as f64 * 0.002);
                let err: f64 = rec.iter().zip(t.iter()).map(|(a, b)| (c * a - b).norm_sqr()).sum();
                best = best.min((err).sqrt() / tn);
            }
        }
        assert!(e <= best + 1e-12);
    }

    #[test]
    fn zero_truth_rejected() {
        let z = Array2::zeros((4, 4));
        assert!(phase_aligned_rmse(&random(4, 4, 1), &z, &Region::new(0, 0, 4, 4)).is_err());
        assert!(phase_aligned_rmse(&z, &z, &Region::new(0, 0, 5, 4)).is_err());
    }

    #[test]
    fn bar_contrast_extremes() {
        let src = ObjectSource::Bars {
            period: 4,
            bar_amplitude: 0.0,
        };
        let o = make_object(&src, 120, 120, 0.5, 0.5).unwrap();
        for g in bar_groups(120, 120, 4).unwrap() {
            assert!((bar_contrast(o.data(), &g).unwrap() - 1.0).abs() < 1e-12);
            let flat = Array2::from_elem((120, 120), Complex64::new(0.7, 0.1));
            assert!(bar_contrast(&flat, &g).unwrap().abs() < 1e-12);
            let scaled = o.data().mapv(|v| v * 3.0);
            assert!((bar_contrast(&scaled, &g).unwrap() - bar_contrast(o.data(), &g).unwrap()).abs() < 1e-12);
        }
        let mut g = bar_groups(120, 120, 4).unwrap()[0];
        g.period = 1;
        assert!(bar_contrast(o.data(), &g).is_err());
    }

    #[test]
    fn flat_phase_has_zero_height() {
        let f = ComplexField::constant(8, 8, Complex64::new(2.0, 0.0), 0.5, 0.532).unwrap();
        let p = phase_height_profile(&f, &line_path((0, 0), (7, 7)), 0.532, 0.5).unwrap();
        assert!(p.height_um.iter().all(|h| h.abs() < 1e-15));
        assert!(!p.ambiguous);
        assert!((p.position_um[7] - 7.0 * 2f64.sqrt() * 0.5).abs() < 1e-12);
    }

    #[test]
    fn phase_disk_plateau_height() {
        let src = ObjectSource::PhaseDisk {
            phase_height: 1.0,
            radius_fraction: 0.25,
        };
        let o = make_object(&src, 64, 64, 0.5, 0.532).unwrap();
        let p = phase_height_profile(&o, &line_path((32, 0), (32, 63)), 0.532, 0.5).unwrap();
        let expected = 0.532 / (TAU * 0.5);
        assert!((p.height_um[32] - expected).abs() < 1e-12);
        assert!((expected - 0.1694).abs() < 1e-4);
        assert!(p.height_um[0].abs() < 1e-12);
    }

    #[test]
    fn unwrapping_follows_ramp() {
        let f = ComplexField::from_fn(1, 40, 1.0, 0.5, |(_, c)| Complex64::from_polar(1.0, 0.4 * c as f64)).unwrap();
        let path: Vec<_> = (0..40).map(|c| (0, c)).collect();
        let p = phase_height_profile(&f, &path, TAU, 1.0).unwrap();
        assert!((p.height_um[39] - 0.4 * 39.0).abs() < 1e-9);
        assert!(!p.ambiguous);
        let jumpy = ComplexField::from_fn(1, 4, 1.0, 0.5, |(_, c)| Complex64::from_polar(1.0, 2.0 * c as f64)).unwrap();
        assert!(phase_height_profile(&jumpy, &path[..4], TAU, 1.0).unwrap().ambiguous);
    }

    #[test]
    fn zero_amplitude_on_path_rejected() {
        let f = ComplexField::constant(4, 4, Complex64::new(0.0, 0.0), 1.0, 0.5).unwrap();
        assert!(phase_height_profile(&f, &[(0, 0)], 0.5, 0.5).is_err());
    }

    #[test]
    fn profile_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let p = HeightProfile {
            position_um: vec![0.0, 0.5],
            height_um: vec![0.1, 0.2],
            ambiguous: false,
        };
        p.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "position_um,height_um\n0,0.1\n0.5,0.2\n");
    }

    proptest! {
        #[test]
        fn rmse_is_scale_invariant(re in -3.0f64..3.0, im in -3.0f64..3.0, seed in 0u64..100) {
            prop_assume!(re.abs() + im.abs() > 1e-3);
            let t = random(12, 12, seed);
            let rec = &t + &random(12, 12, seed + 1000).mapv(|v| v * 0.1);
            let mask = Region::central(12, 12, 0.5);
            let base = phase_aligned_rmse(&rec, &t, &mask).unwrap();
            let scaled = phase_aligned_rmse(&rec.mapv(|v| v * Complex64::new(re, im)), &t, &mask).unwrap();
            prop_assert!((base - scaled).abs() < 1e-12);
        }
    }
}
