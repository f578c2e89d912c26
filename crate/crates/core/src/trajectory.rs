//! Per-frame lateral shifts of the speckle probe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sharpness below which a correlation peak is treated as unreliable.
pub const MIN_RELIABLE_SHARPNESS: f64 = 3.0;

/// Shifts `(x, y)` in detector pixels, one per frame, relative to `reference`.
///
/// `x` is the column direction and `y` the row direction, matching
/// [`crate::field::circular_shift`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanTrajectory {
    pub shifts: Vec<[f64; 2]>,
    #[serde(default)]
    pub reference: usize,
    /// Correlation sharpness that produced each shift; `None` for the
    /// reference frame and for trajectories that were not estimated.
    #[serde(default)]
    pub sharpness: Vec<Option<f64>>,
}

impl ScanTrajectory {
    pub fn new(shifts: Vec<[f64; 2]>) -> Result<Self> {
        let t = Self {
            sharpness: vec![None; shifts.len()],
            shifts,
            reference: 0,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shifts.is_empty() {
            return Err(Error::invalid("trajectory is empty"));
        }
        if self.reference >= self.shifts.len() {
            return Err(Error::invalid("reference frame index out of range"));
        }
        if self.shifts[self.reference] != [0.0, 0.0] {
            return Err(Error::invalid("reference frame shift must be (0, 0)"));
        }
        if !self.shifts.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::invalid("trajectory contains non-finite shifts"));
        }
        if !self.sharpness.is_empty() && self.sharpness.len() != self.shifts.len() {
            return Err(Error::invalid("sharpness list length differs from shift count"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// Frames whose correlation peak fell below [`MIN_RELIABLE_SHARPNESS`].
    pub fn unreliable_frames(&self) -> Vec<usize> {
        self.sharpness
            .iter()
            .enumerate()
            .filter_map(|(j, s)| match s {
                Some(v) if *v < MIN_RELIABLE_SHARPNESS => Some(j),
                _ => None,
            })
            .collect()
    }

    /// Integer shift on an `s`-times finer grid: `round(s * x)`, `round(s * y)`.
    pub fn grid_shift(&self, j: usize, s: usize) -> (i64, i64) {
        let [x, y] = self.shifts[j];
        ((x * s as f64).round() as i64, (y * s as f64).round() as i64)
    }

    /// Root-mean-square and maximum Euclidean distance to `truth`, frame by frame.
    pub fn error_against(&self, truth: &ScanTrajectory) -> Result<(f64, f64)> {
        if self.len() != truth.len() {
            return Err(Error::invalid(format!(
                "trajectory lengths differ: {} vs {}",
                self.len(),
                truth.len()
            )));
        }
        let n = self.len() as f64;
        let mut sum_sq = 0.0;
        let mut max: f64 = 0.0;
        for (a, b) in self.shifts.iter().zip(&truth.shifts) {
            let e = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            sum_sq += e * e;
            max = max.max(e);
        }
        Ok(((sum_sq / n).sqrt(), max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_must_be_origin() {
        assert!(ScanTrajectory::new(vec![[1.0, 0.0]]).is_err());
        assert!(ScanTrajectory::new(vec![]).is_err());
        assert!(ScanTrajectory::new(vec![[0.0, 0.0], [f64::NAN, 1.0]]).is_err());
        assert!(ScanTrajectory::new(vec![[0.0, 0.0], [2.5, -1.0]]).is_ok());
    }

    #[test]
    fn grid_shift_rounds() {
        let t = ScanTrajectory::new(vec![[0.0, 0.0], [2.4, -1.2]]).unwrap();
        assert_eq!(t.grid_shift(1, 3), (7, -4));
        assert_eq!(t.grid_shift(1, 1), (2, -1));
    }

    #[test]
    fn error_is_per_frame_distance() {
        let a = ScanTrajectory::new(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]).unwrap();
        let b = ScanTrajectory::new(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 0.6]]).unwrap();
        let (rms, max) = a.error_against(&b).unwrap();
        assert!((max - 0.6).abs() < 1e-12);
        assert!((rms - (0.36f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(a.error_against(&a).unwrap(), (0.0, 0.0));
    }
}
