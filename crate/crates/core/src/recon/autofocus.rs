//! Propagation-distance search.
//!
//! Each candidate distance gets a short reconstruction on a subset of frames;
//! the score is the negative detector-plane residual after the last pass. A
//! coarse grid locates the peak and golden-section search refines it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{initialize, iterate_at, ProbeMode, ReconConfig};
use crate::dataset::FrameStack;
use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::trajectory::ScanTrajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutofocusSpec {
    pub min_um: f64,
    pub max_um: f64,
    /// Coarse grid points, endpoints included.
    pub steps: usize,
    /// Golden-section iterations around the coarse optimum.
    pub refinements: usize,
    /// Passes per candidate.
    pub iterations: usize,
    /// Frames used per candidate, taken from the start of the stack.
    pub max_frames: usize,
}

impl Default for AutofocusSpec {
    fn default() -> Self {
        Self {
            min_um: 300.0,
            max_um: 700.0,
            steps: 21,
            refinements: 8,
            iterations: 3,
            max_frames: 20,
        }
    }
}

impl AutofocusSpec {
    pub fn new(min_um: f64, max_um: f64) -> Self {
        Self {
            min_um,
            max_um,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_um.is_finite() && self.max_um.is_finite() && self.min_um < self.max_um) {
            return Err(Error::invalid(format!(
                "autofocus range [{}, {}] is empty",
                self.min_um, self.max_um
            )));
        }
        if self.steps < 2 || self.iterations < 1 || self.max_frames < 2 {
            return Err(Error::invalid("autofocus needs at least 2 steps, 1 pass and 2 frames"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusSample {
    pub distance_um: f64,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutofocusResult {
    pub distance: f64,
    /// Every evaluated candidate, sorted by distance.
    pub curve: Vec<FocusSample>,
    /// The coarse optimum sat on the end of the range.
    pub on_boundary: bool,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Searches `[spec.min_um, spec.max_um]` for the distance that best explains
/// the frames. `probe` is used as a fixed probe when supplied.
pub fn autofocus(
    frames: &FrameStack,
    trajectory: &ScanTrajectory,
    config: &ReconConfig,
    spec: &AutofocusSpec,
    probe: Option<&ComplexField>,
) -> Result<AutofocusResult> {
    spec.validate()?;
    if frames.len() < 2 {
        return Err(Error::invalid("autofocus needs at least 2 frames"));
    }
    if trajectory.len() != frames.len() {
        return Err(Error::invalid("trajectory and frame counts differ"));
    }
    let count = frames.len().min(spec.max_frames);
    let indices: Vec<usize> = (0..count).collect();
    let subset = frames.subset(&indices);
    let sub_trajectory = ScanTrajectory {
        shifts: trajectory.shifts[..count].to_vec(),
        reference: 0,
        sharpness: Vec::new(),
    };
    let origin = sub_trajectory.shifts[0];
    let sub_trajectory = ScanTrajectory {
        shifts: sub_trajectory.shifts.iter().map(|s| [s[0] - origin[0], s[1] - origin[1]]).collect(),
        ..sub_trajectory
    };
    let mut short = config.clone();
    short.iterations = spec.iterations;
    short.autofocus = None;
    if probe.is_some() {
        short.probe_mode = ProbeMode::Fixed;
    }
    let base = initialize(&subset, &sub_trajectory, config.upsampling)?;
    let base = match probe {
        Some(p) => {
            let mut state = base;
            state.probe = state.probe.with_data(p.data().clone())?;
            state
        }
        None => base,
    };
    let score = |d: f64| -> Result<f64> {
        let r = iterate_at(base.clone(), &subset, &sub_trajectory, &short, d)?;
        Ok(-r.residual)
    };

    let step = (spec.max_um - spec.min_um) / (spec.steps - 1) as f64;
    let coarse: Vec<f64> = (0..spec.steps).map(|k| spec.min_um + k as f64 * step).collect();
    let metrics = coarse.par_iter().map(|&d| score(d)).collect::<Result<Vec<_>>>()?;
    let mut curve: Vec<FocusSample> = coarse
        .iter()
        .zip(&metrics)
        .map(|(&distance_um, &metric)| FocusSample { distance_um, metric })
        .collect();
    let best = (0..metrics.len())
        .max_by(|&a, &b| metrics[a].total_cmp(&metrics[b]))
        .expect("at least two candidates");
    let on_boundary = best == 0 || best == metrics.len() - 1;
    if on_boundary {
        log::warn!(
            "autofocus optimum {:.1} um lies on the search boundary [{}, {}]",
            coarse[best],
            spec.min_um,
            spec.max_um
        );
    }

    let (mut lo, mut hi) = (coarse[best.saturating_sub(1)], coarse[(best + 1).min(coarse.len() - 1)]);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f64::NAN, f64::NAN);
    for k in 0..spec.refinements {
        if k == 0 {
            f1 = score(x1)?;
            f2 = score(x2)?;
            curve.push(FocusSample { distance_um: x1, metric: f1 });
            curve.push(FocusSample { distance_um: x2, metric: f2 });
            continue;
        }
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = score(x1)?;
            curve.push(FocusSample { distance_um: x1, metric: f1 });
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = score(x2)?;
            curve.push(FocusSample { distance_um: x2, metric: f2 });
        }
    }
    curve.sort_by(|a, b| a.distance_um.total_cmp(&b.distance_um));
    let winner = curve
        .iter()
        .max_by(|a, b| a.metric.total_cmp(&b.metric))
        .expect("curve is nonempty");
    Ok(AutofocusResult {
        distance: winner.distance_um,
        curve,
        on_boundary,
    })
}
