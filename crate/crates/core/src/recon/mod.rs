//! Sub-sampled ptychographic reconstruction of object and speckle probe.
//!
//! The object `O` and probe `P` live on a grid `s` times finer than the
//! detector. Each frame's exit wave `O * P(x - x_j)` is propagated to the
//! detector, its magnitude is replaced by the measurement only at the
//! stride-`s` lattice where pixels exist, and the change is propagated back
//! and distributed with rPIE updates. Momentum is applied once per pass.

mod autofocus;
mod engine;

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::FrameStack;
use crate::error::{Error, Result};
use crate::field::{self, ComplexField, PropagationKernel};
use crate::rng;
use crate::trajectory::ScanTrajectory;

pub use autofocus::{autofocus, AutofocusResult, AutofocusSpec};
use engine::Engine;

/// Amplitudes below this are treated as phase-less in the projection.
pub const ZERO_MAGNITUDE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    /// Object and probe are both updated.
    #[default]
    Joint,
    /// The probe supplied in the initial state is held fixed.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// Upsampling factor between detector and reconstruction grids.
    pub upsampling: usize,
    pub iterations: usize,
    pub alpha_object: f64,
    pub alpha_probe: f64,
    /// Momentum factor; 0 disables momentum.
    pub momentum: f64,
    pub object_momentum: bool,
    pub probe_momentum: bool,
    pub probe_mode: ProbeMode,
    pub order_seed: u64,
    /// Propagation distance in micrometers; the dataset's nominal distance
    /// when absent.
    pub distance_um: Option<f64>,
    /// When present, the distance is searched before reconstructing.
    pub autofocus: Option<AutofocusSpec>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            upsampling: 3,
            iterations: 10,
            alpha_object: 0.9,
            alpha_probe: 0.5,
            momentum: 0.9,
            object_momentum: true,
            probe_momentum: true,
            probe_mode: ProbeMode::Joint,
            order_seed: 4,
            distance_um: None,
            autofocus: None,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upsampling < 1 {
            return Err(Error::invalid("upsampling factor must be at least 1"));
        }
        if self.iterations < 1 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        for (name, v) in [("alpha_object", self.alpha_object), ("alpha_probe", self.alpha_probe)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if let Some(d) = self.distance_um {
            if !d.is_finite() {
                return Err(Error::invalid("distance must be finite"));
            }
        }
        if let Some(af) = &self.autofocus {
            af.validate()?;
        }
        Ok(())
    }
}

/// Object, probe and momentum state between passes.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconState {
    pub object: ComplexField,
    pub probe: ComplexField,
    pub object_velocity: Array2<Complex64>,
    pub probe_velocity: Array2<Complex64>,
    pub iteration: usize,
    pub residuals: Vec<f64>,
}

impl ReconState {
    /// Fresh state with zero velocities.
    pub fn new(object: ComplexField, probe: ComplexField) -> Result<Self> {
        check_pair(&object, &probe)?;
        let dim = object.dim();
        Ok(Self {
            object,
            probe,
            object_velocity: Array2::zeros(dim),
            probe_velocity: Array2::zeros(dim),
            iteration: 0,
            residuals: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_pair(&self.object, &self.probe)?;
        if self.object_velocity.dim() != self.object.dim() || self.probe_velocity.dim() != self.object.dim() {
            return Err(Error::GridMismatch("velocity grids differ from the object grid".into()));
        }
        if self.residuals.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::invalid("residual history must be nonnegative"));
        }
        Ok(())
    }
}

fn check_pair(object: &ComplexField, probe: &ComplexField) -> Result<()> {
    if object.dim() != probe.dim() {
        return Err(Error::GridMismatch(format!(
            "object is {:?}, probe is {:?}",
            object.dim(),
            probe.dim()
        )));
    }
    if object.pitch() != probe.pitch() || object.wavelength() != probe.wavelength() {
        return Err(Error::GridMismatch("object and probe pitch or wavelength differ".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconResult {
    pub object: ComplexField,
    pub probe: ComplexField,
    /// Residual of the last pass.
    pub residual: f64,
    /// One residual per pass, measured before that pass's updates.
    pub residuals: Vec<f64>,
    pub distance: f64,
    pub trajectory: ScanTrajectory,
    /// Present when the distance was found by autofocus.
    pub autofocus: Option<AutofocusResult>,
    pub wall_time_s: f64,
}

fn check_inputs(frames: &FrameStack, trajectory: &ScanTrajectory) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::invalid("frame stack is empty"));
    }
    frames.validate()?;
    trajectory.validate()?;
    if trajectory.len() != frames.len() {
        return Err(Error::invalid(format!(
            "trajectory has {} shifts for {} frames",
            trajectory.len(),
            frames.len()
        )));
    }
    Ok(())
}

/// Initial guess: probe amplitude from the mean of the shifted-back frames,
/// object amplitude from the plain mean, both as `sqrt` of the mean intensity,
/// zero phase, Fourier-upsampled by `s`.
pub fn initialize(frames: &FrameStack, trajectory: &ScanTrajectory, s: usize) -> Result<ReconState> {
    check_inputs(frames, trajectory)?;
    if s < 1 {
        return Err(Error::invalid("upsampling factor must be at least 1"));
    }
    let dim = frames.frame_dim();
    let count = frames.len() as f64;
    let mut mean = Array2::<f64>::zeros(dim);
    let mut mean_back = Array2::<f64>::zeros(dim);
    for (frame, shift) in frames.frames.iter().zip(&trajectory.shifts) {
        mean += frame;
        if *shift == [0.0, 0.0] {
            mean_back += frame;
        } else {
            // Fourier shifting rings; intensity cannot go negative
            mean_back += &field::subpixel_shift_real(frame, -shift[0], -shift[1]).mapv(|v| v.max(0.0));
        }
    }
    let amplitude = |sum: Array2<f64>| sum.mapv(|v| Complex64::new((v / count).sqrt(), 0.0));
    let object = field::fourier_upsample(&amplitude(mean), s)?;
    let probe = field::fourier_upsample(&amplitude(mean_back), s)?;
    let pitch = frames.detector_pitch / s as f64;
    ReconState::new(
        ComplexField::new(object, pitch, frames.wavelength)?,
        ComplexField::new(probe, pitch, frames.wavelength)?,
    )
}

/// Replaces `|psi|` by `sqrt(I)` at the stride-`s` lattice and leaves every
/// other sample untouched. Where `|psi|` vanishes the phase factor is 1.
pub fn subsampled_projection(psi: &Array2<Complex64>, intensity: &Array2<f64>, s: usize) -> Result<Array2<Complex64>> {
    let (mh, mw) = intensity.dim();
    if s < 1 || psi.dim() != (mh * s, mw * s) {
        return Err(Error::GridMismatch(format!(
            "wave is {:?}, measurement is {:?} at stride {s}",
            psi.dim(),
            intensity.dim()
        )));
    }
    let mut out = psi.clone();
    for ((r, c), &i) in intensity.indexed_iter() {
        let v = &mut out[[r * s, c * s]];
        let amp = i.max(0.0).sqrt();
        let mag = v.norm();
        *v = if mag < ZERO_MAGNITUDE {
            Complex64::new(amp, 0.0)
        } else {
            *v * (amp / mag)
        };
    }
    Ok(out)
}

fn check_same(a: &Array2<Complex64>, others: &[&Array2<Complex64>]) -> Result<()> {
    if others.iter().any(|o| o.dim() != a.dim()) {
        return Err(Error::GridMismatch("update operands differ in shape".into()));
    }
    Ok(())
}

fn rpie_step(
    target: &Array2<Complex64>,
    other: &Array2<Complex64>,
    phi: &Array2<Complex64>,
    phi_new: &Array2<Complex64>,
    alpha: f64,
    what: &str,
) -> Result<Array2<Complex64>> {
    check_same(target, &[other, phi, phi_new])?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("rPIE weight must lie in (0, 1], got {alpha}")));
    }
    let max = other.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::Degenerate(format!("{what} is identically zero")));
    }
    let mut out = target.clone();
    ndarray::Zip::from(&mut out)
        .and(other)
        .and(phi)
        .and(phi_new)
        .for_each(|t, o, p, pn| {
            *t += o.conj() * (pn - p) / ((1.0 - alpha) * o.norm_sqr() + alpha * max);
        });
    Ok(out)
}

/// `O + conj(P_j)(phi' - phi) / ((1 - a)|P_j|^2 + a max|P_j|^2)`.
pub fn rpie_update_object(
    object: &Array2<Complex64>,
    probe_j: &Array2<Complex64>,
    phi: &Array2<Complex64>,
    phi_new: &Array2<Complex64>,
    alpha: f64,
) -> Result<Array2<Complex64>> {
    rpie_step(object, probe_j, phi, phi_new, alpha, "shifted probe")
}

/// `P_j + conj(O)(phi' - phi) / ((1 - a)|O|^2 + a max|O|^2)`.
pub fn rpie_update_probe(
    probe_j: &Array2<Complex64>,
    object: &Array2<Complex64>,
    phi: &Array2<Complex64>,
    phi_new: &Array2<Complex64>,
    alpha: f64,
) -> Result<Array2<Complex64>> {
    rpie_step(probe_j, object, phi, phi_new, alpha, "object")
}

/// Seeded visiting order, drawn once and reused for every pass.
pub fn frame_order(count: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng::stream(seed, rng::FRAME_ORDER, 0));
    order
}

fn resolve_distance(frames: &FrameStack, config: &ReconConfig) -> f64 {
    config.distance_um.unwrap_or(frames.nominal_distance)
}

/// Runs `config.iterations` passes from `state`.
pub fn iterate(state: ReconState, frames: &FrameStack, trajectory: &ScanTrajectory, config: &ReconConfig) -> Result<ReconResult> {
    let distance = resolve_distance(frames, config);
    iterate_at(state, frames, trajectory, config, distance)
}

pub(crate) fn iterate_at(
    state: ReconState,
    frames: &FrameStack,
    trajectory: &ScanTrajectory,
    config: &ReconConfig,
    distance: f64,
) -> Result<ReconResult> {
    let start = Instant::now();
    config.validate()?;
    check_inputs(frames, trajectory)?;
    state.validate()?;
    let s = config.upsampling;
    let (mh, mw) = frames.frame_dim();
    if state.object.dim() != (mh * s, mw * s) {
        return Err(Error::GridMismatch(format!(
            "state grid {:?} is not {s} x the {mh}x{mw} frames",
            state.object.dim()
        )));
    }
    let pitch = state.object.pitch();
    let wavelength = state.object.wavelength();
    let kernel = PropagationKernel::new(mh * s, mw * s, pitch, wavelength, distance)?;
    let mut engine = Engine::new(&kernel, s, state.object.data(), state.probe.data());
    let update_probe = config.probe_mode == ProbeMode::Joint;

    let amplitudes: Vec<Vec<f64>> = frames
        .frames
        .iter()
        .map(|f| f.iter().map(|v| v.max(0.0).sqrt()).collect())
        .collect();
    let total: f64 = frames.frames.iter().map(|f| f.iter().map(|v| v.max(0.0)).sum::<f64>()).sum();
    if total == 0.0 {
        return Err(Error::Degenerate("all frames are zero".into()));
    }
    let shifts: Vec<(i64, i64)> = (0..frames.len()).map(|j| trajectory.grid_shift(j, s)).collect();
    let order = frame_order(frames.len(), config.order_seed);

    let beta = config.momentum;
    let use_object_momentum = beta > 0.0 && config.object_momentum;
    let use_probe_momentum = beta > 0.0 && config.probe_momentum && update_probe;
    let mut object_velocity = engine::to_planes(&state.object_velocity, s);
    let mut probe_velocity = engine::to_planes(&state.probe_velocity, s);
    let mut residuals = state.residuals;
    let first = state.iteration;

    for n in first..first + config.iterations {
        let previous_object = use_object_momentum.then(|| engine.object.clone());
        let previous_probe = use_probe_momentum.then(|| engine.probe.clone());
        if engine.max_probe() == 0.0 {
            return Err(Error::Degenerate("probe is identically zero".into()));
        }
        if update_probe && engine.max_object() == 0.0 {
            return Err(Error::Degenerate("object is identically zero".into()));
        }
        let mut residual = 0.0;
        for &j in &order {
            let outcome = engine.update(shifts[j], &amplitudes[j], config.alpha_object, config.alpha_probe, update_probe);
            residual += outcome.residual;
            for (ok, what) in [(outcome.object_finite, "object"), (outcome.probe_finite, "probe")] {
                if !ok {
                    return Err(Error::NonFinite { what, iteration: n, frame: j });
                }
            }
        }
        residuals.push(residual / total);
        if let Some(prev) = previous_object {
            apply_momentum(&mut engine.object, &prev, &mut object_velocity, beta);
        }
        if let Some(prev) = previous_probe {
            apply_momentum(&mut engine.probe, &prev, &mut probe_velocity, beta);
        }
        if use_object_momentum || use_probe_momentum {
            engine.refresh_maxima();
            if !(engine.max_object().is_finite() && engine.max_probe().is_finite()) {
                return Err(Error::NonFinite {
                    what: "momentum step",
                    iteration: n,
                    frame: order.last().copied().unwrap_or(0),
                });
            }
        }
        log::debug!("pass {} residual {:.6e}", n + 1, residuals.last().unwrap());
    }

    Ok(ReconResult {
        object: ComplexField::new(engine.object_grid(), pitch, wavelength)?,
        probe: ComplexField::new(engine.probe_grid(), pitch, wavelength)?,
        residual: *residuals.last().expect("at least one pass"),
        residuals,
        distance,
        trajectory: trajectory.clone(),
        autofocus: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// `v <- beta v + (x - x_prev); x <- x + beta v`.
fn apply_momentum(x: &mut [Complex64], previous: &[Complex64], velocity: &mut [Complex64], beta: f64) {
    for ((xv, p), v) in x.iter_mut().zip(previous).zip(velocity.iter_mut()) {
        *v = *v * beta + (*xv - p);
        *xv += *v * beta;
    }
}

/// Full pipeline: optional autofocus, initialization, passes. In fixed-probe
/// mode `probe` must be supplied and replaces the initial probe estimate.
pub fn reconstruct(
    frames: &FrameStack,
    trajectory: &ScanTrajectory,
    config: &ReconConfig,
    probe: Option<&ComplexField>,
) -> Result<ReconResult> {
    let start = Instant::now();
    config.validate()?;
    let mut state = initialize(frames, trajectory, config.upsampling)?;
    match (config.probe_mode, probe) {
        (_, Some(p)) => {
            if p.dim() != state.probe.dim() {
                return Err(Error::GridMismatch(format!(
                    "supplied probe is {:?}, reconstruction grid is {:?}",
                    p.dim(),
                    state.probe.dim()
                )));
            }
            state.probe = state.probe.with_data(p.data().clone())?;
        }
        (ProbeMode::Fixed, None) => return Err(Error::invalid("fixed-probe mode needs a probe")),
        (ProbeMode::Joint, None) => {}
    }
    let focus = match &config.autofocus {
        Some(spec) => Some(autofocus(frames, trajectory, config, spec, probe)?),
        None => None,
    };
    let distance = focus.as_ref().map_or_else(|| resolve_distance(frames, config), |f| f.distance);
    let mut result = iterate_at(state, frames, trajectory, config, distance)?;
    result.autofocus = focus;
    result.wall_time_s = start.elapsed().as_secs_f64();
    Ok(result)
}
