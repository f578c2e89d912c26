//! Synthetic datasets that follow the lensless speckle-scanning forward model
//!
//! ```text
//! I_j = | (O * P(. - shift_j)) propagated by d |^2, sampled every s-th high-res pixel
//! ```
//!
//! Object and probe live on the same `sM x sM` high-resolution grid and the
//! probe is shifted toroidally by whole high-resolution samples.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, FrameStack, Truth};
use crate::error::{Error, Result};
use crate::field::{self, ComplexField, Propagator};
use crate::metrics::Region;
use crate::rng;
use crate::trajectory::ScanTrajectory;

pub use crate::dataset::write_dataset;

/// Physical acquisition parameters. Defaults follow the bench-top prototype:
/// 532 nm illumination, 1.67 um detector pixels, 0.5 mm object-sensor gap and
/// three-fold sub-pixel upsampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Optics {
    pub wavelength_um: f64,
    pub detector_pitch_um: f64,
    pub distance_um: f64,
    pub upsampling: usize,
}

impl Default for Optics {
    fn default() -> Self {
        Self {
            wavelength_um: 0.532,
            detector_pitch_um: 1.67,
            distance_um: 500.0,
            upsampling: 3,
        }
    }
}

impl Optics {
    pub fn high_res_pitch(&self) -> f64 {
        self.detector_pitch_um / self.upsampling as f64
    }

    pub fn validate(&self) -> Result<()> {
        field::check_optics(self.detector_pitch_um, self.wavelength_um)?;
        if self.upsampling < 1 {
            return Err(Error::invalid("upsampling must be at least 1"));
        }
        if !self.distance_um.is_finite() {
            return Err(Error::invalid("distance must be finite"));
        }
        Ok(())
    }
}

/// Where the object comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectSource {
    /// Clear field, amplitude 1 and phase 0.
    Uniform,
    /// Two three-bar groups (one of vertical, one of horizontal bars) at the
    /// grid centre, on a clear background.
    Bars {
        /// Bar period in high-resolution pixels.
        period: usize,
        /// Amplitude transmission of the bars.
        #[serde(default = "default_bar_amplitude")]
        bar_amplitude: f64,
    },
    /// Pure-phase disk centred on the grid.
    PhaseDisk {
        /// Phase inside the disk, radians.
        phase_height: f64,
        /// Radius as a fraction of the smaller grid dimension.
        #[serde(default = "default_disk_radius")]
        radius_fraction: f64,
    },
    /// Randomly placed, non-overlapping soft-edged disks absorbing and
    /// retarding light, loosely resembling a blood smear.
    Cells {
        seed: u64,
        #[serde(default = "default_cell_radius")]
        radius_um: f64,
        /// Fraction of the area to cover.
        #[serde(default = "default_cell_fill")]
        fill: f64,
        /// Amplitude transmission at a cell centre.
        #[serde(default = "default_cell_amplitude")]
        amplitude: f64,
        /// Phase delay at a cell centre, radians.
        #[serde(default = "default_cell_phase")]
        phase: f64,
    },
    /// 8- or 16-bit PGM mapped to amplitude in [0, 1]; phase 0.
    AmplitudeImage { path: PathBuf },
    /// PGM mapped to phase in `[0, phase_range]`; amplitude 1.
    PhaseImage { path: PathBuf, phase_range: f64 },
}

fn default_bar_amplitude() -> f64 {
    0.3
}
fn default_disk_radius() -> f64 {
    0.2
}
fn default_cell_radius() -> f64 {
    3.75
}
fn default_cell_fill() -> f64 {
    0.3
}
fn default_cell_amplitude() -> f64 {
    0.6
}
fn default_cell_phase() -> f64 {
    1.0
}

impl Default for ObjectSource {
    fn default() -> Self {
        ObjectSource::Cells {
            seed: 11,
            radius_um: default_cell_radius(),
            fill: default_cell_fill(),
            amplitude: default_cell_amplitude(),
            phase: default_cell_phase(),
        }
    }
}

/// Scene: detector frame size `M` and the object on the `sM x sM` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub frame_size: usize,
    pub object: ObjectSource,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            frame_size: 128,
            object: ObjectSource::default(),
        }
    }
}

/// Orientation of a bar group: `Vertical` bars vary along `x` (columns).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarOrientation {
    Vertical,
    Horizontal,
}

/// A three-bar group and the region that spans exactly its three periods.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarGroup {
    pub region: Region,
    pub orientation: BarOrientation,
    pub period: usize,
}

/// Layout of the two bar groups produced by [`ObjectSource::Bars`].
pub fn bar_groups(rows: usize, cols: usize, period: usize) -> Result<[BarGroup; 2]> {
    if period < 2 {
        return Err(Error::invalid(format!("bar period must be at least 2 pixels, got {period}")));
    }
    let span = 3 * period;
    let length = 10 * period;
    let gap = 2 * period;
    if 2 * span.max(length) + 2 * gap > rows.min(cols) {
        return Err(Error::invalid(format!("bar period {period} too large for a {rows}x{cols} grid")));
    }
    let (cy, cx) = (rows / 2, cols / 2);
    let vertical = BarGroup {
        region: Region::new(cy - length / 2, cx - gap / 2 - span, length, span),
        orientation: BarOrientation::Vertical,
        period,
    };
    let horizontal = BarGroup {
        region: Region::new(cy - span / 2, cx + gap / 2, span, length),
        orientation: BarOrientation::Horizontal,
        period,
    };
    Ok([vertical, horizontal])
}

fn smooth_step(r: f64, radius: f64, width: f64) -> f64 {
    0.5 * (1.0 - ((r - radius) / width).tanh())
}

fn load_normalized_image(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let (pixels, maxval) = dataset::read_pgm(path)?;
    if pixels.dim() != (rows, cols) {
        return Err(Error::invalid(format!(
            "{}: image is {:?}, object grid is {rows}x{cols}",
            path.display(),
            pixels.dim()
        )));
    }
    Ok(pixels.mapv(|p| p as f64 / maxval as f64))
}

/// Builds the complex object `amplitude * exp(i phase)` on a `rows x cols` grid.
pub fn make_object(source: &ObjectSource, rows: usize, cols: usize, pitch: f64, wavelength: f64) -> Result<ComplexField> {
    let unit = Complex64::new(1.0, 0.0);
    let data = match source {
        ObjectSource::Uniform => Array2::from_elem((rows, cols), unit),
        ObjectSource::Bars { period, bar_amplitude } => {
            if !(0.0..=1.0).contains(bar_amplitude) {
                return Err(Error::invalid("bar amplitude must lie in [0, 1]"));
            }
            let groups = bar_groups(rows, cols, *period)?;
            let width = (*period / 2).max(1);
            let mut data = Array2::from_elem((rows, cols), unit);
            for g in groups {
                for r in g.region.row_range() {
                    for c in g.region.col_range() {
                        let along = match g.orientation {
                            BarOrientation::Vertical => c - g.region.col0,
                            BarOrientation::Horizontal => r - g.region.row0,
                        };
                        if along % g.period < width {
                            data[[r, c]] = Complex64::new(*bar_amplitude, 0.0);
                        }
                    }
                }
            }
            data
        }
        ObjectSource::PhaseDisk { phase_height, radius_fraction } => {
            if !(phase_height.abs() <= PI) {
                return Err(Error::invalid("disk phase must lie in [-pi, pi]"));
            }
            if !(*radius_fraction > 0.0 && *radius_fraction <= 0.5) {
                return Err(Error::invalid("disk radius fraction must lie in (0, 0.5]"));
            }
            let radius = radius_fraction * rows.min(cols) as f64;
            let (cy, cx) = (rows as f64 / 2.0, cols as f64 / 2.0);
            let inside = Complex64::from_polar(1.0, *phase_height);
            Array2::from_shape_fn((rows, cols), |(r, c)| {
                let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
                if d <= radius {
                    inside
                } else {
                    unit
                }
            })
        }
        ObjectSource::Cells {
            seed,
            radius_um,
            fill,
            amplitude,
            phase,
        } => {
            if !(0.0..=1.0).contains(amplitude) || !(phase.abs() <= PI) {
                return Err(Error::invalid("cell amplitude must lie in [0, 1] and phase in [-pi, pi]"));
            }
            if !(*fill > 0.0 && *fill < 0.6) {
                return Err(Error::invalid("cell fill fraction must lie in (0, 0.6)"));
            }
            let radius = radius_um / pitch;
            if radius < 2.0 {
                return Err(Error::invalid("cells must be at least two pixels in radius"));
            }
            let centres = place_cells(*seed, rows, cols, radius, *fill);
            let mut profile = Array2::<f64>::zeros((rows, cols));
            let reach = (radius + 4.0).ceil() as i64;
            for &(cy, cx) in &centres {
                for dy in -reach..=reach {
                    for dx in -reach..=reach {
                        let r = (cy.floor() as i64 + dy).rem_euclid(rows as i64) as usize;
                        let c = (cx.floor() as i64 + dx).rem_euclid(cols as i64) as usize;
                        let ddy = cy.floor() + dy as f64 - cy;
                        let ddx = cx.floor() + dx as f64 - cx;
                        let d = (ddx * ddx + ddy * ddy).sqrt();
                        // slightly dimpled centre
                        let body = 1.0 - 0.25 * (1.0 - (d / radius).powi(2)).max(0.0);
                        let v = smooth_step(d, radius, 0.7) * body;
                        profile[[r, c]] = profile[[r, c]].max(v);
                    }
                }
            }
            profile.mapv(|p| Complex64::from_polar(1.0 - (1.0 - amplitude) * p, phase * p))
        }
        ObjectSource::AmplitudeImage { path } => load_normalized_image(path, rows, cols)?.mapv(|a| Complex64::new(a, 0.0)),
        ObjectSource::PhaseImage { path, phase_range } => {
            if !(*phase_range > 0.0 && *phase_range <= TAU) {
                return Err(Error::invalid("phase range must lie in (0, 2 pi]"));
            }
            load_normalized_image(path, rows, cols)?.mapv(|v| Complex64::from_polar(1.0, v * phase_range))
        }
    };
    ComplexField::new(data, pitch, wavelength)
}

fn place_cells(seed: u64, rows: usize, cols: usize, radius: f64, fill: f64) -> Vec<(f64, f64)> {
    let mut rng = rng::stream(seed, rng::SCENE, 0);
    let target = ((fill * (rows * cols) as f64) / (PI * radius * radius)).round() as usize;
    let min_sep = 2.0 * radius + 2.0;
    let mut centres: Vec<(f64, f64)> = Vec::with_capacity(target);
    let mut attempts = 0;
    while centres.len() < target && attempts < 200 * target.max(1) {
        attempts += 1;
        let cy = rng.random_range(0.0..rows as f64);
        let cx = rng.random_range(0.0..cols as f64);
        let clear = centres.iter().all(|&(y, x)| {
            let dy = (y - cy).abs().min(rows as f64 - (y - cy).abs());
            let dx = (x - cx).abs().min(cols as f64 - (x - cx).abs());
            dx * dx + dy * dy >= min_sep * min_sep
        });
        if clear {
            centres.push((cy, cx));
        }
    }
    centres
}

/// Random phase diffuser followed by free-space propagation to the object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffuserSpec {
    pub seed: u64,
    /// Correlation length of the phase screen, micrometers.
    pub feature_size_um: f64,
    /// Peak-to-peak phase excursion, radians.
    pub phase_depth_rad: f64,
    /// Diffuser-to-object distance, micrometers.
    pub distance_um: f64,
}

impl Default for DiffuserSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            feature_size_um: 4.0,
            phase_depth_rad: TAU,
            distance_um: 3000.0,
        }
    }
}

/// Speckle probe on the high-resolution grid.
///
/// The phase screen is white Gaussian noise smoothed by a Gaussian whose
/// autocorrelation has `1/e` half-width `feature_size_um`, then rank-mapped
/// to a uniform distribution on `[0, phase_depth_rad]`. The unit-amplitude
/// field `exp(i theta)` is propagated to the object plane.
pub fn make_speckle(spec: &DiffuserSpec, rows: usize, cols: usize, pitch: f64, wavelength: f64) -> Result<ComplexField> {
    field::check_optics(pitch, wavelength)?;
    if !(spec.feature_size_um >= pitch) {
        return Err(Error::invalid(format!(
            "diffuser feature size {} um is below the grid pitch {pitch} um",
            spec.feature_size_um
        )));
    }
    if !(spec.phase_depth_rad >= 0.0) {
        return Err(Error::invalid("phase depth must be non-negative"));
    }
    let mut rng = rng::stream(spec.seed, rng::DIFFUSER, 0);
    let noise = Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(v, 0.0)
    });
    let sigma = spec.feature_size_um / 2.0;
    let mut spectrum = field::dft2_array(&noise, false);
    for ((r, c), v) in spectrum.indexed_iter_mut() {
        let fy = field::frequency(r, rows, pitch);
        let fx = field::frequency(c, cols, pitch);
        *v *= (-2.0 * PI * PI * sigma * sigma * (fx * fx + fy * fy)).exp();
    }
    let smooth = field::dft2_array(&spectrum, true).mapv(|v| v.re);

    // rank transform to a uniform marginal; ties broken by position
    let mut order: Vec<usize> = (0..rows * cols).collect();
    let flat = smooth.as_slice().expect("standard layout");
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]).then(a.cmp(&b)));
    let n = order.len() as f64;
    let mut theta = vec![0.0; order.len()];
    for (rank, &idx) in order.iter().enumerate() {
        theta[idx] = spec.phase_depth_rad * (rank as f64 + 0.5) / n;
    }
    let screen = Array2::from_shape_vec((rows, cols), theta.into_iter().map(|t| Complex64::from_polar(1.0, t)).collect())
        .expect("shape matches");
    let screen = ComplexField::new(screen, pitch, wavelength)?;
    field::propagate(&screen, spec.distance_um)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScanPattern {
    #[default]
    RandomWalk,
    RasterWithJitter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    #[serde(rename = "J")]
    pub frames: usize,
    /// Mean distance between consecutive positions, detector pixels.
    pub mean_step: f64,
    /// Relative spread of the step length: each step is
    /// `mean_step * (1 + jitter * u)` with `u` uniform on `[-1, 1]`.
    pub jitter: f64,
    pub pattern: ScanPattern,
    pub seed: u64,
    /// Bound on `|x|` and `|y|`, detector pixels. `None` means `frame_size / 8`.
    pub max_excursion: Option<f64>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            frames: 100,
            mean_step: 2.5,
            jitter: 0.2,
            pattern: ScanPattern::RandomWalk,
            seed: 2,
            max_excursion: None,
        }
    }
}

/// Generates scan positions starting at `(0, 0)` and staying inside
/// `[-max_excursion, max_excursion]^2`.
pub fn make_trajectory(spec: &TrajectorySpec, max_excursion: f64) -> Result<ScanTrajectory> {
    if spec.frames < 1 {
        return Err(Error::invalid("trajectory needs at least one frame"));
    }
    if !(spec.mean_step > 0.0) {
        return Err(Error::invalid("mean step must be positive"));
    }
    if !(0.0..1.0).contains(&spec.jitter) {
        return Err(Error::invalid("jitter must lie in [0, 1)"));
    }
    let longest = spec.mean_step * (1.0 + spec.jitter);
    if !(max_excursion > 0.0) || longest > max_excursion {
        return Err(Error::invalid(format!(
            "steps up to {longest:.2} px do not fit inside the +/-{max_excursion:.2} px scan margin"
        )));
    }
    let mut rng = rng::stream(spec.seed, rng::TRAJECTORY, 0);
    let mut shifts = vec![[0.0, 0.0]];
    match spec.pattern {
        ScanPattern::RandomWalk => {
            for _ in 1..spec.frames {
                let [x, y] = *shifts.last().unwrap();
                let len = spec.mean_step * (1.0 + spec.jitter * rng.random_range(-1.0..=1.0));
                let mut next = None;
                for _ in 0..10_000 {
                    let angle = rng.random_range(0.0..TAU);
                    let (nx, ny) = (x + len * angle.cos(), y + len * angle.sin());
                    if nx.abs() <= max_excursion && ny.abs() <= max_excursion {
                        next = Some([nx, ny]);
                        break;
                    }
                }
                shifts.push(next.ok_or_else(|| Error::invalid("random walk could not stay inside the scan margin"))?);
            }
        }
        ScanPattern::RasterWithJitter => {
            let side = (spec.frames as f64).sqrt().ceil() as usize;
            let extent = (side - 1) as f64 * spec.mean_step;
            if extent + spec.jitter * spec.mean_step > max_excursion {
                return Err(Error::invalid(format!(
                    "a {side}x{side} raster with {:.2} px steps exceeds the +/-{max_excursion:.2} px scan margin",
                    spec.mean_step
                )));
            }
            for j in 1..spec.frames {
                let row = j / side;
                let col = if row % 2 == 0 { j % side } else { side - 1 - j % side };
                let half = 0.5 * spec.jitter * spec.mean_step;
                shifts.push([
                    col as f64 * spec.mean_step + rng.random_range(-half..=half),
                    row as f64 * spec.mean_step + rng.random_range(-half..=half),
                ]);
            }
        }
    }
    ScanTrajectory::new(shifts)
}

fn check_grids(object: &ComplexField, probe: &ComplexField, s: usize) -> Result<()> {
    if object.dim() != probe.dim() {
        return Err(Error::GridMismatch(format!("object is {:?}, probe is {:?}", object.dim(), probe.dim())));
    }
    if (object.pitch() - probe.pitch()).abs() > 1e-12 * object.pitch() {
        return Err(Error::GridMismatch("object and probe pitch differ".into()));
    }
    let (rows, cols) = object.dim();
    if s < 1 || rows % s != 0 || cols % s != 0 {
        return Err(Error::GridMismatch(format!("{rows}x{cols} grid is not divisible by upsampling {s}")));
    }
    Ok(())
}

/// Detector intensity `|P_d(O * shifted P)|^2` sampled at every `s`-th pixel
/// (offset 0) with a caller-owned propagator.
fn forward_with(prop: &mut Propagator, object: &ComplexField, probe: &ComplexField, shift: (i64, i64), s: usize) -> Result<Array2<f64>> {
    let shifted = field::shift_array(probe.data(), shift.0, shift.1);
    let mut exit = object.data() * &shifted;
    prop.apply(&mut exit)?;
    let (rows, cols) = exit.dim();
    Ok(Array2::from_shape_fn((rows / s, cols / s), |(r, c)| exit[[r * s, c * s]].norm_sqr()))
}

/// One detector frame for a probe shift given in detector pixels.
pub fn forward_frame(object: &ComplexField, probe: &ComplexField, shift: [f64; 2], distance: f64, s: usize) -> Result<Array2<f64>> {
    check_grids(object, probe, s)?;
    let (rows, cols) = object.dim();
    let mut prop = Propagator::new(rows, cols, object.pitch(), object.wavelength(), distance)?;
    let grid_shift = ((shift[0] * s as f64).round() as i64, (shift[1] * s as f64).round() as i64);
    forward_with(&mut prop, object, probe, grid_shift, s)
}

/// All frames of a scan; frames are independent and computed in parallel.
pub fn simulate_frames(object: &ComplexField, probe: &ComplexField, trajectory: &ScanTrajectory, distance: f64, s: usize) -> Result<Vec<Array2<f64>>> {
    check_grids(object, probe, s)?;
    let (rows, cols) = object.dim();
    let (pitch, wavelength) = (object.pitch(), object.wavelength());
    Propagator::new(rows, cols, pitch, wavelength, distance)?;
    (0..trajectory.len())
        .into_par_iter()
        .map_init(
            || Propagator::new(rows, cols, pitch, wavelength, distance).expect("validated above"),
            |prop, j| forward_with(prop, object, probe, trajectory.grid_shift(j, s), s),
        )
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Mean photon count of a pixel at the stack's mean intensity; `None` disables shot noise.
    pub photons: Option<f64>,
    /// Standard deviation of additive Gaussian read noise, in intensity units.
    pub read_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            photons: None,
            read_sigma: 0.0,
            seed: 3,
        }
    }
}

/// Poisson shot noise plus Gaussian read noise, clipped at zero. Frame `j`
/// uses its own stream so the result does not depend on evaluation order.
pub fn add_noise(frames: &[Array2<f64>], model: &NoiseModel) -> Result<Vec<Array2<f64>>> {
    if let Some(p) = model.photons {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::invalid("photon budget must be positive"));
        }
    }
    if !(model.read_sigma >= 0.0) {
        return Err(Error::invalid("read noise sigma must be non-negative"));
    }
    if model.photons.is_none() && model.read_sigma == 0.0 {
        return Ok(frames.to_vec());
    }
    let count: usize = frames.iter().map(|f| f.len()).sum();
    let mean = frames.iter().flat_map(|f| f.iter()).sum::<f64>() / count.max(1) as f64;
    let read = Normal::new(0.0, model.read_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(frames
        .par_iter()
        .enumerate()
        .map(|(j, frame)| {
            let mut rng = rng::stream(model.seed, rng::NOISE, j as u64);
            frame.mapv(|v| {
                let mut out = v;
                if let (Some(photons), true) = (model.photons, mean > 0.0) {
                    let lambda = v / mean * photons;
                    out = if lambda > 0.0 {
                        Poisson::new(lambda).expect("positive rate").sample(&mut rng) * mean / photons
                    } else {
                        0.0
                    };
                }
                if model.read_sigma > 0.0 {
                    out += read.sample(&mut rng);
                }
                out.max(0.0)
            })
        })
        .collect())
}

/// Everything needed to synthesize one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub optics: Optics,
    pub scene: SceneSpec,
    pub diffuser: DiffuserSpec,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseModel,
}

impl SimulationConfig {
    pub fn grid_size(&self) -> usize {
        self.scene.frame_size * self.optics.upsampling
    }

    pub fn max_excursion(&self) -> f64 {
        self.trajectory
            .max_excursion
            .unwrap_or(self.scene.frame_size as f64 / 8.0)
    }
}

/// A synthesized dataset with its ground truth.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub stack: FrameStack,
    pub truth: Truth,
}

pub fn simulate(config: &SimulationConfig) -> Result<Simulation> {
    config.optics.validate()?;
    if config.scene.frame_size < 8 {
        return Err(Error::invalid("frame size must be at least 8 pixels"));
    }
    let n = config.grid_size();
    let pitch = config.optics.high_res_pitch();
    let wavelength = config.optics.wavelength_um;
    let object = make_object(&config.scene.object, n, n, pitch, wavelength)?;
    let probe = make_speckle(&config.diffuser, n, n, pitch, wavelength)?;
    let trajectory = make_trajectory(&config.trajectory, config.max_excursion())?;
    let clean = simulate_frames(&object, &probe, &trajectory, config.optics.distance_um, config.optics.upsampling)?;
    let frames = add_noise(&clean, &config.noise)?;
    let stack = FrameStack::new(frames, config.optics.detector_pitch_um, wavelength, config.optics.distance_um)?;
    Ok(Simulation {
        stack,
        truth: Truth {
            object,
            probe,
            trajectory,
        },
    })
}

#[cfg(test)]
mod tests;
