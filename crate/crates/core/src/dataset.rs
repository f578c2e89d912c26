//! On-disk formats: dataset directories, 16-bit PGM frames, `SPTY` complex
//! rasters and trajectory JSON.
//!
//! ```text
//! <dataset>/manifest.json
//! <dataset>/frames/frame_0000.pgm ...
//! <dataset>/truth/object.spty        (optional ground truth)
//! <dataset>/truth/probe.spty
//! <dataset>/truth/trajectory.json
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::trajectory::ScanTrajectory;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_DIR: &str = "truth";
const SPTY_MAGIC: &[u8; 4] = b"SPTY";

/// Measured intensity frames plus acquisition metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    pub frames: Vec<Array2<f64>>,
    /// Micrometers.
    pub detector_pitch: f64,
    /// Micrometers.
    pub wavelength: f64,
    /// Micrometers.
    pub nominal_distance: f64,
    /// Acquisition index of each frame.
    pub order: Vec<usize>,
}

impl FrameStack {
    pub fn new(frames: Vec<Array2<f64>>, detector_pitch: f64, wavelength: f64, nominal_distance: f64) -> Result<Self> {
        let order = (0..frames.len()).collect();
        let stack = Self {
            frames,
            detector_pitch,
            wavelength,
            nominal_distance,
            order,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        crate::field::check_optics(self.detector_pitch, self.wavelength)?;
        if !self.nominal_distance.is_finite() {
            return Err(Error::invalid("nominal distance must be finite"));
        }
        let Some(first) = self.frames.first() else {
            return Err(Error::invalid("frame stack is empty"));
        };
        let dim = first.dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::invalid("frames must be non-empty"));
        }
        for (j, f) in self.frames.iter().enumerate() {
            if f.dim() != dim {
                return Err(Error::GridMismatch(format!("frame {j} is {:?}, frame 0 is {dim:?}", f.dim())));
            }
            if !f.iter().all(|v| v.is_finite() && *v >= 0.0) {
                return Err(Error::invalid(format!("frame {j} has negative or non-finite intensities")));
            }
        }
        if self.order.len() != self.frames.len() {
            return Err(Error::invalid("frame order tags do not match frame count"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(rows, cols)` of every frame.
    pub fn frame_dim(&self) -> (usize, usize) {
        self.frames[0].dim()
    }

    /// The frames listed in `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            frames: indices.iter().map(|&j| self.frames[j].clone()).collect(),
            order: indices.iter().map(|&j| self.order[j]).collect(),
            detector_pitch: self.detector_pitch,
            wavelength: self.wavelength,
            nominal_distance: self.nominal_distance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub wavelength_um: f64,
    pub detector_pitch_um: f64,
    pub nominal_distance_um: f64,
    pub frame_count: usize,
    pub frame_size: usize,
    pub upsampling_hint: usize,
    /// Physical intensity = pixel value / `intensity_scale`.
    pub intensity_scale: f64,
    /// Frame files relative to the dataset directory, in acquisition order.
    pub frames: Vec<String>,
}

/// Ground truth kept next to a simulated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub object: ComplexField,
    pub probe: ComplexField,
    pub trajectory: ScanTrajectory,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Encodes a 16-bit binary PGM (`P5`, maxval 65535, big-endian samples).
pub fn encode_pgm16(pixels: &Array2<u16>) -> Vec<u8> {
    let (rows, cols) = pixels.dim();
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    out.reserve(rows * cols * 2);
    for v in pixels.iter() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Encodes an 8-bit binary PGM.
pub fn encode_pgm8(pixels: &Array2<u8>) -> Vec<u8> {
    let (rows, cols) = pixels.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(pixels.iter().copied());
    out
}

/// Decodes a binary PGM with any maxval up to 65535. Returns raw sample
/// values and the maxval.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(Array2<u16>, u16), String> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII PGM header")?);
    }
    if tokens[0] != "P5" {
        return Err(format!("expected binary PGM magic P5, found {:?}", tokens[0]));
    }
    let parse = |t: &str, what: &str| t.parse::<usize>().map_err(|_| format!("bad PGM {what}: {t:?}"));
    let cols = parse(tokens[1], "width")?;
    let rows = parse(tokens[2], "height")?;
    let maxval = parse(tokens[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("unsupported PGM maxval {maxval}"));
    }
    pos += 1; // single whitespace after maxval
    let width = if maxval < 256 { 1 } else { 2 };
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() < rows * cols * width {
        return Err(format!("PGM pixel data truncated: need {} bytes, have {}", rows * cols * width, data.len()));
    }
    let pixels = Array2::from_shape_fn((rows, cols), |(r, c)| {
        let i = (r * cols + c) * width;
        if width == 1 {
            data[i] as u16
        } else {
            u16::from_be_bytes([data[i], data[i + 1]])
        }
    });
    Ok((pixels, maxval as u16))
}

pub fn read_pgm(path: &Path) -> Result<(Array2<u16>, u16)> {
    decode_pgm(&read_file(path)?).map_err(|m| Error::format(path, m))
}

/// Encodes a complex raster: `"SPTY"`, `u32` rows, `u32` cols (little-endian),
/// then interleaved little-endian `f64` real/imaginary parts in row-major order.
pub fn encode_spty(data: &Array2<Complex64>) -> Vec<u8> {
    let (rows, cols) = data.dim();
    let mut out = Vec::with_capacity(12 + rows * cols * 16);
    out.extend_from_slice(SPTY_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in data.iter() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn decode_spty(bytes: &[u8]) -> std::result::Result<Array2<Complex64>, String> {
    if bytes.len() < 12 || &bytes[..4] != SPTY_MAGIC {
        return Err("missing SPTY header".into());
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != rows * cols * 16 {
        return Err(format!("SPTY body is {} bytes, expected {}", body.len(), rows * cols * 16));
    }
    let f = |i: usize| f64::from_le_bytes(body[i..i + 8].try_into().unwrap());
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| {
        let i = (r * cols + c) * 16;
        Complex64::new(f(i), f(i + 8))
    }))
}

pub fn write_spty(path: &Path, data: &Array2<Complex64>) -> Result<()> {
    write_file(path, &encode_spty(data))
}

pub fn read_spty(path: &Path) -> Result<Array2<Complex64>> {
    decode_spty(&read_file(path)?).map_err(|m| Error::format(path, m))
}

/// Trajectory files are either a bare JSON array of `[x, y]` pairs or a
/// full [`ScanTrajectory`] object.
pub fn read_trajectory(path: &Path) -> Result<ScanTrajectory> {
    let value: serde_json::Value = read_json(path)?;
    let traj = if value.is_array() {
        let shifts: Vec<[f64; 2]> = serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))?;
        ScanTrajectory {
            sharpness: vec![None; shifts.len()],
            shifts,
            reference: 0,
        }
    } else {
        serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))?
    };
    traj.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(traj)
}

pub fn write_trajectory(path: &Path, trajectory: &ScanTrajectory) -> Result<()> {
    write_json(path, trajectory)
}

/// Writes the bare `[[x, y], ...]` form used for the ground-truth sidecar.
pub fn write_trajectory_array(path: &Path, trajectory: &ScanTrajectory) -> Result<()> {
    write_json(path, &trajectory.shifts)
}

fn frame_name(j: usize) -> String {
    format!("frames/frame_{j:04}.pgm")
}

/// Writes a dataset directory. Frames are quantized to 16 bits with a single
/// scale chosen so the brightest pixel of the stack maps to 65535.
pub fn write_dataset(dir: &Path, stack: &FrameStack, upsampling_hint: usize, truth: Option<&Truth>) -> Result<Manifest> {
    stack.validate()?;
    let (rows, cols) = stack.frame_dim();
    if rows != cols {
        return Err(Error::invalid(format!("frames must be square, got {rows}x{cols}")));
    }
    fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(dir, e))?;
    let peak = stack.frames.iter().flat_map(|f| f.iter()).fold(0.0f64, |m, &v| m.max(v));
    let intensity_scale = if peak > 0.0 { 65535.0 / peak } else { 1.0 };
    let mut names = Vec::with_capacity(stack.len());
    for (j, frame) in stack.frames.iter().enumerate() {
        let name = frame_name(j);
        let pixels = frame.mapv(|v| (v * intensity_scale).round().clamp(0.0, 65535.0) as u16);
        write_file(&dir.join(&name), &encode_pgm16(&pixels))?;
        names.push(name);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        wavelength_um: stack.wavelength,
        detector_pitch_um: stack.detector_pitch,
        nominal_distance_um: stack.nominal_distance,
        frame_count: stack.len(),
        frame_size: rows,
        upsampling_hint,
        intensity_scale,
        frames: names,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    if let Some(truth) = truth {
        write_truth(&dir.join(TRUTH_DIR), truth)?;
    }
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = read_json(&path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::format(&path, format!("unsupported schema_version {}", manifest.schema_version)));
    }
    if manifest.frames.len() != manifest.frame_count {
        return Err(Error::format(&path, "frame list length differs from frame_count"));
    }
    if !(manifest.intensity_scale.is_finite() && manifest.intensity_scale > 0.0) {
        return Err(Error::format(&path, "intensity_scale must be positive"));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, FrameStack)> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")));
    }
    let manifest = read_manifest(dir)?;
    let mut frames = Vec::with_capacity(manifest.frame_count);
    for name in &manifest.frames {
        let path = dir.join(name);
        let (pixels, _) = read_pgm(&path)?;
        if pixels.dim() != (manifest.frame_size, manifest.frame_size) {
            return Err(Error::format(&path, format!("frame is {:?}, manifest says {}", pixels.dim(), manifest.frame_size)));
        }
        frames.push(pixels.mapv(|p| p as f64 / manifest.intensity_scale));
    }
    let stack = FrameStack::new(frames, manifest.detector_pitch_um, manifest.wavelength_um, manifest.nominal_distance_um)?;
    Ok((manifest, stack))
}

pub fn write_truth(dir: &Path, truth: &Truth) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_spty(&dir.join("object.spty"), truth.object.data())?;
    write_spty(&dir.join("probe.spty"), truth.probe.data())?;
    write_trajectory_array(&dir.join("trajectory.json"), &truth.trajectory)
}

/// Reads a truth sidecar; `pitch` and `wavelength` describe the high-resolution grid.
pub fn read_truth(dir: &Path, pitch: f64, wavelength: f64) -> Result<Truth> {
    let object = ComplexField::new(read_spty(&dir.join("object.spty"))?, pitch, wavelength)?;
    let probe = ComplexField::new(read_spty(&dir.join("probe.spty"))?, pitch, wavelength)?;
    let trajectory = read_trajectory(&dir.join("trajectory.json"))?;
    Ok(Truth {
        object,
        probe,
        trajectory,
    })
}

/// Path of the truth sidecar inside a dataset directory.
pub fn truth_dir(dataset: &Path) -> PathBuf {
    dataset.join(TRUTH_DIR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stack() -> FrameStack {
        let frames = (0..3)
            .map(|j| Array2::from_shape_fn((8, 8), |(r, c)| ((r * 8 + c + j) % 7) as f64 * 0.37))
            .collect();
        FrameStack::new(frames, 1.67, 0.532, 500.0).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let original = stack();
        let manifest = write_dataset(dir.path(), &original, 3, None).unwrap();
        assert_eq!(manifest.wavelength_um, 0.532);
        assert_eq!(manifest.detector_pitch_um, 1.67);
        let (_, first) = read_dataset(dir.path()).unwrap();
        for (a, b) in first.frames.iter().zip(&original.frames) {
            let tol = 0.5 / manifest.intensity_scale + 1e-12;
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol));
        }
        // quantized frames survive a second write/read bit for bit
        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(dir2.path(), &first, 3, None).unwrap();
        let (_, second) = read_dataset(dir2.path()).unwrap();
        assert_eq!(first.frames, second.frames);
        for name in &manifest.frames {
            assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(dir2.path().join(name)).unwrap());
        }
    }

    #[test]
    fn pgm_header_is_p5_big_endian() {
        let px = Array2::from_shape_vec((1, 2), vec![0x0102u16, 0xfffe]).unwrap();
        let bytes = encode_pgm16(&px);
        assert_eq!(&bytes[..], b"P5\n2 1\n65535\n\x01\x02\xff\xfe");
        let (back, maxval) = decode_pgm(&bytes).unwrap();
        assert_eq!(back, px);
        assert_eq!(maxval, 65535);
    }

    #[test]
    fn pgm_with_comment_and_8bit() {
        let bytes = b"P5\n# made by hand\n3 1\n255\n\x00\x7f\xff";
        let (px, maxval) = decode_pgm(bytes).unwrap();
        assert_eq!(maxval, 255);
        assert_eq!(px.into_raw_vec_and_offset().0, vec![0, 127, 255]);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn spty_header_layout() {
        let data = Array2::from_elem((2, 3), Complex64::new(1.5, -2.0));
        let bytes = encode_spty(&data);
        assert_eq!(&bytes[..4], b"SPTY");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1.5);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), -2.0);
        assert!(decode_spty(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn missing_dataset_names_path() {
        let err = read_dataset(Path::new("/definitely/not/here")).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here"));
    }

    #[test]
    fn trajectory_accepts_bare_array() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        fs::write(&path, "[[0, 0], [1.5, -2]]").unwrap();
        let t = read_trajectory(&path).unwrap();
        assert_eq!(t.shifts, vec![[0.0, 0.0], [1.5, -2.0]]);
    }

    #[test]
    fn rejects_negative_frames() {
        let mut s = stack();
        s.frames[1][[0, 0]] = -1.0;
        assert!(s.validate().is_err());
    }

    proptest! {
        #[test]
        fn spty_round_trip(values in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..40)) {
            let n = values.len();
            let data = Array2::from_shape_vec((1, n), values.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap();
            prop_assert_eq!(decode_spty(&encode_spty(&data)).unwrap(), data);
        }
    }
}
