//! Complex wavefields on a regular grid and the operations every other module
//! is built from: unitary DFT, angular-spectrum propagation, Fourier-domain
//! resampling and toroidal shifts.
//!
//! The boundary model is periodic throughout. A grid of `H x W` samples at
//! spacing `pitch` represents one period of an infinite field.

mod dft;
mod propagate;
mod resample;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftDirection;

use crate::error::{Error, Result};

pub use dft::{frequency, signed_index, Dft2, Dft2Pair};
pub use propagate::{propagate, PropagationKernel, Propagator};
pub use resample::{
    circular_shift, fourier_upsample, fourier_upsample_real, shift_array, subpixel_shift,
    subpixel_shift_real, upsample_field,
};

/// A sampled complex wavefield.
///
/// `pitch` and `wavelength` are in micrometers. Row index is `y`, column index is `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    data: Array2<Complex64>,
    pitch: f64,
    wavelength: f64,
}

impl ComplexField {
    pub fn new(data: Array2<Complex64>, pitch: f64, wavelength: f64) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("field must be non-empty, got {h}x{w}")));
        }
        check_optics(pitch, wavelength)?;
        if !data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::invalid("field contains non-finite samples"));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            pitch,
            wavelength,
        })
    }

    pub fn constant(
        rows: usize,
        cols: usize,
        value: Complex64,
        pitch: f64,
        wavelength: f64,
    ) -> Result<Self> {
        Self::new(Array2::from_elem((rows, cols), value), pitch, wavelength)
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        pitch: f64,
        wavelength: f64,
        f: impl FnMut((usize, usize)) -> Complex64,
    ) -> Result<Self> {
        Self::new(Array2::from_shape_fn((rows, cols), f), pitch, wavelength)
    }

    /// Same pitch and wavelength, new samples.
    pub fn with_data(&self, data: Array2<Complex64>) -> Result<Self> {
        Self::new(data, self.pitch, self.wavelength)
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    /// Mutable access to the samples. Callers are responsible for keeping them finite.
    pub fn data_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// `(rows, cols)`.
    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm_sqr())
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            data: self.data.mapv(|v| v * c),
            pitch: self.pitch,
            wavelength: self.wavelength,
        }
    }
}

pub(crate) fn check_optics(pitch: f64, wavelength: f64) -> Result<()> {
    if !(pitch.is_finite() && pitch > 0.0) {
        return Err(Error::invalid(format!("pitch must be positive, got {pitch}")));
    }
    if !(wavelength.is_finite() && wavelength > 0.0) {
        return Err(Error::invalid(format!(
            "wavelength must be positive, got {wavelength}"
        )));
    }
    Ok(())
}

/// Unitary forward DFT. The result keeps the input's pitch and wavelength as metadata.
pub fn dft2_forward(field: &ComplexField) -> ComplexField {
    ComplexField {
        data: dft::transform(&field.data, FftDirection::Forward),
        pitch: field.pitch,
        wavelength: field.wavelength,
    }
}

/// Unitary inverse DFT; exact inverse of [`dft2_forward`] up to rounding.
pub fn dft2_inverse(field: &ComplexField) -> ComplexField {
    ComplexField {
        data: dft::transform(&field.data, FftDirection::Inverse),
        pitch: field.pitch,
        wavelength: field.wavelength,
    }
}

/// Array-level unitary transforms for callers that do not carry optics metadata.
pub fn dft2_array(grid: &Array2<Complex64>, inverse: bool) -> Array2<Complex64> {
    let direction = if inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    dft::transform(grid, direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rows: usize, cols: usize, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexField::from_fn(rows, cols, 1.0, 0.5, |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .unwrap()
    }

    #[test]
    fn constant_field_has_only_dc() {
        let c = Complex64::new(0.7, -0.2);
        let f = ComplexField::constant(6, 10, c, 1.0, 0.5).unwrap();
        let spec = dft2_forward(&f);
        let dc = spec.data()[[0, 0]];
        assert!((dc - c * 60f64.sqrt()).norm() < 1e-12);
        for ((r, col), v) in spec.data().indexed_iter() {
            if (r, col) != (0, 0) {
                assert!(v.norm() < 1e-12, "bin ({r},{col}) = {v}");
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let f = random_field(12, 18, 1);
        let back = dft2_inverse(&dft2_forward(&f));
        let err: f64 = (back.data() - f.data()).iter().map(|v| v.norm_sqr()).sum();
        assert!((err / f.energy()).sqrt() < 1e-12);
    }

    #[test]
    fn parseval() {
        let f = random_field(15, 16, 2);
        let spec = dft2_forward(&f);
        assert!(((spec.energy() - f.energy()) / f.energy()).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_metadata() {
        let z = Array2::from_elem((2, 2), Complex64::new(1.0, 0.0));
        assert!(ComplexField::new(z.clone(), 0.0, 0.5).is_err());
        assert!(ComplexField::new(z.clone(), 1.0, -0.5).is_err());
        assert!(ComplexField::new(Array2::zeros((0, 3)), 1.0, 0.5).is_err());
        let mut bad = z;
        bad[[0, 1]] = Complex64::new(f64::NAN, 0.0);
        assert!(ComplexField::new(bad, 1.0, 0.5).is_err());
    }

    #[test]
    fn frequency_grid_ordering() {
        assert_eq!(
            (0..6).map(|k| signed_index(k, 6)).collect::<Vec<_>>(),
            vec![0, 1, 2, -3, -2, -1]
        );
        assert_eq!(
            (0..5).map(|k| signed_index(k, 5)).collect::<Vec<_>>(),
            vec![0, 1, 2, -2, -1]
        );
        assert!((frequency(3, 6, 2.0) + 0.25).abs() < 1e-15);
    }
}
