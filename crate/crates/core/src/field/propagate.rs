//! Angular-spectrum free-space propagation.
//!
//! The transfer function for distance `d` is
//! `exp(i 2 pi d sqrt(1/lambda^2 - fx^2 - fy^2))` on the propagating disk and
//! zero outside it, so it has unit modulus wherever it is nonzero and the
//! kernels for `d` and `-d` are conjugate.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use super::dft::{frequency, Dft2Pair};
use super::{check_optics, ComplexField};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct PropagationKernel {
    values: Array2<Complex64>,
    propagating: Array2<bool>,
    distance: f64,
    pitch: f64,
    wavelength: f64,
}

impl PropagationKernel {
    pub fn new(rows: usize, cols: usize, pitch: f64, wavelength: f64, distance: f64) -> Result<Self> {
        check_optics(pitch, wavelength)?;
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("kernel grid must be non-empty"));
        }
        if !distance.is_finite() {
            return Err(Error::invalid(format!("distance must be finite, got {distance}")));
        }
        let inv_lambda_sq = 1.0 / (wavelength * wavelength);
        let fy: Vec<f64> = (0..rows).map(|k| frequency(k, rows, pitch)).collect();
        let fx: Vec<f64> = (0..cols).map(|k| frequency(k, cols, pitch)).collect();
        let mut values = Array2::zeros((rows, cols));
        let mut propagating = Array2::from_elem((rows, cols), false);
        for r in 0..rows {
            for c in 0..cols {
                let arg = inv_lambda_sq - fx[c] * fx[c] - fy[r] * fy[r];
                if arg >= 0.0 {
                    values[[r, c]] = Complex64::from_polar(1.0, 2.0 * PI * distance * arg.sqrt());
                    propagating[[r, c]] = true;
                }
            }
        }
        Ok(Self {
            values,
            propagating,
            distance,
            pitch,
            wavelength,
        })
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    /// `true` where `fx^2 + fy^2 <= 1/lambda^2`.
    pub fn propagating(&self) -> &Array2<bool> {
        &self.propagating
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Kernel for the opposite distance: the conjugate on the propagating set.
    pub fn reversed(&self) -> Self {
        Self {
            values: self.values.mapv(|v| v.conj()),
            propagating: self.propagating.clone(),
            distance: -self.distance,
            pitch: self.pitch,
            wavelength: self.wavelength,
        }
    }
}

/// Reusable propagator for one grid shape and distance.
pub struct Propagator {
    kernel: PropagationKernel,
    plans: Dft2Pair,
}

impl Propagator {
    pub fn new(rows: usize, cols: usize, pitch: f64, wavelength: f64, distance: f64) -> Result<Self> {
        Ok(Self {
            kernel: PropagationKernel::new(rows, cols, pitch, wavelength, distance)?,
            plans: Dft2Pair::new(rows, cols),
        })
    }

    pub fn kernel(&self) -> &PropagationKernel {
        &self.kernel
    }

    /// Propagates `data` in place.
    pub fn apply(&mut self, data: &mut Array2<Complex64>) -> Result<()> {
        if data.dim() != self.kernel.dim() {
            return Err(Error::GridMismatch(format!(
                "field is {:?}, propagator is {:?}",
                data.dim(),
                self.kernel.dim()
            )));
        }
        let buf = data.as_slice_mut().ok_or_else(|| Error::invalid("field must be contiguous"))?;
        self.plans.forward.process(buf);
        let kernel = self.kernel.values.as_slice().expect("standard layout");
        buf.iter_mut().zip(kernel).for_each(|(v, k)| *v *= k);
        self.plans.inverse.process(buf);
        Ok(())
    }

    pub fn propagate(&mut self, field: &ComplexField) -> Result<ComplexField> {
        if (field.pitch() - self.kernel.pitch).abs() > f64::EPSILON * field.pitch()
            || (field.wavelength() - self.kernel.wavelength).abs() > f64::EPSILON * field.wavelength()
        {
            return Err(Error::GridMismatch(
                "field sampling differs from the propagator's".into(),
            ));
        }
        let mut data = field.data().clone();
        self.apply(&mut data)?;
        field.with_data(data)
    }
}

/// Propagates `field` by `distance` micrometers (negative distances back-propagate).
pub fn propagate(field: &ComplexField, distance: f64) -> Result<ComplexField> {
    let (rows, cols) = field.dim();
    Propagator::new(rows, cols, field.pitch(), field.wavelength(), distance)?.propagate(field)
}
