//! Fourier-domain upsampling and toroidal shifts.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use super::dft::signed_index;
use super::{dft2_array, ComplexField};
use crate::error::{Error, Result};

/// Where bin `k` of an `n`-point spectrum lands in the `s*n`-point padded
/// spectrum. The Nyquist bin of an even length is split evenly between the
/// positive and negative edge so real inputs stay real.
fn pad_targets(k: usize, n: usize, s: usize) -> [(usize, f64); 2] {
    let big = s * n;
    let idx = signed_index(k, n);
    if n % 2 == 0 && k == n / 2 && s > 1 {
        [(n / 2, 0.5), (big - n / 2, 0.5)]
    } else {
        let t = if idx >= 0 { idx as usize } else { (big as i64 + idx) as usize };
        [(t, 1.0), (t, 0.0)]
    }
}

/// Band-limited interpolation onto an `s`-times finer grid by zero-padding the
/// spectrum. Output samples at `(s*r, s*c)` reproduce the input exactly.
pub fn fourier_upsample(image: &Array2<Complex64>, s: usize) -> Result<Array2<Complex64>> {
    if s < 1 {
        return Err(Error::invalid("upsampling factor must be at least 1"));
    }
    let (rows, cols) = image.dim();
    if s == 1 {
        return Ok(image.to_owned());
    }
    let spectrum = dft2_array(image, false);
    let mut padded = Array2::<Complex64>::zeros((s * rows, s * cols));
    for r in 0..rows {
        let tr = pad_targets(r, rows, s);
        for c in 0..cols {
            let tc = pad_targets(c, cols, s);
            let v = spectrum[[r, c]];
            for &(ri, rw) in &tr {
                if rw == 0.0 {
                    continue;
                }
                for &(ci, cw) in &tc {
                    if cw != 0.0 {
                        padded[[ri, ci]] += v * (rw * cw);
                    }
                }
            }
        }
    }
    // unitary transforms shrink lattice values by sqrt(s) per axis
    let mut out = dft2_array(&padded, true);
    let scale = s as f64;
    out.mapv_inplace(|v| v * scale);
    Ok(out)
}

/// Real-valued variant of [`fourier_upsample`]; the imaginary residue is dropped.
pub fn fourier_upsample_real(image: &Array2<f64>, s: usize) -> Result<Array2<f64>> {
    let complex = image.mapv(|v| Complex64::new(v, 0.0));
    Ok(fourier_upsample(&complex, s)?.mapv(|v| v.re))
}

/// Upsamples a field, dividing its pitch by `s`.
pub fn upsample_field(field: &ComplexField, s: usize) -> Result<ComplexField> {
    let data = fourier_upsample(field.data(), s)?;
    ComplexField::new(data, field.pitch() / s as f64, field.wavelength())
}

/// Toroidal shift: `out[y][x] = a[(y - dy) mod H][(x - dx) mod W]`.
pub fn shift_array<T: Clone>(a: &Array2<T>, dx: i64, dy: i64) -> Array2<T> {
    let (rows, cols) = a.dim();
    let sy = dy.rem_euclid(rows as i64) as usize;
    let sx = dx.rem_euclid(cols as i64) as usize;
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        a[[(r + rows - sy) % rows, (c + cols - sx) % cols]].clone()
    })
}

/// Integer toroidal shift of a field by `dx` columns and `dy` rows.
pub fn circular_shift(field: &ComplexField, dx: i64, dy: i64) -> ComplexField {
    field
        .with_data(shift_array(field.data(), dx, dy))
        .expect("shift preserves validity")
}

fn phase_ramp_shift(data: &Array2<Complex64>, dx: f64, dy: f64) -> Array2<Complex64> {
    let (rows, cols) = data.dim();
    let mut spectrum = dft2_array(data, false);
    for ((r, c), v) in spectrum.indexed_iter_mut() {
        let fy = signed_index(r, rows) as f64 / rows as f64;
        let fx = signed_index(c, cols) as f64 / cols as f64;
        *v *= Complex64::from_polar(1.0, -2.0 * PI * (fx * dx + fy * dy));
    }
    dft2_array(&spectrum, true)
}

/// Sub-sample shift by a Fourier phase ramp (same sign convention as
/// [`circular_shift`]; agrees with it for integer offsets).
pub fn subpixel_shift(field: &ComplexField, dx: f64, dy: f64) -> Result<ComplexField> {
    if !(dx.is_finite() && dy.is_finite()) {
        return Err(Error::invalid("shift must be finite"));
    }
    field.with_data(phase_ramp_shift(field.data(), dx, dy))
}

/// Real-valued variant of [`subpixel_shift`]; returns the real part.
pub fn subpixel_shift_real(image: &Array2<f64>, dx: f64, dy: f64) -> Array2<f64> {
    let complex = image.mapv(|v| Complex64::new(v, 0.0));
    phase_ramp_shift(&complex, dx, dy).mapv(|v| v.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(rows: usize, cols: usize, seed: u32) -> Array2<Complex64> {
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            let t = (r * 31 + c * 17 + seed as usize * 7) as f64;
            Complex64::new((t * 0.37).sin(), (t * 0.11).cos() - 0.3)
        })
    }

    #[test]
    fn factor_one_is_identity() {
        let g = grid(7, 8, 0);
        assert_eq!(fourier_upsample(&g, 1).unwrap(), g);
    }

    #[test]
    fn zero_factor_rejected() {
        assert!(fourier_upsample(&grid(4, 4, 0), 0).is_err());
    }

    #[test]
    fn constant_stays_constant() {
        let c = Complex64::new(2.5, -1.0);
        let up = fourier_upsample(&Array2::from_elem((6, 5), c), 3).unwrap();
        assert_eq!(up.dim(), (18, 15));
        assert!(up.iter().all(|v| (v - c).norm() < 1e-12));
    }

    #[test]
    fn real_input_stays_real() {
        let img = Array2::from_shape_fn((8, 8), |(r, c)| ((r * 3 + c) % 5) as f64);
        let complex = img.mapv(|v| Complex64::new(v, 0.0));
        let up = fourier_upsample(&complex, 3).unwrap();
        assert!(up.iter().all(|v| v.im.abs() < 1e-12));
    }

    #[test]
    fn delta_shift() {
        let mut a = Array2::<i32>::zeros((8, 10));
        a[[0, 0]] = 1;
        let b = shift_array(&a, 5, 3);
        assert_eq!(b[[3, 5]], 1);
        assert_eq!(b.sum(), 1);
        assert_eq!(shift_array(&a, 10, 8), a);
        assert_eq!(shift_array(&a, 0, 0), a);
    }

    #[test]
    fn subpixel_matches_integer_shift() {
        let g = grid(9, 12, 3);
        let f = ComplexField::new(g, 1.0, 0.5).unwrap();
        let a = subpixel_shift(&f, 4.0, -2.0).unwrap();
        let b = circular_shift(&f, 4, -2);
        let err: f64 = (a.data() - b.data()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    proptest! {
        #[test]
        fn lattice_samples_preserved(rows in 2usize..10, cols in 2usize..10, s in 1usize..4, seed in 0u32..50) {
            let g = grid(rows, cols, seed);
            let up = fourier_upsample(&g, s).unwrap();
            for r in 0..rows {
                for c in 0..cols {
                    prop_assert!((up[[s * r, s * c]] - g[[r, c]]).norm() < 1e-10);
                }
            }
        }

        #[test]
        fn upsample_is_linear(seed in 0u32..50, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let x = grid(6, 7, seed);
            let y = grid(6, 7, seed + 1);
            let lhs = fourier_upsample(&(&x * a + &y * b), 3).unwrap();
            let rhs = fourier_upsample(&x, 3).unwrap() * a + fourier_upsample(&y, 3).unwrap() * b;
            let err = (&lhs - &rhs).iter().map(|v| v.norm()).fold(0.0, f64::max);
            prop_assert!(err < 1e-10);
        }

        #[test]
        fn shift_round_trip(dx in -40i64..40, dy in -40i64..40) {
            let g = grid(7, 9, 1);
            prop_assert_eq!(shift_array(&shift_array(&g, dx, dy), -dx, -dy), g);
        }
    }
}
