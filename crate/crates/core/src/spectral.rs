//! Fourier pseudo-spectral differentiation.

use std::f64::consts::{E, PI, SQRT_2};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{validate, Error, Result};
use crate::lattice::{dft, idft_real, GridField, SpectralField, TorusLattice};
use crate::semianalytic::SemiAnalyticityParams;

/// Convolution kernel of the first derivative along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeKernel {
    n: usize,
    l: f64,
    entries: Vec<f64>,
}

impl DerivativeKernel {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    /// `a[m]`, with `m` taken modulo `2N+1` into `[-N..N]`.
    pub fn get(&self, m: i64) -> f64 {
        let side = (2 * self.n + 1) as i64;
        let n = self.n as i64;
        let w = (m + n).rem_euclid(side) - n;
        self.entries[(w + n) as usize]
    }
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// `a[m] = pi (-1)^{m+1} / (l sin(pi m/(2N+1)))`, `a[0] = 0`.
pub fn derivative_kernel(n: usize, l: f64) -> DerivativeKernel {
    let side = (2 * n + 1) as f64;
    let entries = (-(n as i64)..=n as i64)
        .map(|m| {
            if m == 0 {
                0.0
            } else {
                let sign = if m.rem_euclid(2) == 1 { 1.0 } else { -1.0 };
                sign * PI / (l * (PI * m as f64 / side).sin())
            }
        })
        .collect();
    DerivativeKernel { n, l, entries }
}

/// Dense matrix of the first derivative on one axis: `D[n,m] = a[m-n]`.
pub fn derivative_matrix(n: usize, l: f64) -> DMatrix<f64> {
    let k = derivative_kernel(n, l);
    let side = 2 * n + 1;
    DMatrix::from_fn(side, side, |i, j| k.get(j as i64 - i as i64))
}

fn check_axis(lat: &TorusLattice, axis: usize) -> Result<()> {
    validate(axis < lat.d(), || format!("axis {axis} out of range for d = {}", lat.d()))
}

fn apply_multiplier<F>(u: &GridField, mult: F) -> GridField
where
    F: Fn(&[i64]) -> Complex64,
{
    let lat = *u.lattice();
    let spec = dft(u);
    let coeffs: Vec<Complex64> = spec.coeffs().iter().enumerate().map(|(f, c)| c * mult(&lat.multi(f))).collect();
    let out = SpectralField::new(lat, coeffs).expect("same layout");
    if u.is_real() {
        idft_real(&out)
    } else {
        crate::lattice::idft(&out)
    }
}

/// Order-`r` derivative along `axis` via the multiplier `(2 pi i k/l)^r`.
pub fn fourier_derivative(u: &GridField, axis: usize, r: u32) -> Result<GridField> {
    let lat = *u.lattice();
    check_axis(&lat, axis)?;
    validate(r >= 1, || "derivative order must be >= 1".into())?;
    let w = 2.0 * PI / lat.l();
    Ok(apply_multiplier(u, |k| Complex64::new(0.0, w * k[axis] as f64).powu(r)))
}

/// First derivative along `axis` as `sum_m u[m] a[m-n]` on each line.
pub fn derivative_by_convolution(u: &GridField, axis: usize) -> Result<GridField> {
    let lat = *u.lattice();
    check_axis(&lat, axis)?;
    let ker = derivative_kernel(lat.n(), lat.l());
    let side = lat.side();
    let stride = lat.stride(axis);
    let vals = u.values();
    let mut out = vec![Complex64::new(0.0, 0.0); vals.len()];
    for (f, o) in out.iter_mut().enumerate() {
        let s = (f / stride) % side;
        let base = f - s * stride;
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..side {
            acc += vals[base + m * stride] * ker.get(m as i64 - s as i64);
        }
        *o = acc;
    }
    Ok(GridField::from_complex_realify(lat, out, u.is_real()))
}

pub fn gradient(u: &GridField) -> Vec<GridField> {
    (0..u.lattice().d()).map(|j| fourier_derivative(u, j, 1).expect("axis in range")).collect()
}

pub fn divergence(vs: &[GridField]) -> Result<GridField> {
    validate(!vs.is_empty(), || "empty vector field".into())?;
    let lat = *vs[0].lattice();
    validate(vs.len() == lat.d(), || format!("expected {} components, got {}", lat.d(), vs.len()))?;
    let mut acc = fourier_derivative(&vs[0], 0, 1)?;
    for (j, v) in vs.iter().enumerate().skip(1) {
        acc = acc.add(&fourier_derivative(v, j, 1)?)?;
    }
    Ok(acc)
}

/// Spectral Laplacian via the multiplier `-(2 pi/l)^2 |k|^2`.
pub fn laplacian(u: &GridField) -> GridField {
    let lat = *u.lattice();
    let w = 2.0 * PI / lat.l();
    apply_multiplier(u, |k| {
        let k2: i64 = k.iter().map(|x| x * x).sum();
        Complex64::new(-w * w * k2 as f64, 0.0)
    })
}

/// Bound on `||d_j u||_inf` in terms of `||u||_inf`.
pub fn sup_norm_bound(n: usize, l: f64, sup: f64) -> f64 {
    let side = (2 * n + 1) as f64;
    (2.0 * PI / l) * sup * side * (((4 * n + 2) as f64 / PI).ln() / PI + 0.5)
}

/// A smooth periodic function with its analytic gradient and Laplacian.
pub struct SmoothFunction<'a> {
    pub value: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub gradient: &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync),
    pub laplacian: &'a (dyn Fn(&[f64]) -> f64 + Sync),
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeErrorReport {
    pub n: usize,
    pub first_error: f64,
    pub first_bound: f64,
    pub second_error: f64,
    pub second_bound: f64,
    pub violation: bool,
}

pub fn first_derivative_bound(lat: &TorusLattice, p: &SemiAnalyticityParams) -> f64 {
    let (c, a) = (p.c(), p.a());
    let n = lat.n() as f64;
    let vol = (lat.side() as f64).powf(lat.d() as f64 / 2.0);
    40.0 * SQRT_2 * PI * E.powi(3) * (a / lat.l()) * c * vol * (-n / (2.0 * a)).exp()
}

pub fn second_derivative_bound(lat: &TorusLattice, p: &SemiAnalyticityParams) -> f64 {
    let (c, a) = (p.c(), p.a());
    let n = lat.n() as f64;
    let vol = (lat.side() as f64).powf(lat.d() as f64 / 2.0);
    200.0 * SQRT_2 * PI * PI * E.powi(3) * (a * a / lat.l()) * c * c * vol * (-0.4 * n / a).exp()
}

/// Measured grid errors of the spectral gradient and Laplacian against analytic values.
pub fn derivative_error_report(
    u: &SmoothFunction<'_>,
    lat: &TorusLattice,
    params: &SemiAnalyticityParams,
) -> Result<DerivativeErrorReport> {
    let n = lat.n() as f64;
    let need = 4.0 * params.a() * lat.d() as f64;
    if n < need {
        return Err(Error::Precondition(format!("N = {n} < 4ad = {need}")));
    }
    let field = crate::lattice::discretize(u.value, lat)?;
    let grads = gradient(&field);
    let lap = laplacian(&field);
    let mut e1 = 0.0;
    let mut e2 = 0.0;
    for f in 0..lat.size() {
        let x = lat.point_of(f);
        let g = (u.gradient)(&x);
        for (j, gj) in g.iter().enumerate() {
            e1 += (grads[j].values()[f].re - gj).powi(2);
        }
        e2 += (lap.values()[f].re - (u.laplacian)(&x)).powi(2);
    }
    let first_error = e1.sqrt();
    let second_error = e2.sqrt();
    let first_bound = first_derivative_bound(lat, params);
    let second_bound = second_derivative_bound(lat, params);
    Ok(DerivativeErrorReport {
        n: lat.n(),
        first_error,
        first_bound,
        second_error,
        second_bound,
        violation: first_error > first_bound || second_error > second_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{discretize, make_lattice};

    #[test]
    fn kernel_closed_form_values() {
        let k = derivative_kernel(1, 2.0 * PI);
        assert_eq!(k.get(0), 0.0);
        assert!((k.get(1) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let k = derivative_kernel(2, 2.0 * PI);
        assert!((k.get(1) - 1.0 / (2.0 * (PI / 5.0).sin())).abs() < 1e-15);
        assert!((k.get(1) - 0.85065).abs() < 1e-5);
        for n in 1..12 {
            let k = derivative_kernel(n, 1.3);
            for m in 1..=n as i64 {
                assert!((k.get(-m) + k.get(m)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn derivative_of_sine_and_constant() {
        for n in 1..10 {
            let l = 2.5;
            let lat = make_lattice(1, n, l).unwrap();
            let u = discretize(|x| (2.0 * PI * x[0] / l).sin(), &lat).unwrap();
            let du = fourier_derivative(&u, 0, 1).unwrap();
            let want = discretize(|x| 2.0 * PI / l * (2.0 * PI * x[0] / l).cos(), &lat).unwrap();
            assert!(du.sub(&want).unwrap().sup_norm() < 1e-10);
            assert!(du.is_real());
            let dc = derivative_by_convolution(&u, 0).unwrap();
            assert!(dc.sub(&want).unwrap().sup_norm() < 1e-10);
            let z = fourier_derivative(&GridField::constant(lat, 3.0), 0, 2).unwrap();
            assert!(z.sup_norm() < 1e-12);
        }
    }

    #[test]
    fn laplacian_of_cosine_modes() {
        let n = 6;
        let lat = make_lattice(1, n, 2.0 * PI).unwrap();
        for k in 0..=n {
            let u = discretize(|x| (k as f64 * x[0]).cos(), &lat).unwrap();
            let lu = laplacian(&u);
            let want = u.scale(-((k * k) as f64));
            assert!(lu.sub(&want).unwrap().sup_norm() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn axis_and_length_errors() {
        let lat = make_lattice(2, 2, 1.0).unwrap();
        let u = GridField::constant(lat, 1.0);
        assert!(matches!(fourier_derivative(&u, 2, 1), Err(Error::Validation(_))));
        assert!(matches!(divergence(std::slice::from_ref(&u)), Err(Error::Validation(_))));
        assert!(divergence(&[u.clone(), u]).is_ok());
    }

    #[test]
    fn band_limited_error_report() {
        let lat = make_lattice(1, 8, 1.0).unwrap();
        let w = 2.0 * PI;
        let v = move |x: &[f64]| (w * x[0]).sin() + 0.3 * (3.0 * w * x[0]).cos();
        let g = move |x: &[f64]| vec![w * (w * x[0]).cos() - 0.9 * w * (3.0 * w * x[0]).sin()];
        let lp = move |x: &[f64]| -w * w * (w * x[0]).sin() - 2.7 * w * w * (3.0 * w * x[0]).cos();
        let f = SmoothFunction { value: &v, gradient: &g, laplacian: &lp };
        let p = SemiAnalyticityParams::new(1.0, 1.0).unwrap();
        let r = derivative_error_report(&f, &lat, &p).unwrap();
        assert!(r.first_error < 1e-9 && r.second_error < 1e-9 && !r.violation);
        let p = SemiAnalyticityParams::new(1.0, 3.0).unwrap();
        assert!(matches!(derivative_error_report(&f, &lat, &p), Err(Error::Precondition(_))));
    }
}
