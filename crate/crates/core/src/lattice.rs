//! Lattice geometry, field containers and the centered unitary DFT.

use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{validate, Error, Result};

/// Largest lattice (total points) accepted for dense operators.
pub const DENSE_CAP: usize = 4096;
/// Largest lattice accepted for fine reference grids (quadrature, estimators).
pub const FINE_CAP: usize = 1 << 22;

/// Odd lattice with `2N+1` points per axis on the torus `[-l/2, l/2)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusLattice {
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    l: f64,
}

pub fn make_lattice(d: usize, n: usize, l: f64) -> Result<TorusLattice> {
    TorusLattice::new(d, n, l)
}

impl TorusLattice {
    pub fn new(d: usize, n: usize, l: f64) -> Result<Self> {
        Self::with_cap(d, n, l, DENSE_CAP)
    }

    /// Lattice for reference computations that never form dense matrices.
    pub fn fine(d: usize, n: usize, l: f64) -> Result<Self> {
        Self::with_cap(d, n, l, FINE_CAP)
    }

    pub fn with_cap(d: usize, n: usize, l: f64, cap: usize) -> Result<Self> {
        validate(d >= 1, || format!("dimension must be >= 1, got {d}"))?;
        validate(n >= 1, || format!("half-width N must be >= 1, got {n}"))?;
        validate(l.is_finite() && l > 0.0, || format!("period must be positive, got {l}"))?;
        let side = 2 * n + 1;
        let mut total: usize = 1;
        for _ in 0..d {
            total = total
                .checked_mul(side)
                .filter(|t| *t <= cap)
                .ok_or_else(|| Error::Size(format!("(2N+1)^d = {side}^{d} exceeds cap {cap}")))?;
        }
        Ok(TorusLattice { d, n, l })
    }

    /// Builds from a points-per-axis count, which must be odd.
    pub fn from_points(d: usize, points_per_axis: usize, l: f64) -> Result<Self> {
        validate(points_per_axis % 2 == 1 && points_per_axis >= 3, || {
            format!("points per axis must be odd and >= 3, got {points_per_axis}")
        })?;
        Self::new(d, points_per_axis / 2, l)
    }

    pub fn d(&self) -> usize {
        self.d
    }
    /// Half-width `N`.
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn side(&self) -> usize {
        2 * self.n + 1
    }
    pub fn size(&self) -> usize {
        self.side().pow(self.d as u32)
    }
    /// Box width `l/(2N+1)`.
    pub fn spacing(&self) -> f64 {
        self.l / self.side() as f64
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.side().pow((self.d - 1 - axis) as u32)
    }

    pub fn contains(&self, idx: &[i64]) -> bool {
        let n = self.n as i64;
        idx.len() == self.d && idx.iter().all(|&i| (-n..=n).contains(&i))
    }

    pub fn flat(&self, idx: &[i64]) -> Result<usize> {
        validate(self.contains(idx), || format!("index {idx:?} outside lattice"))?;
        Ok(self.flat_unchecked(idx))
    }

    pub(crate) fn flat_unchecked(&self, idx: &[i64]) -> usize {
        let side = self.side();
        idx.iter().fold(0usize, |acc, &i| acc * side + (i + self.n as i64) as usize)
    }

    pub fn multi(&self, flat: usize) -> Vec<i64> {
        let side = self.side();
        let mut out = vec![0i64; self.d];
        let mut r = flat;
        for j in (0..self.d).rev() {
            out[j] = (r % side) as i64 - self.n as i64;
            r /= side;
        }
        out
    }

    /// `x_n = l n / (2N+1)`.
    pub fn point(&self, idx: &[i64]) -> Vec<f64> {
        let h = self.spacing();
        idx.iter().map(|&i| i as f64 * h).collect()
    }

    pub fn point_of(&self, flat: usize) -> Vec<f64> {
        self.point(&self.multi(flat))
    }

    /// Flat offset of `-n`.
    pub fn negated(&self, flat: usize) -> usize {
        let m: Vec<i64> = self.multi(flat).into_iter().map(|i| -i).collect();
        self.flat_unchecked(&m)
    }

    /// Same geometry with a different half-width.
    pub fn resized(&self, n: usize, cap: usize) -> Result<Self> {
        Self::with_cap(self.d, n, self.l, cap)
    }

    pub(crate) fn check_same(&self, other: &TorusLattice) -> Result<()> {
        validate(self == other, || format!("lattice mismatch: {self:?} vs {other:?}"))
    }
}

/// Values at lattice points, row-major over shifted indices.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    lattice: TorusLattice,
    values: Vec<Complex64>,
    real: bool,
}

const REAL_TOL: f64 = 1e-12;

impl GridField {
    pub fn new(lattice: TorusLattice, values: Vec<Complex64>) -> Result<Self> {
        validate(values.len() == lattice.size(), || {
            format!("expected {} values, got {}", lattice.size(), values.len())
        })?;
        let real = values.iter().all(|v| v.im.abs() <= REAL_TOL);
        Ok(GridField { lattice, values, real })
    }

    pub fn from_real(lattice: TorusLattice, values: Vec<f64>) -> Result<Self> {
        validate(values.len() == lattice.size(), || {
            format!("expected {} values, got {}", lattice.size(), values.len())
        })?;
        Ok(GridField { lattice, values: values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(), real: true })
    }

    pub fn constant(lattice: TorusLattice, c: f64) -> Self {
        GridField { lattice, values: vec![Complex64::new(c, 0.0); lattice.size()], real: true }
    }

    /// Zeroes imaginary parts if they are within the real tolerance.
    pub(crate) fn from_complex_realify(lattice: TorusLattice, mut values: Vec<Complex64>, want_real: bool) -> Self {
        let real = want_real && values.iter().all(|v| v.im.abs() <= 1e-9 * (1.0 + v.re.abs()));
        if real {
            values.iter_mut().for_each(|v| v.im = 0.0);
        }
        GridField { lattice, values, real }
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }
    pub fn is_real(&self) -> bool {
        self.real
    }
    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
    pub fn sum(&self) -> Complex64 {
        self.values.iter().sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        validate(n > 0.0 && n.is_finite(), || "cannot normalize a zero field".into())?;
        Ok(self.scale(1.0 / n))
    }

    pub fn scale(&self, s: f64) -> Self {
        GridField { lattice: self.lattice, values: self.values.iter().map(|v| v * s).collect(), real: self.real }
    }

    pub fn add(&self, other: &GridField) -> Result<Self> {
        self.lattice.check_same(&other.lattice)?;
        Ok(GridField {
            lattice: self.lattice,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            real: self.real && other.real,
        })
    }

    pub fn sub(&self, other: &GridField) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &GridField) -> Result<Self> {
        self.lattice.check_same(&other.lattice)?;
        Ok(GridField {
            lattice: self.lattice,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
            real: self.real && other.real,
        })
    }

    pub fn dot(&self, other: &GridField) -> Result<Complex64> {
        self.lattice.check_same(&other.lattice)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum())
    }

    /// CSV rows `n0,..,n{d-1},re,im`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.lattice.d).map(|j| format!("n{j}")).collect();
        header.push("re".into());
        header.push("im".into());
        wr.write_record(&header)?;
        for (f, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.lattice.multi(f).iter().map(|i| i.to_string()).collect();
            row.push(format!("{:e}", v.re));
            row.push(format!("{:e}", v.im));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(lattice: TorusLattice, r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut values = vec![Complex64::new(0.0, 0.0); lattice.size()];
        let mut seen = vec![false; lattice.size()];
        for rec in rd.records() {
            let rec = rec?;
            validate(rec.len() == lattice.d + 2, || format!("bad row width {}", rec.len()))?;
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|e| Error::Validation(format!("bad number {s:?}: {e}")))
            };
            let mut idx = Vec::with_capacity(lattice.d);
            for j in 0..lattice.d {
                idx.push(parse(&rec[j])? as i64);
            }
            let f = lattice.flat(&idx)?;
            values[f] = Complex64::new(parse(&rec[lattice.d])?, parse(&rec[lattice.d + 1])?);
            seen[f] = true;
        }
        validate(seen.iter().all(|s| *s), || "CSV does not cover every lattice point".into())?;
        GridField::new(lattice, values)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let values: Vec<serde_json::Value> = if self.real {
            self.values.iter().map(|v| serde_json::json!(v.re)).collect()
        } else {
            self.values.iter().map(|v| serde_json::json!([v.re, v.im])).collect()
        };
        serde_json::json!({ "lattice": self.lattice, "values": values })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Val {
            Re(f64),
            Cx([f64; 2]),
        }
        #[derive(Deserialize)]
        struct Env {
            lattice: TorusLattice,
            values: Vec<Val>,
        }
        let env: Env = serde_json::from_value(v.clone())?;
        let lat = TorusLattice::with_cap(env.lattice.d, env.lattice.n, env.lattice.l, FINE_CAP)?;
        let vals = env
            .values
            .into_iter()
            .map(|v| match v {
                Val::Re(r) => Complex64::new(r, 0.0),
                Val::Cx([r, i]) => Complex64::new(r, i),
            })
            .collect();
        GridField::new(lat, vals)
    }
}

/// Centered Fourier coefficients `k in [-N..N]^d`, same layout as [`GridField`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    lattice: TorusLattice,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(lattice: TorusLattice, coeffs: Vec<Complex64>) -> Result<Self> {
        validate(coeffs.len() == lattice.size(), || {
            format!("expected {} coefficients, got {}", lattice.size(), coeffs.len())
        })?;
        Ok(SpectralField { lattice, coeffs })
    }
    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }
    pub fn coeff(&self, k: &[i64]) -> Result<Complex64> {
        Ok(self.coeffs[self.lattice.flat(k)?])
    }
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
    /// Largest `|c[k] - conj(c[-k])|`.
    pub fn conj_symmetry_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|f| (self.coeffs[f] - self.coeffs[self.lattice.negated(f)].conj()).norm())
            .fold(0.0, f64::max)
    }
}

fn transform(lattice: &TorusLattice, data: &mut [Complex64], dir: FftDirection) {
    let side = lattice.side();
    let n = lattice.n();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft(side, dir);
    let scale = 1.0 / (side as f64).sqrt();
    for axis in 0..lattice.d() {
        let stride = lattice.stride(axis);
        let block = stride * side;
        let process = |chunk: &mut [Complex64]| {
            let mut buf = vec![Complex64::new(0.0, 0.0); side];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            for inner in 0..stride {
                // shifted index s holds n = s - N, stored at n mod side
                for s in 0..side {
                    buf[(s + side - n) % side] = chunk[inner + s * stride];
                }
                fft.process_with_scratch(&mut buf, &mut scratch);
                for s in 0..side {
                    chunk[inner + s * stride] = buf[(s + side - n) % side] * scale;
                }
            }
        };
        if data.len() >= 1 << 14 {
            data.par_chunks_mut(block).for_each(process);
        } else {
            data.chunks_mut(block).for_each(process);
        }
    }
}

/// Centered unitary DFT, `F[k,n] = (2N+1)^{-d/2} exp(-2 pi i <k,n>/(2N+1))`.
pub fn dft(field: &GridField) -> SpectralField {
    let mut data = field.values.clone();
    transform(&field.lattice, &mut data, FftDirection::Forward);
    SpectralField { lattice: field.lattice, coeffs: data }
}

pub fn idft(spec: &SpectralField) -> GridField {
    let mut data = spec.coeffs.clone();
    transform(&spec.lattice, &mut data, FftDirection::Inverse);
    let real = data.iter().all(|v| v.im.abs() <= REAL_TOL * (1.0 + v.re.abs()));
    GridField { lattice: spec.lattice, values: data, real }
}

/// Inverse transform that snaps to a real field when the input came from one.
pub(crate) fn idft_real(spec: &SpectralField) -> GridField {
    let mut data = spec.coeffs.clone();
    transform(&spec.lattice, &mut data, FftDirection::Inverse);
    GridField::from_complex_realify(spec.lattice, data, true)
}

/// Samples `u(x_n)` at every lattice point.
pub fn discretize<F>(u: F, lattice: &TorusLattice) -> Result<GridField>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let eval = |f: usize| {
        let x = lattice.point_of(f);
        let v = u(&x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Eval(format!("non-finite value {v} at x = {x:?}")))
        }
    };
    let values: Result<Vec<f64>> = if lattice.size() >= 4096 {
        (0..lattice.size()).into_par_iter().map(eval).collect()
    } else {
        (0..lattice.size()).map(eval).collect()
    };
    GridField::from_real(*lattice, values?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn three_point_lattice() {
        let lat = make_lattice(1, 1, 2.0 * PI).unwrap();
        let xs: Vec<f64> = (0..3).map(|f| lat.point_of(f)[0]).collect();
        let want = [-2.0 * PI / 3.0, 0.0, 2.0 * PI / 3.0];
        for (x, w) in xs.iter().zip(want) {
            assert!((x - w).abs() < 1e-15);
        }
    }

    #[test]
    fn two_dim_point() {
        let lat = make_lattice(2, 2, 1.0).unwrap();
        assert_eq!(lat.size(), 25);
        let p = lat.point(&[1, -2]);
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[1] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn cap_and_validation() {
        assert!(matches!(make_lattice(1, 2048, 1.0), Err(Error::Size(_))));
        assert!(make_lattice(1, 2047, 1.0).is_ok());
        assert!(matches!(make_lattice(3, 8, 1.0), Err(Error::Size(_))));
        assert!(make_lattice(3, 7, 1.0).is_ok());
        assert!(matches!(make_lattice(0, 2, 1.0), Err(Error::Validation(_))));
        assert!(matches!(make_lattice(1, 0, 1.0), Err(Error::Validation(_))));
        assert!(matches!(make_lattice(1, 2, -1.0), Err(Error::Validation(_))));
        assert!(matches!(TorusLattice::from_points(1, 4, 1.0), Err(Error::Validation(_))));
        assert_eq!(TorusLattice::from_points(1, 5, 1.0).unwrap().n(), 2);
    }

    #[test]
    fn layout_round_trip() {
        let lat = make_lattice(3, 3, 1.0).unwrap();
        for f in 0..lat.size() {
            let m = lat.multi(f);
            assert_eq!(lat.flat(&m).unwrap(), f);
        }
        // axis 0 is slowest
        assert_eq!(lat.flat(&[-3, -3, -2]).unwrap(), 1);
        assert_eq!(lat.flat(&[-2, -3, -3]).unwrap(), 49);
    }

    #[test]
    fn discretize_examples() {
        let lat = make_lattice(1, 1, 1.0).unwrap();
        let ones = discretize(|_| 1.0, &lat).unwrap();
        assert!(ones.values().iter().all(|v| *v == Complex64::new(1.0, 0.0)));
        let c = discretize(|x| (2.0 * PI * x[0]).cos(), &lat).unwrap();
        let want = [-0.5, 1.0, -0.5];
        for (v, w) in c.re().iter().zip(want) {
            assert!((v - w).abs() < 1e-15);
        }
        assert!(c.is_real());
        assert!(matches!(discretize(|_| f64::NAN, &lat), Err(Error::Eval(_))));
    }

    #[test]
    fn dft_of_constant() {
        let lat = make_lattice(1, 1, 2.0 * PI).unwrap();
        let s = dft(&GridField::constant(lat, 2.5));
        let c = s.coeffs();
        assert!(c[0].norm() < 1e-15 && c[2].norm() < 1e-15);
        assert!((c[1].re - 2.5 * 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn dft_of_three_point_cosine() {
        let lat = make_lattice(1, 1, 1.0).unwrap();
        let vals: Vec<f64> = (-1..=1).map(|n| (2.0 * PI * n as f64 / 3.0).cos()).collect();
        let s = dft(&GridField::from_real(lat, vals.clone()).unwrap());
        // direct summation oracle
        for k in -1i64..=1 {
            let mut acc = Complex64::new(0.0, 0.0);
            for n in -1i64..=1 {
                let ph = -2.0 * PI * (k * n) as f64 / 3.0;
                acc += Complex64::from_polar(vals[(n + 1) as usize], ph);
            }
            acc /= 3f64.sqrt();
            assert!((s.coeff(&[k]).unwrap() - acc).norm() < 1e-14);
        }
        assert!((s.coeff(&[1]).unwrap().re - 3f64.sqrt() / 2.0).abs() < 1e-14);
        assert!(s.coeff(&[0]).unwrap().norm() < 1e-14);
    }

    #[test]
    fn dft_matches_dense_matrix_2d() {
        let lat = make_lattice(2, 2, 1.0).unwrap();
        let vals: Vec<Complex64> =
            (0..lat.size()).map(|f| Complex64::new((f as f64 * 0.37).sin(), (f as f64 * 0.11).cos())).collect();
        let g = GridField::new(lat, vals.clone()).unwrap();
        let s = dft(&g);
        let side = lat.side() as f64;
        for kf in 0..lat.size() {
            let k = lat.multi(kf);
            let mut acc = Complex64::new(0.0, 0.0);
            for nf in 0..lat.size() {
                let n = lat.multi(nf);
                let ip: i64 = k.iter().zip(&n).map(|(a, b)| a * b).sum();
                acc += vals[nf] * Complex64::from_polar(1.0, -2.0 * PI * ip as f64 / side);
            }
            acc /= side;
            assert!((s.coeffs()[kf] - acc).norm() < 1e-13);
        }
        let back = idft(&s);
        for (a, b) in back.values().iter().zip(&vals) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn json_and_csv_round_trip() {
        let lat = make_lattice(2, 1, 1.5).unwrap();
        let g = discretize(|x| x[0] - 2.0 * x[1], &lat).unwrap();
        let j = g.to_json();
        assert_eq!(j["lattice"]["N"], 1);
        let back = GridField::from_json(&j).unwrap();
        assert_eq!(back, g);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GridField::read_csv(lat, buf.as_slice()).unwrap();
        for (a, b) in back.values().iter().zip(g.values()) {
            assert!((a - b).norm() < 1e-15);
        }
    }
}
