//! Semi-norms, (C, a) fitting, concentration bounds, composition rules and the aliasing witness.

use std::collections::BTreeMap;
use std::f64::consts::{E, PI};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{validate, Error, Result};
use crate::lattice::{dft, discretize, SpectralField, TorusLattice};
use crate::potential::{invcos_density, PeriodicMlp};
use crate::special::{factorial, ln_factorial};

/// Default truncation `|k|_inf <= 60` for analytic families.
pub const SERIES_TRUNCATION: i64 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SemiAnalyticityParams {
    c: f64,
    a: f64,
}

impl SemiAnalyticityParams {
    pub fn new(c: f64, a: f64) -> Result<Self> {
        validate(c.is_finite() && c >= 0.0 && a.is_finite() && a >= 0.0, || {
            format!("(C, a) must be finite and non-negative, got ({c}, {a})")
        })?;
        Ok(SemiAnalyticityParams { c, a })
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    /// `C a^m m!`.
    pub fn envelope(&self, m: u32) -> f64 {
        self.c * self.a.powi(m as i32) * factorial(m as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BernsteinParams {
    a_coef: f64,
    b: f64,
}

impl BernsteinParams {
    pub fn new(a_coef: f64, b: f64) -> Result<Self> {
        validate(a_coef.is_finite() && a_coef >= 0.0 && b.is_finite() && b > 0.0, || {
            format!("Bernstein (A, b) needs A >= 0 and b > 0, got ({a_coef}, {b})")
        })?;
        Ok(BernsteinParams { a_coef, b })
    }
    /// The moment constant `A`.
    pub fn big_a(&self) -> f64 {
        self.a_coef
    }
    pub fn b(&self) -> f64 {
        self.b
    }
}

/// Fourier series coefficients `u^[k]` of a periodic function, keyed by `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSeries {
    d: usize,
    coeffs: BTreeMap<Vec<i64>, Complex64>,
}

impl FourierSeries {
    pub fn new(d: usize, coeffs: BTreeMap<Vec<i64>, Complex64>) -> Result<Self> {
        validate(coeffs.keys().all(|k| k.len() == d), || "coefficient index has wrong dimension".into())?;
        Ok(FourierSeries { d, coeffs })
    }

    /// Coefficients `f(k)` over `k in [-K..K]^d`.
    pub fn from_fn<F: Fn(&[i64]) -> f64>(d: usize, kmax: i64, f: F) -> Self {
        let mut coeffs = BTreeMap::new();
        let side = (2 * kmax + 1) as usize;
        let total = side.pow(d as u32);
        for flat in 0..total {
            let mut k = vec![0i64; d];
            let mut r = flat;
            for j in (0..d).rev() {
                k[j] = (r % side) as i64 - kmax;
                r /= side;
            }
            let c = f(&k);
            coeffs.insert(k, Complex64::new(c, 0.0));
        }
        FourierSeries { d, coeffs }
    }

    /// Estimates `u^[k] ~ (2N+1)^{-d/2} (F_N u_N)[k]`.
    pub fn from_spectral(spec: &SpectralField) -> Self {
        let lat = spec.lattice();
        let s = (lat.size() as f64).sqrt();
        let coeffs = spec.coeffs().iter().enumerate().map(|(f, c)| (lat.multi(f), c / s)).collect();
        FourierSeries { d: lat.d(), coeffs }
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
    pub fn iter(&self) -> impl Iterator<Item = (&Vec<i64>, &Complex64)> {
        self.coeffs.iter()
    }
    pub fn get(&self, k: &[i64]) -> Complex64 {
        self.coeffs.get(k).copied().unwrap_or_default()
    }

    /// `U = sqrt(E |u|^2) = sqrt(sum |u^[k]|^2)`.
    pub fn rms(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &FourierSeries) -> Result<Self> {
        validate(self.d == other.d, || "dimension mismatch".into())?;
        let mut coeffs = self.coeffs.clone();
        for (k, c) in &other.coeffs {
            *coeffs.entry(k.clone()).or_default() += c;
        }
        Ok(FourierSeries { d: self.d, coeffs })
    }

    /// `E ||K_u||^m` with law `|u^[k]|^2 / U^2`.
    pub fn norm_moment(&self, m: f64) -> f64 {
        let u2 = self.rms().powi(2);
        self.coeffs.iter().map(|(k, c)| knorm(k).powf(m) * c.norm_sqr()).sum::<f64>() / u2
    }

    /// `P[||K_u|| > t]`.
    pub fn norm_tail_probability(&self, t: f64) -> f64 {
        let u2 = self.rms().powi(2);
        self.coeffs.iter().filter(|(k, _)| knorm(k) > t).map(|(_, c)| c.norm_sqr()).sum::<f64>() / u2
    }
}

fn knorm(k: &[i64]) -> f64 {
    (k.iter().map(|v| (v * v) as f64).sum::<f64>()).sqrt()
}

/// Semi-norms `|u|_m` for `m = 0..=m_max` and the mean-square value `U`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FourierMomentProfile {
    pub norms: Vec<f64>,
    pub rms: f64,
    /// The outermost shell contributes more than 1e-12 of the top-order sum.
    pub truncated: bool,
}

impl FourierMomentProfile {
    pub fn m_max(&self) -> usize {
        self.norms.len() - 1
    }

    /// CSV rows `m,semi_norm,bound` (bound left empty when absent).
    pub fn write_csv<W: std::io::Write>(&self, w: W, params: Option<&SemiAnalyticityParams>) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["m", "semi_norm", "bound"])?;
        for (m, v) in self.norms.iter().enumerate() {
            let b = params.map(|p| format!("{:e}", p.envelope(m as u32))).unwrap_or_default();
            wr.write_record([m.to_string(), format!("{v:e}"), b])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `|u|_m = sqrt(sum_k ||k||^{2m} |u^[k]|^2)`.
pub fn semi_norms(series: &FourierSeries, m_max: usize) -> Result<FourierMomentProfile> {
    validate(!series.is_empty(), || "empty spectrum".into())?;
    validate(m_max >= 1, || "m_max must be >= 1".into())?;
    let mut norms = vec![0.0; m_max + 1];
    let shell = series.coeffs.keys().map(|k| k.iter().map(|v| v.abs()).max().unwrap_or(0)).max().unwrap_or(0);
    let mut top = 0.0;
    for (k, c) in series.iter() {
        let kn2 = knorm(k).powi(2);
        let a2 = c.norm_sqr();
        let mut w = 1.0;
        for v in norms.iter_mut() {
            *v += w * a2;
            w *= kn2;
        }
        if shell > 0 && k.iter().map(|v| v.abs()).max().unwrap_or(0) == shell {
            top += kn2.powi(m_max as i32) * a2;
        }
    }
    let total = norms[m_max];
    let truncated = total > 0.0 && top > 1e-12 * total;
    let norms: Vec<f64> = norms.into_iter().map(f64::sqrt).collect();
    Ok(FourierMomentProfile { rms: norms[0], norms, truncated })
}

/// Smallest max-envelope `(C, a)` with `|u|_m <= C a^m m!` for every profiled `m`.
pub fn fit_params(profile: &FourierMomentProfile) -> Result<SemiAnalyticityParams> {
    let n0 = profile.norms[0];
    validate(n0 > 0.0, || "profile has |u|_0 = 0".into())?;
    let mut log_a = f64::NEG_INFINITY;
    for (m, &v) in profile.norms.iter().enumerate().skip(1) {
        if v > 0.0 {
            let cand = (v.ln() - n0.ln() - ln_factorial(m as u64)) / m as f64;
            log_a = log_a.max(cand);
        }
    }
    if log_a == f64::NEG_INFINITY {
        return SemiAnalyticityParams::new(n0, 0.0);
    }
    let a = log_a.exp();
    let c = profile
        .norms
        .iter()
        .enumerate()
        .map(|(m, &v)| v / (a.powi(m as i32) * factorial(m as u64)))
        .fold(0.0, f64::max);
    SemiAnalyticityParams::new(c, a)
}

/// `sum_{||k|| >= t} |u^[k]|^2`.
pub fn tail_mass(series: &FourierSeries, t: f64) -> f64 {
    series.iter().filter(|(k, _)| knorm(k) >= t).map(|(_, c)| c.norm_sqr()).sum()
}

/// Piecewise mass bound: `max(C,U) e^{-(t-a)^2/8a^2}` for `t <= 3a`, else `e max(C,U) e^{-t/2a}`.
pub fn l2_concentration_bound(p: &SemiAnalyticityParams, u: f64, t: f64) -> f64 {
    let m = p.c.max(u);
    let a = p.a;
    if a == 0.0 {
        return if t > 0.0 { 0.0 } else { m };
    }
    if t <= 3.0 * a {
        m * (-(t - a).powi(2) / (8.0 * a * a)).exp()
    } else {
        E * m * (-t / (2.0 * a)).exp()
    }
}

/// Amplitude bound `2 e^3 C e^{-N(1 - 1/2e)/a}`, valid for integer `N >= 2a`.
pub fn tail_amplitude_bound(p: &SemiAnalyticityParams, n: usize) -> Result<f64> {
    let nf = n as f64;
    if nf < 2.0 * p.a {
        return Err(Error::Precondition(format!("N = {n} < 2a = {}", 2.0 * p.a)));
    }
    if p.a == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * E.powi(3) * p.c * (-nf * (1.0 - 1.0 / (2.0 * E)) / p.a).exp())
}

/// Tail bound of a Bernstein variable: `max(A,1) e^{-(t-b)^2/8b^2}` up to `3b`, then `e max(A,1) e^{-t/2b}`.
pub fn bernstein_tail(bp: &BernsteinParams, t: f64) -> f64 {
    let m = bp.a_coef.max(1.0);
    let b = bp.b;
    if t <= 3.0 * b {
        m * (-(t - b).powi(2) / (8.0 * b * b)).exp()
    } else {
        E * m * (-t / (2.0 * b)).exp()
    }
}

/// `(C, a) -> (C/U, a)`.
pub fn bernstein_from_semianalytic(p: &SemiAnalyticityParams, u: f64) -> Result<BernsteinParams> {
    validate(u > 0.0 && u.is_finite(), || format!("mean-square value must be positive, got {u}"))?;
    validate(p.a > 0.0, || "a = 0 has no Bernstein scale".into())?;
    BernsteinParams::new(p.c / u, p.a)
}

/// `(A, b) -> (sqrt(2 A e), 4 b)`.
pub fn semianalytic_from_bernstein(bp: &BernsteinParams) -> SemiAnalyticityParams {
    SemiAnalyticityParams { c: (2.0 * bp.a_coef * E).sqrt(), a: 4.0 * bp.b }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CompositionOp {
    Add,
    Mul,
    /// `f2 o f1`, inputs ordered `[f1, f2]`.
    Compose,
    /// `e^f` with `sup f <= delta`.
    Exp {
        delta: f64,
    },
    /// `sigma(f)` with `sup |f| <= delta`.
    Sigmoid {
        delta: f64,
    },
}

/// Analyticity-class parameters of sums, products, compositions, `exp` and sigmoid.
pub fn compose_params(op: CompositionOp, inputs: &[(f64, f64)]) -> Result<SemiAnalyticityParams> {
    validate(inputs.iter().all(|(c, a)| c.is_finite() && a.is_finite() && *c >= 0.0 && *a >= 0.0), || {
        format!("parameters must be non-negative, got {inputs:?}")
    })?;
    let arity = match op {
        CompositionOp::Add | CompositionOp::Mul | CompositionOp::Compose => 2,
        _ => 1,
    };
    validate(inputs.len() == arity, || format!("{op:?} takes {arity} inputs"))?;
    let (c1, a1) = inputs[0];
    let out = match op {
        CompositionOp::Add => (c1 + inputs[1].0, a1.max(inputs[1].1)),
        CompositionOp::Mul => (c1 * inputs[1].0, a1 + inputs[1].1),
        CompositionOp::Compose => {
            let (c2, a2) = inputs[1];
            let s = 1.0 + c1 * a2;
            (c1 * a2 * c2 / s, a1 * s)
        }
        CompositionOp::Exp { delta } => (c1 * delta.exp() / (1.0 + c1), (1.0 + c1) * a1),
        CompositionOp::Sigmoid { delta } => {
            validate(delta >= 0.0, || "sigmoid range bound must be >= 0".into())?;
            (1.0, a1 * (1.0 + c1 * (1.0 + delta.exp())))
        }
    };
    SemiAnalyticityParams::new(out.0, out.1)
}

fn row_sum_norm(w: &[Vec<f64>]) -> f64 {
    w.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `2^D exp(sum_k 2||W_k||_inf + ||b_k||_inf)` with max-absolute-row-sum norms.
pub fn mlp_analyticity_bound(mlp: &PeriodicMlp) -> f64 {
    let s: f64 = mlp
        .layers()
        .iter()
        .map(|layer| 2.0 * row_sum_norm(&layer.w) + layer.b.iter().map(|v| v.abs()).fold(0.0, f64::max))
        .sum();
    2f64.powi(mlp.depth() as i32) * s.exp()
}

#[derive(Clone, Debug, Serialize)]
pub struct MlpFitReport {
    pub fitted: SemiAnalyticityParams,
    pub bound_a: f64,
    pub truncated: bool,
    pub within_bound: bool,
}

/// Fits `(C, a)` to the spectrum of the network output sampled on `lat` and compares with the bound.
pub fn mlp_fit_check(mlp: &PeriodicMlp, lat: &TorusLattice, m_max: usize) -> Result<MlpFitReport> {
    validate(lat.d() == mlp.d(), || "lattice dimension differs from the network input".into())?;
    let l = lat.l();
    let g = discretize(|x| mlp.eval(x, l), lat)?;
    let series = FourierSeries::from_spectral(&dft(&g));
    let prof = semi_norms(&series, m_max)?;
    let fitted = fit_params(&prof)?;
    let bound_a = mlp_analyticity_bound(mlp);
    Ok(MlpFitReport { fitted, bound_a, truncated: prof.truncated, within_bound: fitted.a() <= bound_a })
}

/// `P[X > theta E X]` against the floor `(1-theta)^2 (E X)^2 / E X^2` for `X = ||K_u||`.
#[derive(Clone, Debug, Serialize)]
pub struct PaleyZygmundReport {
    pub theta: f64,
    pub mean: f64,
    pub second_moment: f64,
    pub probability: f64,
    pub floor: f64,
    pub holds: bool,
}

pub fn paley_zygmund_check(series: &FourierSeries, theta: f64) -> Result<PaleyZygmundReport> {
    validate(theta > 0.0 && theta < 1.0, || format!("theta must be in (0,1), got {theta}"))?;
    let mean = series.norm_moment(1.0);
    let second_moment = series.norm_moment(2.0);
    let probability = series.norm_tail_probability(theta * mean);
    let floor = (1.0 - theta).powi(2) * mean * mean / second_moment;
    Ok(PaleyZygmundReport { theta, mean, second_moment, probability, floor, holds: probability > floor })
}

#[derive(Clone, Debug, Serialize)]
pub struct WitnessReport {
    pub c: f64,
    pub a: f64,
    pub n: usize,
    pub theta: f64,
    pub z: f64,
    pub alpha: f64,
    pub discretization_gap: f64,
    pub tv: f64,
    pub tv_floor: f64,
    pub quadrature_points: usize,
    pub mean_frequency: f64,
    pub flagged: bool,
}

/// The functions of the aliasing construction: `f` and its band-limited alias `g`.
#[derive(Clone, Debug)]
pub struct AliasPair {
    pub c: f64,
    pub z: f64,
    pub l: f64,
    /// `g^[k]` for `k = -N..=N`.
    pub g_coeffs: Vec<f64>,
}

impl AliasPair {
    pub fn f(&self, x: f64) -> f64 {
        self.c / E.sqrt() * invcos_density(self.z, self.l, x)
    }
    pub fn g(&self, x: f64) -> f64 {
        let n = (self.g_coeffs.len() / 2) as i64;
        let t = 2.0 * PI * x / self.l;
        let mut s = self.g_coeffs[n as usize];
        for k in 1..=n {
            s += 2.0 * self.g_coeffs[(n + k) as usize] * (k as f64 * t).cos();
        }
        s
    }
}

pub const WITNESS_QUADRATURE: usize = 1 << 15;

/// Builds the witness pair for `(C, a, N, theta)` and measures how far apart their laws are.
pub fn alias_witness(c: f64, a: f64, n: usize, theta: f64, l: f64) -> Result<(AliasPair, WitnessReport)> {
    validate(c > 0.0 && a > 0.0 && l > 0.0, || "C, a and l must be positive".into())?;
    validate(theta > 0.0 && theta < 1.0, || format!("theta must be in (0,1), got {theta}"))?;
    validate(n >= 1, || "N must be >= 1".into())?;
    if n as f64 > theta * a / 16.0 {
        return Err(Error::Precondition(format!("N = {n} > theta a/16 = {}", theta * a / 16.0)));
    }
    let z = 1.0 + 8.0 / a;
    let r = z.powf(-0.5);
    let side = (2 * n + 1) as i32;
    let scale = c / E.sqrt();
    // sum_p r^{|k + p side|} in closed form for |k| <= N
    let rs = r.powi(side);
    let wrapped: Vec<f64> = (-(n as i32)..=n as i32)
        .map(|k| scale * (r.powi(k.abs()) + (r.powi(side + k) + r.powi(side - k)) / (1.0 - rs)))
        .collect();
    let g_norm = wrapped.iter().map(|v| v * v).sum::<f64>().sqrt();
    let alpha = c / g_norm;
    let pair = AliasPair { c, z, l, g_coeffs: wrapped.iter().map(|v| alpha * v).collect() };

    let lat = TorusLattice::new(1, n, l)?;
    let fv: Vec<f64> = (0..lat.size()).map(|i| pair.f(lat.point_of(i)[0])).collect();
    let gv: Vec<f64> = (0..lat.size()).map(|i| pair.g(lat.point_of(i)[0])).collect();
    let nf = fv.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ng = gv.iter().map(|v| v * v).sum::<f64>().sqrt();
    let discretization_gap = fv.iter().zip(&gv).map(|(f, g)| (f / nf - g / ng).powi(2)).sum::<f64>().sqrt();

    let q = WITNESS_QUADRATURE;
    let h = l / q as f64;
    let xs: Vec<f64> = (0..q).map(|i| -0.5 * l + (i as f64 + 0.5) * h).collect();
    let f2: Vec<f64> = xs.iter().map(|&x| pair.f(x).powi(2)).collect();
    let g2: Vec<f64> = xs.iter().map(|&x| pair.g(x).powi(2)).collect();
    let zf: f64 = f2.iter().sum::<f64>() * h;
    let zg: f64 = g2.iter().sum::<f64>() * h;
    let tv = 0.5 * f2.iter().zip(&g2).map(|(p, q)| (p / zf - q / zg).abs()).sum::<f64>() * h;
    let tv_floor = (1.0 - theta).powi(2) / (512.0 * E);

    // E||K_f|| with law proportional to z^{-|k|}
    let rz = 1.0 / z;
    let mean_frequency = 2.0 * rz / (1.0 - rz).powi(2) / ((1.0 + rz) / (1.0 - rz));
    let report = WitnessReport {
        c,
        a,
        n,
        theta,
        z,
        alpha,
        discretization_gap,
        tv,
        tv_floor,
        quadrature_points: q,
        mean_frequency,
        flagged: discretization_gap > 1e-12 || tv < tv_floor,
    };
    Ok((pair, report))
}
