//! Periodic test potentials with diameter and Lipschitz metadata.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validate, Error, Result};
use crate::lattice::{discretize, TorusLattice};
use crate::special::bessel_i;
use crate::spectral::gradient;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Sigmoid network on the periodic features `(cos 2 pi x_i/l, sin 2 pi x_i/l)_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicMlp {
    d: usize,
    layers: Vec<MlpLayer>,
}

/// On-disk form `{layers:[{W,b}], l, d}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpDocument {
    pub layers: Vec<MlpLayer>,
    pub l: f64,
    pub d: usize,
}

impl PeriodicMlp {
    pub fn new(d: usize, layers: Vec<MlpLayer>) -> Result<Self> {
        validate(d >= 1, || "MLP input dimension must be >= 1".into())?;
        validate(!layers.is_empty(), || "MLP needs at least one layer".into())?;
        let mut width = 2 * d;
        for (i, layer) in layers.iter().enumerate() {
            validate(!layer.w.is_empty(), || format!("layer {i} has no rows"))?;
            validate(layer.w.len() == layer.b.len(), || {
                format!("layer {i}: {} rows but {} biases", layer.w.len(), layer.b.len())
            })?;
            for row in &layer.w {
                validate(row.len() == width, || format!("layer {i}: row width {} but input width {width}", row.len()))?;
                validate(row.iter().all(|v| v.is_finite()), || format!("layer {i}: non-finite weight"))?;
            }
            validate(layer.b.iter().all(|v| v.is_finite()), || format!("layer {i}: non-finite bias"))?;
            width = layer.w.len();
        }
        validate(width == 1, || format!("MLP output width must be 1, got {width}"))?;
        Ok(PeriodicMlp { d, layers })
    }

    /// Random net with the given hidden widths; weights uniform in `[-scale, scale]`.
    pub fn random(d: usize, hidden: &[usize], scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut widths = vec![2 * d];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| MlpLayer {
                w: (0..w[1]).map(|_| (0..w[0]).map(|_| rng.random_range(-scale..=scale)).collect()).collect(),
                b: (0..w[1]).map(|_| rng.random_range(-scale..=scale)).collect(),
            })
            .collect();
        Self::new(d, layers)
    }

    pub fn from_document(doc: &MlpDocument) -> Result<(Self, f64)> {
        validate(doc.l.is_finite() && doc.l > 0.0, || "MLP period must be positive".into())?;
        Ok((Self::new(doc.d, doc.layers.clone())?, doc.l))
    }

    pub fn to_document(&self, l: f64) -> MlpDocument {
        MlpDocument { layers: self.layers.clone(), l, d: self.d }
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn depth(&self) -> usize {
        self.layers.len()
    }
    pub fn layers(&self) -> &[MlpLayer] {
        &self.layers
    }

    pub fn eval(&self, x: &[f64], l: f64) -> f64 {
        let mut h: Vec<f64> = Vec::with_capacity(2 * self.d);
        for &xi in x {
            let t = 2.0 * PI * xi / l;
            h.push(t.cos());
            h.push(t.sin());
        }
        for layer in &self.layers {
            h = layer
                .w
                .iter()
                .zip(&layer.b)
                .map(|(row, b)| sigmoid(row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + b))
                .collect();
        }
        h[0]
    }
}

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PotentialKind {
    Zero,
    /// `z sum_i (1 - cos(2 pi f x_i / l))`.
    Cosine {
        z: f64,
        freq: u32,
    },
    /// `-sum_i ln u(x_i)` with `u = (z-1)/(1 - 2 sqrt(z) cos(2 pi x/l) + z)`.
    InvCos {
        z: f64,
    },
    Mlp(PeriodicMlp),
    Custom {
        name: String,
        f: ScalarFn,
    },
}

impl fmt::Debug for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialKind::Zero => write!(f, "Zero"),
            PotentialKind::Cosine { z, freq } => write!(f, "Cosine {{ z: {z}, freq: {freq} }}"),
            PotentialKind::InvCos { z } => write!(f, "InvCos {{ z: {z} }}"),
            PotentialKind::Mlp(m) => write!(f, "Mlp {{ depth: {} }}", m.depth()),
            PotentialKind::Custom { name, .. } => write!(f, "Custom {{ name: {name:?} }}"),
        }
    }
}

/// Min-normalized periodic potential `E: R^d -> R`.
#[derive(Clone, Debug)]
pub struct EnergyPotential {
    kind: PotentialKind,
    d: usize,
    l: f64,
    shift: f64,
    diameter: f64,
    lipschitz: f64,
}

/// Default fine-grid points per axis for the estimators.
pub fn default_resolution(d: usize) -> usize {
    match d {
        1 => 1 << 15,
        2 => 512,
        _ => 64,
    }
}

fn check_geometry(d: usize, l: f64) -> Result<()> {
    validate(d >= 1, || "dimension must be >= 1".into())?;
    validate(l.is_finite() && l > 0.0, || format!("period must be positive, got {l}"))
}

impl EnergyPotential {
    fn raw(&self, x: &[f64]) -> f64 {
        raw_eval(&self.kind, self.l, x)
    }

    /// `E(x)`, shifted so that its minimum is zero.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.raw(x) - self.shift
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn diameter(&self) -> f64 {
        self.diameter
    }
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            PotentialKind::Zero => "zero".into(),
            PotentialKind::Cosine { z, freq: 1 } => format!("cosine:z={z}"),
            PotentialKind::Cosine { z, freq } => format!("cosine:z={z},freq={freq}"),
            PotentialKind::InvCos { z } => format!("invcos:z={z}"),
            PotentialKind::Mlp(m) => format!("mlp:depth={}", m.depth()),
            PotentialKind::Custom { name, .. } => format!("custom:{name}"),
        }
    }

    /// Fourier coefficient at `k` of `e^{-E}` (series `sum_k c_k e^{2 pi i <k,x>/l}`), when known.
    pub fn analytic_fourier(&self, k: &[i64]) -> Option<f64> {
        if k.len() != self.d {
            return None;
        }
        match &self.kind {
            PotentialKind::Zero => Some(if k.iter().all(|&v| v == 0) { 1.0 } else { 0.0 }),
            PotentialKind::Cosine { z, freq } => {
                let f = *freq as i64;
                // e^{-E} = e^{shift} e^{-z d} prod_i e^{z cos}
                let mut c = self.shift.exp();
                for &ki in k {
                    if ki % f != 0 {
                        return Some(0.0);
                    }
                    c *= (-z).exp() * bessel_i(ki / f, *z);
                }
                Some(c)
            }
            PotentialKind::InvCos { z } => {
                let mut c = self.shift.exp();
                for &ki in k {
                    c *= invcos_coefficient(*z, ki);
                }
                Some(c)
            }
            _ => None,
        }
    }

    /// Largest `|E(x + l e_j) - E(x)|` over random points and axes.
    pub fn periodicity_defect(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let x: Vec<f64> = (0..self.d).map(|_| rng.random_range(-2.0..2.0) * self.l).collect();
            let e0 = self.eval(&x);
            for j in 0..self.d {
                let mut y = x.clone();
                y[j] += self.l;
                worst = worst.max((self.eval(&y) - e0).abs());
            }
        }
        worst
    }

    /// Lattice samples of `E`.
    pub fn grid(&self, lat: &TorusLattice) -> Result<crate::lattice::GridField> {
        validate(lat.d() == self.d && (lat.l() - self.l).abs() <= 1e-12 * self.l, || {
            format!("potential (d={}, l={}) does not match lattice {lat:?}", self.d, self.l)
        })?;
        discretize(|x| self.eval(x), lat)
    }
}

fn raw_eval(kind: &PotentialKind, l: f64, x: &[f64]) -> f64 {
    match kind {
        PotentialKind::Zero => 0.0,
        PotentialKind::Cosine { z, freq } => {
            x.iter().map(|&xi| z * (1.0 - (2.0 * PI * *freq as f64 * xi / l).cos())).sum()
        }
        PotentialKind::InvCos { z } => x.iter().map(|&xi| -invcos_density(*z, l, xi).ln()).sum(),
        PotentialKind::Mlp(m) => m.eval(x, l),
        PotentialKind::Custom { f, .. } => f(x),
    }
}

/// `u(x) = (z-1)/(1 - 2 sqrt(z) cos(2 pi x/l) + z)`.
pub fn invcos_density(z: f64, l: f64, x: f64) -> f64 {
    (z - 1.0) / (1.0 - 2.0 * z.sqrt() * (2.0 * PI * x / l).cos() + z)
}

/// Exact Fourier coefficient `z^{-|k|/2}` of [`invcos_density`].
pub fn invcos_coefficient(z: f64, k: i64) -> f64 {
    z.powf(-(k.unsigned_abs() as f64) / 2.0)
}

pub fn zero_potential(d: usize, l: f64) -> Result<EnergyPotential> {
    check_geometry(d, l)?;
    Ok(EnergyPotential { kind: PotentialKind::Zero, d, l, shift: 0.0, diameter: 0.0, lipschitz: 0.0 })
}

pub fn cosine_potential(z: f64, d: usize, l: f64) -> Result<EnergyPotential> {
    cosine_harmonic_potential(z, 1, d, l)
}

/// Cosine potential at frequency `freq`; `freq = 2` gives a two-well landscape.
pub fn cosine_harmonic_potential(z: f64, freq: u32, d: usize, l: f64) -> Result<EnergyPotential> {
    check_geometry(d, l)?;
    validate(z.is_finite(), || "z must be finite".into())?;
    validate(freq >= 1, || "frequency must be >= 1".into())?;
    let shift = if z < 0.0 { 2.0 * z * d as f64 } else { 0.0 };
    let slope = 2.0 * PI * freq as f64 * z.abs() / l * (d as f64).sqrt();
    Ok(EnergyPotential {
        kind: PotentialKind::Cosine { z, freq },
        d,
        l,
        shift,
        diameter: 2.0 * z.abs() * d as f64,
        lipschitz: 1.05 * slope,
    })
}

pub fn invcos_potential(z: f64, d: usize, l: f64) -> Result<EnergyPotential> {
    check_geometry(d, l)?;
    validate(z.is_finite() && z > 1.0, || format!("invcos needs z > 1, got {z}"))?;
    let s = z.sqrt();
    let umax = (s + 1.0) / (s - 1.0);
    let mut p = EnergyPotential {
        kind: PotentialKind::InvCos { z },
        d,
        l,
        shift: -(d as f64) * umax.ln(),
        diameter: 2.0 * d as f64 * umax.ln(),
        lipschitz: 0.0,
    };
    p.lipschitz = estimate_lipschitz(&p, default_resolution(d))?;
    Ok(p)
}

pub fn mlp_potential(mlp: PeriodicMlp, l: f64) -> Result<EnergyPotential> {
    check_geometry(mlp.d(), l)?;
    let d = mlp.d();
    estimated(PotentialKind::Mlp(mlp), d, l)
}

pub fn custom_potential<F>(name: &str, d: usize, l: f64, f: F) -> Result<EnergyPotential>
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    check_geometry(d, l)?;
    estimated(PotentialKind::Custom { name: name.into(), f: Arc::new(f) }, d, l)
}

fn estimated(kind: PotentialKind, d: usize, l: f64) -> Result<EnergyPotential> {
    let mut p = EnergyPotential { kind, d, l, shift: 0.0, diameter: 0.0, lipschitz: 0.0 };
    let res = default_resolution(d);
    let (lo, hi) = estimate_range(&|x: &[f64]| p.raw(x), d, l, res)?;
    p.shift = lo;
    p.diameter = hi - lo;
    p.lipschitz = estimate_lipschitz(&p, res)?;
    Ok(p)
}

fn fine_lattice(d: usize, l: f64, resolution: usize) -> Result<TorusLattice> {
    validate(resolution >= 2, || "resolution must be >= 2".into())?;
    TorusLattice::fine(d, resolution / 2, l)
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    for _ in 0..80 {
        if fc > fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = f(e);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

fn refine_max(f: &(dyn Fn(&[f64]) -> f64 + Sync), start: Vec<f64>, h: f64) -> f64 {
    let mut x = start;
    let mut best = f(&x);
    for _ in 0..4 {
        for j in 0..x.len() {
            let xj = x[j];
            let (t, v) = golden_max(
                |t| {
                    let mut y = x.clone();
                    y[j] = t;
                    f(&y)
                },
                xj - h,
                xj + h,
            );
            if v > best {
                best = v;
                x[j] = t;
            }
        }
    }
    best
}

/// Fine-grid minimum and maximum of `f`, polished by coordinate-wise golden section.
pub fn estimate_range(f: &(dyn Fn(&[f64]) -> f64 + Sync), d: usize, l: f64, resolution: usize) -> Result<(f64, f64)> {
    let lat = fine_lattice(d, l, resolution)?;
    let g = discretize(f, &lat)?;
    let vals = g.re();
    let (imin, imax) = vals
        .iter()
        .enumerate()
        .fold((0, 0), |(lo, hi), (i, &v)| (if v < vals[lo] { i } else { lo }, if v > vals[hi] { i } else { hi }));
    let h = lat.spacing();
    let hi = refine_max(f, lat.point_of(imax), h).max(vals[imax]);
    let neg = |x: &[f64]| -f(x);
    let lo = (-refine_max(&neg, lat.point_of(imin), h)).min(vals[imin]);
    Ok((lo, hi))
}

/// `max E - min E` over a fine grid with local refinement.
pub fn estimate_diameter(e: &EnergyPotential, resolution: usize) -> Result<f64> {
    let (lo, hi) = estimate_range(&|x: &[f64]| e.eval(x), e.d, e.l, resolution)?;
    Ok((hi - lo).max(0.0))
}

/// `1.05 * max_n |grad E|(x_n)` with the spectral gradient on a fine grid.
pub fn estimate_lipschitz(e: &EnergyPotential, resolution: usize) -> Result<f64> {
    let lat = fine_lattice(e.d, e.l, resolution)?;
    let g = discretize(|x| e.eval(x), &lat)?;
    let grads = gradient(&g);
    let max = (0..lat.size())
        .into_par_iter()
        .map(|f| grads.iter().map(|gj| gj.values()[f].re.powi(2)).sum::<f64>().sqrt())
        .reduce(|| 0.0, f64::max);
    Ok(1.05 * max)
}

/// Potential descriptor used by configs: `zero`, `cosine:z=1`, `twowell:z=2`, `invcos:z=4`.
pub fn parse_potential(spec: &str, d: usize, l: f64) -> Result<EnergyPotential> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut z: Option<f64> = None;
    let mut freq: u32 = 1;
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Validation(format!("bad potential parameter {kv:?}")))?;
        match k.trim() {
            "z" => z = Some(v.trim().parse().map_err(|_| Error::Validation(format!("bad z {v:?}")))?),
            "freq" => freq = v.trim().parse().map_err(|_| Error::Validation(format!("bad freq {v:?}")))?,
            other => return Err(Error::Validation(format!("unknown potential parameter {other:?}"))),
        }
    }
    let need_z = || z.ok_or_else(|| Error::Validation(format!("potential {name:?} needs z")));
    match name.trim() {
        "zero" => zero_potential(d, l),
        "cosine" => cosine_harmonic_potential(need_z()?, freq, d, l),
        "twowell" => cosine_harmonic_potential(need_z()?, 2, d, l),
        "invcos" => invcos_potential(need_z()?, d, l),
        other => Err(Error::Validation(format!("unknown potential kind {other:?}"))),
    }
}
