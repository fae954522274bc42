//! Upsampling, continuous sampling from lattice states, TV against an exact density oracle,
//! mean estimation and the end-to-end sampling pipeline.

use std::f64::consts::{E, PI, SQRT_2};
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validate, Error, Result};
use crate::evolve::{choose_t, evolve, EvolutionResult};
use crate::generator::build_generator;
use crate::lattice::{dft, discretize, idft, GridField, SpectralField, TorusLattice, FINE_CAP};
use crate::potential::{default_resolution, EnergyPotential};
use crate::semianalytic::{fit_params, semi_norms, FourierSeries, SemiAnalyticityParams};
use crate::spectral::gradient;

/// Subcells per axis used inside each box by the quadrature TV.
pub const TV_SUBCELLS: usize = 32;
/// Largest number of density evaluations the quadrature TV will perform.
pub const TV_EVAL_CAP: usize = 1 << 27;
/// Draws used by the Monte Carlo TV in `d >= 3`.
pub const MC_TV_DRAWS: usize = 1_000_000;
const MC_TV_SEED: u64 = 0x7476;
const SAMPLE_BLOCK: usize = 1 << 14;
/// Moment order used when fitting `(C, a)` inside the pipeline.
pub const FIT_M_MAX: usize = 16;

/// Zero-pads the centered spectrum of `state` from `[-N..N]^d` into `[-M..M]^d`.
pub fn upsample(state: &GridField, m: usize) -> Result<GridField> {
    let lat = *state.lattice();
    validate(m >= lat.n(), || format!("M = {m} must be >= N = {}", lat.n()))?;
    let big = lat.resized(m, FINE_CAP)?;
    if m == lat.n() {
        return Ok(state.clone());
    }
    let spec = dft(state);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); big.size()];
    for (f, c) in spec.coeffs().iter().enumerate() {
        coeffs[big.flat_unchecked(&lat.multi(f))] = *c;
    }
    let out = SpectralField::new(big, coeffs)?;
    if state.is_real() {
        Ok(crate::lattice::idft_real(&out))
    } else {
        Ok(idft(&out))
    }
}

/// Points drawn from the piecewise-constant density of a lattice state.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    d: usize,
    l: f64,
    m: usize,
    seed: u64,
    coords: Vec<f64>,
}

impl SampleBatch {
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    /// `N` of the lattice the batch was drawn from.
    pub fn source_n(&self) -> usize {
        self.m
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn len(&self) -> usize {
        self.coords.len() / self.d
    }
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }
    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.d)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record((0..self.d).map(|j| format!("x{j}")))?;
        for p in self.points() {
            wr.write_record(p.iter().map(|v| format!("{v:e}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads points written by [`SampleBatch::write_csv`]; lattice and seed metadata are supplied by the caller.
    pub fn read_csv<R: Read>(r: R, l: f64, m: usize, seed: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let d = rd.headers()?.len();
        validate(d >= 1, || "sample file has no columns".into())?;
        let mut coords = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            for v in rec.iter() {
                coords.push(
                    v.trim().parse::<f64>().map_err(|e| Error::Validation(format!("bad sample value {v:?}: {e}")))?,
                );
            }
        }
        Ok(SampleBatch { d, l, m, seed, coords })
    }
}

fn wrap(x: f64, l: f64) -> f64 {
    let y = x - l * ((x + 0.5 * l) / l).floor();
    if y >= 0.5 * l {
        y - l
    } else {
        y
    }
}

/// Draws `count` points: a box chosen with probability `|psi[n]|^2`, then a uniform point inside it.
pub fn continuous_sample(state: &GridField, count: usize, seed: u64) -> Result<SampleBatch> {
    validate(count > 0, || "sample count must be positive".into())?;
    let lat = *state.lattice();
    let mut cum = Vec::with_capacity(lat.size());
    let mut acc = 0.0;
    for v in state.values() {
        acc += v.norm_sqr();
        cum.push(acc);
    }
    validate(acc > 0.0 && acc.is_finite(), || "state has zero norm".into())?;
    validate((acc - 1.0).abs() <= 1e-8, || format!("state must have unit norm, got {}", acc.sqrt()))?;
    let d = lat.d();
    let h = lat.spacing();
    let blocks = count.div_ceil(SAMPLE_BLOCK);
    let parts: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = SAMPLE_BLOCK.min(count - b * SAMPLE_BLOCK);
            let mut out = Vec::with_capacity(len * d);
            for _ in 0..len {
                let r: f64 = rng.random::<f64>() * acc;
                let f = cum.partition_point(|&c| c <= r).min(cum.len() - 1);
                let x = lat.point_of(f);
                for xi in x {
                    let off: f64 = rng.random::<f64>() - 0.5;
                    out.push(wrap(xi + off * h, lat.l()));
                }
            }
            out
        })
        .collect();
    Ok(SampleBatch { d, l: lat.l(), m: lat.n(), seed, coords: parts.concat() })
}

/// Normalized density on the torus given by its logarithm up to a constant.
#[derive(Clone)]
pub struct DensityOracle {
    d: usize,
    l: f64,
    log_density: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    log_z: f64,
    resolution: usize,
}

impl std::fmt::Debug for DensityOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityOracle")
            .field("d", &self.d)
            .field("l", &self.l)
            .field("log_z", &self.log_z)
            .field("resolution", &self.resolution)
            .finish()
    }
}

/// Rectangle-rule nodes of a `res^d` grid over the torus.
fn grid_nodes(d: usize, l: f64, res: usize) -> impl ParallelIterator<Item = Vec<f64>> {
    let total = res.pow(d as u32);
    let h = l / res as f64;
    (0..total).into_par_iter().map(move |mut f| {
        let mut x = vec![0.0; d];
        for j in (0..d).rev() {
            x[j] = -0.5 * l + h * (f % res) as f64;
            f /= res;
        }
        x
    })
}

impl DensityOracle {
    /// Density proportional to `exp(log_density)`, normalized by the rectangle rule on `res^d` nodes.
    pub fn from_log_density<F>(d: usize, l: f64, res: usize, log_density: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        validate(d >= 1 && l > 0.0, || "density needs d >= 1 and l > 0".into())?;
        validate(res >= 2, || "quadrature resolution must be >= 2".into())?;
        validate(res.checked_pow(d as u32).is_some_and(|t| t <= FINE_CAP), || {
            format!("quadrature grid {res}^{d} exceeds cap")
        })?;
        let vals: Vec<f64> = grid_nodes(d, l, res).map(|x| log_density(&x)).collect();
        validate(vals.iter().all(|v| v.is_finite()), || "log density is not finite on the grid".into())?;
        let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let vol = (l / res as f64).powi(d as i32);
        let z: f64 = vals.iter().map(|v| (v - top).exp()).sum::<f64>() * vol;
        Ok(DensityOracle { d, l, log_density: Arc::new(log_density), log_z: top + z.ln(), resolution: res })
    }

    /// `exp(-beta E)/Z`.
    pub fn gibbs(e: &EnergyPotential, beta: f64) -> Result<Self> {
        validate(beta > 0.0 && beta.is_finite(), || format!("beta must be positive, got {beta}"))?;
        let e2 = e.clone();
        Self::from_log_density(e.d(), e.l(), default_resolution(e.d()), move |x| -beta * e2.eval(x))
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn resolution(&self) -> usize {
        self.resolution
    }
    /// `ln Z` relative to the supplied log density.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }
    pub fn density(&self, x: &[f64]) -> f64 {
        ((self.log_density)(x) - self.log_z).exp()
    }

    /// Total mass by the oracle's own quadrature.
    pub fn mass(&self) -> f64 {
        let vol = (self.l / self.resolution as f64).powi(self.d as i32);
        grid_nodes(self.d, self.l, self.resolution).map(|x| self.density(&x)).collect::<Vec<_>>().iter().sum::<f64>()
            * vol
    }

    /// `E f(X)` by the rectangle rule.
    pub fn expectation<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> f64 {
        let vol = (self.l / self.resolution as f64).powi(self.d as i32);
        grid_nodes(self.d, self.l, self.resolution)
            .map(|x| f(&x) * self.density(&x))
            .collect::<Vec<_>>()
            .iter()
            .sum::<f64>()
            * vol
    }

    /// Mass of every box of `lat` by midpoint subcells.
    pub fn cell_masses(&self, lat: &TorusLattice) -> Result<Vec<f64>> {
        self.check_lattice(lat)?;
        let sub = subcell_offsets(lat);
        let vol = (lat.spacing() / TV_SUBCELLS as f64).powi(lat.d() as i32);
        Ok((0..lat.size())
            .into_par_iter()
            .map(|f| {
                let c = lat.point_of(f);
                let mut x = c.clone();
                sub.iter()
                    .map(|o| {
                        for j in 0..c.len() {
                            x[j] = c[j] + o[j];
                        }
                        self.density(&x)
                    })
                    .sum::<f64>()
                    * vol
            })
            .collect())
    }

    fn check_lattice(&self, lat: &TorusLattice) -> Result<()> {
        validate(lat.d() == self.d && (lat.l() - self.l).abs() <= 1e-12 * self.l, || {
            format!("density (d={}, l={}) does not match lattice {lat:?}", self.d, self.l)
        })
    }
}

pub fn exact_gibbs_density(e: &EnergyPotential, beta: f64) -> Result<DensityOracle> {
    DensityOracle::gibbs(e, beta)
}

fn subcell_offsets(lat: &TorusLattice) -> Vec<Vec<f64>> {
    let d = lat.d();
    let h = lat.spacing();
    let s = TV_SUBCELLS;
    (0..s.pow(d as u32))
        .map(|mut f| {
            let mut o = vec![0.0; d];
            for j in (0..d).rev() {
                o[j] = h * (-0.5 + ((f % s) as f64 + 0.5) / s as f64);
                f /= s;
            }
            o
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvMethod {
    Quadrature,
    Histogram,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvReport {
    pub tv: f64,
    pub method: TvMethod,
    /// Subcells per box axis, histogram bins per axis, or Monte Carlo draws.
    pub resolution: usize,
    pub bound: Option<f64>,
    /// Half-width of the 99% interval for Monte Carlo estimates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci99: Option<f64>,
}

impl TvReport {
    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data")
    }
}

/// TV between the sampling density of a unit-norm lattice state and the oracle.
pub fn tv_distance(state: &GridField, oracle: &DensityOracle) -> Result<TvReport> {
    let lat = *state.lattice();
    oracle.check_lattice(&lat)?;
    let d = lat.d();
    let h = lat.spacing();
    let box_vol = h.powi(d as i32);
    let probs: Vec<f64> = state.values().iter().map(|v| v.norm_sqr()).collect();
    let total: f64 = probs.iter().sum();
    validate(total > 0.0, || "state has zero norm".into())?;
    if d <= 2 {
        let evals = lat.size().saturating_mul(TV_SUBCELLS.pow(d as u32));
        if evals > TV_EVAL_CAP {
            return Err(Error::Size(format!("quadrature TV needs {evals} evaluations, cap is {TV_EVAL_CAP}")));
        }
        let sub = subcell_offsets(&lat);
        let sub_vol = box_vol / sub.len() as f64;
        let acc: f64 = (0..lat.size())
            .into_par_iter()
            .map(|f| {
                let mu = probs[f] / total / box_vol;
                let c = lat.point_of(f);
                let mut x = c.clone();
                sub.iter()
                    .map(|o| {
                        for j in 0..d {
                            x[j] = c[j] + o[j];
                        }
                        (mu - oracle.density(&x)).abs()
                    })
                    .sum::<f64>()
                    * sub_vol
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        return Ok(TvReport {
            tv: (0.5 * acc).min(1.0),
            method: TvMethod::Quadrature,
            resolution: TV_SUBCELLS,
            bound: None,
            ci99: None,
        });
    }
    let l = lat.l();
    let side = lat.side() as i64;
    let n = lat.n() as i64;
    let blocks = MC_TV_DRAWS.div_ceil(SAMPLE_BLOCK);
    let (s1, s2) = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha20Rng::seed_from_u64(MC_TV_SEED);
            rng.set_stream(b as u64);
            let len = SAMPLE_BLOCK.min(MC_TV_DRAWS - b * SAMPLE_BLOCK);
            let mut x = vec![0.0; d];
            let mut idx = vec![0i64; d];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                for j in 0..d {
                    x[j] = (rng.random::<f64>() - 0.5) * l;
                    idx[j] = ((x[j] / h).round() as i64 + n).rem_euclid(side) - n;
                }
                let mu = probs[lat.flat_unchecked(&idx)] / total / box_vol;
                let v = 0.5 * (mu - oracle.density(&x)).abs() * l.powi(d as i32);
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let k = MC_TV_DRAWS as f64;
    let mean = s1 / k;
    let var = (s2 / k - mean * mean).max(0.0);
    Ok(TvReport {
        tv: mean.min(1.0),
        method: TvMethod::MonteCarlo,
        resolution: MC_TV_DRAWS,
        bound: None,
        ci99: Some(2.5758 * (var / k).sqrt()),
    })
}

/// TV between the sampling densities of two states on the same lattice.
pub fn state_tv(psi: &GridField, phi: &GridField) -> Result<f64> {
    psi.lattice().check_same(phi.lattice())?;
    Ok(0.5 * psi.values().iter().zip(phi.values()).map(|(a, b)| (a.norm_sqr() - b.norm_sqr()).abs()).sum::<f64>())
}

/// TV between the empirical box histogram of `batch` on `bins` and the oracle's box masses.
pub fn histogram_tv(batch: &SampleBatch, oracle: &DensityOracle, bins: &TorusLattice) -> Result<TvReport> {
    validate(!batch.is_empty(), || "empty batch".into())?;
    validate(batch.d() == bins.d(), || "batch dimension does not match bins".into())?;
    let masses = oracle.cell_masses(bins)?;
    let mut counts = vec![0usize; bins.size()];
    let h = bins.spacing();
    let side = bins.side() as i64;
    let n = bins.n() as i64;
    let mut idx = vec![0i64; bins.d()];
    for p in batch.points() {
        for (j, x) in p.iter().enumerate() {
            idx[j] = ((x / h).round() as i64 + n).rem_euclid(side) - n;
        }
        counts[bins.flat_unchecked(&idx)] += 1;
    }
    let k = batch.len() as f64;
    let tv = 0.5 * counts.iter().zip(&masses).map(|(c, m)| (*c as f64 / k - m).abs()).sum::<f64>();
    Ok(TvReport { tv: tv.min(1.0), method: TvMethod::Histogram, resolution: bins.side(), bound: None, ci99: None })
}

/// `M = ceil((L l d/2 + (10/3) sqrt2 a e^4 C) / (delta U))`, at least 1.
pub fn choose_m(delta: f64, lip: f64, l: f64, d: usize, a: f64, c: f64, u: f64) -> Result<usize> {
    validate(delta > 0.0 && delta < 1.0, || format!("delta must be in (0,1), got {delta}"))?;
    validate(u > 0.0 && u.is_finite(), || format!("U must be positive, got {u}"))?;
    validate(lip >= 0.0 && a >= 0.0 && c >= 0.0 && l > 0.0, || "L, a, C must be >= 0 and l > 0".into())?;
    let m = ((lip * l * d as f64 / 2.0 + 10.0 / 3.0 * SQRT_2 * a * E.powi(4) * c) / (delta * u)).ceil();
    validate(m.is_finite(), || "M is not finite".into())?;
    Ok((m as usize).max(1))
}

#[derive(Clone, Copy, Debug)]
pub enum Auto<T> {
    Auto,
    Fixed(T),
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub n: usize,
    pub m: Auto<usize>,
    pub t: Auto<f64>,
    pub eps: f64,
    pub count: usize,
    pub seed: u64,
    /// Upper limit for an automatically chosen `M`.
    pub m_cap: usize,
    pub snapshots: usize,
}

impl PipelineConfig {
    pub fn new(n: usize, eps: f64, count: usize, seed: u64) -> Self {
        PipelineConfig { n, m: Auto::Auto, t: Auto::Auto, eps, count, seed, m_cap: 512, snapshots: 20 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineSummary {
    pub n: usize,
    pub m: usize,
    pub m_formula: Option<usize>,
    pub t: f64,
    pub eps: f64,
    pub count: usize,
    pub seed: u64,
    pub gap: f64,
    pub kappa: f64,
    /// `l^2 e^{Delta_W} / (4 pi^2)`, the worst-case Poincare constant.
    pub kappa_bound: f64,
    pub fitted_c: f64,
    pub fitted_a: f64,
    pub amplitude_rms: f64,
    pub amplitude_lipschitz: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub batch: SampleBatch,
    pub tv: TvReport,
    pub evolution: EvolutionResult,
    pub sampling_state: GridField,
    pub summary: PipelineSummary,
}

/// Evolves `1` under the `W = E/2` generator, normalizes, upsamples, samples, and measures TV to `e^{-E}`.
pub fn run_pipeline(e: &EnergyPotential, cfg: &PipelineConfig) -> Result<PipelineResult> {
    validate(cfg.eps > 0.0 && cfg.eps < 1.0, || format!("eps must be in (0,1), got {}", cfg.eps))?;
    validate(cfg.count > 0, || "sample count must be positive".into())?;
    validate(cfg.snapshots >= 2, || "pipeline needs at least 2 snapshots".into())?;
    let lat = TorusLattice::new(e.d(), cfg.n, e.l())?;
    let op = build_generator(e, &lat, true)?;
    let gap = op.gap();
    validate(gap > 0.0, || "generator has no spectral gap".into())?;
    let kappa = 1.0 / gap;
    let kappa_bound = e.l().powi(2) * op.delta_w().exp() / (4.0 * PI * PI);
    let t = match cfg.t {
        Auto::Auto => choose_t(kappa, e.diameter(), cfg.eps)?,
        Auto::Fixed(t) => t,
    };
    let evolution = evolve(&op, &GridField::constant(lat, 1.0), t, cfg.snapshots)?;
    let u = evolution.final_state().clone();

    let params = fit_params(&semi_norms(&FourierSeries::from_spectral(&dft(&u)), FIT_M_MAX)?)?;
    let rms = u.norm() / (lat.size() as f64).sqrt();
    let grads = gradient(&u);
    let lip = 1.05
        * (0..lat.size())
            .map(|f| grads.iter().map(|g| g.values()[f].re.powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
    let (m, m_formula) = match cfg.m {
        Auto::Fixed(m) => (m, None),
        Auto::Auto => {
            let mf = choose_m(cfg.eps, lip, e.l(), e.d(), params.a(), params.c(), rms)?;
            (mf.clamp(cfg.n, cfg.m_cap.max(cfg.n)), Some(mf))
        }
    };
    let state = upsample(&u.normalized()?, m)?;
    let batch = continuous_sample(&state, cfg.count, cfg.seed)?;
    let oracle = DensityOracle::gibbs(e, 1.0)?;
    let tv = tv_distance(&state, &oracle)?;
    Ok(PipelineResult {
        batch,
        tv,
        evolution,
        sampling_state: state,
        summary: PipelineSummary {
            n: cfg.n,
            m,
            m_formula,
            t,
            eps: cfg.eps,
            count: cfg.count,
            seed: cfg.seed,
            gap,
            kappa,
            kappa_bound,
            fitted_c: params.c(),
            fitted_a: params.a(),
            amplitude_rms: rms,
            amplitude_lipschitz: lip,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

pub fn estimate_mean<F: Fn(&[f64]) -> f64>(f: F, batch: &SampleBatch) -> Result<MeanEstimate> {
    validate(!batch.is_empty(), || "empty batch".into())?;
    let vals: Vec<f64> = batch.points().map(&f).collect();
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    Ok(MeanEstimate { mean, stderr: (var / k).sqrt(), count: vals.len() })
}

/// `E f(X)` under `e^{-E}/Z`.
pub fn exact_mean<F: Fn(&[f64]) -> f64 + Sync>(f: F, e: &EnergyPotential) -> Result<f64> {
    Ok(DensityOracle::gibbs(e, 1.0)?.expectation(f))
}

#[derive(Clone, Debug, Serialize)]
pub struct InterpolationReport {
    pub n: usize,
    pub distance: f64,
    pub distance_bound: f64,
    pub tv_excess: f64,
    pub tv_bound: f64,
    pub holds: bool,
}

/// Distance between `F_N |u_N>` and the truncated `u^/U`, and the TV between the induced laws on frequencies.
pub fn interpolation_error_bound_check<F>(
    u: F,
    series: &FourierSeries,
    params: &SemiAnalyticityParams,
    lat: &TorusLattice,
) -> Result<InterpolationReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (c, a) = (params.c(), params.a());
    let need = 2.0 * a * lat.d() as f64;
    if (lat.n() as f64) < need {
        return Err(Error::Precondition(format!("N = {} < 2ad = {need}", lat.n())));
    }
    validate(series.d() == lat.d(), || "series dimension does not match lattice".into())?;
    let uu = series.rms();
    validate(uu > 0.0, || "series has zero norm".into())?;
    let spec = dft(&discretize(u, lat)?.normalized()?);
    let mut dist2 = 0.0;
    let mut tv = 0.0;
    for (f, cf) in spec.coeffs().iter().enumerate() {
        let k = lat.multi(f);
        let target = series.get(&k) / uu;
        dist2 += (cf - target).norm_sqr();
        tv += (cf.norm_sqr() - target.norm_sqr()).abs();
    }
    for (k, v) in series.iter() {
        if !lat.contains(k) {
            tv += v.norm_sqr() / (uu * uu);
        }
    }
    let decay = (-0.6 * lat.n() as f64 / a).exp();
    let distance = dist2.sqrt();
    let tv_excess = 0.5 * tv;
    let distance_bound = 4.0 * SQRT_2 * E.powi(3) * c / uu * decay;
    let tv_bound = 16.0 * SQRT_2 * E.powi(3) * c / uu * decay;
    Ok(InterpolationReport {
        n: lat.n(),
        distance,
        distance_bound,
        tv_excess,
        tv_bound,
        holds: distance <= distance_bound && tv_excess <= tv_bound,
    })
}
