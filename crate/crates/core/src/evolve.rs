//! Exact evolution `u(t) = e^{L t} u(0)` through the stored eigendecomposition.

use std::f64::consts::{E, PI};
use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{validate, Error, Result};
use crate::generator::{build_generator, FpOperator};
use crate::lattice::{GridField, TorusLattice};
use crate::potential::EnergyPotential;

#[derive(Clone, Debug)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    pub snapshots: Vec<GridField>,
    pub norms: Vec<f64>,
    pub inners: Vec<f64>,
    /// `Var_{rho_s}[rho_t / rho_s]`, with both densities normalized over the lattice.
    pub chi2: Vec<f64>,
    /// `max_n e^{W[n]} u[n](t)`.
    pub max_principle: Vec<f64>,
}

impl EvolutionResult {
    pub fn final_state(&self) -> &GridField {
        self.snapshots.last().expect("at least one snapshot")
    }

    /// CSV rows `t,norm,inner,chi2,max_principle`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "norm", "inner", "chi2", "max_principle"])?;
        for i in 0..self.times.len() {
            wr.write_record([
                format!("{:e}", self.times[i]),
                format!("{:e}", self.norms[i]),
                format!("{:e}", self.inners[i]),
                format!("{:e}", self.chi2[i]),
                format!("{:e}", self.max_principle[i]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Precomputed `Q^T U^{-1} u0` so that any time can be evaluated with one matrix-vector product.
pub struct Propagator<'a> {
    op: &'a FpOperator,
    u0: GridField,
    coeffs: DVector<f64>,
}

impl<'a> Propagator<'a> {
    pub fn new(op: &'a FpOperator, u0: &GridField) -> Result<Self> {
        op.lattice().check_same(u0.lattice())?;
        validate(u0.is_real(), || "evolution expects a real initial state".into())?;
        let scaled =
            DVector::from_iterator(u0.len(), u0.values().iter().zip(op.w()).map(|(v, w)| v.re * (0.5 * w).exp()));
        let coeffs = op.eigenvectors().tr_mul(&scaled);
        Ok(Propagator { op, u0: u0.clone(), coeffs })
    }

    pub fn at(&self, t: f64) -> GridField {
        if t == 0.0 {
            return self.u0.clone();
        }
        let decayed = DVector::from_iterator(
            self.coeffs.len(),
            self.coeffs.iter().zip(self.op.eigenvalues()).map(|(c, l)| c * (l * t).exp()),
        );
        let v = self.op.eigenvectors() * decayed;
        let vals = v.iter().zip(self.op.w()).map(|(x, w)| x * (-0.5 * w).exp()).collect();
        GridField::from_real(*self.op.lattice(), vals).expect("layout")
    }
}

fn chi2_against(op: &FpOperator, u: &[f64]) -> f64 {
    let st = op.stationary();
    let zs: f64 = st.iter().sum();
    let zu: f64 = u.iter().sum();
    if zu == 0.0 {
        return f64::INFINITY;
    }
    st.iter()
        .zip(u)
        .map(|(s, v)| {
            let rs = s / zs;
            let rt = v / zu;
            rs * (rt / rs - 1.0).powi(2)
        })
        .sum()
}

/// Evolves `u0` to `T`, recording `snapshots` equally spaced states from `t = 0` to `t = T`.
pub fn evolve(op: &FpOperator, u0: &GridField, t_end: f64, snapshots: usize) -> Result<EvolutionResult> {
    validate(t_end.is_finite() && t_end >= 0.0, || format!("T must be >= 0, got {t_end}"))?;
    validate(snapshots >= 1, || "need at least one snapshot".into())?;
    let prop = Propagator::new(op, u0)?;
    let times: Vec<f64> = if t_end == 0.0 || snapshots == 1 {
        if t_end == 0.0 {
            vec![0.0]
        } else {
            vec![0.0, t_end]
        }
    } else {
        (0..snapshots).map(|i| t_end * i as f64 / (snapshots - 1) as f64).collect()
    };
    let mut res = EvolutionResult {
        times: Vec::new(),
        snapshots: Vec::new(),
        norms: Vec::new(),
        inners: Vec::new(),
        chi2: Vec::new(),
        max_principle: Vec::new(),
    };
    for (i, &t) in times.iter().enumerate() {
        // the last sample is exactly T
        let t = if i + 1 == times.len() { t_end } else { t };
        let u = prop.at(t);
        let re = u.re();
        res.norms.push(u.norm());
        res.inners.push(re.iter().sum());
        res.chi2.push(chi2_against(op, &re));
        res.max_principle.push(re.iter().zip(op.w()).map(|(v, w)| v * w.exp()).fold(f64::NEG_INFINITY, f64::max));
        res.times.push(t);
        res.snapshots.push(u);
    }
    Ok(res)
}

/// `T = kappa ln(2 e^{Delta/2} / eps)`.
pub fn choose_t(kappa: f64, delta: f64, eps: f64) -> Result<f64> {
    validate(kappa.is_finite() && kappa > 0.0, || format!("kappa must be positive, got {kappa}"))?;
    validate(delta.is_finite() && delta >= 0.0, || format!("Delta must be >= 0, got {delta}"))?;
    validate(eps > 0.0 && eps < 1.0, || format!("eps must be in (0,1), got {eps}"))?;
    Ok(kappa * (2.0 * (0.5 * delta).exp() / eps).ln())
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub stationary_input: bool,
    pub rate: Option<f64>,
    pub points_used: usize,
    pub gap: f64,
    pub poincare_floor: f64,
    pub rate_vs_gap: bool,
    pub rate_vs_floor: bool,
    /// `sqrt(Var)/2` at the final time.
    pub tv_chain_bound: f64,
}

/// Values of the chi-square trace below this are treated as round-off.
pub const CHI2_FLOOR: f64 = 1e-20;

/// Least-squares slope of `ln chi2` against `t`.
pub fn decay_report(op: &FpOperator, result: &EvolutionResult) -> Result<DecayReport> {
    validate(result.times.len() >= 4, || "decay fit needs at least 4 snapshots".into())?;
    let gap = op.gap();
    let l = op.lattice().l();
    let poincare_floor = 4.0 * PI * PI / (l * l * op.delta_w().exp());
    let tv_chain_bound = 0.5 * result.chi2.last().copied().unwrap_or(0.0).sqrt();
    let pts: Vec<(f64, f64)> =
        result.times.iter().zip(&result.chi2).filter(|(_, c)| **c > CHI2_FLOOR).map(|(t, c)| (*t, c.ln())).collect();
    if result.chi2[0] <= CHI2_FLOOR || pts.len() < 3 {
        return Ok(DecayReport {
            stationary_input: result.chi2[0] <= CHI2_FLOOR,
            rate: None,
            points_used: pts.len(),
            gap,
            poincare_floor,
            rate_vs_gap: false,
            rate_vs_floor: false,
            tv_chain_bound,
        });
    }
    let rate = -linear_slope(&pts);
    Ok(DecayReport {
        stationary_input: false,
        rate: Some(rate),
        points_used: pts.len(),
        gap,
        poincare_floor,
        rate_vs_gap: rate >= 2.0 * gap * 0.95,
        rate_vs_floor: rate >= 2.0 * poincare_floor * 0.95,
        tv_chain_bound,
    })
}

pub fn linear_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, Serialize)]
pub struct NormReport {
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub norm_bound: f64,
    pub max_inner_drift: f64,
    pub max_norm_ok: bool,
    pub min_norm_ok: bool,
    pub inner_ok: bool,
    pub warnings: Vec<String>,
}

/// Norm, mass-conservation and maximum-principle diagnostics for a run started at `u0 = 1`.
pub fn norm_and_max_principle_report(op: &FpOperator, result: &EvolutionResult) -> Result<NormReport> {
    validate(result.snapshots[0].values().iter().all(|v| v.re == 1.0 && v.im == 0.0), || {
        "norm report expects u0 = 1".into()
    })?;
    let one = (op.lattice().size() as f64).sqrt();
    let max_ratio = result.norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / one;
    let min_ratio = result.norms.iter().cloned().fold(f64::INFINITY, f64::min) / one;
    let i0 = result.inners[0];
    let max_inner_drift = result.inners.iter().map(|v| (v / i0 - 1.0).abs()).fold(0.0, f64::max);
    let norm_bound = (0.5 * op.delta_w()).exp();
    let mut warnings = Vec::new();
    for i in 1..result.max_principle.len() {
        let (a, b) = (result.max_principle[i - 1], result.max_principle[i]);
        if b > a + 1e-6 * a.abs().max(1.0) {
            warnings.push(format!(
                "max-principle diagnostic increased from {a:.9e} to {b:.9e} at t = {:.6e}",
                result.times[i]
            ));
        }
    }
    Ok(NormReport {
        max_ratio,
        min_ratio,
        norm_bound,
        max_inner_drift,
        max_norm_ok: max_ratio <= norm_bound * (1.0 + 1e-12),
        min_norm_ok: min_ratio >= 1.0 - 1e-10,
        inner_ok: max_inner_drift <= 1e-9,
        warnings,
    })
}

/// Grid version of the closeness-to-TV chain: `delta = sqrt(chi2(t)/chi2(0))` for `u0 = 1`.
#[derive(Clone, Debug, Serialize)]
pub struct ChiSquareTvPoint {
    pub t: f64,
    pub delta: f64,
    pub tv: f64,
    pub bound: f64,
}

/// For each snapshot: TV between the lattice laws `~u^2` and `~rho_s^2`, against `2 delta e^{Delta/2}`.
pub fn chi2_tv_chain(op: &FpOperator, result: &EvolutionResult) -> Vec<ChiSquareTvPoint> {
    let st = op.stationary();
    let s2: f64 = st.iter().map(|v| v * v).sum();
    let c0 = result.chi2[0];
    result
        .snapshots
        .iter()
        .zip(&result.times)
        .zip(&result.chi2)
        .map(|((u, &t), &c)| {
            let re = u.re();
            let u2: f64 = re.iter().map(|v| v * v).sum();
            let tv = 0.5 * re.iter().zip(&st).map(|(v, s)| (v * v / u2 - s * s / s2).abs()).sum::<f64>();
            let delta = if c0 > 0.0 { (c / c0).sqrt() } else { 0.0 };
            ChiSquareTvPoint { t, delta, tv, bound: 2.0 * delta * (0.5 * op.delta_w()).exp() }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyPoint {
    pub n: usize,
    pub error: f64,
    pub reported_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyReport {
    pub points: Vec<ConsistencyPoint>,
    /// Least-squares slope of `ln error` against `N`.
    pub log_slope: f64,
    pub monotone: bool,
}

/// Compares `u_N(T)` with the reference run on the nested lattice `N_ref = 3N+1`, restricted to the coarse points.
pub fn continuum_consistency(
    e: &EnergyPotential,
    ns: &[usize],
    t_end: f64,
    c: f64,
    a: f64,
) -> Result<ConsistencyReport> {
    validate(ns.len() >= 2, || "need at least two lattice sizes".into())?;
    let mut points = Vec::new();
    for &n in ns {
        let lat = TorusLattice::new(e.d(), n, e.l())?;
        let n_ref = 3 * n + 1;
        let lat_ref = TorusLattice::new(e.d(), n_ref, e.l())?;
        let op = build_generator(e, &lat, true)?;
        let op_ref = build_generator(e, &lat_ref, true)?;
        let u = Propagator::new(&op, &GridField::constant(lat, 1.0))?.at(t_end);
        let ur = Propagator::new(&op_ref, &GridField::constant(lat_ref, 1.0))?.at(t_end);
        let mut err = 0.0;
        for f in 0..lat.size() {
            let idx: Vec<i64> = lat.multi(f).into_iter().map(|i| 3 * i).collect();
            let g = lat_ref.flat(&idx)?;
            err += (u.values()[f].re - ur.values()[g].re).powi(2);
        }
        points.push(ConsistencyPoint {
            n,
            error: err.sqrt(),
            reported_bound: discretization_error_bound(e, &lat, t_end, c, a),
        });
    }
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.error > 0.0).map(|p| (p.n as f64, p.error.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::Validation("errors vanished; slope undefined".into()));
    }
    let monotone = points.windows(2).all(|w| w[1].error <= w[0].error);
    Ok(ConsistencyReport { log_slope: linear_slope(&pts), monotone, points })
}

/// Reported space-discretization bound `1.6e6 pi e^3 T e^{3 Delta/2} C^2 (a^3+a^2)(1+lL/48)/l^2 (2N+1)^{d/2} e^{-0.4N/a}`.
pub fn discretization_error_bound(e: &EnergyPotential, lat: &TorusLattice, t_end: f64, c: f64, a: f64) -> f64 {
    let l = lat.l();
    let n = lat.n() as f64;
    1.6e6
        * PI
        * E.powi(3)
        * t_end
        * (1.5 * e.diameter()).exp()
        * c
        * c
        * (a.powi(3) + a * a)
        * (1.0 + l * e.lipschitz() / 48.0)
        / (l * l)
        * (lat.side() as f64).powf(lat.d() as f64 / 2.0)
        * (-0.4 * n / a).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{discretize, make_lattice};
    use crate::potential::{cosine_potential, zero_potential};

    #[test]
    fn zero_potential_keeps_ones() {
        let lat = make_lattice(1, 6, 1.0).unwrap();
        let op = build_generator(&zero_potential(1, 1.0).unwrap(), &lat, true).unwrap();
        let r = evolve(&op, &GridField::constant(lat, 1.0), 3.0, 5).unwrap();
        for s in &r.snapshots {
            assert!(s.values().iter().all(|v| (v.re - 1.0).abs() < 1e-12));
        }
        let rep = norm_and_max_principle_report(&op, &r).unwrap();
        assert!(rep.warnings.is_empty() && rep.max_norm_ok && rep.min_norm_ok && rep.inner_ok);
    }

    #[test]
    fn time_zero_is_bit_exact() {
        let lat = make_lattice(1, 5, 1.0).unwrap();
        let op = build_generator(&cosine_potential(1.0, 1, 1.0).unwrap(), &lat, true).unwrap();
        let u0 = discretize(|x| 1.0 + 0.3 * x[0].sin(), &lat).unwrap();
        let r = evolve(&op, &u0, 0.0, 3).unwrap();
        assert_eq!(r.snapshots[0], u0);
        assert_eq!(r.times, vec![0.0]);
    }

    #[test]
    fn long_time_limit_is_gibbs() {
        let l = 2.0 * PI;
        let lat = make_lattice(1, 12, l).unwrap();
        let e = cosine_potential(2.0, 1, l).unwrap();
        let op = build_generator(&e, &lat, true).unwrap();
        let u = Propagator::new(&op, &GridField::constant(lat, 1.0)).unwrap().at(50.0);
        let st = op.stationary();
        let re = u.re();
        let dot: f64 = re.iter().zip(&st).map(|(a, b)| a * b).sum();
        let na: f64 = re.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb: f64 = st.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(dot / (na * nb) >= 1.0 - 1e-6);
    }

    #[test]
    fn choose_t_examples() {
        assert!((choose_t(1.0, 2.0, 0.1).unwrap() - 3.9957).abs() < 1e-4);
        assert!((choose_t(1.0, 2.0, 0.1).unwrap() - (2.0 * 1f64.exp() / 0.1).ln()).abs() < 1e-14);
        let a = choose_t(1.5, 1.0, 0.2).unwrap();
        let b = choose_t(3.0, 1.0, 0.2).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-14);
        assert!(choose_t(1.0, 0.0, 2.0).is_err());
        assert!(choose_t(1.0, 0.0, 1.0).is_err());
        assert!(choose_t(0.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn single_mode_decay_rate() {
        let l = 1.0;
        let lat = make_lattice(1, 8, l).unwrap();
        let op = build_generator(&zero_potential(1, l).unwrap(), &lat, true).unwrap();
        let u0 = discretize(|x| 1.0 + 0.5 * (2.0 * PI * x[0] / l).cos(), &lat).unwrap();
        let r = evolve(&op, &u0, 0.2, 11).unwrap();
        let rep = decay_report(&op, &r).unwrap();
        let want = 2.0 * (2.0 * PI / l).powi(2);
        assert!((rep.rate.unwrap() - want).abs() < 0.01 * want);
        assert!(rep.rate_vs_gap && rep.rate_vs_floor);
    }

    #[test]
    fn stationary_input_flagged() {
        let lat = make_lattice(1, 8, 1.0).unwrap();
        let op = build_generator(&cosine_potential(1.0, 1, 1.0).unwrap(), &lat, true).unwrap();
        let u0 = GridField::from_real(lat, op.stationary()).unwrap();
        let r = evolve(&op, &u0, 1.0, 6).unwrap();
        let rep = decay_report(&op, &r).unwrap();
        assert!(rep.stationary_input && rep.rate.is_none());
        let short = evolve(&op, &u0, 1.0, 3).unwrap();
        assert!(decay_report(&op, &short).is_err());
    }

    #[test]
    fn lattice_mismatch_rejected() {
        let lat = make_lattice(1, 8, 1.0).unwrap();
        let other = make_lattice(1, 7, 1.0).unwrap();
        let op = build_generator(&zero_potential(1, 1.0).unwrap(), &lat, true).unwrap();
        assert!(matches!(evolve(&op, &GridField::constant(other, 1.0), 1.0, 2), Err(Error::Validation(_))));
    }
}
