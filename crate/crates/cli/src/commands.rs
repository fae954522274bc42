use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;
use serde_json::json;
use torusfp::evolve::{chi2_tv_chain, choose_t, decay_report, evolve as run_evolution, norm_and_max_principle_report};
use torusfp::generator::{build_generator, condition_number_check, operator_norm_check, poincare_report};
use torusfp::lattice::{discretize, TorusLattice};
use torusfp::potential::{
    invcos_coefficient, invcos_density, mlp_potential, parse_potential, EnergyPotential, MlpDocument, PeriodicMlp,
};
use torusfp::sampler::{
    estimate_mean, exact_mean, interpolation_error_bound_check, run_pipeline, tv_distance, upsample, Auto,
    DensityOracle, PipelineConfig, PipelineResult,
};
use torusfp::semianalytic::{
    alias_witness, bernstein_from_semianalytic, fit_params, l2_concentration_bound, paley_zygmund_check, semi_norms,
    tail_mass, FourierSeries,
};
use torusfp::special::bessel_i;
use torusfp::spectral::{derivative_error_report, SmoothFunction};
use torusfp::{Error, Result};

use crate::{Ctx, Geometry, PipelineArgs};

fn load_potential(spec: &str, d: usize, l: f64) -> Result<EnergyPotential> {
    if let Some(path) = spec.strip_prefix("mlp:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read MLP file {path}: {e}")))?;
        let doc: MlpDocument =
            serde_json::from_str(&text).map_err(|e| Error::Validation(format!("bad MLP document: {e}")))?;
        let (mlp, ml) = PeriodicMlp::from_document(&doc)?;
        if mlp.d() != d || (ml - l).abs() > 1e-12 * l {
            return Err(Error::Validation(format!("MLP has d={}, l={ml}; requested d={d}, l={l}", mlp.d())));
        }
        return mlp_potential(mlp, l);
    }
    parse_potential(spec, d, l)
}

struct Resolved {
    potential: EnergyPotential,
    lattice: TorusLattice,
}

fn resolve_geometry(ctx: &mut Ctx, g: &Geometry, default_n: usize) -> Result<Resolved> {
    let spec: String = ctx.res.get("potential", g.potential.clone(), "cosine:z=1".to_string())?;
    let d: usize = ctx.res.get("d", g.d, 1)?;
    let n: usize = ctx.res.get("N", g.n, default_n)?;
    let l: f64 = ctx.res.get("l", g.l, 1.0)?;
    let potential = load_potential(&spec, d, l)?;
    let lattice = TorusLattice::new(d, n, l)?;
    Ok(Resolved { potential, lattice })
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|_| Error::Validation(format!("bad {what} entry {p:?}"))))
        .collect()
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: i64 = a.trim().parse().map_err(|_| Error::Validation(format!("bad range start in {s:?}")))?;
        let b: i64 = b.trim().parse().map_err(|_| Error::Validation(format!("bad range end in {s:?}")))?;
        if b < a {
            return Err(Error::Validation(format!("empty range {s:?}")));
        }
        return Ok((a..=b).map(|v| v as f64).collect());
    }
    parse_list(s, "z")
}

fn parse_time(s: &str) -> Result<Auto<f64>> {
    if s.trim() == "auto" {
        return Ok(Auto::Auto);
    }
    let t: f64 = s.trim().parse().map_err(|_| Error::Validation(format!("T must be a number or auto, got {s:?}")))?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Validation(format!("T must be >= 0, got {t}")));
    }
    Ok(Auto::Fixed(t))
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

pub fn derive_check(
    ctx: &mut Ctx,
    d: Option<usize>,
    l: Option<f64>,
    z: Option<f64>,
    ns: Option<String>,
    emit: Option<String>,
) -> Result<()> {
    let d: usize = ctx.res.get("d", d, 1)?;
    let l: f64 = ctx.res.get("l", l, 1.0)?;
    let z: f64 = ctx.res.get("z", z, 1.0)?;
    let ns: String = ctx.res.get("ns", ns, "8,16,32".to_string())?;
    let emit: String = ctx.res.get("emit", emit, "derive.csv".to_string())?;
    let ns: Vec<usize> = parse_list(&ns, "N")?;
    if !(1..=3).contains(&d) || ns.is_empty() {
        return Err(Error::Validation("derive-check needs d in 1..=3 and at least one N".into()));
    }
    let w = 2.0 * PI / l;
    let value = move |x: &[f64]| x.iter().map(|xi| z * (w * xi).cos()).sum::<f64>().exp();
    let grad = move |x: &[f64]| {
        let u = value(x);
        x.iter().map(|xi| -u * z * w * (w * xi).sin()).collect::<Vec<f64>>()
    };
    let lap = move |x: &[f64]| {
        let u = value(x);
        x.iter().map(|xi| u * ((z * w * (w * xi).sin()).powi(2) - z * w * w * (w * xi).cos())).sum::<f64>()
    };
    let kmax = [60, 24, 12][d - 1];
    let series = FourierSeries::from_fn(d, kmax, |k| k.iter().map(|&kj| bessel_i(kj, z)).product());
    let params = fit_params(&semi_norms(&series, 16)?)?;
    let f = SmoothFunction { value: &value, gradient: &grad, laplacian: &lap };
    let mut rows = String::from("N,first_error,first_bound,second_error,second_bound,status\n");
    for &n in &ns {
        let lat = TorusLattice::new(d, n, l)?;
        match derivative_error_report(&f, &lat, &params) {
            Ok(r) => {
                ctx.check(!r.violation, || format!("derivative bound violated at N = {n}"));
                rows += &format!(
                    "{n},{},{},{},{},{}\n",
                    fmt(r.first_error),
                    fmt(r.first_bound),
                    fmt(r.second_error),
                    fmt(r.second_bound),
                    if r.violation { "violation" } else { "ok" }
                );
            }
            Err(Error::Precondition(msg)) => {
                ctx.warnings.push(format!("N = {n} skipped: {msg}"));
                rows += &format!("{n},nan,nan,nan,nan,precondition\n");
            }
            Err(e) => return Err(e),
        }
    }
    ctx.res.record("fitted_C", &params.c());
    ctx.res.record("fitted_a", &params.a());
    ctx.out()?.file(&emit)?.write_all(rows.as_bytes())?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn interpolate(
    ctx: &mut Ctx,
    family: Option<String>,
    z: Option<String>,
    m: Option<usize>,
    n_max: Option<usize>,
    l: Option<f64>,
    emit: Option<String>,
) -> Result<()> {
    let family: String = ctx.res.get("family", family, "expcos".to_string())?;
    let zs: String = ctx.res.get("z", z, "1..8".to_string())?;
    let m: usize = ctx.res.get("M", m, 200)?;
    let n_max: usize = ctx.res.get("n_max", n_max, 16)?;
    let l: f64 = ctx.res.get("l", l, 1.0)?;
    let emit: String = ctx.res.get("emit", emit, "interpolate.csv".to_string())?;
    let zs = parse_range(&zs)?;
    if family != "expcos" && family != "invcos" {
        return Err(Error::Validation(format!("unknown family {family:?}; use expcos or invcos")));
    }
    if family == "invcos" && zs.iter().any(|&z| z <= 1.0) {
        return Err(Error::Validation("invcos needs z > 1".into()));
    }
    if n_max > m {
        return Err(Error::Validation(format!("n_max = {n_max} exceeds M = {m}")));
    }
    let mut rows = String::from("family,z,N,M,tv,distance,distance_bound,tv_excess,tv_bound,C,a\n");
    for &z in &zs {
        let expcos = family == "expcos";
        let u = move |x: &[f64]| {
            if expcos {
                (z * (2.0 * PI * x[0] / l).cos()).exp()
            } else {
                invcos_density(z, l, x[0])
            }
        };
        let series = if expcos {
            FourierSeries::from_fn(1, 80, |k| bessel_i(k[0], z))
        } else {
            FourierSeries::from_fn(1, 200, |k| invcos_coefficient(z, k[0]))
        };
        let params = fit_params(&semi_norms(&series, 16)?)?;
        let oracle = DensityOracle::from_log_density(1, l, 1 << 15, move |x| 2.0 * u(x).ln())?;
        let n0 = (z / 2.0).max(1.0).ceil() as usize + 2;
        for n in n0..=n_max.max(n0) {
            let lat = TorusLattice::new(1, n, l)?;
            let state = discretize(u, &lat)?.normalized()?;
            let tv = tv_distance(&upsample(&state, m)?, &oracle)?.tv;
            if n == n0 {
                ctx.check(tv < 0.1, || format!("z = {z}: TV {tv:.3e} at N = {n} is not < 0.1"));
            }
            let (dist, db, te, tb) = match interpolation_error_bound_check(u, &series, &params, &lat) {
                Ok(r) => {
                    ctx.check(r.holds, || format!("z = {z}, N = {n}: interpolation bound violated"));
                    (fmt(r.distance), fmt(r.distance_bound), fmt(r.tv_excess), fmt(r.tv_bound))
                }
                Err(Error::Precondition(_)) => ("nan".into(), "nan".into(), "nan".into(), "nan".into()),
                Err(e) => return Err(e),
            };
            rows += &format!(
                "{family},{z},{n},{m},{},{dist},{db},{te},{tb},{},{}\n",
                fmt(tv),
                fmt(params.c()),
                fmt(params.a())
            );
        }
    }
    ctx.out()?.file(&emit)?.write_all(rows.as_bytes())?;
    Ok(())
}

pub fn spectrum(ctx: &mut Ctx, g: &Geometry, no_halve: bool, matrix: bool) -> Result<()> {
    let r = resolve_geometry(ctx, g, 16)?;
    let halve: bool = ctx.res.get("halve", if no_halve { Some(false) } else { None }, true)?;
    let matrix = ctx.res.switch("matrix", matrix)?;
    let op = build_generator(&r.potential, &r.lattice, halve)?;
    let poincare = poincare_report(&op);
    let kappa = condition_number_check(&op);
    let norm = match operator_norm_check(&op) {
        Ok(n) => Some(n),
        Err(Error::Precondition(msg)) => {
            ctx.warnings.push(format!("operator norm check skipped: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };
    let scale = op.matrix().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    ctx.check(op.asymmetry() <= 1e-8 * scale, || format!("symmetrized operator asymmetry {:.3e}", op.asymmetry()));
    ctx.check(op.max_eigenvalue() <= 1e-8, || format!("largest eigenvalue {:.3e} > 1e-8", op.max_eigenvalue()));
    ctx.check(op.kernel_cosine() >= 1.0 - 1e-8, || format!("kernel cosine {:.12}", op.kernel_cosine()));
    ctx.check(poincare.holds, || format!("gap {:.6e} below 0.95 x floor {:.6e}", poincare.gap, poincare.floor));
    ctx.check(kappa.holds, || format!("kappa {:.6e} above bound {:.6e}", kappa.kappa, kappa.bound));
    if let Some(n) = &norm {
        ctx.check(n.holds, || format!("operator norm {:.6e} above bound {:.6e}", n.measured, n.bound));
    }
    let report = json!({
        "potential": r.potential.describe(),
        "lattice": r.lattice,
        "halved": halve,
        "delta_w": op.delta_w(),
        "asymmetry": op.asymmetry(),
        "max_eigenvalue": op.max_eigenvalue(),
        "gap": op.gap(),
        "kernel_cosine": op.kernel_cosine(),
        "kernel_dimension": op.kernel_dimension(1e-8),
        "assembly_discrepancy": op.assembly_discrepancy(),
        "poincare": poincare,
        "condition": kappa,
        "operator_norm": norm,
    });
    let out = ctx.out()?;
    op.write_spectrum_csv(out.file("spectrum.csv")?)?;
    if matrix {
        op.write_matrix_csv(out.file("matrix.csv")?)?;
    }
    out.json("spectrum.json", &report)?;
    Ok(())
}

pub fn evolve(
    ctx: &mut Ctx,
    g: &Geometry,
    t: Option<String>,
    eps: Option<f64>,
    snapshots: Option<usize>,
) -> Result<()> {
    let r = resolve_geometry(ctx, g, 16)?;
    let t_spec: String = ctx.res.opt("T", t)?.unwrap_or_else(|| "auto".to_string());
    let eps: f64 = ctx.res.get("eps", eps, 0.05)?;
    let snapshots: usize = ctx.res.get("snapshots", snapshots, 20)?;
    let t_spec = parse_time(&t_spec)?;
    if snapshots < 4 {
        return Err(Error::Validation("evolve needs at least 4 snapshots".into()));
    }
    let op = build_generator(&r.potential, &r.lattice, true)?;
    let t = match t_spec {
        Auto::Fixed(t) => t,
        Auto::Auto => {
            if op.gap() <= 0.0 {
                return Err(Error::Validation("generator has no spectral gap; give --T".into()));
            }
            choose_t(1.0 / op.gap(), r.potential.diameter(), eps)?
        }
    };
    ctx.res.record("T", &t);
    let u0 = torusfp::lattice::GridField::constant(r.lattice, 1.0);
    let res = run_evolution(&op, &u0, t, snapshots)?;
    let norms = norm_and_max_principle_report(&op, &res)?;
    let decay = decay_report(&op, &res)?;
    let chain = chi2_tv_chain(&op, &res);
    ctx.warnings.extend(norms.warnings.iter().cloned());
    ctx.check(norms.max_norm_ok, || format!("max norm ratio {:.6e} above {:.6e}", norms.max_ratio, norms.norm_bound));
    ctx.check(norms.min_norm_ok, || format!("min norm ratio {:.12}", norms.min_ratio));
    ctx.check(norms.inner_ok, || format!("mass drift {:.3e}", norms.max_inner_drift));
    if decay.rate.is_some() {
        ctx.check(decay.rate_vs_gap, || format!("decay rate {:?} below 0.95 x 2 x gap", decay.rate));
        ctx.check(decay.rate_vs_floor, || format!("decay rate {:?} below 0.95 x 2 x floor", decay.rate));
    }
    for p in &chain {
        ctx.check(p.tv <= p.bound + 1e-6, || format!("t = {}: TV {:.3e} above {:.3e}", p.t, p.tv, p.bound));
    }
    let report = json!({
        "potential": r.potential.describe(),
        "lattice": r.lattice,
        "T": t,
        "norm": norms,
        "decay": decay,
        "chi2_tv_chain": chain,
    });
    let out = ctx.out()?;
    res.write_trace_csv(out.file("trace.csv")?)?;
    res.final_state().write_csv(out.file("final.csv")?)?;
    out.json("evolve.json", &report)?;
    Ok(())
}

fn pipeline(
    ctx: &mut Ctx,
    g: &Geometry,
    p: &PipelineArgs,
    default_samples: usize,
) -> Result<(Resolved, PipelineResult)> {
    let r = resolve_geometry(ctx, g, 16)?;
    let auto = ctx.res.switch("auto", p.auto)?;
    let m: Option<usize> = ctx.res.opt("M", p.m)?;
    let t: Option<String> = match &p.t {
        Some(s) => Some(s.clone()),
        None => ctx.res.opt::<serde_json::Value>("T", None)?.map(|v| match v {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        }),
    };
    let eps: f64 = ctx.res.get("eps", p.eps, 0.05)?;
    let samples: usize = ctx.res.get("samples", p.samples, default_samples)?;
    let seed: u64 = ctx.res.required("seed", p.seed)?;
    let m_cap: usize = ctx.res.get("m_cap", p.m_cap, 512)?;
    let t = match t {
        Some(s) if !auto => parse_time(&s)?,
        _ => Auto::Auto,
    };
    let m = match m {
        Some(m) if !auto => Auto::Fixed(m),
        _ => Auto::Auto,
    };
    let mut cfg = PipelineConfig::new(r.lattice.n(), eps, samples, seed);
    cfg.m = m;
    cfg.t = t;
    cfg.m_cap = m_cap;
    let out = run_pipeline(&r.potential, &cfg)?;
    ctx.res.record("M", &out.summary.m);
    ctx.res.record("T", &out.summary.t);
    Ok((r, out))
}

pub fn gibbs(ctx: &mut Ctx, g: &Geometry, p: &PipelineArgs) -> Result<()> {
    let (_, res) = pipeline(ctx, g, p, 100_000)?;
    let eps = res.summary.eps;
    let tv = res.tv.clone().with_bound(eps);
    ctx.check(tv.tv <= eps, || format!("TV {:.4e} above eps {eps}", tv.tv));
    let out = ctx.out()?;
    res.batch.write_csv(out.file("samples.csv")?)?;
    out.json("tv.json", &tv)?;
    out.json("summary.json", &res.summary)?;
    Ok(())
}

#[derive(Serialize)]
struct TailRow {
    t: f64,
    tail_mass: f64,
    bound: f64,
}

pub fn analyze(ctx: &mut Ctx, g: &Geometry, m_max: Option<usize>) -> Result<()> {
    let r = resolve_geometry(ctx, g, 32)?;
    let m_max: usize = ctx.res.get("m_max", m_max, 16)?;
    let e = r.potential.clone();
    let amp = discretize(move |x| (-0.5 * e.eval(x)).exp(), &r.lattice)?;
    let series = FourierSeries::from_spectral(&torusfp::lattice::dft(&amp));
    let profile = semi_norms(&series, m_max)?;
    let params = fit_params(&profile)?;
    let uu = series.rms();
    if profile.truncated {
        ctx.warnings.push("moment profile is truncated by the lattice; increase N".into());
    }
    let mut tails = Vec::new();
    for t in 2..=20 {
        let tm = tail_mass(&series, t as f64);
        let b = l2_concentration_bound(&params, uu, t as f64);
        ctx.check(tm <= b, || format!("tail mass {tm:.3e} above bound {b:.3e} at t = {t}"));
        tails.push(TailRow { t: t as f64, tail_mass: tm, bound: b });
    }
    let bern = if params.a() > 0.0 { Some(bernstein_from_semianalytic(&params, uu)?) } else { None };
    let pz = paley_zygmund_check(&series, 0.5).ok();
    let report = json!({
        "potential": r.potential.describe(),
        "lattice": r.lattice,
        "C": params.c(),
        "a": params.a(),
        "U": uu,
        "truncated": profile.truncated,
        "bernstein": bern.map(|b| json!({"A": b.big_a(), "b": b.b()})),
        "paley_zygmund": pz,
        "tails": tails,
    });
    let out = ctx.out()?;
    profile.write_csv(out.file("moments.csv")?, Some(&params))?;
    out.json("analysis.json", &report)?;
    Ok(())
}

pub fn witness(
    ctx: &mut Ctx,
    c: Option<f64>,
    a: Option<f64>,
    theta: Option<f64>,
    n: Option<usize>,
    l: Option<f64>,
) -> Result<()> {
    let c: f64 = ctx.res.get("C", c, 1.0)?;
    let a: f64 = ctx.res.get("a", a, 320.0)?;
    let theta: f64 = ctx.res.get("theta", theta, 0.5)?;
    let n: usize = ctx.res.get("N", n, 10)?;
    let l: f64 = ctx.res.get("l", l, 1.0)?;
    let (_, rep) = alias_witness(c, a, n, theta, l)?;
    ctx.check(rep.discretization_gap <= 1e-12, || format!("discretizations differ by {:.3e}", rep.discretization_gap));
    ctx.check(rep.tv >= rep.tv_floor, || format!("TV {:.4e} below floor {:.4e}", rep.tv, rep.tv_floor));
    ctx.out()?.json("witness.json", &rep)?;
    Ok(())
}

pub fn mean(ctx: &mut Ctx, g: &Geometry, p: &PipelineArgs) -> Result<()> {
    let (r, res) = pipeline(ctx, g, p, 100_000)?;
    let l = r.lattice.l();
    let f = move |x: &[f64]| (2.0 * PI * x[0] / l).cos();
    let est = estimate_mean(f, &res.batch)?;
    let exact = exact_mean(f, &r.potential)?;
    let z = if est.stderr > 0.0 { (est.mean - exact) / est.stderr } else { 0.0 };
    ctx.check(z.abs() <= 4.0, || format!("estimate {:.6} is {z:.2} standard errors from {exact:.6}", est.mean));
    let report = json!({
        "observable": "cos(2 pi x0 / l)",
        "mean": est.mean,
        "stderr": est.stderr,
        "count": est.count,
        "exact": exact,
        "z_score": z,
        "tv": res.tv.tv,
        "summary": res.summary,
    });
    ctx.out()?.json("mean.json", &report)?;
    Ok(())
}
