//! Acceptance criteria. Each criterion prints one PASS/FAIL line; any FAIL makes the target fail.

use std::f64::consts::{E, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use torusfp::evolve::{decay_report, evolve, linear_slope, norm_and_max_principle_report};
use torusfp::generator::{
    band_limited_probe, build_generator, condition_number_check, operator_norm_check, poincare_report,
};
use torusfp::lattice::{dft, discretize, GridField, TorusLattice};
use torusfp::potential::{
    cosine_potential, invcos_coefficient, invcos_potential, mlp_potential, zero_potential, EnergyPotential, PeriodicMlp,
};
use torusfp::sampler::{
    estimate_mean, interpolation_error_bound_check, run_pipeline, tv_distance, upsample, Auto, DensityOracle,
    PipelineConfig,
};
use torusfp::semianalytic::{
    alias_witness, bernstein_from_semianalytic, bernstein_tail, compose_params, fit_params, l2_concentration_bound,
    mlp_analyticity_bound, mlp_fit_check, semi_norms, semianalytic_from_bernstein, tail_mass, BernsteinParams,
    CompositionOp, FourierSeries, SemiAnalyticityParams,
};
use torusfp::special::{bessel_i, wrapped_bessel_i};
use torusfp::spectral::{derivative_by_convolution, derivative_matrix, fourier_derivative, sup_norm_bound};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: &GridField, b: &GridField) -> f64 {
    a.sub(b).unwrap().norm() / b.norm().max(1e-300)
}

fn field(lat: &TorusLattice, band: usize, rng: &mut ChaCha20Rng) -> GridField {
    GridField::from_real(*lat, band_limited_probe(lat, band, rng)).unwrap()
}

fn c1_spectral_algebra() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 5];
    for d in 1..=2 {
        for n in [4usize, 8, 16, 32] {
            let l = 1.0 + 0.5 * d as f64;
            let lat = TorusLattice::fine(d, n, l).unwrap();
            let dm = derivative_matrix(n, l);
            let anti = (&dm + dm.transpose()).abs().max();
            let d2 = &dm * &dm;
            let sym = (&d2 - d2.transpose()).abs().max();
            ensure(anti <= 1e-10 && sym <= 1e-10, || format!("N={n}: antisymmetry {anti:.2e}, symmetry {sym:.2e}"))?;
            let colsum = (0..dm.ncols()).map(|j| dm.column(j).sum().abs()).fold(0.0, f64::max);
            ensure(colsum <= 1e-10, || format!("N={n}: column sum {colsum:.2e}"))?;
            // power iteration on D^T D for the operator norm
            let mut v = DVector::from_fn(dm.nrows(), |i, _| ((i * 7 + 3) % 11) as f64 - 5.0);
            let mut est = 0.0;
            for _ in 0..2000 {
                let w = dm.transpose() * (&dm * &v);
                est = w.norm().sqrt() / v.norm().sqrt();
                v = w.normalize();
            }
            let want = 2.0 * PI * n as f64 / l;
            let nerr = (est - want).abs() / want;
            ensure(nerr <= 1e-6, || format!("N={n}: operator norm {est} vs {want}"))?;
            for _ in 0..100 {
                let u = field(&lat, n, &mut rng);
                let half = field(&lat, n / 2, &mut rng);
                let half2 = field(&lat, n / 2, &mut rng);
                let unorm = u.norm();
                for j in 0..d {
                    let du = fourier_derivative(&u, j, 1).unwrap();
                    let conv = derivative_by_convolution(&u, j).unwrap();
                    let e_conv = du.sub(&conv).unwrap().sup_norm() / du.sup_norm().max(1.0);
                    let cs = du.sum().norm() / unorm;
                    let sup = du.sup_norm() / sup_norm_bound(n, l, u.sup_norm());
                    let prod = fourier_derivative(&half.mul(&half2).unwrap(), j, 1).unwrap();
                    let rule = fourier_derivative(&half, j, 1)
                        .unwrap()
                        .mul(&half2)
                        .unwrap()
                        .add(&half.mul(&fourier_derivative(&half2, j, 1).unwrap()).unwrap())
                        .unwrap();
                    let e_prod = rel(&rule, &prod);
                    let mut comp = u.clone();
                    let mut e_comp = 0.0f64;
                    for r in 1..=3u32 {
                        comp = fourier_derivative(&comp, j, 1).unwrap();
                        e_comp = e_comp.max(rel(&comp, &fourier_derivative(&u, j, r).unwrap()));
                    }
                    for (w, v) in worst.iter_mut().zip([e_conv, cs, sup, e_prod, e_comp]) {
                        *w = w.max(v);
                    }
                }
            }
        }
    }
    let [e_conv, cs, sup, e_prod, e_comp] = worst;
    ensure(e_conv <= 1e-10, || format!("convolution vs multiplier {e_conv:.2e}"))?;
    ensure(cs <= 1e-10, || format!("zero column sum {cs:.2e}"))?;
    ensure(sup <= 1.0, || format!("sup-norm bound ratio {sup:.3}"))?;
    ensure(e_prod <= 1e-9, || format!("product rule {e_prod:.2e}"))?;
    ensure(e_comp <= 1e-9, || format!("composability {e_comp:.2e}"))?;
    Ok(format!(
        "800 fields; product {e_prod:.1e}, composability {e_comp:.1e}, column sums {cs:.1e}, sup ratio {sup:.3}"
    ))
}

fn c2_bessel_coefficients() -> Outcome {
    let mut worst = 0.0f64;
    let mut unwrapped = 0.0f64;
    for z in [1.0, 2.0, 4.0] {
        let n = (4.0 * z) as usize;
        let lat = TorusLattice::new(1, n, 2.0 * PI).unwrap();
        let g = discretize(|x| (z * x[0].cos()).exp(), &lat).unwrap();
        let s = dft(&g);
        let scale = (lat.side() as f64).sqrt();
        for k in -(n as i64)..=n as i64 {
            let c = s.coeff(&[k]).unwrap() / scale;
            worst = worst.max((c.re - wrapped_bessel_i(k, z, lat.side())).abs()).max(c.im.abs());
            unwrapped = unwrapped.max((c.re - bessel_i(k, z)).abs());
        }
    }
    ensure(worst <= 1e-8, || format!("max deviation from wrapped I_k series {worst:.2e}"))?;
    Ok(format!("max deviation {worst:.1e} from sum_p I_(k+p(2N+1)); unwrapped I_k alone differs by {unwrapped:.1e}"))
}

fn expcos_series(z: f64) -> FourierSeries {
    FourierSeries::from_fn(1, 80, |k| bessel_i(k[0], z))
}

fn c3_upsampling_table() -> Outcome {
    let l = 1.0;
    let mut lines = Vec::new();
    for zi in 1..=8 {
        let z = zi as f64;
        let u = move |x: &[f64]| (z * (2.0 * PI * x[0] / l).cos()).exp();
        let series = expcos_series(z);
        let p = fit_params(&semi_norms(&series, 16).unwrap()).unwrap();
        let oracle =
            DensityOracle::from_log_density(1, l, 1 << 15, move |x| 2.0 * z * (2.0 * PI * x[0] / l).cos()).unwrap();
        let n0 = (z / 2.0).max(1.0).ceil() as usize + 2;
        let mut worst_tv = 0.0f64;
        let mut pts = Vec::new();
        for n in n0..=n0 + 12 {
            let lat = TorusLattice::new(1, n, l).unwrap();
            let state = discretize(u, &lat).unwrap().normalized().unwrap();
            let tv = tv_distance(&upsample(&state, 200).unwrap(), &oracle).unwrap().tv;
            worst_tv = worst_tv.max(tv);
            let r = interpolation_error_bound_check(u, &series, &p, &lat);
            let dist = match r {
                Ok(r) => r.distance,
                Err(_) => {
                    let spec = dft(&state);
                    let uu = series.rms();
                    spec.coeffs()
                        .iter()
                        .enumerate()
                        .map(|(f, c)| (c - series.get(&lat.multi(f)) / uu).norm_sqr())
                        .sum::<f64>()
                        .sqrt()
                }
            };
            if dist > 1e-13 {
                pts.push((n as f64, dist.ln()));
            }
        }
        ensure(worst_tv < 0.1, || format!("z={z}: TV {worst_tv:.3e} >= 0.1"))?;
        ensure(pts.len() >= 3, || format!("z={z}: too few resolvable distances"))?;
        let slope = linear_slope(&pts);
        let limit = -0.6 / p.a() + 0.05;
        ensure(slope <= limit, || format!("z={z}: slope {slope:.3} > {limit:.3} (a={:.3})", p.a()))?;
        lines.push(format!("z={zi}: tv<={worst_tv:.1e} slope {slope:.2}<={limit:.2}"));
    }
    Ok(lines.join("; "))
}

fn c4_interpolation_figure() -> Outcome {
    let l = 1.0;
    let f = |x: &[f64]| (2.0 * PI * x[0] / l).cos().exp();
    let coarse = discretize(f, &TorusLattice::new(1, 3, l).unwrap()).unwrap().normalized().unwrap();
    let up = upsample(&coarse, 10).unwrap();
    let direct = discretize(f, &TorusLattice::new(1, 10, l).unwrap()).unwrap().normalized().unwrap();
    ensure(up.len() == 21, || "expected 21 output nodes".into())?;
    let diff = up.sub(&direct).unwrap().sup_norm();
    ensure(diff <= 1e-3, || format!("max |upsampled - direct| = {diff:.4e} over 21 unit-norm nodes > 1e-3"))?;
    Ok(format!("max deviation {diff:.2e}"))
}

fn builtin_potentials(d: usize) -> Vec<EnergyPotential> {
    let l = 1.0;
    vec![
        zero_potential(d, l).unwrap(),
        cosine_potential(1.0, d, l).unwrap(),
        cosine_potential(2.0, d, l).unwrap(),
        invcos_potential(4.0, d, l).unwrap(),
        mlp_potential(PeriodicMlp::random(d, &[6], 0.5, 17 + d as u64).unwrap(), l).unwrap(),
    ]
}

fn structure_cases() -> Vec<(EnergyPotential, TorusLattice)> {
    let mut out = Vec::new();
    for (d, n) in [(1, 16), (2, 8)] {
        for e in builtin_potentials(d) {
            let lat = TorusLattice::new(d, n, 1.0).unwrap();
            out.push((e, lat));
        }
    }
    out
}

fn c5_generator_structure() -> Outcome {
    let mut worst_asym = 0.0f64;
    for (e, lat) in structure_cases() {
        let tag = format!("{} d={} N={}", e.describe(), lat.d(), lat.n());
        let op = build_generator(&e, &lat, true).unwrap();
        let scale = op.matrix().abs().max();
        let asym = op.asymmetry() / scale;
        worst_asym = worst_asym.max(asym);
        ensure(asym <= 1e-8, || format!("{tag}: asymmetry {asym:.2e}"))?;
        ensure(op.max_eigenvalue() <= 1e-8, || format!("{tag}: top eigenvalue {:.2e}", op.max_eigenvalue()))?;
        ensure(op.kernel_cosine() >= 1.0 - 1e-8, || format!("{tag}: kernel cosine {}", op.kernel_cosine()))?;
        let k = condition_number_check(&op);
        ensure(k.kappa <= (0.5 * op.delta_w()).exp() * (1.0 + 1e-9), || {
            format!("{tag}: kappa {} > e^(Delta/2) = {}", k.kappa, (0.5 * op.delta_w()).exp())
        })?;
        let nr = operator_norm_check(&op).unwrap();
        ensure(nr.holds, || format!("{tag}: norm {} > bound {}", nr.measured, nr.bound))?;
    }
    Ok(format!("10 operators; worst relative asymmetry {worst_asym:.1e}"))
}

fn c6_poincare_decay() -> Outcome {
    let mut notes = Vec::new();
    for (e, lat) in structure_cases() {
        let tag = format!("{} d={}", e.describe(), lat.d());
        let op = build_generator(&e, &lat, true).unwrap();
        let p = poincare_report(&op);
        ensure(p.gap >= 0.95 * p.floor, || format!("{tag}: gap {} < 0.95 x {}", p.gap, p.floor))?;
        let r = evolve(&op, &GridField::constant(lat, 1.0), 5.0 / p.gap, 20).unwrap();
        let dr = decay_report(&op, &r).unwrap();
        match dr.rate {
            None => {
                ensure(dr.stationary_input, || format!("{tag}: decay fit failed"))?;
                notes.push(format!("{tag}: stationary start"));
            }
            Some(rate) => {
                ensure(rate >= 0.95 * 2.0 * p.gap, || format!("{tag}: rate {rate} < 0.95 x 2 x gap {}", p.gap))?;
            }
        }
    }
    Ok(format!("10 operators; {}", notes.join(", ")))
}

fn c7_norm_traces() -> Outcome {
    let mut worst = 0.0f64;
    for (e, lat) in structure_cases() {
        let tag = format!("{} d={}", e.describe(), lat.d());
        let op = build_generator(&e, &lat, true).unwrap();
        let r = evolve(&op, &GridField::constant(lat, 1.0), 5.0 / op.gap(), 20).unwrap();
        ensure(r.times.len() == 20, || "expected 20 snapshots".into())?;
        let rep = norm_and_max_principle_report(&op, &r).unwrap();
        ensure(rep.max_norm_ok, || format!("{tag}: max ratio {} > {}", rep.max_ratio, rep.norm_bound))?;
        ensure(rep.min_norm_ok, || format!("{tag}: min ratio {}", rep.min_ratio))?;
        ensure(rep.inner_ok, || format!("{tag}: mass drift {:.2e}", rep.max_inner_drift))?;
        worst = worst.max(rep.max_inner_drift);
    }
    Ok(format!("10 trajectories; worst mass drift {worst:.1e}"))
}

fn c8_end_to_end() -> Outcome {
    let e1 = cosine_potential(2.0, 1, 1.0).unwrap();
    let r1 = run_pipeline(&e1, &PipelineConfig::new(16, 0.05, 100_000, 8)).unwrap();
    ensure(r1.summary.m <= 512, || format!("auto M {} above cap", r1.summary.m))?;
    ensure(r1.tv.tv <= 0.05, || format!("d=1 TV {:.4e} > 0.05", r1.tv.tv))?;
    let e2 = cosine_potential(1.0, 2, 1.0).unwrap();
    let mut cfg = PipelineConfig::new(12, 0.05, 100_000, 9);
    cfg.m = Auto::Fixed(64);
    let r2 = run_pipeline(&e2, &cfg).unwrap();
    ensure(r2.tv.tv <= 0.08, || format!("d=2 TV {:.4e} > 0.08", r2.tv.tv))?;
    Ok(format!("d=1 TV {:.2e} (M={}, T={:.3}); d=2 TV {:.2e}", r1.tv.tv, r1.summary.m, r1.summary.t, r2.tv.tv))
}

fn c9_witness() -> Outcome {
    let (_, r) = alias_witness(1.0, 320.0, 10, 0.5, 1.0).unwrap();
    ensure(r.discretization_gap <= 1e-12, || format!("discretizations differ by {:.2e}", r.discretization_gap))?;
    let floor = 0.25 / (512.0 * E);
    ensure((r.tv_floor - floor).abs() < 1e-15 && (floor - 1.797e-4).abs() < 1e-6, || "floor mismatch".into())?;
    ensure(r.tv >= r.tv_floor, || format!("TV {:.3e} < floor {:.3e}", r.tv, r.tv_floor))?;
    Ok(format!("gap {:.1e}, TV {:.3e} >= floor {:.3e}", r.discretization_gap, r.tv, r.tv_floor))
}

fn c10_concentration() -> Outcome {
    let mut worst = 0.0f64;
    let families = [
        ("e^{2cos}", FourierSeries::from_fn(1, 60, |k| bessel_i(k[0], 2.0))),
        ("invcos z=4", FourierSeries::from_fn(1, 60, |k| invcos_coefficient(4.0, k[0]))),
    ];
    for (name, s) in &families {
        let p = fit_params(&semi_norms(s, 16).unwrap()).unwrap();
        let uu = s.rms();
        for t in 2..=20 {
            let tm = tail_mass(s, t as f64);
            let b = l2_concentration_bound(&p, uu, t as f64);
            ensure(tm <= b, || format!("{name}: tail {tm:.3e} > bound {b:.3e} at t={t}"))?;
            worst = worst.max(tm / b);
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    for _ in 0..50 {
        let a_coef = rng.random_range(0.0..5.0);
        let b = rng.random_range(0.05..5.0);
        let bp = BernsteinParams::new(a_coef, b).unwrap();
        let t = 3.0 * b;
        let m = a_coef.max(1.0);
        let left = m * (-(t - b).powi(2) / (8.0 * b * b)).exp();
        let right = E * m * (-t / (2.0 * b)).exp();
        ensure(bernstein_tail(&bp, t) == left, || "left branch at 3b".into())?;
        ensure((left - right).abs() <= 1e-15 * left, || format!("branches differ at 3b: {left} vs {right}"))?;
        let c = rng.random_range(0.0..5.0);
        let a = rng.random_range(0.01..5.0);
        let u = rng.random_range(0.1..5.0);
        let fwd = bernstein_from_semianalytic(&SemiAnalyticityParams::new(c, a).unwrap(), u).unwrap();
        ensure(fwd.big_a() == c / u && fwd.b() == a, || "forward map".into())?;
        let rev = semianalytic_from_bernstein(&bp);
        ensure(rev.c() == (2.0 * a_coef * E).sqrt() && rev.a() == 4.0 * b, || "reverse map".into())?;
    }
    Ok(format!("worst tail/bound ratio {worst:.3}; 50 Bernstein checks"))
}

fn c11_composition() -> Outcome {
    let p = |op, inp: &[(f64, f64)]| {
        let r = compose_params(op, inp).unwrap();
        (r.c(), r.a())
    };
    ensure(p(CompositionOp::Add, &[(1.0, 2.0), (3.0, 1.0)]) == (4.0, 2.0), || "add".into())?;
    ensure(p(CompositionOp::Mul, &[(1.0, 1.0), (1.0, 1.0)]) == (1.0, 2.0), || "mul".into())?;
    ensure(p(CompositionOp::Exp { delta: 0.0 }, &[(1.0, 1.0)]) == (0.5, 2.0), || "exp".into())?;
    let (c1, a1, c2, a2) = (0.7, 1.3, 2.0, 0.4);
    let s = 1.0 + c1 * a2;
    ensure(p(CompositionOp::Compose, &[(c1, a1), (c2, a2)]) == (c1 * a2 * c2 / s, a1 * s), || "compose".into())?;
    let dl = 1.5;
    ensure(p(CompositionOp::Sigmoid { delta: dl }, &[(c1, a1)]) == (1.0, a1 * (1.0 + c1 * (1.0 + dl.exp()))), || {
        "sigmoid".into()
    })?;
    let zero =
        PeriodicMlp::new(1, vec![torusfp::potential::MlpLayer { w: vec![vec![0.0, 0.0]], b: vec![0.0] }]).unwrap();
    ensure(mlp_analyticity_bound(&zero) == 2.0, || "D=1 zero net bound".into())?;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let net = PeriodicMlp::random(1, &[4], 0.6, 100 + seed).unwrap();
        let lat = TorusLattice::new(1, 64, 1.0).unwrap();
        let r = mlp_fit_check(&net, &lat, 12).unwrap();
        ensure(r.within_bound, || format!("seed {seed}: fitted a {} > bound {}", r.fitted.a(), r.bound_a))?;
        worst = worst.max(r.fitted.a() / r.bound_a);
    }
    Ok(format!("formulas exact; worst fitted/bound a ratio {worst:.3}"))
}

fn c12_mean() -> Outcome {
    let l = 1.0;
    let e = cosine_potential(2.0, 1, l).unwrap();
    let r = run_pipeline(&e, &PipelineConfig::new(16, 0.05, 100_000, 12)).unwrap();
    let est = estimate_mean(|x| (2.0 * PI * x[0] / l).cos(), &r.batch).unwrap();
    let exact = bessel_i(1, 2.0) / bessel_i(0, 2.0);
    ensure((exact - 0.69777).abs() < 1e-5, || "Bessel ratio".into())?;
    let zsc = (est.mean - exact) / est.stderr;
    ensure(zsc.abs() <= 4.0, || format!("mean {} is {zsc:.2} stderr from {exact}", est.mean))?;
    Ok(format!("mean {:.5} +- {:.5} vs {exact:.5} ({zsc:+.2} se)", est.mean, est.stderr))
}

fn main() {
    let criteria: Vec<(&str, u64, fn() -> Outcome)> = vec![
        ("spectral algebra suite", 30, c1_spectral_algebra),
        ("Bessel-coefficient reproduction", 5, c2_bessel_coefficients),
        ("upsampling TV error table", 120, c3_upsampling_table),
        ("N=3 -> M=10 interpolation", 1, c4_interpolation_figure),
        ("generator structure", 60, c5_generator_structure),
        ("Poincare gap and chi2 decay", 60, c6_poincare_decay),
        ("norm traces", 30, c7_norm_traces),
        ("end-to-end Gibbs sampling", 180, c8_end_to_end),
        ("lower-bound witness", 10, c9_witness),
        ("concentration suite", 10, c10_concentration),
        ("composition calculus", 60, c11_composition),
        ("mean estimation", 60, c12_mean),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.into_iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty()
            && !filter.iter().any(|s| *s == id || (s.parse::<usize>().is_err() && name.contains(s.as_str())))
        {
            continue;
        }
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panic: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let out = match out {
            Ok(detail) if took > Duration::from_secs(budget) => {
                Err(format!("{detail}; runtime {:.1}s over {budget}s budget", took.as_secs_f64()))
            }
            other => other,
        };
        match out {
            Ok(detail) => println!("PASS criterion {id:>2} {name} ({:.1}s): {detail}", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id:>2} {name} ({:.1}s): {why}", took.as_secs_f64())
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
