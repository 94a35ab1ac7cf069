//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use impulse_periodic::hypotheses::{apriori_bounds, brouwer_degree_1d, check_h3, check_h4};
use impulse_periodic::periodic::{solve_periodic, PeriodicSolveConfig, SolveStatus, SweepRow};
use impulse_periodic::rhs_dsl::{parse, FnHistory};
use impulse_periodic::testkit::{
    linear_problem, random_problem, random_regulated_fn, random_rhs, sec4_exact, sec4_problem, LinearFixture,
    SEC4_RHS,
};
use impulse_periodic::{
    beta_extrema, integrate_impulsive, integrate_transformed, lambda_sweep_report, solve_at_lambda, to_impulsive,
    to_nonimpulsive, verify_equivalence, Candidate, ImpulseSchedule, InitialData, ProblemSpec,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol:e})"))
}

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn sec4_constants() -> Outcome {
    let spec = sec4_problem(SEC4_RHS, 1.0);
    let beta = spec.beta();
    ensure(beta.piece_values() == [1.0, 3.0, 12.0, 1.0], || {
        format!("pieces {:?}", beta.piece_values())
    })?;
    let expected = [-2.0, 1.0, 1.5, 2.0 * PI - 1.0, 2.0 * PI];
    ensure(beta.breakpoints() == expected, || format!("breakpoints {:?}", beta.breakpoints()))?;
    let (k, big_k) = beta_extrema(&beta);
    ensure((k, big_k) == (1.0, 12.0), || format!("extrema ({k}, {big_k})"))?;
    let exact = sec4_exact();
    let h3 = check_h3(spec.neutral, k, big_k);
    ensure(h3.pass, || "h3 fails".into())?;
    close(h3.margin, 1.0 / 12.0 - 1.0 / 13.0, 1e-15, "h3 margin")?;
    close(h3.margin, exact.h3_margin.to_f64(), 1e-15, "h3 margin (exact)")?;
    let h4 = check_h4(spec.lipschitz_b, spec.neutral, k, big_k, spec.period());
    ensure(h4.pass, || "h4 fails".into())?;
    close(h4.bound, 1.0 / (26.0 * PI), 1e-15, "h4 bound")?;
    close(h4.margin, exact.h4_margin.to_f64(), 1e-15, "h4 margin")?;
    close(spec.lipschitz_b, 1.0 / (27.0 * PI), 1e-15, "b")?;
    Ok(format!("h3 margin {:.6e}, h4 bound {:.6e}", h3.margin, h4.bound))
}

fn sec4_bounds() -> Outcome {
    let exact = sec4_exact();
    let b = apriori_bounds(1.0, 1.0 / (27.0 * PI), 1.0, 12.0, 1.0 / 13.0, 2.0 * PI, 0.0)
        .map_err(|e| e.to_string())?;
    close(b.d_bound, 27.0, 1e-9, "D")?;
    close(b.denominator, 1.0 / 351.0, 1e-15, "denominator")?;
    close(b.l2_bound, exact.l2_bound_squared.to_f64().sqrt(), 1e-9, "l2 bound")?;
    Ok(format!("D = {}, l2 bound = {:.12}", b.d_bound, b.l2_bound))
}

fn sec4_degree() -> Outcome {
    let spec = sec4_problem(SEC4_RHS, 1.0);
    let beta = spec.beta();
    let mut degs = Vec::new();
    for m in [28.0, 30.0, 100.0, 270.0] {
        let r = brouwer_degree_1d(&spec, &beta, m, Some(27.0), 4096).map_err(|e| e.to_string())?;
        ensure(r.degree == 1, || format!("degree {} at M = {m}", r.degree))?;
        degs.push(r.degree);
    }
    Ok(format!("degrees {degs:?} at M = 28, 30, 100, 270"))
}

fn equivalence_suite() -> Outcome {
    let (mut worst_res, mut worst_jump) = (0.0f64, 0.0f64);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for seed in 0..50 {
        let spec = random_problem(seed);
        let beta = spec.beta();
        let init = InitialData::constant(spec.history(), 1.0);
        let mut res = [0.0; 2];
        for (slot, n) in [2048, 4096].into_iter().enumerate() {
            let u = integrate_transformed(&spec, &beta, &init, n).map_err(|e| e.to_string())?;
            let x = to_impulsive(&u.x, &beta, &spec.schedule).map_err(|e| e.to_string())?;
            let rep = verify_equivalence(&spec, &beta, Candidate::Impulsive(&x)).map_err(|e| e.to_string())?;
            res[slot] = rep.max_ode_residual;
            if slot == 0 {
                worst_jump = worst_jump.max(rep.max_jump_residual);
                ensure(rep.max_jump_residual <= 1e-12, || format!("seed {seed}: jump {:e}", rep.max_jump_residual))?;
                ensure(rep.max_ode_residual <= 5e-3, || format!("seed {seed}: residual {:e}", rep.max_ode_residual))?;
            }
        }
        let ratio = res[0] / res[1];
        ensure((3.5..=4.5).contains(&ratio), || format!("seed {seed}: ratio {ratio}"))?;
        worst_res = worst_res.max(res[0]);
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok(format!(
        "max residual {worst_res:.2e}, max jump {worst_jump:.1e}, ratios in [{lo:.3}, {hi:.3}]"
    ))
}

fn round_trip() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let spec = random_problem(seed);
        let beta = spec.beta();
        let u = random_regulated_fn(seed, &beta, 200);
        let x = to_impulsive(&u, &beta, &spec.schedule).map_err(|e| e.to_string())?;
        let back = to_nonimpulsive(&x, &beta).map_err(|e| e.to_string())?;
        for (i, (a, b)) in u.values().iter().zip(back.values()).enumerate() {
            worst = worst.max((a - b).abs());
            worst = worst.max((u.value_right(i) - back.value_right(i)).abs());
        }
    }
    ensure(worst <= 1e-14, || format!("round-trip error {worst:e}"))?;
    Ok(format!("max error {worst:.1e} over 100 functions"))
}

fn integrator() -> Outcome {
    let sched = ImpulseSchedule::new(2.0 * PI, 0.5, 1.0, vec![], vec![]);
    let sine = ProblemSpec::new(0.0, sched, parse("cos(t)", 1.0).unwrap(), 1.0, 1.0, None).unwrap();
    let init = InitialData::from_fns(1.0, 64, f64::sin, f64::cos).map_err(|e| e.to_string())?;
    let tr = integrate_impulsive(&sine, &sine.beta(), &init, 4096).map_err(|e| e.to_string())?;
    let sine_err = tr
        .x
        .samples()
        .iter()
        .filter(|(t, _, _)| *t >= 0.0)
        .map(|(t, x, _)| (x - t.sin()).abs())
        .fold(0.0, f64::max);
    ensure(sine_err <= 1e-6, || format!("sine error {sine_err:e}"))?;

    let sched = ImpulseSchedule::new(2.0, 1.0, 2.0, vec![], vec![]);
    let neutral = ProblemSpec::new(0.5, sched, parse("0", 2.0).unwrap(), 1.0, 1.0, None).unwrap();
    let init = InitialData::from_fns(2.0, 8, |t| t, |_| 1.0).map_err(|e| e.to_string())?;
    let tr = integrate_impulsive(&neutral, &neutral.beta(), &init, 64).map_err(|e| e.to_string())?;
    close(tr.x.eval(1.0).unwrap(), -0.5, 1e-10, "x(1)")?;
    close(tr.x.eval(2.0).unwrap(), -0.25, 1e-10, "x(2)")?;

    let sec4 = sec4_problem(SEC4_RHS, 1.0);
    let init = InitialData::from_fns(2.0, 64, |t| 1.0 + 0.1 * t, |_| 0.1).map_err(|e| e.to_string())?;
    let tr = integrate_impulsive(&sec4, &sec4.beta(), &init, 2048).map_err(|e| e.to_string())?;
    ensure(tr.jump_log.len() == 2, || format!("{} jumps logged", tr.jump_log.len()))?;
    for (rec, b) in tr.jump_log.iter().zip(&sec4.schedule.coeffs) {
        ensure(rec.post == (1.0 + b) * rec.pre, || format!("jump at {}: {} vs {}", rec.t, rec.post, rec.pre))?;
    }
    Ok(format!("sine error {sine_err:.2e}, neutral endpoints exact, jumps exact"))
}

fn sec4_periodic() -> Outcome {
    let spec = sec4_problem(SEC4_RHS, 1.0);
    let beta = spec.beta();
    let cfg = PeriodicSolveConfig::default();
    let sol = solve_periodic(&spec, &beta, &cfg).map_err(|e| e.to_string())?.ok_or("empty schedule")?;
    let sup = sol.x.x.sup_norm();
    ensure(sol.status == SolveStatus::Converged, || "not converged".into())?;
    ensure(sup <= 1e-10, || format!("sup norm {sup:e}"))?;
    ensure(sol.residuals.periodicity_residual <= 1e-10, || {
        format!("periodicity {:e}", sol.residuals.periodicity_residual)
    })?;
    let cert = &sol.bound_certificates;
    ensure(cert.D.is_some_and(|d| (d - 27.0).abs() < 1e-9), || format!("D {:?}", cert.D))?;
    ensure(cert.within_bounds == Some(true) && sol.certified, || "certificate not asserted".into())?;

    let sweep_cfg = PeriodicSolveConfig {
        lambda_schedule: (1..=10).map(|i| i as f64 / 10.0).collect(),
        ..Default::default()
    };
    let rows: Vec<SweepRow> = lambda_sweep_report(&spec, &beta, &sweep_cfg).map_err(|e| e.to_string())?;
    let l2_bound = cert.l2_bound.ok_or("no l2 bound")?;
    for r in &rows {
        ensure(r.converged, || format!("lambda {} not converged", r.lambda))?;
        ensure(r.sup_norm <= 27.0 && r.l2_norm <= l2_bound, || format!("lambda {} out of bounds", r.lambda))?;
    }
    Ok(format!("sup {sup:.1e}, {} sweep rows within D = 27", rows.len()))
}

fn linear_closed_form() -> Outcome {
    let body = std::fs::read_to_string(fixtures_dir().join("linear_closed_form.json")).map_err(|e| e.to_string())?;
    let fixture: LinearFixture = serde_json::from_str(&body).map_err(|e| e.to_string())?;
    let spec = linear_problem();
    let beta = spec.beta();
    let cfg = PeriodicSolveConfig {
        n: 4096,
        force: true,
        ..Default::default()
    };
    let sol = solve_at_lambda(&spec, &beta, &cfg, 1.0).map_err(|e| e.to_string())?;
    ensure(sol.status == SolveStatus::Converged, || "not converged".into())?;
    let mut err = 0.0f64;
    for (&t, &x) in fixture.t.iter().zip(&fixture.x_at_lambda_one) {
        err = err.max((sol.x.x.eval(t).map_err(|e| e.to_string())? - x).abs());
    }
    ensure(err <= 1e-5, || format!("sup error {err:e}"))?;
    Ok(format!("sup error {err:.2e} at N = 4096 ({} iterations)", sol.iterations))
}

fn parser() -> Outcome {
    for seed in 0..1000 {
        let e = random_rhs(seed, 8, 2.0);
        let printed = e.pretty_print();
        let back = parse(&printed, 2.0).map_err(|err| format!("seed {seed}: {err} in {printed}"))?;
        ensure(back.root() == e.root(), || format!("seed {seed}: {printed}"))?;
        ensure(back.pretty_print() == printed, || format!("seed {seed}: reprint differs"))?;
    }
    let rhs = parse(SEC4_RHS, 2.0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for c in [-3.0, 0.5, 1.0, 7.25] {
        let v = rhs
            .eval_rhs(0.0, &FnHistory(|_| c), &|_| 1.0)
            .map_err(|e| e.to_string())?;
        worst = worst.max((v - c / (27.0 * PI)).abs());
    }
    ensure(worst <= 1e-15, || format!("evaluation error {worst:e}"))?;
    Ok(format!("1000 trees round-trip, evaluation error {worst:.1e}"))
}

fn homotopy_bounds() -> Outcome {
    let mut converged = 0;
    let mut total = 0;
    let mut worst_ratio = 0.0f64;
    for seed in 0..20 {
        let spec = random_problem(seed);
        let beta = spec.beta();
        let cfg = PeriodicSolveConfig {
            n: 1024,
            ..Default::default()
        };
        for lambda in [0.25, 0.5, 0.75, 1.0] {
            total += 1;
            let sol = solve_at_lambda(&spec, &beta, &cfg, lambda).map_err(|e| format!("seed {seed}: {e}"))?;
            if sol.status != SolveStatus::Converged {
                continue;
            }
            converged += 1;
            let d = sol.bound_certificates.D.ok_or("no D")?;
            let sup = sol.bound_certificates.sup_norm;
            ensure(sup <= d + cfg.fp_tol, || format!("seed {seed} lambda {lambda}: {sup} > {d}"))?;
            worst_ratio = worst_ratio.max(sup / d);
        }
    }
    ensure(converged > 0, || "no solve converged".into())?;
    Ok(format!("{converged}/{total} converged, max sup/D = {worst_ratio:.3}"))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("worked-example constants", sec4_constants, Duration::from_secs(1)),
        ("a priori bound", sec4_bounds, Duration::from_secs(1)),
        ("degree", sec4_degree, Duration::from_secs(1)),
        ("transform equivalence suite", equivalence_suite, Duration::from_secs(60)),
        ("round-trip transform", round_trip, Duration::from_secs(5)),
        ("integrator correctness", integrator, Duration::from_secs(5)),
        ("worked-example periodic solve", sec4_periodic, Duration::from_secs(30)),
        ("closed-form periodic solve", linear_closed_form, Duration::from_secs(10)),
        ("parser", parser, Duration::from_secs(5)),
        ("bounds under homotopy", homotopy_bounds, Duration::from_secs(120)),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > *limit => Err(format!("{detail}; took {took:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} ({took:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why} ({took:.2?})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
