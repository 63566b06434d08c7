//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! lines are printed even when everything passes.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{brute_force_lasso, compatibility_by_faces, correlated, dot, gaussian_matrix, solve, standardized};
use ldpe_core::diagnostics::{capped_l1_sparsity, compatibility_factor};
use ldpe_core::inference::{confidence_interval, ldpe_estimate, threshold_ldpe, ThresholdMode};
use ldpe_core::lasso::{default_column_grid, lasso_path_for_column, solve_lasso, verify_kkt, PreparedDesign};
use ldpe_core::numerics::RngStream;
use ldpe_core::scaled_lasso::{fit_initial, lambda_univ, InitMethod, InitialFit};
use ldpe_core::scores::{build_all_scores, ScoreKind, ScoreSettings};
use ldpe_core::sim::generate_beta;
use serde_json::Value;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ldpe-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn simulate(out: &Path, extra: &[&str]) -> Result<Value, String> {
    let mut args = vec!["simulate", "--setting", "A", "--desk", "--seed", "7", "--quiet", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = Command::new(env!("CARGO_BIN_EXE_ldpe")).args(&args).env_remove("LDPE_THREADS").output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("simulate exited with {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    let text = std::fs::read_to_string(out.join("summary_tables.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn row<'a>(rows: &'a Value, estimator: &str, pooled: bool) -> Result<&'a Value, String> {
    rows.as_array()
        .and_then(|r| r.iter().find(|v| v["estimator"] == estimator && (!pooled || v["index"].is_null())))
        .ok_or_else(|| format!("no {estimator} row"))
}

fn sparsity_constants() -> Check {
    let start = Instant::now();
    let (n, p) = (200, 3000);
    let mut parts = Vec::new();
    for (alpha, target, scaled) in [(2.0, 8.93, 5.05), (1.0, 29.24, 16.55)] {
        let beta = generate_beta(p, alpha, n).map_err(|e| e.to_string())?;
        let s = capped_l1_sparsity(&beta, 1.0, n, p).map_err(|e| e.to_string())?;
        let s_log = s * (p as f64).ln() / (n as f64).sqrt();
        ensure((s - target).abs() <= 0.01, || format!("alpha {alpha}: s = {s:.4}, expected {target}"))?;
        ensure((s_log - scaled).abs() <= 0.01, || format!("alpha {alpha}: s log p / sqrt n = {s_log:.4}, expected {scaled}"))?;
        parts.push(format!("s = {s:.4} (alpha {alpha})"));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.2}s"))?;
    Ok(format!("{}, {secs:.3}s", parts.join(", ")))
}

fn desk_coverage(t: &Value, secs: f64) -> Check {
    let cov = row(&t["coverage"], "ldpe", false)?["all"].as_f64().ok_or("coverage missing")?;
    ensure((0.92..=0.99).contains(&cov), || format!("mean LDPE coverage {cov:.4} outside [0.92, 0.99]"))?;
    Ok(format!("mean LDPE coverage {cov:.4} over {} replications, {:.1} min", t["replications"], secs / 60.0))
}

fn debiasing(t: &Value) -> Check {
    let ldpe = row(&t["max_beta"], "ldpe", true)?["bias"].as_f64().ok_or("bias missing")?;
    let lasso = row(&t["max_beta"], "lasso", true)?["bias"].as_f64().ok_or("bias missing")?;
    ensure(ldpe.abs() <= 0.25 * lasso.abs(), || format!("LDPE bias {ldpe:.4} vs Lasso {lasso:.4}"))?;
    Ok(format!("spike bias LDPE {ldpe:.4} vs Lasso {lasso:.4} (ratio {:.3})", ldpe.abs() / lasso.abs()))
}

fn bias_bound(t: &Value) -> Check {
    let checked = t["bias_bound"]["checked"].as_u64().unwrap_or(0);
    let violations = t["bias_bound"]["violations"].as_u64().unwrap_or(u64::MAX);
    ensure(checked > 0 && violations == 0, || format!("{violations} violations in {checked} checks"))?;
    Ok(format!("{checked} coefficient-replications checked, 0 violations"))
}

fn init_from(beta: Vec<f64>) -> InitialFit {
    InitialFit {
        support: (0..beta.len()).filter(|&k| beta[k] != 0.0).collect(),
        beta_init: beta,
        sigma_hat: 1.0,
        lambda0: 0.1,
        method: InitMethod::ScaledLasso,
        refit_fallback: false,
        iterations: 0,
        converged: true,
    }
}

fn ols_equivalence() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = RngStream::new(808, seed);
        let n = 20 + rng.index(40);
        let p = 2 + rng.index(n / 2 - 1);
        let d = PreparedDesign::new(standardized(&mut rng, n, p));
        let x = d.design();
        let noise = rng.gaussian_vector(n);
        let y: Vec<f64> = (0..n).map(|i| (0..p).step_by(3).map(|k| 1.5 * x.col(k)[i]).sum::<f64>() + noise[i]).collect();
        let g = (0..p).map(|a| (0..p).map(|b| dot(x.col(a), x.col(b))).collect()).collect();
        let target = solve(g, (0..p).map(|a| dot(x.col(a), &y)).collect()).ok_or("singular design")?;
        let scores = build_all_scores(&d, ScoreKind::Projection, &ScoreSettings::default());
        let lse = fit_initial(&d, &y, lambda_univ(n, p).unwrap(), InitMethod::ScaledLassoLse).map_err(|e| e.to_string())?;
        let random: Vec<f64> = rng.gaussian_vector(p).into_iter().map(|v| 3.0 * v).collect();
        for start in [vec![0.0; p], random, lse.beta_init] {
            let fit = ldpe_estimate(&d, &y, &scores, &init_from(start)).map_err(|e| e.to_string())?;
            for k in 0..p {
                let err = (fit.beta_hat[k] - target[k]).abs() / target[k].abs().max(1.0);
                worst = worst.max(err);
                ensure(err <= 1e-8, || format!("design {seed}, coefficient {k}: error {err:e}"))?;
            }
        }
    }
    Ok(format!("20 designs, 3 starting points each, worst relative error {worst:.1e}"))
}

fn path_properties() -> Check {
    let mut paths = 0;
    for seed in 0..50u64 {
        let mut rng = RngStream::new(505, seed);
        let n = 15 + rng.index(26);
        let p = 5 + rng.index(60);
        let x = if seed % 3 == 0 { correlated(&mut rng, n, p, 0.6) } else { standardized(&mut rng, n, p) };
        let d = PreparedDesign::new(x);
        let cols: Vec<usize> = if p <= 12 { (0..p).collect() } else { (0..p).step_by(p / 8).collect() };
        for j in cols {
            let path = lasso_path_for_column(&d, j, &default_column_grid(&d, j)).map_err(|e| e.to_string())?;
            paths += 1;
            for w in path.points.windows(2) {
                ensure(w[1].eta <= w[0].eta + 1e-8, || format!("design {seed}, column {j}: eta increases"))?;
                ensure(w[1].z_norm <= w[0].z_norm + 1e-8, || format!("design {seed}, column {j}: ||z|| increases"))?;
            }
            for pt in &path.points {
                ensure(pt.tau <= 1.0 / pt.z_norm + 1e-10, || format!("design {seed}, column {j}: tau above 1/||z||"))?;
                let others = (0..p).filter(|&k| k != j);
                for (g, k) in pt.gamma.iter().zip(others) {
                    let grad = dot(d.design().col(k), &pt.z) / n as f64;
                    let v = if *g != 0.0 { (grad - pt.lambda * g.signum()).abs() } else { (grad.abs() - pt.lambda).max(0.0) };
                    ensure(v <= 1e-6, || format!("design {seed}, column {j}: KKT violation {v:e}"))?;
                }
            }
        }
    }
    Ok(format!("{paths} paths on 50 designs"))
}

fn solver_oracles() -> Check {
    for inst in 0..100u64 {
        let mut rng = RngStream::new(101, inst);
        let q = 1 + rng.index(6);
        let n = q + 2 + rng.index(15 - q - 1);
        let x = gaussian_matrix(&mut rng, n, q);
        let y = rng.gaussian_vector(n);
        let lmax = (0..q).map(|k| dot(x.col(k), &y).abs()).fold(0.0, f64::max) / n as f64;
        let lambda = lmax * (0.02 + 0.9 * rng.uniform());
        let sol = solve_lasso(&x, &y, lambda, None).map_err(|e| e.to_string())?;
        let oracle = brute_force_lasso(&x, &y, lambda);
        for k in 0..q {
            let err = (sol.coefficients[k] - oracle[k]).abs();
            ensure(err <= 1e-6, || format!("Lasso instance {inst}, coefficient {k}: error {err:e}"))?;
        }
        let kkt = verify_kkt(&sol, &x, &y);
        ensure(kkt.stationarity <= 1e-6 && kkt.bound <= 1e-6, || format!("Lasso instance {inst}: KKT"))?;
    }
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let mut rng = RngStream::new(202, inst);
        let x = if inst % 2 == 0 { standardized(&mut rng, 20, 8) } else { correlated(&mut rng, 20, 8, 0.5) };
        let size = 1 + (inst as usize / 2) % 2;
        let mut s: Vec<usize> = Vec::new();
        while s.len() < size {
            let k = rng.index(8);
            if !s.contains(&k) {
                s.push(k);
            }
        }
        let xi = [1.0, 2.0, 3.0][inst as usize % 3];
        let exact = compatibility_by_faces(&x, &s, xi);
        let got = compatibility_factor(&x, &s, xi, inst).map_err(|e| e.to_string())?;
        let rel = (got.upper - exact).abs() / exact;
        worst = worst.max(rel);
        ensure(rel <= 1e-3, || format!("compatibility instance {inst}: {} vs {exact}", got.upper))?;
    }
    Ok(format!("100 Lasso instances within 1e-6, 20 compatibility instances within {worst:.1e} relative"))
}

fn null_fwer() -> Check {
    let dir = scratch("fwer");
    let t = simulate(&dir, &["--null", "--fixed-design", "--reps", "200", "--estimators", "t_ldpe", "--threshold-alpha", "0.05"])?;
    let _ = std::fs::remove_dir_all(&dir);
    let rate = row(&t["selection"], "t_ldpe", false)?["false_selection_rate"].as_f64().ok_or("rate missing")?;
    let reps = t["replications"].as_u64().unwrap_or(0);
    ensure(reps == 200, || format!("{reps} replications completed"))?;
    ensure(rate <= 0.10, || format!("familywise false-positive rate {rate:.3}"))?;
    Ok(format!("familywise false-positive rate {rate:.3} over 200 null replications"))
}

fn same_directories(a: &Path, b: &Path) -> Check {
    let list = |d: &Path| -> Result<Vec<String>, String> {
        let mut names: Vec<String> = std::fs::read_dir(d)
            .map_err(|e| e.to_string())?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        names.sort();
        Ok(names)
    };
    let names = list(a)?;
    ensure(names == list(b)?, || "file lists differ".into())?;
    for name in &names {
        let (x, y) = (std::fs::read(a.join(name)).map_err(|e| e.to_string())?, std::fs::read(b.join(name)).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{name} differs"))?;
    }
    Ok(format!("{} files byte-identical", names.len()))
}

fn scale_equivariance() -> Check {
    for seed in 0..10u64 {
        let mut rng = RngStream::new(1313, seed);
        let (n, p) = (50, 70);
        let d = PreparedDesign::new(standardized(&mut rng, n, p));
        let x = d.design();
        let noise = rng.gaussian_vector(n);
        let y: Vec<f64> = (0..n).map(|i| (0..p).step_by(17).map(|k| 1.2 * x.col(k)[i]).sum::<f64>() + 0.7 * noise[i]).collect();
        let scores = build_all_scores(&d, ScoreKind::Ldpe, &ScoreSettings::default());
        let lambda0 = lambda_univ(n, p).unwrap();
        let fit_at = |y: &[f64]| {
            let init = fit_initial(&d, y, lambda0, InitMethod::ScaledLassoLse)?;
            ldpe_estimate(&d, y, &scores, &init)
        };
        let base = fit_at(&y).map_err(|e| e.to_string())?;
        let base_sel = threshold_ldpe(&base, 0.05, ThresholdMode::Hard, 0.0).map_err(|e| e.to_string())?.selected;
        for c in [0.1, 10.0] {
            let cy: Vec<f64> = y.iter().map(|v| c * v).collect();
            let fit = fit_at(&cy).map_err(|e| e.to_string())?;
            let close = |a: f64, b: f64| (a - c * b).abs() <= 1e-8 * (c * b).abs().max(c * 1e-8);
            ensure(close(fit.sigma_hat, base.sigma_hat), || format!("dataset {seed}, c = {c}: sigma"))?;
            for j in 0..p {
                let a = confidence_interval(&fit, &[(j, 1.0)], 0.05).map_err(|e| e.to_string())?;
                let b = confidence_interval(&base, &[(j, 1.0)], 0.05).map_err(|e| e.to_string())?;
                ensure(close(fit.beta_hat[j], base.beta_hat[j]) && close(a.low(), b.low()) && close(a.high(), b.high()), || {
                    format!("dataset {seed}, c = {c}, coefficient {j}")
                })?;
            }
            let sel = threshold_ldpe(&fit, 0.05, ThresholdMode::Hard, 0.0).map_err(|e| e.to_string())?.selected;
            ensure(sel == base_sel, || format!("dataset {seed}, c = {c}: selected set changed"))?;
        }
    }
    Ok("10 datasets, c in {0.1, 10}".into())
}

fn report(failures: &mut usize, id: u32, name: &str, result: Check) {
    match result {
        Ok(detail) => println!("criterion {id:>2} {name}: PASS ({detail})"),
        Err(detail) => {
            *failures += 1;
            println!("criterion {id:>2} {name}: FAIL ({detail})");
        }
    }
}

fn guarded(f: impl FnOnce() -> Check + std::panic::UnwindSafe) -> Check {
    std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()))
}

fn main() {
    let mut failures = 0;
    report(&mut failures, 1, "sparsity constants", guarded(sparsity_constants));

    let serial = scratch("threads1");
    let start = Instant::now();
    let desk = simulate(&serial, &["--threads", "1"]);
    let secs = start.elapsed().as_secs_f64();
    match &desk {
        Ok(t) => {
            report(&mut failures, 2, "desk-scale coverage", desk_coverage(t, secs));
            report(&mut failures, 3, "debiasing at spikes", debiasing(t));
            report(&mut failures, 4, "exact bias bound", bias_bound(t));
        }
        Err(e) => {
            for (id, name) in [(2, "desk-scale coverage"), (3, "debiasing at spikes"), (4, "exact bias bound")] {
                report(&mut failures, id, name, Err(e.clone()));
            }
        }
    }

    report(&mut failures, 5, "least-squares equivalence", guarded(ols_equivalence));
    report(&mut failures, 6, "path properties", guarded(path_properties));
    report(&mut failures, 7, "solver oracles", guarded(solver_oracles));
    report(&mut failures, 8, "null familywise error", guarded(null_fwer));

    let parallel = scratch("threads8");
    let determinism = match (&desk, simulate(&parallel, &["--threads", "8"])) {
        (Ok(_), Ok(_)) => same_directories(&serial, &parallel),
        (Err(e), _) => Err(e.clone()),
        (_, Err(e)) => Err(e),
    };
    report(&mut failures, 9, "thread determinism", determinism);
    let _ = std::fs::remove_dir_all(&serial);
    let _ = std::fs::remove_dir_all(&parallel);

    report(&mut failures, 10, "scale equivariance", guarded(scale_equivariance));

    if failures > 0 {
        println!("{failures} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
