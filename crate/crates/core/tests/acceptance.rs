//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 2 8`.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use ppkit::covar::{aggregate, design_matrix, refine_to, standardize, CovariateStack, DesignMatrix, Layer};
use ppkit::fit::{fit_bivariate, fit_univariate, intensity_ratio_map, riemann_loglik, riemann_loglik_grad, McmcConfig};
use ppkit::geom::{GridSpec, Point, PointPattern, Window};
use ppkit::grf::{cross_corr_e, exp_correlation, marginal_corr_e, ExpCovParams, FieldSimulator, LmcParams, Sign};
use ppkit::kernel::IntensityField;
use ppkit::ripley::{csr_test, default_radii, isotropic_correction, k_inhom, poisson_envelope, CsrTest, EnvelopeIntensity};
use ppkit::sim::{replicate_rng, simulate_bivariate_lgcp, simulate_lgcp, simulate_poisson, LgcpModel};
use rand::Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn square(side: f64) -> Arc<Window> {
    Arc::new(Window::rectangle(0.0, 0.0, side, side).unwrap())
}

fn masked_grid(w: &Window, n: usize) -> GridSpec {
    GridSpec::covering(w, n, n).unwrap().with_window_mask(w)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// CSR test with homogeneous intensity for the data and every simulation.
fn homogeneous_csr(pp: &PointPattern, grid: &GridSpec, n_sim: usize, radii: &[f64], seed: u64) -> Option<CsrTest> {
    let n = pp.len();
    if n < 2 {
        return None;
    }
    let lam = n as f64 / pp.window().area();
    let khat = k_inhom(pp, &vec![lam; n], radii).unwrap();
    let field = IntensityField::constant(grid.clone(), lam).unwrap();
    let env = poisson_envelope(&field, &pp.window_arc(), n_sim, radii, 0.95, seed, EnvelopeIntensity::Homogeneous).unwrap();
    Some(csr_test(&khat, &env.curves, radii).unwrap())
}

fn c1_covariance_identities() -> Outcome {
    let phi = 4.0;
    let a = exp_correlation(phi, phi);
    let b = exp_correlation(3.0 * phi, phi);
    let ok = (a - (-1.0f64).exp()).abs() < 1e-12
        && (b - (-3.0f64).exp()).abs() < 1e-12
        && (a - 0.3679).abs() < 5e-5
        && (b - 0.0498).abs() < 5e-5;
    check(ok, format!("rho(phi)={a:.6} rho(3phi)={b:.6}"))
}

fn table_lmc() -> LmcParams {
    LmcParams::new(
        ExpCovParams::new(1.29, 6.79).unwrap(),
        ExpCovParams::new(2.09, 10.0).unwrap(),
        ExpCovParams::new(2.28, 78.43).unwrap(),
        Sign::Minus,
    )
    .unwrap()
}

fn c2_cross_correlation() -> Outcome {
    let p = table_lmc();
    let got: Vec<f64> = [0.0, 78.43, 235.29].iter().map(|h| cross_corr_e(*h, &p).unwrap()).collect();
    let want = [-0.64, -0.24, -0.03];
    let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.005);
    check(ok, format!("cross_corr_e = {:.4} {:.4} {:.4}", got[0], got[1], got[2]))
}

fn c3_marginal_correlation() -> Outcome {
    let c = marginal_corr_e(6.79, &table_lmc(), 1).unwrap();
    // Independent evaluation of the two-component mixture.
    let (s1, s) = (1.29f64 * 1.29, 2.28f64 * 2.28);
    let oracle = (s1 * (-1.0f64).exp() + s * (-6.79f64 / 78.43).exp()) / (s1 + s);
    check((c - 0.78).abs() <= 0.01 && (c - oracle).abs() < 1e-12, format!("corr(6.79) = {c:.4}"))
}

fn c4_field_fidelity() -> Outcome {
    let (n, phi, n_draws) = (64usize, 4.0, 10_000u64);
    let w = square(n as f64);
    let grid = GridSpec::covering(&w, n, n).unwrap();
    let p = ExpCovParams::new(1.0, phi).unwrap();
    let sim = FieldSimulator::new(p, &grid).unwrap();
    let mu = p.mean();
    let lags = [0usize, 4, 8];
    let stats: Vec<[f64; 4]> = (0..n_draws)
        .into_par_iter()
        .map(|k| {
            let e = sim.sample(&mut replicate_rng(2024, k));
            let mut out = [0.0; 4];
            for (slot, &l) in lags.iter().enumerate() {
                let mut acc = 0.0;
                let mut cnt = 0usize;
                for iy in 0..n {
                    for ix in 0..n - l {
                        acc += (e[iy * n + ix] - mu) * (e[iy * n + ix + l] - mu);
                        acc += (e[ix * n + iy] - mu) * (e[(ix + l) * n + iy] - mu);
                        cnt += 2;
                    }
                }
                out[slot] = acc / cnt as f64;
            }
            out[3] = e.iter().map(|v| v.exp()).sum::<f64>() / e.len() as f64;
            out
        })
        .collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (slot, &l) in lags.iter().enumerate() {
        let col: Vec<f64> = stats.iter().map(|s| s[slot]).collect();
        let (m, se) = mean_se(&col);
        let truth = (-(l as f64) / phi).exp();
        ok &= (m - truth).abs() <= 3.0 * se;
        parts.push(format!("C({l})={m:.4}~{truth:.4}+-{:.4}", 3.0 * se));
    }
    let col: Vec<f64> = stats.iter().map(|s| s[3]).collect();
    let (m, se) = mean_se(&col);
    ok &= (m - 1.0).abs() <= 3.0 * se;
    parts.push(format!("E[exp e]={m:.4}+-{:.4}", 3.0 * se));
    check(ok, parts.join(" "))
}

fn c5_lgcp_regimes() -> Outcome {
    let w = square(10.0);
    let grid = masked_grid(&w, 64);
    let lgcp = |sigma: f64, phi: f64| LgcpModel::homogeneous(&grid, w.clone(), 0.0, ExpCovParams::new(sigma, phi).unwrap()).unwrap();
    let clustered = lgcp(1.0, 4.0);
    let counts: Vec<f64> = (0..500u64)
        .into_par_iter()
        .map(|k| simulate_lgcp(&clustered, 10_000 + k).unwrap().0.len() as f64)
        .collect();
    let (m, se) = mean_se(&counts);
    let count_ok = (m - 100.0).abs() <= 3.0 * se;

    let radii = default_radii(&w, 32);
    let reject_rate = |model: &LgcpModel, base: u64| {
        let rejected = (0..50u64)
            .filter(|k| {
                let pp = simulate_lgcp(model, base + k).unwrap().0.into_simple().unwrap();
                homogeneous_csr(&pp, &grid, 199, &radii, base + 1000 + k).is_some_and(|t| t.rejects(0.05))
            })
            .count();
        rejected as f64 / 50.0
    };
    let strong = reject_rate(&clustered, 20_000);
    let weak = reject_rate(&lgcp(0.1, 0.1), 30_000);
    check(
        count_ok && strong >= 0.8 && weak <= 0.15,
        format!("mean count {m:.2}+-{:.2}; reject (1,4) {strong:.2}, (0.1,0.1) {weak:.2}", 3.0 * se),
    )
}

fn c6_ripley_calibration() -> Outcome {
    let w = square(10.0);
    let grid = masked_grid(&w, 32);
    let field = IntensityField::constant(grid.clone(), 1.0).unwrap();
    let radii = default_radii(&w, 16);
    let rejected = (0..200u64)
        .filter(|k| {
            let pp = simulate_poisson(&field, w.clone(), 40_000 + k).unwrap().into_simple().unwrap();
            homogeneous_csr(&pp, &grid, 199, &radii, 50_000 + k).is_some_and(|t| t.rejects(0.05))
        })
        .count();
    let rate = rejected as f64 / 200.0;
    check((0.02..=0.09).contains(&rate), format!("type-I error {rate:.3}"))
}

fn arc_oracle(c: &Point, r: f64, w: &Window, n: usize) -> f64 {
    let inside = (0..n)
        .filter(|i| {
            let t = 2.0 * PI * (*i as f64 + 0.5) / n as f64;
            w.contains(&Point::new(c.x + r * t.cos(), c.y + r * t.sin()))
        })
        .count();
    inside as f64 / n as f64
}

fn c7_edge_correction() -> Outcome {
    let ring: Vec<Point> = [(0.0, 0.0), (6.0, 0.0), (7.0, 3.0), (4.0, 2.5), (5.0, 6.0), (2.0, 7.0), (1.5, 4.0), (-1.0, 3.0), (0.0, 0.0)]
        .iter()
        .map(|(x, y)| Point::new(*x, *y))
        .collect();
    let w = Window::from_rings(vec![ring]).unwrap();
    let mut rng = replicate_rng(77, 0);
    let mut cases = Vec::new();
    while cases.len() < 50 {
        let s = Point::new(rng.random_range(-1.0..7.0), rng.random_range(0.0..7.0));
        if !w.contains(&s) {
            continue;
        }
        let r = rng.random_range(0.2..4.0);
        let t = rng.random_range(0.0..2.0 * PI);
        cases.push((s, Point::new(s.x + r * t.cos(), s.y + r * t.sin()), r));
    }
    let errs: Vec<f64> = cases
        .par_iter()
        .map(|(s, u, r)| {
            let g = arc_oracle(s, *r, &w, 1_000_000);
            let oracle = 1.0 / (w.area() * g);
            let got = isotropic_correction(s, u, &w).unwrap();
            ((got - oracle) / oracle).abs()
        })
        .collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    check(worst < 1e-3, format!("max relative error {worst:.2e} over 50 cases"))
}

fn c8_likelihood() -> Outcome {
    let mut rng = replicate_rng(8, 0);
    let mut worst_ll = 0.0f64;
    let mut worst_grad = 0.0f64;
    for _ in 0..20 {
        let m = rng.random_range(5..60);
        let lam: f64 = rng.random_range(0.05..5.0);
        let counts: Vec<f64> = (0..m).map(|_| rng.random_range(0..8) as f64).collect();
        let areas: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
        let ll = riemann_loglik(&counts, &vec![lam.ln(); m], &areas).unwrap();
        let n: f64 = counts.iter().sum();
        let d: f64 = areas.iter().sum();
        let want = n * lam.ln() - lam * d;
        worst_ll = worst_ll.max(((ll - want) / want).abs());

        let logl: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let grad = riemann_loglik_grad(&counts, &logl, &areas).unwrap();
        let h = 1e-5;
        for i in 0..m {
            let mut up = logl.clone();
            let mut dn = logl.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (riemann_loglik(&counts, &up, &areas).unwrap() - riemann_loglik(&counts, &dn, &areas).unwrap()) / (2.0 * h);
            worst_grad = worst_grad.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
        }
    }
    check(
        worst_ll < 1e-10 && worst_grad < 1e-6,
        format!("loglik rel err {worst_ll:.1e}, gradient rel err {worst_grad:.1e}"),
    )
}

fn c9_univariate_recovery() -> Outcome {
    let w = square(40.0);
    let grid = masked_grid(&w, 32);
    let truth = ExpCovParams::new(1.0, 4.0).unwrap();
    let model = LgcpModel::homogeneous(&grid, w.clone(), 0.0, truth).unwrap();
    let stack = CovariateStack::new(grid.clone());
    let mut cover = [0usize; 3];
    for rep in 0..20u64 {
        let pp = simulate_lgcp(&model, 1000 + rep).unwrap().0.into_simple().unwrap();
        let s = fit_univariate(&pp, &stack, &McmcConfig::desk(rep)).unwrap().summary();
        cover[0] += s.get("beta:intercept").unwrap().covers(0.0) as usize;
        cover[1] += s.get("sigma").unwrap().covers(1.0) as usize;
        cover[2] += s.get("phi").unwrap().covers(4.0) as usize;
    }
    check(
        cover.iter().all(|c| *c >= 16),
        format!("95% CI coverage of 20: beta0 {} sigma {} phi {}", cover[0], cover[1], cover[2]),
    )
}

fn c10_bivariate_sign() -> Outcome {
    let w = square(40.0);
    let grid = masked_grid(&w, 32);
    let own = ExpCovParams::new(0.5, 4.0).unwrap();
    let p = LmcParams::new(own, own, ExpCovParams::new(1.5, 4.0).unwrap(), Sign::Minus).unwrap();
    let model = LgcpModel::bivariate(DesignMatrix::intercept_only(&grid), vec![-1.0], vec![-1.0], p, w.clone()).unwrap();
    let stack = CovariateStack::new(grid.clone());
    let mut hits = 0;
    let mut medians = Vec::new();
    for rep in 0..10u64 {
        let ((a, b), _) = simulate_bivariate_lgcp(&model, 500 + rep).unwrap();
        let (a, b) = (a.into_simple().unwrap(), b.into_simple().unwrap());
        let post = fit_bivariate(&a, &b, &stack, Sign::Minus, &McmcConfig::desk(rep)).unwrap();
        let mut c: Vec<f64> = (0..post.n_draws())
            .map(|d| cross_corr_e(0.0, &post.lmc_params(d).unwrap()).unwrap())
            .collect();
        c.sort_by(f64::total_cmp);
        let q = |x: f64| c[((c.len() - 1) as f64 * x).round() as usize];
        hits += (q(0.975) < 0.0) as usize;
        medians.push(format!("{:.2}", q(0.5)));
    }
    check(hits >= 8, format!("{hits}/10 intervals below 0; medians [{}]", medians.join(", ")))
}

fn c11_resolution_sensitivity() -> Outcome {
    let w = square(40.0);
    let fine = masked_grid(&w, 32);
    let coarse = GridSpec::covering(&w, 8, 8).unwrap();
    let hot: Vec<usize> = [(12, 12), (13, 12), (12, 13), (13, 13)].iter().map(|&(x, y)| fine.index(x, y)).collect();
    let mut raw = vec![0.0; fine.n_cells()];
    for &c in &hot {
        raw[c] = 1.0;
    }
    let raw_stack = CovariateStack::new(fine.clone()).with_layer(Layer::new("hot", raw)).unwrap();
    let fine_stack = standardize(&raw_stack).unwrap();
    let coarse_stack = standardize(&refine_to(&aggregate(&raw_stack, &coarse).unwrap(), &fine).unwrap()).unwrap();
    let (d_fine, d_coarse) = (design_matrix(&fine_stack), design_matrix(&coarse_stack));
    let model = LgcpModel::univariate(design_matrix(&raw_stack), vec![-1.0, 2.5], ExpCovParams::new(0.5, 4.0).unwrap(), w.clone()).unwrap();
    let mut hits = 0;
    let mut flagged = Vec::new();
    for rep in 0..10u64 {
        let pp = simulate_lgcp(&model, 700 + rep).unwrap().0.into_simple().unwrap();
        let a = fit_univariate(&pp, &fine_stack, &McmcConfig::desk(rep)).unwrap();
        let b = fit_univariate(&pp, &coarse_stack, &McmcConfig::desk(rep)).unwrap();
        let map = intensity_ratio_map(&a, &d_fine, &b, &d_coarse, 0, 200, rep).unwrap();
        let plus = hot.iter().filter(|&&c| map.flag_codes()[c] == 1.0).count();
        hits += (plus == hot.len()) as usize;
        flagged.push(plus.to_string());
    }
    check(hits >= 8, format!("{hits}/10 seeds flag every hotspot cell; per seed [{}]", flagged.join(", ")))
}

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ppkit"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("ppkit {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path) -> Result<(), String> {
    std::fs::write(
        dir.join("sim.json"),
        r#"{"seed": 5, "window": {"rectangle": [0, 0, 20, 20]}, "grid": {"nx": 16, "ny": 16},
            "simulate": {"beta": [[-0.5], [-0.5]],
              "covariance": {"bivariate": {"w1": {"sigma": 0.5, "phi": 2}, "w2": {"sigma": 0.5, "phi": 2},
                                           "w": {"sigma": 1.2, "phi": 3}, "sign": "-1"}},
              "lattice": [{"sigma": 0.1, "phi": 0.1}, {"sigma": 1, "phi": 4}]}}"#,
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(
        dir.join("an.json"),
        r#"{"seed": 9, "window": {"rectangle": [0, 0, 20, 20]}, "grid": {"nx": 16, "ny": 16},
            "events": {"path": "sim/events.csv", "groups": ["1", "2"]},
            "k": {"n_sim": 39},
            "fit": {"burn_in": 500, "thin": 2, "n_samples": 100, "sign": "-1"},
            "report": {"posterior": "fit/posterior.json", "compare": {"posterior": "fit/posterior.json"}, "n_sim": 20}}"#,
    )
    .map_err(|e| e.to_string())?;
    run_cli(&["simulate", "--config", "sim.json", "--out", "sim"], dir)?;
    run_cli(&["diagnose", "--config", "an.json", "--out", "diag"], dir)?;
    run_cli(&["fit", "--config", "an.json", "--out", "fit"], dir)?;
    run_cli(&["report", "--config", "an.json", "--out", "report"], dir)
}

fn c12_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for d in [&a, &b] {
        std::fs::create_dir(d).map_err(|e| e.to_string())?;
        pipeline(d)?;
    }
    let mut compared = 0;
    for sub in ["sim", "diag", "fit", "report"] {
        let mut names: Vec<_> = std::fs::read_dir(a.join(sub))
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let x = std::fs::read(a.join(sub).join(&name)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.join(sub).join(&name)).map_err(|e| format!("{sub}/{name:?} missing in rerun: {e}"))?;
            if x != y {
                return Err(format!("{sub}/{} differs between runs", name.to_string_lossy()));
            }
            compared += 1;
        }
    }
    check(compared > 20, format!("{compared} output files byte-identical across reruns"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("analytic covariance identities", c1_covariance_identities),
        ("cross-correlation arithmetic", c2_cross_correlation),
        ("marginal correlation arithmetic", c3_marginal_correlation),
        ("field simulation fidelity", c4_field_fidelity),
        ("LGCP counts and CSR regimes", c5_lgcp_regimes),
        ("CSR test calibration", c6_ripley_calibration),
        ("isotropic edge correction oracle", c7_edge_correction),
        ("grid likelihood exactness", c8_likelihood),
        ("univariate recovery", c9_univariate_recovery),
        ("bivariate sign recovery", c10_bivariate_sign),
        ("resolution sensitivity", c11_resolution_sensitivity),
        ("determinism", c12_determinism),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id:>2} PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
