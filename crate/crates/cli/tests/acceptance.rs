//! End-to-end acceptance checks. Each criterion prints one line; the
//! process exits non-zero if any hard criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use catalyst_cli::{run_experiment, ExperimentConfig};
use catalyst_core::anderson::{direct_moment_grid, dual_moment_grid, DualSetup, MomentParams, MomentReport};
use catalyst_core::coalescing::{
    block_inequality_check, calibrate_c_epsilon, correlation_dual, delta_of_k, k_good_deficiency,
    meeting_probability, pair_correlation_closed_form, parse_points, BlockConfig, HittingProbabilities,
};
use catalyst_core::kernels::fourier::{green_constants, green_constants_with, QuadratureOptions};
use catalyst_core::kernels::spectral::{dirichlet_eigenvalue, BoxRegion};
use catalyst_core::lyapunov::{clumping_check_value, gap_excludes_zero, hard_checks, rate_function_i};
use catalyst_core::polaron::{solve_p5, PolaronOptions, RadialGrid, RadialProfile};
use catalyst_core::rng::Replication;
use catalyst_core::stats::{MeanEstimate, Z95};
use catalyst_core::voter::lineage::pair_correlation_with;
use catalyst_core::voter::{init_field, InitialLaw, VoterConfig};
use catalyst_core::{make_simple_random_walk, Error, Lattice, Site, Torus};

type Check = Result<(bool, String), Error>;

struct Outcome {
    failed: Vec<usize>,
    warned: Vec<usize>,
}

impl Outcome {
    fn record(&mut self, n: usize, title: &str, soft: bool, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        let verdict = match (ok, soft) {
            (true, _) => "PASS",
            (false, true) => "WARN",
            (false, false) => "FAIL",
        };
        println!("criterion {n:>2} {verdict} {title} [{secs:.1} s]: {detail}");
        if !ok {
            if soft {
                self.warned.push(n);
            } else {
                self.failed.push(n);
            }
        }
    }
}

fn within(a: f64, sa: f64, b: f64, sb: f64, k: f64) -> bool {
    (a - b).abs() <= k * sa.hypot(sb)
}

fn duality_oracle() -> Check {
    let torus = Torus::new(16, 2)?;
    let kernel = make_simple_random_walk(2)?;
    let (t, warm) = (2.0, 8.0);
    let configs = ["0,0@0", "0,0@0;1,0@1", "0,0@0;1,0@0.5;0,1@2"];
    let points: Vec<_> = configs.iter().map(|c| parse_points(c)).collect::<Result<_, _>>()?;
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, &rho) in [0.3, 0.7].iter().enumerate() {
        let cfg = VoterConfig::new(torus, kernel.clone(), rho, InitialLaw::Warmed(warm))?;
        let rep = Replication::new(101 + i as u64, 100_000);
        let forward = rep.run(|_, rng| {
            let mut field = init_field(&cfg, rng)?;
            field.enable_log();
            field.evolve(t, rng);
            let all = points
                .iter()
                .map(|pts| pts.iter().all(|w| field.value_at(torus.wrap(w.site), t - w.birth_time) == Some(1)))
                .collect::<Vec<bool>>();
            Ok::<_, Error>(all)
        })?;
        let forward: Vec<Vec<bool>> = forward.into_iter().collect::<Result<_, _>>()?;
        for (j, pts) in points.iter().enumerate() {
            let ind: Vec<f64> = forward.iter().map(|r| r[j] as u8 as f64).collect();
            let fwd = MeanEstimate::from_values(&ind);
            let dual_rep = Replication::new(201 + 10 * i as u64 + j as u64, 100_000);
            let d = correlation_dual(pts, rho, warm, t, &kernel, &Lattice::Torus(torus), &dual_rep)?;
            let agree = if pts.len() == 1 {
                d.estimate.mean == rho && fwd.agrees_with(rho, 0.0, 4.0)
            } else {
                within(fwd.mean, fwd.std_error, d.estimate.mean, d.estimate.std_error, 3.0)
            };
            ok &= agree;
            notes.push(format!("rho={rho} n={} fwd={:.5} dual={:.5}", pts.len(), fwd.mean, d.estimate.mean));
        }
    }
    Ok((ok, notes.join("; ")))
}

fn representation_oracle(reports: &mut Vec<MomentReport>) -> Check {
    let torus = Torus::new(16, 2)?;
    let kernel = make_simple_random_walk(2)?;
    let cfg = VoterConfig::new(torus, kernel.clone(), 0.5, InitialLaw::Warmed(8.0))?;
    let setup = DualSetup { kernel, lattice: Lattice::Torus(torus), rho: 0.5, warmup: 8.0 };
    let grid: Vec<MomentParams> =
        [(1, 0.0), (2, 0.0), (1, 1.0), (2, 1.0)].iter().map(|&(p, k)| MomentParams::new(p, k, 0.5, 2.0)).collect();
    let direct = direct_moment_grid(&cfg, &grid, &Replication::new(301, 200_000))?;
    let dual = dual_moment_grid(&setup, &grid, &Replication::new(302, 200_000))?;
    let mut ok = true;
    let mut notes = Vec::new();
    for (a, b) in direct.iter().zip(&dual) {
        ok &= within(a.lambda_hat, a.lambda_std_error, b.lambda_hat, b.lambda_std_error, 3.0);
        notes.push(format!("p={} kappa={} {:.5}/{:.5}", a.params.p, a.params.kappa, a.lambda_hat, b.lambda_hat));
    }
    reports.extend(direct);
    reports.extend(dual);
    Ok((ok, notes.join("; ")))
}

fn pair_correlation_oracle() -> Check {
    let kernel = make_simple_random_walk(3)?;
    let cfg = VoterConfig::new(Torus::new(16, 3)?, kernel.clone(), 0.3, InitialLaw::Warmed(8.0))?;
    let hits = HittingProbabilities::new(&kernel, QuadratureOptions::default())?;
    let cases = [(Site::unit(0, 1), 0.0), (Site::unit(0, 1), 0.5), (Site::from_slice(&[1, 1, 0])?, 1.0)];
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, &(x2, s)) in cases.iter().enumerate() {
        let rep = Replication::new(401 + i as u64, 1_000_000);
        let r = pair_correlation_with(&cfg, Site::ORIGIN, x2, s, 8, &hits, &rep)?;
        let exact = pair_correlation_closed_form(&kernel, Site::ORIGIN, x2, s, 0.3)?;
        ok &= r.estimate.agrees_with(exact, 0.0, 3.0);
        notes.push(format!(
            "s={s} est={:.6}+-{:.1e} exact={exact:.6} stabilized={}",
            r.estimate.mean, r.estimate.std_error, r.stabilized
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn dichotomy_trend(reports: &mut Vec<MomentReport>) -> Check {
    let (rho, gamma) = (0.5, 1.0);
    let low = DualSetup { kernel: make_simple_random_walk(2)?, lattice: Lattice::Free(2), rho, warmup: 8.0 };
    let grid: Vec<MomentParams> = [1.0, 2.0, 4.0].iter().map(|&t| MomentParams::new(1, 1.0, gamma, t)).collect();
    let two = dual_moment_grid(&low, &grid, &Replication::new(501, 200_000))?;
    let increasing = two.windows(2).all(|w| w[1].lambda_hat > w[0].lambda_hat);
    let last = two.last().unwrap();
    let below = last.lambda_hat <= gamma + 3.0 * last.lambda_std_error;

    let high = DualSetup { kernel: make_simple_random_walk(5)?, lattice: Lattice::Free(5), rho, warmup: 16.0 };
    let grid = [MomentParams::new(1, 0.0, gamma, 4.0), MomentParams::new(1, 16.0, gamma, 4.0)];
    let five = dual_moment_grid(&high, &grid, &Replication::new(502, 100_000))?;
    let (l0, l16) = (&five[0], &five[1]);
    let separated = l16.lambda_hat + Z95 * l16.lambda_std_error < l0.lambda_hat - Z95 * l0.lambda_std_error;
    let width = 0.2 * (gamma - rho * gamma);
    let (lo, hi) = (rho * gamma - 0.2 * width, rho * gamma + 1.2 * width);
    let in_band = (lo..=hi).contains(&l16.lambda_hat);
    let detail = format!(
        "d=2 Lambda(1,2,4)=({:.4}, {:.4}, {:.4}); d=5 lambda(0)={:.4} lambda(16)={:.4} band [{lo:.3}, {hi:.3}]",
        two[0].lambda_hat, two[1].lambda_hat, two[2].lambda_hat, l0.lambda_hat, l16.lambda_hat
    );
    reports.extend(two);
    reports.extend(five);
    Ok((increasing && below && separated && in_band, detail))
}

fn clumping(reports: &mut Vec<MomentReport>) -> Check {
    let setup = DualSetup { kernel: make_simple_random_walk(5)?, lattice: Lattice::Free(5), rho: 0.5, warmup: 16.0 };
    let r = dual_moment_grid(&setup, &[MomentParams::new(1, 0.0, 1.0, 4.0)], &Replication::new(601, 1_000_000))?;
    let r = r.into_iter().next().unwrap();
    let check = clumping_check_value(r.lambda_hat, r.lambda_std_error, 0.5, 1.0, 0.1);
    let excl = gap_excludes_zero(check.statistic, r.lambda_std_error);
    let detail = format!("gap {:.5} +- {:.1e} vs {:.5}", check.statistic, r.lambda_std_error, check.bound);
    reports.push(r);
    Ok((check.passed && excl, detail))
}

fn analytic_suite() -> Check {
    let mut fails = Vec::new();
    if rate_function_i(1.0)? != 0.0 || rate_function_i(std::f64::consts::E)? != 1.0 {
        fails.push("rate function".to_string());
    }
    let deltas: Vec<f64> = (2..=16).map(|k| delta_of_k(k as f64)).collect::<Result<_, _>>()?;
    if !deltas.windows(2).all(|w| w[1] < w[0]) || deltas[14] / deltas[0] >= 1e-3 {
        fails.push(format!("delta(2)={} delta(16)={}", deltas[0], deltas[14]));
    }
    let srw5 = make_simple_random_walk(5)?;
    let base = green_constants_with(&srw5, &QuadratureOptions::fast())?;
    let fine = green_constants_with(&srw5, &QuadratureOptions::fast().with_nodes(12))?;
    if (base.g - fine.g).abs() > 1e-6 || (base.g_star - fine.g_star).abs() > 1e-6 {
        fails.push(format!("green {base:?} vs {fine:?}"));
    }
    for d in 1..=4 {
        let r = green_constants(&make_simple_random_walk(d)?);
        let expected = match (d, &r) {
            (1 | 2, Err(Error::RecurrentKernel(_))) => true,
            (3 | 4, Err(Error::NotStronglyTransient(_))) => true,
            _ => false,
        };
        if !expected {
            fails.push(format!("d={d} gave {r:?}"));
        }
    }
    for d in 1..=5 {
        if dirichlet_eigenvalue(&BoxRegion::singleton(d), 0.7)? != -2.0 * d as f64 * 0.7 {
            fails.push(format!("singleton eigenvalue d={d}"));
        }
    }
    let detail = if fails.is_empty() { format!("G5={:.7} G5*={:.7}", base.g, base.g_star) } else { fails.join("; ") };
    Ok((fails.is_empty(), detail))
}

fn polaron() -> Check {
    let sol = solve_p5(&PolaronOptions::default())?;
    // dilating by λ maps the grid of radius R onto radius R/λ with values
    // scaled by λ^{5/2}
    let f = &sol.profile;
    let lam = sol.best_dilation;
    let dilated_grid = RadialGrid::new(f.len(), f.radius / lam)?;
    let dilated = RadialProfile::new(f.radius / lam, f.values.iter().map(|v| v * lam.powf(2.5)).collect())?;
    let at_optimum = dilated_grid.functional(&dilated)?;
    let consistent = (at_optimum - sol.lower_bound).abs() <= 1e-8 * sol.lower_bound;

    let grid = RadialGrid::new(512, 10.0)?;
    let dirichlet = grid.dirichlet_energy(&RadialProfile::gaussian(512, 10.0, 1.0)?)?;
    let ok = sol.lower_bound > 0.0 && consistent && sol.lower_bound >= sol.gaussian_value && (dirichlet - 2.5).abs() <= 1e-4;
    Ok((
        ok,
        format!(
            "P5 >= {:.6e} (gaussian {:.6e}), F at optimal dilation {:.6e}, gaussian Dirichlet {dirichlet:.7}",
            sol.lower_bound, sol.gaussian_value, at_optimum
        ),
    ))
}

fn bound_suite() -> Check {
    let kernel = make_simple_random_walk(5)?;
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, k) in [3.0, 6.0].into_iter().enumerate() {
        let r = k_good_deficiency(&kernel, k, 32, &Replication::new(901 + i as u64, 20_000))?;
        ok &= r.passes;
        notes.push(format!("K={k}: {:.4} vs delta {:.4}", r.deficiency.p_hat, r.delta));
    }
    let meeting = meeting_probability(&kernel, &[1.0, 2.0, 4.0, 8.0, 16.0], 8.0, 64.0, &Replication::new(903, 50_000))?;
    ok &= meeting.decay_exponent >= 1.0;
    notes.push(format!("meeting exponent {:.3}", meeting.decay_exponent));
    let c_eps = calibrate_c_epsilon(&meeting, 0.25);
    for (i, sizes) in [&[2][..], &[2, 2], &[2, 2, 1]].iter().enumerate() {
        let cfg = BlockConfig { c_epsilon: c_eps, ..BlockConfig::evenly_spaced(5, sizes, 0.5, 4.0) };
        let r = block_inequality_check(&kernel, &cfg, 32.0, &Replication::new(904 + i as u64, 20_000))?;
        ok &= r.passes;
        notes.push(format!("blocks {sizes:?}: {:.4} <= {:.4}", r.lhs.mean, r.rhs));
    }
    Ok((ok, notes.join("; ")))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("catalyst-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn reproducibility() -> Check {
    let runs = [
        ExperimentConfig { master_seed: Some(11), replicas: Some(5_000), ..ExperimentConfig::new("moment") }
            .with_param("mode", "direct")
            .with_param("L", 16)
            .with_param("p", 2)
            .with_param("emit_csv", true),
        ExperimentConfig { master_seed: Some(12), replicas: Some(5_000), ..ExperimentConfig::new("lyapunov-scan") }
            .with_param("dim", 5),
        ExperimentConfig { master_seed: Some(13), replicas: Some(2_000), ..ExperimentConfig::new("voter-occupation") },
        ExperimentConfig { master_seed: Some(14), replicas: Some(2_000), ..ExperimentConfig::new("block-check") },
    ];
    let mut ok = true;
    let mut compared = 0;
    for cfg in runs {
        let mut digests = Vec::new();
        for workers in [1, 3] {
            let dir = scratch(&format!("{}-{workers}", cfg.experiment));
            let r = run_experiment(&ExperimentConfig { workers, out_dir: Some(dir.clone()), ..cfg.clone() })
                .map_err(|e| Error::Config(e.to_string()))?;
            let mut files = Vec::new();
            for a in &r.manifest.artifacts {
                files.push((a.path.clone(), std::fs::read(dir.join(&a.path))?));
            }
            digests.push(files);
            let _ = std::fs::remove_dir_all(&dir);
        }
        ok &= !digests[0].is_empty() && digests[0] == digests[1];
        compared += digests[0].len();
    }
    Ok((ok, format!("{compared} csv files compared for workers 1 vs 3")))
}

fn main() {
    let mut out = Outcome { failed: Vec::new(), warned: Vec::new() };
    let mut reports = Vec::new();
    out.record(1, "duality oracle", false, duality_oracle);
    out.record(2, "direct vs dual moments", false, || representation_oracle(&mut reports));
    out.record(4, "pair correlation", false, pair_correlation_oracle);
    out.record(5, "dichotomy trend", true, || dichotomy_trend(&mut reports));
    out.record(6, "clumping", false, || clumping(&mut reports));
    out.record(3, "sandwich and monotonicity", false, || {
        let checks = hard_checks(&reports);
        let bad: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.detail.clone()).collect();
        Ok((bad.is_empty(), format!("{} checks over {} reports {bad:?}", checks.len(), reports.len())))
    });
    out.record(7, "analytic formulas", false, analytic_suite);
    out.record(8, "polaron", false, polaron);
    out.record(9, "bound suite", false, bound_suite);
    out.record(10, "reproducibility", false, reproducibility);
    if !out.warned.is_empty() {
        println!("warnings: criteria {:?}", out.warned);
    }
    if !out.failed.is_empty() {
        println!("failed: criteria {:?}", out.failed);
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
