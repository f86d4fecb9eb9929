//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 4`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ofo_recsys::baselines::MethodKind;
use ofo_recsys::controller::{analytic_ctr_gradient, grad_ctr_forward_diff, ClickSurrogate};
use ofo_recsys::estimators::bank::{clicking_architecture, opinion_architecture};
use ofo_recsys::estimators::Mlp;
use ofo_recsys::filter::SensitivityFilter;
use ofo_recsys::harness::{
    generate_scenario, prepare_trials, run_monte_carlo_on, sweep_gamma_on, ExperimentConfig,
    MonteCarloResult, PreparedTrial, ScenarioConfig, SweepResult,
};
use ofo_recsys::metrics::{sensitivity_rel_error, sign_test_p_value, summarize};
use ofo_recsys::platform::{fj_step, fj_steady_state, fj_true_sensitivity, ClickBehaviour, ClickModel};

const SEED: u64 = 7;
/// Slack allowed when comparing the oracle's mean final residual with the
/// full algorithm's.
const ORDERING_TOLERANCE: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn desk_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default().desk_scale();
    c.experiment.master_seed = SEED;
    c
}

fn desk_trials() -> &'static [PreparedTrial] {
    static TRIALS: OnceLock<Vec<PreparedTrial>> = OnceLock::new();
    TRIALS.get_or_init(|| prepare_trials(&desk_config(), true, None).expect("desk trials"))
}

fn desk_compare() -> &'static MonteCarloResult {
    static RUNS: OnceLock<MonteCarloResult> = OnceLock::new();
    RUNS.get_or_init(|| {
        let config = desk_config();
        run_monte_carlo_on(&config, desk_trials(), &MethodKind::ALL).expect("desk comparison")
    })
}

fn per_trial(mc: &MonteCarloResult, method: MethodKind, f: impl Fn(&ofo_recsys::harness::TrialResult) -> f64) -> Vec<f64> {
    mc.for_method(method).map(f).collect()
}

fn mean(v: &[f64]) -> f64 {
    summarize(v).mean
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst_bound, mut worst_fixed, mut worst_sens) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..=15);
        let cfg = ScenarioConfig {
            n,
            behaviour_split: n / 2,
            ..ScenarioConfig::default()
        };
        let platform = generate_scenario(&cfg, &mut rng).expect("scenario");
        let params = &platform.params;
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let p = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let next = fj_step(&x, &p, params).unwrap();
        worst_bound = worst_bound.max(next.amax() - 1.0);
        let star = fj_steady_state(&p, params).unwrap();
        worst_fixed = worst_fixed.max((fj_step(&star, &p, params).unwrap() - &star).amax());
        let h = fj_true_sensitivity(params).unwrap();
        let step = 1e-4;
        for j in 0..n {
            let mut up = p.clone();
            up[j] += step;
            let mut down = p.clone();
            down[j] -= step;
            let col = (fj_steady_state(&up, params).unwrap() - fj_steady_state(&down, params).unwrap()) / (2.0 * step);
            worst_sens = worst_sens.max((col - h.column(j)).amax());
        }
    }
    verdict(
        worst_bound <= 0.0 && worst_fixed <= 1e-10 && worst_sens <= 1e-6,
        format!("max |x'| - 1 = {worst_bound:.1e}, fixed-point residual {worst_fixed:.1e}, sensitivity vs central differences {worst_sens:.1e}"),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for sizes in [opinion_architecture(15), clicking_architecture()] {
        for _ in 0..20 {
            let net = Mlp::random(&sizes, &mut rng).unwrap();
            let inputs: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let targets: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
            let (_, grad) = net.loss_and_gradient(&inputs, &targets);
            let analytic: Vec<f64> = grad
                .weights
                .iter()
                .zip(&grad.biases)
                .flat_map(|(w, b)| w.iter().chain(b).copied())
                .collect();
            let step = 1e-6;
            let (mut diff, mut norm) = (0.0, 0.0);
            for (k, g) in analytic.iter().enumerate() {
                let mut plus = net.clone();
                *plus.parameters_mut().nth(k).unwrap() += step;
                let mut minus = net.clone();
                *minus.parameters_mut().nth(k).unwrap() -= step;
                let fd = (plus.mse(&inputs, &targets) - minus.mse(&inputs, &targets)) / (2.0 * step);
                diff += (fd - g) * (fd - g);
                norm += fd * fd;
            }
            worst = worst.max((diff / norm).sqrt());
        }
    }
    verdict(worst <= 1e-4, format!("worst relative gradient error {worst:.2e} over 40 nets"))
}

fn criterion_3() -> Verdict {
    let mut scalar = SensitivityFilter::with_state(
        DVector::from_element(1, 0.5),
        DMatrix::from_element(1, 1, 1.0),
        0.1,
        1.0,
        10.0,
    )
    .unwrap();
    scalar
        .kf_update(&DVector::from_element(1, 0.8), &DVector::from_element(1, 1.0))
        .unwrap();
    let ell = scalar.ell_hat()[0];
    let cov = scalar.covariance()[(0, 0)];
    let scalar_ok = (ell - 0.65).abs() <= 1e-12 && (cov - 0.51).abs() <= 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let cfg = ScenarioConfig {
        n: 5,
        behaviour_split: 2,
        ..ScenarioConfig::default()
    };
    let platform = generate_scenario(&cfg, &mut rng).unwrap();
    let h = fj_true_sensitivity(&platform.params).unwrap();
    let (mut decreased, mut small) = (0, 0);
    let runs = 20;
    for run in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + run);
        let mut f = SensitivityFilter::new(5, 10.0).unwrap();
        let mut first = f64::NAN;
        let mut last = f64::NAN;
        let mut p = DVector::from_fn(5, |_, _| rng.random_range(-0.5..0.5));
        let mut x = fj_steady_state(&p, &platform.params).unwrap();
        for update in 1..=50 {
            // Increments measured on the plant itself: steady states before
            // and after a Gaussian change of the positions.
            let dp = DVector::from_fn(5, |_, _| 0.07 * rng.sample::<f64, _>(StandardNormal));
            p += &dp;
            let next = fj_steady_state(&p, &platform.params).unwrap();
            f.observe(&(&next - &x), &dp).unwrap();
            x = next;
            let err = sensitivity_rel_error(&f.sensitivity(), &h).unwrap();
            if update == 1 {
                first = err;
            }
            last = err;
        }
        decreased += usize::from(last < first);
        small += usize::from(last < 0.2);
    }
    let pass = scalar_ok && decreased * 100 >= 95 * runs as usize && small * 100 >= 80 * runs as usize;
    verdict(
        pass,
        format!("scalar case l' = {ell}, S' = {cov}; error fell in {decreased}/{runs} runs, below 0.2 in {small}/{runs}"),
    )
}

/// `g_i = 0.3 + a_i p^2 + b_i x^2 + c_i p x`: the curvature of `-sum g` along
/// `p_i` is `2 a_i` and along `x_i` is `2 b_i`.
struct Quadratic {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl ClickSurrogate for Quadratic {
    fn users(&self) -> usize {
        self.a.len()
    }

    fn raw(&self, i: usize, p: f64, x: f64) -> f64 {
        0.3 + self.a[i] * p * p + self.b[i] * x * x + self.c[i] * p * x
    }
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let n = 6;
    let extremity = ClickModel(vec![ClickBehaviour::ExtremityBias; n]);
    let quad = Quadratic {
        a: (0..n).map(|_| rng.random_range(-0.2..0.2)).collect(),
        b: (0..n).map(|_| rng.random_range(-0.2..0.2)).collect(),
        c: (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(),
    };
    let (mut bilinear_err, mut excess) = (0.0f64, f64::NEG_INFINITY);
    for mu in [0.2, 0.1, 0.05] {
        for _ in 0..100 {
            let p = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
            let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
            let (fp, fx) = grad_ctr_forward_diff(&extremity, &p, &x, mu);
            let (ap, ax) = analytic_ctr_gradient(&extremity, &p, &x);
            bilinear_err = bilinear_err.max((fp - ap).amax()).max((fx - ax).amax());
            let (qp, qx) = grad_ctr_forward_diff(&quad, &p, &x, mu);
            for i in 0..n {
                let exact_p = -(2.0 * quad.a[i] * p[i] + quad.c[i] * x[i]);
                let exact_x = -(2.0 * quad.b[i] * x[i] + quad.c[i] * p[i]);
                let bound_p = 0.5 * (2.0 * quad.a[i].abs()) * mu;
                let bound_x = 0.5 * (2.0 * quad.b[i].abs()) * mu;
                excess = excess
                    .max((qp[i] - exact_p).abs() - bound_p)
                    .max((qx[i] - exact_x).abs() - bound_x);
            }
        }
    }
    verdict(
        bilinear_err <= 1e-9 && excess <= 1e-9,
        format!("bilinear error {bilinear_err:.1e}; quadratic error minus bound at most {excess:.1e}"),
    )
}

fn criterion_5() -> Verdict {
    let mc = desk_compare();
    let first = mean(&per_trial(mc, MethodKind::M1, |r| r.initial_residual_sq));
    let last = mean(&per_trial(mc, MethodKind::M1, |r| r.final_residual_sq));
    verdict(
        last <= 0.1 * first,
        format!("M1 mean residual {first:.4} -> {last:.4} ({:.1}% of initial)", 100.0 * last / first),
    )
}

fn criterion_6() -> Verdict {
    let mc = desk_compare();
    let m1 = mean(&per_trial(mc, MethodKind::M1, |r| r.final_residual_sq));
    let m4 = mean(&per_trial(mc, MethodKind::M4, |r| r.final_residual_sq));
    let mut pass = m1 <= m4 + ORDERING_TOLERANCE;
    let mut shares = Vec::new();
    for method in [MethodKind::M1, MethodKind::M2, MethodKind::M3, MethodKind::M4] {
        let flags = per_trial(mc, method, |r| f64::from(u8::from(r.final_residual_sq < r.initial_residual_sq)));
        let share = mean(&flags);
        pass &= share >= 0.8;
        shares.push(format!("{method} {:.0}%", 100.0 * share));
    }
    verdict(
        pass,
        format!("mean final residual M1 {m1:.4} vs M4 {m4:.4} (tolerance {ORDERING_TOLERANCE}); decreasing: {}", shares.join(", ")),
    )
}

fn criterion_7() -> Verdict {
    let mc = desk_compare();
    let full = per_trial(mc, MethodKind::M4, |r| r.final_pol_cost);
    let naive = per_trial(mc, MethodKind::Naive, |r| r.final_pol_cost);
    let wins = full.iter().zip(&naive).filter(|(f, n)| f < n).count();
    let p = sign_test_p_value(wins, full.len());
    let (pf, pn) = (mean(&full), mean(&naive));
    let jf = mean(&per_trial(mc, MethodKind::M4, |r| r.final_ctr));
    let jn = mean(&per_trial(mc, MethodKind::Naive, |r| r.final_ctr));
    let ratio = jf / jn;
    verdict(
        pf < pn && p < 0.1 && (ratio - 1.0).abs() <= 0.05,
        format!(
            "polarization M4 {pf:.4} vs naive {pn:.4}, M4 lower in {wins}/{} trials (sign test p = {p:.3}); J M4 {jf:.4} vs naive {jn:.4} ({:+.1}%)",
            full.len(),
            100.0 * (ratio - 1.0)
        ),
    )
}

fn criterion_8() -> Verdict {
    let mc = desk_compare();
    let pe = mean(&per_trial(mc, MethodKind::Extreme, |r| r.final_pol_cost));
    let pf = mean(&per_trial(mc, MethodKind::M4, |r| r.final_pol_cost));
    let je = mean(&per_trial(mc, MethodKind::Extreme, |r| r.final_ctr));
    let jf = mean(&per_trial(mc, MethodKind::M4, |r| r.final_ctr));
    verdict(
        pe > pf && je <= jf,
        format!("polarization extreme {pe:.4} vs M4 {pf:.4}; J extreme {je:.4} vs M4 {jf:.4}"),
    )
}

fn criterion_9() -> Verdict {
    let config = desk_config();
    let gammas = [0.0, 0.5, 1.0, 2.0];
    let sweep: SweepResult = sweep_gamma_on(&config, &gammas, desk_trials(), &[MethodKind::M4]).expect("sweep");
    let rows: Vec<_> = gammas
        .iter()
        .map(|g| sweep.rows.iter().find(|r| r.gamma == *g).expect("row per gamma"))
        .collect();
    let mut inversions = 0;
    let mut within_se = true;
    for w in rows.windows(2) {
        let rise = w[1].pol_cost.mean - w[0].pol_cost.mean;
        if rise > 0.0 {
            inversions += 1;
            within_se &= rise <= w[0].pol_cost.sem().max(w[1].pol_cost.sem());
        }
    }
    let means: Vec<String> = rows
        .iter()
        .map(|r| format!("{}: {:.4}±{:.4}", r.gamma, r.pol_cost.mean, r.pol_cost.sem()))
        .collect();
    verdict(
        inversions == 0 || (inversions == 1 && within_se),
        format!("M4 polarization by gamma {} ({inversions} inversions)", means.join(", ")),
    )
}

fn criterion_10() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_ofo-recsys");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(bin)
            .args(["compare", "--seed", "7", "--desk-scale", "--out"])
            .arg(d.path())
            .output()
            .expect("run CLI");
        if !status.status.success() {
            return verdict(false, format!("compare failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
    }
    let files = csv_files(dirs[0].path());
    let mut differing = Vec::new();
    for name in &files {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).ok();
        if b.as_deref() != Some(a.as_slice()) {
            differing.push(name.clone());
        }
    }
    let same_set = files == csv_files(dirs[1].path());
    verdict(
        !files.is_empty() && same_set && differing.is_empty(),
        format!("{} CSV files compared, {} differ {:?}", files.len(), differing.len(), differing),
    )
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

type Criterion = (u32, &'static str, Duration, fn() -> Verdict);

fn main() -> ExitCode {
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let criteria: [Criterion; 10] = [
        (1, "plant correctness", Duration::from_secs(5), criterion_1),
        (2, "MLP backprop", Duration::from_secs(10), criterion_2),
        (3, "Kalman oracle and convergence", minutes(1), criterion_3),
        (4, "forward-difference gradient bound", Duration::from_secs(5), criterion_4),
        (5, "oracle convergence", minutes(3), criterion_5),
        (6, "method ordering", minutes(15), criterion_6),
        (7, "network awareness", minutes(20), criterion_7),
        (8, "extreme-position baseline", minutes(20), criterion_8),
        (9, "gamma sweep", minutes(20), criterion_9),
        (10, "determinism", minutes(20), criterion_10),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {:<4} {name}: {} [{:.1} s, limit {} s{}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", too slow" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
