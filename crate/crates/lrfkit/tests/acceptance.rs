//! Acceptance gate: one pass/fail line per criterion, all tolerances pinned
//! here. Run with `cargo test --test acceptance -- --nocapture` to see every
//! line even when all criteria pass.

use lrfkit::analysis::locality_fraction;
use lrfkit::attention::{lrf_effective_score_matrix, ssa_score_matrix, LrfConfig};
use lrfkit::neuron::SurrogateSpec;
use lrfkit::synth::{random_lrf_config, random_spikes};
use lrfkit::tensor::{Shape4, TokenGrid};
use lrfkit::train::{
    grad_check, max_smoothed_tail_rise, train_toy, ModelKind, ToyModel, ToyTask, TrainConfig,
};
use lrfkit::verify::{
    causal_decomposition_check, closed_form_mu_check, membench_suite, scan_fft_duality_check,
    ssa_associativity_check, theorem1_grid_check, theorem2_grid_check, CheckResult,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

const GRAD_TOL: f64 = 1e-4;
const TRAIN_ACC_MIN: f64 = 0.90;
/// Absolute slack on the window-5 smoothed-loss rise over the final 80% of
/// epochs; fixed-rate SGD with momentum carries irreducible jitter at this
/// scale even on runs that converge cleanly.
const LOSS_RISE_TOL: f64 = 5e-3;
const LOCALITY_RADIUS: usize = 4;
const LOCALITY_MIN_WINS: usize = 95;

struct Criterion {
    label: &'static str,
    passed: bool,
    detail: String,
}

fn from_check(label: &'static str, r: CheckResult, budget: Duration, elapsed: Duration) -> Criterion {
    let within = elapsed <= budget;
    Criterion {
        label,
        passed: r.passed && within,
        detail: format!(
            "{} (residual {:.2e} vs tol {:.1e}, {:.1}s)",
            r.detail,
            r.residual,
            r.tolerance,
            elapsed.as_secs_f64()
        ),
    }
}

fn criterion_1() -> Criterion {
    let t0 = Instant::now();
    let r = ssa_associativity_check();
    from_check("associativity equivalence", r, Duration::from_secs(5), t0.elapsed())
}

fn criterion_2() -> Criterion {
    let t0 = Instant::now();
    let r = causal_decomposition_check();
    from_check("causal decomposition", r, Duration::from_secs(5), t0.elapsed())
}

fn criterion_3() -> Criterion {
    let t0 = Instant::now();
    let r = scan_fft_duality_check(None);
    from_check("scan/FFT duality", r, Duration::from_secs(30), t0.elapsed())
}

fn criterion_4() -> Criterion {
    let t0 = Instant::now();
    let r = theorem1_grid_check();
    from_check("receptive-radius ordering grid", r, Duration::from_secs(60), t0.elapsed())
}

fn criterion_5() -> Criterion {
    let t0 = Instant::now();
    let r = theorem2_grid_check();
    from_check("entropy bound grid", r, Duration::from_secs(60), t0.elapsed())
}

fn criterion_6() -> Criterion {
    let t0 = Instant::now();
    let r = closed_form_mu_check();
    from_check("closed-form radius vs series", r, Duration::from_secs(30), t0.elapsed())
}

fn criterion_7() -> Criterion {
    let t0 = Instant::now();
    let results = membench_suite();
    let elapsed = t0.elapsed();
    let passed = results.iter().all(|r| r.passed);
    let detail = results
        .iter()
        .map(|r| format!("{}: {}", r.name, if r.passed { "ok" } else { "FAIL" }))
        .collect::<Vec<_>>()
        .join("; ");
    Criterion {
        label: "memory hierarchy",
        passed,
        detail: format!("{detail} ({:.1}s)", elapsed.as_secs_f64()),
    }
}

fn criterion_8() -> Criterion {
    let t0 = Instant::now();
    let task = ToyTask {
        grid: TokenGrid::new(4, 4).unwrap(),
        d_embed: 8,
        ..ToyTask::default()
    };
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..5u64 {
        let sample = task.sample(seed as usize * 7);
        for kind in [ModelKind::Ssa, ModelKind::LrfSsa, ModelKind::LrfDyn] {
            let model = ToyModel::new(kind, &task, 2, SurrogateSpec::default(), seed)
                .unwrap()
                .with_smooth(true);
            let err = grad_check(&model, &sample, 1e-5, seed).unwrap();
            worst = worst.max(err);
            if err > GRAD_TOL {
                failures.push(format!("{kind:?} seed {seed}: {err:.2e}"));
            }
        }
    }
    let elapsed = t0.elapsed();
    Criterion {
        label: "gradient verification",
        passed: failures.is_empty() && elapsed <= Duration::from_secs(60),
        detail: format!(
            "max rel error {worst:.2e} vs tol {GRAD_TOL:.0e} over 5 seeds x 3 kinds ({:.1}s){}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    }
}

fn criterion_9() -> Criterion {
    let task = ToyTask::default();
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for kind in [ModelKind::LrfDyn, ModelKind::LrfSsa] {
        for seed in 0..3u64 {
            let cfg = TrainConfig { seed, ..TrainConfig::default() };
            let t0 = Instant::now();
            match train_toy(&task, kind, &cfg) {
                Ok(out) => {
                    let elapsed = t0.elapsed();
                    let acc = out.log.last().map(|e| e.test_acc).unwrap_or(0.0);
                    let losses: Vec<f64> = out.log.iter().map(|e| e.train_loss).collect();
                    let rise = max_smoothed_tail_rise(&losses, 5, 0.8);
                    summary.push(format!("{kind:?}/{seed}: acc {acc:.3} rise {rise:.1e}"));
                    if acc < TRAIN_ACC_MIN {
                        failures.push(format!("{kind:?} seed {seed}: acc {acc:.3} < {TRAIN_ACC_MIN}"));
                    }
                    if rise > LOSS_RISE_TOL {
                        failures.push(format!("{kind:?} seed {seed}: smoothed rise {rise:.2e} > {LOSS_RISE_TOL:.0e}"));
                    }
                    if elapsed > Duration::from_secs(120) {
                        failures.push(format!("{kind:?} seed {seed}: {:.0}s > 120s", elapsed.as_secs_f64()));
                    }
                }
                Err(e) => failures.push(format!("{kind:?} seed {seed}: {e}")),
            }
        }
    }
    Criterion {
        label: "training convergence",
        passed: failures.is_empty(),
        detail: if failures.is_empty() { summary.join("; ") } else { failures.join("; ") },
    }
}

fn criterion_10() -> Criterion {
    let t0 = Instant::now();
    let grid = TokenGrid::new(8, 8).unwrap();
    let d = 16;
    let shape = Shape4::new(1, 1, grid.len(), d).unwrap();
    let mut wins = 0;
    let mut valid = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_spikes(&mut rng, shape, 0.3);
        let k = random_spikes(&mut rng, shape, 0.3);
        let cfg = random_lrf_config(&mut rng, vec![1, 2], LrfConfig::default_scale(d), d);
        let ssa = ssa_score_matrix(&q, &k, cfg.scale, 0, 0);
        let lrf = lrf_effective_score_matrix(&q, &k, &grid, &cfg, 0, 0);
        let (Ok(f_ssa), Ok(f_lrf)) = (
            locality_fraction(&ssa, &grid, LOCALITY_RADIUS),
            locality_fraction(&lrf, &grid, LOCALITY_RADIUS),
        ) else {
            continue;
        };
        valid += 1;
        if f_lrf > f_ssa {
            wins += 1;
        }
    }
    Criterion {
        label: "locality statistic",
        passed: wins >= LOCALITY_MIN_WINS && valid == 100,
        detail: format!(
            "local-mass fraction higher for LRF-SSA in {wins}/100 seeds (need >= {LOCALITY_MIN_WINS}, {} valid, {:.1}s)",
            valid,
            t0.elapsed().as_secs_f64()
        ),
    }
}

#[test]
fn acceptance() {
    let criteria = [
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ];
    let mut failed = Vec::new();
    for (i, c) in criteria.iter().enumerate() {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("criterion {:2} [{verdict}] {} — {}", i + 1, c.label, c.detail);
        if !c.passed {
            failed.push(format!("{} ({})", i + 1, c.label));
        }
    }
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
