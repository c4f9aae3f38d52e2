//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fail.

use std::path::Path;
use std::process::Command;

use confact::harness::{
    calibration_size_study, evaluate_claim_metrics, random_filter_baseline, run_split_experiment, sweep,
    EvaluationReport, Execution, Method, SplitPlan,
};
use confact::sim::{generate, verify_theorem, GeneratorConfig, TheoremCheck};
use confact::{
    brute_force_conformity, calibrate, conformity_score, response_loss, ClaimAnnotation, ClaimLoss, ClaimRecord,
    FilteredResponse, LossSpec, ResponseRecord,
};
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn scene() -> LossSpec {
    LossSpec::preset("scene").unwrap()
}

fn simulator_dataset(n: usize, seed: u64) -> Vec<ResponseRecord<f64>> {
    let cfg = GeneratorConfig {
        n_responses: n,
        seed,
        ..Default::default()
    };
    generate(&cfg, &scene()).unwrap()
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Coverage sandwich at n_calib = 400 for alpha in {0.1, 0.2, 0.3}.
fn theorem_sandwich() -> Outcome {
    let cfg = GeneratorConfig {
        seed: 101,
        ..Default::default()
    };
    let mut details = Vec::new();
    let mut ok = true;
    for alpha in [0.1, 0.2, 0.3] {
        let r = verify_theorem::<f64>(&cfg, &TheoremCheck::new(alpha, 0.0, 400, 100, 1000), &scene())
            .map_err(|e| e.to_string())?;
        let slack = 4.0 * r.std_error;
        let inside = r.mean_coverage >= 1.0 - alpha - slack && r.mean_coverage <= 1.0 - alpha + 1.0 / 401.0 + slack;
        ok &= inside && r.pass && r.n_trials >= 1000;
        details.push(format!(
            "alpha={alpha}: {:.4}±{:.4} in [{:.4},{:.4}]",
            r.mean_coverage, r.std_error, r.lower_bound, r.upper_bound
        ));
    }
    check(ok, details.join("; "))
}

fn small_n_sandwich() -> Outcome {
    let cfg = GeneratorConfig {
        seed: 202,
        ..Default::default()
    };
    let r = verify_theorem::<f64>(&cfg, &TheoremCheck::new(0.3, 0.0, 20, 100, 5000), &scene())
        .map_err(|e| e.to_string())?;
    let slack = 4.0 * r.std_error;
    let (lo, hi) = (0.70, 0.70 + 1.0 / 21.0);
    check(
        r.mean_coverage >= lo - slack && r.mean_coverage <= hi + slack,
        format!(
            "n=20 alpha=0.3: {:.4}±{:.4} in [{lo:.4},{hi:.4}] ± 4SE",
            r.mean_coverage, r.std_error
        ),
    )
}

fn random_response(rng: &mut impl Rng, tied: bool) -> ResponseRecord<f64> {
    const TYPES: [&str; 5] = ["Object", "Attribute", "Spatial", "Interaction", "Quantitative"];
    let n = rng.random_range(0..=8);
    let claims = (0..n)
        .map(|j| {
            let score = if tied {
                rng.random_range(0..4) as f64 * 0.25
            } else {
                rng.random_range(-3.0..3.0)
            };
            let n_err = if rng.random_bool(0.5) { 0 } else { rng.random_range(1..=2) };
            let errs: Vec<&str> = (0..n_err).map(|_| TYPES[rng.random_range(0..5)]).collect();
            ClaimRecord::new(format!("c{j}"), "x")
                .with_score("s", score)
                .with_annotation(ClaimAnnotation::with_errors(errs))
        })
        .collect();
    ResponseRecord::new("r").with_claims(claims)
}

fn oracle_equivalence() -> Outcome {
    let spec = scene();
    let mut rng = rand::rngs::StdRng::seed_from_u64(303);
    let mut agree = 0;
    let total = 10_000;
    for i in 0..total {
        let r = random_response(&mut rng, i % 2 == 0);
        let lambda = (i % 4) as f64;
        let fast = conformity_score(&r, lambda, "s", &spec).map_err(|e| e.to_string())?;
        let brute = brute_force_conformity(&r, lambda, "s", &spec).map_err(|e| e.to_string())?;
        agree += usize::from(fast == brute);
    }
    check(agree == total, format!("{agree}/{total} agree (ties in half, lambda in 0..=3)"))
}

fn baseline_reproduction() -> Outcome {
    let spec = scene();
    // Vanilla through the harness.
    let data = simulator_dataset(1000, 404);
    let plan = SplitPlan {
        n_splits: 20,
        ..Default::default()
    };
    let vanilla = run_split_experiment(&data, &plan, 0.1, 0.0, "score", &spec, Method::Vanilla, Execution::Parallel)
        .map_err(|e| e.to_string())?;
    let vanilla_zero = vanilla.splits.iter().all(|s| s.tpr == 0.0 && s.f1 == 0.0);

    // Random filtering over many erroneous claims.
    let cfg = GeneratorConfig {
        n_responses: 3000,
        error_prob: 0.5,
        seed: 405,
        ..Default::default()
    };
    let recs = generate::<f64>(&cfg, &spec).map_err(|e| e.to_string())?;
    let filtered: Vec<FilteredResponse<f64>> = recs
        .iter()
        .enumerate()
        .map(|(i, r)| random_filter_baseline(r, 0.1, 9000 + i as u64).unwrap())
        .collect();
    let erroneous: usize = recs
        .iter()
        .flat_map(|r| &r.claims)
        .filter(|c| c.loss(&spec).unwrap().value() > 0)
        .count();
    let m = evaluate_claim_metrics(&recs, &filtered, &spec).map_err(|e| e.to_string())?;
    let identity: Vec<_> = recs.iter().map(|r| FilteredResponse::from_mask(r, &vec![true; r.claims.len()])).collect();
    let vm = evaluate_claim_metrics(&recs, &identity, &spec).map_err(|e| e.to_string())?;
    check(
        vanilla_zero && vm.tpr == 0.0 && vm.f1 == 0.0 && erroneous >= 5000 && (m.tpr - 0.10).abs() <= 0.02,
        format!(
            "vanilla TPR={} F1={}; random TPR={:.4} over {erroneous} erroneous claims (target 0.10±0.02)",
            vm.tpr, vm.f1, m.tpr
        ),
    )
}

fn monotonicity_curves() -> Outcome {
    let spec = scene();
    let data = simulator_dataset(1000, 505);
    let plan = SplitPlan {
        n_splits: 50,
        seed: 5,
        ..Default::default()
    };
    let fields = ["score".to_string()];
    let alphas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let by_alpha = sweep(&data, &plan, &alphas, &[0.0], &fields, &spec, Method::Conformal, Execution::Parallel)
        .map_err(|e| e.to_string())?;
    // descending alpha = ascending desired coverage
    let fr: Vec<f64> = by_alpha.reports.iter().rev().map(|r| r.summary.filter_ratio.mean).collect();
    let ab: Vec<f64> = by_alpha.reports.iter().rev().map(|r| r.summary.abstention_rate.mean).collect();
    let up = |xs: &[f64]| xs.windows(2).all(|w| w[0] <= w[1]);
    let down = |xs: &[f64]| xs.windows(2).all(|w| w[0] >= w[1]);

    let lambdas = [0.0, 1.0, 2.0, 3.0, f64::INFINITY];
    let by_lambda = sweep(&data, &plan, &[0.1], &lambdas, &fields, &spec, Method::Conformal, Execution::Parallel)
        .map_err(|e| e.to_string())?;
    let lfr: Vec<f64> = by_lambda.reports.iter().map(|r| r.summary.filter_ratio.mean).collect();
    let lab: Vec<f64> = by_lambda.reports.iter().map(|r| r.summary.abstention_rate.mean).collect();
    let inf = by_lambda.reports.last().unwrap();
    let inf_vanilla = inf.splits.iter().all(|s| s.empirical_coverage == 1.0 && s.filter_ratio == 0.0);
    check(
        by_alpha.reports.len() == 9
            && up(&fr)
            && up(&ab)
            && down(&lfr)
            && down(&lab)
            && inf_vanilla
            && inf.summary.empirical_coverage.mean == 1.0
            && inf.summary.filter_ratio.mean == 0.0,
        format!(
            "filter_ratio vs 1-alpha {:.3?}; abstention {:.3?}; filter_ratio vs lambda {:.3?}; abstention {:.3?}; lambda=inf coverage={} filter_ratio={}",
            fr, ab, lfr, lab, inf.summary.empirical_coverage.mean, inf.summary.filter_ratio.mean
        ),
    )
}

fn calibration_size_invariance() -> Outcome {
    let spec = scene();
    let data = simulator_dataset(2000, 606);
    let plan = SplitPlan {
        n_test: 100,
        seed: 6,
        ..Default::default()
    };
    let rep = calibration_size_study(&data, &[50, 100, 200, 400], 200, &plan, 0.1, 0.0, "score", &spec, Execution::Parallel)
        .map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut details = Vec::new();
    for r in &rep.rows {
        let slack = 3.0 * r.std_error;
        ok &= r.repeats >= 200 && r.mean_coverage >= r.lower_bound - slack && r.mean_coverage <= r.upper_bound + slack;
        details.push(format!("n={}: {:.4}±{:.4}", r.n_calib, r.mean_coverage, r.std_error));
    }
    let se50 = rep.rows[0].std_error;
    let se400 = rep.rows[3].std_error;
    ok &= se50 > se400;
    check(ok, format!("{}; SE(50)={se50:.4} > SE(400)={se400:.4}", details.join("; ")))
}

fn loss_fidelity() -> Outcome {
    let tables: [(&str, &[(&str, u64)]); 3] = [
        (
            "scene",
            &[("Object", 3), ("Attribute", 1), ("Spatial", 1), ("Interaction", 1), ("Quantitative", 1)],
        ),
        ("medical", &[("Conflicting", 3), ("Implausible", 2), ("Plausible", 1)]),
        (
            "document",
            &[("Numerical", 3), ("Date", 3), ("Field", 2), ("Item", 2), ("Other", 1)],
        ),
    ];
    let mut ok = true;
    for (name, table) in tables {
        let spec = LossSpec::preset(name).unwrap();
        let got: Vec<(&str, u64)> = spec.weights().iter().map(|(t, w)| (t.as_str(), *w)).collect();
        ok &= got == table;
    }

    let mut rng = rand::rngs::StdRng::seed_from_u64(707);
    let mut monotone = 0;
    let pairs = 10_000;
    for i in 0..pairs {
        let (name, table) = tables[i % 3];
        let spec = LossSpec::preset(name).unwrap();
        let n = rng.random_range(0..=10);
        let losses: Vec<ClaimLoss> = (0..n)
            .map(|_| {
                let k = rng.random_range(0..=2);
                let errs: Vec<&str> = (0..k).map(|_| table[rng.random_range(0..table.len())].0).collect();
                confact::claim_loss(&ClaimAnnotation::with_errors(errs), &spec).unwrap()
            })
            .collect();
        let outer: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let inner: Vec<bool> = outer.iter().map(|&o| o && rng.random_bool(0.5)).collect();
        let pick = |m: &[bool]| losses.iter().zip(m).filter(|(_, &k)| k).map(|(l, _)| *l).collect::<Vec<_>>();
        monotone += usize::from(response_loss(pick(&inner)) <= response_loss(pick(&outer)));
    }
    check(
        ok && monotone == pairs,
        format!("presets match: {ok}; subset monotonicity {monotone}/{pairs}"),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_confact"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let records = p("records.jsonl");
    run_cli(&["simulate", "gen", "--n-responses", "800", "--seed", "17", "--out", &records])?;
    let eval = |out: &str, serial: bool| {
        let mut args = vec![
            "evaluate", "--records", &records, "--alpha", "0.1", "--lambda", "1", "--score-field", "score",
            "--splits", "30", "--calib-size", "300", "--test-size", "100", "--seed", "42", "--out-report", out,
        ];
        if serial {
            args.push("--serial");
        }
        run_cli(&args)
    };
    let (e1, e2, e3) = (p("e1.json"), p("e2.json"), p("e3.json"));
    eval(&e1, false)?;
    eval(&e2, false)?;
    eval(&e3, true)?;
    let sim = |out: &str| {
        run_cli(&[
            "simulate", "--alpha", "0.2", "--n-calib", "100", "--n-test", "50", "--trials", "300", "--seed", "9",
            "--out-report", out,
        ])
    };
    let (s1, s2) = (p("s1.json"), p("s2.json"));
    sim(&s1)?;
    sim(&s2)?;
    let evals_same = read(Path::new(&e1)) == read(Path::new(&e2));
    let parallel_serial = read(Path::new(&e1)) == read(Path::new(&e3));
    let sims_same = read(Path::new(&s1)) == read(Path::new(&s2));
    check(
        evals_same && parallel_serial && sims_same,
        format!("evaluate x2 identical: {evals_same}; parallel == serial: {parallel_serial}; simulate x2 identical: {sims_same}"),
    )
}

fn strip_tau(mut r: EvaluationReport) -> EvaluationReport {
    for s in &mut r.splits {
        s.tau_hat = 0.0;
    }
    r
}

fn rank_invariance() -> Outcome {
    let spec = scene();
    let data = simulator_dataset(700, 909);
    let plan = SplitPlan {
        n_splits: 20,
        ..Default::default()
    };
    let transforms: [(&str, fn(f64) -> f64); 2] = [("2x+1", |x| 2.0 * x + 1.0), ("tanh(x/10)", |x| (x / 10.0).tanh())];
    let mut ok = true;
    let mut details = Vec::new();
    for (name, f) in transforms {
        let warped: Vec<_> = data.iter().map(|r| r.map_scores(f)).collect();
        for (alpha, lambda) in [(0.1, 0.0), (0.2, 1.0), (0.3, 2.0)] {
            let base = run_split_experiment(&data, &plan, alpha, lambda, "score", &spec, Method::Conformal, Execution::Parallel)
                .map_err(|e| e.to_string())?;
            let moved = run_split_experiment(&warped, &plan, alpha, lambda, "score", &spec, Method::Conformal, Execution::Parallel)
                .map_err(|e| e.to_string())?;
            let metrics_same = strip_tau(base) == strip_tau(moved);

            let a = calibrate(&data[..400], alpha, lambda, "score", &spec).map_err(|e| e.to_string())?;
            let b = calibrate(&warped[..400], alpha, lambda, "score", &spec).map_err(|e| e.to_string())?;
            let sets_same = data[400..].iter().zip(&warped[400..]).all(|(x, y)| {
                let ids = |fr: FilteredResponse<f64>| fr.retained.into_iter().map(|c| c.claim_id).collect::<Vec<_>>();
                ids(confact::apply(&a, x).unwrap()) == ids(confact::apply(&b, y).unwrap())
            });
            ok &= metrics_same && sets_same;
            if !(metrics_same && sets_same) {
                details.push(format!("{name} alpha={alpha} lambda={lambda}: metrics {metrics_same} sets {sets_same}"));
            }
        }
        details.push(format!("{name}: checked"));
    }
    check(ok, details.join("; "))
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 9] = [
        ("AC1", "coverage sandwich, n_calib=400", theorem_sandwich),
        ("AC2", "small-n sandwich, n_calib=20", small_n_sandwich),
        ("AC3", "oracle equivalence", oracle_equivalence),
        ("AC4", "vanilla and random-filter baselines", baseline_reproduction),
        ("AC5", "monotone filter/abstention curves", monotonicity_curves),
        ("AC6", "calibration-size invariance", calibration_size_invariance),
        ("AC7", "loss-model fidelity", loss_fidelity),
        ("AC8", "determinism", determinism),
        ("AC9", "rank invariance", rank_invariance),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let start = std::time::Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
