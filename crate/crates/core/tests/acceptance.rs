//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use streamgp::environment::LawnmowerConfig;
use streamgp::harness::{
    emit_results, load_results, pseudo_count, run_experiment, run_scaling_study, strip_timing, ExperimentConfig,
    FieldSource, LogBase, ModelSpec, PseudoSchedule, ResultTable,
};
use streamgp::models::{
    gpr_log_marginal_likelihood, gpr_predict, pack_parameters, spgp_log_marginal_likelihood, spgp_posterior,
    ssgp_elbo, ssgp_update, unpack_parameters, vsgp_elbo, vsgp_optimal_q, Objective, SparseState, SsgpConfig,
};
use streamgp::optimizer::{check_gradient, OptimizerConfig};
use streamgp::{Dataset, Hyperparameters};

// Tolerances and budgets.
const ORACLE_ABS_TOL: f64 = 1e-6;
const ORACLE_INSTANCES: usize = 20;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-3;
const GRADIENT_CONFIGS: usize = 10;
const GRADIENT_BUDGET: Duration = Duration::from_secs(30);

const STREAM_TOL: f64 = 1e-5;
const STREAM_BUDGET: Duration = Duration::from_secs(10);

const BOUND_INSTANCES: usize = 50;
const BOUND_REL_SLACK: f64 = 1e-8;

const REPLICATION_RMSE_REL: f64 = 0.20;
const REPLICATION_BUDGET: Duration = Duration::from_secs(15 * 60);
const REDUCED_BATCHES: usize = 20;
const REDUCED_WINDOW: usize = 200;

const TREND_BAND: f64 = 0.05;
const ALPHAS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn inputs(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 2, |_, _| r.random::<f64>())
}

fn dataset(r: &mut ChaCha8Rng, n: usize) -> Dataset {
    let x = inputs(r, n);
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(r);
        (3.0 * x[(i, 0)]).sin() + (2.0 * x[(i, 1)]).cos() + 0.1 * e
    });
    Dataset::new(x, y).unwrap()
}

fn hyperparameters(r: &mut ChaCha8Rng) -> Hyperparameters {
    let sf2 = r.random_range(0.5..2.0);
    let ls = [r.random_range(0.2..0.6), r.random_range(0.2..0.6)];
    let sn2 = r.random_range(0.05..0.3);
    Hyperparameters::new(sf2, &ls, sn2).unwrap()
}

fn max_abs(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut r = rng(101);
    for _ in 0..ORACLE_INSTANCES {
        let n = r.random_range(5..=30);
        let data = dataset(&mut r, n);
        let hp = hyperparameters(&mut r);
        let z = data.inputs().clone();
        let queries = inputs(&mut r, 25);

        let exact = gpr_log_marginal_likelihood(&data, &hp).unwrap().value;
        let exact_pred = gpr_predict(&data, &hp, &queries).unwrap();

        let vsgp = vsgp_elbo(&data, &z, &hp).unwrap().value;
        let vsgp_pred = vsgp_optimal_q(&data, &z, &hp).unwrap().predict(&queries).unwrap();
        let spgp = spgp_log_marginal_likelihood(&data, &z, &hp).unwrap().value;
        let spgp_pred = spgp_posterior(&data, &z, &hp).unwrap().predict(&queries).unwrap();

        for d in [
            (vsgp - exact).abs(),
            (spgp - exact).abs(),
            max_abs(&vsgp_pred.mean, &exact_pred.mean),
            max_abs(&vsgp_pred.variance_f, &exact_pred.variance_f),
            max_abs(&spgp_pred.mean, &exact_pred.mean),
            max_abs(&spgp_pred.variance_f, &exact_pred.variance_f),
        ] {
            worst = worst.max(d);
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= ORACLE_ABS_TOL && elapsed < ORACLE_BUDGET,
        format!("max abs deviation {worst:.2e} (tol {ORACLE_ABS_TOL:.0e}), {:.2}s", elapsed.as_secs_f64()),
    )
}

fn gradient_error(mut f: impl FnMut(&DVector<f64>) -> Objective, point: &DVector<f64>) -> f64 {
    check_gradient(
        |p| {
            let o = f(p);
            (o.value, o.gradient)
        },
        point,
        FD_STEP,
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    let names = ["gpr", "vsgp", "spgp", "ssgp"];
    let mut r = rng(202);
    for _ in 0..GRADIENT_CONFIGS {
        let data = dataset(&mut r, 25);
        let hp = hyperparameters(&mut r);
        let m = r.random_range(3..=8);
        let z = inputs(&mut r, m);

        let p = pack_parameters(&hp, None);
        let e = gradient_error(|p| gpr_log_marginal_likelihood(&data, &unpack_parameters(p, 2, 0).unwrap().0).unwrap(), &p);
        worst[0] = worst[0].max(e);

        let p = pack_parameters(&hp, Some(&z));
        let e = gradient_error(
            |p| {
                let (hp, z) = unpack_parameters(p, 2, m).unwrap();
                vsgp_elbo(&data, &z, &hp).unwrap()
            },
            &p,
        );
        worst[1] = worst[1].max(e);
        let e = gradient_error(
            |p| {
                let (hp, z) = unpack_parameters(p, 2, m).unwrap();
                spgp_log_marginal_likelihood(&data, &z, &hp).unwrap()
            },
            &p,
        );
        worst[2] = worst[2].max(e);

        let old_hp = hyperparameters(&mut r);
        let old_m = r.random_range(3..=8);
        let old_z = inputs(&mut r, old_m);
        let old = vsgp_optimal_q(&dataset(&mut r, 20), &old_z, &old_hp).unwrap();
        let e = gradient_error(
            |p| {
                let (hp, z) = unpack_parameters(p, 2, m).unwrap();
                ssgp_elbo(&old, &data, &z, &hp).unwrap()
            },
            &p,
        );
        worst[3] = worst[3].max(e);
    }
    let elapsed = start.elapsed();
    let detail = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    check(
        worst.iter().all(|w| *w <= FD_REL_TOL) && elapsed < GRADIENT_BUDGET,
        format!("max relative error {detail} (tol {FD_REL_TOL:.0e}), {:.2}s", elapsed.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut r = rng(303);
    let hp = Hyperparameters::new(1.2, &[0.35, 0.5], 0.05).unwrap();
    let z = inputs(&mut r, 15);
    let batches: Vec<Dataset> = (0..5).map(|_| dataset(&mut r, 20)).collect();
    let mut state = SparseState::prior(z.clone(), hp.clone()).unwrap();
    for b in &batches {
        state = ssgp_update(&state, b, &SsgpConfig::frozen()).unwrap().state;
    }
    let all = batches.iter().skip(1).fold(batches[0].clone(), |acc, b| acc.concat(b).unwrap());
    assert_eq!(all.len(), 100);
    let oneshot = vsgp_optimal_q(&all, &z, &hp).unwrap();
    let queries = inputs(&mut r, 200);
    let a = state.predict(&queries).unwrap();
    let b = oneshot.predict(&queries).unwrap();
    let dm = max_abs(&a.mean, &b.mean);
    let dv = max_abs(&a.variance_f, &b.variance_f);
    let elapsed = start.elapsed();
    check(
        dm <= STREAM_TOL && dv <= STREAM_TOL && elapsed < STREAM_BUDGET,
        format!("mean {dm:.1e}, variance {dv:.1e} (tol {STREAM_TOL:.0e}), {:.2}s", elapsed.as_secs_f64()),
    )
}

fn criterion_4() -> Outcome {
    let mut r = rng(404);
    let mut violations = 0;
    let mut tightest = f64::NEG_INFINITY;
    for _ in 0..BOUND_INSTANCES {
        let n = r.random_range(5..=40);
        let data = dataset(&mut r, n);
        let hp = hyperparameters(&mut r);
        let m = r.random_range(1..=12);
        let z = inputs(&mut r, m);
        let elbo = vsgp_elbo(&data, &z, &hp).unwrap().value;
        let lml = gpr_log_marginal_likelihood(&data, &hp).unwrap().value;
        let excess = (elbo - lml) / lml.abs().max(1.0);
        tightest = tightest.max(excess);
        if excess > BOUND_REL_SLACK {
            violations += 1;
        }
    }
    check(
        violations == 0,
        format!("{violations} violations in {BOUND_INSTANCES} instances, max (elbo - lml)/|lml| = {tightest:.1e}"),
    )
}

/// Reduced benchmark stream: 10 transects x 88 samples on a 100x100 field, 20 batches of 44.
fn reduced_config() -> ExperimentConfig {
    ExperimentConfig {
        field: FieldSource::Synthetic {
            width: 100,
            height: 100,
            hp: Hyperparameters::new(1.0, &[0.3, 0.7], 0.01).unwrap(),
        },
        noise_variance: 0.01,
        plan: LawnmowerConfig { transects: 10, samples_per_transect: 88, batch_size: 44 },
        models: vec![ModelSpec::Ssgp(PseudoSchedule::Growing { alpha: 2.0, base: LogBase::Natural })],
        optimizer: OptimizerConfig::default(),
        seed: 0,
        max_batches: Some(REDUCED_BATCHES),
        ..ExperimentConfig::default()
    }
}

struct Replication {
    gpr: ResultTable,
    window: ResultTable,
    ssgp: Vec<(f64, ResultTable)>,
    elapsed: Duration,
}

fn replication() -> Replication {
    let start = Instant::now();
    let cfg = reduced_config();
    let study = run_scaling_study(&cfg, &ALPHAS).unwrap();
    let window = run_experiment(&ExperimentConfig { models: vec![ModelSpec::GprWindow(REDUCED_WINDOW)], ..cfg }).unwrap();
    Replication { gpr: study.reference, window, ssgp: study.runs, elapsed: start.elapsed() }
}

fn final_rmse(t: &ResultTable, model: &str) -> f64 {
    t.last_for(model).unwrap().rmse
}

fn criterion_5(rep: &Replication) -> Outcome {
    let gpr = rep.gpr.last_for("gpr").unwrap();
    let ssgp = rep.ssgp.iter().find(|(a, _)| *a == 2.0).unwrap().1.last_for("ssgp").unwrap();
    let win = rep.window.last_for(&format!("gpr{REDUCED_WINDOW}")).unwrap();
    let rel = (ssgp.rmse - gpr.rmse).abs() / gpr.rmse;
    let failed = [&rep.gpr, &rep.window]
        .into_iter()
        .chain(rep.ssgp.iter().map(|(_, t)| t))
        .flat_map(|t| &t.rows)
        .any(|r| r.failed);
    check(
        rel <= REPLICATION_RMSE_REL && win.nlpd > gpr.nlpd && !failed && rep.elapsed < REPLICATION_BUDGET,
        format!(
            "rmse ssgp(alpha=2) {:.4} vs gpr {:.4} (rel {rel:.3}, tol {REPLICATION_RMSE_REL}); nlpd gpr{REDUCED_WINDOW} {:.3} vs gpr {:.3}; {:.0}s",
            ssgp.rmse,
            gpr.rmse,
            win.nlpd,
            gpr.nlpd,
            rep.elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6(rep: &Replication) -> Outcome {
    let r: Vec<f64> = ALPHAS.iter().map(|a| final_rmse(&rep.ssgp.iter().find(|(x, _)| x == a).unwrap().1, "ssgp")).collect();
    let monotone = r.windows(2).all(|w| w[1] <= w[0] * (1.0 + TREND_BAND));
    let gain_2 = r[1] - r[2];
    let gain_4 = r[2] - r[3];
    let listing = ALPHAS.iter().zip(&r).map(|(a, v)| format!("{a}:{v:.4}")).collect::<Vec<_>>().join(" ");
    check(
        monotone && gain_4 < gain_2,
        format!("final rmse by alpha {listing}; gain 1->2 {gain_2:.1e}, 2->4 {gain_4:.1e}"),
    )
}

fn criterion_7(rep: &Replication) -> Outcome {
    let ssgp = &rep.ssgp.iter().find(|(a, _)| *a == 2.0).unwrap().1;
    let mut combined = ResultTable { rows: Vec::new(), metadata: ssgp.metadata.clone() };
    for (g, s) in rep.gpr.rows.iter().zip(&ssgp.rows) {
        combined.rows.push(g.clone());
        combined.rows.push(s.clone());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    emit_results(&combined, &path).unwrap();
    let table = load_results(&path).unwrap();

    let batch = reduced_config().plan.batch_size;
    let m_max = pseudo_count(2.0, batch * REDUCED_BATCHES, LogBase::Natural);
    let ssgp_onboard: Vec<usize> = table.for_model("ssgp").map(|r| r.onboard_points).collect();
    let gpr_onboard: Vec<usize> = table.for_model("gpr").map(|r| r.onboard_points).collect();
    let bounded = ssgp_onboard.iter().all(|&o| o <= batch + m_max);
    let linear = gpr_onboard.iter().enumerate().all(|(b, &o)| o == batch * (b + 1));
    let full = gpr_onboard.last() == Some(&(batch * REDUCED_BATCHES));
    check(
        bounded && linear && full && ssgp_onboard.len() == REDUCED_BATCHES,
        format!(
            "ssgp onboard max {} <= {} ; gpr onboard {} -> {}",
            ssgp_onboard.iter().max().unwrap(),
            batch + m_max,
            gpr_onboard[0],
            gpr_onboard.last().unwrap()
        ),
    )
}

fn criterion_8() -> Outcome {
    let cfg = ExperimentConfig {
        field: FieldSource::Synthetic { width: 40, height: 40, hp: Hyperparameters::new(1.0, &[0.3, 0.7], 0.01).unwrap() },
        plan: LawnmowerConfig { transects: 4, samples_per_transect: 33, batch_size: 44 },
        models: vec![
            ModelSpec::Gpr,
            ModelSpec::GprWindow(88),
            ModelSpec::Vsgp(15),
            ModelSpec::Spgp(15),
            ModelSpec::Ssgp(PseudoSchedule::Growing { alpha: 1.0, base: LogBase::Natural }),
        ],
        seed: 8,
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for run in 0..2 {
        let t = run_experiment(&cfg).unwrap();
        let path = dir.path().join(format!("run{run}.csv"));
        emit_results(&t, &path).unwrap();
        texts.push(std::fs::read_to_string(&path).unwrap());
    }
    let rows = texts[0].lines().count() - 1;
    let same = strip_timing(&texts[0]) == strip_timing(&texts[1]);
    check(same && rows == 15, format!("{rows} rows, identical modulo timing: {same}"))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {id} [{tag}] {name}: {detail}");
    ok
}

fn main() {
    // `cargo test -- --list` and filters are not supported; everything runs.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut ok = true;
    ok &= run(1, "sparse models with Z = X match exact GP", criterion_1);
    ok &= run(2, "analytic gradients match finite differences", criterion_2);
    ok &= run(3, "frozen streaming updates match one-shot VSGP", criterion_3);
    ok &= run(4, "collapsed bound never exceeds exact evidence", criterion_4);
    let rep = catch_unwind(replication);
    match &rep {
        Ok(rep) => {
            ok &= run(5, "reduced replication: ssgp close to gpr, window worse", || criterion_5(rep));
            ok &= run(6, "pseudo-point scaling trend", || criterion_6(rep));
            ok &= run(7, "ssgp on-board count bounded, gpr linear", || criterion_7(rep));
        }
        Err(_) => {
            for (id, name) in [(5, "reduced replication"), (6, "pseudo-point scaling trend"), (7, "on-board count")] {
                println!("criterion {id} [FAIL] {name}: reduced stream run panicked");
            }
            ok = false;
        }
    }
    ok &= run(8, "identical config gives identical results", criterion_8);
    if !ok {
        std::process::exit(1);
    }
}
