//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use klgrad::config::{EstimateConfig, GradBiasConfig, KlChoice, SweepGrid};
use klgrad::experiments::{self, thread_pool};
use klgrad::run_store::RunStore;
use klgrad_core::estimators::{sequence_estimate, TokenRatios};
use klgrad_core::gradient_lab::exact_config_expectation;
use klgrad_core::model::{exact_kl, exact_kl_grad, exact_kl_grad_dp, SequenceSample};
use klgrad_core::seed::derive_stream;
use klgrad_core::trainer::{
    rloo_advantage, rollout_group, surrogate_gradient, train_run, KlConfig, PolicySpec,
    RewardSpec, TrainConfig,
};
use klgrad_core::{ArParams, EstimatorKind, KlPlacement};
use rand::Rng;

const SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_pairs(label: &str, n: usize) -> Vec<(ArParams, ArParams)> {
    let mut rng = derive_stream(SEED, label, &[]);
    (0..n)
        .map(|_| {
            let mut p = || ArParams::new(rng.gen_range(-1.5..1.5), rng.gen_range(-0.6..0.6)).unwrap();
            (p(), p())
        })
        .collect()
}

fn tup(p: &ArParams) -> (f64, f64) {
    (p.a, p.b)
}

fn dist(x: [f64; 2], y: [f64; 2]) -> f64 {
    (x[0] - y[0]).hypot(x[1] - y[1])
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for t in [2, 6, 10, 12] {
        for (p, q) in random_pairs("acceptance-1", 20) {
            let dp = exact_kl(&p, &q, t).unwrap();
            worst = worst.max((dp - oracle::brute_kl(tup(&p), tup(&q), t)).abs());
        }
    }
    outcome(worst < 1e-10, format!("max |DP - enumeration| = {worst:.2e}"))
}

fn criterion_2() -> Outcome {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (p, q) in random_pairs("acceptance-2", 10) {
        let fd = oracle::central_diff(
            |a, b| exact_kl(&ArParams { a, b }, &q, 10).unwrap(),
            p.a,
            p.b,
            h,
        );
        for g in [exact_kl_grad(&p, &q, 10).unwrap(), exact_kl_grad_dp(&p, &q, 10).unwrap()] {
            worst = worst.max(dist(g, fd) / fd[0].hypot(fd[1]));
        }
    }
    outcome(worst < 1e-6, format!("max relative error = {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for t in [1, 3, 7, 12] {
        for (p, q) in random_pairs("acceptance-3", 5) {
            let kl = exact_kl(&p, &q, t).unwrap();
            for kind in EstimatorKind::ALL {
                let mut expect = 0.0;
                for s in oracle::all_sequences(p.a, p.b, t) {
                    let lp: Vec<f64> = (0..t)
                        .map(|i| oracle::token_prob(p.a, p.b, s.counts[i], s.tokens[i]).ln())
                        .collect();
                    let lq: Vec<f64> = (0..t)
                        .map(|i| oracle::token_prob(q.a, q.b, s.counts[i], s.tokens[i]).ln())
                        .collect();
                    let ratios = TokenRatios::new(lp, lq).unwrap();
                    expect += s.prob * sequence_estimate(kind, &ratios).unwrap();
                }
                worst = worst.max((expect - kl).abs());
            }
        }
    }
    outcome(worst < 1e-10, format!("max |E[estimate] - KL| = {worst:.2e}"))
}

fn criterion_4(store: &RunStore) -> (Outcome, Vec<klgrad::run_store::McRow>) {
    let cfg = EstimateConfig {
        seed: SEED,
        ..EstimateConfig::default()
    };
    let pool = thread_pool(Some(1)).unwrap();
    let (_, rows) = experiments::run_estimate(store, &cfg, &pool).unwrap();
    let brute = oracle::brute_kl(tup(&cfg.policy), tup(&cfg.reference), cfg.seq_len);
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &rows {
        let z = (r.mean - brute) / r.std_err;
        pass &= z.abs() <= 4.0 && (r.exact_kl - brute).abs() < 1e-10;
        parts.push(format!("{} z = {z:+.2}", r.kind));
    }
    (outcome(pass, parts.join(", ")), rows)
}

fn criterion_5() -> Outcome {
    let t = 10;
    let mut worst: f64 = 0.0;
    for (p, q) in random_pairs("acceptance-5", 4)
        .into_iter()
        .chain([(ArParams { a: 0.3, b: 0.1 }, ArParams { a: 0.0, b: 0.0 })])
    {
        let (pa, pb) = (tup(&p), tup(&q));
        let truth = exact_kl_grad(&p, &q, t).unwrap();
        let e = |k, pl| exact_config_expectation(k, pl, &p, &q, t).unwrap();
        use EstimatorKind::*;
        use KlPlacement::*;
        // K3 in reward, straight from its definition.
        let mut k3_reward = [0.0; 2];
        for s in oracle::all_sequences(pa.0, pa.1, t) {
            let mut k3 = 0.0;
            for i in 0..t {
                let r = oracle::token_prob(pb.0, pb.1, s.counts[i], s.tokens[i])
                    / oracle::token_prob(pa.0, pa.1, s.counts[i], s.tokens[i]);
                k3 += r - 1.0 - r.ln();
            }
            let g = oracle::score(&s);
            k3_reward[0] += s.prob * k3 * g[0];
            k3_reward[1] += s.prob * k3 * g[1];
        }
        let checks = [
            dist(e(K1, Reward), truth),
            dist(e(K1, Loss), [0.0, 0.0]),
            dist(e(K1, Both), truth),
            dist(e(K3, Both), truth),
            dist(e(K3, Reward), k3_reward),
            dist(e(K3, Reward), oracle::k3_reward_rewritten(pa, pb, t)),
            dist(e(K3, Loss), oracle::k3_loss_enumerated(pa, pb, t)),
            dist(e(K3, Loss), oracle::k3_loss_via_forward_kl(pa, pb, t)),
        ];
        worst = checks.into_iter().fold(worst, f64::max);
    }
    outcome(worst < 1e-10, format!("max deviation over 6 configurations = {worst:.2e}"))
}

fn criterion_6(store: &RunStore) -> Outcome {
    let cfg = GradBiasConfig {
        seed: SEED,
        ..GradBiasConfig::default()
    };
    let pool = thread_pool(Some(1)).unwrap();
    let (_, reports) = experiments::run_grad_bias(store, &cfg, &pool).unwrap();
    let find = |k, pl, t| {
        reports
            .iter()
            .find(|r| r.kind == k && r.placement == pl && r.horizon == t)
            .expect("cell present")
    };
    let mut pass = true;
    let mut min_ratio = f64::INFINITY;
    let mut max_z: f64 = 0.0;
    for &t in &cfg.sweep.lengths {
        let k1 = find(EstimatorKind::K1, KlPlacement::Reward, t);
        for pl in [KlPlacement::Reward, KlPlacement::Loss] {
            let k3 = find(EstimatorKind::K3, pl, t);
            min_ratio = min_ratio.min(k3.bias_norm() / k1.bias_norm());
        }
        let se = k1.std_err();
        max_z = max_z.max((k1.bias_a / se[0]).abs()).max((k1.bias_b / se[1]).abs());
        pass &= k1.bias_within(4.0);
    }
    pass &= min_ratio >= 10.0;
    outcome(
        pass,
        format!("min K3/K1 bias ratio = {min_ratio:.1}, max K1/Reward |bias|/SE = {max_z:.2}"),
    )
}

fn criterion_7(rows: &[klgrad::run_store::McRow]) -> Outcome {
    let var = |k| rows.iter().find(|r| r.kind == k).unwrap().sample_variance;
    let (v1, v3) = (var(EstimatorKind::K1), var(EstimatorKind::K3));
    outcome(v3 < v1, format!("Var(K1) = {v1:.4}, Var(K3) = {v3:.4}"))
}

fn criterion_8() -> Outcome {
    let mut pass = true;

    // Leave-one-out advantages over many sampled groups.
    let policy = PolicySpec::two_param(ArParams { a: 0.2, b: -0.1 }, 8);
    let reward = RewardSpec::CountTarget { k: 4 };
    let mut rng = derive_stream(SEED, "acceptance-8", &[]);
    let mut worst_sum: f64 = 0.0;
    let mut batch: Vec<SequenceSample> = Vec::new();
    let mut adv: Vec<Vec<f64>> = Vec::new();
    for _ in 0..500 {
        let group = rollout_group(&policy, &reward, 5, &mut rng).unwrap();
        let rewards: Vec<f64> = group.iter().map(|g| g.1).collect();
        let a = rloo_advantage(&rewards).unwrap();
        worst_sum = worst_sum.max(a.iter().sum::<f64>().abs());
        for ((s, _), ai) in group.into_iter().zip(a) {
            adv.push(vec![ai; 8]);
            batch.push(s);
        }
    }
    pass &= worst_sum < 1e-12;

    // On-policy clipped surrogate against plain REINFORCE.
    let norm = batch.len() * 8;
    let got = surrogate_gradient(&policy, &policy, &batch, &adv, 0.2, norm).unwrap();
    let mut want = [0.0; 2];
    for (s, a) in batch.iter().zip(&adv) {
        for t in 0..8 {
            let p = oracle::sigmoid(0.2 - 0.1 * s.counts[t] as f64);
            let r = s.tokens[t] as u8 as f64 - p;
            want[0] += a[t] * r / norm as f64;
            want[1] += a[t] * r * s.counts[t] as f64 / norm as f64;
        }
    }
    let reinforce_err = dist([got.grad[0], got.grad[1]], want);
    pass &= reinforce_err < 1e-10 && got.clipped_tokens == 0;

    // Zero-beta runs ignore the KL configuration entirely.
    let base = TrainConfig {
        steps: 40,
        seed: SEED,
        ..TrainConfig::default()
    };
    let reference = train_run(&base).unwrap();
    let mut identical = true;
    for kind in EstimatorKind::ALL {
        for placement in KlPlacement::ALL {
            let cfg = TrainConfig {
                kl: KlConfig {
                    kind,
                    placement,
                    beta: 0.0,
                },
                ..base.clone()
            };
            let run = train_run(&cfg).unwrap();
            identical &= run.metrics == reference.metrics && run.final_policy == reference.final_policy;
        }
    }
    pass &= identical;
    outcome(
        pass,
        format!(
            "max |sum A| = {worst_sum:.1e}, surrogate vs REINFORCE = {reinforce_err:.1e}, beta=0 runs identical = {identical}"
        ),
    )
}

fn regularization_grid() -> SweepGrid {
    SweepGrid {
        base: TrainConfig::default(),
        betas: vec![0.0, 0.1, 1.0],
        kl: vec![KlChoice {
            kind: EstimatorKind::K1,
            placement: KlPlacement::Reward,
        }],
        seeds: (0..5).map(|s| SEED + s).collect(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_9(store: &RunStore) -> Outcome {
    let grid = regularization_grid();
    let mut by_beta: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for cfg in grid.expand() {
        let (_, run) = experiments::run_train(store, &cfg).unwrap();
        let last = run.metrics.last().unwrap();
        let entry = by_beta.entry(cfg.kl.beta.to_bits()).or_default();
        entry.0.push(last.exact_reverse_kl);
        entry.1.push(last.expected_reward.unwrap());
    }
    let rows: Vec<(f64, f64, f64)> = grid
        .betas
        .iter()
        .map(|b| {
            let (kl, rw) = by_beta[&b.to_bits()].clone();
            (*b, median(kl), median(rw))
        })
        .collect();
    let kl_monotone = rows.windows(2).all(|w| w[1].1 <= w[0].1);
    let best_reward = rows.iter().all(|r| r.2 <= rows[0].2);
    let detail = rows
        .iter()
        .map(|(b, kl, rw)| format!("beta={b}: KL {kl:.3}, reward {rw:.3}"))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(kl_monotone && best_reward, detail)
}

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for run in std::fs::read_dir(root).unwrap() {
        let run = run.unwrap().path();
        if !run.is_dir() {
            continue;
        }
        for f in std::fs::read_dir(&run).unwrap() {
            let f = f.unwrap().path();
            if f.extension().is_some_and(|e| e == "csv") {
                out.insert(f.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&f).unwrap());
            }
        }
    }
    out
}

fn cli(out: &Path, jobs: usize, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_klgrad"))
        .arg("--out")
        .arg(out)
        .args(["--seed", &SEED.to_string(), "--jobs", &jobs.to_string()])
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "klgrad {args:?} failed: {status}");
}

fn criterion_10(first: &Path, scratch: &Path) -> Outcome {
    let grid_path = scratch.join("grid.json");
    std::fs::write(&grid_path, serde_json::to_vec(&regularization_grid()).unwrap()).unwrap();
    let grid = grid_path.to_str().unwrap();
    let reference = csv_files(first);
    let mut pass = !reference.is_empty();
    let mut parts = Vec::new();
    for jobs in [1, 16] {
        let out = scratch.join(format!("jobs{jobs}"));
        cli(&out, jobs, &["estimate"]);
        cli(&out, jobs, &["grad-bias"]);
        cli(&out, jobs, &["sweep", grid]);
        let rerun = csv_files(&out);
        let same = rerun == reference;
        pass &= same;
        parts.push(format!("--jobs {jobs}: {} files identical = {same}", rerun.len()));
    }
    outcome(pass, parts.join(", "))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let store = RunStore::open(&first).unwrap();

    let mut results: Vec<(u32, &str, Option<Duration>, Outcome, Duration)> = Vec::new();
    let mut run = |n: u32, name: &'static str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let status = o.pass && limit.is_none_or(|l| elapsed < l);
        println!(
            "criterion {n:>2} {}: {name}: {} [{:.2}s]",
            if status { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
        results.push((n, name, limit, Outcome { pass: status, ..o }, elapsed));
    };
    let secs = |s| Some(Duration::from_secs(s));

    run(1, "DP KL equals enumeration", secs(10), &mut criterion_1);
    run(2, "exact gradient equals central differences", secs(10), &mut criterion_2);
    run(3, "estimators unbiased by enumeration", None, &mut criterion_3);
    let mut mc_rows = Vec::new();
    run(4, "Monte Carlo KL within 4 standard errors", secs(60), &mut || {
        let (o, rows) = criterion_4(&store);
        mc_rows = rows;
        o
    });
    run(5, "configuration expectations", None, &mut criterion_5);
    run(6, "bias ordering across lengths", secs(300), &mut || criterion_6(&store));
    run(7, "K3 variance below K1", None, &mut || criterion_7(&mc_rows));
    run(8, "trainer invariants", None, &mut criterion_8);
    run(9, "KL penalty regularizes training", secs(120), &mut || criterion_9(&store));
    run(10, "byte-identical reruns", None, &mut || criterion_10(&first, dir.path()));

    let failed: Vec<u32> = results.iter().filter(|r| !r.3.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
