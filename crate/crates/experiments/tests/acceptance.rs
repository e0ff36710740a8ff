//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs without the libtest harness so the table is always
//! printed.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pfml_core::field::{ChargeSnapshot, Field};
use pfml_core::kernel::{FieldParams, PotentialKernel};
use pfml_core::metrics::{recall_at_k, run_corollary1, run_prop1, w2_alignment};
use pfml_core::optim::backtracking_step;
use pfml_core::oracle::{max_double_counting_error, random_snapshot, run_gradcheck};
use pfml_core::seed::SeedTree;
use pfml_core::CpmlParams;
use pfml_experiments::config::{AblationAxis, ExperimentConfig};
use pfml_experiments::runner::{ablate, noise_bench, Context};
use rand::Rng;

const SEED: u64 = 2024;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn cloud<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn ctx(dir: &Path) -> Context {
    Context {
        out_dir: dir.to_path_buf(),
        deterministic: true,
    }
}

fn gradient_oracle() -> Verdict {
    let t = Instant::now();
    let report = run_gradcheck(SEED, 6);
    let elapsed = t.elapsed();
    let n = report.cases.len();
    verdict(
        report.max_relative_error < 1e-6 && n >= 100 && within(elapsed, 10.0),
        format!(
            "max relative error {:.2e} over {n} configurations in {:.1?} (need < 1e-6, >= 100, < 10 s)",
            report.max_relative_error, elapsed
        ),
    )
}

fn double_counting() -> Verdict {
    let t = Instant::now();
    let tree = SeedTree::new(SEED);
    let mut worst = 0.0f64;
    let snapshots = 60;
    for i in 0..snapshots {
        let mut rng = tree.stream("double-counting", i);
        let dim = [2, 8, 64][i as usize % 3];
        let alpha = [1.0, 2.0, 4.0][(i as usize / 3) % 3];
        let delta = rng.random_range(0.1..0.3);
        let samples = rng.random_range(4..12);
        let snapshot: ChargeSnapshot = random_snapshot(&mut rng, dim, &[delta], samples);
        let err = if i % 2 == 0 {
            let k = PotentialKernel::Pfml(FieldParams::new(delta, alpha).unwrap());
            max_double_counting_error(&Field::new(&snapshot, &k))
        } else {
            let k = PotentialKernel::Cpml(CpmlParams::new(delta).unwrap());
            max_double_counting_error(&Field::new(&snapshot, &k))
        };
        worst = worst.max(err);
    }
    let elapsed = t.elapsed();
    verdict(
        worst <= 1e-9 && within(elapsed, 5.0),
        format!("max relative deviation {worst:.2e} on {snapshots} snapshots in {elapsed:.1?} (need <= 1e-9, < 5 s)"),
    )
}

fn proposition1() -> Verdict {
    let t = Instant::now();
    let s = run_prop1(SEED, 50).expect("prop1 runs");
    let elapsed = t.elapsed();
    verdict(
        s.passed && s.instances.len() == 50 && within(elapsed, 60.0),
        format!(
            "{} instances: {:.0}% of descents within delta, contrastive centroid ok on {} separated instances: {}, {:.1?} (need 100%, < 60 s)",
            s.instances.len(),
            100.0 * s.fraction_within_delta,
            s.clear_instances,
            s.cpml_ok,
            elapsed
        ),
    )
}

fn corollary1() -> Verdict {
    let t = Instant::now();
    let r = run_corollary1(SEED, 50).expect("corollary1 runs");
    let elapsed = t.elapsed();
    let mean = |f: fn(&pfml_core::metrics::Corollary1Trial) -> f64| {
        r.trials.iter().map(f).sum::<f64>() / r.trials.len() as f64
    };
    verdict(
        r.fraction_passing >= 0.95 && r.trials.len() == 50 && within(elapsed, 120.0),
        format!(
            "{:.0}% of 50 trials with w2(pfml) <= delta and < w2(cpml); mean w2 pfml {:.3} vs cpml {:.3}; {} relaxation failures; {elapsed:.1?} (need >= 95%, < 2 min)",
            100.0 * r.fraction_passing,
            mean(|t| t.w2_pfml),
            mean(|t| t.w2_cpml),
            r.relaxation_failures
        ),
    )
}

// Every ordered choice of m distinct data points, costs summed in proxy order.
fn brute_w2(proxies: &[Vec<f64>], data: &[Vec<f64>]) -> f64 {
    fn go(k: usize, used: &mut Vec<bool>, acc: f64, p: &[Vec<f64>], d: &[Vec<f64>], best: &mut f64) {
        if k == p.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..d.len() {
            if !used[j] {
                used[j] = true;
                go(k + 1, used, acc + dist(&p[k], &d[j]), p, d, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, &mut vec![false; data.len()], 0.0, proxies, data, &mut best);
    best / proxies.len() as f64
}

fn w2_oracle() -> Verdict {
    let t = Instant::now();
    let tree = SeedTree::new(SEED);
    let cases = 200;
    let mismatches = (0..cases)
        .filter(|&case| {
            let mut rng = tree.stream("w2", case);
            let m = rng.random_range(1..=3);
            let n = rng.random_range(m..=7);
            let dim = rng.random_range(1..=4);
            let proxies = cloud(&mut rng, m, dim);
            let data = cloud(&mut rng, n, dim);
            w2_alignment(&proxies, &data).unwrap().w2 != brute_w2(&proxies, &data)
        })
        .count();
    let elapsed = t.elapsed();
    verdict(
        mismatches == 0 && within(elapsed, 30.0),
        format!("{mismatches} of {cases} cases differ from exhaustive enumeration, {elapsed:.1?} (need 0, < 30 s)"),
    )
}

fn brute_recall(emb: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let n = emb.len();
    let hits = (0..n)
        .filter(|&q| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != q).collect();
            others.sort_by(|&a, &b| {
                dist(&emb[q], &emb[a])
                    .total_cmp(&dist(&emb[q], &emb[b]))
                    .then(a.cmp(&b))
            });
            others[..k].iter().any(|&j| labels[j] == labels[q])
        })
        .count();
    hits as f64 / n as f64
}

fn recall_oracle() -> Verdict {
    let t = Instant::now();
    let tree = SeedTree::new(SEED);
    let cases = 50;
    let mut mismatches = 0;
    for case in 0..cases {
        let mut rng = tree.stream("recall", case);
        let n = rng.random_range(2..=200);
        let dim = rng.random_range(1..=6);
        let classes = rng.random_range(1..=10);
        let emb = if case % 5 == 0 {
            (0..n)
                .map(|_| (0..dim).map(|_| f64::from(rng.random_range(0..3))).collect())
                .collect()
        } else {
            cloud(&mut rng, n, dim)
        };
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let ks: Vec<usize> = [1, 2, 4, 8].into_iter().filter(|&k| k < n).collect();
        let got = recall_at_k(&emb, &labels, &ks).unwrap();
        if ks.iter().any(|&k| got.at(k).unwrap() != brute_recall(&emb, &labels, k)) {
            mismatches += 1;
        }
    }
    let elapsed = t.elapsed();
    verdict(
        mismatches == 0 && within(elapsed, 10.0),
        format!("{mismatches} of {cases} cases differ from brute force, {elapsed:.1?} (need 0, < 10 s)"),
    )
}

fn noise_trend() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    let t = Instant::now();
    let summary = noise_bench(&cfg, &ctx(dir.path())).expect("noise bench runs");
    let elapsed = t.elapsed();
    let drop = summary.drops.iter().find(|d| d.rate == 0.2).expect("rate 0.2 benched");
    verdict(
        summary.seeds.len() >= 5 && drop.pfml < drop.cpml && within(elapsed, 600.0),
        format!(
            "mean R@1 drop at 20% noise over {} seeds: pfml {:.4}, cpml {:.4}; {elapsed:.1?} (need pfml < cpml, < 10 min)",
            summary.seeds.len(),
            drop.pfml,
            drop.cpml
        ),
    )
}

fn ablation_trends() -> Verdict {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut passed = true;
    // (axis, better value, worse value)
    for (axis, better, worse) in [
        (AblationAxis::M, 15.0, 0.0),
        (AblationAxis::Alpha, 4.0, 0.0),
        (AblationAxis::DeltaGap, 0.0, 0.2),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.ablate_axis = axis;
        cfg.ablate_values = vec![worse, better];
        let s = ablate(&cfg, &ctx(dir.path())).expect("ablation runs");
        let (b, w) = (s.mean_at(better).unwrap(), s.mean_at(worse).unwrap());
        passed &= s.seeds.len() >= 5 && b >= w;
        parts.push(format!("{axis} {better}: {b:.4} vs {worse}: {w:.4}"));
    }
    let elapsed = t.elapsed();
    passed &= within(elapsed, 900.0);
    verdict(
        passed,
        format!("{}; {elapsed:.1?} (need each >=, < 15 min)", parts.join(", ")),
    )
}

fn energy_descent() -> Verdict {
    let t = Instant::now();
    let tree = SeedTree::new(SEED);
    let kernel = PotentialKernel::Pfml(FieldParams::with_radii(0.2, 0.3, 4.0).unwrap());
    let mut violations = 0;
    let mut accepted = 0;
    for case in 0..10 {
        let mut rng = tree.stream("descent", case);
        let mut snapshot = random_snapshot(&mut rng, 8, &[0.2, 0.3], 16);
        let mut last = Field::new(&snapshot, &kernel).total_energy();
        for _ in 0..200 {
            let step = backtracking_step(&snapshot, &kernel, 1e-3, 60).unwrap();
            if step.energy_after > last {
                violations += 1;
            }
            accepted += usize::from(step.accepted());
            last = step.energy_after;
            snapshot = step.snapshot;
        }
    }
    let elapsed = t.elapsed();
    verdict(
        violations == 0 && within(elapsed, 30.0),
        format!("{violations} energy increases over 10 batches x 200 steps ({accepted} steps moved), {elapsed:.1?} (need 0, < 30 s)"),
    )
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Verdict {
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("small.cfg");
    fs::write(&cfg, "optimizer.steps = 200\nbench.seeds = 2\nmetrics.eval_every = 50\n").unwrap();
    let commands: [&[&str]; 5] = [
        &["gen"],
        &["train"],
        &["noise-bench", "--config", cfg.to_str().unwrap()],
        &["ablate", "--config", cfg.to_str().unwrap()],
        &["check", "prop1", "--count", "5"],
    ];
    let mut differing = Vec::new();
    for args in commands {
        let outputs: Vec<_> = (0..2)
            .map(|rep| {
                let out = work.path().join(format!("{}-{rep}", args[0]));
                let status = Command::new(env!("CARGO_BIN_EXE_pfml"))
                    .args(args)
                    .args(["--deterministic", "--seed", "7", "--out"])
                    .arg(&out)
                    .status()
                    .unwrap();
                assert!(status.success(), "pfml {args:?} failed");
                read_tree(&out)
            })
            .collect();
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            differing.push(args[0]);
        }
    }
    verdict(
        differing.is_empty(),
        format!("reran gen, train, noise-bench, ablate, check; differing outputs: {differing:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("gradient oracle", gradient_oracle),
        ("double-counting identity", double_counting),
        ("proposition 1 minima", proposition1),
        ("corollary 1 alignment", corollary1),
        ("W2 oracle equivalence", w2_oracle),
        ("Recall@K oracle equivalence", recall_oracle),
        ("noise-robustness trend", noise_trend),
        ("ablation trends", ablation_trends),
        ("energy descent", energy_descent),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        failed += usize::from(!v.passed);
        println!(
            "[{}] {:>2}. {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
