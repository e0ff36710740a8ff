use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pfml_core::metrics::RetrievalResult;
use pfml_core::optim::TrainingReport;
use pfml_core::synthdata::LabeledDataset;
use serde_json::Value;

const SMALL: &str = "optimizer.steps = 60\nbench.seeds = 2\n";

fn pfml(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfml"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn zero_step_training_writes_an_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), "optimizer.steps = 0\n").unwrap();
    let out = pfml(dir.path(), &["train", "--config", "c.cfg", "--out", "o", "--deterministic"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: TrainingReport = serde_json::from_str(&fs::read_to_string(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert!(report.energy_trace.is_empty());
    assert_eq!(report.final_energy, None);
    assert_eq!(report.wall_time_seconds, 0.0);
    for f in ["train_charges.csv", "test_embeddings.csv", "retrieval.json"] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
}

#[test]
fn train_artifacts_are_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), format!("{SMALL}metrics.eval_every = 20\n")).unwrap();
    let out = pfml(dir.path(), &["train", "--config", "c.cfg", "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("o");

    let r: RetrievalResult = serde_json::from_str(&fs::read_to_string(o.join("retrieval.json")).unwrap()).unwrap();
    assert_eq!(r.num_queries, 200);
    assert!(r.at(1).unwrap() <= r.at(8).unwrap());
    assert_eq!(json(&o.join("history.json")).as_array().unwrap().len(), 3);

    // 4 training classes x 50 samples, then 15 proxies per class
    let charges = fs::read_to_string(o.join("train_charges.csv")).unwrap();
    let mut lines = charges.lines();
    assert!(lines.next().unwrap().starts_with("entity_id,class_id,kind,x0,"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 200 + 4 * 15);
    assert_eq!(rows.iter().filter(|r| r[2] == "proxy").count(), 60);
    assert!(rows.iter().all(|r| r.len() == 3 + 16));

    let test = fs::read_to_string(o.join("test_embeddings.csv")).unwrap();
    assert!(test.starts_with("id,label,x0,"));
    assert_eq!(test.lines().count(), 201);
}

#[test]
fn gen_writes_a_readable_clean_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = pfml(dir.path(), &["gen", "--out", "o", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    let text = fs::read(dir.path().join("o/dataset.csv")).unwrap();
    let data = LabeledDataset::read_csv(&text[..]).unwrap();
    assert_eq!(data.len(), 400);
    assert_eq!(data.dim(), 32);
    assert_eq!(data.noisy_count(), 0);
}

#[test]
fn training_from_a_dataset_file_matches_generation() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pfml(dir.path(), &["gen", "--out", "g", "--seed", "5"])), 0);
    fs::write(dir.path().join("gen.cfg"), SMALL).unwrap();
    fs::write(dir.path().join("file.cfg"), format!("{SMALL}data.path = g/dataset.csv\n")).unwrap();
    for (cfg, out) in [("gen.cfg", "a"), ("file.cfg", "b")] {
        let o = pfml(dir.path(), &["train", "--config", cfg, "--out", out, "--seed", "5", "--deterministic"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["retrieval.json", "report.json", "test_embeddings.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn clean_noise_bench_reproduces_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), format!("{SMALL}bench.rates = 0.0\n")).unwrap();
    let out = pfml(dir.path(), &["noise-bench", "--config", "c.cfg", "--out", "nb", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("nb/noise_bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "rate,kernel,seed,r_at_1,r_at_2");
    assert_eq!(rows.len(), 1 + 2 * 2);
    assert!(rows[1].starts_with("0,cpml,4,") && rows[4].starts_with("0,pfml,5,"));

    let out = pfml(dir.path(), &["train", "--config", "c.cfg", "--out", "t", "--seed", "5"]);
    assert_eq!(code(&out), 0);
    let r = json(&dir.path().join("t/retrieval.json"));
    let bench_r1: f64 = rows[4].split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(r["recall"]["1"].as_f64().unwrap(), bench_r1);

    let summary = json(&dir.path().join("nb/summary.json"));
    assert_eq!(summary["groups"].as_array().unwrap().len(), 2);
    assert!(summary["drops"].as_array().unwrap().is_empty());
}

#[test]
fn ablation_rows_cover_values_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.cfg"),
        format!("{SMALL}ablate.axis = delta_gap\nablate.values = 0.2, 0\n"),
    )
    .unwrap();
    let out = pfml(dir.path(), &["ablate", "--config", "c.cfg", "--out", "ab"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("ab/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "axis,value,seed,r_at_1");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("delta_gap,0,0,") && rows[4].starts_with("delta_gap,0.2,1,"));
    let summary = json(&dir.path().join("ab/summary.json"));
    assert_eq!(summary["axis"], "delta_gap");
}

#[test]
fn checks_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, key) in [("prop1", "instances"), ("corollary1", "trials"), ("gradcheck", "cases")] {
        let out = pfml(dir.path(), &["check", kind, "--count", "3", "--out", "c"]);
        assert_eq!(code(&out), 0, "{kind}: {}", String::from_utf8_lossy(&out.stderr));
        let report = json(&dir.path().join(format!("c/check_{kind}.json")));
        assert_eq!(report["passed"], true);
        assert!(report["report"][key].is_array(), "{kind}");
    }
    let prop1 = json(&dir.path().join("c/check_prop1.json"));
    let point = &prop1["report"]["instances"][0]["per_point"][0];
    assert!(point["dist"].is_number() && point["within_delta"].is_boolean());
}

#[test]
fn w2_of_point_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.csv"), "x0\n0\n").unwrap();
    fs::write(dir.path().join("d.csv"), "x0\n1.0\n0.3\n").unwrap();
    let out = pfml(dir.path(), &["w2", "--proxies", "p.csv", "--data", "d.csv", "--out", "w"]);
    assert_eq!(code(&out), 0);
    let r = json(&dir.path().join("w/w2.json"));
    assert_eq!(r["w2"], 0.3);
    assert_eq!(r["assignment"], serde_json::json!([1]));
}

#[test]
fn field_grid_from_charges() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("ch.csv"),
        "entity_id,class_id,kind,x0,x1\n0,0,sample,0,0\n1,1,sample,1,0\n",
    )
    .unwrap();
    let out = pfml(
        dir.path(),
        &["field-grid", "--charges", "ch.csv", "--resolution", "3", "--bounds", "-1,1,-1,1", "--out", "g"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("g/field_grid.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "x,y,psi");
    assert_eq!(rows.len(), 10);
    // centre cell sits on the class-0 charge: -delta^-4 attraction plus the
    // flat repulsion delta^-4 of the class-1 charge one unit away
    let centre: Vec<f64> = rows[5].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&centre[..2], &[0.0, 0.0]);
    assert!(centre[2].abs() < 1e-9, "{}", centre[2]);
}

#[test]
fn environment_overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pfml"))
        .current_dir(dir.path())
        .args(["train", "--out", "o"])
        .env("PF_OPTIMIZER_STEPS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let report = json(&dir.path().join("o/report.json"));
    assert_eq!(report["steps"], 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("bad.cfg"), "seed = 1\nbogus.key = 3\n").unwrap();
    let out = pfml(p, &["train", "--config", "bad.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:2"));

    fs::write(p.join("rates.cfg"), "bench.rates = 0.5, 1.0\n").unwrap();
    assert_eq!(code(&pfml(p, &["noise-bench", "--config", "rates.cfg"])), 2);
    fs::write(p.join("empty.cfg"), "bench.rates =\n").unwrap();
    assert_eq!(code(&pfml(p, &["noise-bench", "--config", "empty.cfg"])), 2);
    fs::write(p.join("m.cfg"), "ablate.values = 1.5\n").unwrap();
    assert_eq!(code(&pfml(p, &["ablate", "--config", "m.cfg"])), 2);
    assert_eq!(code(&pfml(p, &["train", "--config", "missing.cfg"])), 2);
    assert_eq!(code(&pfml(p, &["frobnicate"])), 2);

    fs::write(p.join("x.csv"), "x0\n0\n").unwrap();
    fs::write(p.join("y.csv"), "y0\n0\n").unwrap();
    assert_eq!(code(&pfml(p, &["w2", "--proxies", "x.csv", "--data", "y.csv"])), 2);

    // coincident samples of different classes make the repulsion overflow
    let mut data = String::from("id,label,true_label,noisy,x0,x1\n");
    for i in 0..16 {
        data += &format!("{i},{c},{c},0,0.5,0.5\n", c = i % 4);
    }
    fs::write(p.join("same.csv"), data).unwrap();
    fs::write(
        p.join("diverge.cfg"),
        "data.path = same.csv\nkernel.alpha = 30\nencoder.out_dim = 2\noptimizer.batch_size = 4\noptimizer.classes_per_batch = 2\n",
    )
    .unwrap();
    let out = pfml(p, &["train", "--config", "diverge.cfg", "--out", "d"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
