use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ballwise::evalsim::{standard_sweep, MeshSource, ScenarioConfig, TruthMask};
use ballwise::mesh::build_icosphere;
use serde_json::{json, Value};

fn ballwise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ballwise"))
        .args(args)
        .env_remove("BALLWISE_SEED")
        .env_remove("BALLWISE_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn off_vertex_count(path: &Path) -> usize {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    assert_eq!(lines.next().unwrap().trim(), "OFF");
    lines.next().unwrap().split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn tessellate_writes_off() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ico1.off");
    let run = ballwise(&["tessellate", "--order", "1", "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(off_vertex_count(&out), 12);
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.path().join("ico1.off.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "tessellate");

    let out = dir.path().join("ico25.off");
    assert_eq!(code(&ballwise(&["tessellate", "--order", "25", "--out", s(&out)])), 0);
    assert_eq!(off_vertex_count(&out), 6252);
}

#[test]
fn tessellate_order_zero_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad.off");
    let run = ballwise(&["tessellate", "--order", "0", "--out", s(&out)]);
    assert_eq!(code(&run), 2);
    assert!(!out.exists());
}

/// Two-sample data on an order-1 icosphere with a shift near vertex 0.
fn write_signals_csv(path: &Path, n: usize) {
    let mesh = build_icosphere(1, 1.0).unwrap();
    let positions = mesh.positions().unwrap();
    let mut text = (0..12).map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    text.push('\n');
    for i in 0..n {
        let row: Vec<String> = (0..12)
            .map(|v| {
                let noise = ((i * 37 + v * 11) % 17) as f64 / 17.0 - 0.5;
                let shift = if i >= n / 2 { 1.5 * (positions[v][0] - positions[0][0]).abs().min(1.0) } else { 0.0 };
                (noise + shift).to_string()
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn base_config(n: usize) -> Value {
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    json!({
        "domain": {"components": [{"kind": "mesh", "icosphere": {"order": 1}, "radius_cap": "inf"}]},
        "data": {"path": "signals.csv"},
        "model": {
            "design": {"two_sample": {"labels": labels}},
            "hypothesis": {"coefficient": 1, "statistic": "t_two_sample_sq"}
        },
        "inference": {"permutations": 199, "seed": 11},
        "output": {"points": "points.csv", "balls": "balls.csv"}
    })
}

fn setup(config: &Value) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    write_signals_csv(&dir.path().join("signals.csv"), 8);
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, serde_json::to_vec_pretty(config).unwrap()).unwrap();
    (dir, cfg)
}

fn read_column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let c = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[c].parse().unwrap()).collect()
}

#[test]
fn minimal_test_run() {
    let (dir, cfg) = setup(&base_config(8));
    let run = ballwise(&["test", "--config", s(&cfg)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let points = dir.path().join("points.csv");
    let text = std::fs::read_to_string(&points).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert!(text.starts_with("point,c0_vertex,c0_x,c0_y,c0_z,t_obs,p,p_adj\n"));
    let p = read_column(&points, "p");
    let p_adj = read_column(&points, "p_adj");
    assert!(p.iter().zip(&p_adj).all(|(a, b)| b >= a));
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["permutations"], 199);
    assert_eq!(manifest["radius_caps"], json!(["inf"]));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["rng_algorithm"].as_str().unwrap().contains("ChaCha8"));
    assert!(manifest["family_size"].as_u64().unwrap() >= 12);
    assert!(manifest["wall_time_seconds"].as_f64().is_some());
}

#[test]
fn missing_data_file_exits_2_naming_the_path() {
    let mut config = base_config(8);
    config["data"]["path"] = json!("nowhere/signals.csv");
    let (_dir, cfg) = setup(&config);
    let run = ballwise(&["test", "--config", s(&cfg)]);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("nowhere/signals.csv"), "{}", stderr(&run));
}

#[test]
fn unknown_config_key_exits_2() {
    let mut config = base_config(8);
    config["inference"]["bootstrap"] = json!(true);
    let (_dir, cfg) = setup(&config);
    assert_eq!(code(&ballwise(&["test", "--config", s(&cfg)])), 2);
}

#[test]
fn degenerate_data_exits_1() {
    let (dir, cfg) = setup(&base_config(8));
    let mut text = (0..12).map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    text.push('\n');
    for i in 0..8 {
        let row = [if i < 4 { "0" } else { "1" }; 12];
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(dir.path().join("signals.csv"), text).unwrap();
    let run = ballwise(&["test", "--config", s(&cfg)]);
    assert_eq!(code(&run), 1, "{}", stderr(&run));
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, cfg) = setup(&base_config(8));
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    for out in [&first, &second] {
        let run = ballwise(&["test", "--config", s(&cfg), "--out-dir", s(out), "--threads", "2"]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
    }
    for file in ["points.csv", "balls.csv"] {
        assert_eq!(
            std::fs::read(first.join(file)).unwrap(),
            std::fs::read(second.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn seed_overrides() {
    let (dir, cfg) = setup(&base_config(8));
    let run = ballwise(&["test", "--config", s(&cfg), "--seed", "5", "--out-dir", s(&dir.path().join("flag"))]);
    assert_eq!(code(&run), 0);
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("flag/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);

    let run = Command::new(env!("CARGO_BIN_EXE_ballwise"))
        .args(["test", "--config", s(&cfg), "--out-dir", s(&dir.path().join("env"))])
        .env("BALLWISE_SEED", "6")
        .env("BALLWISE_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("env/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 6);
    assert_eq!(manifest["threads"], 1);
}

#[test]
fn binary_data_and_distance_cache_match_csv_run() {
    let (dir, cfg) = setup(&base_config(8));
    assert_eq!(code(&ballwise(&["test", "--config", s(&cfg)])), 0);

    // same signals as flat binary
    let mut r = csv::Reader::from_path(dir.path().join("signals.csv")).unwrap();
    let rows: Vec<Vec<f64>> = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|c| c.parse().unwrap()).collect())
        .collect();
    let mut bytes = Vec::new();
    bytes.extend((rows.len() as u64).to_le_bytes());
    bytes.extend(12u64.to_le_bytes());
    for v in rows.iter().flatten() {
        bytes.extend(v.to_le_bytes());
    }
    std::fs::write(dir.path().join("signals.bin"), bytes).unwrap();

    let mesh = dir.path().join("ico1.off");
    assert_eq!(code(&ballwise(&["tessellate", "--order", "1", "--out", s(&mesh)])), 0);
    let cache = dir.path().join("ico1.dist");
    let run = ballwise(&["distances", "--mesh", s(&mesh), "--out", s(&cache)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));

    let mut config = base_config(8);
    config["data"] = json!({"path": "signals.bin", "format": "binary"});
    config["domain"]["components"][0] =
        json!({"kind": "mesh", "path": "ico1.off", "distances": "ico1.dist", "radius_cap": "inf"});
    config["output"] = json!({"points": "cached/points.csv", "manifest": "cached/manifest.json"});
    let cfg2 = dir.path().join("cached.json");
    std::fs::write(&cfg2, serde_json::to_vec(&config).unwrap()).unwrap();
    let run = ballwise(&["test", "--config", s(&cfg2)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    for col in ["t_obs", "p", "p_adj"] {
        let a = read_column(&dir.path().join("points.csv"), col);
        let b = read_column(&dir.path().join("cached/points.csv"), col);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{col}: {x} vs {y}");
        }
    }
}

#[test]
fn adjust_under_smaller_cap() {
    let (dir, cfg) = setup(&base_config(8));
    assert_eq!(code(&ballwise(&["test", "--config", s(&cfg)])), 0);
    let run = ballwise(&["adjust", "--config", s(&cfg), "--caps", "0.6"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let full = read_column(&dir.path().join("points.csv"), "p_adj");
    let p = read_column(&dir.path().join("points.csv"), "p");
    let small = read_column(&dir.path().join("adjusted.csv"), "p_adj");
    for g in 0..12 {
        assert!(small[g] <= full[g] && small[g] >= p[g]);
    }
    assert!(dir.path().join("adjusted.csv.manifest.json").exists());

    // a tiny cap leaves only the singletons
    let run = ballwise(&["adjust", "--config", s(&cfg), "--caps", "1e-6", "--out", "tiny.csv"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let tiny = read_column(&dir.path().join("tiny.csv"), "p_adj");
    for g in 0..12 {
        assert!(tiny[g] <= small[g] && tiny[g] >= p[g]);
    }
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("tiny.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["family_size"], 12);
}

#[test]
fn adjust_rejects_larger_cap() {
    let mut config = base_config(8);
    config["domain"]["components"][0]["radius_cap"] = json!(0.5);
    let (_dir, cfg) = setup(&config);
    assert_eq!(code(&ballwise(&["test", "--config", s(&cfg)])), 0);
    assert_eq!(code(&ballwise(&["adjust", "--config", s(&cfg), "--caps", "inf"])), 2);
    assert_eq!(code(&ballwise(&["adjust", "--config", s(&cfg), "--caps", "0.2,0.2"])), 2);
}

#[test]
fn product_domain_run() {
    let mut config = base_config(8);
    config["domain"]["components"] = json!([
        {"kind": "interval", "points": 4, "start": 0.0, "end": 1.0, "radius_cap": 0.5},
        {"kind": "circle", "points": 3, "circumference": 12.0}
    ]);
    let (dir, cfg) = setup(&config);
    let run = ballwise(&["test", "--config", s(&cfg)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let text = std::fs::read_to_string(dir.path().join("points.csv")).unwrap();
    assert!(text.starts_with("point,c0_index,c0_t,c1_index,c1_t,t_obs,p,p_adj\n"));
    assert!(text.contains("\n5,1,0.3333333333333333,2,8,"));
    let balls = std::fs::read_to_string(dir.path().join("balls.csv")).unwrap();
    assert!(balls.starts_with("ball,c0_center,c0_radius,c0_min_radius,c1_center,c1_radius,c1_min_radius,t_obs,p\n"));
}

fn null_scenario(replicates: usize) -> ScenarioConfig {
    let mut cfg = standard_sweep(2, 19, replicates, 3)[0].clone();
    cfg.id = "null".into();
    cfg.truth = TruthMask::None;
    cfg.signal_amplitude = 0.0;
    cfg
}

#[test]
fn simulate_single_null_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.json");
    std::fs::write(&sweep, serde_json::to_vec(&vec![null_scenario(10)]).unwrap()).unwrap();
    let run = ballwise(&["simulate", "--config", s(&sweep)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let out = dir.path().join("simulation.csv");
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scenario,sensitivity,fwer,false_positive_rate,false_discovery_rate");
    assert_eq!(lines.len(), 2);
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[0], "null");
    assert_eq!(cells[1], "");
    for c in &cells[2..] {
        let v: f64 = c.parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn simulate_zero_replicates_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.json");
    std::fs::write(&sweep, serde_json::to_vec(&vec![null_scenario(0)]).unwrap()).unwrap();
    let run = ballwise(&["simulate", "--config", s(&sweep)]);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("replicates"));
}

#[test]
fn simulate_standard_sweep_has_twelve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.json");
    let scenarios: Vec<ScenarioConfig> = standard_sweep(2, 19, 2, 8)
        .into_iter()
        .map(|mut s| {
            s.mesh = MeshSource::Icosphere { order: 2, radius: 1.0 };
            s
        })
        .collect();
    std::fs::write(&sweep, serde_json::to_vec_pretty(&scenarios).unwrap()).unwrap();
    let run = ballwise(&["simulate", "--config", s(&sweep), "--out", "table.csv"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let text = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(text.lines().count(), 13);
}
