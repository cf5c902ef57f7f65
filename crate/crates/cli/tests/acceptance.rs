//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use dlr_core::autodiff::{OpKind, Tape};
use dlr_core::datagen::{NormStats, WindowSpec, WindowedDataset};
use dlr_core::graph::{to_line_graph, Bus, BusId, Grid, Line, LineId};
use dlr_core::model::{count_params, Model, ModelConfig, ModelDims, QuantileVars, Variant};
use dlr_core::thermal::{ampacity, ConductorParams, WeatherSample};
use dlr_core::train::{total_loss, train, TrainConfig};
use dlr_core::{Execution, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn dlr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlr"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn dlr")
}

fn dlr_ok(args: &[&str]) -> Result<Output, String> {
    let out = dlr(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "`dlr {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(rand_distr::StandardNormal))
}

fn gradient_integrity() -> Result<String, String> {
    let t = Instant::now();
    let out = dlr_ok(&["gradcheck", "--seed", "7"])?;
    let elapsed = t.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    ensure(
        text.contains("all gradients match"),
        "report does not confirm every gradient",
    )?;
    for kind in OpKind::DIFFERENTIABLE {
        let line = format!("op:{}", kind.name());
        ensure(
            text.lines()
                .any(|l| l.starts_with("ok") && l.contains(&format!("{line} "))),
            format!("{line} missing"),
        )?;
    }
    ensure(
        text.lines()
            .any(|l| l.starts_with("ok") && l.contains("model:d-lgclstm ")),
        "end-to-end D-LGCLSTM case missing",
    )?;
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    for kind in OpKind::DIFFERENTIABLE {
        let out = dlr(&["gradcheck", "--seed", "7", "--inject-fault", kind.name()]);
        let err = String::from_utf8_lossy(&out.stderr);
        ensure(out.status.code() == Some(1), format!("fault in {kind} not detected"))?;
        ensure(
            err.contains(&format!("op:{}", kind.name())),
            format!("fault in {kind} not named"),
        )?;
    }
    Ok(format!(
        "{} ops and 5 model setups within 1e-4 in {:.2} s; 15 injected faults caught",
        OpKind::DIFFERENTIABLE.len(),
        elapsed.as_secs_f64()
    ))
}

fn random_connected_grid(rng: &mut ChaCha8Rng) -> Grid {
    let n = rng.random_range(2..=12usize);
    let buses: Vec<Bus> = (0..n)
        .map(|i| Bus {
            id: BusId(10 + 2 * i as u32),
            lat: 31.0,
            lon: -97.0,
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    let target = (n - 1 + rng.random_range(0..=n)).min(20).min(n * (n - 1) / 2);
    while pairs.len() < target {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !pairs.iter().any(|&(x, y)| (x == a && y == b) || (x == b && y == a)) {
            pairs.push((a, b));
        }
    }
    let lines = pairs
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| Line {
            id: LineId(k as u32 + 1),
            from: buses[a].id,
            to: buses[b].id,
            length_km: 5.0,
        })
        .collect();
    Grid::new(buses, lines).expect("valid grid")
}

fn graph_oracles() -> Result<String, String> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut pairs2 = 0;
    for g in 0..200 {
        let grid = random_connected_grid(&mut rng);
        let lines = grid.lines();
        let m = lines.len();
        ensure(m <= 20, "grid too large")?;
        let lg = to_line_graph(&grid);
        let share = |a: &Line, b: &Line| [a.from, a.to].iter().filter(|x| **x == b.from || **x == b.to).count();
        let near: Vec<Vec<bool>> = (0..m)
            .map(|i| (0..m).map(|j| i != j && share(&lines[i], &lines[j]) > 0).collect())
            .collect();
        for i in 0..m {
            let mut dist = vec![usize::MAX; m];
            dist[i] = 0;
            let mut q = VecDeque::from([i]);
            while let Some(u) = q.pop_front() {
                for v in 0..m {
                    if near[u][v] && dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            for j in 0..m {
                ensure(
                    (lg.adj1[(i, j)] == 1.0) == near[i][j] && (lg.adj1[(i, j)] == 0.0 || lg.adj1[(i, j)] == 1.0),
                    format!("graph {g}: adj1 ({i},{j})"),
                )?;
                ensure(
                    (lg.adj2[(i, j)] == 1.0) == (dist[j] == 2) && (lg.adj2[(i, j)] == 0.0 || lg.adj2[(i, j)] == 1.0),
                    format!("graph {g}: adj2 ({i},{j})"),
                )?;
                if lg.adj2[(i, j)] == 1.0 {
                    pairs2 += 1;
                    ensure(
                        share(&lines[i], &lines[j]) == 0,
                        format!("graph {g}: double-hop pair shares a bus"),
                    )?;
                }
            }
        }
    }
    let elapsed = t.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!(
        "200 graphs, {pairs2} double-hop entries, all endpoint-disjoint, {:.3} s",
        elapsed.as_secs_f64()
    ))
}

fn reduction_identity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..50 {
        let lines = rng.random_range(1..7);
        let dims = ModelDims {
            lines,
            input_dim: rng.random_range(1..9),
            horizon: rng.random_range(1..5),
        };
        let base = ModelConfig {
            hidden: rng.random_range(1..9),
            head_hidden: rng.random_range(1..6),
            ..ModelConfig::default()
        };
        let seed = rng.random();
        let build = |variant, op| {
            Model::new(
                ModelConfig {
                    variant,
                    ..base.clone()
                },
                dims,
                op,
                seed,
            )
            .unwrap()
        };
        let graph = build(Variant::DLgclstm, Some(Matrix::identity(lines)));
        let plain = build(Variant::Lstm, None);
        let history: Vec<Matrix> = (0..rng.random_range(1..10))
            .map(|_| normal(&mut rng, lines, dims.input_dim))
            .collect();
        let a = graph.predict(&history).map_err(|e| e.to_string())?;
        let b = plain.predict(&history).map_err(|e| e.to_string())?;
        let same = |x: &Matrix, y: &Matrix| {
            x.as_slice()
                .iter()
                .zip(y.as_slice())
                .all(|(p, q)| p.to_bits() == q.to_bits())
        };
        ensure(same(&a.0, &b.0) && same(&a.1, &b.1), format!("case {case} differs"))?;
    }
    Ok("50 random inputs bitwise identical".into())
}

fn quantile_correctness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let (e, tau) = (rng.random_range(1..4), rng.random_range(1..5));
        let (lo, hi, y) = (
            normal(&mut rng, e, tau),
            normal(&mut rng, e, tau),
            normal(&mut rng, e, tau),
        );
        let q = [rng.random_range(0.02..0.45), rng.random_range(0.55..0.98)];
        let mut naive = 0.0;
        for (b, level) in [(&lo, q[0]), (&hi, q[1])] {
            for (yv, bv) in y.as_slice().iter().zip(b.as_slice()) {
                let d = yv - bv;
                naive += if d >= 0.0 { level * d } else { (level - 1.0) * d };
            }
        }
        let mut tape = Tape::new();
        let vars = QuantileVars {
            lower: tape.constant(lo),
            upper: tape.constant(hi),
        };
        let target = tape.constant(y);
        let l = total_loss(&mut tape, vars, target, q).map_err(|e| e.to_string())?;
        worst = worst.max((tape.scalar(l) - naive).abs());
    }
    ensure(worst <= 1e-12, format!("pinball differs from naive loop by {worst:e}"))?;

    let spec = WindowSpec {
        history: 3,
        horizon: 4,
        stride: 1,
    };
    let (lines, windows) = (2, 400);
    let hours = windows - 1 + spec.history + spec.horizon;
    let features = (0..hours).map(|_| normal(&mut rng, lines, 3)).collect();
    let targets: Vec<Vec<f64>> = (0..lines)
        .map(|_| (0..hours).map(|_| rng.random::<f64>().powi(2)).collect())
        .collect();
    let stats = NormStats {
        feature_mean: vec![0.0; 3],
        feature_std: vec![1.0; 3],
        target_min: vec![0.0; lines],
        target_max: vec![1.0; lines],
    };
    let origin = chrono::NaiveDate::from_ymd_opt(2020, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let data = WindowedDataset::from_parts(features, targets, (0..windows).collect(), spec, stats, origin)
        .map_err(|e| e.to_string())?;
    let mut all: Vec<f64> = (0..data.len())
        .flat_map(|k| data.target_normalized(k).into_vec())
        .collect();
    all.sort_by(f64::total_cmp);
    let pct = |p: f64| all[((all.len() - 1) as f64 * p).round() as usize];
    let cfg = ModelConfig {
        variant: Variant::Lstm,
        hidden: 4,
        head_hidden: 4,
        shared_heads: true,
        ..ModelConfig::default()
    };
    let dims = ModelDims {
        lines,
        input_dim: 3,
        horizon: spec.horizon,
    };
    let model = Model::new(cfg, dims, None, 3).map_err(|e| e.to_string())?;
    let tcfg = TrainConfig {
        epochs: 25,
        batch_size: Some(16),
        learning_rate: 3e-3,
        weight_decay: 0.0,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(model, &data, &tcfg, Execution::Parallel, |_| {}).map_err(|e| e.to_string())?;
    let (mut lo, mut hi, mut n) = (0.0, 0.0, 0.0);
    for k in 0..data.len() {
        let (l, u) = out.model.predict(data.history(k)).map_err(|e| e.to_string())?;
        lo += l.sum();
        hi += u.sum();
        n += l.len() as f64;
    }
    let (lo, hi, q10, q90) = (lo / n, hi / n, pct(0.1), pct(0.9));
    ensure(
        (lo - q10).abs() <= 0.05 && (hi - q90).abs() <= 0.05,
        format!("bounds {lo:.3}/{hi:.3} vs percentiles {q10:.3}/{q90:.3}"),
    )?;
    Ok(format!(
        "bounds {lo:.3}/{hi:.3} vs empirical {q10:.3}/{q90:.3}; pinball max diff {worst:.1e} over 300 instances"
    ))
}

fn physics_sanity() -> Result<String, String> {
    let p = ConductorParams::drake();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let err = |e: dlr_core::Error| e.to_string();
    for i in 0..1000 {
        let w = WeatherSample {
            ambient_temp: rng.random_range(-25.0..45.0),
            wind_speed: rng.random_range(0.0..20.0),
            wind_direction: rng.random_range(0.0..360.0),
            solar_radiation: rng.random_range(0.0..1100.0),
        };
        let az = rng.random_range(0.0..180.0);
        let base = ampacity(&p, &w, az).map_err(err)?;
        let windier = WeatherSample {
            wind_speed: w.wind_speed + rng.random_range(0.01..5.0),
            ..w
        };
        let hotter = WeatherSample {
            ambient_temp: w.ambient_temp + rng.random_range(0.01..20.0),
            ..w
        };
        ensure(
            ampacity(&p, &windier, az).map_err(err)? >= base,
            format!("probe {i}: wind lowered ampacity"),
        )?;
        let hot = ampacity(&p, &hotter, az).map_err(err)?;
        ensure(
            hot < base || (hot == 0.0 && base == 0.0),
            format!("probe {i}: heat did not lower ampacity"),
        )?;
    }

    // Drake at 100 °C, 40 °C air, 0.61 m/s crosswind, full sun.
    let (ts, ta, d, v) = (100.0f64, 40.0f64, 0.02814f64, 0.61f64);
    let tf = (ts + ta) / 2.0;
    let mu = 1.458e-6 * (tf + 273.0).powf(1.5) / (tf + 383.4);
    let rho = 1.293 / (1.0 + 0.00367 * tf);
    let k = 2.424e-2 + 7.477e-5 * tf - 4.407e-9 * tf * tf;
    let re = d * rho * v / mu;
    let qc = (1.194 - 0.194) * (1.01 + 1.35 * re.powf(0.52)) * k * (ts - ta);
    let qr = 17.8 * d * 0.8 * (3.73f64.powi(4) - 3.13f64.powi(4));
    let qs = 0.8 * 1000.0 * d;
    let hand = ((qc + qr - qs) / 9.39e-5).sqrt();
    let got = ampacity(
        &p,
        &WeatherSample {
            ambient_temp: ta,
            wind_speed: v,
            wind_direction: 90.0,
            solar_radiation: 1000.0,
        },
        0.0,
    )
    .map_err(err)?;
    let rel = (got - hand).abs() / hand;
    ensure(rel <= 0.05, format!("reference {got:.1} A vs hand {hand:.1} A"))?;
    Ok(format!(
        "1000 probes monotone; reference {got:.2} A vs hand {hand:.2} A ({:.2e} rel)",
        rel
    ))
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn end_to_end_coverage() -> Result<String, String> {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, out) = (dir.path().join("data"), dir.path().join("out"));
    dlr_ok(&["gen-data", "--config", "demo-20bus", "--out-dir", s(&data)])?;
    let mut metrics = BTreeMap::new();
    for variant in ["d-lgclstm", "lstm"] {
        dlr_ok(&[
            "train",
            "--config",
            "demo-20bus",
            "--variant",
            variant,
            "--data-dir",
            s(&data),
            "--out-dir",
            s(&out),
        ])?;
        let ckpt = out.join(format!("{variant}.ckpt.json"));
        dlr_ok(&["eval", "--checkpoint", s(&ckpt), "--out-dir", s(&out)])?;
        let m = read_json(&out.join(format!("{variant}.metrics.json")))?;
        let get = |k: &str| m[k].as_f64().ok_or_else(|| format!("{variant} metrics lack {k}"));
        metrics.insert(variant, (get("picp")?, get("qs")?));
    }
    let elapsed = t.elapsed();
    let (picp, qs) = metrics["d-lgclstm"];
    let (_, qs_lstm) = metrics["lstm"];
    let detail = format!(
        "D-LGCLSTM PICP {picp:.2}, QS {qs:.3} vs LSTM QS {qs_lstm:.3}, {:.0} s",
        elapsed.as_secs_f64()
    );
    ensure((picp - 80.0).abs() <= 10.0, format!("coverage off nominal: {detail}"))?;
    ensure(qs <= qs_lstm, format!("baseline scores better: {detail}"))?;
    ensure(elapsed < Duration::from_secs(20 * 60), format!("too slow: {detail}"))?;
    Ok(detail)
}

fn parameter_accounting() -> Result<String, String> {
    let mut shown = String::new();
    for (input, h) in [(20, 64), (5, 3), (13, 32), (1, 1)] {
        let dims = ModelDims {
            lines: 9,
            input_dim: input,
            horizon: 24,
        };
        let cell = |variant| {
            let cfg = ModelConfig {
                variant,
                hidden: h,
                ..ModelConfig::default()
            };
            count_params(&cfg, &dims).cell_per_direction
        };
        let (double, single) = (cell(Variant::DLgclstm), cell(Variant::Lgclstm));
        // fused gates: 4 blocks of input weights, recurrent weights and bias
        let layer1 = 4 * (input * h + h * h + h);
        let layer2 = 4 * (h * h + h * h + h);
        ensure(double == layer1, format!("D-LGCLSTM cell {double} != {layer1}"))?;
        ensure(
            single == layer1 + layer2,
            format!("LGCLSTM cell {single} != {}", layer1 + layer2),
        )?;
        ensure(double < single, "double-hop cell is not smaller")?;
        if shown.is_empty() {
            shown = format!("d={input}, h={h}: D-LGCLSTM cell {double} < LGCLSTM cell {single}");
        }
    }
    Ok(format!("{shown}; hand counts match on 4 shapes"))
}

type Artifacts = BTreeMap<PathBuf, Vec<u8>>;

fn snapshot(dir: &Path) -> Artifacts {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap_or_default();
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    files
}

fn small_config(dir: &Path, execution: &str) -> Result<PathBuf, String> {
    let out = dlr_ok(&["show-config", "--config", "demo-20bus"])?;
    let mut cfg: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    cfg["execution"] = execution.into();
    cfg["data"]["days"] = 14.into();
    cfg["model"]["hidden"] = 6.into();
    cfg["model"]["head_hidden"] = 5.into();
    cfg["train"]["epochs"] = 3.into();
    cfg["io"]["data_dir"] = "data".into();
    cfg["io"]["out_dir"] = "out".into();
    let path = dir.join(format!("small-{execution}.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).map_err(|e| e.to_string())?;
    Ok(path)
}

/// Every command once, run from `dir`; returns the produced files and the
/// standard output of each command.
fn run_all(dir: &Path, config: &Path) -> Result<(Artifacts, Vec<Vec<u8>>), String> {
    let out = dir.join("out");
    let (data, cfg) = (dir.join("data"), s(config));
    let ckpt = out.join("d-lgclstm.ckpt.json");
    let runs: Vec<Vec<&str>> = vec![
        vec!["show-config", "--config", cfg],
        vec!["gen-data", "--config", cfg, "--out-dir", s(&data)],
        vec!["train", "--config", cfg, "--data-dir", s(&data), "--out-dir", s(&out)],
        vec!["eval", "--checkpoint", s(&ckpt), "--out-dir", s(&out)],
        vec!["bench", "--config", cfg, "--data-dir", s(&data), "--out-dir", s(&out)],
        vec![
            "forecast",
            "--checkpoint",
            s(&ckpt),
            "--line",
            "1",
            "--robust",
            "--svg",
            "--out-dir",
            s(&out),
        ],
        vec!["gradcheck", "--seed", "3"],
    ];
    let mut stdouts = Vec::new();
    for args in runs {
        stdouts.push(dlr_ok(&args)?.stdout);
    }
    Ok((snapshot(&out).into_iter().chain(snapshot(&data)).collect(), stdouts))
}

fn determinism() -> Result<String, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = small_config(root.path(), "parallel")?;
    let work = root.path().join("run");
    let (first, out1) = run_all(&work, &config)?;
    std::fs::remove_dir_all(&work).map_err(|e| e.to_string())?;
    let (second, out2) = run_all(&work, &config)?;
    ensure(!first.is_empty(), "no artifacts produced")?;
    ensure(first.keys().eq(second.keys()), "different artifact sets")?;
    for (path, bytes) in &first {
        ensure(
            &second[path] == bytes,
            format!("{} differs between runs", path.display()),
        )?;
    }
    ensure(out1 == out2, "standard output differs between runs")?;

    let seq = small_config(root.path(), "sequential")?;
    let alt = root.path().join("seq");
    let (third, _) = run_all(&alt, &seq)?;
    let bin = PathBuf::from("d-lgclstm.ckpt.bin");
    ensure(third[&bin] == first[&bin], "sequential and parallel weights differ")?;
    Ok(format!(
        "{} artifacts and 7 command outputs byte-identical across reruns; weights identical sequential vs parallel",
        first.len()
    ))
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("gradient integrity", gradient_integrity),
        ("graph oracles", graph_oracles),
        ("reduction identity", reduction_identity),
        ("quantile correctness", quantile_correctness),
        ("physics sanity", physics_sanity),
        ("end-to-end coverage", end_to_end_coverage),
        ("parameter accounting", parameter_accounting),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
