use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dlr_core::datagen::io::{format_timestamp, schema_hash};
use dlr_core::datagen::{GeneratedData, WindowSpec, WindowedDataset};
use dlr_core::graph::{to_line_graph, LineGraphIndex, LineId};
use dlr_core::metrics::{write_bench_csv, BenchRow, MetricReport};
use dlr_core::model::{operator_for, Checkpoint, Model, TrainingRecord, Variant};
use dlr_core::train::{self, TrainOutcome};
use dlr_core::verify::gradient_suite;
use dlr_core::Execution;

use crate::config::RunConfig;
use crate::svg::interval_chart;
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.into()))
}

fn load_dataset(dir: &Path) -> Result<GeneratedData, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "dataset directory {} does not exist; run `dlr gen-data` first",
            dir.display()
        )));
    }
    GeneratedData::load(dir).map_err(|e| match e {
        dlr_core::Error::InvalidInput(msg) => CliError::Usage(format!("{msg}; run `dlr gen-data` first")),
        other => CliError::Runtime(other),
    })
}

struct Prepared {
    train: WindowedDataset,
    test: WindowedDataset,
    lg: LineGraphIndex,
}

fn prepare(dir: &Path, window: WindowSpec, exec: Execution) -> Result<Prepared, CliError> {
    let data = load_dataset(dir)?;
    let (train, test) = data.split(window, exec)?;
    let lg = to_line_graph(&data.grid);
    log::info!(
        "dataset {}: {} lines, {} train / {} test windows",
        dir.display(),
        lg.node_count(),
        train.len(),
        test.len()
    );
    Ok(Prepared { train, test, lg })
}

pub fn gen_data(config: &str, out_dir: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let dir = out_dir.unwrap_or_else(|| cfg.io.data_dir.clone());
    let data = GeneratedData::generate(
        cfg.topology()?,
        cfg.data.days,
        cfg.start()?,
        &cfg.weather,
        &cfg.thermal,
        cfg.seed,
        cfg.execution,
    )?;
    let manifest = data.write(&dir, cfg.window, cfg.execution)?;
    println!(
        "wrote {}: {} buses, {} lines ({} parallel dropped), {} hours, {} train / {} test windows",
        dir.display(),
        manifest.bus_count,
        manifest.line_count,
        manifest.dropped_parallel_lines.len(),
        manifest.hours,
        manifest.train_windows,
        manifest.test_windows
    );
    Ok(())
}

fn checkpoint_path(out_dir: &Path, variant: Variant) -> PathBuf {
    out_dir.join(format!("{}.ckpt.json", variant.name()))
}

fn save_trained(
    outcome: &TrainOutcome,
    prep: &Prepared,
    data_dir: &Path,
    seed: u64,
    path: &Path,
) -> Result<(), CliError> {
    let mut ck = Checkpoint::from_model(
        &outcome.model,
        prep.lg.node_origin.clone(),
        schema_hash(),
        prep.train.spec(),
        prep.train.stats().clone(),
        Some(data_dir.to_path_buf()),
        Some(TrainingRecord {
            seed,
            epochs_run: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.best_val_loss,
            train_windows: outcome.train_windows,
            val_windows: outcome.val_windows,
        }),
    );
    ck.save(path)?;
    Ok(())
}

pub fn train(
    config: &str,
    variant: Option<Variant>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let data_dir = data_dir.unwrap_or_else(|| cfg.io.data_dir.clone());
    let out_dir = out_dir.unwrap_or_else(|| cfg.io.out_dir.clone());
    let mut model_cfg = cfg.model.clone();
    if let Some(v) = variant {
        model_cfg.variant = v;
    }
    let prep = prepare(&data_dir, cfg.window, cfg.execution)?;
    let model = train::build_model(&model_cfg, &prep.train, &prep.lg, cfg.train.seed)?;
    let name = model_cfg.variant.display_name();
    let outcome = train::train(model, &prep.train, &cfg.train, cfg.execution, |_| {})?;

    create_dir(&out_dir)?;
    let ckpt = checkpoint_path(&out_dir, model_cfg.variant);
    save_trained(&outcome, &prep, &data_dir, cfg.train.seed, &ckpt)?;
    let curve = out_dir.join(format!("{}.loss.csv", model_cfg.variant.name()));
    train::write_loss_curve(&curve, &outcome.history)?;
    println!(
        "{name}: {} params, best epoch {} (val loss {:.5}), checkpoint {}",
        outcome.model.param_count().total(),
        outcome.best_epoch,
        outcome.best_val_loss,
        ckpt.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} not found; create one with `dlr train`",
            path.display()
        )));
    }
    Ok(Checkpoint::load(path)?)
}

/// Rebuilds the test split a checkpoint was trained against and checks
/// that the data pipeline still matches it.
fn restore(ck: Checkpoint, data_dir: Option<PathBuf>, exec: Execution) -> Result<(Model, Prepared), CliError> {
    let data_dir = data_dir
        .or_else(|| ck.meta.data_dir.clone())
        .ok_or_else(|| CliError::Usage("checkpoint has no dataset directory; pass --data-dir".into()))?;
    if ck.meta.schema_hash != schema_hash() {
        return Err(CliError::Usage(
            "checkpoint was trained on a different feature schema".into(),
        ));
    }
    let prep = prepare(&data_dir, ck.meta.window, exec)?;
    if prep.lg.node_origin != ck.meta.line_ids {
        return Err(CliError::Usage(format!(
            "dataset {} has different lines than the checkpoint",
            data_dir.display()
        )));
    }
    if prep.train.stats() != &ck.meta.normalization {
        return Err(CliError::Usage(format!(
            "dataset {} does not reproduce the checkpoint's normalization",
            data_dir.display()
        )));
    }
    let op = operator_for(ck.meta.config.variant, &prep.lg);
    let model = ck.into_model(op)?;
    Ok((model, prep))
}

fn write_report(report: &MetricReport, out_dir: &Path, stem: &str) -> Result<(), CliError> {
    create_dir(out_dir)?;
    report.write_json(&out_dir.join(format!("{stem}.metrics.json")))?;
    report.write_csv(&out_dir.join(format!("{stem}.metrics.csv")))?;
    Ok(())
}

fn summary(r: &MetricReport) -> String {
    format!(
        "{:<10} PICP {:6.2}  ACE {:5.2}  PINAW {:6.2}  IS {:7.2}  QS {:6.3}  params {}",
        r.method, r.picp, r.ace, r.pinaw, r.interval_score, r.qs, r.params
    )
}

pub fn eval(
    checkpoint: &Path,
    config: Option<&str>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = config.map(RunConfig::load).transpose()?;
    let ck = load_checkpoint(checkpoint)?;
    let variant = ck.meta.config.variant;
    let exec = cfg.as_ref().map_or(Execution::default(), |c| c.execution);
    let data_dir = data_dir.or_else(|| cfg.as_ref().map(|c| c.io.data_dir.clone()));
    let out_dir = out_dir
        .or_else(|| cfg.as_ref().map(|c| c.io.out_dir.clone()))
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    let (model, prep) = restore(ck, data_dir, exec)?;
    let (report, _) = train::evaluate(&model, &prep.test, &prep.lg.node_origin, variant.display_name(), exec)?;
    write_report(&report, &out_dir, variant.name())?;
    println!("{}", summary(&report));
    Ok(())
}

pub fn bench(config: &str, data_dir: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let data_dir = data_dir.unwrap_or_else(|| cfg.io.data_dir.clone());
    let out_dir = out_dir.unwrap_or_else(|| cfg.io.out_dir.clone());
    let prep = prepare(&data_dir, cfg.window, cfg.execution)?;
    let entries = train::benchmark(
        &cfg.eval.variants,
        &cfg.model,
        &cfg.train,
        &prep.train,
        &prep.test,
        &prep.lg,
        cfg.execution,
    )?;
    create_dir(&out_dir)?;
    for e in &entries {
        let stem = format!("bench-{}", e.variant.name());
        write_report(&e.report, &out_dir, &stem)?;
        train::write_loss_curve(&out_dir.join(format!("{stem}.loss.csv")), &e.outcome.history)?;
        save_trained(
            &e.outcome,
            &prep,
            &data_dir,
            cfg.train.seed,
            &out_dir.join(format!("{stem}.ckpt.json")),
        )?;
    }
    let rows: Vec<BenchRow> = entries.iter().map(|e| BenchRow::from(&e.report)).collect();
    write_bench_csv(&out_dir.join("bench.csv"), &rows)?;
    for e in &entries {
        println!("{}", summary(&e.report));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn forecast(
    checkpoint: &Path,
    line: u32,
    robust: bool,
    svg: bool,
    window: Option<usize>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let Some(pos) = ck.meta.line_ids.iter().position(|&id| id == LineId(line)) else {
        return Err(CliError::Usage(format!(
            "unknown line id {line}; the checkpoint covers {} lines",
            ck.meta.line_ids.len()
        )));
    };
    let exec = Execution::default();
    let out_dir = out_dir.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    let (model, prep) = restore(ck, data_dir, exec)?;
    let mut forecasts = train::forecast_windows(&model, &prep.test, exec)?;
    if let Some(k) = window {
        if k >= forecasts.len() {
            return Err(CliError::Usage(format!(
                "window {k} out of range; there are {} test windows",
                forecasts.len()
            )));
        }
        forecasts = vec![forecasts.swap_remove(k)];
    }

    let mut csv = String::from("timestamp,hour,y_true,y_lower,y_upper");
    csv.push_str(if robust { ",y_robust\n" } else { "\n" });
    let (mut actual, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new());
    for f in &forecasts {
        for h in 0..f.target.cols() {
            let t = f.horizon_start + chrono::Duration::hours(h as i64);
            let (y, lo, hi) = (f.target[(pos, h)], f.lower[(pos, h)], f.upper[(pos, h)]);
            let _ = write!(csv, "{},{},{y},{lo},{hi}", format_timestamp(t), h + 1);
            if robust {
                let _ = write!(csv, ",{lo}");
            }
            csv.push('\n');
            actual.push(y);
            lower.push(lo);
            upper.push(hi);
        }
    }
    create_dir(&out_dir)?;
    let stem = format!("forecast-line{line}");
    let csv_path = out_dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, csv).map_err(|e| CliError::Runtime(e.into()))?;
    println!("wrote {} ({} rows)", csv_path.display(), actual.len());
    if svg {
        let title = format!(
            "Line {line}: {} interval and robust rating, {} to {}",
            model.config().variant.display_name(),
            forecasts
                .first()
                .map(|f| format_timestamp(f.horizon_start))
                .unwrap_or_default(),
            forecasts
                .last()
                .map(|f| format_timestamp(f.horizon_start))
                .unwrap_or_default(),
        );
        let svg_path = out_dir.join(format!("{stem}.svg"));
        std::fs::write(&svg_path, interval_chart(&title, &actual, &lower, &upper))
            .map_err(|e| CliError::Runtime(e.into()))?;
        println!("wrote {}", svg_path.display());
    }
    Ok(())
}

pub fn gradcheck(seed: u64, inject_fault: Option<&str>) -> Result<(), CliError> {
    let fault = inject_fault
        .map(|s| s.parse().map_err(|e: dlr_core::Error| CliError::Usage(e.to_string())))
        .transpose()?;
    let report = gradient_suite(seed, fault, Execution::default())?;
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "gradient check failed for {}",
            report.failing().join(", ")
        )))
    }
}

pub fn show_config(config: &str) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let json = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Runtime(e.into()))?;
    println!("{json}");
    Ok(())
}
