use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use soh_core::artifact::{load_model, save_model};
use soh_core::features::write_feature_table;
use soh_core::ingest::{load_cell, write_cell, CellHistory, LogFormat};
use soh_core::metrics::{evaluate as eval_metrics, EvalReport};
use soh_core::pipeline::{predict_table, train as train_model, training_set, TrainOptions};
use soh_core::report::{prediction_plot_svg, summary_table, PredictionTable};
use soh_core::synth::{generate, SynthConfig};

use crate::config::{FileConfig, RunConfig};
use crate::Failure;

fn load(path: &Path) -> Result<CellHistory, Failure> {
    Ok(load_cell(path, LogFormat::SohlogV1).map_err(|e| e.in_stage("load"))?)
}

fn out_dir(rc: &RunConfig) -> Result<&Path, Failure> {
    fs::create_dir_all(&rc.out)?;
    Ok(&rc.out)
}

fn train_options(rc: &RunConfig) -> TrainOptions {
    TrainOptions {
        variant: rc.variant,
        alpha: rc.alpha,
        max_degree: rc.max_degree,
        max_cycles: rc.max_cycles,
        current_source: rc.current_source,
        exec: rc.exec(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn ingest(log: &Path, rc: &RunConfig) -> Result<(), Failure> {
    let history = load(log)?;
    let set = training_set(&history, &train_options(rc))?;
    let dir = out_dir(rc)?;
    let mut caps = String::from("ordinal\tt_start\traw\tadjusted\tvoltage_drop\tlarge_correction\n");
    for m in &set.capacities.measurements {
        let _ = writeln!(
            caps,
            "{}\t{}\t{}\t{}\t{}\t{}",
            m.ordinal,
            m.t_start,
            opt(m.raw),
            opt(m.adjusted),
            opt(m.voltage_drop),
            m.large_correction
        );
    }
    fs::write(dir.join(format!("{}.capacities.tsv", history.cell_id)), caps)?;
    let file = fs::File::create(dir.join(format!("{}.features.csv", history.cell_id)))?;
    write_feature_table(&set.rows, BufWriter::new(file))?;
    println!(
        "{}: {} steps, {} reference discharges, {} feature rows, nominal capacity {:.4} Ah",
        history.cell_id,
        history.steps.len(),
        set.capacities.measurements.len(),
        set.rows.len(),
        set.nominal
    );
    Ok(())
}

pub fn train(log: &Path, rc: &RunConfig) -> Result<(), Failure> {
    let history = load(log)?;
    let trained = train_model(&history, &train_options(rc))?;
    let dir = out_dir(rc)?;
    let stem = format!("{}.{}", history.cell_id, rc.variant);
    let model_path = dir.join(format!("{stem}.model.toml"));
    save_model(&trained.model, &model_path)?;
    let summary = summary_table(&trained.model, &format!("MFP{}", rc.variant));
    fs::write(dir.join(format!("{stem}.summary.txt")), &summary)?;
    print!("{summary}");
    log::info!("model written to {}", model_path.display());
    Ok(())
}

pub fn predict(model: &Path, logs: &[PathBuf], plot: bool, rc: &RunConfig) -> Result<(), Failure> {
    let model = load_model(model).map_err(|e| e.in_stage("load model"))?;
    let dir = out_dir(rc)?.to_path_buf();
    let tables = rc.exec().map(logs, |log| -> Result<PredictionTable, Failure> {
        let history = load(log)?;
        Ok(predict_table(&model, &history, rc.level, rc.current_source)?)
    });
    for table in tables {
        let table = table?;
        fs::write(dir.join(format!("{}.predictions.tsv", table.cell_id)), table.to_tsv())?;
        if plot {
            fs::write(dir.join(format!("{}.svg", table.cell_id)), prediction_plot_svg(&table))?;
        }
        let flagged = table.records.iter().filter(|r| !r.flags.is_empty()).count();
        println!("{}: {} cycles predicted, {flagged} flagged", table.cell_id, table.records.len());
    }
    Ok(())
}

fn load_table(path: &Path) -> Result<PredictionTable, Failure> {
    let text = fs::read_to_string(path)?;
    Ok(PredictionTable::parse(&text).map_err(|e| e.in_stage("load predictions"))?)
}

pub fn evaluate(tables: &[PathBuf], rc: &RunConfig) -> Result<(), Failure> {
    let dir = out_dir(rc)?;
    for path in tables {
        let table = load_table(path)?;
        let (pred, obs) = table.observed_pairs();
        let report = eval_metrics(&pred, &obs, table.nominal_capacity, rc.eol).map_err(|e| e.in_stage("evaluate"))?;
        let row = format!("cell_id\t{}\n{}\t{}\n", EvalReport::TSV_HEADER, table.cell_id, report.tsv_row());
        fs::write(dir.join(format!("{}.eval.tsv", table.cell_id)), row)?;
        println!("{}\n{report}", table.cell_id);
    }
    Ok(())
}

pub fn synth(
    group: u8,
    phases: usize,
    cell_id: Option<String>,
    file: &FileConfig,
    rc: &RunConfig,
    out_given: bool,
) -> Result<(), Failure> {
    let mut cfg = SynthConfig::new(group, phases, rc.seed)?;
    if let Some(id) = cell_id {
        cfg.cell_id = id;
    }
    let overrides = [
        (&mut cfg.capacity, file.capacity),
        (&mut cfg.fade_per_ah, file.fade_per_ah),
        (&mut cfg.recoverable_per_ah, file.recoverable_per_ah),
        (&mut cfg.recoverable_max, file.recoverable_max),
        (&mut cfg.recovery_tau_h, file.recovery_tau_h),
        (&mut cfg.resistance, file.resistance),
        (&mut cfg.ambient, file.ambient),
    ];
    for (slot, v) in overrides {
        if let Some(v) = v {
            *slot = v;
        }
    }
    if let Some(n) = file.long_rests {
        cfg.long_rests = n;
    }
    let history = generate(&cfg)?;
    if !out_given {
        let stdout = std::io::stdout().lock();
        return Ok(write_cell(&history, BufWriter::new(stdout))?);
    }
    let path = if rc.out.is_dir() {
        rc.out.join(format!("{}.sohlog", history.cell_id))
    } else {
        if let Some(parent) = rc.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        rc.out.clone()
    };
    write_cell(&history, BufWriter::new(fs::File::create(&path)?))?;
    log::info!("{} written to {}", history.cell_id, path.display());
    Ok(())
}

pub fn report(model: Option<&Path>, tables: &[PathBuf], rc: &RunConfig) -> Result<(), Failure> {
    if model.is_none() && tables.is_empty() {
        return Err(Failure::Usage("report needs --model and/or prediction tables".into()));
    }
    let dir = out_dir(rc)?;
    if let Some(path) = model {
        let m = load_model(path).map_err(|e| e.in_stage("load model"))?;
        let title = m
            .preprocessing
            .variant
            .map_or_else(|| "MFP".to_string(), |v| format!("MFP{v}"));
        print!("{}", summary_table(&m, &title));
    }
    for path in tables {
        let table = load_table(path)?;
        let out = dir.join(format!("{}.svg", table.cell_id));
        fs::write(&out, prediction_plot_svg(&table))?;
        println!("{}: chart written to {}", table.cell_id, out.display());
    }
    Ok(())
}
