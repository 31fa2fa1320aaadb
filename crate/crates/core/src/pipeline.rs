//! Training and prediction over whole cell histories.

use crate::error::{Error, Result, StageExt};
use crate::exec::Exec;
use crate::features::{
    build_target, compute_rest_variance, extract_features, CurrentSource, FeatureOptions, FeatureVector,
    RestVarianceConstant, Variant,
};
use crate::ingest::{reference_measurements, segment_phases, CellHistory, ReferenceMeasurement, RwPhase};
use crate::mfp::{fit_mfp, FpModel, MfpConfig, MfpData, PredictionRecord};
use crate::prelim::{build_prelim_training, fit_prelim, mean_reference_drop, PrelimModel};
use crate::report::PredictionTable;

/// Fewest usable reference cycles a training log must provide.
pub const MIN_TRAINING_CYCLES: usize = 8;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub variant: Variant,
    pub alpha: f64,
    pub max_degree: u8,
    pub max_cycles: usize,
    pub current_source: CurrentSource,
    pub exec: Exec,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            variant: Variant::C,
            alpha: 0.05,
            max_degree: 2,
            max_cycles: 5,
            current_source: CurrentSource::Nominal,
            exec: Exec::default(),
        }
    }
}

/// Reference capacities of a cell and its anchor capacity.
#[derive(Debug, Clone)]
pub struct CellCapacities {
    pub measurements: Vec<ReferenceMeasurement>,
    pub nominal: Option<f64>,
}

impl CellCapacities {
    pub fn of(history: &CellHistory) -> Self {
        let measurements = reference_measurements(history);
        let nominal = measurements.first().and_then(|m| m.adjusted);
        CellCapacities { measurements, nominal }
    }

    pub fn at(&self, ordinal: usize) -> Option<f64> {
        self.measurements.get(ordinal).and_then(|m| m.adjusted)
    }
}

pub struct Trained {
    pub model: FpModel,
    /// Training rows with targets, in cycle order.
    pub features: Vec<FeatureVector>,
}

fn usable_phases<'a>(history: &'a CellHistory) -> Result<Vec<RwPhase<'a>>> {
    let phases = segment_phases(history).stage("segment")?;
    Ok(phases
        .into_iter()
        .filter(|p| {
            if p.m() == 0 {
                log::warn!("{}: phase {} has no RW discharge steps; skipped", history.cell_id, p.index);
            }
            p.m() > 0
        })
        .collect())
}

fn phase_features(
    phases: &[RwPhase<'_>],
    caps: &CellCapacities,
    rest_var: &RestVarianceConstant,
    prelim: Option<&PrelimModel>,
    options: FeatureOptions,
    exec: Exec,
) -> Result<Vec<FeatureVector>> {
    exec.map(phases, |p| extract_features(p, caps.at(p.previous_ordinal), rest_var, prelim, options))
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .stage("features")
}

/// Fits the preliminary model on one history.
pub fn train_prelim(history: &CellHistory, caps: &CellCapacities) -> Result<PrelimModel> {
    let rows = build_prelim_training(history, &caps.measurements)?;
    let drop = mean_reference_drop(&caps.measurements).unwrap_or(1.0);
    fit_prelim(&rows, drop)
}

/// Everything derived from a training log before the MFP fit.
pub struct TrainingSet {
    pub capacities: CellCapacities,
    pub nominal: f64,
    pub rest_variance: RestVarianceConstant,
    pub prelim: Option<PrelimModel>,
    /// Feature rows with an observed closing capacity, targets filled in.
    pub rows: Vec<FeatureVector>,
}

pub fn training_set(history: &CellHistory, opts: &TrainOptions) -> Result<TrainingSet> {
    let caps = CellCapacities::of(history);
    let nominal = caps.nominal.ok_or_else(|| {
        Error::MissingFeature("nominal capacity (first reference discharge is unsampled)".into())
    })?;
    let phases = usable_phases(history)?;
    let rest: Vec<f64> = phases.iter().filter_map(|p| p.rest_time_h()).map(|t| t.max(0.0)).collect();
    let rest_var = compute_rest_variance(&rest).stage("rest variance")?;
    let prelim = if opts.variant.uses_prelim() {
        Some(train_prelim(history, &caps).stage("preliminary model")?)
    } else {
        None
    };
    let options = FeatureOptions {
        current_source: opts.current_source,
    };
    let mut rows = phase_features(&phases, &caps, &rest_var, prelim.as_ref(), options, opts.exec)?;
    rows.retain_mut(|f| match caps.at(f.cycle_index) {
        Some(obs) => {
            f.target = Some(build_target(nominal, obs));
            true
        }
        None => false,
    });
    Ok(TrainingSet {
        capacities: caps,
        nominal,
        rest_variance: rest_var,
        prelim,
        rows,
    })
}

pub fn train(history: &CellHistory, opts: &TrainOptions) -> Result<Trained> {
    let TrainingSet {
        nominal,
        rest_variance: rest_var,
        prelim,
        rows,
        ..
    } = training_set(history, opts)?;
    if rows.len() < MIN_TRAINING_CYCLES {
        return Err(Error::InsufficientData {
            what: "reference cycles with observed capacity for training".into(),
            needed: MIN_TRAINING_CYCLES,
            got: rows.len(),
        });
    }
    let names = opts.variant.candidates();
    let mut columns = Vec::with_capacity(names.len());
    for &name in names {
        let col = rows
            .iter()
            .map(|r| r.get(name).ok_or_else(|| Error::MissingFeature(format!("{name} in cycle {}", r.cycle_index))))
            .collect::<Result<Vec<f64>>>()
            .stage("training data")?;
        columns.push((name.to_string(), col));
    }
    let data = MfpData {
        columns,
        y: rows.iter().map(|r| r.target.expect("retained rows have targets")).collect(),
    };
    let config = MfpConfig {
        max_degree: opts.max_degree,
        alpha: opts.alpha,
        max_cycles: opts.max_cycles,
        candidate_features: names.iter().map(|n| n.to_string()).collect(),
        exec: opts.exec,
        ..MfpConfig::default()
    };
    let mut model = fit_mfp(&data, &config).stage("mfp")?;
    model.meta.cell_id = history.cell_id.clone();
    model.meta.nominal_capacity = Some(nominal);
    model.preprocessing.variant = Some(opts.variant);
    model.preprocessing.rest_variance = Some(rest_var);
    model.preprocessing.prelim = prelim;
    Ok(Trained { model, features: rows })
}

/// Per-cycle predictions for one history. The cell's own first reference
/// capacity anchors the fade; the training anchor is used when it is missing.
pub fn predict_table(
    model: &FpModel,
    history: &CellHistory,
    level: f64,
    current_source: CurrentSource,
) -> Result<PredictionTable> {
    let caps = CellCapacities::of(history);
    let nominal = caps
        .nominal
        .or(model.meta.nominal_capacity)
        .ok_or_else(|| Error::MissingFeature("nominal capacity".into()))?;
    let rest_var = model
        .preprocessing
        .rest_variance
        .ok_or_else(|| Error::Artifact("model has no rest variance constant".into()))?;
    let phases = usable_phases(history)?;
    let options = FeatureOptions { current_source };
    let rows = phase_features(
        &phases,
        &caps,
        &rest_var,
        model.preprocessing.prelim.as_ref(),
        options,
        Exec::default(),
    )?;
    let records = rows
        .iter()
        .map(|f| model.predict_record(&history.cell_id, f, nominal, caps.at(f.cycle_index), level))
        .collect::<Result<Vec<_>>>()
        .stage("predict")?;
    Ok(PredictionTable {
        cell_id: history.cell_id.clone(),
        nominal_capacity: nominal,
        level,
        records,
    })
}

pub fn predict_cell(
    model: &FpModel,
    history: &CellHistory,
    level: f64,
    current_source: CurrentSource,
) -> Result<Vec<PredictionRecord>> {
    Ok(predict_table(model, history, level, current_source)?.records)
}
