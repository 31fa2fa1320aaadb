//! Model artifact: a versioned TOML document with every float stored as a
//! hexadecimal literal so a reloaded model predicts bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{RestVarianceConstant, Variant};
use crate::fp::{FpTerm, Prep};
use crate::hexfloat::{hex_vec, unhex_vec, Hex};
use crate::linreg::FitResult;
use crate::mfp::{ExclusionReason, FpModel, Preprocessing, Term, TrainingMeta};
use crate::prelim::PrelimModel;

pub const SCHEMA: &str = "soh-model v1";

#[derive(Serialize, Deserialize)]
struct Document {
    schema: String,
    meta: MetaDto,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rest_variance: Option<RestDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prelim: Option<PrelimDto>,
    terms: Vec<TermDto>,
    fit: FitDto,
}

#[derive(Serialize, Deserialize)]
struct MetaDto {
    cell_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<Variant>,
    n: usize,
    cycles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nominal_capacity: Option<Hex>,
    visit_order: Vec<String>,
    alpha: Hex,
    max_degree: u8,
}

#[derive(Serialize, Deserialize)]
struct RestDto {
    sigma2: Hex,
    n_used: usize,
}

#[derive(Serialize, Deserialize)]
struct PrelimDto {
    centers: Vec<Hex>,
    scales: Vec<Hex>,
    terms: Vec<Vec<usize>>,
    coefficients: Vec<Hex>,
    fallback_drop: Hex,
    n: usize,
    r2: Hex,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TermKind {
    Linear,
    Fp {
        powers: Vec<Hex>,
        shift: Hex,
        scale: Hex,
        domain_min: Hex,
    },
    Excluded {
        reason: ExclusionReason,
    },
}

#[derive(Serialize, Deserialize)]
struct TermDto {
    name: String,
    #[serde(flatten)]
    kind: TermKind,
}

#[derive(Serialize, Deserialize)]
struct FitDto {
    labels: Vec<String>,
    groups: Vec<String>,
    n: usize,
    df_residual: usize,
    coefficients: Vec<Hex>,
    std_errors: Vec<Hex>,
    t_statistics: Vec<Hex>,
    p_values: Vec<Hex>,
    sigma2_hat: Hex,
    rss: Hex,
    r2: Hex,
    r2_adj: Hex,
    log_likelihood: Hex,
    deviance: Hex,
    aic: Hex,
    xtx_inverse: Vec<Hex>,
    residuals: Vec<Hex>,
}

impl From<&FitResult> for FitDto {
    fn from(f: &FitResult) -> Self {
        FitDto {
            labels: f.labels.clone(),
            groups: f.groups.clone(),
            n: f.n,
            df_residual: f.df_residual,
            coefficients: hex_vec(&f.coefficients),
            std_errors: hex_vec(&f.std_errors),
            t_statistics: hex_vec(&f.t_statistics),
            p_values: hex_vec(&f.p_values),
            sigma2_hat: Hex(f.sigma2_hat),
            rss: Hex(f.rss),
            r2: Hex(f.r2),
            r2_adj: Hex(f.r2_adj),
            log_likelihood: Hex(f.log_likelihood),
            deviance: Hex(f.deviance),
            aic: Hex(f.aic),
            xtx_inverse: hex_vec(&f.xtx_inverse),
            residuals: hex_vec(&f.residuals),
        }
    }
}

impl FitDto {
    fn into_fit(self) -> Result<FitResult> {
        let p = self.coefficients.len();
        let lens = [
            self.labels.len(),
            self.groups.len(),
            self.std_errors.len(),
            self.t_statistics.len(),
            self.p_values.len(),
        ];
        if lens.iter().any(|&l| l != p) || self.xtx_inverse.len() != p * p {
            return Err(Error::Artifact("fit arrays have inconsistent lengths".into()));
        }
        Ok(FitResult {
            labels: self.labels,
            groups: self.groups,
            n: self.n,
            coefficients: unhex_vec(&self.coefficients),
            std_errors: unhex_vec(&self.std_errors),
            t_statistics: unhex_vec(&self.t_statistics),
            p_values: unhex_vec(&self.p_values),
            sigma2_hat: self.sigma2_hat.0,
            rss: self.rss.0,
            residuals: unhex_vec(&self.residuals),
            r2: self.r2.0,
            r2_adj: self.r2_adj.0,
            log_likelihood: self.log_likelihood.0,
            deviance: self.deviance.0,
            aic: self.aic.0,
            xtx_inverse: unhex_vec(&self.xtx_inverse),
            df_residual: self.df_residual,
        })
    }
}

pub fn model_to_string(model: &FpModel) -> Result<String> {
    let m = &model.meta;
    let doc = Document {
        schema: SCHEMA.into(),
        meta: MetaDto {
            cell_id: m.cell_id.clone(),
            variant: model.preprocessing.variant,
            n: m.n,
            cycles: m.cycles,
            nominal_capacity: m.nominal_capacity.map(Hex),
            visit_order: m.visit_order.clone(),
            alpha: Hex(m.alpha),
            max_degree: m.max_degree,
        },
        rest_variance: model.preprocessing.rest_variance.map(|r| RestDto {
            sigma2: Hex(r.sigma2),
            n_used: r.n_used,
        }),
        prelim: model.preprocessing.prelim.as_ref().map(|p| PrelimDto {
            centers: hex_vec(&p.centers),
            scales: hex_vec(&p.scales),
            terms: p.terms.clone(),
            coefficients: hex_vec(&p.coefficients),
            fallback_drop: Hex(p.fallback_drop),
            n: p.n,
            r2: Hex(p.r2),
        }),
        terms: model
            .terms
            .iter()
            .map(|(name, t)| TermDto {
                name: name.clone(),
                kind: match t {
                    Term::Linear => TermKind::Linear,
                    Term::Fp(f) => TermKind::Fp {
                        powers: hex_vec(&f.powers),
                        shift: Hex(f.prep.shift),
                        scale: Hex(f.prep.scale),
                        domain_min: Hex(f.domain_min),
                    },
                    Term::Excluded(reason) => TermKind::Excluded { reason: *reason },
                },
            })
            .collect(),
        fit: FitDto::from(&model.fit),
    };
    toml::to_string(&doc).map_err(|e| Error::Artifact(e.to_string()))
}

pub fn model_from_str(text: &str) -> Result<FpModel> {
    #[derive(Deserialize)]
    struct Header {
        schema: String,
    }
    let header: Header = toml::from_str(text).map_err(|e| Error::Artifact(e.to_string()))?;
    if header.schema != SCHEMA {
        return Err(Error::SchemaVersionMismatch {
            found: header.schema,
            expected: SCHEMA.into(),
        });
    }
    let doc: Document = toml::from_str(text).map_err(|e| Error::Artifact(e.to_string()))?;
    let terms = doc
        .terms
        .into_iter()
        .map(|t| {
            let term = match t.kind {
                TermKind::Linear => Term::Linear,
                TermKind::Fp {
                    powers,
                    shift,
                    scale,
                    domain_min,
                } => Term::Fp(FpTerm {
                    powers: unhex_vec(&powers),
                    prep: Prep {
                        shift: shift.0,
                        scale: scale.0,
                    },
                    domain_min: domain_min.0,
                }),
                TermKind::Excluded { reason } => Term::Excluded(reason),
            };
            (t.name, term)
        })
        .collect();
    let fit = doc.fit.into_fit()?;
    let model = FpModel {
        terms,
        fit,
        preprocessing: Preprocessing {
            variant: doc.meta.variant,
            rest_variance: doc.rest_variance.map(|r| RestVarianceConstant {
                sigma2: r.sigma2.0,
                n_used: r.n_used,
            }),
            prelim: doc.prelim.map(|p| PrelimModel {
                centers: unhex_vec(&p.centers),
                scales: unhex_vec(&p.scales),
                terms: p.terms,
                coefficients: unhex_vec(&p.coefficients),
                fallback_drop: p.fallback_drop.0,
                n: p.n,
                r2: p.r2.0,
            }),
        },
        meta: TrainingMeta {
            cell_id: doc.meta.cell_id,
            n: doc.meta.n,
            cycles: doc.meta.cycles,
            nominal_capacity: doc.meta.nominal_capacity.map(|h| h.0),
            visit_order: doc.meta.visit_order,
            alpha: doc.meta.alpha.0,
            max_degree: doc.meta.max_degree,
        },
    };
    let width: usize = model.included().map(|(n, t)| t.labels(n).len()).sum::<usize>() + 1;
    if width != model.fit.coefficients.len() {
        return Err(Error::Artifact(format!(
            "terms imply {width} coefficients, fit has {}",
            model.fit.coefficients.len()
        )));
    }
    Ok(model)
}

pub fn save_model(model: &FpModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FpModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}
