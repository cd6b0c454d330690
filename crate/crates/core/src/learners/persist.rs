//! Line-delimited model files: a header record, then one record per weight
//! row or support point.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ocsvm::OneClassSvmModel;
use super::softmax::{SoftmaxClassifier, SoftmaxHyper};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Softmax(SoftmaxClassifier),
    OneClass(OneClassSvmModel),
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    training_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    hyper: Option<SoftmaxHyper>,
}

#[derive(Serialize, Deserialize)]
struct WeightRow {
    bias: f64,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SupportRow {
    alpha: f64,
    point: Vec<f64>,
}

fn line<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::Data(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_model(mut w: impl Write, model: &SavedModel) -> Result<()> {
    match model {
        SavedModel::Softmax(clf) => {
            let header = Header {
                kind: "softmax".into(),
                k: clf.class_count(),
                d: clf.dimension(),
                nu: None,
                gamma: None,
                rho: None,
                training_size: None,
                hyper: Some(clf.hyper),
            };
            line(&mut w, &header)?;
            for (weights, bias) in clf.weights.iter().zip(&clf.bias) {
                line(
                    &mut w,
                    &WeightRow {
                        bias: *bias,
                        weights: weights.clone(),
                    },
                )?;
            }
        }
        SavedModel::OneClass(m) => {
            let header = Header {
                kind: "ocsvm".into(),
                k: m.support_points.len(),
                d: m.support_points.first().map_or(0, Vec::len),
                nu: Some(m.nu),
                gamma: Some(m.kernel.gamma),
                rho: Some(m.rho),
                training_size: Some(m.training_size),
                hyper: None,
            };
            line(&mut w, &header)?;
            for (point, alpha) in m.support_points.iter().zip(&m.alphas) {
                line(
                    &mut w,
                    &SupportRow {
                        alpha: *alpha,
                        point: point.clone(),
                    },
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, line: usize) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        reason: e.to_string(),
    })
}

fn missing(field: &str) -> Error {
    Error::Validation {
        line: Some(1),
        field: field.into(),
        reason: "required for this model kind".into(),
    }
}

pub fn read_model(r: impl BufRead) -> Result<SavedModel> {
    let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
    let mut rows = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = rows.next().ok_or_else(|| Error::Parse {
        line: 1,
        reason: "empty model file".into(),
    })?;
    let header: Header = parse(first, 1)?;
    let check_dim = |len: usize, line: usize| -> Result<()> {
        if len != header.d {
            return Err(Error::Validation {
                line: Some(line),
                field: "d".into(),
                reason: format!("row has length {len}, header says {}", header.d),
            });
        }
        Ok(())
    };
    let model = match header.kind.as_str() {
        "softmax" => {
            let mut clf = SoftmaxClassifier::zeros(
                0,
                header.d,
                header.hyper.ok_or_else(|| missing("hyper"))?,
            );
            for (i, text) in rows {
                let row: WeightRow = parse(text, i + 1)?;
                check_dim(row.weights.len(), i + 1)?;
                clf.weights.push(row.weights);
                clf.bias.push(row.bias);
            }
            if clf.bias.len() != header.k {
                return Err(Error::Validation {
                    line: None,
                    field: "K".into(),
                    reason: format!("{} weight rows, header says {}", clf.bias.len(), header.k),
                });
            }
            SavedModel::Softmax(clf)
        }
        "ocsvm" => {
            let mut support_points = Vec::new();
            let mut alphas = Vec::new();
            for (i, text) in rows {
                let row: SupportRow = parse(text, i + 1)?;
                check_dim(row.point.len(), i + 1)?;
                support_points.push(row.point);
                alphas.push(row.alpha);
            }
            if alphas.len() != header.k {
                return Err(Error::Validation {
                    line: None,
                    field: "K".into(),
                    reason: format!("{} support rows, header says {}", alphas.len(), header.k),
                });
            }
            SavedModel::OneClass(OneClassSvmModel {
                support_points,
                alphas,
                rho: header.rho.ok_or_else(|| missing("rho"))?,
                nu: header.nu.ok_or_else(|| missing("nu"))?,
                kernel: KernelSpec::gaussian(header.gamma.ok_or_else(|| missing("gamma"))?)?,
                training_size: header
                    .training_size
                    .ok_or_else(|| missing("training_size"))?,
                iterations: 0,
            })
        }
        other => {
            return Err(Error::Validation {
                line: Some(1),
                field: "kind".into(),
                reason: format!("unknown model kind {other:?}"),
            })
        }
    };
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &SavedModel) -> Result<()> {
    write_model(BufWriter::new(std::fs::File::create(path)?), model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    read_model(BufReader::new(std::fs::File::open(path)?))
}
