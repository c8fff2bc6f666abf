//! JSON model documents and CSV sample batches.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ComponentParams, Family, IndexSet, SparseMixture, WeightedSampleBatch};
use crate::error::{Error, Result};

/// Serialized form `{family, d, alpha[], components[{u[], mu[], sigma|sigma2|kappa}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureDocument {
    pub family: Family,
    pub d: usize,
    pub alpha: Vec<f64>,
    pub components: Vec<ComponentDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDocument {
    pub u: Vec<usize>,
    pub mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<f64>>,
}

impl From<&SparseMixture> for MixtureDocument {
    fn from(model: &SparseMixture) -> Self {
        let components = model
            .components()
            .iter()
            .map(|c| {
                let u: Vec<usize> = c.u().as_slice().to_vec();
                let mut doc = ComponentDocument {
                    u,
                    mu: c.mu().to_vec(),
                    sigma: None,
                    sigma2: None,
                    kappa: None,
                };
                match c {
                    ComponentParams::Wrapped { sigma, .. } => {
                        let n = doc.u.len();
                        doc.sigma = Some((0..n).map(|i| sigma[i * n..(i + 1) * n].to_vec()).collect());
                    }
                    ComponentParams::DiagWrapped { sigma2, .. } => doc.sigma2 = Some(sigma2.clone()),
                    ComponentParams::VonMises { kappa, .. } => doc.kappa = Some(kappa.clone()),
                }
                doc
            })
            .collect();
        MixtureDocument {
            family: model.family(),
            d: model.dim(),
            alpha: model.alpha().to_vec(),
            components,
        }
    }
}

impl TryFrom<MixtureDocument> for SparseMixture {
    type Error = Error;
    fn try_from(doc: MixtureDocument) -> Result<Self> {
        let mut components = Vec::with_capacity(doc.components.len());
        for c in doc.components {
            let u = IndexSet::new(c.u.clone())?;
            if u.as_slice() != c.u.as_slice() {
                return Err(Error::InvalidInput(format!("index set {:?} is not increasing", c.u)));
            }
            let missing = |name: &str| Error::InvalidInput(format!("{} component lacks '{name}'", doc.family));
            let params = match doc.family {
                Family::Wrapped => {
                    let rows = c.sigma.ok_or_else(|| missing("sigma"))?;
                    if rows.len() != u.len() || rows.iter().any(|r| r.len() != u.len()) {
                        return Err(Error::Dimension {
                            expected: u.len(),
                            got: rows.len(),
                        });
                    }
                    ComponentParams::Wrapped {
                        u,
                        mu: c.mu,
                        sigma: rows.concat(),
                    }
                }
                Family::DiagWrapped => ComponentParams::DiagWrapped {
                    u,
                    mu: c.mu,
                    sigma2: c.sigma2.ok_or_else(|| missing("sigma2"))?,
                },
                Family::VonMises => ComponentParams::VonMises {
                    u,
                    mu: c.mu,
                    kappa: c.kappa.ok_or_else(|| missing("kappa"))?,
                },
            };
            components.push(params);
        }
        SparseMixture::new(doc.d, doc.alpha, components)
    }
}

impl Serialize for SparseMixture {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MixtureDocument::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SparseMixture {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = MixtureDocument::deserialize(deserializer)?;
        SparseMixture::try_from(doc).map_err(serde::de::Error::custom)
    }
}

pub fn write_model_json<W: Write>(model: &SparseMixture, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, model).map_err(|e| Error::Io(e.to_string()))
}

pub fn read_model_json<R: Read>(reader: R) -> Result<SparseMixture> {
    let doc: MixtureDocument = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    SparseMixture::try_from(doc)
}

/// Plain decimal with 17 significant digits.
pub fn format_decimal(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.16e}");
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (16 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Header `x0,...,x{d-1},weight`, one row per sample.
pub fn write_batch_csv<W: Write>(batch: &WeightedSampleBatch, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut header: Vec<String> = (0..batch.dim()).map(|j| format!("x{j}")).collect();
    header.push("weight".into());
    w.write_record(&header).map_err(io)?;
    let mut row = Vec::with_capacity(batch.dim() + 1);
    for i in 0..batch.len() {
        row.clear();
        row.extend(batch.point(i).iter().map(|v| format_decimal(*v)));
        row.push(format_decimal(batch.weights()[i]));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a batch written by [`write_batch_csv`]; the last column holds weights.
pub fn read_batch_csv<R: Read>(reader: R) -> Result<WeightedSampleBatch> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() < 2 || header.get(header.len() - 1) != Some("weight") {
        return Err(Error::Parse {
            line: 1,
            message: "header must list coordinate columns followed by 'weight'".into(),
        });
    }
    let d = header.len() - 1;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != d + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() || (j == d && v < 0.0) {
                return Err(Error::Parse {
                    line,
                    message: format!("invalid value '{field}'"),
                });
            }
            if j < d {
                points.push(v);
            } else {
                weights.push(v);
            }
        }
    }
    WeightedSampleBatch::new(d, points, weights)
}
