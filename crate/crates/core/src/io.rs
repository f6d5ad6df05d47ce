//! File formats: trajectory CSV with a JSON sidecar, and predictor JSON.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Result, TpcError};
use crate::hankel::{DataLabel, Dims, PredictorKind, TrajectoryData};
use crate::predictors::{MemorySelection, Predictor};
use crate::statespace::InnovationsModel;

/// Serde adapter storing a matrix as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        super::matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Like [`serde_rows`] for optional matrices.
pub mod serde_rows_opt {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref()
            .map(|m| {
                m.row_iter()
                    .map(|r| r.iter().copied().collect::<Vec<f64>>())
                    .collect::<Vec<_>>()
            })
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|r| super::matrix_from_rows(&r))
            .transpose()
            .map_err(serde::de::Error::custom)
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Metadata written next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub label: DataLabel,
    pub n_u: usize,
    pub n_y: usize,
    pub len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Free-form generation settings.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub settings: serde_json::Map<String, serde_json::Value>,
}

/// `data.csv` -> `data.meta.json`
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes `t,u_1..,y_1..` rows plus the metadata sidecar.
pub fn write_trajectory(path: &Path, data: &TrajectoryData, meta: &TrajectoryMeta) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=data.n_u()).map(|i| format!("u_{i}")));
    header.extend((1..=data.n_y()).map(|i| format!("y_{i}")));
    w.write_record(&header)?;
    for t in 0..data.len() {
        let mut rec = vec![t.to_string()];
        rec.extend(data.inputs().column(t).iter().map(|v| v.to_string()));
        rec.extend(data.outputs().column(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Reads a trajectory CSV. The label comes from the sidecar when present,
/// otherwise from `fallback_label`.
pub fn read_trajectory(
    path: &Path,
    fallback_label: Option<DataLabel>,
) -> Result<(TrajectoryData, Option<TrajectoryMeta>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let u_cols: Vec<usize> = (0..header.len())
        .filter(|&i| header[i].starts_with("u_"))
        .collect();
    let y_cols: Vec<usize> = (0..header.len())
        .filter(|&i| header[i].starts_with("y_"))
        .collect();
    if u_cols.is_empty() || y_cols.is_empty() {
        return Err(TpcError::Config(format!(
            "{}: header needs u_* and y_* columns",
            path.display()
        )));
    }
    let mut us = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|e| {
                TpcError::Config(format!(
                    "{} row {}: column {}: {e}",
                    path.display(),
                    line + 2,
                    i + 1
                ))
            })
        };
        us.push(
            u_cols
                .iter()
                .map(|&i| parse(i))
                .collect::<Result<Vec<_>>>()?,
        );
        ys.push(
            y_cols
                .iter()
                .map(|&i| parse(i))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if us.is_empty() {
        return Err(dim_err(format!("{} holds no samples", path.display())));
    }
    let meta_path = sidecar_path(path);
    let meta: Option<TrajectoryMeta> = if meta_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&meta_path)?)?)
    } else {
        None
    };
    let label = match (&meta, fallback_label) {
        (Some(m), _) => m.label,
        (None, Some(l)) => l,
        (None, None) => {
            return Err(TpcError::Config(format!(
                "{} has no metadata sidecar; the training mode must be given",
                path.display()
            )))
        }
    };
    let d = us.len();
    let inputs = DMatrix::from_fn(u_cols.len(), d, |i, t| us[t][i]);
    let outputs = DMatrix::from_fn(y_cols.len(), d, |i, t| ys[t][i]);
    Ok((TrajectoryData::new(inputs, outputs, label)?, meta))
}

/// SHA-256 over the little-endian bytes of the inputs then the outputs,
/// column-major.
pub fn data_digest(data: &TrajectoryData) -> String {
    let mut h = Sha256::new();
    for v in data.inputs().iter().chain(data.outputs().iter()) {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub data_sha256: String,
    pub data_len: usize,
    pub label: DataLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_selection: Option<MemorySelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationsRecord {
    #[serde(with = "serde_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub c: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub d: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub k: DMatrix<f64>,
}

impl From<&InnovationsModel> for InnovationsRecord {
    fn from(m: &InnovationsModel) -> Self {
        InnovationsRecord {
            a: m.a.clone(),
            b: m.b.clone(),
            c: m.c.clone(),
            d: m.d.clone(),
            k: m.k.clone(),
        }
    }
}

/// On-disk predictor container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorFile {
    pub kind: PredictorKind,
    pub dims: Dims,
    #[serde(with = "serde_rows")]
    pub p: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub f: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub onestep_error_cov: DMatrix<f64>,
    #[serde(with = "serde_rows")]
    pub traj_error_cov: DMatrix<f64>,
    pub param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub innovations: Option<InnovationsRecord>,
}

impl PredictorFile {
    pub fn new(pred: &Predictor) -> Self {
        PredictorFile {
            kind: pred.kind,
            dims: pred.dims,
            p: pred.p.clone(),
            f: pred.f.clone(),
            onestep_error_cov: pred.onestep_error_cov.clone(),
            traj_error_cov: pred.traj_error_cov.clone(),
            param_count: pred.param_count(),
            provenance: None,
            innovations: None,
        }
    }

    pub fn into_predictor(self) -> Result<Predictor> {
        let Dims { m, h, n_u, n_y } = self.dims;
        let r = m * (n_u + n_y);
        if self.p.shape() != (h * n_y, r) || self.f.shape() != (h * n_y, h * n_u) {
            return Err(dim_err("predictor file matrices do not match its dims"));
        }
        Ok(Predictor {
            p: self.p,
            f: self.f,
            kind: self.kind,
            dims: self.dims,
            onestep_error_cov: self.onestep_error_cov,
            traj_error_cov: self.traj_error_cov,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
