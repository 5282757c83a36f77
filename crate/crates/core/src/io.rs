//! On-disk formats. Every artifact is a directory holding a `header.json`
//! plus flat little-endian `f64` payloads. Matrices are stored column-major
//! (one sample after another for `n × N` data).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::{ModulationMatrix, ObservationSeries, SourceFamily, SourceTensor};
use crate::error::{Result, TclError};
use crate::linear_ica::{IcaResult, WhiteningTransform};
use crate::network::{init_params, ModelShape, TclModel};

pub const FORMAT_VERSION: u32 = 1;

pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| TclError::io(path, e))
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| TclError::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(TclError::Format {
            path: path.into(),
            reason: format!("length {} is not a multiple of 8", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let data = read_f64s(path)?;
    if data.len() != rows * cols {
        return Err(TclError::Format {
            path: path.into(),
            reason: format!("expected {rows}x{cols} = {} values, found {}", rows * cols, data.len()),
        });
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| TclError::Format {
        path: path.into(),
        reason: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| TclError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| TclError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| TclError::Format {
        path: path.into(),
        reason: e.to_string(),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TclError::io(dir, e))
}

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    fs::write(&tmp, contents).map_err(|e| TclError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| TclError::io(path, e))
}

pub(crate) fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSeeds {
    pub modulation: u64,
    pub sources: u64,
    pub mixing: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub n: usize,
    pub segments: usize,
    pub seg_len: usize,
    pub depth: usize,
    pub family: SourceFamily,
    pub stationary_count: usize,
    pub lambda_min: f64,
    pub leaky_slope: f64,
    pub seeds: DatasetSeeds,
    pub layout: String,
}

/// Generated data as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub header: DatasetHeader,
    pub modulations: ModulationMatrix,
    pub sources: SourceTensor,
    pub observations: ObservationSeries,
}

const SOURCES: &str = "sources.f64";
const OBSERVATIONS: &str = "observations.f64";
const LAMBDAS: &str = "lambdas.f64";
const HEADER: &str = "header.json";

pub fn write_dataset(dir: &Path, ds: &StoredDataset) -> Result<()> {
    ensure_dir(dir)?;
    write_f64s(&dir.join(SOURCES), ds.sources.values.as_slice())?;
    write_f64s(&dir.join(OBSERVATIONS), ds.observations.values.as_slice())?;
    write_f64s(&dir.join(LAMBDAS), ds.modulations.lambdas.as_slice())?;
    write_json(&dir.join(HEADER), &ds.header)
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    let header: DatasetHeader = read_json(&dir.join(HEADER))?;
    if header.format_version != FORMAT_VERSION {
        return Err(TclError::Format {
            path: dir.join(HEADER),
            reason: format!("unsupported format version {}", header.format_version),
        });
    }
    let total = header.segments * header.seg_len;
    let sources = read_matrix(&dir.join(SOURCES), header.n, total)?;
    let observations = read_matrix(&dir.join(OBSERVATIONS), header.n, total)?;
    let lambdas = read_matrix(&dir.join(LAMBDAS), header.segments, header.n)?;
    let first = lambdas.row(0).clone_owned();
    let mut differenced = lambdas.clone();
    for mut row in differenced.row_iter_mut() {
        row -= &first;
    }
    let sources = SourceTensor {
        values: sources,
        seg_len: header.seg_len,
        segments: header.segments,
        stationary_count: header.stationary_count,
    };
    let observations = ObservationSeries {
        values: observations,
        labels: sources.labels(),
        segments: header.segments,
        seg_len: header.seg_len,
    };
    Ok(StoredDataset {
        header,
        modulations: ModulationMatrix { lambdas, differenced },
        sources,
        observations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub shape: ModelShape,
    pub init_seed: u64,
    pub train_seed: u64,
    pub parameter_count: usize,
    /// Tensor order of the payload.
    pub order: String,
}

const WEIGHTS: &str = "weights.f64";

pub fn write_checkpoint(dir: &Path, model: &TclModel, init_seed: u64, train_seed: u64) -> Result<()> {
    ensure_dir(dir)?;
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        shape: model.shape(),
        init_seed,
        train_seed,
        parameter_count: model.parameter_count(),
        order: "hidden[layer][group]{weight,bias}, output{weight,bias}, slopes, mlr{weights,biases}; column-major".into(),
    };
    write_f64s(&dir.join(WEIGHTS), &model.to_flat())?;
    write_json(&dir.join(HEADER), &header)
}

pub fn read_checkpoint(dir: &Path) -> Result<(CheckpointHeader, TclModel)> {
    let header: CheckpointHeader = read_json(&dir.join(HEADER))?;
    let mut model = init_params(&header.shape, 0)?;
    let flat = read_f64s(&dir.join(WEIGHTS))?;
    if flat.len() != header.parameter_count {
        return Err(TclError::Format {
            path: dir.join(WEIGHTS),
            reason: format!("expected {} parameters, found {}", header.parameter_count, flat.len()),
        });
    }
    model.set_flat(&flat)?;
    Ok((header, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaHeader {
    pub format_version: u32,
    pub method: String,
    pub dim: usize,
    pub samples: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub signal_strength: f64,
    pub weak_signal: bool,
}

pub fn write_ica(dir: &Path, method: &str, res: &IcaResult) -> Result<()> {
    ensure_dir(dir)?;
    let header = IcaHeader {
        format_version: FORMAT_VERSION,
        method: method.into(),
        dim: res.unmixing.nrows(),
        samples: res.components.ncols(),
        iterations: res.iterations,
        converged: res.converged,
        objective: res.objective,
        signal_strength: res.signal_strength,
        weak_signal: res.weak_signal,
    };
    write_f64s(&dir.join("mean.f64"), res.whitening.mean.as_slice())?;
    write_f64s(&dir.join("whitening.f64"), res.whitening.matrix.as_slice())?;
    write_f64s(&dir.join("dewhitening.f64"), res.whitening.inverse.as_slice())?;
    write_f64s(&dir.join("unmixing.f64"), res.unmixing.as_slice())?;
    write_f64s(&dir.join("components.f64"), res.components.as_slice())?;
    write_f64s(&dir.join("objective_trace.f64"), &res.objective_trace)?;
    write_json(&dir.join(HEADER), &header)
}

pub fn read_ica(dir: &Path) -> Result<(IcaHeader, IcaResult)> {
    let header: IcaHeader = read_json(&dir.join(HEADER))?;
    let m = header.dim;
    let mean = read_matrix(&dir.join("mean.f64"), m, 1)?;
    let res = IcaResult {
        whitening: WhiteningTransform {
            mean: DVector::from_column_slice(mean.as_slice()),
            matrix: read_matrix(&dir.join("whitening.f64"), m, m)?,
            inverse: read_matrix(&dir.join("dewhitening.f64"), m, m)?,
        },
        unmixing: read_matrix(&dir.join("unmixing.f64"), m, m)?,
        components: read_matrix(&dir.join("components.f64"), m, header.samples)?,
        iterations: header.iterations,
        converged: header.converged,
        objective: header.objective,
        objective_trace: read_f64s(&dir.join("objective_trace.f64"))?,
        signal_strength: header.signal_strength,
        weak_signal: header.weak_signal,
    };
    Ok((header, res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{generate_data, ExperimentConfig};
    use crate::linear_ica::{fastica, FastIcaConfig};
    use crate::network::OutputActivation;

    #[test]
    fn f64_payload_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f64");
        write_f64s(&p, &[1.0, -0.5]).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], &1.0f64.to_le_bytes());
        assert_eq!(read_f64s(&p).unwrap(), vec![1.0, -0.5]);
        fs::write(&p, [0u8; 5]).unwrap();
        assert!(matches!(read_f64s(&p), Err(TclError::Format { .. })));
    }

    #[test]
    fn dataset_round_trip() {
        let cfg = ExperimentConfig {
            n: 3,
            seg_len: 50,
            stationary_count: 1,
            ..ExperimentConfig::default()
        };
        let data = generate_data(&cfg, 2, 5, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data.dataset).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), data.dataset);
    }

    #[test]
    fn dataset_with_truncated_payload_is_rejected() {
        let cfg = ExperimentConfig { n: 2, seg_len: 20, ..ExperimentConfig::default() };
        let data = generate_data(&cfg, 1, 3, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data.dataset).unwrap();
        write_f64s(&dir.path().join(SOURCES), &[0.0; 4]).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(TclError::Format { .. })));
        assert!(matches!(read_dataset(&dir.path().join("missing")), Err(TclError::Io { .. })));
    }

    #[test]
    fn checkpoint_reload_is_bit_exact() {
        let shape = ModelShape {
            input_dim: 3,
            hidden_widths: vec![4, 5],
            output_dim: 3,
            segments: 6,
            groups: 3,
            activation: OutputActivation::Adaptive,
        };
        let model = init_params(&shape, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_checkpoint(dir.path(), &model, 11, 12).unwrap();
        let (header, back) = read_checkpoint(dir.path()).unwrap();
        assert_eq!(header.shape, shape);
        assert_eq!((header.init_seed, header.train_seed), (11, 12));
        let bits = |m: &TclModel| m.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
        assert_eq!(back, model);
    }

    #[test]
    fn ica_round_trip() {
        let x = DMatrix::from_fn(2, 300, |i, j| ((j * (i + 3)) % 17) as f64 - 8.0 + (j as f64).sin());
        let res = fastica(&x, &FastIcaConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_ica(dir.path(), "fastica", &res).unwrap();
        let (header, back) = read_ica(dir.path()).unwrap();
        assert_eq!(header.method, "fastica");
        assert_eq!(back, res);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
