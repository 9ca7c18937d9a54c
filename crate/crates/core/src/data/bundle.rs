//! Embedding bundles: a JSON manifest binding a raw `f32` matrix file to a
//! CSV label table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MaflError, Result};
use crate::numerics::Matrix;

pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "bundle.json";
pub const DATA_FILE: &str = "embeddings.bin";
pub const LABELS_FILE: &str = "labels.csv";
pub const LABELS_HEADER: [&str; 5] = [
    "index",
    "authenticity",
    "generator_id",
    "content_id",
    "source_name",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleLabel {
    pub index: usize,
    /// 0 = real, 1 = fake.
    pub authenticity: u8,
    /// −1 for real samples, otherwise the generator class in `[0, K)`.
    pub generator_id: i32,
    pub content_id: u32,
    pub source_name: String,
}

impl SampleLabel {
    pub fn is_fake(&self) -> bool {
        self.authenticity == 1
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match (self.authenticity, self.generator_id) {
            (0, -1) => {}
            (0, g) => return Err(format!("real sample has generator_id {g}, expected -1")),
            (1, g) if g >= 0 => {}
            (1, g) => return Err(format!("fake sample has generator_id {g}, expected >= 0")),
            (a, _) => return Err(format!("authenticity {a} is not 0 or 1")),
        }
        if self.source_name.is_empty() {
            return Err("empty source_name".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub version: u32,
    pub dim: usize,
    pub count: usize,
    pub dtype: String,
    pub data: String,
    pub labels: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub manifest: BundleManifest,
    pub matrix: Matrix<f32>,
    pub labels: Vec<SampleLabel>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl EmbeddingBundle {
    /// Builds a bundle and its manifest, validating every label.
    pub fn new(matrix: Matrix<f32>, labels: Vec<SampleLabel>) -> Result<Self> {
        if matrix.rows() != labels.len() {
            return Err(MaflError::Consistency(format!(
                "{} matrix rows but {} labels",
                matrix.rows(),
                labels.len()
            )));
        }
        if let Some((row, reason)) = labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.validate().err().map(|e| (i, e)))
        {
            return Err(MaflError::MalformedLabel { row, reason });
        }
        matrix.ensure_finite("bundle embeddings")?;
        let manifest = BundleManifest {
            version: BUNDLE_VERSION,
            dim: matrix.cols(),
            count: matrix.rows(),
            dtype: "f32le".into(),
            data: DATA_FILE.into(),
            labels: LABELS_FILE.into(),
            sha256: sha256_hex(&matrix.le_bytes()),
        };
        Ok(Self {
            manifest,
            matrix,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        Self::new(self.matrix.select_rows(indices), labels)
    }

    pub fn authenticity(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.authenticity).collect()
    }

    /// Largest generator id plus one (0 when there are no fakes).
    pub fn generator_count(&self) -> usize {
        self.labels
            .iter()
            .map(|l| (l.generator_id + 1) as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn content_count(&self) -> usize {
        self.labels
            .iter()
            .map(|l| l.content_id as usize + 1)
            .max()
            .unwrap_or(0)
    }
}

fn encode_labels(labels: &[SampleLabel]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| MaflError::Data(format!("writing labels: {e}"));
    w.write_record(LABELS_HEADER).map_err(csv_err)?;
    for l in labels {
        w.write_record([
            l.index.to_string(),
            l.authenticity.to_string(),
            l.generator_id.to_string(),
            l.content_id.to_string(),
            l.source_name.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| MaflError::Data(format!("writing labels: {e}")))
}

fn manifest_json(m: &BundleManifest) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(m).map_err(|e| MaflError::json("bundle manifest", e))?;
    out.push(b'\n');
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| MaflError::io(path, e))
}

/// Writes the three bundle files into `dir` (created if missing) and returns
/// the manifest path.
pub fn write_bundle(bundle: &EmbeddingBundle, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| MaflError::io(dir, e))?;
    let m = &bundle.manifest;
    write_file(&dir.join(&m.data), &bundle.matrix.le_bytes())?;
    write_file(&dir.join(&m.labels), &encode_labels(&bundle.labels)?)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    write_file(&manifest_path, &manifest_json(m)?)?;
    Ok(manifest_path)
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, row: usize) -> Result<T> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse().map_err(|_| MaflError::MalformedLabel {
        row,
        reason: format!("{} '{raw}' is not a valid value", LABELS_HEADER[col]),
    })
}

fn decode_labels(bytes: &[u8]) -> Result<Vec<SampleLabel>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = r
        .headers()
        .map_err(|e| MaflError::MalformedLabel {
            row: 0,
            reason: format!("unreadable header: {e}"),
        })?
        .clone();
    if header.iter().ne(LABELS_HEADER) {
        return Err(MaflError::MalformedLabel {
            row: 0,
            reason: format!(
                "header is '{}', expected '{}'",
                header.iter().collect::<Vec<_>>().join(","),
                LABELS_HEADER.join(",")
            ),
        });
    }
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| MaflError::MalformedLabel {
            row,
            reason: e.to_string(),
        })?;
        if rec.len() != LABELS_HEADER.len() {
            return Err(MaflError::MalformedLabel {
                row,
                reason: format!("{} fields, expected {}", rec.len(), LABELS_HEADER.len()),
            });
        }
        let label = SampleLabel {
            index: parse_field(&rec, 0, row)?,
            authenticity: parse_field(&rec, 1, row)?,
            generator_id: parse_field(&rec, 2, row)?,
            content_id: parse_field(&rec, 3, row)?,
            source_name: rec[4].to_string(),
        };
        label
            .validate()
            .map_err(|reason| MaflError::MalformedLabel { row, reason })?;
        labels.push(label);
    }
    Ok(labels)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| MaflError::io(path, e))
}

/// Reads a bundle from its directory or manifest path, validating the
/// manifest, the data checksum, and the labels.
pub fn read_bundle(path: &Path) -> Result<EmbeddingBundle> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: BundleManifest = serde_json::from_slice(&read_file(&manifest_path)?)
        .map_err(|e| MaflError::json(manifest_path.display().to_string(), e))?;
    if manifest.version != BUNDLE_VERSION {
        return Err(MaflError::Version {
            found: manifest.version,
            expected: BUNDLE_VERSION,
        });
    }
    if manifest.dtype != "f32le" {
        return Err(MaflError::Consistency(format!(
            "dtype '{}' is not supported (expected f32le)",
            manifest.dtype
        )));
    }
    let data_path = dir.join(&manifest.data);
    let data = read_file(&data_path)?;
    let actual = sha256_hex(&data);
    if actual != manifest.sha256 {
        return Err(MaflError::Checksum {
            path: data_path,
            expected: manifest.sha256,
            actual,
        });
    }
    if data.len() != manifest.count * manifest.dim * 4 {
        return Err(MaflError::Consistency(format!(
            "{} holds {} bytes, manifest implies {}x{} f32 = {} bytes",
            data_path.display(),
            data.len(),
            manifest.count,
            manifest.dim,
            manifest.count * manifest.dim * 4
        )));
    }
    let values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let matrix = Matrix::new(manifest.count, manifest.dim, values)?;
    let labels = decode_labels(&read_file(&dir.join(&manifest.labels))?)?;
    if labels.len() != manifest.count {
        return Err(MaflError::Consistency(format!(
            "{} label rows but manifest count is {}",
            labels.len(),
            manifest.count
        )));
    }
    matrix.ensure_finite("bundle embeddings")?;
    Ok(EmbeddingBundle {
        manifest,
        matrix,
        labels,
    })
}
