//! Feature-sequence container format (HFC1), dataset manifests, and
//! test-time frame subsampling.
//!
//! An `.hfc` file stores both streams of one sample's per-frame feature
//! cubes:
//!
//! ```text
//! magic  "HFC1"           4 bytes
//! version u32 = 1
//! frames  u32 (T)         regions_per_side u32 (K)
//! feature_dim u32 (D)     n_streams u32 = 2
//! dtype   u32 = 1 (f64)
//! payload: [stream][frame][region][dim] little-endian f64,
//!          2 * T * K^2 * D values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::attention::FeatureCube;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const HFC_MAGIC: [u8; 4] = *b"HFC1";
pub const HFC_VERSION: u32 = 1;
const HFC_HEADER_BYTES: u64 = 28;
const DTYPE_F64: u32 = 1;

// Sanity caps on header fields; anything larger cannot be a desk-scale file.
const MAX_FRAMES: u32 = 1 << 20;
const MAX_REGIONS_PER_SIDE: u32 = 1 << 10;
const MAX_FEATURE_DIM: u32 = 1 << 19;

/// One labeled sample: both streams' cube sequences.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub cubes_p: Vec<FeatureCube>,
    pub cubes_q: Vec<FeatureCube>,
}

/// Writes both streams of a sample as one HFC1 file. The two sequences must
/// have equal nonzero length, consistent shapes, and a region count that is
/// a perfect square.
pub fn write_sequence(
    path: &Path,
    cubes_p: &[FeatureCube],
    cubes_q: &[FeatureCube],
) -> Result<()> {
    if cubes_p.len() != cubes_q.len() {
        return Err(Error::Dimension {
            op: "write_sequence",
            expected: format!("both streams of length {}", cubes_p.len()),
            got: format!("{} and {}", cubes_p.len(), cubes_q.len()),
        });
    }
    if cubes_p.is_empty() {
        return Err(Error::EmptySequence);
    }
    let d = cubes_p[0].feature_dim();
    let n = cubes_p[0].region_count();
    let k = (n as f64).sqrt().round() as usize;
    if k * k != n {
        return Err(Error::Config(format!(
            "region count {n} is not a perfect square"
        )));
    }
    for cube in cubes_p.iter().chain(cubes_q.iter()) {
        if cube.feature_dim() != d || cube.region_count() != n {
            return Err(Error::Dimension {
                op: "write_sequence",
                expected: format!("cubes of {d}x{n}"),
                got: format!("{}x{}", cube.feature_dim(), cube.region_count()),
            });
        }
    }

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&HFC_MAGIC)?;
    for value in [
        HFC_VERSION,
        cubes_p.len() as u32,
        k as u32,
        d as u32,
        2,
        DTYPE_F64,
    ] {
        w.write_all(&value.to_le_bytes())?;
    }
    for stream in [cubes_p, cubes_q] {
        for cube in stream {
            for region in 0..n {
                for dim in 0..d {
                    w.write_all(&cube.regions.get(dim, region).to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads an HFC1 file back into both streams' cube sequences.
///
/// The header is fully validated (magic, version, field sanity, and the
/// exact file length it implies) before the payload is allocated, so a
/// corrupt header cannot trigger a huge allocation or a partial result.
pub fn read_sequence(path: &Path) -> Result<(Vec<FeatureCube>, Vec<FeatureCube>)> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    if file_len < HFC_HEADER_BYTES {
        return Err(Error::Truncated {
            expected_bytes: HFC_HEADER_BYTES,
            got_bytes: file_len,
        });
    }
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != HFC_MAGIC {
        return Err(Error::BadMagic {
            expected: HFC_MAGIC,
            got: magic,
        });
    }
    let version = read_u32(&mut r)?;
    if version != HFC_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: HFC_VERSION,
            got: version,
        });
    }
    let frames = read_u32(&mut r)?;
    let k = read_u32(&mut r)?;
    let d = read_u32(&mut r)?;
    let n_streams = read_u32(&mut r)?;
    let dtype = read_u32(&mut r)?;

    if frames == 0 {
        return Err(Error::EmptySequence);
    }
    if k == 0 || k > MAX_REGIONS_PER_SIDE {
        return Err(Error::InvalidHeader {
            field: "regions_per_side",
            value: k as u64,
        });
    }
    if d == 0 || d > MAX_FEATURE_DIM {
        return Err(Error::InvalidHeader {
            field: "feature_dim",
            value: d as u64,
        });
    }
    if frames > MAX_FRAMES {
        return Err(Error::InvalidHeader {
            field: "frames",
            value: frames as u64,
        });
    }
    if n_streams != 2 {
        return Err(Error::InvalidHeader {
            field: "n_streams",
            value: n_streams as u64,
        });
    }
    if dtype != DTYPE_F64 {
        return Err(Error::InvalidHeader {
            field: "dtype",
            value: dtype as u64,
        });
    }

    let regions = (k as u64) * (k as u64);
    let values = 2 * frames as u64 * regions * d as u64;
    let expected = HFC_HEADER_BYTES + 8 * values;
    if file_len < expected {
        return Err(Error::Truncated {
            expected_bytes: expected,
            got_bytes: file_len,
        });
    }
    if file_len > expected {
        return Err(Error::LengthMismatch {
            expected_bytes: expected,
            got_bytes: file_len,
        });
    }

    let mut payload = vec![0u8; (8 * values) as usize];
    r.read_exact(&mut payload)?;

    let (frames, k, d) = (frames as usize, k as usize, d as usize);
    let n = k * k;
    let mut offset = 0usize;
    let mut read_stream = |payload: &[u8]| -> Result<Vec<FeatureCube>> {
        let mut cubes = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut m = Matrix::zeros(d, n);
            for region in 0..n {
                for dim in 0..d {
                    let mut bytes = [0u8; 8];
                    bytes.copy_from_slice(&payload[offset..offset + 8]);
                    offset += 8;
                    m.set(dim, region, f64::from_le_bytes(bytes));
                }
            }
            cubes.push(FeatureCube::new(m, t));
        }
        Ok(cubes)
    };
    let cubes_p = read_stream(&payload)?;
    let cubes_q = read_stream(&payload)?;
    Ok((cubes_p, cubes_q))
}

/// Indices (0-based) of `n_frames` frames spread over a sequence of
/// `seq_len` with equal temporal windows: endpoints included for
/// `n_frames >= 2`, linear spacing in between, rounding half-up.
pub fn subsample_indices(seq_len: usize, n_frames: usize) -> Result<Vec<usize>> {
    if n_frames == 0 || n_frames > seq_len {
        return Err(Error::Config(format!(
            "cannot pick {n_frames} frames from a sequence of {seq_len}"
        )));
    }
    if n_frames == 1 {
        return Ok(vec![0]);
    }
    let step = (seq_len - 1) as f64 / (n_frames - 1) as f64;
    Ok((0..n_frames)
        .map(|j| (j as f64 * step).round() as usize)
        .collect())
}

/// Applies [`subsample_indices`] to both streams of a sample.
pub fn subsample_sample(sample: &Sample, n_frames: usize) -> Result<Sample> {
    let idx = subsample_indices(sample.cubes_p.len(), n_frames)?;
    Ok(Sample {
        id: sample.id.clone(),
        label: sample.label,
        cubes_p: idx.iter().map(|&i| sample.cubes_p[i].clone()).collect(),
        cubes_q: idx.iter().map(|&i| sample.cubes_q[i].clone()).collect(),
    })
}

/// One manifest line: sample id, feature file path (relative to the
/// manifest), label string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub path: PathBuf,
    pub label: String,
}

/// Parsed manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub dir: PathBuf,
}

/// Reads a tab-separated manifest: `sample_id<TAB>path<TAB>label` per line.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut records = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Manifest(format!(
                "{}:{}: expected 3 tab-separated fields, got {}",
                path.display(),
                line_no + 1,
                fields.len()
            )));
        }
        records.push(ManifestRecord {
            sample_id: fields[0].to_string(),
            path: PathBuf::from(fields[1]),
            label: fields[2].to_string(),
        });
    }
    if records.is_empty() {
        return Err(Error::Manifest(format!(
            "{}: manifest has no records",
            path.display()
        )));
    }
    Ok(Manifest { records, dir })
}

/// Reads a label map (`label<TAB>index` per line) into an index-ordered
/// list of label names. Indices must be dense in `[0, C)`.
pub fn read_label_map(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Manifest(format!(
                "{}:{}: expected `label<TAB>index`",
                path.display(),
                line_no + 1
            )));
        }
        let index: usize = fields[1].parse().map_err(|_| {
            Error::Manifest(format!(
                "{}:{}: index `{}` is not a number",
                path.display(),
                line_no + 1,
                fields[1]
            ))
        })?;
        pairs.push((fields[0].to_string(), index));
    }
    if pairs.is_empty() {
        return Err(Error::Manifest(format!(
            "{}: label map is empty",
            path.display()
        )));
    }
    let classes = pairs.len();
    let mut labels = vec![None; classes];
    for (label, index) in pairs {
        if index >= classes {
            return Err(Error::Manifest(format!(
                "label index {index} not dense in [0,{classes})"
            )));
        }
        if labels[index].is_some() {
            return Err(Error::Manifest(format!("duplicate label index {index}")));
        }
        labels[index] = Some(label);
    }
    Ok(labels.into_iter().map(|l| l.unwrap()).collect())
}

/// Fully loaded dataset: all samples in memory plus the label names.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub labels: Vec<String>,
}

/// Loads every sample a manifest references, mapping label strings to class
/// indices through the label map.
pub fn load_dataset(manifest_path: &Path, label_map_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let labels = read_label_map(label_map_path)?;
    let mut samples = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        let label = labels
            .iter()
            .position(|l| l == &record.label)
            .ok_or_else(|| {
                Error::Manifest(format!(
                    "label `{}` of sample `{}` missing from label map",
                    record.label, record.sample_id
                ))
            })?;
        let file = if record.path.is_absolute() {
            record.path.clone()
        } else {
            manifest.dir.join(&record.path)
        };
        let (cubes_p, cubes_q) = read_sequence(&file)?;
        samples.push(Sample {
            id: record.sample_id.clone(),
            label,
            cubes_p,
            cubes_q,
        });
    }
    Ok(Dataset { samples, labels })
}
