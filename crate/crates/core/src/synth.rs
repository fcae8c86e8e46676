//! Synthetic sequence-classification datasets with planted spatial signals
//! and hierarchical temporal structure.
//!
//! Every class is a distinct ordered sequence of sub-action codes drawn from
//! one shared multiset, so classes differ only in sub-action order: a model
//! that ignores temporal order cannot separate them. Within each frame
//! exactly one region carries the current sub-action's signal vector (in
//! both streams); all other regions carry zero-mean Gaussian noise. The true
//! signal region of every frame is recorded in a sidecar for attention
//! evaluation.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::attention::FeatureCube;
use crate::data::{write_sequence, Dataset, Sample};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// How the signal region is placed. Placement never depends on the class:
/// a location that encoded the label would let spatially aware but
/// order-blind models separate the order-confusable classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionPolicy {
    /// One seed-derived region, constant over the whole sequence.
    Fixed,
    /// The region advances by one grid cell at each sub-action boundary,
    /// starting from the seed-derived base.
    Drifting,
}

impl std::str::FromStr for RegionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(RegionPolicy::Fixed),
            "drifting" => Ok(RegionPolicy::Drifting),
            other => Err(Error::Config(format!(
                "unknown region policy `{other}` (expected `fixed` or `drifting`)"
            ))),
        }
    }
}

impl fmt::Display for RegionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionPolicy::Fixed => write!(f, "fixed"),
            RegionPolicy::Drifting => write!(f, "drifting"),
        }
    }
}

/// Generator settings.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub regions_per_side: usize,
    pub feature_dim: usize,
    pub frames: usize,
    pub classes: usize,
    pub samples_per_class: usize,
    pub policy: RegionPolicy,
    pub sub_action_length: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sub_action_length == 0 {
            return Err(Error::Config("sub_action_length must be >= 1".to_string()));
        }
        if self.frames < self.sub_action_length {
            return Err(Error::Config(format!(
                "frames {} is smaller than sub_action_length {}",
                self.frames, self.sub_action_length
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "classes must be >= 2, got {}",
                self.classes
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be >= 1".to_string()));
        }
        if self.regions_per_side == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "regions_per_side and feature_dim must be >= 1".to_string(),
            ));
        }
        let slots = self.slots();
        if slots < 2 {
            return Err(Error::Config(format!(
                "frames {} / sub_action_length {} gives {slots} sub-action slot(s); \
                 order structure needs at least 2",
                self.frames, self.sub_action_length
            )));
        }
        let mut perms: u64 = 1;
        for i in 2..=slots as u64 {
            perms = perms.saturating_mul(i);
        }
        if (self.classes as u64) > perms {
            return Err(Error::Config(format!(
                "{} classes need {} distinct orderings but {slots} slots only allow {perms}",
                self.classes, self.classes
            )));
        }
        Ok(())
    }

    /// Number of sub-action slots; trailing frames extend the last slot.
    pub fn slots(&self) -> usize {
        self.frames / self.sub_action_length
    }
}

fn next_permutation(xs: &mut [usize]) -> bool {
    if xs.len() < 2 {
        return false;
    }
    let mut i = xs.len() - 1;
    while i > 0 && xs[i - 1] >= xs[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = xs.len() - 1;
    while xs[j] <= xs[i - 1] {
        j -= 1;
    }
    xs.swap(i - 1, j);
    xs[i..].reverse();
    true
}

/// The ordered sub-action codes of every class: the first `classes`
/// permutations of `0..slots` in lexicographic order. All classes share one
/// code multiset by construction.
pub fn class_code_orders(spec: &SyntheticSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let mut current: Vec<usize> = (0..spec.slots()).collect();
    let mut orders = vec![current.clone()];
    while orders.len() < spec.classes {
        if !next_permutation(&mut current) {
            return Err(Error::Config("ran out of orderings".to_string()));
        }
        orders.push(current.clone());
    }
    Ok(orders)
}

// Stream tags inside the generator seed.
const STREAM_SIGNALS: u64 = 0x5163;
const STREAM_SAMPLE: u64 = 0x53A1;
const STREAM_REGION: u64 = 0x4E67;

/// The per-code signal vectors of both streams, drawn once per dataset seed.
fn signal_vectors(spec: &SyntheticSpec) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = Rng::derive(spec.seed, &[STREAM_SIGNALS]);
    let draw = |rng: &mut Rng| -> Vec<Vec<f64>> {
        (0..spec.slots())
            .map(|_| (0..spec.feature_dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect()
    };
    let p = draw(&mut rng);
    let q = draw(&mut rng);
    (p, q)
}

fn sample_id(class: usize, index_in_class: usize) -> String {
    format!("c{class}_s{index_in_class:04}")
}

/// The signal region of each frame. Identical for every class of a dataset;
/// only the dataset seed (and, when drifting, the sub-action slot) moves it.
pub fn true_regions(spec: &SyntheticSpec) -> Vec<usize> {
    let n = spec.regions_per_side * spec.regions_per_side;
    let base = (Rng::derive(spec.seed, &[STREAM_REGION]).next_u64() % n as u64) as usize;
    (0..spec.frames)
        .map(|t| {
            let slot = (t / spec.sub_action_length).min(spec.slots() - 1);
            match spec.policy {
                RegionPolicy::Fixed => base,
                RegionPolicy::Drifting => (base + slot) % n,
            }
        })
        .collect()
}

/// Generates one sample. The noise stream is derived from the dataset seed
/// and the sample's global index, so generation of distinct samples can be
/// distributed without changing the output.
pub fn generate_sample(
    spec: &SyntheticSpec,
    class: usize,
    index_in_class: usize,
) -> Result<(Sample, Vec<usize>)> {
    spec.validate()?;
    if class >= spec.classes {
        return Err(Error::LabelOutOfRange {
            label: class,
            classes: spec.classes,
        });
    }
    let orders = class_code_orders(spec)?;
    let (signals_p, signals_q) = signal_vectors(spec);
    let regions = true_regions(spec);
    let n = spec.regions_per_side * spec.regions_per_side;
    let d = spec.feature_dim;
    let global_index = (class * spec.samples_per_class + index_in_class) as u64;
    let mut rng = Rng::derive(spec.seed, &[STREAM_SAMPLE, global_index]);

    let mut cubes_p = Vec::with_capacity(spec.frames);
    let mut cubes_q = Vec::with_capacity(spec.frames);
    for (t, &true_region) in regions.iter().enumerate() {
        let slot = (t / spec.sub_action_length).min(spec.slots() - 1);
        let code = orders[class][slot];
        let mut frame_p = Matrix::zeros(d, n);
        let mut frame_q = Matrix::zeros(d, n);
        for region in 0..n {
            for dim in 0..d {
                if region == true_region {
                    frame_p.set(dim, region, signals_p[code][dim]);
                    frame_q.set(dim, region, signals_q[code][dim]);
                } else {
                    frame_p.set(dim, region, spec.noise_sigma * rng.normal());
                    frame_q.set(dim, region, spec.noise_sigma * rng.normal());
                }
            }
        }
        cubes_p.push(FeatureCube::new(frame_p, t));
        cubes_q.push(FeatureCube::new(frame_q, t));
    }

    Ok((
        Sample {
            id: sample_id(class, index_in_class),
            label: class,
            cubes_p,
            cubes_q,
        },
        regions,
    ))
}

/// A generated dataset held in memory, with the per-sample ground-truth
/// signal regions.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    /// `(sample_id, true region per frame)`, in dataset order.
    pub truth: Vec<(String, Vec<usize>)>,
}

/// Generates the whole dataset in memory, class-major.
pub fn generate_in_memory(spec: &SyntheticSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.classes * spec.samples_per_class);
    let mut truth = Vec::with_capacity(samples.capacity());
    for class in 0..spec.classes {
        for i in 0..spec.samples_per_class {
            let (sample, regions) = generate_sample(spec, class, i)?;
            truth.push((sample.id.clone(), regions));
            samples.push(sample);
        }
    }
    let labels = (0..spec.classes).map(|c| format!("class_{c}")).collect();
    Ok(GeneratedDataset {
        dataset: Dataset { samples, labels },
        truth,
    })
}

/// Paths written by [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct GeneratedFiles {
    pub manifest: PathBuf,
    pub label_map: PathBuf,
    pub sidecar: PathBuf,
    pub sample_files: usize,
}

/// Generates the dataset on disk: one HFC1 file per sample, a manifest, a
/// label map, and the ground-truth attention sidecar CSV
/// (`sample_id,t,true_region_index`, frames numbered from 1).
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<GeneratedFiles> {
    let generated = generate_in_memory(spec)?;
    std::fs::create_dir_all(out_dir)?;

    let mut manifest = String::new();
    let mut sidecar = String::from("sample_id,t,true_region_index\n");
    for (sample, (id, regions)) in generated
        .dataset
        .samples
        .iter()
        .zip(&generated.truth)
    {
        let file_name = format!("{}.hfc", sample.id);
        write_sequence(&out_dir.join(&file_name), &sample.cubes_p, &sample.cubes_q)?;
        manifest.push_str(&format!(
            "{}\t{}\t{}\n",
            sample.id, file_name, generated.dataset.labels[sample.label]
        ));
        for (t, region) in regions.iter().enumerate() {
            sidecar.push_str(&format!("{},{},{}\n", id, t + 1, region));
        }
    }
    let mut label_map = String::new();
    for (index, label) in generated.dataset.labels.iter().enumerate() {
        label_map.push_str(&format!("{label}\t{index}\n"));
    }

    let manifest_path = out_dir.join("manifest.tsv");
    let label_map_path = out_dir.join("labels.tsv");
    let sidecar_path = out_dir.join("attention_truth.csv");
    std::fs::write(&manifest_path, manifest)?;
    std::fs::write(&label_map_path, label_map)?;
    std::fs::write(&sidecar_path, sidecar)?;

    Ok(GeneratedFiles {
        manifest: manifest_path,
        label_map: label_map_path,
        sidecar: sidecar_path,
        sample_files: generated.dataset.samples.len(),
    })
}

/// Reads an attention sidecar back into `(sample_id, t, region)` rows.
pub fn read_sidecar(path: &Path) -> Result<Vec<(String, usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line_no == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Manifest(format!(
                "{}:{}: expected 3 comma-separated fields",
                path.display(),
                line_no + 1
            )));
        }
        let t: usize = fields[1]
            .parse()
            .map_err(|_| Error::Manifest(format!("bad frame number `{}`", fields[1])))?;
        let region: usize = fields[2]
            .parse()
            .map_err(|_| Error::Manifest(format!("bad region index `{}`", fields[2])))?;
        rows.push((fields[0].to_string(), t, region));
    }
    Ok(rows)
}
