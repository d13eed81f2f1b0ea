//! Dataset files and the synthetic Gaussian-mixture generator.
//!
//! File layout is CSV with a header row, then `id,class,f0,f1,..` per sample.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<SampleId>,
    pub labels: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    pub classes: usize,
    pub dim: usize,
}

impl Dataset {
    /// Validates ids, labels and feature shape. `classes` is `max label + 1`.
    pub fn new(ids: Vec<SampleId>, labels: Vec<usize>, features: Vec<Vec<f64>>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Integrity("dataset has no samples".into()));
        }
        if ids.len() != labels.len() || ids.len() != features.len() {
            return Err(Error::Integrity("ids, labels and features differ in length".into()));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::Integrity("samples have no features".into()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for (id, f) in ids.iter().zip(&features) {
            if !seen.insert(*id) {
                return Err(Error::Integrity(format!("duplicate sample id {id}")));
            }
            if f.len() != dim {
                return Err(Error::Integrity(format!(
                    "sample {id} has {} features, expected {dim}",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!("sample {id} has a non-finite feature")));
            }
        }
        let classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
        Ok(Self {
            ids,
            labels,
            features,
            classes,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Per-dimension min-max scaling to `[0, 1]`; constant dimensions become 0.
    pub fn normalize(&mut self) {
        for j in 0..self.dim {
            let (lo, hi) = self
                .features
                .iter()
                .map(|f| f[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let range = hi - lo;
            for f in &mut self.features {
                f[j] = if range > 0.0 { (f[j] - lo) / range } else { 0.0 };
            }
        }
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "class".to_string()];
        header.extend((0..self.dim).map(|j| format!("f{j}")));
        w.write_record(&header).expect("in-memory write");
        for ((id, label), f) in self.ids.iter().zip(&self.labels).zip(&self.features) {
            let mut row = vec![id.to_string(), label.to_string()];
            // `{}` on f64 prints the shortest string that parses back to the same value
            row.extend(f.iter().map(|v| format!("{v}")));
            w.write_record(&row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a dataset without normalising it. `origin` only labels errors.
pub fn parse_dataset<R: Read>(reader: R, origin: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let header_len = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .len();
    if header_len < 3 {
        return Err(parse_err(1, "header needs id, class and at least one feature column".into()));
    }
    let dim = header_len - 2;
    let (mut ids, mut labels, mut features) = (Vec::new(), Vec::new(), Vec::new());
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header_len {
            return Err(parse_err(
                line,
                format!("expected {dim} features, found {}", record.len().saturating_sub(2)),
            ));
        }
        let id: u64 = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad id `{}`", &record[0])))?;
        let label: usize = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad class `{}`", &record[1])))?;
        let row = record
            .iter()
            .skip(2)
            .map(|v| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(parse_err(line, format!("bad feature value `{v}`"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if !seen.insert(id) {
            return Err(Error::Integrity(format!("duplicate sample id {id} at line {line}")));
        }
        ids.push(SampleId(id));
        labels.push(label);
        features.push(row);
    }
    Dataset::new(ids, labels, features)
}

/// Reads a dataset file and min-max normalises its features.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_dataset(std::io::BufReader::new(file), path)?;
    ds.normalize();
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub clusters_per_class: usize,
    /// Samples per class, spread as evenly as possible over its clusters.
    pub per_class: usize,
    pub dim: usize,
    /// Standard deviation of every coordinate around its cluster center.
    pub noise: f64,
    pub seed: u64,
}

/// Class-balanced Gaussian mixture with uniformly placed cluster centers.
///
/// Centers are drawn from the unit cube, points get isotropic Gaussian noise,
/// and the result is min-max normalised so that [`load_dataset`] reads the
/// written file back unchanged.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::Usage("synthetic data needs at least 2 classes".into()));
    }
    if spec.clusters_per_class == 0 {
        return Err(Error::Usage("need at least one cluster per class".into()));
    }
    if spec.per_class == 0 || spec.dim == 0 {
        return Err(Error::Usage("per-class count and dimension must be positive".into()));
    }
    if !(spec.noise >= 0.0) || !spec.noise.is_finite() {
        return Err(Error::Usage(format!("noise {} must be finite and >= 0", spec.noise)));
    }
    let mut rng = stream(spec.seed, Purpose::Synthetic, 0, 0);
    let n_clusters = spec.classes * spec.clusters_per_class;
    let centers: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| (0..spec.dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Usage(e.to_string()))?;

    let total = spec.classes * spec.per_class;
    let (mut ids, mut labels, mut features) =
        (Vec::with_capacity(total), Vec::with_capacity(total), Vec::with_capacity(total));
    for class in 0..spec.classes {
        for cluster in 0..spec.clusters_per_class {
            let count = spec.per_class / spec.clusters_per_class
                + usize::from(cluster < spec.per_class % spec.clusters_per_class);
            let center = &centers[class * spec.clusters_per_class + cluster];
            for _ in 0..count {
                let x = center
                    .iter()
                    .map(|c| if spec.noise > 0.0 { c + normal.sample(&mut rng) } else { *c })
                    .collect();
                ids.push(SampleId(ids.len() as u64));
                labels.push(class);
                features.push(x);
            }
        }
    }
    let mut ds = Dataset::new(ids, labels, features)?;
    ds.normalize();
    Ok(ds)
}
