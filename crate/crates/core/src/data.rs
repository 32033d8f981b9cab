//! Deterministic synthetic classification datasets in the unit box, plus
//! JSON persistence. Generators are pure functions of their arguments.

use crate::error::{Error, Result};
use crate::numcore::{Norm, RngStream, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Desk-scale perturbation budgets for the default dataset (d = 8).
pub const DESK_DELTA_LINF: f64 = 0.05;
pub const DESK_DELTA_L2: f64 = 0.2;
pub const DESK_DELTA_L1: f64 = 0.6;

pub fn desk_delta(norm: Norm) -> f64 {
    match norm {
        Norm::Linf => DESK_DELTA_LINF,
        Norm::L2 => DESK_DELTA_L2,
        Norm::L1 => DESK_DELTA_L1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    GaussianBlobs,
    TwoRings,
}

impl std::fmt::Display for GenKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GenKind::GaussianBlobs => write!(f, "gaussian_blobs"),
            GenKind::TwoRings => write!(f, "two_rings"),
        }
    }
}

impl std::str::FromStr for GenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_blobs" => Ok(GenKind::GaussianBlobs),
            "two_rings" => Ok(GenKind::TwoRings),
            other => Err(Error::usage(format!(
                "unknown dataset kind '{other}' (expected gaussian_blobs or two_rings)"
            ))),
        }
    }
}

/// Generation provenance carried by a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenMeta {
    pub kind: String,
    pub seed: u64,
}

/// Labeled samples in the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Tensor,
    y: Vec<usize>,
    num_classes: usize,
    split: Split,
    meta: GenMeta,
}

impl Dataset {
    pub fn new(
        x: Tensor,
        y: Vec<usize>,
        num_classes: usize,
        split: Split,
        meta: GenMeta,
    ) -> Result<Self> {
        if x.shape().len() != 2 {
            return Err(Error::usage("dataset features must be an n x d matrix"));
        }
        if x.rows() == 0 {
            return Err(Error::usage("dataset must contain at least one sample"));
        }
        if x.rows() != y.len() {
            return Err(Error::usage(format!(
                "{} samples but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::usage("dataset needs at least two classes"));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(Error::usage(format!(
                "label {bad} out of range [0, {num_classes})"
            )));
        }
        if x.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::usage("dataset features must lie in [0, 1]"));
        }
        Ok(Dataset {
            x,
            y,
            num_classes,
            split,
            meta,
        })
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn meta(&self) -> &GenMeta {
        &self.meta
    }

    /// Copy the indexed rows into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.x.row(i));
            labels.push(self.y[i]);
        }
        (
            Tensor::new(vec![indices.len(), d], data).expect("rows are finite"),
            labels,
        )
    }
}

fn gaussian(stream: &mut RngStream, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count + 1);
    while out.len() < count {
        let (a, b) = stream.next_gaussian_pair();
        out.push(a);
        out.push(b);
    }
    out.truncate(count);
    out
}

/// Generate a class-balanced dataset pair (train, test) rescaled into
/// [0.1, 0.9]^d with a deterministic per-class 80/20 split.
pub fn generate_dataset(
    kind: GenKind,
    n: usize,
    d: usize,
    classes: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(Error::usage("need at least two classes"));
    }
    if n < 2 * classes {
        return Err(Error::usage(format!(
            "n = {n} too small for {classes} classes (need n >= {})",
            2 * classes
        )));
    }
    if d < 2 {
        return Err(Error::usage("need d >= 2"));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::usage(format!("invalid noise {noise}")));
    }
    if kind == GenKind::TwoRings && classes != 2 {
        return Err(Error::usage("two_rings generates exactly two classes"));
    }

    let mut stream = RngStream::new(seed);
    let base = n / classes;
    let rem = n % classes;
    let counts: Vec<usize> = (0..classes).map(|c| base + usize::from(c < rem)).collect();

    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut labels: Vec<usize> = Vec::with_capacity(n);
    match kind {
        GenKind::GaussianBlobs => {
            // Centers stay near the box middle so that, with the default
            // noise, classes overlap enough for perturbations to matter.
            let spread = 0.15;
            let centers: Vec<Vec<f64>> = (0..classes)
                .map(|_| {
                    (0..d)
                        .map(|_| 0.5 + spread * (2.0 * stream.next_f64() - 1.0))
                        .collect()
                })
                .collect();
            for (c, &count) in counts.iter().enumerate() {
                for _ in 0..count {
                    let g = gaussian(&mut stream, d);
                    raw.push(
                        centers[c]
                            .iter()
                            .zip(&g)
                            .map(|(&m, &z)| m + noise * z)
                            .collect(),
                    );
                    labels.push(c);
                }
            }
        }
        GenKind::TwoRings => {
            let radii = [1.0, 2.0];
            for (c, &count) in counts.iter().enumerate() {
                for _ in 0..count {
                    let theta = 2.0 * std::f64::consts::PI * stream.next_f64();
                    let g = gaussian(&mut stream, d);
                    let r = radii[c] + noise * g[0];
                    let mut row = vec![r * theta.cos(), r * theta.sin()];
                    row.extend(g[1..d - 1].iter().map(|&z| noise * z));
                    row.push(noise * g[d - 1]);
                    row.truncate(d);
                    raw.push(row);
                    labels.push(c);
                }
            }
        }
    }

    // One affine map per dimension onto [0.1, 0.9], shared by both splits.
    for j in 0..d {
        let lo = raw.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for row in &mut raw {
            row[j] = if span > 1e-12 {
                0.1 + 0.8 * (row[j] - lo) / span
            } else {
                0.5
            };
        }
    }

    let meta = GenMeta {
        kind: kind.to_string(),
        seed,
    };
    let mut train_rows = Vec::new();
    let mut train_y = Vec::new();
    let mut test_rows = Vec::new();
    let mut test_y = Vec::new();
    let mut offset = 0;
    for &count in &counts {
        let take = count * 4 / 5;
        for i in 0..count {
            let row = &raw[offset + i];
            if i < take {
                train_rows.extend_from_slice(row);
                train_y.push(labels[offset + i]);
            } else {
                test_rows.extend_from_slice(row);
                test_y.push(labels[offset + i]);
            }
        }
        offset += count;
    }

    let train = Dataset::new(
        Tensor::new(vec![train_y.len(), d], train_rows)?,
        train_y,
        classes,
        Split::Train,
        meta.clone(),
    )?;
    let test = Dataset::new(
        Tensor::new(vec![test_y.len(), d], test_rows)?,
        test_y,
        classes,
        Split::Test,
        meta,
    )?;
    Ok((train, test))
}

const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format_version: u32,
    kind: String,
    seed: u64,
    n: usize,
    d: usize,
    classes: usize,
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
    split: Split,
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let d = ds.dim();
    let file = DatasetFile {
        format_version: DATASET_FORMAT_VERSION,
        kind: ds.meta.kind.clone(),
        seed: ds.meta.seed,
        n: ds.len(),
        d,
        classes: ds.num_classes,
        x: (0..ds.len()).map(|i| ds.x.row(i).to_vec()).collect(),
        y: ds.y.clone(),
        split: ds.split,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::format(format!("dataset encode: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| {
        Error::format(format!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    if file.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported dataset format_version {} (expected {DATASET_FORMAT_VERSION})",
            file.format_version
        )));
    }
    if file.x.len() != file.n || file.y.len() != file.n {
        return Err(Error::format(format!(
            "field n = {} does not match {} rows / {} labels",
            file.n,
            file.x.len(),
            file.y.len()
        )));
    }
    if let Some((i, row)) = file.x.iter().enumerate().find(|(_, r)| r.len() != file.d) {
        return Err(Error::format(format!(
            "row {i} has {} values, field d = {}",
            row.len(),
            file.d
        )));
    }
    let flat: Vec<f64> = file.x.into_iter().flatten().collect();
    let x = Tensor::new(vec![file.n, file.d], flat)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    Dataset::new(
        x,
        file.y,
        file.classes,
        file.split,
        GenMeta {
            kind: file.kind,
            seed: file.seed,
        },
    )
    .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}
