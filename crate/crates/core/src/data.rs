//! Mixed-set datasets: synthetic generation with controllable per-group
//! domain shift, CSV ingestion of precomputed feature vectors, and seeded
//! batch iteration.
//!
//! The class split is structural: classes `1..=k` come from domain α, classes
//! `k+1..=c` from domain β, and the unlabeled target covers all classes.
//! Target labels are stored for evaluation but never surface through the
//! training-facing API (the target batch stream yields features only).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::DenseArray;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    Alpha,
    Beta,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    /// 1-based class label; `None` for unlabeled target samples.
    pub y: Option<usize>,
    pub domain: DomainTag,
}

/// Labeled source samples split by originating domain plus unlabeled target
/// samples. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSourceDataset {
    alpha: Vec<Sample>,
    beta: Vec<Sample>,
    target_x: Vec<Vec<f64>>,
    target_labels: Vec<Option<usize>>,
    classes: usize,
    alpha_classes: usize,
    dim: usize,
}

impl MixedSourceDataset {
    pub fn new(
        alpha: Vec<Sample>,
        beta: Vec<Sample>,
        target_x: Vec<Vec<f64>>,
        target_labels: Vec<Option<usize>>,
        classes: usize,
        alpha_classes: usize,
    ) -> Result<Self> {
        if alpha_classes < 1 || alpha_classes >= classes {
            return Err(Error::Config(format!(
                "alpha_classes must satisfy 1 <= k < c, got k={alpha_classes}, c={classes}"
            )));
        }
        let dim = alpha
            .first()
            .map(|s| s.x.len())
            .or_else(|| beta.first().map(|s| s.x.len()))
            .or_else(|| target_x.first().map(|x| x.len()))
            .ok_or_else(|| Error::Data("dataset has no samples at all".into()))?;
        let mut class_seen = vec![false; classes];
        for (name, split, lo, hi) in [
            ("alpha", &alpha, 1, alpha_classes),
            ("beta", &beta, alpha_classes + 1, classes),
        ] {
            for (i, s) in split.iter().enumerate() {
                if s.x.len() != dim {
                    return Err(Error::Data(format!(
                        "{name} sample {i} has dimension {} but expected {dim}",
                        s.x.len()
                    )));
                }
                let y = s.y.ok_or_else(|| {
                    Error::Data(format!("{name} sample {i} is missing its label"))
                })?;
                if y < lo || y > hi {
                    return Err(Error::Data(format!(
                        "{name} sample {i} has label {y} outside {lo}..={hi}"
                    )));
                }
                class_seen[y - 1] = true;
            }
        }
        if let Some(missing) = class_seen.iter().position(|&seen| !seen) {
            return Err(Error::Data(format!(
                "class {} has no source sample",
                missing + 1
            )));
        }
        if target_labels.len() != target_x.len() {
            return Err(Error::Data(format!(
                "target has {} feature rows but {} label slots",
                target_x.len(),
                target_labels.len()
            )));
        }
        for (i, x) in target_x.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::Data(format!(
                    "target sample {i} has dimension {} but expected {dim}",
                    x.len()
                )));
            }
        }
        for (i, y) in target_labels.iter().enumerate() {
            if let Some(y) = y {
                if *y < 1 || *y > classes {
                    return Err(Error::Data(format!(
                        "target sample {i} has label {y} outside 1..={classes}"
                    )));
                }
            }
        }
        Ok(MixedSourceDataset {
            alpha,
            beta,
            target_x,
            target_labels,
            classes,
            alpha_classes,
            dim,
        })
    }

    pub fn alpha(&self) -> &[Sample] {
        &self.alpha
    }

    pub fn beta(&self) -> &[Sample] {
        &self.beta
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn alpha_classes(&self) -> usize {
        self.alpha_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn target_len(&self) -> usize {
        self.target_x.len()
    }

    /// All target feature rows as one matrix (training may see these —
    /// features only, no labels).
    pub fn target_features(&self) -> Result<DenseArray> {
        let mut values = Vec::with_capacity(self.target_x.len() * self.dim);
        for x in &self.target_x {
            values.extend_from_slice(x);
        }
        DenseArray::matrix(self.target_x.len(), self.dim, values)
    }

    /// Held-out target labels. Evaluation only: nothing on the training path
    /// calls this.
    pub fn target_labels_for_eval(&self) -> &[Option<usize>] {
        &self.target_labels
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Invertible affine domain transform with optional additive noise:
/// `x ↦ scale · R(rotation) · x + translation + ε`. The rotation acts in the
/// plane of the first two coordinates (ignored for 1-D data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainTransform {
    pub rotation_deg: f64,
    pub scale: f64,
    /// Per-coordinate shift, zero-padded to the data dimension.
    pub translation: Vec<f64>,
    pub noise_sigma: f64,
}

impl Default for DomainTransform {
    fn default() -> Self {
        DomainTransform {
            rotation_deg: 0.0,
            scale: 1.0,
            translation: Vec::new(),
            noise_sigma: 0.0,
        }
    }
}

impl DomainTransform {
    fn validate(&self, dim: usize, name: &str) -> Result<()> {
        if self.scale == 0.0 {
            return Err(Error::Config(format!(
                "{name} transform has zero scale (not invertible)"
            )));
        }
        if self.translation.len() > dim {
            return Err(Error::Config(format!(
                "{name} transform has a {}-dim translation for {dim}-dim data",
                self.translation.len()
            )));
        }
        Ok(())
    }

    fn apply(&self, x: &[f64], rng: &mut Stream) -> Vec<f64> {
        let mut out = x.to_vec();
        if x.len() >= 2 && self.rotation_deg != 0.0 {
            let theta = self.rotation_deg.to_radians();
            let (sin, cos) = theta.sin_cos();
            let (x0, x1) = (out[0], out[1]);
            out[0] = cos * x0 - sin * x1;
            out[1] = sin * x0 + cos * x1;
        }
        for v in &mut out {
            *v *= self.scale;
        }
        for (i, t) in self.translation.iter().enumerate() {
            out[i] += t;
        }
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("positive sigma");
            for v in &mut out {
                *v += normal.sample(rng);
            }
        }
        out
    }
}

/// How class prototypes are placed in the base space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeLayout {
    /// Evenly spaced on a circle of radius `prototype_spread` in the first
    /// two coordinates: guarantees class separation at every seed.
    #[default]
    Circle,
    /// Independent draws from `N(0, prototype_spread²·I)`.
    Gaussian,
}

/// Configuration of the synthetic mixed-set task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub alpha_classes: usize,
    pub dim: usize,
    pub samples_per_class_source: usize,
    pub samples_per_class_target: usize,
    pub prototype_spread: f64,
    pub prototype_layout: PrototypeLayout,
    pub within_class_sigma: f64,
    pub alpha_transform: DomainTransform,
    pub beta_transform: DomainTransform,
    pub target_transform: DomainTransform,
    /// Explicit data seed; when absent the run seed is used.
    pub seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 8,
            alpha_classes: 4,
            dim: 2,
            samples_per_class_source: 200,
            samples_per_class_target: 200,
            prototype_spread: 3.0,
            prototype_layout: PrototypeLayout::Circle,
            within_class_sigma: 0.25,
            alpha_transform: DomainTransform::default(),
            beta_transform: DomainTransform {
                rotation_deg: 50.0,
                scale: 1.3,
                translation: Vec::new(),
                noise_sigma: 0.05,
            },
            target_transform: DomainTransform {
                rotation_deg: 25.0,
                scale: 1.0,
                translation: vec![0.5, 0.5],
                noise_sigma: 0.0,
            },
            seed: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.alpha_classes < 1 || self.alpha_classes >= self.classes {
            return Err(Error::Config(format!(
                "alpha_classes must satisfy 1 <= k < c, got k={}, c={}",
                self.alpha_classes, self.classes
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.samples_per_class_source == 0 || self.samples_per_class_target == 0 {
            return Err(Error::Config("samples per class must be positive".into()));
        }
        self.alpha_transform.validate(self.dim, "alpha")?;
        self.beta_transform.validate(self.dim, "beta")?;
        self.target_transform.validate(self.dim, "target")?;
        Ok(())
    }
}

/// Generate a synthetic mixed-set problem: class prototypes in a base space,
/// within-class Gaussian noise, then the per-group domain transform. Fully
/// deterministic given the seed.
pub fn synth_mixed(cfg: &SynthConfig, default_seed: u64) -> Result<MixedSourceDataset> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed.unwrap_or(default_seed), Purpose::DataGen);
    let standard = Normal::new(0.0, 1.0).expect("unit sigma");

    let prototypes: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|class| match cfg.prototype_layout {
            PrototypeLayout::Circle => {
                let angle = 2.0 * std::f64::consts::PI * class as f64 / cfg.classes as f64;
                let mut p = vec![0.0; cfg.dim];
                p[0] = cfg.prototype_spread * angle.cos();
                if cfg.dim >= 2 {
                    p[1] = cfg.prototype_spread * angle.sin();
                }
                p
            }
            PrototypeLayout::Gaussian => (0..cfg.dim)
                .map(|_| cfg.prototype_spread * standard.sample(&mut rng))
                .collect(),
        })
        .collect();

    let content = |proto: &[f64], rng: &mut Stream| -> Vec<f64> {
        proto
            .iter()
            .map(|&p| p + cfg.within_class_sigma * standard.sample(rng))
            .collect()
    };

    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    for class in 1..=cfg.classes {
        for _ in 0..cfg.samples_per_class_source {
            let base = content(&prototypes[class - 1], &mut rng);
            if class <= cfg.alpha_classes {
                alpha.push(Sample {
                    x: cfg.alpha_transform.apply(&base, &mut rng),
                    y: Some(class),
                    domain: DomainTag::Alpha,
                });
            } else {
                beta.push(Sample {
                    x: cfg.beta_transform.apply(&base, &mut rng),
                    y: Some(class),
                    domain: DomainTag::Beta,
                });
            }
        }
    }
    let mut target_x = Vec::new();
    let mut target_labels = Vec::new();
    for class in 1..=cfg.classes {
        for _ in 0..cfg.samples_per_class_target {
            let base = content(&prototypes[class - 1], &mut rng);
            target_x.push(cfg.target_transform.apply(&base, &mut rng));
            target_labels.push(Some(class));
        }
    }
    MixedSourceDataset::new(
        alpha,
        beta,
        target_x,
        target_labels,
        cfg.classes,
        cfg.alpha_classes,
    )
}

// ---------------------------------------------------------------------------
// CSV feature files
// ---------------------------------------------------------------------------
//
// Format: plain comma-separated values, no quoting. Each row is a label
// followed by the feature values; `-1` in the target file means unlabeled.
// A single optional header line starting with '#' is skipped.

fn write_rows<W: Write>(out: &mut W, rows: &[(i64, &[f64])], dim: usize) -> Result<()> {
    let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    writeln!(out, "# label,{}", header.join(","))?;
    for (label, x) in rows {
        let mut line = label.to_string();
        for v in *x {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Write `alpha.csv`, `beta.csv` and `target.csv` under `dir`. Values use
/// shortest round-trip formatting, so loading reproduces the dataset exactly.
/// Known target labels are written out (they are evaluation data); unlabeled
/// target rows get label `-1`.
pub fn write_dataset_csv(ds: &MixedSourceDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, split) in [("alpha.csv", ds.alpha()), ("beta.csv", ds.beta())] {
        let rows: Vec<(i64, &[f64])> = split
            .iter()
            .map(|s| (s.y.expect("source samples are labeled") as i64, &s.x[..]))
            .collect();
        let mut file = std::fs::File::create(dir.join(name))?;
        write_rows(&mut file, &rows, ds.dim())?;
    }
    let rows: Vec<(i64, &[f64])> = ds
        .target_x
        .iter()
        .zip(&ds.target_labels)
        .map(|(x, y)| (y.map_or(-1, |y| y as i64), &x[..]))
        .collect();
    let mut file = std::fs::File::create(dir.join("target.csv"))?;
    write_rows(&mut file, &rows, ds.dim())?;
    Ok(())
}

fn parse_feature_file(path: &Path, allow_unlabeled: bool) -> Result<Vec<(Option<usize>, Vec<f64>)>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let row = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || (row == 1 && trimmed.starts_with('#')) {
            continue;
        }
        let mut fields = trimmed.split(',');
        let label_field = fields.next().expect("split yields at least one field");
        let label: i64 = label_field.parse().map_err(|_| {
            Error::Data(format!(
                "{}: row {row}: bad label {label_field:?}",
                path.display()
            ))
        })?;
        let label = match label {
            -1 if allow_unlabeled => None,
            l if l >= 1 => Some(l as usize),
            _ => {
                return Err(Error::Data(format!(
                    "{}: row {row}: label {label} not allowed here",
                    path.display()
                )))
            }
        };
        let x: Vec<f64> = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::Data(format!("{}: row {row}: bad value {f:?}", path.display()))
                })
            })
            .collect::<Result<_>>()?;
        if x.is_empty() {
            return Err(Error::Data(format!(
                "{}: row {row}: no feature values",
                path.display()
            )));
        }
        match dim {
            None => dim = Some(x.len()),
            Some(d) if d != x.len() => {
                return Err(Error::Data(format!(
                    "{}: row {row}: {} values but earlier rows have {d}",
                    path.display(),
                    x.len()
                )))
            }
            _ => {}
        }
        rows.push((label, x));
    }
    Ok(rows)
}

/// Load a mixed-set dataset from three CSV feature files. `classes` and
/// `alpha_classes` fix the label ranges each source file must respect.
pub fn load_feature_csv(
    path_alpha: &Path,
    path_beta: &Path,
    path_target: &Path,
    classes: usize,
    alpha_classes: usize,
) -> Result<MixedSourceDataset> {
    let to_samples = |rows: Vec<(Option<usize>, Vec<f64>)>, domain: DomainTag| -> Vec<Sample> {
        rows.into_iter()
            .map(|(y, x)| Sample { x, y, domain })
            .collect()
    };
    let alpha = to_samples(parse_feature_file(path_alpha, false)?, DomainTag::Alpha);
    let beta = to_samples(parse_feature_file(path_beta, false)?, DomainTag::Beta);
    let target_rows = parse_feature_file(path_target, true)?;
    let (target_labels, target_x): (Vec<_>, Vec<_>) = target_rows.into_iter().unzip();
    MixedSourceDataset::new(alpha, beta, target_x, target_labels, classes, alpha_classes)
}

// ---------------------------------------------------------------------------
// Batch iteration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Alpha,
    Beta,
    /// α ∪ β.
    Source,
    Target,
}

/// One drawn batch: features `[m, dim]` plus labels for labeled splits.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: DenseArray,
    pub labels: Option<Vec<usize>>,
}

/// Cycles through a split, reshuffling with the split's own seeded stream at
/// every epoch boundary. The final batch of an epoch may be short so that the
/// per-epoch batch sizes always sum to the split size.
pub struct BatchIterator {
    rows: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    dim: usize,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: Stream,
}

impl BatchIterator {
    pub fn new(
        ds: &MixedSourceDataset,
        split: Split,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        let (rows, labels): (Vec<Vec<f64>>, Option<Vec<usize>>) = match split {
            Split::Alpha => (
                ds.alpha.iter().map(|s| s.x.clone()).collect(),
                Some(ds.alpha.iter().map(|s| s.y.expect("labeled")).collect()),
            ),
            Split::Beta => (
                ds.beta.iter().map(|s| s.x.clone()).collect(),
                Some(ds.beta.iter().map(|s| s.y.expect("labeled")).collect()),
            ),
            Split::Source => {
                let rows = ds
                    .alpha
                    .iter()
                    .chain(&ds.beta)
                    .map(|s| s.x.clone())
                    .collect();
                let labels = ds
                    .alpha
                    .iter()
                    .chain(&ds.beta)
                    .map(|s| s.y.expect("labeled"))
                    .collect();
                (rows, Some(labels))
            }
            Split::Target => (ds.target_x.clone(), None),
        };
        if rows.is_empty() {
            return Err(Error::Contract(format!(
                "batch iterator over empty split {split:?}"
            )));
        }
        let purpose = match split {
            Split::Alpha => Purpose::ShuffleAlpha,
            Split::Beta => Purpose::ShuffleBeta,
            Split::Source => Purpose::ShuffleSource,
            Split::Target => Purpose::ShuffleTarget,
        };
        let mut it = BatchIterator {
            dim: rows[0].len(),
            order: (0..rows.len()).collect(),
            cursor: 0,
            rng: stream(seed, purpose),
            rows,
            labels,
            batch_size,
        };
        it.order.shuffle(&mut it.rng);
        Ok(it)
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = &self.order[self.cursor..end];
        self.cursor = end;
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(&self.rows[i]);
        }
        let x = DenseArray::matrix(indices.len(), self.dim, values)
            .expect("rows are finite and consistent");
        let labels = self
            .labels
            .as_ref()
            .map(|all| indices.iter().map(|&i| all[i]).collect());
        Batch { x, labels }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> SynthConfig {
        SynthConfig {
            samples_per_class_source: 5,
            samples_per_class_target: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn class_groups_carry_their_domain_tags() {
        let cfg = SynthConfig {
            classes: 4,
            alpha_classes: 2,
            ..tiny_config()
        };
        let ds = synth_mixed(&cfg, 7).unwrap();
        assert!(ds
            .alpha()
            .iter()
            .all(|s| s.domain == DomainTag::Alpha && s.y.unwrap() <= 2));
        assert!(ds
            .beta()
            .iter()
            .all(|s| s.domain == DomainTag::Beta && (3..=4).contains(&s.y.unwrap())));
        assert_eq!(ds.alpha().len(), 10);
        assert_eq!(ds.beta().len(), 10);
    }

    #[test]
    fn same_seed_gives_bit_identical_datasets() {
        let cfg = tiny_config();
        let a = synth_mixed(&cfg, 99).unwrap();
        let b = synth_mixed(&cfg, 99).unwrap();
        assert_eq!(a, b);
        let c = synth_mixed(&cfg, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn explicit_data_seed_overrides_run_seed() {
        let cfg = SynthConfig {
            seed: Some(5),
            ..tiny_config()
        };
        let a = synth_mixed(&cfg, 1).unwrap();
        let b = synth_mixed(&cfg, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_must_be_less_than_c() {
        let cfg = SynthConfig {
            classes: 4,
            alpha_classes: 4,
            ..tiny_config()
        };
        let err = synth_mixed(&cfg, 1).unwrap_err();
        assert!(err.to_string().contains("1 <= k < c"), "{err}");
    }

    #[test]
    fn zero_scale_transform_rejected() {
        let cfg = SynthConfig {
            beta_transform: DomainTransform {
                scale: 0.0,
                ..DomainTransform::default()
            },
            ..tiny_config()
        };
        assert!(synth_mixed(&cfg, 1).is_err());
    }

    #[test]
    fn standard_and_alternative_splits_construct() {
        for (c, k) in [(31, 20), (65, 40), (31, 6), (65, 10)] {
            let cfg = SynthConfig {
                classes: c,
                alpha_classes: k,
                samples_per_class_source: 1,
                samples_per_class_target: 1,
                ..SynthConfig::default()
            };
            let ds = synth_mixed(&cfg, 3).unwrap();
            assert_eq!(ds.alpha().len(), k);
            assert_eq!(ds.beta().len(), c - k);
        }
    }

    #[test]
    fn target_covers_every_class() {
        let ds = synth_mixed(&tiny_config(), 11).unwrap();
        let mut seen = vec![false; ds.classes()];
        for y in ds.target_labels_for_eval().iter().flatten() {
            seen[y - 1] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn identity_transforms_leave_prototype_geometry() {
        let cfg = SynthConfig {
            beta_transform: DomainTransform::default(),
            target_transform: DomainTransform::default(),
            within_class_sigma: 0.0,
            ..tiny_config()
        };
        let ds = synth_mixed(&cfg, 13).unwrap();
        // all samples of one class collapse onto its prototype
        let first = &ds.alpha()[0];
        for s in ds.alpha().iter().filter(|s| s.y == first.y) {
            for (a, b) in s.x.iter().zip(&first.x) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_roundtrip_reproduces_dataset_exactly() {
        let ds = synth_mixed(&tiny_config(), 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset_csv(&ds, dir.path()).unwrap();
        let loaded = load_feature_csv(
            &dir.path().join("alpha.csv"),
            &dir.path().join("beta.csv"),
            &dir.path().join("target.csv"),
            ds.classes(),
            ds.alpha_classes(),
        )
        .unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn malformed_row_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let alpha = dir.path().join("alpha.csv");
        std::fs::write(&alpha, "1,0.5,0.5\n1,0.5\n").unwrap();
        let beta = dir.path().join("beta.csv");
        std::fs::write(&beta, "2,0.1,0.2\n").unwrap();
        let target = dir.path().join("target.csv");
        std::fs::write(&target, "-1,0.0,0.0\n").unwrap();
        let err = load_feature_csv(&alpha, &beta, &target, 2, 1).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn source_labels_must_be_positive() {
        let dir = tempfile::tempdir().unwrap();
        let alpha = dir.path().join("alpha.csv");
        std::fs::write(&alpha, "-1,0.5,0.5\n").unwrap();
        let beta = dir.path().join("beta.csv");
        std::fs::write(&beta, "2,0.1,0.2\n").unwrap();
        let target = dir.path().join("target.csv");
        std::fs::write(&target, "-1,0.0,0.0\n").unwrap();
        let err = load_feature_csv(&alpha, &beta, &target, 2, 1).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn minimal_csv_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        let alpha = dir.path().join("alpha.csv");
        std::fs::write(&alpha, "1,0.5,0.5,1.0\n").unwrap();
        let beta = dir.path().join("beta.csv");
        std::fs::write(&beta, "2,0.1,0.2,0.3\n").unwrap();
        let target = dir.path().join("target.csv");
        std::fs::write(&target, "-1,0.0,0.0,0.0\n").unwrap();
        let ds = load_feature_csv(&alpha, &beta, &target, 2, 1).unwrap();
        assert_eq!(ds.alpha().len(), 1);
        assert_eq!(ds.beta().len(), 1);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.target_labels_for_eval(), &[None]);
    }

    #[test]
    fn full_batch_is_one_epoch_pass() {
        let ds = synth_mixed(&tiny_config(), 19).unwrap();
        let n = ds.alpha().len();
        let mut it = BatchIterator::new(&ds, Split::Alpha, n, 1).unwrap();
        let batch = it.next_batch();
        assert_eq!(batch.x.rows(), n);
        let mut labels = batch.labels.unwrap();
        labels.sort_unstable();
        let mut expected: Vec<usize> = ds.alpha().iter().map(|s| s.y.unwrap()).collect();
        expected.sort_unstable();
        assert_eq!(labels, expected);
    }

    #[test]
    fn same_seed_gives_identical_batch_sequences() {
        let ds = synth_mixed(&tiny_config(), 23).unwrap();
        let mut a = BatchIterator::new(&ds, Split::Source, 7, 5).unwrap();
        let mut b = BatchIterator::new(&ds, Split::Source, 7, 5).unwrap();
        for _ in 0..10 {
            let (ba, bb) = (a.next_batch(), b.next_batch());
            assert_eq!(ba.x.values(), bb.x.values());
            assert_eq!(ba.labels, bb.labels);
        }
    }

    #[test]
    fn epoch_batch_sizes_sum_to_split_size() {
        let ds = synth_mixed(&tiny_config(), 29).unwrap();
        let n = ds.target_len();
        let batch = 7;
        let mut it = BatchIterator::new(&ds, Split::Target, batch, 3).unwrap();
        let mut seen = 0;
        while seen < n {
            let b = it.next_batch();
            assert!(b.labels.is_none());
            seen += b.x.rows();
        }
        assert_eq!(seen, n);
    }

    #[test]
    fn empty_split_rejected() {
        let alpha = vec![Sample {
            x: vec![0.0],
            y: Some(1),
            domain: DomainTag::Alpha,
        }];
        let beta = vec![Sample {
            x: vec![1.0],
            y: Some(2),
            domain: DomainTag::Beta,
        }];
        let ds = MixedSourceDataset::new(alpha, beta, vec![], vec![], 2, 1).unwrap();
        assert!(matches!(
            BatchIterator::new(&ds, Split::Target, 4, 1).err(),
            Some(Error::Contract(_))
        ));
    }
}
