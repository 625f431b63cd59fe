//! Samples, datasets, manifest IO and the identity-correlated synthetic generator.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
}

/// Strictly increasing set of integer labels (ages in years).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct LabelSet(Vec<i64>);

impl LabelSet {
    pub fn new(values: Vec<i64>) -> Result<Self, DataError> {
        if values.is_empty() {
            return Err(DataError::Validation("label set is empty".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Validation(
                "label set must be strictly increasing".into(),
            ));
        }
        Ok(Self(values))
    }

    /// Every integer in `min..=max`.
    pub fn range(min: i64, max: i64) -> Result<Self, DataError> {
        Self::new((min..=max).collect())
    }

    /// Distinct ages present in `ages`, sorted.
    pub fn infer<I: IntoIterator<Item = i64>>(ages: I) -> Result<Self, DataError> {
        let set: BTreeSet<i64> = ages.into_iter().collect();
        Self::new(set.into_iter().collect())
    }

    pub fn values(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> i64 {
        self.0[0]
    }

    pub fn max(&self) -> i64 {
        self.0[self.0.len() - 1]
    }

    pub fn index_of(&self, age: i64) -> Option<usize> {
        self.0.binary_search(&age).ok()
    }

    pub fn contains(&self, age: i64) -> bool {
        self.index_of(age).is_some()
    }

    /// Label values as reals, in order.
    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

impl TryFrom<Vec<i64>> for LabelSet {
    type Error = DataError;
    fn try_from(v: Vec<i64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LabelSet> for Vec<i64> {
    fn from(l: LabelSet) -> Self {
        l.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub identity_id: String,
    pub age: i64,
    pub features: Vec<f64>,
}

/// An immutable, validated collection of samples sharing a label set and
/// feature dimension.
#[derive(Debug, Clone)]
pub struct DatasetTable {
    name: String,
    label_set: LabelSet,
    dimension: usize,
    samples: Vec<Sample>,
    by_id: HashMap<String, usize>,
}

impl PartialEq for DatasetTable {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.label_set == other.label_set
            && self.dimension == other.dimension
            && self.samples == other.samples
    }
}

impl DatasetTable {
    pub fn new(
        name: impl Into<String>,
        label_set: LabelSet,
        dimension: usize,
        samples: Vec<Sample>,
    ) -> Result<Self, DataError> {
        if dimension == 0 {
            return Err(DataError::Validation("dimension must be positive".into()));
        }
        let mut by_id = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.identity_id.is_empty() {
                return Err(DataError::Validation(format!(
                    "sample {} has an empty identity_id",
                    s.sample_id
                )));
            }
            if s.features.len() != dimension {
                return Err(DataError::Validation(format!(
                    "sample {} has {} features, expected {}",
                    s.sample_id,
                    s.features.len(),
                    dimension
                )));
            }
            if !label_set.contains(s.age) {
                return Err(DataError::Validation(format!(
                    "sample {} has age {} outside the label set",
                    s.sample_id, s.age
                )));
            }
            if by_id.insert(s.sample_id.clone(), i).is_some() {
                return Err(DataError::Validation(format!(
                    "duplicate sample_id {}",
                    s.sample_id
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            label_set,
            dimension,
            samples,
            by_id,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Row index of a sample id.
    pub fn position(&self, sample_id: &str) -> Option<usize> {
        self.by_id.get(sample_id).copied()
    }

    /// Distinct identities in first-appearance order.
    pub fn identities(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.identity_id.as_str()))
            .map(|s| s.identity_id.as_str())
            .collect()
    }

    /// Same samples under a different name.
    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..self.clone()
        }
    }

    /// Copy of the table with every sample's features replaced by `f`.
    /// Mostly useful in tests that poison a fold.
    pub fn map_features(&self, mut f: impl FnMut(&Sample) -> Vec<f64>) -> Result<Self, DataError> {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                features: f(s),
                ..s.clone()
            })
            .collect();
        Self::new(self.name.clone(), self.label_set.clone(), self.dimension, samples)
    }
}

/// Reads a manifest, inferring the label set from the ages present.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetTable, DataError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_manifest(&name, &text, None)
}

/// Reads a manifest and rejects ages outside `labels`.
pub fn load_dataset_with_labels(
    path: impl AsRef<Path>,
    labels: &LabelSet,
) -> Result<DatasetTable, DataError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_manifest(&name, &text, Some(labels))
}

/// Parses manifest text: header `sample_id,identity_id,age,f0,...,f{d-1}`.
pub fn parse_manifest(
    name: &str,
    text: &str,
    labels: Option<&LabelSet>,
) -> Result<DatasetTable, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| DataError::Parse { line: 1, message: e.to_string() })?
        .clone();
    if header.len() < 4
        || &header[0] != "sample_id"
        || &header[1] != "identity_id"
        || &header[2] != "age"
    {
        return Err(DataError::Parse {
            line: 1,
            message: "header must be sample_id,identity_id,age,f0,...".into(),
        });
    }
    let dimension = header.len() - 3;
    for (j, col) in header.iter().skip(3).enumerate() {
        if col != format!("f{j}") {
            return Err(DataError::Parse {
                line: 1,
                message: format!("feature column {j} must be named f{j}, found {col}"),
            });
        }
    }

    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| DataError::Parse { line, message: e.to_string() })?;
        if record.len() != header.len() {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let age = record[2].trim().parse::<i64>().map_err(|_| DataError::Parse {
            line,
            message: format!("age {:?} is not an integer", &record[2]),
        })?;
        let features = record
            .iter()
            .skip(3)
            .enumerate()
            .map(|(j, cell)| {
                cell.trim().parse::<f64>().map_err(|_| DataError::Parse {
                    line,
                    message: format!("feature f{j} {cell:?} is not a number"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        samples.push(Sample {
            sample_id: record[0].to_string(),
            identity_id: record[1].to_string(),
            age,
            features,
        });
    }
    if samples.is_empty() {
        return Err(DataError::Validation("manifest has no samples".into()));
    }

    let label_set = match labels {
        Some(l) => l.clone(),
        None => LabelSet::infer(samples.iter().map(|s| s.age))?,
    };
    DatasetTable::new(name, label_set, dimension, samples)
}

/// Serializes a table in manifest form. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_manifest<W: Write>(table: &DatasetTable, out: W) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "identity_id".into(), "age".into()];
    header.extend((0..table.dimension()).map(|j| format!("f{j}")));
    writer.write_record(&header).map_err(csv_io)?;
    for s in table.samples() {
        let mut row = vec![s.sample_id.clone(), s.identity_id.clone(), s.age.to_string()];
        row.extend(s.features.iter().map(|v| format!("{v:?}")));
        writer.write_record(&row).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_dataset(table: &DatasetTable, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = File::create(path)?;
    write_manifest(table, std::io::BufWriter::new(file))
}

fn csv_io(e: csv::Error) -> DataError {
    DataError::Io(std::io::Error::other(e.to_string()))
}

/// Parameters of the identity-correlated synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub dimension: usize,
    pub age_range: [i64; 2],
    /// Scale of the per-identity feature offset.
    pub identity_noise: f64,
    /// Scale of the per-sample observation noise.
    pub observation_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_identities: 50,
            samples_per_identity: 4,
            dimension: 16,
            age_range: [20, 60],
            identity_noise: 2.0,
            observation_noise: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_identities == 0 || self.samples_per_identity == 0 || self.dimension == 0 {
            return Err(DataError::Validation(
                "identities, samples per identity and dimension must be positive".into(),
            ));
        }
        if self.age_range[0] >= self.age_range[1] {
            return Err(DataError::Validation("age range needs min < max".into()));
        }
        if !(self.identity_noise >= 0.0 && self.identity_noise.is_finite())
            || !(self.observation_noise >= 0.0 && self.observation_noise.is_finite())
        {
            return Err(DataError::Validation("noise scales must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Degree of the polynomial age embedding fed through the random map.
const POLY_DEGREE: usize = 3;

/// Generates a synthetic table where every identity carries a persistent
/// feature offset, so same-identity samples cluster in feature space.
///
/// Features are `g(age) + u_identity + noise`, with `g` a fixed random linear
/// map of `[a, a^2, a^3]` for the age normalized to `[-1, 1]`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<DatasetTable, DataError> {
    spec.validate()?;
    let [lo, hi] = spec.age_range;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let map: Vec<[f64; POLY_DEGREE]> = (0..spec.dimension)
        .map(|_| std::array::from_fn(|_| std_normal.sample(&mut rng)))
        .collect();
    let embed = |age: i64| -> Vec<f64> {
        let a = 2.0 * (age - lo) as f64 / (hi - lo) as f64 - 1.0;
        let poly = [a, a * a, a * a * a];
        map.iter()
            .map(|row| row.iter().zip(&poly).map(|(w, p)| w * p).sum())
            .collect()
    };

    let mut samples = Vec::with_capacity(spec.n_identities * spec.samples_per_identity);
    for i in 0..spec.n_identities {
        let identity_id = format!("id{i:04}");
        let base_age = rng.random_range(lo..=hi);
        let offset: Vec<f64> = (0..spec.dimension)
            .map(|_| spec.identity_noise * std_normal.sample(&mut rng))
            .collect();
        for j in 0..spec.samples_per_identity {
            let jitter: i64 = rng.random_range(-1..=1);
            let age = (base_age + jitter).clamp(lo, hi);
            let features = embed(age)
                .into_iter()
                .zip(&offset)
                .map(|(g, u)| g + u + spec.observation_noise * std_normal.sample(&mut rng))
                .collect();
            samples.push(Sample {
                sample_id: format!("{identity_id}-{j:03}"),
                identity_id: identity_id.clone(),
                age,
                features,
            });
        }
    }
    DatasetTable::new("synthetic", LabelSet::range(lo, hi)?, spec.dimension, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "sample_id,identity_id,age,f0,f1\n\
                        a,p1,20,0.5,1\n\
                        b,p2,25,-1.25,2\n\
                        c,p3,30,3,0.1\n";

    #[test]
    fn parses_three_row_manifest() {
        let t = parse_manifest("tiny", TINY, None).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dimension(), 2);
        assert_eq!(t.label_set().values(), &[20, 25, 30]);
        assert_eq!(t.samples()[1].features, vec![-1.25, 2.0]);
    }

    #[test]
    fn duplicate_id_is_validation_error() {
        let text = "sample_id,identity_id,age,f0\na,p1,20,0\na,p2,21,0\n";
        assert!(matches!(
            parse_manifest("d", text, None),
            Err(DataError::Validation(m)) if m.contains("duplicate")
        ));
    }

    #[test]
    fn non_numeric_feature_names_row() {
        let text = "sample_id,identity_id,age,f0\na,p1,20,0\nb,p2,21,abc\n";
        match parse_manifest("d", text, None) {
            Err(DataError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("f0"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn declared_labels_reject_out_of_range_age() {
        let labels = LabelSet::new(vec![20, 25]).unwrap();
        assert!(matches!(
            parse_manifest("d", TINY, Some(&labels)),
            Err(DataError::Validation(_))
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let labels = LabelSet::new(vec![1]).unwrap();
        let s = Sample {
            sample_id: "a".into(),
            identity_id: "p".into(),
            age: 1,
            features: vec![0.0],
        };
        assert!(DatasetTable::new("d", labels, 2, vec![s]).is_err());
    }

    #[test]
    fn label_set_rejects_unsorted() {
        assert!(LabelSet::new(vec![3, 2]).is_err());
        assert!(LabelSet::new(vec![2, 2]).is_err());
        assert!(LabelSet::new(vec![]).is_err());
    }

    #[test]
    fn zero_noise_features_depend_only_on_age() {
        let spec = SynthSpec {
            n_identities: 2,
            samples_per_identity: 2,
            identity_noise: 0.0,
            observation_noise: 0.0,
            ..SynthSpec::default()
        };
        let t = generate_synthetic(&spec).unwrap();
        for a in t.samples() {
            for b in t.samples() {
                if a.age == b.age {
                    assert_eq!(a.features, b.features);
                }
            }
        }
    }

    #[test]
    fn counts_identities_and_samples() {
        let t = generate_synthetic(&SynthSpec::default()).unwrap();
        assert_eq!(t.len(), 200);
        assert_eq!(t.identities().len(), 50);
        assert!(t.samples().iter().all(|s| (20..=60).contains(&s.age)));
    }

    #[test]
    fn invalid_spec_rejected() {
        let bad = SynthSpec { age_range: [5, 5], ..SynthSpec::default() };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SynthSpec { n_identities: 0, ..SynthSpec::default() };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SynthSpec { identity_noise: -1.0, ..SynthSpec::default() };
        assert!(generate_synthetic(&bad).is_err());
    }
}
