//! Train / validation / test partitioning.
//!
//! Subject-exclusive splits place every identity in exactly one fold and
//! stratify the folds' age histograms towards the global one. Random splits
//! assign individual samples and are kept as the leaky baseline.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DatasetTable, LabelSet};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("infeasible split: {0}")]
    Infeasible(String),
    #[error("degenerate fraction: {0}")]
    DegenerateFraction(String),
    #[error("invalid fractions: {0}")]
    InvalidFractions(String),
    #[error("unknown sample_id {0} in split")]
    UnknownSample(String),
    #[error("sample {0} appears in more than one fold")]
    OverlappingFolds(String),
    #[error("identity {0} appears in more than one fold of a subject-exclusive split")]
    IdentityLeak(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("split file parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitMode {
    #[serde(rename = "subject-exclusive")]
    SubjectExclusive,
    #[serde(rename = "random")]
    Random,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::SubjectExclusive => "subject-exclusive",
            SplitMode::Random => "random",
        })
    }
}

impl FromStr for SplitMode {
    type Err = SplitError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "se" | "subject-exclusive" => Ok(SplitMode::SubjectExclusive),
            "rs" | "random" => Ok(SplitMode::Random),
            other => Err(SplitError::Infeasible(format!("unknown split mode {other:?}"))),
        }
    }
}

/// Fold order used throughout: train, validation, test.
pub const FOLD_NAMES: [&str; 3] = ["train", "val", "test"];

/// A named assignment of sample ids to the three folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Row indices of the folds a trainer may see. The test fold is not
/// reachable from this type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainValFolds {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl SplitSpec {
    pub fn folds(&self) -> [&[String]; 3] {
        [&self.train, &self.val, &self.test]
    }

    /// Checks fractions and fold disjointness without a table.
    pub fn validate(&self) -> Result<(), SplitError> {
        check_fractions(self.fractions)?;
        let mut seen = HashSet::new();
        for id in self.folds().into_iter().flatten() {
            if !seen.insert(id.as_str()) {
                return Err(SplitError::OverlappingFolds(id.clone()));
            }
        }
        Ok(())
    }

    /// Full validation: structure, id membership and, for subject-exclusive
    /// splits, identity disjointness.
    pub fn validate_against(&self, table: &DatasetTable) -> Result<(), SplitError> {
        self.validate()?;
        let fold_of_identity = identity_folds(table, self)?;
        if self.mode == SplitMode::SubjectExclusive {
            if let Some((id, _)) = fold_of_identity.iter().find(|(_, folds)| folds.len() > 1) {
                return Err(SplitError::IdentityLeak(id.to_string()));
            }
        }
        Ok(())
    }

    pub fn train_val(&self, table: &DatasetTable) -> Result<TrainValFolds, SplitError> {
        Ok(TrainValFolds {
            train: resolve(table, &self.train)?,
            val: resolve(table, &self.val)?,
        })
    }

    pub fn test_indices(&self, table: &DatasetTable) -> Result<Vec<usize>, SplitError> {
        resolve(table, &self.test)
    }
}

fn resolve(table: &DatasetTable, ids: &[String]) -> Result<Vec<usize>, SplitError> {
    ids.iter()
        .map(|id| table.position(id).ok_or_else(|| SplitError::UnknownSample(id.clone())))
        .collect()
}

/// identity -> set of fold indices it occurs in.
fn identity_folds<'t>(
    table: &'t DatasetTable,
    split: &SplitSpec,
) -> Result<BTreeMap<&'t str, Vec<usize>>, SplitError> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (f, ids) in split.folds().into_iter().enumerate() {
        for idx in resolve(table, ids)? {
            let entry = map.entry(table.samples()[idx].identity_id.as_str()).or_default();
            if !entry.contains(&f) {
                entry.push(f);
            }
        }
    }
    Ok(map)
}

fn check_fractions(fr: [f64; 3]) -> Result<(), SplitError> {
    if fr.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
        return Err(SplitError::InvalidFractions(format!("{fr:?}: each must lie in (0, 1)")));
    }
    let sum: f64 = fr.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SplitError::InvalidFractions(format!("{fr:?} sums to {sum}")));
    }
    Ok(())
}

/// Maps ages to histogram bins: one bin per label for small label sets,
/// otherwise ten equal-width bins over the label range.
#[derive(Debug, Clone)]
pub struct AgeBinning {
    labels: LabelSet,
    per_label: bool,
}

/// Label sets up to this size get one bin per label.
const MAX_PER_LABEL_BINS: usize = 32;
const WIDE_BINS: usize = 10;

impl AgeBinning {
    pub fn for_labels(labels: &LabelSet) -> Self {
        Self {
            labels: labels.clone(),
            per_label: labels.len() <= MAX_PER_LABEL_BINS,
        }
    }

    pub fn n_bins(&self) -> usize {
        if self.per_label {
            self.labels.len()
        } else {
            WIDE_BINS
        }
    }

    pub fn bin(&self, age: i64) -> usize {
        if self.per_label {
            return self.labels.index_of(age).unwrap_or_else(|| {
                // ages outside the set snap to the nearest end
                if age < self.labels.min() { 0 } else { self.labels.len() - 1 }
            });
        }
        let (lo, hi) = (self.labels.min(), self.labels.max());
        let t = (age.clamp(lo, hi) - lo) as f64 / (hi - lo) as f64;
        ((t * WIDE_BINS as f64) as usize).min(WIDE_BINS - 1)
    }

    pub fn counts(&self, ages: impl IntoIterator<Item = i64>) -> Vec<f64> {
        let mut h = vec![0.0; self.n_bins()];
        for a in ages {
            h[self.bin(a)] += 1.0;
        }
        h
    }
}

fn normalized(h: &[f64]) -> Vec<f64> {
    let total: f64 = h.iter().sum();
    if total == 0.0 {
        return vec![0.0; h.len()];
    }
    h.iter().map(|v| v / total).collect()
}

/// Tolerance on achieved fold fractions before a warning is emitted.
pub const FRACTION_TOLERANCE: f64 = 0.02;

pub fn make_split(
    table: &DatasetTable,
    mode: SplitMode,
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitSpec, SplitError> {
    check_fractions(fractions)?;
    if table.is_empty() {
        return Err(SplitError::Infeasible("dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = match mode {
        SplitMode::SubjectExclusive => stratified_identity_assignment(table, fractions, &mut rng)?,
        SplitMode::Random => random_sample_assignment(table.len(), fractions, &mut rng)?,
    };

    let mut folds: [Vec<String>; 3] = Default::default();
    for (idx, &f) in assignment.iter().enumerate() {
        folds[f].push(table.samples()[idx].sample_id.clone());
    }
    if let Some(f) = folds.iter().position(|f| f.is_empty()) {
        return Err(SplitError::DegenerateFraction(format!(
            "{} fold would receive zero samples",
            FOLD_NAMES[f]
        )));
    }
    let n = table.len() as f64;
    for (f, ids) in folds.iter().enumerate() {
        let achieved = ids.len() as f64 / n;
        if (achieved - fractions[f]).abs() > FRACTION_TOLERANCE {
            log::warn!(
                "{} fold holds {:.3} of the samples, requested {:.3}",
                FOLD_NAMES[f],
                achieved,
                fractions[f]
            );
        }
    }
    let [train, val, test] = folds;
    Ok(SplitSpec { mode, seed, fractions, train, val, test })
}

/// Fold index per sample row.
fn random_sample_assignment(
    n: usize,
    fractions: [f64; 3],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, SplitError> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let mut fold = vec![2; n];
    for (pos, &idx) in order.iter().enumerate() {
        fold[idx] = if pos < n_train {
            0
        } else if pos < n_train + n_val {
            1
        } else {
            2
        };
    }
    Ok(fold)
}

/// Greedy identity-to-fold assignment.
///
/// Identities are visited by sample count, largest first (ties in seeded
/// shuffle order). Each goes to the fold whose total cost rises least, where a
/// fold's cost is its sample-count overshoot over target plus the L1 distance
/// between its age histogram and the global histogram scaled by its fraction.
/// A swap-based local search then tightens the histograms.
fn stratified_identity_assignment(
    table: &DatasetTable,
    fractions: [f64; 3],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, SplitError> {
    let binning = AgeBinning::for_labels(table.label_set());
    let n_bins = binning.n_bins();

    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for (i, s) in table.samples().iter().enumerate() {
        members
            .entry(s.identity_id.as_str())
            .or_insert_with(|| {
                order.push(s.identity_id.as_str());
                Vec::new()
            })
            .push(i);
    }
    if order.len() < 3 {
        return Err(SplitError::Infeasible(format!(
            "subject-exclusive split needs at least 3 identities, found {}",
            order.len()
        )));
    }
    order.shuffle(rng);
    order.sort_by_key(|id| std::cmp::Reverse(members[id].len()));

    let n = table.len() as f64;
    let global = binning.counts(table.samples().iter().map(|s| s.age));
    let target_count: [f64; 3] = fractions.map(|f| f * n);
    let target_hist: [Vec<f64>; 3] =
        std::array::from_fn(|f| global.iter().map(|g| g * fractions[f]).collect());

    let mut count = [0.0f64; 3];
    let mut hist: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n_bins]);
    let mut identity_fold = Vec::with_capacity(order.len());
    let mut identity_hist = Vec::with_capacity(order.len());

    for &id in &order {
        let rows = &members[id];
        let mut add = vec![0.0; n_bins];
        for &r in rows {
            add[binning.bin(table.samples()[r].age)] += 1.0;
        }
        let m = rows.len() as f64;

        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..3 {
            let overshoot = |c: f64| (c - target_count[f]).max(0.0);
            let mut delta = overshoot(count[f] + m) - overshoot(count[f]);
            for b in 0..n_bins {
                let before = (hist[f][b] - target_hist[f][b]).abs();
                let after = (hist[f][b] + add[b] - target_hist[f][b]).abs();
                delta += after - before;
            }
            let deficit = (target_count[f] - count[f]) / target_count[f];
            let better = match best {
                None => true,
                Some((_, bd, bdef)) => {
                    delta < bd - 1e-9 || ((delta - bd).abs() <= 1e-9 && deficit > bdef + 1e-12)
                }
            };
            if better {
                best = Some((f, delta, deficit));
            }
        }
        let (f, _, _) = best.expect("three folds");
        count[f] += m;
        for b in 0..n_bins {
            hist[f][b] += add[b];
        }
        identity_fold.push(f);
        identity_hist.push(add);
    }

    let sizes: Vec<usize> = order.iter().map(|id| members[id].len()).collect();
    let global_norm: Vec<f64> = global.iter().map(|g| g / n).collect();
    repair_counts(&sizes, &identity_hist, &mut identity_fold, &mut hist, &mut count, target_count, &global_norm);
    refine_by_swaps(&sizes, &identity_hist, &mut identity_fold, &mut hist, count, &global_norm);

    let mut fold_of = vec![usize::MAX; table.len()];
    for (id, &f) in order.iter().zip(&identity_fold) {
        for &r in &members[id] {
            fold_of[r] = f;
        }
    }
    Ok(fold_of)
}

/// Upper bound on swap evaluations in [`refine_by_swaps`].
const MAX_SWAP_EVALS: usize = 5_000_000;

/// Worst and summed squared deviation of one fold's normalized histogram.
fn fold_deviation(hist: &[f64], count: f64, global: &[f64]) -> (f64, f64) {
    if count == 0.0 {
        return (0.0, 0.0);
    }
    hist.iter().zip(global).fold((0.0, 0.0), |(worst, sq), (h, g)| {
        let d = (h / count - g).abs();
        (f64::max(worst, d), sq + d * d)
    })
}

fn combine(parts: &[(f64, f64); 3]) -> (f64, f64) {
    parts.iter().fold((0.0, 0.0), |(w, s), p| (f64::max(w, p.0), s + p.1))
}

fn improves(new: (f64, f64), old: (f64, f64)) -> bool {
    new.0 < old.0 - 1e-12 || ((new.0 - old.0).abs() <= 1e-12 && new.1 < old.1 - 1e-12)
}

/// Moves single identities between folds while that strictly lowers the
/// total sample-count error, picking among such moves the one that keeps the
/// histograms closest to the global one.
fn repair_counts(
    sizes: &[usize],
    identity_hist: &[Vec<f64>],
    fold: &mut [usize],
    hist: &mut [Vec<f64>; 3],
    count: &mut [f64; 3],
    target: [f64; 3],
    global: &[f64],
) {
    let count_error = |c: &[f64; 3]| (0..3).map(|f| (c[f] - target[f]).abs()).sum::<f64>();
    loop {
        let current = count_error(count);
        let mut best: Option<(usize, usize, (f64, f64))> = None;
        for (i, &from) in fold.iter().enumerate() {
            let m = sizes[i] as f64;
            if count[from] <= m {
                continue;
            }
            for to in (0..3).filter(|&t| t != from) {
                let mut c = *count;
                c[from] -= m;
                c[to] += m;
                if count_error(&c) >= current - 1e-9 {
                    continue;
                }
                let mut parts: [(f64, f64); 3] = std::array::from_fn(|f| fold_deviation(&hist[f], c[f], global));
                let moved = |h: &[f64], sign: f64| -> Vec<f64> {
                    h.iter().zip(&identity_hist[i]).map(|(a, b)| a + sign * b).collect()
                };
                parts[from] = fold_deviation(&moved(&hist[from], -1.0), c[from], global);
                parts[to] = fold_deviation(&moved(&hist[to], 1.0), c[to], global);
                let score = combine(&parts);
                if best.is_none_or(|(_, _, b)| improves(score, b)) {
                    best = Some((i, to, score));
                }
            }
        }
        let Some((i, to, _)) = best else { return };
        let (from, m) = (fold[i], sizes[i] as f64);
        for b in 0..hist[from].len() {
            hist[from][b] -= identity_hist[i][b];
            hist[to][b] += identity_hist[i][b];
        }
        count[from] -= m;
        count[to] += m;
        fold[i] = to;
    }
}

/// Local search after the greedy pass: swaps two identities of equal size
/// between folds whenever that lowers the worst per-bin histogram deviation
/// (ties broken by the summed squared deviation). Fold sizes are unchanged.
fn refine_by_swaps(
    sizes: &[usize],
    identity_hist: &[Vec<f64>],
    fold: &mut [usize],
    hist: &mut [Vec<f64>; 3],
    count: [f64; 3],
    global: &[f64],
) {
    let mut parts: [(f64, f64); 3] = std::array::from_fn(|f| fold_deviation(&hist[f], count[f], global));
    let mut evals = 0;
    let mut improved = true;
    while improved && evals < MAX_SWAP_EVALS {
        improved = false;
        for a in 0..fold.len() {
            for c in a + 1..fold.len() {
                let (fa, fc) = (fold[a], fold[c]);
                if fa == fc || sizes[a] != sizes[c] {
                    continue;
                }
                evals += 1;
                let swapped = |f_hist: &[f64], out: &[f64], inc: &[f64]| -> Vec<f64> {
                    f_hist.iter().zip(out).zip(inc).map(|((h, o), i)| h - o + i).collect()
                };
                let ha = swapped(&hist[fa], &identity_hist[a], &identity_hist[c]);
                let hc = swapped(&hist[fc], &identity_hist[c], &identity_hist[a]);
                let mut trial = parts;
                trial[fa] = fold_deviation(&ha, count[fa], global);
                trial[fc] = fold_deviation(&hc, count[fc], global);
                if improves(combine(&trial), combine(&parts)) {
                    hist[fa] = ha;
                    hist[fc] = hc;
                    fold.swap(a, c);
                    parts = trial;
                    improved = true;
                }
                if evals >= MAX_SWAP_EVALS {
                    return;
                }
            }
        }
    }
}

/// `n` splits seeded `base_seed, base_seed + 1, ...`.
pub fn make_split_series(
    table: &DatasetTable,
    mode: SplitMode,
    fractions: [f64; 3],
    base_seed: u64,
    n: usize,
) -> Result<Vec<SplitSpec>, SplitError> {
    if n == 0 {
        return Err(SplitError::Infeasible("split series needs n >= 1".into()));
    }
    (0..n as u64)
        .map(|i| make_split(table, mode, fractions, base_seed.wrapping_add(i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPairOverlap {
    pub train_val: usize,
    pub train_test: usize,
    pub val_test: usize,
}

impl FoldPairOverlap {
    pub fn total(&self) -> usize {
        self.train_val + self.train_test + self.val_test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mode: SplitMode,
    pub overlapping_identities: FoldPairOverlap,
    /// Identities present in more than one fold, sorted.
    pub leaked_identities: Vec<String>,
    pub fold_sizes: [usize; 3],
    pub achieved_fractions: [f64; 3],
    pub global_histogram: Vec<f64>,
    pub age_histograms: [Vec<f64>; 3],
    pub max_bin_deviation: f64,
}

impl AuditReport {
    pub fn is_identity_disjoint(&self) -> bool {
        self.overlapping_identities.total() == 0
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode: {}", self.mode)?;
        writeln!(
            f,
            "fold sizes: train={} val={} test={}",
            self.fold_sizes[0], self.fold_sizes[1], self.fold_sizes[2]
        )?;
        writeln!(
            f,
            "fractions: train={:.4} val={:.4} test={:.4}",
            self.achieved_fractions[0], self.achieved_fractions[1], self.achieved_fractions[2]
        )?;
        let o = &self.overlapping_identities;
        writeln!(
            f,
            "identity overlap: train/val={} train/test={} val/test={}",
            o.train_val, o.train_test, o.val_test
        )?;
        if !self.leaked_identities.is_empty() {
            writeln!(f, "leaked identities: {}", self.leaked_identities.join(","))?;
        }
        write!(f, "max age-bin deviation: {:.4}", self.max_bin_deviation)
    }
}

pub fn audit_split(table: &DatasetTable, split: &SplitSpec) -> Result<AuditReport, SplitError> {
    let binning = AgeBinning::for_labels(table.label_set());
    let global = normalized(&binning.counts(table.samples().iter().map(|s| s.age)));

    let mut indices: [Vec<usize>; 3] = Default::default();
    for (f, ids) in split.folds().into_iter().enumerate() {
        indices[f] = resolve(table, ids)?;
    }
    let identity_sets: [HashSet<&str>; 3] = std::array::from_fn(|f| {
        indices[f]
            .iter()
            .map(|&i| table.samples()[i].identity_id.as_str())
            .collect()
    });
    let inter = |a: usize, b: usize| identity_sets[a].intersection(&identity_sets[b]).count();
    let overlap = FoldPairOverlap {
        train_val: inter(0, 1),
        train_test: inter(0, 2),
        val_test: inter(1, 2),
    };
    let mut leaked: Vec<String> = identity_folds(table, split)?
        .into_iter()
        .filter(|(_, folds)| folds.len() > 1)
        .map(|(id, _)| id.to_string())
        .collect();
    leaked.sort();

    let age_histograms: [Vec<f64>; 3] = std::array::from_fn(|f| {
        normalized(&binning.counts(indices[f].iter().map(|&i| table.samples()[i].age)))
    });
    let max_bin_deviation = age_histograms
        .iter()
        .filter(|h| h.iter().any(|&v| v > 0.0))
        .flat_map(|h| h.iter().zip(&global).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let fold_sizes = [indices[0].len(), indices[1].len(), indices[2].len()];
    let total = table.len() as f64;

    Ok(AuditReport {
        mode: split.mode,
        overlapping_identities: overlap,
        leaked_identities: leaked,
        fold_sizes,
        achieved_fractions: fold_sizes.map(|s| s as f64 / total),
        global_histogram: global,
        age_histograms,
        max_bin_deviation,
    })
}

pub fn save_split(split: &SplitSpec, path: impl AsRef<Path>) -> Result<(), SplitError> {
    let mut text = serde_json::to_string_pretty(split)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a split file and checks its internal consistency. Identity checks
/// need the dataset; see [`load_split_for`].
pub fn load_split(path: impl AsRef<Path>) -> Result<SplitSpec, SplitError> {
    let split: SplitSpec = serde_json::from_str(&fs::read_to_string(path)?)?;
    split.validate()?;
    Ok(split)
}

pub fn load_split_for(path: impl AsRef<Path>, table: &DatasetTable) -> Result<SplitSpec, SplitError> {
    let split = load_split(path)?;
    split.validate_against(table)?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Sample, SynthSpec};

    fn table_of(rows: &[(&str, &str, i64)]) -> DatasetTable {
        let samples = rows
            .iter()
            .map(|&(s, p, a)| Sample {
                sample_id: s.into(),
                identity_id: p.into(),
                age: a,
                features: vec![0.0],
            })
            .collect::<Vec<_>>();
        let labels = LabelSet::infer(samples.iter().map(|s| s.age)).unwrap();
        DatasetTable::new("t", labels, 1, samples).unwrap()
    }

    #[test]
    fn three_singletons_one_per_fold() {
        let t = table_of(&[("a", "A", 1), ("b", "B", 2), ("c", "C", 3)]);
        let third = 1.0 / 3.0;
        let s = make_split(&t, SplitMode::SubjectExclusive, [third, third, 1.0 - 2.0 * third], 4)
            .unwrap();
        assert_eq!(s.train.len(), 1);
        assert_eq!(s.val.len(), 1);
        assert_eq!(s.test.len(), 1);
    }

    #[test]
    fn too_few_identities() {
        let t = table_of(&[("a", "A", 1), ("b", "B", 2), ("c", "B", 3)]);
        assert!(matches!(
            make_split(&t, SplitMode::SubjectExclusive, [0.6, 0.2, 0.2], 0),
            Err(SplitError::Infeasible(_))
        ));
    }

    #[test]
    fn degenerate_fraction_on_tiny_random() {
        let t = table_of(&[("a", "A", 1), ("b", "B", 2), ("c", "C", 3)]);
        assert!(matches!(
            make_split(&t, SplitMode::Random, [0.8, 0.1, 0.1], 0),
            Err(SplitError::DegenerateFraction(_))
        ));
    }

    #[test]
    fn bad_fractions() {
        let t = table_of(&[("a", "A", 1), ("b", "B", 2), ("c", "C", 3)]);
        assert!(make_split(&t, SplitMode::Random, [0.5, 0.5, 0.0], 0).is_err());
        assert!(make_split(&t, SplitMode::Random, [0.5, 0.3, 0.3], 0).is_err());
    }

    #[test]
    fn planted_overlap_is_reported() {
        let t = table_of(&[("a1", "A", 1), ("a2", "A", 1), ("b", "B", 2), ("c", "C", 3)]);
        let split = SplitSpec {
            mode: SplitMode::Random,
            seed: 0,
            fractions: [0.5, 0.25, 0.25],
            train: vec!["a1".into(), "b".into()],
            val: vec!["c".into()],
            test: vec!["a2".into()],
        };
        let r = audit_split(&t, &split).unwrap();
        assert!(r.overlapping_identities.train_test >= 1);
        assert_eq!(r.leaked_identities, vec!["A".to_string()]);
        assert!(!r.is_identity_disjoint());

        let se = SplitSpec { mode: SplitMode::SubjectExclusive, ..split };
        assert!(matches!(se.validate_against(&t), Err(SplitError::IdentityLeak(id)) if id == "A"));
    }

    #[test]
    fn unknown_id_in_audit() {
        let t = table_of(&[("a", "A", 1), ("b", "B", 2), ("c", "C", 3)]);
        let split = SplitSpec {
            mode: SplitMode::Random,
            seed: 0,
            fractions: [0.4, 0.3, 0.3],
            train: vec!["a".into()],
            val: vec!["b".into()],
            test: vec!["zzz".into()],
        };
        assert!(matches!(audit_split(&t, &split), Err(SplitError::UnknownSample(id)) if id == "zzz"));
    }

    #[test]
    fn overlapping_folds_rejected() {
        let split = SplitSpec {
            mode: SplitMode::Random,
            seed: 0,
            fractions: [0.4, 0.3, 0.3],
            train: vec!["a".into()],
            val: vec!["a".into()],
            test: vec!["b".into()],
        };
        assert!(matches!(split.validate(), Err(SplitError::OverlappingFolds(_))));
    }

    #[test]
    fn series_of_one_equals_single_split() {
        let t = generate_synthetic(&SynthSpec::default()).unwrap();
        let s = make_split_series(&t, SplitMode::SubjectExclusive, [0.6, 0.2, 0.2], 9, 1).unwrap();
        let one = make_split(&t, SplitMode::SubjectExclusive, [0.6, 0.2, 0.2], 9).unwrap();
        assert_eq!(s, vec![one]);
    }

    #[test]
    fn small_series_may_coincide_but_is_valid() {
        let t = table_of(&[("a", "A", 1), ("b", "B", 2), ("c", "C", 3)]);
        let third = 1.0 / 3.0;
        let s = make_split_series(&t, SplitMode::SubjectExclusive, [third, third, 1.0 - 2.0 * third], 0, 2)
            .unwrap();
        for sp in &s {
            assert!(audit_split(&t, sp).unwrap().is_identity_disjoint());
        }
    }

    #[test]
    fn binning_switches_to_wide_bins() {
        let small = AgeBinning::for_labels(&LabelSet::range(0, 9).unwrap());
        assert_eq!(small.n_bins(), 10);
        assert_eq!(small.bin(3), 3);
        let wide = AgeBinning::for_labels(&LabelSet::range(0, 100).unwrap());
        assert_eq!(wide.n_bins(), 10);
        assert_eq!(wide.bin(0), 0);
        assert_eq!(wide.bin(100), 9);
        assert_eq!(wide.bin(55), 5);
    }

    #[test]
    fn mode_tokens() {
        assert_eq!("se".parse::<SplitMode>().unwrap(), SplitMode::SubjectExclusive);
        assert_eq!("random".parse::<SplitMode>().unwrap(), SplitMode::Random);
        assert_eq!(
            serde_json::to_string(&SplitMode::SubjectExclusive).unwrap(),
            "\"subject-exclusive\""
        );
    }
}
