//! Annotated datasets: construction, imbalanced synthesis, balanced subsets
//! and the line-delimited JSON file format.
//!
//! A [`LabeledDataset`] is immutable once built. Every sampling operation
//! returns fresh datasets and keeps examples in their source order.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One annotated item.
///
/// `label` is the class index for classification, or the group index for
/// generation tasks, where `target` carries the reference output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: usize,
    pub target: Option<String>,
    pub embedding: Option<Vec<f64>>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: usize) -> Self {
        Self { id: id.into(), text: text.into(), label, target: None, embedding: None }
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self
    }

    pub fn embedding(&self) -> Result<&[f64]> {
        self.embedding.as_deref().ok_or_else(|| Error::MissingEmbedding(self.id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    examples: Vec<Example>,
    label_names: Vec<String>,
    counts: Vec<usize>,
    dimension: Option<usize>,
}

impl LabeledDataset {
    /// Build a dataset over `label_names.len()` classes.
    pub fn new(examples: Vec<Example>, label_names: Vec<String>) -> Result<Self> {
        let classes = label_names.len();
        if classes == 0 {
            return Err(Error::InvalidCounts("a dataset needs at least one class".into()));
        }
        let mut seen = HashSet::with_capacity(examples.len());
        let mut counts = vec![0usize; classes];
        let mut dimension = None;
        for ex in &examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
            if ex.label >= classes {
                return Err(Error::LabelOutOfRange { label: ex.label, classes });
            }
            counts[ex.label] += 1;
            if let Some(e) = &ex.embedding {
                match dimension {
                    None => dimension = Some(e.len()),
                    Some(d) if d != e.len() => {
                        return Err(Error::DimensionMismatch { expected: d, found: e.len() })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { examples, label_names, counts, dimension })
    }

    /// Dataset whose classes are named `"0".."k-1"`.
    pub fn with_classes(examples: Vec<Example>, classes: usize) -> Result<Self> {
        Self::new(examples, (0..classes).map(|c| c.to_string()).collect())
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, index: usize) -> &Example {
        &self.examples[index]
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.label_names.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.examples.len()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    /// Indices of the examples of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count()];
        for (i, ex) in self.examples.iter().enumerate() {
            out[ex.label].push(i);
        }
        out
    }

    /// New dataset holding the examples at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let examples: Vec<Example> = indices.iter().map(|&i| self.examples[i].clone()).collect();
        Self::from_parts(examples, self.label_names.clone())
    }

    /// Replace every embedding, in example order.
    pub fn with_embeddings(&self, embeddings: Vec<Vec<f64>>) -> Result<LabeledDataset> {
        if embeddings.len() != self.len() {
            return Err(Error::LengthMismatch { predictions: embeddings.len(), references: self.len() });
        }
        let examples = self
            .examples
            .iter()
            .zip(embeddings)
            .map(|(ex, e)| Example { embedding: Some(e), ..ex.clone() })
            .collect();
        Self::new(examples, self.label_names.clone())
    }

    pub fn is_embedded(&self) -> bool {
        self.examples.iter().all(|e| e.embedding.is_some())
    }

    // Invariants already hold for examples drawn from a valid dataset.
    pub(crate) fn from_parts(examples: Vec<Example>, label_names: Vec<String>) -> Self {
        let mut counts = vec![0usize; label_names.len()];
        for ex in &examples {
            counts[ex.label] += 1;
        }
        let dimension = examples.iter().find_map(|e| e.embedding.as_ref().map(Vec::len));
        Self { examples, label_names, counts, dimension }
    }
}

/// `max_j n_j / min_j n_j`.
pub fn imbalance_ratio(ds: &LabeledDataset) -> Result<f64> {
    ratio_of_counts(ds.counts())
}

pub(crate) fn ratio_of_counts(counts: &[usize]) -> Result<f64> {
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass { class });
    }
    let max = *counts.iter().max().ok_or(Error::EmptyClass { class: 0 })?;
    let min = *counts.iter().min().ok_or(Error::EmptyClass { class: 0 })?;
    Ok(max as f64 / min as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceProfile {
    /// `n_j = n_max · φ^(−j/(k−1))`.
    Exponential,
    /// Head classes keep `n_max`, tail classes get `n_max / φ`.
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub ratio: f64,
    pub head_count: usize,
    #[serde(default = "default_profile")]
    pub profile: ImbalanceProfile,
    #[serde(default)]
    pub seed: u64,
    /// Number of head classes for the step profile (default `max(1, k/2)`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_head_classes: Option<usize>,
    /// Shuffle the head→tail class order with `seed` instead of ascending index.
    #[serde(default)]
    pub permute_classes: bool,
}

fn default_profile() -> ImbalanceProfile {
    ImbalanceProfile::Exponential
}

impl ImbalanceSpec {
    pub fn exponential(ratio: f64, head_count: usize, seed: u64) -> Self {
        Self {
            ratio,
            head_count,
            profile: ImbalanceProfile::Exponential,
            seed,
            step_head_classes: None,
            permute_classes: false,
        }
    }

    pub fn step(ratio: f64, head_count: usize, seed: u64) -> Self {
        Self { profile: ImbalanceProfile::Step, ..Self::exponential(ratio, head_count, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.ratio.is_finite() || self.ratio < 1.0 {
            return Err(Error::InvalidSpec(format!("ratio {} must be >= 1", self.ratio)));
        }
        if (self.head_count as f64) < self.ratio {
            return Err(Error::InvalidSpec(format!(
                "head_count {} is smaller than ratio {}",
                self.head_count, self.ratio
            )));
        }
        Ok(())
    }

    /// Target counts in head→tail rank order (rank 0 is the largest class).
    pub fn rank_counts(&self, classes: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let head = self.head_count as f64;
        let counts = match self.profile {
            ImbalanceProfile::Exponential => (0..classes)
                .map(|j| {
                    if classes == 1 {
                        head
                    } else {
                        head * self.ratio.powf(-(j as f64) / (classes - 1) as f64)
                    }
                })
                .collect::<Vec<_>>(),
            ImbalanceProfile::Step => {
                let heads = self.step_head_classes.unwrap_or((classes / 2).max(1)).min(classes);
                (0..classes).map(|j| if j < heads { head } else { head / self.ratio }).collect()
            }
        };
        Ok(counts.into_iter().map(|c| round_half_up(c).max(1)).collect())
    }

    /// Head→tail ordering of class indices.
    pub fn class_order(&self, classes: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..classes).collect();
        if self.permute_classes {
            order.shuffle(&mut rng::stream(self.seed, "imbalance/class-order"));
        }
        order
    }

    /// Target count for each class index.
    pub fn class_counts(&self, classes: usize) -> Result<Vec<usize>> {
        let ranked = self.rank_counts(classes)?;
        let mut out = vec![0; classes];
        for (rank, class) in self.class_order(classes).into_iter().enumerate() {
            out[class] = ranked[rank];
        }
        Ok(out)
    }
}

fn round_half_up(x: f64) -> usize {
    // Absorb representation error such as 5000 * 0.01 = 50.000000000000004.
    let snapped = (x * 1e9).round() / 1e9;
    (snapped + 0.5).floor() as usize
}

/// Subsample `source` so that its class counts follow `spec`.
pub fn make_imbalanced(source: &LabeledDataset, spec: &ImbalanceSpec) -> Result<LabeledDataset> {
    let targets = spec.class_counts(source.class_count())?;
    let by_class = source.class_indices();
    let mut keep = Vec::with_capacity(targets.iter().sum());
    for (class, (&want, members)) in targets.iter().zip(&by_class).enumerate() {
        if members.len() < want {
            return Err(Error::InsufficientSource { class, available: members.len(), required: want });
        }
        let mut rng = rng::stream(spec.seed, &format!("imbalance/class-{class}"));
        keep.extend(index::sample(&mut rng, members.len(), want).into_iter().map(|i| members[i]));
    }
    keep.sort_unstable();
    Ok(source.select(&keep))
}

/// Draw `floor(total_size / k)` examples per class uniformly without
/// replacement. Returns `(balanced, remainder)`.
pub fn balanced_subset(
    ds: &LabeledDataset,
    total_size: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let classes = ds.class_count();
    let per_class = total_size / classes;
    if per_class < 1 {
        return Err(Error::InvalidSize { total: total_size, classes });
    }
    let min_count = ds.counts().iter().copied().min().unwrap_or(0);
    if per_class >= min_count {
        return Err(Error::SubsetTooLarge { per_class, min_count });
    }
    let mut chosen = vec![false; ds.len()];
    for (class, members) in ds.class_indices().iter().enumerate() {
        let mut rng = rng::stream(seed, &format!("balanced-subset/class-{class}"));
        for i in index::sample(&mut rng, members.len(), per_class) {
            chosen[members[i]] = true;
        }
    }
    let (balanced, rest): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| chosen[i]);
    Ok((ds.select(&balanced), ds.select(&rest)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Classification,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum LabelValue {
    Int(u64),
    Str(String),
}

impl LabelValue {
    fn as_string(&self) -> String {
        match self {
            LabelValue::Int(i) => i.to_string(),
            LabelValue::Str(s) => s.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    text: String,
    label: LabelValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<LabelValue>,
}

/// How to interpret the `label` field of a dataset file.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub task: Task,
    /// Class (or group) names in index order. Inferred from the file when absent.
    pub label_names: Option<Vec<String>>,
}

/// Read a line-delimited JSON dataset.
///
/// For classification, `label` is a class name or index. For generation it
/// is the reference output and the optional `group` field selects the class.
pub fn read_jsonl(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push((lineno + 1, rec));
    }

    let class_value = |rec: &Record| -> Option<LabelValue> {
        match opts.task {
            Task::Classification => Some(rec.label.clone()),
            Task::Generation => rec.group.clone(),
        }
    };
    let names = match &opts.label_names {
        Some(names) => names.clone(),
        None => infer_names(records.iter().filter_map(|(_, r)| class_value(r))),
    };

    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut examples = Vec::with_capacity(records.len());
    let mut seen = HashSet::new();
    let mut dimension = None;
    for (line, rec) in records {
        if !seen.insert(rec.id.clone()) {
            return Err(parse_err(line, format!("duplicate example id `{}`", rec.id)));
        }
        if let Some(e) = &rec.embedding {
            let d = *dimension.get_or_insert(e.len());
            if d != e.len() {
                return Err(parse_err(line, format!("embedding of dimension {} where {d} was expected", e.len())));
            }
        }
        let label = match class_value(&rec) {
            None => 0,
            Some(value) => resolve_label(&value, &names).map_err(|e| parse_err(line, e.to_string()))?,
        };
        let target = match opts.task {
            Task::Classification => None,
            Task::Generation => Some(rec.label.as_string()),
        };
        examples.push(Example { id: rec.id, text: rec.text, label, target, embedding: rec.embedding });
    }
    LabeledDataset::new(examples, names)
}

fn infer_names(values: impl Iterator<Item = LabelValue>) -> Vec<String> {
    let mut ints = BTreeSet::new();
    let mut strs = BTreeSet::new();
    for v in values {
        match v {
            LabelValue::Int(i) => {
                ints.insert(i);
            }
            LabelValue::Str(s) => {
                strs.insert(s);
            }
        }
    }
    if strs.is_empty() {
        let k = ints.iter().next_back().map_or(1, |&m| m as usize + 1);
        (0..k).map(|c| c.to_string()).collect()
    } else {
        strs.extend(ints.into_iter().map(|i| i.to_string()));
        strs.into_iter().collect()
    }
}

fn resolve_label(value: &LabelValue, names: &[String]) -> Result<usize> {
    if let LabelValue::Str(s) = value {
        if let Some(i) = names.iter().position(|n| n == s) {
            return Ok(i);
        }
    }
    match value {
        LabelValue::Int(i) if (*i as usize) < names.len() => Ok(*i as usize),
        LabelValue::Int(i) => Err(Error::LabelOutOfRange { label: *i as usize, classes: names.len() }),
        LabelValue::Str(s) => Err(Error::UnknownLabel(s.clone())),
    }
}

/// Write a dataset in the format read by [`read_jsonl`].
pub fn write_jsonl(ds: &LabeledDataset, path: impl AsRef<Path>, task: Task) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let numeric = ds.label_names().iter().enumerate().all(|(i, n)| *n == i.to_string());
    let class_value = |label: usize| {
        if numeric {
            LabelValue::Int(label as u64)
        } else {
            LabelValue::Str(ds.label_names()[label].clone())
        }
    };
    for ex in ds.examples() {
        let (label, group) = match task {
            Task::Classification => (class_value(ex.label), None),
            Task::Generation => {
                (LabelValue::Str(ex.target.clone().unwrap_or_default()), Some(class_value(ex.label)))
            }
        };
        let rec = Record { id: ex.id.clone(), text: ex.text.clone(), label, embedding: ex.embedding.clone(), group };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
