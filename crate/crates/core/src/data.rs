//! Labeled datasets, CSV ingestion and deterministic splitting.
//!
//! Features are stored row-major. Class labels are contiguous indices
//! `0..class_count`; the loader keeps integer labels as they are and remaps
//! any other label strings in first-seen order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    class_count: usize,
    feature_count: usize,
    feature_names: Vec<String>,
    label_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row vectors. Feature names default to `x1..xm`
    /// and label names to the class indices.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let feature_count = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * feature_count);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != feature_count {
                return Err(Error::RaggedRow {
                    row: i,
                    expected: feature_count,
                    found: row.len(),
                });
            }
            features.extend_from_slice(row);
        }
        let feature_names = (1..=feature_count).map(|j| format!("x{j}")).collect();
        let label_names = (0..class_count).map(|c| c.to_string()).collect();
        Self::new(features, labels, class_count, feature_names, label_names)
    }

    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        class_count: usize,
        feature_names: Vec<String>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let n = labels.len();
        let m = feature_names.len();
        if n == 0 {
            return Err(Error::InvalidDataset("no rows".into()));
        }
        if m == 0 {
            return Err(Error::InvalidDataset("no feature columns".into()));
        }
        if class_count < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, got {class_count}"
            )));
        }
        if features.len() != n * m {
            return Err(Error::InvalidDataset(format!(
                "feature buffer has {} values, expected {}",
                features.len(),
                n * m
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite value at row {}, column {}",
                pos / m,
                pos % m
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} outside 0..{class_count}"
            )));
        }
        if label_names.len() != class_count {
            return Err(Error::InvalidDataset("label name count differs from class count".into()));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            feature_count: m,
            feature_names,
            label_names,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.feature_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_count..(i + 1) * self.feature_count]
    }

    #[inline]
    pub fn value(&self, i: usize, feature: usize) -> f64 {
        self.features[i * self.feature_count + feature]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Fails unless every class occurs at least once.
    pub fn require_all_classes(&self) -> Result<()> {
        let hist = self.class_histogram();
        match hist.iter().position(|&c| c == 0) {
            Some(c) => Err(Error::InvalidDataset(format!(
                "class {c} has no rows in the training data"
            ))),
            None => Ok(()),
        }
    }

    /// Rows `idx` in the given order, keeping the class count and names.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.feature_count);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            class_count: self.class_count,
            feature_count: self.feature_count,
            feature_names: self.feature_names.clone(),
            label_names: self.label_names.clone(),
        }
    }

    /// Writes the dataset as CSV with a header row and the label last.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for name in &self.feature_names {
            out.push_str(name);
            out.push(',');
        }
        out.push_str("label\n");
        for i in 0..self.n() {
            for v in self.row(i) {
                out.push_str(&v.to_string());
                out.push(',');
            }
            out.push_str(&self.label_names[self.labels[i]]);
            out.push('\n');
        }
        out
    }
}

/// Which column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LabelColumn {
    #[default]
    Last,
    Index(usize),
    Name(String),
}

/// Column layout of a CSV file, optionally read from a `key=value` schema file.
///
/// Recognised keys: `header` (`true`, `false`, `auto`), `label_column`
/// (`last`, a 0-based index or a header name) and `categorical` (comma list of
/// 0-based indices or header names whose cells must be integer codes).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CsvSchema {
    /// `None` detects a header when the first row has a non-numeric feature cell.
    pub header: Option<bool>,
    pub label_column: LabelColumn,
    pub categorical: Vec<String>,
}

impl CsvSchema {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut schema = CsvSchema::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("schema line {}: expected key=value", lineno + 1))
            })?;
            let value = value.trim();
            match key.trim() {
                "header" => {
                    schema.header = match value {
                        "true" | "yes" | "1" => Some(true),
                        "false" | "no" | "0" => Some(false),
                        "auto" => None,
                        other => {
                            return Err(Error::Config(format!("schema: bad header value {other:?}")))
                        }
                    }
                }
                "label_column" => {
                    schema.label_column = if value == "last" {
                        LabelColumn::Last
                    } else if let Ok(i) = value.parse::<usize>() {
                        LabelColumn::Index(i)
                    } else {
                        LabelColumn::Name(value.to_string())
                    }
                }
                "categorical" => {
                    schema.categorical = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                other => return Err(Error::Config(format!("schema: unknown key {other:?}"))),
            }
        }
        Ok(schema)
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn resolve_column(spec: &str, names: &[String]) -> Result<usize> {
    if let Ok(i) = spec.parse::<usize>() {
        if i < names.len() {
            return Ok(i);
        }
    }
    names
        .iter()
        .position(|n| n == spec)
        .ok_or_else(|| Error::Config(format!("schema references unknown column {spec:?}")))
}

/// Loads a dataset from CSV. Row order is preserved.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let text = read_text(path)?;
    parse_csv(&text, schema)
}

pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::InvalidDataset(e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push(rec.iter().map(String::from).collect());
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("CSV has no rows".into()));
    }
    let width = records[0].len();
    if width < 2 {
        return Err(Error::InvalidDataset(
            "need at least one feature column and a label column".into(),
        ));
    }

    let label_hint = match &schema.label_column {
        LabelColumn::Index(i) => Some(*i),
        _ => None,
    }
    .unwrap_or(width - 1);
    let has_header = schema.header.unwrap_or_else(|| {
        records[0]
            .iter()
            .enumerate()
            .any(|(j, cell)| j != label_hint && cell.parse::<f64>().is_err())
    });
    let names: Vec<String> = if has_header {
        records.remove(0)
    } else {
        (1..=width).map(|j| format!("x{j}")).collect()
    };
    if records.is_empty() {
        return Err(Error::EmptyInput("CSV has a header but no data rows".into()));
    }
    let label_col = match &schema.label_column {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(Error::Config(format!("label column {i} out of range")))
        }
        LabelColumn::Name(name) => resolve_column(name, &names)?,
    };
    let mut categorical = vec![false; width];
    for spec in &schema.categorical {
        categorical[resolve_column(spec, &names)?] = true;
    }

    // Data rows are numbered from 1 in error messages, counting the header.
    let row_offset = usize::from(has_header) + 1;
    let n = records.len();
    let m = width - 1;
    let mut features = Vec::with_capacity(n * m);
    let mut raw_labels = Vec::with_capacity(n);
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::RaggedRow {
                row: i + row_offset,
                expected: width,
                found: rec.len(),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_col {
                continue;
            }
            let bad = || Error::NonNumericCell {
                row: i + row_offset,
                column: j + 1,
                value: cell.clone(),
            };
            let v = if categorical[j] {
                cell.parse::<i64>().map_err(|_| bad())? as f64
            } else {
                cell.parse::<f64>().map_err(|_| bad())?
            };
            if !v.is_finite() {
                return Err(bad());
            }
            features.push(v);
        }
        raw_labels.push(rec[label_col].as_str());
    }

    let (labels, label_names) = encode_labels(&raw_labels)?;
    let feature_names = names
        .into_iter()
        .enumerate()
        .filter(|(j, _)| *j != label_col)
        .map(|(_, n)| n)
        .collect();
    let class_count = label_names.len();
    Dataset::new(features, labels, class_count, feature_names, label_names)
}

/// Integer labels are used as class indices and must cover `0..=max`;
/// anything else is remapped in first-seen order.
fn encode_labels(raw: &[&str]) -> Result<(Vec<usize>, Vec<String>)> {
    let parsed: Option<Vec<usize>> = raw.iter().map(|s| s.parse::<usize>().ok()).collect();
    if let Some(labels) = parsed {
        let class_count = labels.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; class_count];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::NonContiguousLabels(format!(
                "class {missing} never occurs but label {} does",
                class_count - 1
            )));
        }
        let names = (0..class_count).map(|c| c.to_string()).collect();
        return Ok((labels, names));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let labels = raw
        .iter()
        .map(|&s| {
            *index.entry(s).or_insert_with(|| {
                names.push(s.to_string());
                names.len() - 1
            })
        })
        .collect();
    Ok((labels, names))
}

/// Assignment of rows to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub fold_count: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
    /// False when some class had fewer members than folds and the plan fell
    /// back to an unstratified shuffle.
    pub stratified: bool,
}

impl FoldPlan {
    /// Rows held out by fold `f`, ascending.
    pub fn holdout(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == f)
            .collect()
    }

    /// Rows outside fold `f`, ascending.
    pub fn train(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != f)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.fold_count];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

/// Stratified fold assignment.
///
/// Each class is shuffled and dealt round-robin over the folds, with the
/// dealing position carried from one class to the next so fold sizes differ by
/// at most one.
pub fn make_folds(ds: &Dataset, fold_count: usize, seed: u64) -> Result<FoldPlan> {
    if fold_count < 2 {
        return Err(Error::Config(format!("fold_count must be >= 2, got {fold_count}")));
    }
    if ds.n() < fold_count {
        return Err(Error::InvalidDataset(format!(
            "{} rows cannot fill {fold_count} folds",
            ds.n()
        )));
    }
    let mut rng = rng::stream(seed);
    let hist = ds.class_histogram();
    let stratified = hist.iter().all(|&c| c == 0 || c >= fold_count);
    let mut assignments = vec![0; ds.n()];
    let groups: Vec<Vec<usize>> = if stratified {
        (0..ds.class_count())
            .map(|c| (0..ds.n()).filter(|&i| ds.label(i) == c).collect())
            .collect()
    } else {
        vec![(0..ds.n()).collect()]
    };
    let mut next = 0;
    for mut group in groups {
        group.shuffle(&mut rng);
        for i in group {
            assignments[i] = next;
            next = (next + 1) % fold_count;
        }
    }
    Ok(FoldPlan {
        fold_count,
        assignments,
        seed,
        stratified,
    })
}

/// A partition of a row-index set into a training part and a held-out part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPair {
    pub train: Vec<usize>,
    pub holdout: Vec<usize>,
}

/// Holds out `round(fraction * rows.len())` rows, stratified by label.
pub fn split_validation(ds: &Dataset, rows: &[usize], fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} not in (0,1)")));
    }
    let holdout = (fraction * rows.len() as f64).round() as usize;
    stratified_holdout(ds, rows, holdout, seed)
}

/// Holds out exactly `holdout_count` of `rows`, allocating the count to
/// classes by largest remainder of their proportional share.
pub fn stratified_holdout(
    ds: &Dataset,
    rows: &[usize],
    holdout_count: usize,
    seed: u64,
) -> Result<SplitPair> {
    let size = rows.len();
    if size < 2 || holdout_count == 0 || holdout_count >= size {
        return Err(Error::DegenerateSplit(format!(
            "cannot hold out {holdout_count} of {size} rows with both sides non-empty"
        )));
    }
    let c = ds.class_count();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for &i in rows {
        by_class[ds.label(i)].push(i);
    }
    let share = holdout_count as f64 / size as f64;
    let mut quota: Vec<usize> = by_class
        .iter()
        .map(|g| (share * g.len() as f64).floor() as usize)
        .collect();
    let mut remaining = holdout_count - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let fa = share * by_class[a].len() as f64 - quota[a] as f64;
        let fb = share * by_class[b].len() as f64 - quota[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if quota[k] < by_class[k].len() {
            quota[k] += 1;
            remaining -= 1;
        }
    }

    let mut rng = rng::stream(seed);
    let mut train = Vec::with_capacity(size - holdout_count);
    let mut holdout = Vec::with_capacity(holdout_count);
    for (group, q) in by_class.iter_mut().zip(quota) {
        group.shuffle(&mut rng);
        holdout.extend_from_slice(&group[..q]);
        train.extend_from_slice(&group[q..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok(SplitPair { train, holdout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn two_class(n0: usize, n1: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n0 + n1).map(|i| vec![i as f64]).collect();
        let labels = (0..n0 + n1).map(|i| usize::from(i >= n0)).collect();
        Dataset::from_rows(&rows, labels, 2).unwrap()
    }

    #[test]
    fn three_row_csv() {
        let ds = parse_csv("1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,0\n", &CsvSchema::default()).unwrap();
        assert_eq!((ds.n(), ds.m(), ds.class_count()), (3, 2, 2));
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.row(2), &[5.0, 6.0]);
    }

    #[test]
    fn header_is_detected() {
        let ds = parse_csv("a,b,class\n1,2,0\n3,4,1\n", &CsvSchema::default()).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.feature_names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn gap_in_integer_labels_is_rejected() {
        let err = parse_csv("1,0\n2,1\n3,5\n", &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::NonContiguousLabels(_)), "{err}");
    }

    #[test]
    fn string_labels_map_in_first_seen_order() {
        let ds = parse_csv("1,M\n2,B\n3,M\n", &CsvSchema::default()).unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.label_names(), &["M".to_string(), "B".to_string()]);
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let err = parse_csv("1,2,0\n3,oops,1\n", &CsvSchema::default()).unwrap_err();
        match err {
            Error::NonNumericCell { row, column, .. } => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_and_missing_files() {
        assert!(matches!(
            parse_csv("", &CsvSchema::default()),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            load_csv(Path::new("/nonexistent/x.csv"), &CsvSchema::default()),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn schema_moves_label_and_checks_categorical() {
        let schema = CsvSchema::parse("header=true\nlabel_column=y\ncategorical=kind\n").unwrap();
        let ds = parse_csv("y,kind,v\n1,3,0.5\n0,2,1.5\n", &schema).unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.row(0), &[3.0, 0.5]);
        let err = parse_csv("y,kind,v\n1,3.5,0.5\n0,2,1.5\n", &schema).unwrap_err();
        assert!(matches!(err, Error::NonNumericCell { .. }));
    }

    #[test]
    fn reload_is_identical() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "0.1,0.2,0\n0.3,0.4,1\n").unwrap();
        let a = load_csv(f.path(), &CsvSchema::default()).unwrap();
        let b = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ten_rows_five_folds_one_of_each() {
        let ds = two_class(5, 5);
        let plan = make_folds(&ds, 5, 11).unwrap();
        assert!(plan.stratified);
        for f in 0..5 {
            let labels: Vec<usize> = plan.holdout(f).iter().map(|&i| ds.label(i)).collect();
            assert_eq!(labels.len(), 2);
            assert!(labels.contains(&0) && labels.contains(&1));
        }
        assert_eq!(plan, make_folds(&ds, 5, 11).unwrap());
    }

    #[test]
    fn tiny_class_falls_back_to_unstratified() {
        let ds = two_class(8, 2);
        let plan = make_folds(&ds, 5, 1).unwrap();
        assert!(!plan.stratified);
        assert!(plan.sizes().iter().all(|&s| s == 2));
    }

    #[test]
    fn fold_errors() {
        let ds = two_class(2, 1);
        assert!(make_folds(&ds, 1, 0).is_err());
        assert!(make_folds(&ds, 4, 0).is_err());
    }

    #[test]
    fn validation_sizes() {
        let ds = two_class(60, 78);
        let rows: Vec<usize> = (0..100).collect();
        let s = split_validation(&ds, &rows, 0.3, 3).unwrap();
        assert_eq!((s.train.len(), s.holdout.len()), (70, 30));

        let rows: Vec<usize> = (0..138).collect();
        let s = split_validation(&ds, &rows, 0.3, 3).unwrap();
        assert_eq!((s.train.len(), s.holdout.len()), (97, 41));

        let s = split_validation(&ds, &[0, 137], 0.5, 3).unwrap();
        assert_eq!((s.train.len(), s.holdout.len()), (1, 1));

        assert!(split_validation(&ds, &[0], 0.5, 3).is_err());
        assert!(split_validation(&ds, &[0, 1, 2], 0.01, 3).is_err());
    }

    #[test]
    fn validation_is_stratified_and_disjoint() {
        let ds = two_class(40, 60);
        let rows: Vec<usize> = (0..100).collect();
        let s = split_validation(&ds, &rows, 0.3, 9).unwrap();
        let held1 = s.holdout.iter().filter(|&&i| ds.label(i) == 1).count();
        assert_eq!(held1, 18);
        let mut all: Vec<usize> = s.train.iter().chain(&s.holdout).copied().collect();
        all.sort_unstable();
        assert_eq!(all, rows);
        assert_eq!(s, split_validation(&ds, &rows, 0.3, 9).unwrap());
    }
}
