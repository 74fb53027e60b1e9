//! Uncertainty envelope evaluation of a multiple-classifier system.
//!
//! For each test point the consistency `gamma` is the share of classifiers
//! voting for the plurality class. At a confidence threshold `gamma0` each
//! outcome is confident-correct (CC), confident-incorrect (CI) or uncertain
//! (U); the envelope is the triple of their rates. Rates from several folds or
//! runs are summarised as mean and 2σ, with σ the sample standard deviation.

use serde::Serialize;

use crate::error::{Error, Result};

/// Per-point class votes from `N` classifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteMatrix {
    votes: Vec<Vec<u64>>,
    classifiers: u64,
    targets: Vec<usize>,
    class_count: usize,
}

impl VoteMatrix {
    pub fn new(votes: Vec<Vec<u64>>, targets: Vec<usize>, class_count: usize) -> Result<Self> {
        if votes.is_empty() {
            return Err(Error::VoteMatrix("no test points".into()));
        }
        if votes.len() != targets.len() {
            return Err(Error::VoteMatrix(format!(
                "{} vote rows but {} targets",
                votes.len(),
                targets.len()
            )));
        }
        if class_count < 2 {
            return Err(Error::VoteMatrix("need at least 2 classes".into()));
        }
        let classifiers: u64 = votes[0].iter().sum();
        if classifiers == 0 {
            return Err(Error::VoteMatrix("rows must hold at least one vote".into()));
        }
        for (i, (row, &t)) in votes.iter().zip(&targets).enumerate() {
            if row.len() != class_count {
                return Err(Error::VoteMatrix(format!("row {i} has {} classes", row.len())));
            }
            if row.iter().sum::<u64>() != classifiers {
                return Err(Error::VoteMatrix(format!(
                    "row {i} sums to {}, expected {classifiers}",
                    row.iter().sum::<u64>()
                )));
            }
            if t >= class_count {
                return Err(Error::VoteMatrix(format!("row {i} target {t} out of range")));
            }
        }
        Ok(Self {
            votes,
            classifiers,
            targets,
            class_count,
        })
    }

    /// Votes of single-label predictors: one classifier per entry of `labels`,
    /// `labels[k][i]` being classifier `k`'s label for point `i`.
    pub fn from_labels(labels: &[Vec<usize>], targets: Vec<usize>, class_count: usize) -> Result<Self> {
        let mut votes = vec![vec![0u64; class_count]; targets.len()];
        for classifier in labels {
            if classifier.len() != targets.len() {
                return Err(Error::VoteMatrix("classifier output length differs".into()));
            }
            for (row, &l) in votes.iter_mut().zip(classifier) {
                if l >= class_count {
                    return Err(Error::VoteMatrix(format!("label {l} out of range")));
                }
                row[l] += 1;
            }
        }
        Self::new(votes, targets, class_count)
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.votes
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn classifiers(&self) -> u64 {
        self.classifiers
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    /// CSV with header `target,vote_0,...,vote_{C-1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target");
        for j in 0..self.class_count {
            out.push_str(&format!(",vote_{j}"));
        }
        out.push('\n');
        for (row, t) in self.votes.iter().zip(&self.targets) {
            out.push_str(&t.to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).peekable();
        let header_like = lines
            .peek()
            .is_some_and(|l| l.split(',').any(|c| c.trim().parse::<u64>().is_err()));
        if header_like {
            lines.next();
        }
        let mut votes = Vec::new();
        let mut targets = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<u64> = line
                .split(',')
                .map(|c| c.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::VoteMatrix(format!("data row {} is not integer", i + 1)))?;
            if cells.len() < 3 {
                return Err(Error::VoteMatrix(format!(
                    "data row {} needs a target and at least two vote columns",
                    i + 1
                )));
            }
            targets.push(cells[0] as usize);
            votes.push(cells[1..].to_vec());
        }
        let c = votes.first().map_or(0, Vec::len);
        Self::new(votes, targets, c)
    }
}

/// Consistency of one vote row and its plurality class (ties to the lowest index).
pub fn consistency(row: &[u64]) -> (f64, usize) {
    let total: u64 = row.iter().sum();
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    (row[best] as f64 / total as f64, best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum OutcomeKind {
    ConfidentCorrect,
    ConfidentIncorrect,
    Uncertain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeOutcome {
    pub gamma: f64,
    pub predicted: usize,
    pub kind: OutcomeKind,
}

// Consistencies are ratios of integers; the slack keeps gamma == gamma0 on
// the confident side whatever the rounding of either value.
const BOUNDARY_SLACK: f64 = 1e-12;

pub fn classify_outcome(gamma: f64, predicted: usize, target: usize, gamma0: f64) -> EnvelopeOutcome {
    let kind = if gamma + BOUNDARY_SLACK < gamma0 {
        OutcomeKind::Uncertain
    } else if predicted == target {
        OutcomeKind::ConfidentCorrect
    } else {
        OutcomeKind::ConfidentIncorrect
    };
    EnvelopeOutcome {
        gamma,
        predicted,
        kind,
    }
}

/// Mean and two-sample-standard-deviation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub two_sigma: f64,
}

impl Estimate {
    pub fn point(value: f64) -> Self {
        Self {
            mean: value,
            two_sigma: 0.0,
        }
    }

    /// Mean and `2 * s` with the `n - 1` sample standard deviation.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Self::point(mean);
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            two_sigma: 2.0 * var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeStats {
    pub mean: f64,
    pub std: f64,
}

impl SizeStats {
    pub fn from_sizes(sizes: &[usize]) -> Self {
        let n = sizes.len().max(1) as f64;
        let mean = sizes.iter().sum::<usize>() as f64 / n;
        let var = sizes.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub gamma0: f64,
    /// Reports pooled into this one (1 for a single evaluation).
    pub runs: usize,
    pub test_points: usize,
    pub accuracy: Estimate,
    pub cc_rate: Estimate,
    pub u_rate: Estimate,
    pub ci_rate: Estimate,
    /// Accuracy of the argmax of averaged probabilities, when available.
    pub soft_accuracy: Option<Estimate>,
    pub tree_size: Option<SizeStats>,
}

impl EnvelopeReport {
    pub fn with_tree_sizes(mut self, sizes: &[usize]) -> Self {
        self.tree_size = Some(SizeStats::from_sizes(sizes));
        self
    }

    /// Records the accuracy of averaged probabilities, one row per test point.
    pub fn with_soft_predictions(mut self, probs: &[Vec<f64>], targets: &[usize]) -> Self {
        let hits = probs
            .iter()
            .zip(targets)
            .filter(|(p, &t)| crate::tree::argmax(p) == t)
            .count();
        self.soft_accuracy = Some(Estimate::point(hits as f64 / targets.len().max(1) as f64));
        self
    }

    /// Accuracy among confident points, `cc / (cc + ci)`.
    pub fn confident_accuracy(&self) -> Option<f64> {
        let confident = self.cc_rate.mean + self.ci_rate.mean;
        (confident > 0.0).then(|| self.cc_rate.mean / confident)
    }
}

pub fn outcomes(vm: &VoteMatrix, gamma0: f64) -> Vec<EnvelopeOutcome> {
    vm.votes
        .iter()
        .zip(&vm.targets)
        .map(|(row, &t)| {
            let (gamma, predicted) = consistency(row);
            classify_outcome(gamma, predicted, t, gamma0)
        })
        .collect()
}

pub fn evaluate(vm: &VoteMatrix, gamma0: f64) -> EnvelopeReport {
    let mut cc = 0usize;
    let mut ci = 0usize;
    let mut u = 0usize;
    let mut correct = 0usize;
    for (o, &t) in outcomes(vm, gamma0).iter().zip(&vm.targets) {
        match o.kind {
            OutcomeKind::ConfidentCorrect => cc += 1,
            OutcomeKind::ConfidentIncorrect => ci += 1,
            OutcomeKind::Uncertain => u += 1,
        }
        if o.predicted == t {
            correct += 1;
        }
    }
    let n = vm.len() as f64;
    EnvelopeReport {
        gamma0,
        runs: 1,
        test_points: vm.len(),
        accuracy: Estimate::point(correct as f64 / n),
        cc_rate: Estimate::point(cc as f64 / n),
        u_rate: Estimate::point(u as f64 / n),
        ci_rate: Estimate::point(ci as f64 / n),
        soft_accuracy: None,
        tree_size: None,
    }
}

/// Mean and 2σ of each metric across reports.
pub fn aggregate(reports: &[EnvelopeReport]) -> Result<EnvelopeReport> {
    if reports.len() < 2 {
        return Err(Error::Config(format!(
            "aggregation needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let over = |f: &dyn Fn(&EnvelopeReport) -> f64| {
        Estimate::from_values(&reports.iter().map(f).collect::<Vec<_>>())
    };
    let soft_accuracy = if reports.iter().all(|r| r.soft_accuracy.is_some()) {
        Some(over(&|r| r.soft_accuracy.expect("checked").mean))
    } else {
        None
    };
    let tree_size = if reports.iter().all(|r| r.tree_size.is_some()) {
        // Pooled over equally weighted reports.
        let sizes: Vec<SizeStats> = reports.iter().map(|r| r.tree_size.expect("checked")).collect();
        let k = sizes.len() as f64;
        let mean = sizes.iter().map(|s| s.mean).sum::<f64>() / k;
        let second = sizes.iter().map(|s| s.std * s.std + s.mean * s.mean).sum::<f64>() / k;
        Some(SizeStats {
            mean,
            std: (second - mean * mean).max(0.0).sqrt(),
        })
    } else {
        None
    };
    Ok(EnvelopeReport {
        gamma0: reports[0].gamma0,
        runs: reports.iter().map(|r| r.runs).sum(),
        test_points: reports.iter().map(|r| r.test_points).sum(),
        accuracy: over(&|r| r.accuracy.mean),
        cc_rate: over(&|r| r.cc_rate.mean),
        u_rate: over(&|r| r.u_rate.mean),
        ci_rate: over(&|r| r.ci_rate.mean),
        soft_accuracy,
        tree_size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma0: f64,
    pub cc_rate: Estimate,
    pub u_rate: Estimate,
    pub ci_rate: Estimate,
}

/// `0.900, 0.901, ..., 1.000`.
pub fn default_grid() -> Vec<f64> {
    (900..=1000).map(|i| i as f64 / 1000.0).collect()
}

/// Envelope rates at each threshold, with 2σ across the given vote matrices
/// (one per fold).
pub fn sweep(folds: &[VoteMatrix], grid: &[f64]) -> Result<Vec<SweepRow>> {
    if folds.is_empty() {
        return Err(Error::VoteMatrix("sweep needs at least one vote matrix".into()));
    }
    for vm in folds {
        let floor = 1.0 / vm.class_count() as f64;
        if let Some(g) = grid.iter().find(|&&g| !(g > floor && g <= 1.0)) {
            return Err(Error::Config(format!("threshold {g} not in (1/C, 1]")));
        }
    }
    // Consistencies do not depend on the threshold; compute them once.
    let per_fold: Vec<Vec<(f64, bool)>> = folds
        .iter()
        .map(|vm| {
            vm.votes
                .iter()
                .zip(&vm.targets)
                .map(|(row, &t)| {
                    let (g, p) = consistency(row);
                    (g, p == t)
                })
                .collect()
        })
        .collect();
    Ok(grid
        .iter()
        .map(|&g0| {
            let mut cc = Vec::new();
            let mut u = Vec::new();
            let mut ci = Vec::new();
            for points in &per_fold {
                let n = points.len() as f64;
                let (mut a, mut b, mut c) = (0usize, 0usize, 0usize);
                for &(g, ok) in points {
                    match classify_outcome(g, 0, usize::from(!ok), g0).kind {
                        OutcomeKind::ConfidentCorrect => a += 1,
                        OutcomeKind::Uncertain => b += 1,
                        OutcomeKind::ConfidentIncorrect => c += 1,
                    }
                }
                cc.push(a as f64 / n);
                u.push(b as f64 / n);
                ci.push(c as f64 / n);
            }
            SweepRow {
                gamma0: g0,
                cc_rate: Estimate::from_values(&cc),
                u_rate: Estimate::from_values(&u),
                ci_rate: Estimate::from_values(&ci),
            }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("gamma0,cc_mean,cc_2sigma,u_mean,u_2sigma,ci_mean,ci_2sigma\n");
    for r in rows {
        out.push_str(&format!(
            "{:.3},{},{},{},{},{},{}\n",
            r.gamma0,
            r.cc_rate.mean,
            r.cc_rate.two_sigma,
            r.u_rate.mean,
            r.u_rate.two_sigma,
            r.ci_rate.mean,
            r.ci_rate.two_sigma
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_consistency_example() {
        let (g, p) = consistency(&[998, 2]);
        assert!((g - 0.998).abs() < 1e-15);
        assert_eq!(p, 0);
        assert_eq!(consistency(&[0, 7, 0]), (1.0, 1));
        assert_eq!(consistency(&[500, 500]), (0.5, 0));
    }

    #[test]
    fn outcome_kinds() {
        assert_eq!(classify_outcome(0.998, 1, 1, 0.99).kind, OutcomeKind::ConfidentCorrect);
        assert_eq!(classify_outcome(1.0, 0, 1, 0.99).kind, OutcomeKind::ConfidentIncorrect);
        assert_eq!(classify_outcome(0.6, 1, 1, 0.99).kind, OutcomeKind::Uncertain);
        assert_eq!(classify_outcome(0.6, 0, 1, 0.99).kind, OutcomeKind::Uncertain);
        // Boundary counts as confident.
        let (g, _) = consistency(&[198, 2]);
        assert_eq!(classify_outcome(g, 0, 0, 0.99).kind, OutcomeKind::ConfidentCorrect);
    }

    #[test]
    fn unanimous_correct() {
        let vm = VoteMatrix::new(vec![vec![5, 0], vec![0, 5]], vec![0, 1], 2).unwrap();
        let r = evaluate(&vm, 0.99);
        assert_eq!((r.cc_rate.mean, r.u_rate.mean, r.ci_rate.mean), (1.0, 0.0, 0.0));
        assert_eq!(r.accuracy.mean, 1.0);
    }

    #[test]
    fn aggregate_two_sigma() {
        let mk = |cc: f64| EnvelopeReport {
            gamma0: 0.99,
            runs: 1,
            test_points: 10,
            accuracy: Estimate::point(0.9),
            cc_rate: Estimate::point(cc),
            u_rate: Estimate::point(1.0 - cc),
            ci_rate: Estimate::point(0.0),
            soft_accuracy: None,
            tree_size: None,
        };
        let r = aggregate(&[mk(0.6), mk(0.8)]).unwrap();
        assert!((r.cc_rate.mean - 0.7).abs() < 1e-12);
        assert!((r.cc_rate.two_sigma - 2.0 * 0.02f64.sqrt()).abs() < 1e-12);
        let same = aggregate(&[mk(0.6), mk(0.6)]).unwrap();
        assert_eq!(same.cc_rate.two_sigma, 0.0);
        assert_eq!(same.accuracy.two_sigma, 0.0);
        assert!(aggregate(&[mk(0.6)]).is_err());
    }

    #[test]
    fn vote_matrix_validation() {
        assert!(VoteMatrix::new(vec![vec![1, 1], vec![2, 1]], vec![0, 0], 2).is_err());
        assert!(VoteMatrix::new(vec![vec![1, 1]], vec![2], 2).is_err());
        assert!(VoteMatrix::new(vec![], vec![], 2).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let vm = VoteMatrix::new(vec![vec![3, 1], vec![0, 4]], vec![1, 1], 2).unwrap();
        let text = vm.to_csv();
        assert!(text.starts_with("target,vote_0,vote_1\n"));
        assert_eq!(VoteMatrix::from_csv(&text).unwrap(), vm);
    }

    #[test]
    fn sweep_grid_and_boundaries() {
        let grid = default_grid();
        assert_eq!(grid.len(), 101);
        assert_eq!(grid[0], 0.9);
        assert_eq!(grid[100], 1.0);
        let vm = VoteMatrix::new(
            vec![vec![10, 0], vec![9, 1], vec![5, 5], vec![0, 10]],
            vec![0, 0, 1, 0],
            2,
        )
        .unwrap();
        let rows = sweep(std::slice::from_ref(&vm), &grid).unwrap();
        let last = rows.last().unwrap();
        // Only the unanimous points are confident at 1.0.
        assert!((last.cc_rate.mean - 0.25).abs() < 1e-12);
        assert!((last.ci_rate.mean - 0.25).abs() < 1e-12);
        assert!((last.u_rate.mean - 0.5).abs() < 1e-12);
        assert!((rows[0].cc_rate.mean - 0.5).abs() < 1e-12);
        assert!(sweep(&[vm], &[0.4]).is_err());
    }
}
