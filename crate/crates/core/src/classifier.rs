//! Log-Euclidean kernels over SPD descriptors, a precomputed-kernel SMO
//! solver with one-vs-one voting, and subject-fold cross-validation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::container::{Provenance, Reader, Writer};
use crate::descriptor::{KernelSpec, SpdDescriptor};
use crate::error::{Error, Result};
use crate::features::SkeletonTrial;
use crate::linalg::{cholesky_succeeds, eig_sym, squared_frobenius_distance, Matrix, SymMatrix};
use crate::pipeline::{extract_all, PipelineConfig};

pub const SMO_TOLERANCE: f64 = 1e-3;
/// Kernel-entry budget per binary machine.
pub const SMO_KERNEL_EVAL_BUDGET: usize = 10_000_000;
pub const GRAM_PSD_TOLERANCE: f64 = 1e-8;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogEuclideanKernel {
    /// `exp(-γ ‖log A − log B‖²_F)`
    Gaussian { gamma: f64 },
    /// `⟨log A, log B⟩_F`
    Linear,
}

/// Kernel family without its bandwidth, for grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogKernelFamily {
    #[default]
    Gaussian,
    Linear,
}

impl LogEuclideanKernel {
    pub fn gaussian(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be positive and finite, got {gamma}")));
        }
        Ok(LogEuclideanKernel::Gaussian { gamma })
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            LogEuclideanKernel::Gaussian { gamma } => Some(*gamma),
            LogEuclideanKernel::Linear => None,
        }
    }

    pub fn family(&self) -> LogKernelFamily {
        match self {
            LogEuclideanKernel::Gaussian { .. } => LogKernelFamily::Gaussian,
            LogEuclideanKernel::Linear => LogKernelFamily::Linear,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            LogEuclideanKernel::Gaussian { .. } => 0,
            LogEuclideanKernel::Linear => 1,
        }
    }

    fn eval(&self, a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
        match self {
            LogEuclideanKernel::Gaussian { gamma } => Ok((-gamma * squared_frobenius_distance(a, b)?).exp()),
            LogEuclideanKernel::Linear => frobenius_inner(a, b),
        }
    }
}

impl std::fmt::Display for LogEuclideanKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LogEuclideanKernel::Gaussian { gamma } => write!(f, "gaussian(gamma={gamma:?})"),
            LogEuclideanKernel::Linear => f.write_str("linear"),
        }
    }
}

fn frobenius_inner(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(a.as_matrix()
        .as_slice()
        .iter()
        .zip(b.as_matrix().as_slice())
        .map(|(x, y)| x * y)
        .sum())
}

fn check_dims(logs: &[&SymMatrix]) -> Result<()> {
    if let Some(first) = logs.first() {
        if let Some(bad) = logs.iter().find(|l| l.dim() != first.dim()) {
            return Err(Error::DimMismatch {
                expected: first.dim(),
                found: bad.dim(),
            });
        }
    }
    Ok(())
}

/// Pairwise squared log-Euclidean distances, computed once and reused
/// across γ values.
pub fn pairwise_sq_distances(logs: &[&SymMatrix]) -> Result<SymMatrix> {
    check_dims(logs)?;
    let n = logs.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| squared_frobenius_distance(logs[i], logs[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut d = SymMatrix::zeros(n.max(1));
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            d.set_sym(i, i + 1 + off, v);
        }
    }
    Ok(d)
}

/// `1 / median` of the off-diagonal squared log distances.
pub fn median_heuristic_gamma(logs: &[&SymMatrix]) -> Result<f64> {
    if logs.len() < 2 {
        return Err(Error::InvalidConfig("median heuristic needs at least 2 descriptors".into()));
    }
    let d2 = pairwise_sq_distances(logs)?;
    let n = logs.len();
    let mut off: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d2.get(i, j)).collect();
    off.sort_by(f64::total_cmp);
    let med = off[off.len() / 2];
    if !(med > 0.0) {
        return Err(Error::InvalidConfig("descriptors coincide; median distance is zero".into()));
    }
    Ok(1.0 / med)
}

fn pairwise_inner(logs: &[&SymMatrix]) -> Result<SymMatrix> {
    check_dims(logs)?;
    let n = logs.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| frobenius_inner(logs[i], logs[j])).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let mut g = SymMatrix::zeros(n.max(1));
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            g.set_sym(i, i + off, v);
        }
    }
    Ok(g)
}

/// Kernel matrix over training descriptors, with its checked invariants:
/// exact symmetry, unit diagonal for the Gaussian kernel, and minimum
/// eigenvalue above `-GRAM_PSD_TOLERANCE` (scaled by the mean diagonal for
/// the linear kernel).
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub ids: Vec<String>,
    entries: SymMatrix,
    pub kernel: LogEuclideanKernel,
    pub provenance: Provenance,
}

impl GramMatrix {
    fn checked(ids: Vec<String>, entries: SymMatrix, kernel: LogEuclideanKernel) -> Result<Self> {
        let n = ids.len();
        if let LogEuclideanKernel::Gaussian { .. } = kernel {
            if let Some(i) = (0..n).find(|&i| entries.get(i, i) != 1.0) {
                return Err(Error::ShapeMismatch(format!(
                    "Gram diagonal entry {i} is {} (expected 1)",
                    entries.get(i, i)
                )));
            }
        }
        if !entries.is_finite() {
            return Err(Error::NonFinite("Gram matrix"));
        }
        let scale = match kernel {
            LogEuclideanKernel::Gaussian { .. } => 1.0,
            LogEuclideanKernel::Linear => (entries.trace() / n.max(1) as f64).max(1.0),
        };
        let tol = GRAM_PSD_TOLERANCE * scale;
        if n > 0 && !cholesky_succeeds(&entries, tol) {
            let min = eig_sym(&entries)?.min_eigenvalue();
            if min < -tol {
                return Err(Error::NotPositiveDefinite {
                    min_eigenvalue: min,
                    epsilon: tol,
                });
            }
        }
        Ok(GramMatrix {
            ids,
            entries,
            kernel,
            provenance: Provenance::new(),
        })
    }

    /// Gram matrix from precomputed squared distances (Gaussian kernel only).
    pub fn from_sq_distances(ids: Vec<String>, d2: &SymMatrix, gamma: f64) -> Result<Self> {
        let kernel = LogEuclideanKernel::gaussian(gamma)?;
        if d2.dim() != ids.len().max(1) {
            return Err(Error::ShapeMismatch(format!(
                "{} ids for a {}x{} distance matrix",
                ids.len(),
                d2.dim(),
                d2.dim()
            )));
        }
        let n = ids.len();
        let mut g = SymMatrix::zeros(n.max(1));
        for i in 0..n {
            for j in i..n {
                g.set_sym(i, j, (-gamma * d2.get(i, j)).exp());
            }
        }
        Self::checked(ids, g, kernel)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }

    pub fn entries(&self) -> &SymMatrix {
        &self.entries
    }

    pub fn gamma(&self) -> Option<f64> {
        self.kernel.gamma()
    }

    /// Principal submatrix; invariants carry over without rechecking.
    pub fn subset(&self, idx: &[usize]) -> GramMatrix {
        let n = idx.len();
        let mut g = SymMatrix::zeros(n.max(1));
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate().skip(a) {
                g.set_sym(a, b, self.entries.get(i, j));
            }
        }
        GramMatrix {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            entries: g,
            kernel: self.kernel,
            provenance: self.provenance.clone(),
        }
    }

    /// `rows × cols` block of the full matrix.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                m.set(a, b, self.entries.get(i, j));
            }
        }
        m
    }
}

/// Gram matrix over `(id, log_matrix)` pairs.
pub fn log_gram(ids: Vec<String>, logs: &[&SymMatrix], kernel: LogEuclideanKernel) -> Result<GramMatrix> {
    if ids.len() != logs.len() {
        return Err(Error::ShapeMismatch(format!("{} ids for {} matrices", ids.len(), logs.len())));
    }
    match kernel {
        LogEuclideanKernel::Gaussian { gamma } => GramMatrix::from_sq_distances(ids, &pairwise_sq_distances(logs)?, gamma),
        LogEuclideanKernel::Linear => GramMatrix::checked(ids, pairwise_inner(logs)?, kernel),
    }
}

fn cached_logs(descriptors: &[SpdDescriptor]) -> Result<Vec<&SymMatrix>> {
    descriptors
        .iter()
        .map(|d| {
            d.log_matrix
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig(format!("descriptor {} has no cached log", d.trial_id)))
        })
        .collect()
}

/// Gaussian log-Euclidean Gram over descriptors with cached logs.
/// The provenance records the upstream kernel and epsilon policy.
pub fn log_euclidean_gram(descriptors: &[SpdDescriptor], gamma: f64) -> Result<GramMatrix> {
    let logs = cached_logs(descriptors)?;
    let ids = descriptors.iter().map(|d| d.trial_id.clone()).collect();
    let mut g = log_gram(ids, &logs, LogEuclideanKernel::gaussian(gamma)?)?;
    if let Some(first) = descriptors.first() {
        if let Some(other) = descriptors.iter().find(|d| d.kernel != first.kernel) {
            return Err(Error::InvalidKernel(format!(
                "mixed descriptor kernels {} and {}",
                first.kernel, other.kernel
            )));
        }
        g.provenance.set("kernel", first.kernel);
    }
    g.provenance.set("gamma", format!("{gamma:?}"));
    Ok(g)
}

/// `test × train` kernel block, columns in `train` order.
pub fn gram_rows(test: &[&SymMatrix], train: &[&SymMatrix], kernel: LogEuclideanKernel) -> Result<Matrix> {
    let mut all = test.to_vec();
    all.extend_from_slice(train);
    check_dims(&all)?;
    let rows: Vec<Vec<f64>> = test
        .par_iter()
        .map(|a| train.iter().map(|b| kernel.eval(a, b)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let mut m = Matrix::zeros(test.len(), train.len());
    for (i, row) in rows.iter().enumerate() {
        m.row_mut(i).copy_from_slice(row);
    }
    Ok(m)
}

/// One binary soft-margin machine; `positive` is the smaller label.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMachine {
    pub positive: i32,
    pub negative: i32,
    /// Indices into the model's training ids.
    pub support: Vec<usize>,
    /// `α_i y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BinaryMachine {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.support.iter().zip(&self.coef).map(|(&i, &a)| a * row[i]).sum::<f64>() + self.bias
    }
}

struct SmoSolution {
    alpha: Vec<f64>,
    rho: f64,
    iterations: usize,
    converged: bool,
}

/// Solves `min ½αᵀQα − eᵀα, 0 ≤ α ≤ C, yᵀα = 0` with `Q_ij = y_i y_j K_ij`
/// by maximal-violating-pair SMO.
fn smo(k: &[f64], y: &[f64], c: f64) -> SmoSolution {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = (SMO_KERNEL_EVAL_BUDGET / (2 * n).max(1)).max(1);
    let is_upper = |a: f64| a >= c;
    let is_lower = |a: f64| a <= 0.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // i: argmax over I_up of -y G; j: argmin over I_low of -y G.
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = if y[t] > 0.0 { !is_upper(alpha[t]) } else { !is_lower(alpha[t]) };
            let low = if y[t] > 0.0 { !is_lower(alpha[t]) } else { !is_upper(alpha[t]) };
            if up && v > gmax {
                gmax = v;
                i = t;
            }
            if low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < SMO_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y[i] != y[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if is_upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    SmoSolution {
        alpha,
        rho,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Sorted class labels.
    pub classes: Vec<i32>,
    /// Column order expected by [`svm_predict`].
    pub training_ids: Vec<String>,
    pub machines: Vec<BinaryMachine>,
    pub c: f64,
}

pub fn svm_train(gram: &GramMatrix, labels: &[i32], c: f64) -> Result<SvmModel> {
    let n = gram.len();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for a {n}-sample Gram matrix", labels.len())));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!("C must be positive and finite, got {c}")));
    }
    let classes: Vec<i32> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "need at least 2 classes, found {}",
            classes.len()
        )));
    }
    let mut pairs = Vec::new();
    for (a, &pos) in classes.iter().enumerate() {
        for &neg in &classes[a + 1..] {
            pairs.push((pos, neg));
        }
    }
    let machines = pairs
        .par_iter()
        .map(|&(pos, neg)| {
            let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == pos || labels[i] == neg).collect();
            let m = idx.len();
            let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == pos { 1.0 } else { -1.0 }).collect();
            let mut k = vec![0.0; m * m];
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx.iter().enumerate() {
                    k[a * m + b] = gram.get(i, j);
                }
            }
            let sol = smo(&k, &y, c);
            if !sol.converged {
                log::warn!(
                    "SMO for classes ({pos}, {neg}) stopped at the iteration budget ({} iterations)",
                    sol.iterations
                );
            }
            let (support, coef) = idx
                .iter()
                .zip(&sol.alpha)
                .zip(&y)
                .filter(|((_, &a), _)| a > 0.0)
                .map(|((&i, &a), &yy)| (i, a * yy))
                .unzip();
            BinaryMachine {
                positive: pos,
                negative: neg,
                support,
                coef,
                bias: -sol.rho,
                c,
                iterations: sol.iterations,
                converged: sol.converged,
            }
        })
        .collect();
    Ok(SvmModel {
        classes,
        training_ids: gram.ids.clone(),
        machines,
        c,
    })
}

impl SvmModel {
    /// Drops training columns no machine references. Returns the kept
    /// indices into the original training ids.
    pub fn compact(&mut self) -> Vec<usize> {
        let keep: Vec<usize> = self
            .machines
            .iter()
            .flat_map(|m| m.support.iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let remap: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        for m in &mut self.machines {
            for s in &mut m.support {
                *s = remap[s];
            }
        }
        self.training_ids = keep.iter().map(|&i| self.training_ids[i].clone()).collect();
        keep
    }

    pub fn all_converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }
}

/// Majority vote over the binary machines. Ties go to the class with the
/// largest summed |decision| over the pairs it won, then the smallest label.
pub fn svm_predict(model: &SvmModel, gram_rows: &Matrix) -> Result<Vec<i32>> {
    if gram_rows.cols() != model.training_ids.len() {
        return Err(Error::ShapeMismatch(format!(
            "kernel rows have {} columns, model expects {}",
            gram_rows.cols(),
            model.training_ids.len()
        )));
    }
    let pos_of: BTreeMap<i32, usize> = model.classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    Ok((0..gram_rows.rows())
        .map(|r| {
            let row = gram_rows.row(r);
            let mut votes = vec![0usize; model.classes.len()];
            let mut strength = vec![0.0; model.classes.len()];
            for m in &model.machines {
                let d = m.decision(row);
                let winner = if d > 0.0 { m.positive } else { m.negative };
                votes[pos_of[&winner]] += 1;
                strength[pos_of[&winner]] += d.abs();
            }
            let best = (0..model.classes.len())
                .max_by(|&a, &b| {
                    votes[a]
                        .cmp(&votes[b])
                        .then(strength[a].total_cmp(&strength[b]))
                        .then(b.cmp(&a))
                })
                .expect("at least two classes");
            model.classes[best]
        })
        .collect())
}

/// Confusion matrix and accuracies over a label set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<i32>,
    /// `confusion[true][predicted]`, indexed like `classes`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn new(truth: &[i32], predicted: &[i32]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let classes: Vec<i32> = truth
            .iter()
            .chain(predicted)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pos = |l: i32| classes.binary_search(&l).expect("label collected");
        let mut confusion = vec![vec![0; classes.len()]; classes.len()];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[pos(t)][pos(p)] += 1;
        }
        Ok(EvalReport { classes, confusion })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.classes.len()).map(|i| self.confusion[i][i]).sum();
        if self.total() == 0 {
            0.0
        } else {
            correct as f64 / self.total() as f64
        }
    }

    /// Per-class recall; `None` for classes absent from the ground truth.
    pub fn per_class(&self) -> Vec<(i32, Option<f64>)> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let n: usize = self.confusion[i].iter().sum();
                (c, (n > 0).then(|| self.confusion[i][i] as f64 / n as f64))
            })
            .collect()
    }
}

/// Subjects held out per fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<String>>,
}

pub const DEFAULT_FOLDS: usize = 5;

/// Sorts numeric ids numerically, anything else lexicographically.
pub fn sort_subjects(subjects: &mut [String]) {
    if subjects.iter().all(|s| s.parse::<u64>().is_ok()) {
        subjects.sort_by_key(|s| s.parse::<u64>().expect("checked numeric"));
    } else {
        subjects.sort();
    }
}

impl FoldPlan {
    /// Round-robin over sorted distinct subjects into `min(k, #subjects)`
    /// folds.
    pub fn by_subject<S: AsRef<str>>(subjects: &[S], k: usize) -> Result<Self> {
        let mut distinct: Vec<String> = subjects
            .iter()
            .map(|s| s.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        sort_subjects(&mut distinct);
        let k = k.min(distinct.len());
        if k < 2 {
            return Err(Error::EmptyFold(format!(
                "cross-validation needs at least 2 folds; {} subject(s), k = {k}",
                distinct.len()
            )));
        }
        let mut folds = vec![Vec::new(); k];
        for (i, s) in distinct.into_iter().enumerate() {
            folds[i % k].push(s);
        }
        Ok(FoldPlan { folds })
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|s| s == subject))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvGrid {
    pub sigmas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub cs: Vec<f64>,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            sigmas: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            gammas: (-8..=2).map(|e| 2f64.powi(e)).collect(),
            cs: vec![1.0, 10.0, 100.0],
        }
    }
}

impl CvGrid {
    fn validate(&self) -> Result<()> {
        for (name, vals) in [("sigma", &self.sigmas), ("gamma", &self.gammas), ("C", &self.cs)] {
            if vals.is_empty() {
                return Err(Error::InvalidConfig(format!("empty {name} grid")));
            }
            if let Some(v) = vals.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig(format!("{name} grid value {v} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCell {
    /// `None` when the descriptor kernel has no bandwidth.
    pub sigma: Option<f64>,
    /// `None` for the linear log-Euclidean kernel.
    pub gamma: Option<f64>,
    pub c: f64,
    pub fold_accuracies: Vec<f64>,
    /// NaN when the cell could not be evaluated.
    pub mean_accuracy: f64,
    pub error: Option<String>,
}

impl CvCell {
    fn key_cmp(&self, other: &CvCell) -> Ordering {
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (a, b) => a.is_some().cmp(&b.is_some()),
        };
        opt(self.sigma, other.sigma)
            .then(opt(self.gamma, other.gamma))
            .then(self.c.total_cmp(&other.c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub grid: CvGrid,
    pub cells: Vec<CvCell>,
    pub selected: usize,
    pub folds: FoldPlan,
}

impl CvReport {
    pub fn best(&self) -> &CvCell {
        &self.cells[self.selected]
    }

    /// Line-oriented `key=value` text with a stable key order.
    pub fn to_text(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:?}"));
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "grid.sigma={}", list(&self.grid.sigmas));
        let _ = writeln!(s, "grid.gamma={}", list(&self.grid.gammas));
        let _ = writeln!(s, "grid.c={}", list(&self.grid.cs));
        for (i, f) in self.folds.folds.iter().enumerate() {
            let _ = writeln!(s, "fold.{i}={}", f.join(","));
        }
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(
                s,
                "cell.{i}=sigma:{} gamma:{} c:{:?} mean:{:.6} folds:{}{}",
                fmt_opt(c.sigma),
                fmt_opt(c.gamma),
                c.c,
                c.mean_accuracy,
                c.fold_accuracies.iter().map(|a| format!("{a:.6}")).collect::<Vec<_>>().join(","),
                c.error.as_ref().map_or(String::new(), |e| format!(" error:{e}"))
            );
        }
        let b = self.best();
        let _ = writeln!(s, "selected.sigma={}", fmt_opt(b.sigma));
        let _ = writeln!(s, "selected.gamma={}", fmt_opt(b.gamma));
        let _ = writeln!(s, "selected.c={:?}", b.c);
        let _ = writeln!(s, "selected.mean_accuracy={:.6}", b.mean_accuracy);
        s
    }
}

/// Index of the best cell: highest mean accuracy, ties to the smallest
/// (σ, γ, C). Unevaluated (NaN) cells never win.
pub fn select_cell(cells: &[CvCell]) -> Option<usize> {
    (0..cells.len())
        .filter(|&i| !cells[i].mean_accuracy.is_nan())
        .min_by(|&a, &b| {
            cells[b]
                .mean_accuracy
                .total_cmp(&cells[a].mean_accuracy)
                .then(cells[a].key_cmp(&cells[b]))
        })
}

fn with_sigma(kernel: KernelSpec, sigma: f64) -> Result<KernelSpec> {
    match kernel {
        KernelSpec::ExpDot { .. } => KernelSpec::exp_dot(sigma),
        k => Ok(k),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Grid search over (σ, γ, C). Each fold trains on the other folds'
/// subjects and is scored on its own; the selected cell maximizes the mean
/// fold accuracy. σ only applies to the exp-dot descriptor kernel and γ
/// only to the Gaussian log-Euclidean kernel.
pub fn cross_validate(
    trials: &[&SkeletonTrial],
    folds: &FoldPlan,
    grid: &CvGrid,
    pipeline: &PipelineConfig,
    family: LogKernelFamily,
) -> Result<CvReport> {
    grid.validate()?;
    if folds.len() < 2 {
        return Err(Error::EmptyFold(format!("{} fold(s); at least 2 required", folds.len())));
    }
    let fold_of: Vec<usize> = trials
        .iter()
        .map(|t| {
            folds
                .fold_of(&t.subject)
                .ok_or_else(|| Error::UnknownSubject(t.subject.clone()))
        })
        .collect::<Result<_>>()?;
    let split: Vec<(Vec<usize>, Vec<usize>)> = (0..folds.len())
        .map(|f| {
            let (held, rest): (Vec<usize>, Vec<usize>) = (0..trials.len()).partition(|&i| fold_of[i] == f);
            if held.is_empty() {
                return Err(Error::EmptyFold(format!("fold {f} ({}) has no trials", folds.folds[f].join(","))));
            }
            if rest.is_empty() {
                return Err(Error::EmptyFold(format!("fold {f} leaves no training trials")));
            }
            Ok((rest, held))
        })
        .collect::<Result<_>>()?;
    let labels: Vec<i32> = trials.iter().map(|t| t.label).collect();
    let ids: Vec<String> = trials.iter().map(|t| t.trial_id.clone()).collect();

    let sigmas: Vec<Option<f64>> = match pipeline.descriptor.kernel {
        KernelSpec::ExpDot { .. } => grid.sigmas.iter().map(|&s| Some(s)).collect(),
        _ => vec![None],
    };
    let gammas: Vec<Option<f64>> = match family {
        LogKernelFamily::Gaussian => grid.gammas.iter().map(|&g| Some(g)).collect(),
        LogKernelFamily::Linear => vec![None],
    };

    let mut cells = Vec::new();
    for &sigma in &sigmas {
        let mut cfg = *pipeline;
        if let Some(s) = sigma {
            cfg.descriptor.kernel = with_sigma(cfg.descriptor.kernel, s)?;
        }
        let descs: Result<Vec<SpdDescriptor>> = extract_all(trials, &cfg).into_iter().collect();
        let failed = |e: String, cells: &mut Vec<CvCell>| {
            for &gamma in &gammas {
                for &c in &grid.cs {
                    cells.push(CvCell {
                        sigma,
                        gamma,
                        c,
                        fold_accuracies: Vec::new(),
                        mean_accuracy: f64::NAN,
                        error: Some(e.clone()),
                    });
                }
            }
        };
        let descs = match descs {
            Ok(d) => d,
            Err(e) => {
                log::warn!("sigma {sigma:?}: descriptor extraction failed: {e}");
                failed(e.to_string(), &mut cells);
                continue;
            }
        };
        let logs = cached_logs(&descs)?;
        let base = match family {
            LogKernelFamily::Gaussian => pairwise_sq_distances(&logs)?,
            LogKernelFamily::Linear => SymMatrix::zeros(1),
        };
        for &gamma in &gammas {
            let gram = match gamma {
                Some(g) => GramMatrix::from_sq_distances(ids.clone(), &base, g),
                None => log_gram(ids.clone(), &logs, LogEuclideanKernel::Linear),
            };
            let gram = match gram {
                Ok(g) => g,
                Err(e) => {
                    log::warn!("sigma {sigma:?}, gamma {gamma:?}: {e}");
                    for &c in &grid.cs {
                        cells.push(CvCell {
                            sigma,
                            gamma,
                            c,
                            fold_accuracies: Vec::new(),
                            mean_accuracy: f64::NAN,
                            error: Some(e.to_string()),
                        });
                    }
                    continue;
                }
            };
            let jobs: Vec<(usize, usize)> = (0..grid.cs.len())
                .flat_map(|ci| (0..split.len()).map(move |f| (ci, f)))
                .collect();
            let accs: Vec<Result<f64>> = jobs
                .par_iter()
                .map(|&(ci, f)| {
                    let (train, held) = &split[f];
                    let sub = gram.subset(train);
                    let train_labels: Vec<i32> = train.iter().map(|&i| labels[i]).collect();
                    let model = svm_train(&sub, &train_labels, grid.cs[ci])?;
                    let pred = svm_predict(&model, &gram.block(held, train))?;
                    let truth: Vec<i32> = held.iter().map(|&i| labels[i]).collect();
                    Ok(EvalReport::new(&truth, &pred)?.accuracy())
                })
                .collect();
            for (ci, &c) in grid.cs.iter().enumerate() {
                let per_fold: Result<Vec<f64>> = accs[ci * split.len()..(ci + 1) * split.len()]
                    .iter()
                    .map(|r| r.as_ref().map(|a| *a).map_err(|e| Error::InvalidConfig(e.to_string())))
                    .collect();
                cells.push(match per_fold {
                    Ok(fa) => CvCell {
                        sigma,
                        gamma,
                        c,
                        mean_accuracy: mean(&fa),
                        fold_accuracies: fa,
                        error: None,
                    },
                    Err(e) => CvCell {
                        sigma,
                        gamma,
                        c,
                        fold_accuracies: Vec::new(),
                        mean_accuracy: f64::NAN,
                        error: Some(e.to_string()),
                    },
                });
            }
        }
    }
    let selected = select_cell(&cells).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "no grid cell could be evaluated: {}",
            cells.iter().find_map(|c| c.error.clone()).unwrap_or_default()
        ))
    })?;
    Ok(CvReport {
        grid: grid.clone(),
        cells,
        selected,
        folds: folds.clone(),
    })
}

pub const MODEL_MAGIC: &[u8; 5] = b"KSVM1";

/// Self-contained trained model: the SVM, its log-Euclidean kernel, the
/// support vectors' log matrices and the provenance of the descriptors it
/// was trained on.
///
/// ```text
/// "KSVM1"
/// u32 len, provenance text
/// u8 kernel tag (0 gaussian, 1 linear), f64 gamma (0 for linear)
/// f64 C
/// u32 classes, i32 × classes
/// u32 supports; per support: u32 len, id, u32 d, f64 × d(d+1)/2 upper log triangle
/// u32 machines; per machine: i32 positive, i32 negative, f64 bias, u8 converged,
///     u32 iterations, u32 count, (u32 support index, f64 α·y) × count
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub provenance: Provenance,
    pub kernel: LogEuclideanKernel,
    pub model: SvmModel,
    pub support_logs: Vec<SymMatrix>,
}

impl ModelFile {
    /// Compacts `model` to its support vectors and keeps their logs.
    /// `logs` is aligned with the model's training ids.
    pub fn new(provenance: Provenance, kernel: LogEuclideanKernel, mut model: SvmModel, logs: &[&SymMatrix]) -> Result<Self> {
        if logs.len() != model.training_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} log matrices for {} training ids",
                logs.len(),
                model.training_ids.len()
            )));
        }
        let keep = model.compact();
        Ok(ModelFile {
            provenance,
            kernel,
            support_logs: keep.iter().map(|&i| logs[i].clone()).collect(),
            model,
        })
    }

    pub fn predict(&self, logs: &[&SymMatrix]) -> Result<Vec<i32>> {
        let train: Vec<&SymMatrix> = self.support_logs.iter().collect();
        let rows = gram_rows(logs, &train, self.kernel)?;
        svm_predict(&self.model, &rows)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(MODEL_MAGIC);
        w.str(&self.provenance.to_string());
        w.u8(self.kernel.tag());
        w.f64(self.kernel.gamma().unwrap_or(0.0));
        w.f64(self.model.c);
        w.len(self.model.classes.len());
        for &c in &self.model.classes {
            w.i32(c);
        }
        w.len(self.model.training_ids.len());
        for (id, log) in self.model.training_ids.iter().zip(&self.support_logs) {
            w.str(id);
            w.len(log.dim());
            w.f64s(&log.upper_triangle());
        }
        w.len(self.model.machines.len());
        for m in &self.model.machines {
            w.i32(m.positive);
            w.i32(m.negative);
            w.f64(m.bias);
            w.u8(m.converged as u8);
            w.len(m.iterations);
            w.len(m.support.len());
            for (&s, &a) in m.support.iter().zip(&m.coef) {
                w.len(s);
                w.f64(a);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, MODEL_MAGIC)?;
        let provenance = Provenance::parse(&r.str()?)?;
        let tag = r.u8()?;
        let gamma = r.f64()?;
        let kernel = match tag {
            0 => LogEuclideanKernel::gaussian(gamma).map_err(|e| Error::Format(e.to_string()))?,
            1 => LogEuclideanKernel::Linear,
            t => return Err(Error::Format(format!("unknown log-kernel tag {t}"))),
        };
        let c = r.f64()?;
        let nc = r.len()?;
        let classes = (0..nc).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        let ns = r.len()?;
        let mut training_ids = Vec::new();
        let mut support_logs = Vec::new();
        for _ in 0..ns {
            training_ids.push(r.str()?);
            let d = r.len()?;
            let upper = r.f64s(d * (d + 1) / 2)?;
            support_logs.push(SymMatrix::from_upper(d, &upper).map_err(|e| Error::Format(e.to_string()))?);
        }
        let nm = r.len()?;
        let mut machines = Vec::new();
        for _ in 0..nm {
            let positive = r.i32()?;
            let negative = r.i32()?;
            let bias = r.f64()?;
            let converged = r.u8()? != 0;
            let iterations = r.len()?;
            let count = r.len()?;
            let mut support = Vec::new();
            let mut coef = Vec::new();
            for _ in 0..count {
                let s = r.len()?;
                if s >= ns {
                    return Err(Error::Format(format!("support index {s} out of range ({ns} supports)")));
                }
                support.push(s);
                coef.push(r.f64()?);
            }
            machines.push(BinaryMachine {
                positive,
                negative,
                support,
                coef,
                bias,
                c,
                iterations,
                converged,
            });
        }
        r.finish()?;
        Ok(ModelFile {
            provenance,
            kernel,
            model: SvmModel {
                classes,
                training_ids,
                machines,
                c,
            },
            support_logs,
        })
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logs_of(ms: &[SymMatrix]) -> Vec<&SymMatrix> {
        ms.iter().collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i:03}")).collect()
    }

    /// Log matrices near `centers[label]` with small symmetric jitter.
    fn blobs(labels: &[i32], centers: &[Vec<f64>], jitter: f64, seed: u64) -> Vec<SymMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        labels
            .iter()
            .map(|&l| {
                let c = &centers[l as usize];
                let d = c.len();
                let mut rows = vec![vec![0.0; d]; d];
                for i in 0..d {
                    for j in i..d {
                        let v = if i == j { c[i] } else { 0.0 } + jitter * rng.random_range(-1.0..1.0);
                        rows[i][j] = v;
                        rows[j][i] = v;
                    }
                }
                SymMatrix::from_rows(&rows).unwrap()
            })
            .collect()
    }

    fn check_duals(model: &SvmModel, gram: &GramMatrix, labels: &[i32]) {
        for m in &model.machines {
            assert!(m.converged);
            let mut sum = 0.0;
            for (&s, &a) in m.support.iter().zip(&m.coef) {
                let alpha = a.abs();
                assert!(alpha > 0.0 && alpha <= m.c + 1e-12, "alpha {alpha} outside (0, {}]", m.c);
                let y = if labels[s] == m.positive { 1.0 } else { -1.0 };
                assert_eq!(a.signum(), y);
                sum += a;
            }
            assert!(sum.abs() <= 1e-6, "sum alpha y = {sum}");
            let _ = gram;
        }
    }

    #[test]
    fn gram_hand_example() {
        let e = std::f64::consts::E;
        let a = SymMatrix::from_diagonal(&[e, 1.0]);
        let b = SymMatrix::from_diagonal(&[1.0, e]);
        let la = crate::linalg::logm_spd(&a, 0.0).unwrap();
        let lb = crate::linalg::logm_spd(&b, 0.0).unwrap();
        let g = log_gram(ids(2), &[&la, &lb], LogEuclideanKernel::gaussian(1.0).unwrap()).unwrap();
        assert!((g.get(0, 1) - (-2.0f64).exp()).abs() < 1e-14);
        assert!((g.get(0, 1) - 0.13534).abs() < 1e-5);
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(1, 0), g.get(0, 1));
    }

    #[test]
    fn identical_and_vanishing_gamma() {
        let m = SymMatrix::from_rows(&[[0.3, 0.1], [0.1, -0.2]]).unwrap();
        let other = SymMatrix::from_rows(&[[1.3, 0.0], [0.0, 2.0]]).unwrap();
        let g = log_gram(ids(3), &[&m, &m, &other], LogEuclideanKernel::gaussian(0.7).unwrap()).unwrap();
        assert_eq!(g.get(0, 1), 1.0);
        let g = log_gram(ids(2), &[&m, &other], LogEuclideanKernel::gaussian(1e-300).unwrap()).unwrap();
        assert_eq!(g.get(0, 1), 1.0);
    }

    #[test]
    fn gram_rejects_mixed_dims() {
        let a = SymMatrix::identity(2);
        let b = SymMatrix::identity(3);
        assert!(matches!(
            log_gram(ids(2), &[&a, &b], LogEuclideanKernel::gaussian(1.0).unwrap()),
            Err(Error::DimMismatch { .. })
        ));
        assert!(gram_rows(&[&a], &[&b], LogEuclideanKernel::Linear).is_err());
    }

    #[test]
    fn linear_log_kernel_is_inner_product() {
        let a = SymMatrix::from_rows(&[[1.0, 2.0], [2.0, 3.0]]).unwrap();
        let b = SymMatrix::from_rows(&[[-1.0, 0.5], [0.5, 2.0]]).unwrap();
        let g = log_gram(ids(2), &[&a, &b], LogEuclideanKernel::Linear).unwrap();
        assert_eq!(g.get(0, 1), -1.0 + 2.0 * 2.0 * 0.5 + 6.0);
        assert_eq!(g.get(0, 0), 18.0);
    }

    #[test]
    fn separable_two_class() {
        let labels = [0, 0, 0, 1, 1, 1];
        let logs = blobs(&labels, &[vec![0.0, 0.0], vec![3.0, -3.0]], 0.05, 1);
        let g = log_gram(ids(6), &logs_of(&logs), LogEuclideanKernel::gaussian(0.5).unwrap()).unwrap();
        let model = svm_train(&g, &labels, 10.0).unwrap();
        check_duals(&model, &g, &labels);
        let pred = svm_predict(&model, g.entries().as_matrix()).unwrap();
        assert_eq!(pred, labels);
    }

    #[test]
    fn repeated_samples_keep_duals_feasible() {
        let labels = [4, 4, 7, 7];
        let a = SymMatrix::identity(2);
        let b = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let g = log_gram(ids(4), &[&a, &a, &b, &b], LogEuclideanKernel::gaussian(1.0).unwrap()).unwrap();
        let model = svm_train(&g, &labels, 1.0).unwrap();
        check_duals(&model, &g, &labels);
        assert_eq!(model.classes, vec![4, 7]);
    }

    #[test]
    fn training_guards() {
        let g = log_gram(ids(2), &[&SymMatrix::identity(2), &SymMatrix::zeros(2)], LogEuclideanKernel::Linear).unwrap();
        assert!(matches!(svm_train(&g, &[1, 1], 1.0), Err(Error::DegenerateLabels(_))));
        assert!(matches!(svm_train(&g, &[1], 1.0), Err(Error::ShapeMismatch(_))));
        assert!(svm_train(&g, &[1, 2], 0.0).is_err());
        let model = svm_train(&g, &[1, 2], 1.0).unwrap();
        assert!(matches!(svm_predict(&model, &Matrix::zeros(1, 3)), Err(Error::ShapeMismatch(_))));
    }

    fn three_class(seed: u64) -> (Vec<i32>, Vec<SymMatrix>, Vec<i32>, Vec<SymMatrix>) {
        // Rotated diagonal SPD centers in log space.
        let centers = vec![vec![1.0, 0.0, -1.0], vec![-1.0, 1.0, 0.0], vec![0.0, -1.0, 1.0]];
        let train_labels: Vec<i32> = (0..30).map(|i| i % 3).collect();
        let test_labels: Vec<i32> = (0..60).map(|i| (i * 7 + 1) % 3).collect();
        let train = blobs(&train_labels, &centers, 0.3, seed);
        let test = blobs(&test_labels, &centers, 0.3, seed + 1);
        (train_labels, train, test_labels, test)
    }

    #[test]
    fn three_class_blobs() {
        let (yl, train, tl, test) = three_class(3);
        let k = LogEuclideanKernel::gaussian(0.25).unwrap();
        let g = log_gram(ids(30), &logs_of(&train), k).unwrap();
        let model = svm_train(&g, &yl, 10.0).unwrap();
        assert_eq!(model.machines.len(), 3);
        check_duals(&model, &g, &yl);
        let pred = svm_predict(&model, &gram_rows(&logs_of(&test), &logs_of(&train), k).unwrap()).unwrap();
        let acc = EvalReport::new(&tl, &pred).unwrap().accuracy();
        assert!(acc >= 0.95, "held-out accuracy {acc}");
    }

    #[test]
    fn duplicated_rows_duplicate_predictions() {
        let (yl, train, _, test) = three_class(5);
        let k = LogEuclideanKernel::gaussian(0.25).unwrap();
        let g = log_gram(ids(30), &logs_of(&train), k).unwrap();
        let model = svm_train(&g, &yl, 1.0).unwrap();
        let rows = gram_rows(&[&test[0], &test[1], &test[0]], &logs_of(&train), k).unwrap();
        let pred = svm_predict(&model, &rows).unwrap();
        assert_eq!(pred[0], pred[2]);
    }

    #[test]
    fn label_permutation_equivariance() {
        let (yl, train, _, test) = three_class(9);
        let k = LogEuclideanKernel::gaussian(0.25).unwrap();
        let g = log_gram(ids(30), &logs_of(&train), k).unwrap();
        let rows = gram_rows(&logs_of(&test), &logs_of(&train), k).unwrap();
        let base = svm_predict(&svm_train(&g, &yl, 10.0).unwrap(), &rows).unwrap();
        let perm = |l: i32| [20, -3, 5][l as usize];
        let relabeled: Vec<i32> = yl.iter().map(|&l| perm(l)).collect();
        let pred = svm_predict(&svm_train(&g, &relabeled, 10.0).unwrap(), &rows).unwrap();
        let expected: Vec<i32> = base.iter().map(|&l| perm(l)).collect();
        assert_eq!(pred, expected);
    }

    #[test]
    fn vote_tie_breaks() {
        // Three classes, each winning one pair: strength decides.
        let model = SvmModel {
            classes: vec![1, 2, 3],
            training_ids: vec!["a".into()],
            machines: vec![
                BinaryMachine { positive: 1, negative: 2, support: vec![0], coef: vec![1.0], bias: 0.0, c: 1.0, iterations: 0, converged: true },
                BinaryMachine { positive: 1, negative: 3, support: vec![0], coef: vec![-3.0], bias: 0.0, c: 1.0, iterations: 0, converged: true },
                BinaryMachine { positive: 2, negative: 3, support: vec![0], coef: vec![2.0], bias: 0.0, c: 1.0, iterations: 0, converged: true },
            ],
            c: 1.0,
        };
        let rows = Matrix::from_rows(&[[1.0]]);
        // 1 beats 2 (|1|), 3 beats 1 (|3|), 2 beats 3 (|2|): class 3 strongest.
        assert_eq!(svm_predict(&model, &rows).unwrap(), vec![3]);
        let mut even = model.clone();
        for m in &mut even.machines {
            m.coef[0] = m.coef[0].signum();
        }
        assert_eq!(svm_predict(&even, &rows).unwrap(), vec![1]);
    }

    #[test]
    fn model_file_roundtrip_and_compaction() {
        let (yl, train, _, test) = three_class(11);
        let k = LogEuclideanKernel::gaussian(0.25).unwrap();
        let g = log_gram(ids(30), &logs_of(&train), k).unwrap();
        let model = svm_train(&g, &yl, 10.0).unwrap();
        let rows = gram_rows(&logs_of(&test), &logs_of(&train), k).unwrap();
        let full = svm_predict(&model, &rows).unwrap();
        let mut prov = Provenance::new();
        prov.set("kernel", "expdot(sigma=2.0)");
        let file = ModelFile::new(prov, k, model, &logs_of(&train)).unwrap();
        assert!(file.model.training_ids.len() <= 30);
        assert_eq!(file.predict(&logs_of(&test)).unwrap(), full);
        let back = ModelFile::decode(&file.encode()).unwrap();
        assert_eq!(back, file);
        assert!(ModelFile::decode(&file.encode()[..40]).is_err());
        assert!(ModelFile::decode(b"KCOV1").is_err());
    }

    #[test]
    fn eval_report_counts() {
        let r = EvalReport::new(&[1, 1, 2, 2], &[1, 2, 2, 2]).unwrap();
        assert_eq!(r.accuracy(), 0.75);
        assert_eq!(r.confusion, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(r.per_class(), vec![(1, Some(0.5)), (2, Some(1.0))]);
    }

    #[test]
    fn fold_plans() {
        let subjects = ["3", "1", "10", "2", "1", "5"];
        let p = FoldPlan::by_subject(&subjects, 2).unwrap();
        assert_eq!(p.folds, vec![vec!["1", "3", "10"], vec!["2", "5"]]);
        let p = FoldPlan::by_subject(&subjects, 5).unwrap();
        assert_eq!(p.len(), 5);
        assert!(matches!(FoldPlan::by_subject(&["1", "1"], 5), Err(Error::EmptyFold(_))));
    }

    #[test]
    fn cell_selection_tie_rule() {
        let cell = |s: f64, g: f64, c: f64, acc: f64| CvCell {
            sigma: Some(s),
            gamma: Some(g),
            c,
            fold_accuracies: vec![acc],
            mean_accuracy: acc,
            error: None,
        };
        let mut cells = vec![
            cell(2.0, 1.0, 10.0, 0.9),
            cell(1.0, 4.0, 1.0, 0.9),
            cell(1.0, 2.0, 100.0, 0.9),
            cell(0.5, 1.0, 1.0, 0.8),
        ];
        cells.push(CvCell { mean_accuracy: f64::NAN, ..cell(0.1, 0.1, 0.1, 1.0) });
        let best = select_cell(&cells).unwrap();
        assert_eq!((cells[best].sigma, cells[best].gamma, cells[best].c), (Some(1.0), Some(2.0), 100.0));
        cells.reverse();
        let again = select_cell(&cells).unwrap();
        assert_eq!((cells[again].sigma, cells[again].gamma, cells[again].c), (Some(1.0), Some(2.0), 100.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gram_entry_decreases_in_gamma(
            a in proptest::collection::vec(-2.0f64..2.0, 3),
            b in proptest::collection::vec(-2.0f64..2.0, 3),
            g1 in 0.01f64..2.0,
            factor in 1.01f64..3.0,
        ) {
            let la = SymMatrix::from_diagonal(&a);
            let lb = SymMatrix::from_diagonal(&b);
            let d2 = squared_frobenius_distance(&la, &lb).unwrap();
            prop_assume!(d2 > 1e-6 && d2 * g1 * factor < 600.0);
            let k1 = LogEuclideanKernel::gaussian(g1).unwrap().eval(&la, &lb).unwrap();
            let k2 = LogEuclideanKernel::gaussian(g1 * factor).unwrap().eval(&la, &lb).unwrap();
            prop_assert!(k2 < k1);
        }

        #[test]
        fn smo_duals_feasible(seed in any::<u64>(), c in prop::sample::select(vec![0.1, 1.0, 10.0, 100.0])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<i32> = (0..24).map(|_| rng.random_range(0..3)).collect();
            prop_assume!(labels.iter().collect::<BTreeSet<_>>().len() >= 2);
            let logs = blobs(&labels, &[vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 0.5]], 0.5, seed);
            let g = log_gram(ids(24), &logs_of(&logs), LogEuclideanKernel::gaussian(1.0).unwrap()).unwrap();
            let model = svm_train(&g, &labels, c).unwrap();
            check_duals(&model, &g, &labels);
        }
    }
}
