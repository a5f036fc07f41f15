//! Runtime invariant suite behind `kcov selfcheck`.
//!
//! Every check draws its inputs from a seed derived from the run seed and
//! the check's position, so a report is reproducible from `(seed, build)`.
//! Monte-Carlo checks use 4-standard-error bands so arbitrary seeds pass.

use std::fmt::Write as _;
use std::io::Cursor;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{gram_rows, log_gram, median_heuristic_gamma, svm_predict, svm_train, EvalReport, LogEuclideanKernel};
use crate::dataset::{apply_split, parse_msr3d_name, read_canonical, write_canonical, Assignment, CanonicalHeader, DatasetProfile, Split};
use crate::descriptor::{
    centering_apply, classical_covariance, gram_probe_matrix, kernelized_covariance, CenteringMatrix, KernelSpec,
    TrialMatrix,
};
use crate::features::{assemble_trial_matrix, FeatureConfig, Normalization, SkeletonTrial};
use crate::linalg::{eig_sym, expm_sym, frobenius_distance, logm_spd, Matrix, SymMatrix};
use crate::pipeline::{trial_descriptor, PipelineConfig};
use crate::rand_features::{
    degree_histogram, degree_histogram_outliers, estimate_kernel, mean_and_stderr, rademacher_moment_check,
    replicate_estimates, replicate_seed, sample_map, DegreeLaw,
};
use crate::synthetic::{synthetic_dataset, SyntheticSpec};

pub const DEFAULT_SEED: u64 = 20_240_917;

type CheckFn = fn(&mut Ctx) -> Result<String, String>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("spd_linalg.eig_reconstruction", eig_reconstruction),
    ("spd_linalg.logm_expm_roundtrip", logm_expm_roundtrip),
    ("spd_linalg.logm_scaled_identity", logm_scaled_identity),
    ("spd_linalg.frobenius_metric", frobenius_metric),
    ("descriptor.linear_reduction", linear_reduction),
    ("descriptor.psd", descriptor_psd),
    ("descriptor.frame_permutation", frame_permutation),
    ("descriptor.structured_centering", structured_centering),
    ("descriptor.summation_form", summation_form),
    ("descriptor.expdot_entrywise", expdot_entrywise),
    ("rand_features.unbiased_linear", unbiased_linear),
    ("rand_features.variance_decay", variance_decay),
    ("rand_features.determinism", rf_determinism),
    ("rand_features.degree_law", degree_law),
    ("rand_features.rademacher_moments", rademacher),
    ("features.output_shape", feature_shape),
    ("features.linearity", feature_linearity),
    ("features.center_root_zero", center_root_zero),
    ("features.determinism", feature_determinism),
    ("classifier.gram_invariants", gram_invariants),
    ("classifier.dual_feasibility", dual_feasibility),
    ("classifier.label_permutation", label_permutation),
    ("classifier.gamma_monotone", gamma_monotone),
    ("dataset_io.split_partition", split_partition),
    ("dataset_io.canonical_roundtrip", canonical_roundtrip),
    ("pipeline.synthetic_recognition", synthetic_recognition),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

struct Ctx {
    rng: ChaCha8Rng,
    tamper: bool,
}

impl Ctx {
    /// Perturbs a computed quantity when this check is being sabotaged.
    fn tamper(&self, v: f64) -> f64 {
        if self.tamper {
            v + 1.0
        } else {
            v
        }
    }

    fn seed(&mut self) -> u64 {
        self.rng.random()
    }

    fn matrix(&mut self, rows: usize, cols: usize, range: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-range..range)).collect();
        Matrix::from_vec(rows, cols, data).expect("shape")
    }

    fn sym(&mut self, d: usize) -> SymMatrix {
        SymMatrix::from_matrix(&self.matrix(d, d, 1.0)).expect("square")
    }

    fn spd(&mut self, d: usize) -> SymMatrix {
        let b = self.matrix(d, d + 2, 1.0);
        SymMatrix::from_matrix(&b.matmul(&b.transpose()).expect("shape"))
            .expect("square")
            .add_diagonal(0.1)
    }

    fn trial(&mut self, d: usize, t: usize, range: f64) -> TrialMatrix {
        TrialMatrix::new(self.matrix(d, t, range)).expect("finite")
    }

    fn unit_vector(&mut self, d: usize, max_norm: f64) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| self.rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let r = self.rng.random_range(0.1..max_norm);
        v.iter().map(|x| x * r / n).collect()
    }

    fn skeleton(&mut self, joints: usize, frames: usize) -> SkeletonTrial {
        let pos = (0..joints * frames * 3).map(|_| self.rng.random_range(-1.0..1.0)).collect();
        SkeletonTrial::new("r", 1, "1", joints, pos).expect("shape")
    }
}

fn rel_err(a: &SymMatrix, b: &SymMatrix) -> f64 {
    frobenius_distance(a, b).unwrap_or(f64::INFINITY) / b.frobenius_norm().max(1.0)
}

fn within(what: &str, err: f64, tol: f64) -> Result<String, String> {
    if err <= tol {
        Ok(format!("{what} {err:.3e} <= {tol:.0e}"))
    } else {
        Err(format!("{what} {err:.3e} exceeds {tol:.0e}"))
    }
}

fn eig_reconstruction(ctx: &mut Ctx) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = ctx.rng.random_range(1..=16);
        let a = ctx.sym(d);
        let e = eig_sym(&a).map_err(|e| e.to_string())?;
        if e.eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err("eigenvalues not sorted descending".into());
        }
        worst = worst.max(ctx.tamper(rel_err(&e.reconstruct(), &a)));
    }
    within("max relative reconstruction error", worst, 1e-8)
}

fn logm_expm_roundtrip(ctx: &mut Ctx) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = ctx.rng.random_range(1..=16);
        let a = ctx.spd(d);
        let back = expm_sym(&logm_spd(&a, 0.0).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let err = frobenius_distance(&back, &a).map_err(|e| e.to_string())? / a.frobenius_norm();
        worst = worst.max(ctx.tamper(err));
    }
    within("max relative roundtrip error", worst, 1e-8)
}

fn logm_scaled_identity(ctx: &mut Ctx) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let c: f64 = ctx.rng.random_range(0.01..100.0);
        let d = ctx.rng.random_range(1..=8);
        let l = logm_spd(&SymMatrix::identity(d).scaled(c), 0.0).map_err(|e| e.to_string())?;
        let want = SymMatrix::identity(d).scaled(c.ln());
        worst = worst.max(ctx.tamper(frobenius_distance(&l, &want).map_err(|e| e.to_string())?));
    }
    within("max deviation from log(c)·I", worst, 1e-12)
}

fn frobenius_metric(ctx: &mut Ctx) -> Result<String, String> {
    for _ in 0..50 {
        let d = ctx.rng.random_range(1..=6);
        let (a, b, c) = (ctx.sym(d), ctx.sym(d), ctx.sym(d));
        let f = |x: &SymMatrix, y: &SymMatrix| frobenius_distance(x, y).expect("same dim");
        let ab = ctx.tamper(f(&a, &b));
        if (ab - f(&b, &a)).abs() > 1e-12 {
            return Err(format!("asymmetric distance {ab} vs {}", f(&b, &a)));
        }
        if f(&a, &c) > ab + f(&b, &c) + 1e-12 {
            return Err("triangle inequality violated".into());
        }
    }
    Ok("symmetry and triangle inequality on 50 triples".into())
}

fn linear_reduction(ctx: &mut Ctx) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let d = ctx.rng.random_range(3..=20);
        let t = ctx.rng.random_range(2..=60);
        let x = ctx.trial(d, t, 3.0);
        let c = classical_covariance(&x).map_err(|e| e.to_string())?.matrix;
        let k = kernelized_covariance(&KernelSpec::Linear, &x, d).map_err(|e| e.to_string())?.matrix;
        let err = frobenius_distance(&k, &c).expect("same dim") / (1.0 + c.frobenius_norm());
        worst = worst.max(ctx.tamper(err));
    }
    within("max scaled deviation", worst, 1e-10)
}

fn descriptor_psd(ctx: &mut Ctx) -> Result<String, String> {
    let kernels = [
        KernelSpec::Linear,
        KernelSpec::polynomial(2, 1.0).expect("valid"),
        KernelSpec::polynomial(3, 1.0).expect("valid"),
        KernelSpec::exp_dot(1.0).expect("valid"),
        KernelSpec::exp_dot(2.0).expect("valid"),
    ];
    let mut worst = f64::INFINITY;
    for _ in 0..10 {
        let d = ctx.rng.random_range(2..=12);
        let t = ctx.rng.random_range(2..=30);
        let x = ctx.trial(d, t, 1.0);
        for k in &kernels {
            let s = kernelized_covariance(k, &x, d).map_err(|e| e.to_string())?;
            let tol = s.psd_tolerance();
            let min = -ctx.tamper(-s.min_eigenvalue().map_err(|e| e.to_string())?);
            if min < -tol {
                return Err(format!("{k}: min eigenvalue {min:e} below -{tol:e}"));
            }
            worst = worst.min(min / s.matrix.trace().abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(format!("5 kernels × 10 trials; smallest min eigenvalue / trace {worst:.2e}"))
}

fn frame_permutation(ctx: &mut Ctx) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = ctx.rng.random_range(1..=8);
        let t = ctx.rng.random_range(2..=30);
        let x = ctx.trial(d, t, 1.0);
        let mut perm: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            perm.swap(i, ctx.rng.random_range(0..=i));
        }
        let mut y = Matrix::zeros(d, t);
        for (dst, &src) in perm.iter().enumerate() {
            for i in 0..d {
                y.set(i, dst, x.as_matrix().get(i, src));
            }
        }
        let y = TrialMatrix::new(y).expect("finite");
        for k in [KernelSpec::Linear, KernelSpec::exp_dot(1.0).expect("valid")] {
            let a = kernelized_covariance(&k, &x, d).map_err(|e| e.to_string())?.matrix;
            let b = kernelized_covariance(&k, &y, d).map_err(|e| e.to_string())?.matrix;
            worst = worst.max(ctx.tamper(frobenius_distance(&a, &b).expect("same dim")));
        }
    }
    within("max change under frame permutation", worst, 1e-12)
}

fn dense_centering(t: usize) -> Matrix {
    let p = CenteringMatrix::new(t).expect("t >= 2");
    let mut m = Matrix::zeros(t, t);
    for s in 0..t {
        for u in 0..t {
            m.set(s, u, if s == u { p.diagonal_entry() } else { p.off_diagonal_entry() });
        }
    }
    m
}

fn structured_centering(ctx: &mut Ctx) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = ctx.rng.random_range(1..=8);
        let t = ctx.rng.random_range(2..=40);
        let m = ctx.matrix(d, t, 2.0);
        let fast = centering_apply(CenteringMatrix::new(t).expect("t >= 2"), &m).map_err(|e| e.to_string())?;
        let dense = m.matmul(&dense_centering(t)).expect("shape");
        let err = fast
            .as_slice()
            .iter()
            .zip(dense.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(ctx.tamper(err));
    }
    within("max entrywise deviation from dense P", worst, 1e-12)
}

fn summation_form(ctx: &mut Ctx) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = ctx.rng.random_range(1..=8);
        let t = ctx.rng.random_range(2..=40);
        let x = ctx.trial(d, t, 2.0);
        let xm = x.as_matrix();
        let mean: Vec<f64> = (0..d).map(|i| xm.row(i).iter().sum::<f64>() / t as f64).collect();
        let mut rows = vec![vec![0.0; d]; d];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..t).map(|s| (xm.get(i, s) - mean[i]) * (xm.get(j, s) - mean[j])).sum::<f64>() / (t - 1) as f64;
            }
        }
        let sum_form = SymMatrix::from_rows(&rows).expect("square");
        let s = classical_covariance(&x).map_err(|e| e.to_string())?.matrix;
        worst = worst.max(ctx.tamper(frobenius_distance(&s, &sum_form).expect("same dim")));
    }
    within("max deviation from the summation form", worst, 1e-12)
}

fn expdot_entrywise(ctx: &mut Ctx) -> Result<String, String> {
    for _ in 0..10 {
        let d = ctx.rng.random_range(1..=8);
        let t = ctx.rng.random_range(1..=20);
        let sigma: f64 = ctx.rng.random_range(0.5..3.0);
        let x = ctx.trial(d, t, 2.0);
        let k = gram_probe_matrix(&KernelSpec::exp_dot(sigma).expect("valid"), &x, d).map_err(|e| e.to_string())?;
        let s2 = sigma * sigma;
        for i in 0..d {
            for s in 0..t {
                let want = (x.as_matrix().get(i, s) / s2).exp();
                if ctx.tamper(k.get(i, s)) != want {
                    return Err(format!("entry ({i}, {s}) = {} differs from exp(x/σ²) = {want}", k.get(i, s)));
                }
            }
        }
    }
    Ok("probe matrix equals exp(X/σ²) bit-for-bit".into())
}

fn unbiased_linear(ctx: &mut Ctx) -> Result<String, String> {
    let mut hits = 0;
    for _ in 0..20 {
        let d = ctx.rng.random_range(2..=6);
        let x = ctx.unit_vector(d, 1.0);
        let z = ctx.unit_vector(d, 1.0);
        let seed = ctx.seed();
        let r = estimate_kernel(&KernelSpec::Linear, &x, &z, 256, 500, seed).map_err(|e| e.to_string())?;
        if (ctx.tamper(r.estimate_mean) - r.target).abs() <= 4.0 * r.estimate_stderr {
            hits += 1;
        }
    }
    if hits >= 18 {
        Ok(format!("{hits}/20 pairs within 4 standard errors"))
    } else {
        Err(format!("only {hits}/20 pairs within 4 standard errors"))
    }
}

fn variance_decay(ctx: &mut Ctx) -> Result<String, String> {
    let k = KernelSpec::exp_dot(1.0).expect("valid");
    let (mut small, mut large) = (0.0, 0.0);
    for _ in 0..20 {
        let x = ctx.unit_vector(3, 1.0);
        let z = ctx.unit_vector(3, 1.0);
        let seed = ctx.seed();
        small += mean_and_stderr(&replicate_estimates(&k, &x, &z, 64, 100, seed).map_err(|e| e.to_string())?).1;
        large += mean_and_stderr(&replicate_estimates(&k, &x, &z, 1024, 100, seed).map_err(|e| e.to_string())?).1;
    }
    let large = ctx.tamper(large / 20.0);
    let small = small / 20.0;
    if large < small {
        Ok(format!("mean stderr {large:.4} at M=1024 < {small:.4} at M=64"))
    } else {
        Err(format!("mean stderr {large:.4} at M=1024 not below {small:.4} at M=64"))
    }
}

fn rf_determinism(ctx: &mut Ctx) -> Result<String, String> {
    let k = KernelSpec::exp_dot(1.5).expect("valid");
    let seed = ctx.seed();
    let a = sample_map(&k, 5, 64, 2.0, seed).map_err(|e| e.to_string())?;
    let b = sample_map(&k, 5, 64, 2.0, seed).map_err(|e| e.to_string())?;
    let x = ctx.unit_vector(5, 1.0);
    let ea = replicate_estimates(&k, &x, &x, 32, 40, seed).map_err(|e| e.to_string())?;
    let eb = replicate_estimates(&k, &x, &x, 32, 40, seed).map_err(|e| e.to_string())?;
    let same = a == b && ea.iter().zip(&eb).all(|(p, q)| ctx.tamper(*p).to_bits() == q.to_bits());
    if same && replicate_seed(seed, 0) != replicate_seed(seed, 1) {
        Ok("identical seeds give bitwise-identical maps and estimates".into())
    } else {
        Err("repeated sampling with one seed diverged".into())
    }
}

fn degree_law(ctx: &mut Ctx) -> Result<String, String> {
    let law = DegreeLaw::new(KernelSpec::exp_dot(1.0).expect("valid"), 2.0).map_err(|e| e.to_string())?;
    let mut bins = degree_histogram(&law, 1_000_000, ctx.seed());
    if ctx.tamper {
        bins[0] += 10_000;
    }
    let bad = degree_histogram_outliers(&law, &bins, 10, 4.0);
    if bad.is_empty() {
        Ok("degrees 0..=10 within 4 standard errors of 2^-(N+1) over 10^6 draws".into())
    } else {
        Err(format!("degree bins {bad:?} deviate from 2^-(N+1)"))
    }
}

fn rademacher(ctx: &mut Ctx) -> Result<String, String> {
    let seed = ctx.seed();
    if rademacher_moment_check(6, 20_000, seed) && !ctx.tamper {
        Ok("E[ω_i ω_j] within 4/√n of δ_ij".into())
    } else {
        Err("sign moments deviate from δ_ij".into())
    }
}

fn feature_shape(ctx: &mut Ctx) -> Result<String, String> {
    for (vel, acc) in [(false, false), (true, false), (false, true), (true, true)] {
        let cfg = FeatureConfig {
            use_velocity: vel,
            use_acceleration: acc,
            ..FeatureConfig::default()
        };
        let joints = ctx.rng.random_range(2..=6);
        let frames = ctx.rng.random_range(3..=20);
        let x = assemble_trial_matrix(&ctx.skeleton(joints, frames), &cfg).map_err(|e| e.to_string())?;
        let want = 3 * joints * (1 + vel as usize + acc as usize);
        if x.dim() != want + ctx.tamper(0.0) as usize || x.frames() != frames {
            return Err(format!("{}x{} output, expected {want}x{frames}", x.dim(), x.frames()));
        }
    }
    Ok("rows = 3n·(1 + vel + acc), columns = T".into())
}

fn feature_linearity(ctx: &mut Ctx) -> Result<String, String> {
    let cfg = FeatureConfig {
        use_velocity: true,
        use_acceleration: true,
        ..FeatureConfig::positions_only()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let joints = ctx.rng.random_range(1..=5);
        let frames = ctx.rng.random_range(3..=20);
        let a = ctx.skeleton(joints, frames);
        let b = ctx.skeleton(joints, frames);
        let sum: Vec<f64> = a.positions().iter().zip(b.positions()).map(|(p, q)| p + q).collect();
        let s = SkeletonTrial::new("s", 1, "1", joints, sum).expect("shape");
        let xa = assemble_trial_matrix(&a, &cfg).map_err(|e| e.to_string())?;
        let xb = assemble_trial_matrix(&b, &cfg).map_err(|e| e.to_string())?;
        let xs = assemble_trial_matrix(&s, &cfg).map_err(|e| e.to_string())?;
        for ((p, q), r) in xa.as_matrix().as_slice().iter().zip(xb.as_matrix().as_slice()).zip(xs.as_matrix().as_slice()) {
            worst = worst.max(ctx.tamper((p + q - r).abs()));
        }
    }
    within("max deviation from additivity", worst, 1e-12)
}

fn center_root_zero(ctx: &mut Ctx) -> Result<String, String> {
    let joints = 5;
    let root = ctx.rng.random_range(0..joints);
    let cfg = FeatureConfig {
        normalization: Normalization::CenterRoot,
        root_joint_index: root,
        ..FeatureConfig::positions_only()
    };
    let x = assemble_trial_matrix(&ctx.skeleton(joints, 12), &cfg).map_err(|e| e.to_string())?;
    let worst = (0..3)
        .flat_map(|c| x.as_matrix().row(3 * root + c).to_vec())
        .map(f64::abs)
        .fold(0.0, f64::max);
    if ctx.tamper(worst) == 0.0 {
        Ok(format!("root joint {root} rows identically zero"))
    } else {
        Err(format!("root rows deviate from zero by {worst:e}"))
    }
}

fn feature_determinism(ctx: &mut Ctx) -> Result<String, String> {
    let t = ctx.skeleton(4, 15);
    let cfg = FeatureConfig::default();
    let a = assemble_trial_matrix(&t, &cfg).map_err(|e| e.to_string())?;
    let b = assemble_trial_matrix(&t, &cfg).map_err(|e| e.to_string())?;
    let same = a
        .as_matrix()
        .as_slice()
        .iter()
        .zip(b.as_matrix().as_slice())
        .all(|(p, q)| ctx.tamper(*p).to_bits() == q.to_bits());
    if same {
        Ok("repeated assembly is bitwise identical".into())
    } else {
        Err("repeated assembly differs".into())
    }
}

fn random_logs(ctx: &mut Ctx, n: usize, d: usize) -> Vec<SymMatrix> {
    (0..n).map(|_| ctx.sym(d)).collect()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

fn gram_invariants(ctx: &mut Ctx) -> Result<String, String> {
    for _ in 0..5 {
        let n = ctx.rng.random_range(2..=30);
        let logs = random_logs(ctx, n, 4);
        let refs: Vec<&SymMatrix> = logs.iter().collect();
        let gamma = ctx.rng.random_range(0.01..4.0);
        let g = log_gram(ids(n), &refs, LogEuclideanKernel::gaussian(gamma).expect("positive")).map_err(|e| e.to_string())?;
        for i in 0..n {
            if ctx.tamper(g.get(i, i)) != 1.0 {
                return Err(format!("diagonal entry {i} is {}", g.get(i, i)));
            }
            for j in 0..n {
                if g.get(i, j) != g.get(j, i) {
                    return Err(format!("asymmetric at ({i}, {j})"));
                }
            }
        }
        let min = eig_sym(g.entries()).map_err(|e| e.to_string())?.min_eigenvalue();
        if min < -1e-8 {
            return Err(format!("min eigenvalue {min:e}"));
        }
    }
    Ok("symmetric, unit diagonal, PSD".into())
}

fn labeled_blobs(ctx: &mut Ctx, n: usize) -> (Vec<i32>, Vec<SymMatrix>) {
    let labels: Vec<i32> = (0..n).map(|i| (i % 3) as i32).collect();
    let logs = labels
        .iter()
        .map(|&l| {
            let mut diag = vec![0.0; 3];
            diag[l as usize] = 1.5;
            let jitter = ctx.sym(3).scaled(0.2);
            let rows: Vec<Vec<f64>> = (0..3)
                .map(|i| (0..3).map(|j| jitter.get(i, j) + if i == j { diag[i] } else { 0.0 }).collect())
                .collect();
            SymMatrix::from_rows(&rows).expect("square")
        })
        .collect();
    (labels, logs)
}

fn dual_feasibility(ctx: &mut Ctx) -> Result<String, String> {
    for &c in &[0.1, 1.0, 100.0] {
        let (labels, logs) = labeled_blobs(ctx, 30);
        let refs: Vec<&SymMatrix> = logs.iter().collect();
        let g = log_gram(ids(30), &refs, LogEuclideanKernel::gaussian(0.5).expect("positive")).map_err(|e| e.to_string())?;
        let model = svm_train(&g, &labels, c).map_err(|e| e.to_string())?;
        for m in &model.machines {
            if !m.converged {
                return Err(format!("machine ({}, {}) hit the iteration budget", m.positive, m.negative));
            }
            let sum: f64 = ctx.tamper(m.coef.iter().sum());
            if sum.abs() > 1e-6 || m.coef.iter().any(|a| a.abs() > c + 1e-12) {
                return Err(format!("machine ({}, {}): Σαy = {sum:e}", m.positive, m.negative));
            }
        }
    }
    Ok("0 ≤ α ≤ C and |Σ α y| ≤ 1e-6 at C ∈ {0.1, 1, 100}".into())
}

fn label_permutation(ctx: &mut Ctx) -> Result<String, String> {
    let (labels, logs) = labeled_blobs(ctx, 30);
    let (_, test) = labeled_blobs(ctx, 15);
    let train: Vec<&SymMatrix> = logs.iter().collect();
    let test: Vec<&SymMatrix> = test.iter().collect();
    let k = LogEuclideanKernel::gaussian(0.5).expect("positive");
    let g = log_gram(ids(30), &train, k).map_err(|e| e.to_string())?;
    let rows = gram_rows(&test, &train, k).map_err(|e| e.to_string())?;
    let perm = |l: i32| [9, -4, 2][l as usize];
    let base = svm_predict(&svm_train(&g, &labels, 10.0).map_err(|e| e.to_string())?, &rows).map_err(|e| e.to_string())?;
    let relabeled: Vec<i32> = labels.iter().map(|&l| perm(l)).collect();
    let mut pred = svm_predict(&svm_train(&g, &relabeled, 10.0).map_err(|e| e.to_string())?, &rows).map_err(|e| e.to_string())?;
    if ctx.tamper {
        pred[0] += 1;
    }
    if pred.iter().zip(&base).all(|(&p, &b)| p == perm(b)) {
        Ok("relabeled predictions follow the bijection".into())
    } else {
        Err("predictions are not equivariant under relabeling".into())
    }
}

fn gamma_monotone(ctx: &mut Ctx) -> Result<String, String> {
    let a = ctx.sym(3);
    let b = ctx.sym(3);
    let mut prev = f64::INFINITY;
    for e in -8..=2 {
        let g = log_gram(ids(2), &[&a, &b], LogEuclideanKernel::gaussian(2f64.powi(e)).expect("positive"))
            .map_err(|e| e.to_string())?;
        let v = if e == 2 { ctx.tamper(g.get(0, 1)) } else { g.get(0, 1) };
        if !(v < prev) {
            return Err(format!("entry {v} at γ = 2^{e} not below {prev}"));
        }
        prev = v;
    }
    Ok("off-diagonal entry strictly decreasing over γ = 2^-8..2^2".into())
}

fn split_partition(ctx: &mut Ctx) -> Result<String, String> {
    let seed = ctx.seed();
    let ds = synthetic_dataset(&SyntheticSpec {
        repetitions: 1,
        seed,
        ..SyntheticSpec::default()
    });
    let mut profile = DatasetProfile::odd_even("synthetic", 6, 0);
    profile.removed_trials.push(ds.trials[0].trial_id.clone());
    let idx = apply_split(&ds.index, &profile).map_err(|e| e.to_string())?;
    let train = idx.count(|a| *a == Assignment::Train);
    let test = idx.count(|a| *a == Assignment::Test);
    let rejected = idx.count(|a| matches!(a, Assignment::Rejected(_)));
    let offby = if ctx.tamper { 1 } else { 0 };
    let odd_train = idx
        .entries
        .iter()
        .filter(|e| e.assignment.split() == Some(Split::Train))
        .all(|e| e.subject.parse::<u32>().map_or(false, |s| s % 2 == 1));
    if train + test + rejected + offby == idx.entries.len() && odd_train && parse_msr3d_name("a05_s03_e02_skeleton3D.txt") == Some((5, 3, 2)) {
        Ok(format!("{train} train + {test} test + {rejected} rejected = {}", idx.entries.len()))
    } else {
        Err(format!("{train} + {test} + {rejected} does not partition {} trials", idx.entries.len()))
    }
}

fn canonical_roundtrip(ctx: &mut Ctx) -> Result<String, String> {
    let mut trials: Vec<SkeletonTrial> = (0..4)
        .map(|i| {
            let mut t = ctx.skeleton(3, 5);
            t.trial_id = format!("t{i}");
            t.subject = if i % 2 == 0 { "bd".into() } else { "7".into() };
            t
        })
        .collect();
    // Awkward values: subnormal, huge, negative zero, and a missing coordinate.
    let awkward = [f64::MIN_POSITIVE / 3.0, 1.7976931348623157e308, -0.0, 0.1 + 0.2];
    let mut pos = trials[0].positions().to_vec();
    pos[..4].copy_from_slice(&awkward);
    pos[5] = f64::NAN;
    trials[0] = SkeletonTrial::new("t0", 1, "bd", 3, pos).expect("shape");
    let header = CanonicalHeader {
        dataset: "selfcheck".into(),
        joint_names: vec!["a".into(), "b".into(), "c".into()],
        joints: 3,
        class_names: [(1, "one".to_string())].into_iter().collect(),
    };
    let mut buf = Vec::new();
    write_canonical(&mut buf, &header, &trials).map_err(|e| e.to_string())?;
    let back = read_canonical(Cursor::new(buf), Path::new("<memory>")).map_err(|e| e.to_string())?;
    for (a, b) in trials.iter().zip(&back.trials) {
        let same = a.trial_id == b.trial_id
            && a.subject == b.subject
            && a.positions()
                .iter()
                .zip(b.positions())
                .all(|(p, q)| (p.is_nan() && q.is_nan()) || ctx.tamper(*p).to_bits() == q.to_bits());
        if !same {
            return Err(format!("trial {} changed in the roundtrip", a.trial_id));
        }
    }
    Ok("write → read preserves every coordinate bit-exactly".into())
}

fn synthetic_recognition(ctx: &mut Ctx) -> Result<String, String> {
    let seed = ctx.seed();
    let ds = synthetic_dataset(&SyntheticSpec {
        subjects: 4,
        repetitions: 3,
        seed,
        ..SyntheticSpec::default()
    });
    let cfg = PipelineConfig {
        descriptor: crate::descriptor::DescriptorConfig {
            kernel: KernelSpec::exp_dot(2.0).expect("valid"),
            ..Default::default()
        },
        ..Default::default()
    };
    let idx = apply_split(&ds.index, &DatasetProfile::odd_even("synthetic", 6, 0)).map_err(|e| e.to_string())?;
    let mut train = (Vec::new(), Vec::new());
    let mut test = (Vec::new(), Vec::new());
    for t in &ds.trials {
        let d = trial_descriptor(t, &cfg).map_err(|e| e.to_string())?;
        let bucket = if idx.split_of(&t.trial_id) == Some(Split::Train) { &mut train } else { &mut test };
        bucket.0.push(t.label);
        bucket.1.push(d.log_matrix.expect("cached"));
    }
    let tr: Vec<&SymMatrix> = train.1.iter().collect();
    let te: Vec<&SymMatrix> = test.1.iter().collect();
    let k = LogEuclideanKernel::gaussian(median_heuristic_gamma(&tr).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let g = log_gram(ids(tr.len()), &tr, k).map_err(|e| e.to_string())?;
    let model = svm_train(&g, &train.0, 10.0).map_err(|e| e.to_string())?;
    let pred = svm_predict(&model, &gram_rows(&te, &tr, k).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let acc = ctx.tamper(-EvalReport::new(&test.0, &pred).map_err(|e| e.to_string())?.accuracy());
    if -acc >= 0.9 {
        Ok(format!("held-out accuracy {:.3}", -acc))
    } else {
        Err(format!("held-out accuracy {:.3} below 0.9", -acc))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckReport {
    pub seed: u64,
    pub results: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| !r.passed).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        for r in &self.results {
            let _ = writeln!(
                s,
                "{} {} ({} ms): {}",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.millis,
                r.detail
            );
        }
        let _ = writeln!(
            s,
            "summary={}/{} passed",
            self.results.len() - self.failures(),
            self.results.len()
        );
        s
    }
}

/// Runs every check. Checks named in `sabotage` (or all of them for `"all"`)
/// get a deliberately perturbed quantity, which must make them fail.
pub fn run_all(seed: u64, sabotage: &[String]) -> SelfCheckReport {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let results = CHECKS
        .iter()
        .map(|&(name, check)| {
            let mut ctx = Ctx {
                rng: ChaCha8Rng::seed_from_u64(master.random()),
                tamper: sabotage.iter().any(|s| s == name || s == "all"),
            };
            let start = Instant::now();
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut ctx)))
                .unwrap_or_else(|_| Err("check panicked".into()));
            let (passed, detail) = match outcome {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                name,
                passed,
                detail,
                millis: start.elapsed().as_millis(),
            }
        })
        .collect();
    SelfCheckReport { seed, results }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes() {
        let r = run_all(DEFAULT_SEED, &[]);
        assert!(r.passed(), "{}", r.to_text());
        assert!(r.results.len() >= 15);
    }

    #[test]
    fn every_check_detects_sabotage() {
        let r = run_all(3, &["all".to_string()]);
        for c in &r.results {
            assert!(!c.passed, "{} passed despite sabotage: {}", c.name, c.detail);
        }
    }

    #[test]
    fn names_are_unique() {
        let mut names = check_names();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), CHECKS.len());
    }
}
