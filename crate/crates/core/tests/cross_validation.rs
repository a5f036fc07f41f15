use kcov::classifier::{cross_validate, CvGrid, FoldPlan, LogKernelFamily};
use kcov::dataset::{apply_split, Split};
use kcov::synthetic::{synthetic_dataset, SyntheticSpec};
use kcov::{DatasetProfile, DescriptorConfig, Error, FeatureConfig, KernelSpec, PipelineConfig, SkeletonTrial};

fn training_trials() -> Vec<SkeletonTrial> {
    let ds = synthetic_dataset(&SyntheticSpec::default());
    let idx = apply_split(&ds.index, &DatasetProfile::odd_even("synthetic", 6, 0)).unwrap();
    ds.trials
        .into_iter()
        .filter(|t| idx.split_of(&t.trial_id) == Some(Split::Train))
        .collect()
}

fn pipeline() -> PipelineConfig {
    PipelineConfig {
        features: FeatureConfig::default(),
        descriptor: DescriptorConfig {
            kernel: KernelSpec::exp_dot(2.0).unwrap(),
            ..Default::default()
        },
    }
}

fn folds(trials: &[&SkeletonTrial]) -> FoldPlan {
    let subjects: Vec<&str> = trials.iter().map(|t| t.subject.as_str()).collect();
    FoldPlan::by_subject(&subjects, 5).unwrap()
}

#[test]
fn single_cell_grid_is_selected() {
    let owned = training_trials();
    let trials: Vec<&SkeletonTrial> = owned.iter().collect();
    let grid = CvGrid { sigmas: vec![2.0], gammas: vec![2f64.powi(-8)], cs: vec![10.0] };
    let report = cross_validate(&trials, &folds(&trials), &grid, &pipeline(), LogKernelFamily::Gaussian).unwrap();
    assert_eq!(report.cells.len(), 1);
    let best = report.best();
    assert_eq!(best.gamma, Some(2f64.powi(-8)));
    assert_eq!(best.fold_accuracies.len(), 5);
}

#[test]
fn planted_optimum_wins() {
    // Squared log distances here are in the hundreds, so gamma = 4 turns the
    // Gram matrix into the identity and the SVM can only predict by vote ties.
    let owned = training_trials();
    let trials: Vec<&SkeletonTrial> = owned.iter().collect();
    let grid = CvGrid { sigmas: vec![2.0], gammas: vec![4.0, 2f64.powi(-8)], cs: vec![1.0] };
    let report = cross_validate(&trials, &folds(&trials), &grid, &pipeline(), LogKernelFamily::Gaussian).unwrap();
    let best = report.best();
    assert_eq!(best.gamma, Some(2f64.powi(-8)));
    let bad = report.cells.iter().find(|c| c.gamma == Some(4.0)).unwrap();
    assert!(best.mean_accuracy > bad.mean_accuracy + 0.3, "{} vs {}", best.mean_accuracy, bad.mean_accuracy);
}

#[test]
fn selection_ignores_grid_order() {
    let owned = training_trials();
    let trials: Vec<&SkeletonTrial> = owned.iter().collect();
    let plan = folds(&trials);
    let a = CvGrid { sigmas: vec![1.0, 2.0], gammas: vec![2f64.powi(-8), 2f64.powi(-6)], cs: vec![1.0, 10.0] };
    let b = CvGrid { sigmas: vec![2.0, 1.0], gammas: vec![2f64.powi(-6), 2f64.powi(-8)], cs: vec![10.0, 1.0] };
    let ra = cross_validate(&trials, &plan, &a, &pipeline(), LogKernelFamily::Gaussian).unwrap();
    let rb = cross_validate(&trials, &plan, &b, &pipeline(), LogKernelFamily::Gaussian).unwrap();
    let (x, y) = (ra.best(), rb.best());
    assert_eq!((x.sigma, x.gamma, x.c), (y.sigma, y.gamma, y.c));
    assert_eq!(x.mean_accuracy, y.mean_accuracy);
}

#[test]
fn linear_log_kernel_has_no_gamma_axis() {
    let owned = training_trials();
    let trials: Vec<&SkeletonTrial> = owned.iter().collect();
    let grid = CvGrid { sigmas: vec![2.0], gammas: vec![0.5, 1.0], cs: vec![1.0, 10.0] };
    let report = cross_validate(&trials, &folds(&trials), &grid, &pipeline(), LogKernelFamily::Linear).unwrap();
    assert_eq!(report.cells.len(), 2);
    assert!(report.cells.iter().all(|c| c.gamma.is_none()));
}

#[test]
fn fold_without_trials_is_rejected() {
    let owned = training_trials();
    let trials: Vec<&SkeletonTrial> = owned.iter().collect();
    let plan = FoldPlan::by_subject(&["1", "3", "99"], 3).unwrap();
    let only_known: Vec<&SkeletonTrial> = trials.iter().copied().filter(|t| t.subject == "1" || t.subject == "3").collect();
    let err = cross_validate(&only_known, &plan, &CvGrid::default(), &pipeline(), LogKernelFamily::Gaussian).unwrap_err();
    assert!(matches!(err, Error::EmptyFold(_)), "{err}");
    let err = cross_validate(&trials, &plan, &CvGrid::default(), &pipeline(), LogKernelFamily::Gaussian).unwrap_err();
    assert!(matches!(err, Error::UnknownSubject(_)), "{err}");
}

#[test]
fn report_text_lists_every_cell() {
    let owned = training_trials();
    let trials: Vec<&SkeletonTrial> = owned.iter().collect();
    let grid = CvGrid { sigmas: vec![2.0], gammas: vec![2f64.powi(-8)], cs: vec![1.0, 10.0] };
    let report = cross_validate(&trials, &folds(&trials), &grid, &pipeline(), LogKernelFamily::Gaussian).unwrap();
    let text = report.to_text();
    assert_eq!(text.lines().filter(|l| l.starts_with("cell.")).count(), 2);
    assert!(text.contains("selected.c="));
}
