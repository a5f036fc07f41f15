use std::io::Write;
use std::path::Path;

use kcov::classifier::{cross_validate, log_gram, median_heuristic_gamma, svm_train, EvalReport, FoldPlan, LogKernelFamily};
use kcov::dataset::{apply_split, load_canonical, load_msr3d, MSR3D_JOINTS};
use kcov::descriptor::store::DescriptorRecord;
use kcov::pipeline::extract_all;
use kcov::{
    envelope, selfcheck, DatasetProfile, DescriptorSet, LoadedDataset, LogEuclideanKernel, ModelFile, Provenance,
    SkeletonTrial, Split, SymMatrix, TrialIndex,
};

use crate::config::{Effective, InputFormat, DESCRIPTOR_KEYS};
use crate::CliError;

/// Writes next to `path` and renames into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(kcov::Error::from)?;
    tmp.write_all(bytes).map_err(kcov::Error::from)?;
    tmp.as_file().sync_all().map_err(kcov::Error::from)?;
    tmp.persist(path).map_err(|e| kcov::Error::from(e.error))?;
    Ok(())
}

fn out_path(eff: &Effective) -> Result<&Path, CliError> {
    eff.out
        .as_deref()
        .ok_or_else(|| CliError::Config("--out is required".into()))
}

fn dataset_err(e: kcov::Error) -> CliError {
    match e {
        kcov::Error::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Dataset(other.to_string()),
    }
}

struct Prepared {
    data: LoadedDataset,
    profile: DatasetProfile,
    index: TrialIndex,
}

fn prepare(eff: &Effective) -> Result<Prepared, CliError> {
    let input = eff.input()?;
    let data = match eff.format {
        InputFormat::Msr3d => load_msr3d(input),
        InputFormat::Canonical => load_canonical(input),
    }
    .map_err(dataset_err)?;
    let profile = match &eff.dataset_profile {
        Some(p) => DatasetProfile::load(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => match eff.format {
            InputFormat::Msr3d => DatasetProfile::odd_even("msr-action3d", MSR3D_JOINTS, 6),
            InputFormat::Canonical => {
                let joints = data.trials.first().map_or(data.joint_names.len(), |t| t.joints());
                DatasetProfile::odd_even(data.name.clone(), joints, 0)
            }
        },
    };
    if let Some(t) = data.trials.iter().find(|t| t.joints() != profile.joint_count) {
        return Err(CliError::Dataset(format!(
            "trial {} has {} joints; profile {} expects {}",
            t.trial_id,
            t.joints(),
            profile.name,
            profile.joint_count
        )));
    }
    let index = apply_split(&data.index, &profile).map_err(dataset_err)?;
    let rejected = index.count(|a| matches!(a, kcov::Assignment::Rejected(_)));
    log::info!(
        "{}: {} trials, {} train, {} test, {rejected} rejected",
        data.name,
        index.entries.len(),
        index.count(|a| a.split() == Some(Split::Train)),
        index.count(|a| a.split() == Some(Split::Test)),
    );
    Ok(Prepared { data, profile, index })
}

pub fn extract(eff: &Effective) -> Result<(), CliError> {
    let out = out_path(eff)?;
    let p = prepare(eff)?;
    let cfg = eff.pipeline(p.profile.root_joint_index);
    let trials: Vec<(&SkeletonTrial, Split)> = p
        .data
        .trials
        .iter()
        .filter_map(|t| p.index.split_of(&t.trial_id).map(|s| (t, s)))
        .collect();
    let refs: Vec<&SkeletonTrial> = trials.iter().map(|(t, _)| *t).collect();
    let mut records = Vec::with_capacity(trials.len());
    let mut skipped = 0;
    for ((t, split), d) in trials.iter().zip(extract_all(&refs, &cfg)) {
        match d.and_then(|d| DescriptorRecord::from_descriptor(&d, t.subject.clone(), Some(*split))) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{}: {e}; skipping", t.trial_id);
                skipped += 1;
            }
        }
    }
    if records.is_empty() {
        return Err(CliError::Dataset("no descriptors could be extracted".into()));
    }
    let mut prov = Provenance::new();
    prov.set("tool", concat!("kcov ", env!("CARGO_PKG_VERSION")))
        .set("dataset", &p.data.name)
        .set("profile", &p.profile.name);
    eff.descriptor_provenance(&mut prov, p.profile.root_joint_index);
    for (label, name) in &p.data.index.class_names {
        prov.set(format!("class.{label}"), name);
    }
    let set = DescriptorSet { provenance: prov, records };
    write_atomic(out, &set.encode())?;
    println!(
        "wrote {} descriptors ({} train, {} test, {skipped} skipped) to {}",
        set.records.len(),
        set.in_split(Split::Train).count(),
        set.in_split(Split::Test).count(),
        out.display()
    );
    Ok(())
}

fn read_descriptors(eff: &Effective) -> Result<DescriptorSet, CliError> {
    let input = eff.input()?;
    DescriptorSet::read(input).map_err(|e| CliError::Dataset(format!("{}: {e}", input.display())))
}

fn log_kernel(eff: &Effective, logs: &[&SymMatrix]) -> Result<LogEuclideanKernel, CliError> {
    Ok(match eff.log_kernel {
        LogKernelFamily::Linear => LogEuclideanKernel::Linear,
        LogKernelFamily::Gaussian => {
            let g = match eff.gamma {
                Some(g) => g,
                None => {
                    let g = median_heuristic_gamma(logs)?;
                    log::info!("median heuristic gamma = {g:e}");
                    g
                }
            };
            LogEuclideanKernel::gaussian(g)?
        }
    })
}

pub fn gram(eff: &Effective, split: Option<Split>) -> Result<(), CliError> {
    let out = out_path(eff)?;
    let set = read_descriptors(eff)?;
    let recs: Vec<&DescriptorRecord> = set.records.iter().filter(|r| split.is_none() || r.split == split).collect();
    if recs.is_empty() {
        return Err(CliError::Dataset("no descriptors in the requested split".into()));
    }
    let logs: Vec<&SymMatrix> = recs.iter().map(|r| &r.log_matrix).collect();
    let kernel = log_kernel(eff, &logs)?;
    let g = log_gram(recs.iter().map(|r| r.trial_id.clone()).collect(), &logs, kernel)?;
    let mut text = String::new();
    for (k, v) in set.provenance.iter() {
        text.push_str(&format!("# {k}={v}\n"));
    }
    text.push_str(&format!("# log_kernel={kernel}\n"));
    text.push_str("trial_id");
    for id in &g.ids {
        text.push('\t');
        text.push_str(id);
    }
    text.push('\n');
    for (i, id) in g.ids.iter().enumerate() {
        text.push_str(id);
        for j in 0..g.len() {
            text.push_str(&format!("\t{:?}", g.get(i, j)));
        }
        text.push('\n');
    }
    write_atomic(out, text.as_bytes())?;
    println!("wrote {n}×{n} Gram matrix ({kernel}) to {}", out.display(), n = g.len());
    Ok(())
}

pub fn train(eff: &Effective) -> Result<(), CliError> {
    let out = out_path(eff)?;
    let set = read_descriptors(eff)?;
    let recs: Vec<&DescriptorRecord> = set.in_split(Split::Train).collect();
    if recs.is_empty() {
        return Err(CliError::Dataset("descriptor file has no training records".into()));
    }
    let logs: Vec<&SymMatrix> = recs.iter().map(|r| &r.log_matrix).collect();
    let labels: Vec<i32> = recs.iter().map(|r| r.label).collect();
    let kernel = log_kernel(eff, &logs)?;
    let gram = log_gram(recs.iter().map(|r| r.trial_id.clone()).collect(), &logs, kernel)?;
    let model = svm_train(&gram, &labels, eff.svm_c)?;
    let stalled = model.machines.iter().filter(|m| !m.converged).count();
    let mut prov = set.provenance.clone();
    prov.set("log_kernel", kernel).set("svm_c", eff.svm_c).set("train_trials", recs.len());
    let file = ModelFile::new(prov, kernel, model, &logs)?;
    write_atomic(out, &file.encode())?;
    println!(
        "trained {} machines over {} classes on {} trials ({kernel}, C={}); {} support vectors; wrote {}",
        file.model.machines.len(),
        file.model.classes.len(),
        recs.len(),
        eff.svm_c,
        file.support_logs.len(),
        out.display()
    );
    if stalled > 0 {
        eprintln!("warning: {stalled} binary machine(s) hit the iteration cap before converging");
    }
    Ok(())
}

pub fn eval(eff: &Effective, model_path: &Path) -> Result<(), CliError> {
    let model = ModelFile::read(model_path).map_err(|e| CliError::Dataset(format!("{}: {e}", model_path.display())))?;
    let set = read_descriptors(eff)?;
    let diff = model.provenance.mismatches(&set.provenance, DESCRIPTOR_KEYS);
    if !diff.is_empty() {
        return Err(CliError::Provenance(diff.join("; ")));
    }
    let recs: Vec<&DescriptorRecord> = set.in_split(Split::Test).collect();
    if recs.is_empty() {
        return Err(CliError::Dataset("descriptor file has no test records".into()));
    }
    let logs: Vec<&SymMatrix> = recs.iter().map(|r| &r.log_matrix).collect();
    let truth: Vec<i32> = recs.iter().map(|r| r.label).collect();
    let pred = model.predict(&logs)?;
    let report = EvalReport::new(&truth, &pred)?;
    let name = |l: i32| set.provenance.get(&format!("class.{l}")).map(str::to_string).unwrap_or_else(|| l.to_string());

    let mut kv = String::new();
    kv.push_str(&format!("model={}\n", model_path.display()));
    kv.push_str(&format!("log_kernel={}\n", model.kernel));
    kv.push_str(&format!("trials={}\n", report.total()));
    kv.push_str(&format!("accuracy={}\n", report.accuracy()));
    println!("accuracy: {:.2}% ({} test trials)", 100.0 * report.accuracy(), report.total());
    println!("per-class accuracy:");
    for (label, acc) in report.per_class() {
        match acc {
            Some(a) => {
                println!("  {:>4} {:<28} {:6.2}%", label, name(label), 100.0 * a);
                kv.push_str(&format!("class.{label}.accuracy={a}\n"));
            }
            None => println!("  {:>4} {:<28}      -", label, name(label)),
        }
    }
    println!("confusion (rows = truth, columns = predicted):");
    print!("      ");
    for l in &report.classes {
        print!("{l:>5}");
    }
    println!();
    for (i, row) in report.confusion.iter().enumerate() {
        print!("{:>5} ", report.classes[i]);
        for c in row {
            print!("{c:>5}");
        }
        println!();
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        kv.push_str(&format!("confusion.{}={}\n", report.classes[i], cells.join(",")));
    }
    if let Some(out) = &eff.out {
        write_atomic(out, kv.as_bytes())?;
    }
    Ok(())
}

pub fn cv(eff: &Effective) -> Result<(), CliError> {
    let p = prepare(eff)?;
    let cfg = eff.pipeline(p.profile.root_joint_index);
    let train: Vec<&SkeletonTrial> = p
        .data
        .trials
        .iter()
        .filter(|t| p.index.split_of(&t.trial_id) == Some(Split::Train))
        .collect();
    let subjects: Vec<&str> = train.iter().map(|t| t.subject.as_str()).collect();
    let folds = FoldPlan::by_subject(&subjects, eff.cv_folds())?;
    let grid = eff.cv_grid();
    let report = cross_validate(&train, &folds, &grid, &cfg, eff.log_kernel)?;
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    let best = report.best();
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v}"));
    println!(
        "selected sigma={} gamma={} C={} mean accuracy {:.4} over {} folds ({} cells, {failed} failed)",
        fmt(best.sigma),
        fmt(best.gamma),
        best.c,
        best.mean_accuracy,
        report.folds.len(),
        report.cells.len()
    );
    match &eff.out {
        Some(out) => write_atomic(out, report.to_text().as_bytes())?,
        None => print!("{}", report.to_text()),
    }
    Ok(())
}

pub fn selfcheck(eff: &Effective, sabotage: &[String]) -> Result<(), CliError> {
    let names = selfcheck::check_names();
    if let Some(bad) = sabotage.iter().find(|s| *s != "all" && !names.contains(&s.as_str())) {
        return Err(CliError::Config(format!("unknown check {bad:?}")));
    }
    let seed = eff.seed.unwrap_or(selfcheck::DEFAULT_SEED);
    let report = selfcheck::run_all(seed, sabotage);
    print!("{}", report.to_text());
    if let Some(out) = &eff.out {
        write_atomic(out, report.to_text().as_bytes())?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("{} self-check(s) failed", report.failures())))
    }
}

pub fn bench(eff: &Effective, frames: usize, runs: usize) -> Result<(), CliError> {
    let m = eff.probes.unwrap_or(20);
    if frames < 2 || runs == 0 {
        return Err(CliError::Config("--frames must be >= 2 and --runs >= 1".into()));
    }
    let r = envelope::measure(&eff.kernel, m, frames, runs, eff.seed.unwrap_or(0))?;
    let text = format!(
        "kernel={}\nprobes={}\nframes={}\nruns={}\nbase_seconds={:e}\ndoubled_seconds={:e}\nratio={}\n",
        eff.kernel,
        r.probes,
        r.frames,
        r.runs,
        r.base.as_secs_f64(),
        r.doubled.as_secs_f64(),
        r.ratio()
    );
    print!("{text}");
    if let Some(out) = &eff.out {
        write_atomic(out, text.as_bytes())?;
    }
    Ok(())
}
