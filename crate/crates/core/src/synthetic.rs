//! Synthetic skeleton trials with class-specific joint oscillations, for
//! end-to-end checks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Assignment, IndexEntry, LoadedDataset, TrialIndex};
use crate::features::SkeletonTrial;
use crate::rand_features::mix64;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Subjects are numbered `1..=subjects`.
    pub subjects: usize,
    pub repetitions: usize,
    pub joints: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Standard deviation of per-coordinate Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 3 classes × 10 subjects × 4 repetitions: 60 odd-subject and 60
    /// even-subject trials.
    fn default() -> Self {
        SyntheticSpec {
            classes: 3,
            subjects: 10,
            repetitions: 4,
            joints: 6,
            min_frames: 30,
            max_frames: 50,
            noise: 0.02,
            seed: 7,
        }
    }
}

/// Joint, axis and cycles-per-trial of the oscillators defining class `c`.
fn class_pattern(c: usize, joints: usize) -> Vec<(usize, usize, f64)> {
    let limbs = joints - 1;
    vec![
        (1 + c % limbs, c % 3, 1.0 + 0.5 * c as f64),
        (1 + (c + 2) % limbs, (c + 1) % 3, 2.0 + 0.5 * c as f64),
    ]
}

pub fn synthetic_trials(spec: &SyntheticSpec) -> Vec<SkeletonTrial> {
    assert!(spec.joints >= 2 && spec.classes >= 1 && spec.min_frames >= 3);
    assert!(spec.max_frames >= spec.min_frames);
    let noise = Normal::new(0.0, spec.noise).expect("finite noise level");
    // Rest pose: root at the origin, limbs on a unit circle at varying heights.
    let rest: Vec<[f64; 3]> = (0..spec.joints)
        .map(|j| {
            if j == 0 {
                return [0.0; 3];
            }
            let a = std::f64::consts::TAU * j as f64 / (spec.joints - 1) as f64;
            [a.cos(), a.sin(), 0.3 * j as f64]
        })
        .collect();
    let mut trials = Vec::new();
    for subject in 1..=spec.subjects {
        let mut srng = ChaCha8Rng::seed_from_u64(mix64(spec.seed ^ ((subject as u64) << 32)));
        let body_scale = srng.random_range(0.9..1.1);
        let offset = [srng.random_range(-1.0..1.0), srng.random_range(-1.0..1.0), 0.0];
        for class in 0..spec.classes {
            let pattern = class_pattern(class, spec.joints);
            for rep in 0..spec.repetitions {
                let trial_seed = mix64(spec.seed.wrapping_add((subject * 1_000_003 + class * 1009 + rep) as u64));
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
                let frames = rng.random_range(spec.min_frames..=spec.max_frames);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = rng.random_range(0.25..0.35);
                let mut pos = Vec::with_capacity(frames * spec.joints * 3);
                for t in 0..frames {
                    let u = t as f64 / (frames - 1) as f64;
                    for (j, r) in rest.iter().enumerate() {
                        let mut p = [r[0] * body_scale, r[1] * body_scale, r[2] * body_scale];
                        for &(pj, axis, cycles) in &pattern {
                            if pj == j {
                                p[axis] += amp * (std::f64::consts::TAU * cycles * u + phase).sin();
                            }
                        }
                        for c in 0..3 {
                            pos.push(p[c] + offset[c] + noise.sample(&mut rng));
                        }
                    }
                }
                let id = format!("c{class:02}_s{subject:02}_r{rep:02}");
                trials.push(
                    SkeletonTrial::new(id, class as i32 + 1, subject.to_string(), spec.joints, pos)
                        .expect("consistent shape"),
                );
            }
        }
    }
    trials.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    trials
}

/// The trials wrapped as an unsplit dataset.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> LoadedDataset {
    let trials = synthetic_trials(spec);
    let entries = trials
        .iter()
        .map(|t| IndexEntry {
            trial_id: t.trial_id.clone(),
            label: t.label,
            subject: t.subject.clone(),
            source: "synthetic".into(),
            frames: t.frames(),
            assignment: Assignment::Unassigned,
        })
        .collect();
    LoadedDataset {
        name: "synthetic".into(),
        joint_names: (0..spec.joints).map(|j| format!("joint{j}")).collect(),
        trials,
        index: TrialIndex {
            entries,
            class_names: (1..=spec.classes as i32).map(|l| (l, format!("class{l}"))).collect(),
        },
    }
}
