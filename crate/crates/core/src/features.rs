//! Per-trial preprocessing: missing-frame repair, root-relative
//! normalization, and position/velocity/acceleration stacking.

use crate::descriptor::TrialMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One recorded action instance: `frames × joints × 3` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTrial {
    pub trial_id: String,
    pub label: i32,
    pub subject: String,
    joints: usize,
    frames: usize,
    /// Frame-major, then joint, then x/y/z.
    positions: Vec<f64>,
}

impl SkeletonTrial {
    pub fn new(
        trial_id: impl Into<String>,
        label: i32,
        subject: impl Into<String>,
        joints: usize,
        positions: Vec<f64>,
    ) -> Result<Self> {
        if joints == 0 {
            return Err(Error::ShapeMismatch("trial needs at least one joint".into()));
        }
        if positions.len() % (joints * 3) != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates do not divide into frames of {joints} joints",
                positions.len()
            )));
        }
        let frames = positions.len() / (joints * 3);
        Ok(SkeletonTrial {
            trial_id: trial_id.into(),
            label,
            subject: subject.into(),
            joints,
            frames,
            positions,
        })
    }

    /// Builds from `frames[t][j] = [x, y, z]`.
    pub fn from_frames(
        trial_id: impl Into<String>,
        label: i32,
        subject: impl Into<String>,
        frames: &[Vec<[f64; 3]>],
    ) -> Result<Self> {
        let joints = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != joints) {
            return Err(Error::ShapeMismatch("frames have differing joint counts".into()));
        }
        let positions = frames.iter().flatten().flatten().copied().collect();
        Self::new(trial_id, label, subject, joints, positions)
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    #[inline]
    pub fn position(&self, frame: usize, joint: usize) -> [f64; 3] {
        let o = (frame * self.joints + joint) * 3;
        [self.positions[o], self.positions[o + 1], self.positions[o + 2]]
    }

    #[inline]
    fn set_position(&mut self, frame: usize, joint: usize, p: [f64; 3]) {
        let o = (frame * self.joints + joint) * 3;
        self.positions[o..o + 3].copy_from_slice(&p);
    }

    fn frame_slice(&self, frame: usize) -> &[f64] {
        let w = self.joints * 3;
        &self.positions[frame * w..(frame + 1) * w]
    }

    pub fn to_frames(&self) -> Vec<Vec<[f64; 3]>> {
        (0..self.frames)
            .map(|t| (0..self.joints).map(|j| self.position(t, j)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    None,
    /// Subtract the root joint per frame.
    CenterRoot,
    /// Center, then divide by the median joint-to-root distance of the trial.
    #[default]
    CenterRootScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub use_velocity: bool,
    pub use_acceleration: bool,
    pub normalization: Normalization,
    pub root_joint_index: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            use_velocity: true,
            use_acceleration: true,
            normalization: Normalization::CenterRootScale,
            root_joint_index: 0,
        }
    }
}

impl FeatureConfig {
    pub fn positions_only() -> Self {
        FeatureConfig {
            use_velocity: false,
            use_acceleration: false,
            normalization: Normalization::None,
            root_joint_index: 0,
        }
    }

    /// Rows of the assembled matrix for `joints` joints.
    pub fn output_dim(&self, joints: usize) -> usize {
        3 * joints * (1 + self.use_velocity as usize + self.use_acceleration as usize)
    }

    fn check_root(&self, joints: usize) -> Result<()> {
        if self.normalization != Normalization::None && self.root_joint_index >= joints {
            return Err(Error::InvalidConfig(format!(
                "root joint {} out of range for {joints} joints",
                self.root_joint_index
            )));
        }
        Ok(())
    }
}

pub fn normalize(trial: &SkeletonTrial, cfg: &FeatureConfig) -> Result<SkeletonTrial> {
    cfg.check_root(trial.joints)?;
    let mut out = trial.clone();
    if cfg.normalization == Normalization::None {
        return Ok(out);
    }
    let root = cfg.root_joint_index;
    for t in 0..out.frames {
        let r = trial.position(t, root);
        for j in 0..out.joints {
            let p = trial.position(t, j);
            out.set_position(t, j, [p[0] - r[0], p[1] - r[1], p[2] - r[2]]);
        }
    }
    if cfg.normalization == Normalization::CenterRootScale {
        let mut dists: Vec<f64> = (0..out.frames)
            .flat_map(|t| {
                let out = &out;
                (0..out.joints).filter(move |&j| j != root).map(move |j| {
                    let p = out.position(t, j);
                    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
                })
            })
            .collect();
        let scale = median(&mut dists).filter(|&m| m > 0.0).unwrap_or(1.0);
        for v in out.positions.iter_mut() {
            *v /= scale;
        }
    }
    Ok(out)
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Repairs frames that are entirely zero or contain non-finite values by
/// linear interpolation between the nearest valid frames. Leading and
/// trailing invalid frames copy the nearest valid one.
pub fn clean_missing(trial: &SkeletonTrial) -> Result<SkeletonTrial> {
    let valid: Vec<usize> = (0..trial.frames)
        .filter(|&t| {
            let f = trial.frame_slice(t);
            f.iter().all(|v| v.is_finite()) && f.iter().any(|&v| v != 0.0)
        })
        .collect();
    if valid.len() < 2 {
        return Err(Error::UnusableTrial {
            trial_id: trial.trial_id.clone(),
        });
    }
    if valid.len() == trial.frames {
        return Ok(trial.clone());
    }
    let mut out = trial.clone();
    let w = trial.joints * 3;
    let first = valid[0];
    let last = *valid.last().unwrap();
    for t in 0..trial.frames {
        if valid.binary_search(&t).is_ok() {
            continue;
        }
        let fill: Vec<f64> = if t < first {
            trial.frame_slice(first).to_vec()
        } else if t > last {
            trial.frame_slice(last).to_vec()
        } else {
            let k = valid.partition_point(|&v| v < t);
            let (lo, hi) = (valid[k - 1], valid[k]);
            let alpha = (t - lo) as f64 / (hi - lo) as f64;
            trial
                .frame_slice(lo)
                .iter()
                .zip(trial.frame_slice(hi))
                .map(|(a, b)| a + alpha * (b - a))
                .collect()
        };
        out.positions[t * w..(t + 1) * w].copy_from_slice(&fill);
    }
    Ok(out)
}

/// Central differences inside, one-sided at the ends.
fn velocity(track: &[f64], out: &mut [f64]) {
    let n = track.len();
    out[0] = track[1] - track[0];
    out[n - 1] = track[n - 1] - track[n - 2];
    for t in 1..n - 1 {
        out[t] = 0.5 * (track[t + 1] - track[t - 1]);
    }
}

/// Second differences inside, boundary values copied from the neighbor.
fn acceleration(track: &[f64], out: &mut [f64]) {
    let n = track.len();
    for t in 1..n - 1 {
        out[t] = track[t + 1] - 2.0 * track[t] + track[t - 1];
    }
    out[0] = out[1];
    out[n - 1] = out[n - 2];
}

/// Stacks normalized positions (3n rows), then velocities and accelerations
/// when enabled. Row `3j + c` holds coordinate `c` of joint `j`.
pub fn assemble_trial_matrix(trial: &SkeletonTrial, cfg: &FeatureConfig) -> Result<TrialMatrix> {
    if trial.frames < 2 {
        return Err(Error::DegenerateTrial {
            frames: trial.frames,
        });
    }
    if cfg.use_acceleration && trial.frames < 3 {
        return Err(Error::TooShort {
            frames: trial.frames,
        });
    }
    let norm = normalize(trial, cfg)?;
    let n3 = 3 * trial.joints;
    let t = trial.frames;
    let mut x = Matrix::zeros(cfg.output_dim(trial.joints), t);
    for f in 0..t {
        for (r, &v) in norm.frame_slice(f).iter().enumerate() {
            x.set(r, f, v);
        }
    }
    let mut block = 1;
    if cfg.use_velocity {
        for r in 0..n3 {
            let track = x.row(r).to_vec();
            velocity(&track, x.row_mut(block * n3 + r));
        }
        block += 1;
    }
    if cfg.use_acceleration {
        for r in 0..n3 {
            let track = x.row(r).to_vec();
            acceleration(&track, x.row_mut(block * n3 + r));
        }
    }
    Ok(TrialMatrix::new(x)?.with_joint_count(trial.joints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_trial(xs: &[f64]) -> SkeletonTrial {
        let frames: Vec<Vec<[f64; 3]>> = xs.iter().map(|&x| vec![[x, 0.0, 0.0]]).collect();
        SkeletonTrial::from_frames("s", 1, "1", &frames).unwrap()
    }

    fn random_trial(joints: usize, frames: usize, rng: &mut ChaCha8Rng) -> SkeletonTrial {
        let pos = (0..joints * frames * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        SkeletonTrial::new("r", 0, "1", joints, pos).unwrap()
    }

    #[test]
    fn finite_differences_by_hand() {
        let cfg = FeatureConfig {
            use_velocity: true,
            use_acceleration: true,
            ..FeatureConfig::positions_only()
        };
        let x = assemble_trial_matrix(&scalar_trial(&[0.0, 1.0, 4.0]), &cfg).unwrap();
        assert_eq!(x.dim(), 9);
        assert_eq!(x.as_matrix().row(0), &[0.0, 1.0, 4.0]);
        assert_eq!(x.as_matrix().row(3), &[1.0, 2.0, 3.0]);
        assert_eq!(x.as_matrix().row(6), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn constant_positions_have_zero_derivatives() {
        let frames = vec![vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]; 5];
        let t = SkeletonTrial::from_frames("c", 0, "1", &frames).unwrap();
        let cfg = FeatureConfig {
            normalization: Normalization::None,
            ..FeatureConfig::default()
        };
        let x = assemble_trial_matrix(&t, &cfg).unwrap();
        for r in 6..18 {
            assert!(x.as_matrix().row(r).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_trial(4, 7, &mut rng);
        let x = assemble_trial_matrix(&t, &FeatureConfig::positions_only()).unwrap();
        assert_eq!(x.dim(), 12);
        for f in 0..7 {
            for j in 0..4 {
                let p = t.position(f, j);
                for c in 0..3 {
                    assert_eq!(x.as_matrix().get(3 * j + c, f), p[c]);
                }
            }
        }
    }

    #[test]
    fn acceleration_needs_three_frames() {
        let cfg = FeatureConfig {
            use_acceleration: true,
            ..FeatureConfig::positions_only()
        };
        assert!(matches!(
            assemble_trial_matrix(&scalar_trial(&[0.0, 1.0]), &cfg),
            Err(Error::TooShort { frames: 2 })
        ));
        let cfg = FeatureConfig {
            use_velocity: true,
            ..FeatureConfig::positions_only()
        };
        let x = assemble_trial_matrix(&scalar_trial(&[0.0, 1.0]), &cfg).unwrap();
        assert_eq!(x.as_matrix().row(3), &[1.0, 1.0]);
    }

    #[test]
    fn root_out_of_range() {
        let cfg = FeatureConfig {
            root_joint_index: 3,
            ..FeatureConfig::default()
        };
        assert!(matches!(
            normalize(&scalar_trial(&[1.0, 2.0]), &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn center_root_on_origin_root_is_noop() {
        let frames = vec![vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]];
        let t = SkeletonTrial::from_frames("o", 0, "1", &frames).unwrap();
        let cfg = FeatureConfig {
            normalization: Normalization::CenterRoot,
            ..FeatureConfig::positions_only()
        };
        assert_eq!(normalize(&t, &cfg).unwrap(), t);
    }

    #[test]
    fn normalization_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_trial(5, 6, &mut rng);
        let shift = [3.0, -7.5, 12.25];
        let mut moved = t.clone();
        for (i, v) in moved.positions.iter_mut().enumerate() {
            *v += shift[i % 3];
        }
        let center = FeatureConfig {
            normalization: Normalization::CenterRoot,
            root_joint_index: 2,
            ..FeatureConfig::positions_only()
        };
        let a = normalize(&t, &center).unwrap();
        let b = normalize(&moved, &center).unwrap();
        for (x, y) in a.positions().iter().zip(b.positions()) {
            assert!((x - y).abs() < 1e-12);
        }
        for f in 0..6 {
            assert_eq!(a.position(f, 2), [0.0; 3]);
        }

        let scaled_cfg = FeatureConfig {
            normalization: Normalization::CenterRootScale,
            ..center
        };
        let mut doubled = t.clone();
        doubled.positions.iter_mut().for_each(|v| *v *= 2.0);
        let a = normalize(&t, &scaled_cfg).unwrap();
        let b = normalize(&doubled, &scaled_cfg).unwrap();
        for (x, y) in a.positions().iter().zip(b.positions()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_falls_back_when_degenerate() {
        let t = scalar_trial(&[1.0, 2.0, 3.0]);
        let cfg = FeatureConfig {
            normalization: Normalization::CenterRootScale,
            ..FeatureConfig::positions_only()
        };
        // single joint: no distances, scale 1, everything centered to zero
        let n = normalize(&t, &cfg).unwrap();
        assert!(n.positions().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clean_missing_cases() {
        let t = scalar_trial(&[1.0, 2.0, 3.0]);
        assert_eq!(clean_missing(&t).unwrap(), t);

        let t = scalar_trial(&[0.5, 0.0, 2.0]);
        let frames: Vec<Vec<[f64; 3]>> = [vec![[0.0, 1.0, 0.0]], vec![[0.0, 0.0, 0.0]], vec![[2.0, 1.0, 0.0]]].to_vec();
        let t2 = SkeletonTrial::from_frames("m", 0, "1", &frames).unwrap();
        let fixed = clean_missing(&t2).unwrap();
        assert_eq!(fixed.position(1, 0), [1.0, 1.0, 0.0]);
        assert_eq!(clean_missing(&t).unwrap().position(1, 0)[0], 1.25);

        let t = scalar_trial(&[f64::NAN, 3.0, 4.0, 0.0]);
        let fixed = clean_missing(&t).unwrap();
        assert_eq!(fixed.position(0, 0)[0], 3.0);
        assert_eq!(fixed.position(3, 0)[0], 4.0);

        let t = scalar_trial(&[0.0, f64::NAN, 0.0]);
        assert!(matches!(clean_missing(&t), Err(Error::UnusableTrial { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn dims_and_linearity(seed in any::<u64>(), joints in 1usize..6, frames in 3usize..20, vel: bool, acc: bool) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_trial(joints, frames, &mut rng);
                let b = random_trial(joints, frames, &mut rng);
                let cfg = FeatureConfig { use_velocity: vel, use_acceleration: acc, ..FeatureConfig::positions_only() };
                let xa = assemble_trial_matrix(&a, &cfg).unwrap();
                let xb = assemble_trial_matrix(&b, &cfg).unwrap();
                prop_assert_eq!(xa.dim(), 3 * joints * (1 + vel as usize + acc as usize));
                prop_assert_eq!(xa.frames(), frames);

                let sum_pos = a.positions().iter().zip(b.positions()).map(|(x, y)| x + y).collect();
                let sum = SkeletonTrial::new("s", 0, "1", joints, sum_pos).unwrap();
                let xs = assemble_trial_matrix(&sum, &cfg).unwrap();
                for (i, v) in xs.as_matrix().as_slice().iter().enumerate() {
                    let expect = xa.as_matrix().as_slice()[i] + xb.as_matrix().as_slice()[i];
                    prop_assert!((v - expect).abs() < 1e-12);
                }
                prop_assert_eq!(assemble_trial_matrix(&a, &cfg).unwrap(), xa);
            }
        }
    }
}
