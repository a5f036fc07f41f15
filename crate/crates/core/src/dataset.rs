//! Trial loaders (MSR-Action3D skeleton text, canonical JSON-lines), dataset
//! profiles and cross-subject split rules.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::features::SkeletonTrial;

/// Header version tag of the canonical trial format.
pub const CANONICAL_FORMAT: &str = "kcov-trials/1";

pub const MSR3D_JOINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assignment {
    Unassigned,
    Train,
    Test,
    Rejected(String),
}

impl Assignment {
    pub fn split(&self) -> Option<Split> {
        match self {
            Assignment::Train => Some(Split::Train),
            Assignment::Test => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub trial_id: String,
    pub label: i32,
    pub subject: String,
    pub source: PathBuf,
    pub frames: usize,
    pub assignment: Assignment,
}

/// Every loaded (or rejected) trial with its split assignment, sorted by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialIndex {
    pub entries: Vec<IndexEntry>,
    /// Label → class name, when the source provides one.
    pub class_names: BTreeMap<i32, String>,
}

impl TrialIndex {
    fn sorted(mut entries: Vec<IndexEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
        if let Some(w) = entries.windows(2).find(|w| w[0].trial_id == w[1].trial_id) {
            return Err(Error::SchemaError {
                path: format!("trial_id {:?}", w[0].trial_id),
                reason: "duplicate trial id".into(),
            });
        }
        Ok(TrialIndex {
            entries,
            class_names: BTreeMap::new(),
        })
    }

    pub fn get(&self, trial_id: &str) -> Option<&IndexEntry> {
        self.entries
            .binary_search_by(|e| e.trial_id.as_str().cmp(trial_id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn reject(&mut self, trial_id: &str, reason: impl Into<String>) {
        if let Ok(i) = self.entries.binary_search_by(|e| e.trial_id.as_str().cmp(trial_id)) {
            self.entries[i].assignment = Assignment::Rejected(reason.into());
        }
    }

    pub fn count(&self, pred: impl Fn(&Assignment) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.assignment)).count()
    }

    pub fn split_of(&self, trial_id: &str) -> Option<Split> {
        self.get(trial_id).and_then(|e| e.assignment.split())
    }
}

/// Loaded trials plus the index describing them (including rejects).
#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub name: String,
    pub joint_names: Vec<String>,
    pub trials: Vec<SkeletonTrial>,
    pub index: TrialIndex,
}

impl LoadedDataset {
    /// Trials currently assigned to `split`, in id order.
    pub fn trials_in(&self, split: Split) -> Vec<&SkeletonTrial> {
        self.trials
            .iter()
            .filter(|t| self.index.split_of(&t.trial_id) == Some(split))
            .collect()
    }
}

/// Parses `aAA_sSS_eEE_skeleton3D.txt` into (action, subject, instance).
pub fn parse_msr3d_name(name: &str) -> Option<(i32, u32, u32)> {
    let stem = name.strip_suffix("_skeleton3D.txt")?;
    let mut parts = stem.split('_');
    let mut field = |prefix: char| -> Option<u32> {
        let p = parts.next()?;
        let digits = p.strip_prefix(prefix)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()
    };
    let a = field('a')?;
    let s = field('s')?;
    let e = field('e')?;
    if parts.next().is_some() {
        return None;
    }
    Some((i32::try_from(a).ok()?, s, e))
}

fn parse_msr3d_body(text: &str) -> std::result::Result<Vec<f64>, String> {
    let mut coords = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 4 {
            return Err(format!("line {}: expected 4 values, found {}", lineno + 1, toks.len()));
        }
        for tok in &toks[..3] {
            let v: f64 = tok
                .parse()
                .map_err(|_| format!("line {}: non-numeric token {tok:?}", lineno + 1))?;
            coords.push(v);
        }
        toks[3]
            .parse::<f64>()
            .map_err(|_| format!("line {}: non-numeric token {:?}", lineno + 1, toks[3]))?;
        rows += 1;
    }
    if rows == 0 || rows % MSR3D_JOINTS != 0 {
        return Err(format!("{rows} rows is not a positive multiple of {MSR3D_JOINTS}"));
    }
    Ok(coords)
}

/// Loads every `aAA_sSS_eEE_skeleton3D.txt` file in `dir`.
///
/// Malformed files are skipped with a warning and recorded as rejected.
/// Files whose name does not follow the grammar are ignored.
pub fn load_msr3d(dir: &Path) -> Result<LoadedDataset> {
    let mut files: Vec<(PathBuf, String)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_str()?.to_string();
            Some((e.path(), name))
        })
        .filter(|(_, name)| name.ends_with("_skeleton3D.txt"))
        .collect();
    files.sort_by(|a, b| a.1.cmp(&b.1));

    let parsed: Vec<(IndexEntry, Option<SkeletonTrial>)> = files
        .par_iter()
        .filter_map(|(path, name)| {
            let Some((action, subject, _)) = parse_msr3d_name(name) else {
                log::debug!("ignoring {name}: not an MSR-Action3D skeleton file name");
                return None;
            };
            let trial_id = name.trim_end_matches("_skeleton3D.txt").to_string();
            let mut entry = IndexEntry {
                trial_id: trial_id.clone(),
                label: action,
                subject: subject.to_string(),
                source: path.clone(),
                frames: 0,
                assignment: Assignment::Unassigned,
            };
            let body = fs::read(path)
                .map_err(|e| e.to_string())
                .and_then(|b| String::from_utf8(b).map_err(|e| e.to_string()))
                .and_then(|t| parse_msr3d_body(&t));
            match body {
                Ok(coords) => {
                    let trial = SkeletonTrial::new(trial_id, action, subject.to_string(), MSR3D_JOINTS, coords)
                        .expect("row count checked");
                    entry.frames = trial.frames();
                    Some((entry, Some(trial)))
                }
                Err(reason) => {
                    log::warn!("{}: {reason}; skipping", path.display());
                    entry.assignment = Assignment::Rejected(format!("malformed: {reason}"));
                    Some((entry, None))
                }
            }
        })
        .collect();

    let mut entries = Vec::with_capacity(parsed.len());
    let mut trials = Vec::new();
    for (entry, trial) in parsed {
        entries.push(entry);
        trials.extend(trial);
    }
    trials.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    Ok(LoadedDataset {
        name: "msr-action3d".into(),
        joint_names: Vec::new(),
        trials,
        index: TrialIndex::sorted(entries)?,
    })
}

/// Header line of a canonical trial file.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalHeader {
    pub dataset: String,
    pub joint_names: Vec<String>,
    pub joints: usize,
    pub class_names: BTreeMap<i32, String>,
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::SchemaError {
        path: path.into(),
        reason: reason.into(),
    }
}

fn parse_header(v: &Value) -> Result<CanonicalHeader> {
    let obj = v.as_object().ok_or_else(|| schema("header", "expected an object"))?;
    match obj.get("format").and_then(Value::as_str) {
        Some(CANONICAL_FORMAT) => {}
        Some(other) => return Err(schema("header.format", format!("unsupported version {other:?}"))),
        None => return Err(schema("header.format", format!("missing version tag {CANONICAL_FORMAT:?}"))),
    }
    let dataset = obj
        .get("dataset")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("header.dataset", "expected a string"))?
        .to_string();
    let joints = obj
        .get("n")
        .and_then(Value::as_u64)
        .filter(|&n| n >= 1)
        .ok_or_else(|| schema("header.n", "expected a positive integer"))? as usize;
    let names = obj
        .get("joint_names")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("header.joint_names", "expected an array"))?;
    let joint_names = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            n.as_str()
                .map(str::to_string)
                .ok_or_else(|| schema(format!("header.joint_names[{i}]"), "expected a string"))
        })
        .collect::<Result<Vec<_>>>()?;
    if joint_names.len() != joints {
        return Err(schema(
            "header.joint_names",
            format!("{} names for n = {joints}", joint_names.len()),
        ));
    }
    let mut class_names = BTreeMap::new();
    if let Some(classes) = obj.get("classes") {
        let arr = classes
            .as_array()
            .ok_or_else(|| schema("header.classes", "expected an array"))?;
        for (i, c) in arr.iter().enumerate() {
            let label = c
                .get("label")
                .and_then(Value::as_i64)
                .and_then(|l| i32::try_from(l).ok())
                .ok_or_else(|| schema(format!("header.classes[{i}].label"), "expected a 32-bit integer"))?;
            let name = c
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| schema(format!("header.classes[{i}].name"), "expected a string"))?;
            class_names.insert(label, name.to_string());
        }
    }
    Ok(CanonicalHeader {
        dataset,
        joint_names,
        joints,
        class_names,
    })
}

fn parse_record(v: &Value, rec: usize, joints: usize) -> Result<SkeletonTrial> {
    let at = |field: &str| format!("record[{rec}].{field}");
    let obj = v.as_object().ok_or_else(|| schema(format!("record[{rec}]"), "expected an object"))?;
    let trial_id = obj
        .get("trial_id")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| schema(at("trial_id"), "expected a non-empty string"))?;
    let label = obj
        .get("label")
        .and_then(Value::as_i64)
        .and_then(|l| i32::try_from(l).ok())
        .ok_or_else(|| schema(at("label"), "expected a 32-bit integer"))?;
    let subject = match obj.get("subject_id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) if n.is_i64() || n.is_u64() => n.to_string(),
        _ => return Err(schema(at("subject_id"), "expected an integer or a non-empty string")),
    };
    let declared = obj
        .get("frame_count")
        .and_then(Value::as_u64)
        .ok_or_else(|| schema(at("frame_count"), "expected a nonnegative integer"))? as usize;
    let frames = obj
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(at("frames"), "expected an array"))?;
    if frames.len() != declared {
        return Err(schema(
            at("frames"),
            format!("{} frames but frame_count = {declared}", frames.len()),
        ));
    }
    let mut coords = Vec::with_capacity(declared * joints * 3);
    for (t, frame) in frames.iter().enumerate() {
        let fj = frame
            .as_array()
            .filter(|a| a.len() == joints)
            .ok_or_else(|| schema(format!("record[{rec}].frames[{t}]"), format!("expected {joints} joints")))?;
        for (j, joint) in fj.iter().enumerate() {
            let xyz = joint
                .as_array()
                .filter(|a| a.len() == 3)
                .ok_or_else(|| schema(format!("record[{rec}].frames[{t}][{j}]"), "expected [x, y, z]"))?;
            for (c, v) in xyz.iter().enumerate() {
                coords.push(match v {
                    Value::Null => f64::NAN,
                    Value::Number(n) => n.as_f64().expect("serde_json numbers are f64-representable"),
                    _ => {
                        return Err(schema(
                            format!("record[{rec}].frames[{t}][{j}][{c}]"),
                            "expected a number or null",
                        ))
                    }
                });
            }
        }
    }
    SkeletonTrial::new(trial_id, label, subject, joints, coords).map_err(|e| schema(at("frames"), e.to_string()))
}

/// Reads a canonical JSON-lines trial file. `null` coordinates load as NaN
/// (missing acquisitions) and are left for [`crate::features::clean_missing`].
pub fn load_canonical(path: &Path) -> Result<LoadedDataset> {
    read_canonical(BufReader::new(fs::File::open(path)?), path)
}

/// [`load_canonical`] over any reader; `source` is recorded in the index.
pub fn read_canonical<R: BufRead>(reader: R, source: &Path) -> Result<LoadedDataset> {
    let path = source;
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(schema("header", "file is empty")),
            Some((_, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: Value = serde_json::from_str(&line).map_err(|e| schema("header", e.to_string()))?;
                break parse_header(&v)?;
            }
        }
    };
    let mut trials = Vec::new();
    let mut rec = 0usize;
    for (_, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| schema(format!("record[{rec}]"), e.to_string()))?;
        trials.push(parse_record(&v, rec, header.joints)?);
        rec += 1;
    }
    let entries = trials
        .iter()
        .map(|t| IndexEntry {
            trial_id: t.trial_id.clone(),
            label: t.label,
            subject: t.subject.clone(),
            source: path.to_path_buf(),
            frames: t.frames(),
            assignment: Assignment::Unassigned,
        })
        .collect();
    let mut index = TrialIndex::sorted(entries)?;
    index.class_names = header.class_names.clone();
    trials.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
    Ok(LoadedDataset {
        name: header.dataset,
        joint_names: header.joint_names,
        trials,
        index,
    })
}

fn coord_json(v: f64) -> Value {
    // serde_json writes the shortest representation that parses back to the
    // same bits; non-finite values become null.
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn write_canonical<W: Write>(mut out: W, header: &CanonicalHeader, trials: &[SkeletonTrial]) -> Result<()> {
    let mut h = json!({
        "format": CANONICAL_FORMAT,
        "dataset": header.dataset,
        "n": header.joints,
        "joint_names": header.joint_names,
    });
    if !header.class_names.is_empty() {
        h["classes"] = header
            .class_names
            .iter()
            .map(|(l, n)| json!({"label": l, "name": n}))
            .collect();
    }
    writeln!(out, "{h}")?;
    for t in trials {
        if t.joints() != header.joints {
            return Err(Error::ShapeMismatch(format!(
                "trial {} has {} joints, header declares {}",
                t.trial_id,
                t.joints(),
                header.joints
            )));
        }
        let frames: Vec<Value> = t
            .to_frames()
            .iter()
            .map(|f| {
                f.iter()
                    .map(|p| Value::Array(p.iter().map(|&c| coord_json(c)).collect()))
                    .collect()
            })
            .collect();
        let subject = match t.subject.parse::<i64>() {
            Ok(n) if n.to_string() == t.subject => json!(n),
            _ => json!(t.subject),
        };
        let rec = json!({
            "trial_id": t.trial_id,
            "label": t.label,
            "subject_id": subject,
            "frame_count": t.frames(),
            "frames": frames,
        });
        writeln!(out, "{rec}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SplitRule {
    /// Odd subject ids train, even ids test.
    OddEvenSubjects,
    NamedSubjects { train: Vec<String>, test: Vec<String> },
}

/// A class given by numeric label or by name (resolved through the
/// dataset's class table).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Label(i32),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetProfile {
    pub name: String,
    pub joint_count: usize,
    pub root_joint_index: usize,
    pub split: SplitRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_filter: Option<Vec<ClassRef>>,
    /// Trial ids dropped as corrupted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed_trials: Vec<String>,
}

impl DatasetProfile {
    pub fn odd_even(name: impl Into<String>, joint_count: usize, root_joint_index: usize) -> Self {
        DatasetProfile {
            name: name.into(),
            joint_count,
            root_joint_index,
            split: SplitRule::OddEvenSubjects,
            class_filter: None,
            removed_trials: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: DatasetProfile = toml::from_str(text).map_err(|e| schema("profile", e.to_string()))?;
        if p.root_joint_index >= p.joint_count {
            return Err(schema(
                "profile.root_joint_index",
                format!("{} out of range for {} joints", p.root_joint_index, p.joint_count),
            ));
        }
        if let SplitRule::NamedSubjects { train, test } = &p.split {
            let tr: HashSet<&String> = train.iter().collect();
            if let Some(s) = test.iter().find(|s| tr.contains(s)) {
                return Err(schema("profile.split", format!("subject {s:?} is in both train and test")));
            }
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    fn resolve_filter(&self, class_names: &BTreeMap<i32, String>) -> Result<Option<BTreeSet<i32>>> {
        let Some(filter) = &self.class_filter else {
            return Ok(None);
        };
        let mut set = BTreeSet::new();
        for c in filter {
            match c {
                ClassRef::Label(l) => {
                    set.insert(*l);
                }
                ClassRef::Name(n) => {
                    let label = class_names
                        .iter()
                        .find(|(_, name)| *name == n)
                        .map(|(l, _)| *l)
                        .ok_or_else(|| schema("profile.class_filter", format!("unknown class name {n:?}")))?;
                    set.insert(label);
                }
            }
        }
        Ok(Some(set))
    }
}

/// Assigns every non-rejected trial to train or test.
///
/// Removed trials and trials outside the class filter become rejected;
/// previously rejected trials stay rejected.
pub fn apply_split(index: &TrialIndex, profile: &DatasetProfile) -> Result<TrialIndex> {
    let filter = profile.resolve_filter(&index.class_names)?;
    let removed: HashSet<&str> = profile.removed_trials.iter().map(String::as_str).collect();
    let mut out = index.clone();
    for e in &mut out.entries {
        if matches!(e.assignment, Assignment::Rejected(_)) {
            continue;
        }
        if removed.contains(e.trial_id.as_str()) {
            e.assignment = Assignment::Rejected("removed by profile".into());
            continue;
        }
        if let Some(f) = &filter {
            if !f.contains(&e.label) {
                e.assignment = Assignment::Rejected("class filtered".into());
                continue;
            }
        }
        e.assignment = match &profile.split {
            SplitRule::OddEvenSubjects => {
                let id: u64 = e
                    .subject
                    .parse()
                    .map_err(|_| Error::UnknownSubject(e.subject.clone()))?;
                if id % 2 == 1 {
                    Assignment::Train
                } else {
                    Assignment::Test
                }
            }
            SplitRule::NamedSubjects { train, test } => {
                if train.contains(&e.subject) {
                    Assignment::Train
                } else if test.contains(&e.subject) {
                    Assignment::Test
                } else {
                    return Err(Error::UnknownSubject(e.subject.clone()));
                }
            }
        };
    }
    Ok(out)
}
