//! `KCOV1` descriptor container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "KCOV1"
//! u32 provenance length, provenance text (UTF-8 key=value lines)
//! u64 record count
//! per record:
//!   u32 len, trial_id (UTF-8)
//!   i32 label
//!   u32 len, subject (UTF-8)
//!   u8  split (0 train, 1 test, 2 unassigned)
//!   u32 d
//!   f64 epsilon
//!   u8  kernel tag (0 linear, 1 polynomial, 2 exp-dot), f64 param0, f64 param1
//!   f64 × d(d+1)/2   upper triangle of log_matrix, row-major
//! ```

use std::path::Path;

use crate::container::{Provenance, Reader, Writer};
use crate::dataset::Split;
use crate::descriptor::{KernelSpec, SpdDescriptor};
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

pub const DESCRIPTOR_MAGIC: &[u8; 5] = b"KCOV1";

/// One persisted descriptor: identity plus its regularized log.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub trial_id: String,
    pub label: i32,
    pub subject: String,
    pub split: Option<Split>,
    pub epsilon: f64,
    pub kernel: KernelSpec,
    pub log_matrix: SymMatrix,
}

impl DescriptorRecord {
    /// Fails if the descriptor has no cached log.
    pub fn from_descriptor(d: &SpdDescriptor, subject: impl Into<String>, split: Option<Split>) -> Result<Self> {
        let log_matrix = d
            .log_matrix
            .clone()
            .ok_or_else(|| Error::InvalidConfig(format!("descriptor {} has no cached log", d.trial_id)))?;
        Ok(DescriptorRecord {
            trial_id: d.trial_id.clone(),
            label: d.label,
            subject: subject.into(),
            split,
            epsilon: d.epsilon,
            kernel: d.kernel,
            log_matrix,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptorSet {
    pub provenance: Provenance,
    pub records: Vec<DescriptorRecord>,
}

impl DescriptorSet {
    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &DescriptorRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(DESCRIPTOR_MAGIC);
        w.str(&self.provenance.to_string());
        w.u64(self.records.len() as u64);
        for r in &self.records {
            w.str(&r.trial_id);
            w.i32(r.label);
            w.str(&r.subject);
            w.u8(split_tag(r.split));
            w.len(r.log_matrix.dim());
            w.f64(r.epsilon);
            w.u8(r.kernel.tag());
            w.f64s(&r.kernel.params());
            w.f64s(&r.log_matrix.upper_triangle());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, DESCRIPTOR_MAGIC)?;
        let provenance = Provenance::parse(&r.str()?)?;
        let count = r.u64()?;
        let mut records = Vec::new();
        for _ in 0..count {
            let trial_id = r.str()?;
            let label = r.i32()?;
            let subject = r.str()?;
            let split = split_from_tag(r.u8()?)?;
            let d = r.len()?;
            let epsilon = r.f64()?;
            let tag = r.u8()?;
            let params = [r.f64()?, r.f64()?];
            let kernel = KernelSpec::from_tag(tag, params)?;
            let upper = r.f64s(d * (d + 1) / 2)?;
            let log_matrix = SymMatrix::from_upper(d, &upper).map_err(|e| Error::Format(e.to_string()))?;
            records.push(DescriptorRecord {
                trial_id,
                label,
                subject,
                split,
                epsilon,
                kernel,
                log_matrix,
            });
        }
        r.finish()?;
        Ok(DescriptorSet {
            provenance,
            records,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

pub(crate) fn split_tag(s: Option<Split>) -> u8 {
    match s {
        Some(Split::Train) => 0,
        Some(Split::Test) => 1,
        None => 2,
    }
}

pub(crate) fn split_from_tag(t: u8) -> Result<Option<Split>> {
    match t {
        0 => Ok(Some(Split::Train)),
        1 => Ok(Some(Split::Test)),
        2 => Ok(None),
        t => Err(Error::Format(format!("unknown split tag {t}"))),
    }
}
