//! Fault programs: the unit of scheduling and mutation, and their on-disk
//! encoding.
//!
//! File layout (little-endian): `"FTNP"`, version `u16`, entry count `u16`,
//! then per entry `site_id u32`, `stream_len u32` and the stream bytes.
//! Calibration and provenance are not part of the file; the corpus encodes
//! provenance in file names instead.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub const MAGIC: [u8; 4] = *b"FTNP";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProgramError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("site {0} appears twice")]
    DuplicateSite(u32),
    #[error("too many entries ({0})")]
    TooManyEntries(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProgramEntry {
    pub site_id: u32,
    pub stream: Vec<u8>,
}

impl ProgramEntry {
    pub fn new(site_id: u32, stream: Vec<u8>) -> Self {
        Self { site_id, stream }
    }
}

/// Where a queue entry came from. Parents are queue indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Provenance {
    #[default]
    SiteProbe,
    StreamMutation(usize),
    Splice(usize, usize),
    Extend(usize),
}

impl Provenance {
    /// Compact form used in corpus file names.
    pub fn tag(&self) -> String {
        match *self {
            Provenance::SiteProbe => String::from("probe"),
            Provenance::StreamMutation(p) => format!("mut{p:06}"),
            Provenance::Splice(a, b) => format!("splice{a:06}+{b:06}"),
            Provenance::Extend(p) => format!("ext{p:06}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FaultProgram {
    pub entries: Vec<ProgramEntry>,
    /// Expected hits per site, measured by the last calibration run.
    pub calibration: BTreeMap<u32, u64>,
    pub provenance: Provenance,
    /// Campaign clock (iteration counter) at admission.
    pub discovery_time: u64,
    /// Cells this program was first to reach.
    pub novel_cells: Vec<u32>,
}

impl FaultProgram {
    /// The reserved baseline: no streams, every site transparent.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<ProgramEntry>) -> Self {
        Self {
            entries,
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_site(&self, site_id: u32) -> bool {
        self.entries.iter().any(|e| e.site_id == site_id)
    }

    pub fn entry(&self, site_id: u32) -> Option<&ProgramEntry> {
        self.entries.iter().find(|e| e.site_id == site_id)
    }

    pub fn site_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.site_id)
    }

    pub fn has_duplicate_sites(&self) -> bool {
        let mut seen = BTreeMap::new();
        self.entries.iter().any(|e| seen.insert(e.site_id, ()).is_some())
    }

    /// True when every stream is empty, i.e. the program can never fault.
    pub fn is_dormant(&self) -> bool {
        self.entries.iter().all(|e| e.stream.is_empty())
    }

    pub fn stream_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.stream.len()).sum()
    }

    /// Corpus file name: `id-<seq>,src-<provenance>,time-<iter>`.
    pub fn file_name(&self, seq: usize) -> String {
        format!("id-{seq:06},src-{},time-{}", self.provenance.tag(), self.discovery_time)
    }

    pub fn encode(&self) -> Result<Vec<u8>, ProgramError> {
        let count = u16::try_from(self.entries.len()).map_err(|_| ProgramError::TooManyEntries(self.entries.len()))?;
        let mut out = Vec::with_capacity(8 + self.stream_bytes() + 8 * self.entries.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for entry in &self.entries {
            out.extend_from_slice(&entry.site_id.to_le_bytes());
            out.extend_from_slice(&(entry.stream.len() as u32).to_le_bytes());
            out.extend_from_slice(&entry.stream);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProgramError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ProgramError::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(ProgramError::UnsupportedVersion(version));
        }
        let count = r.u16()?;
        let mut entries: Vec<ProgramEntry> = Vec::with_capacity(usize::from(count));
        for _ in 0..count {
            let site_id = r.u32()?;
            let len = r.u32()? as usize;
            let stream = r.take(len)?.to_vec();
            if entries.iter().any(|e| e.site_id == site_id) {
                return Err(ProgramError::DuplicateSite(site_id));
            }
            entries.push(ProgramEntry { site_id, stream });
        }
        if r.pos != bytes.len() {
            return Err(ProgramError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self::from_entries(entries))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProgramError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or(ProgramError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, ProgramError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ProgramError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Bytes needed to feed `hits` executions of a site `width_bits` wide.
pub fn stream_len_for(hits: u64, width_bits: u8) -> usize {
    (hits * u64::from(width_bits)).div_ceil(8) as usize
}
