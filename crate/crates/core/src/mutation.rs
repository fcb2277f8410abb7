//! Stream havoc, splice and extend.
//!
//! The byte operators here are shared with the replay baseline so both
//! fuzzers mutate with exactly the same primitives.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::fault::Manifest;
use crate::program::{stream_len_for, FaultProgram, ProgramEntry, Provenance};

/// Largest block touched by a block operator.
const MAX_BLOCK: usize = 16;
/// Havoc stacks 1, 2 or 4 operators.
const STACK_POW2: u32 = 3;
/// Attempts at producing a child that differs from its parent.
const RETRIES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamOp {
    FlipBit {
        bit: usize,
    },
    RandomByte {
        pos: usize,
        value: u8,
    },
    /// Byte set to 0x00 or 0xFF.
    ExtremeByte {
        pos: usize,
        value: u8,
    },
    RandomizeBlock {
        start: usize,
        data: Vec<u8>,
    },
    ZeroBlock {
        start: usize,
        len: usize,
    },
}

impl StreamOp {
    /// Draws one operator for a buffer of `len` bytes.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Option<StreamOp> {
        if len == 0 {
            return None;
        }
        Some(match rng.gen_range(0..5u8) {
            0 => StreamOp::FlipBit {
                bit: rng.gen_range(0..len * 8),
            },
            1 => StreamOp::RandomByte {
                pos: rng.gen_range(0..len),
                value: rng.gen(),
            },
            2 => StreamOp::ExtremeByte {
                pos: rng.gen_range(0..len),
                value: if rng.gen::<bool>() { 0xFF } else { 0x00 },
            },
            3 => {
                let (start, n) = block(rng, len);
                let mut data = vec![0u8; n];
                rng.fill(&mut data[..]);
                StreamOp::RandomizeBlock { start, data }
            }
            _ => {
                let (start, n) = block(rng, len);
                StreamOp::ZeroBlock { start, len: n }
            }
        })
    }

    /// Applies the operator; positions past the end are clipped.
    pub fn apply(&self, buf: &mut [u8]) {
        match *self {
            StreamOp::FlipBit { bit } => {
                if let Some(b) = buf.get_mut(bit / 8) {
                    *b ^= 1 << (bit % 8);
                }
            }
            StreamOp::RandomByte { pos, value } | StreamOp::ExtremeByte { pos, value } => {
                if let Some(b) = buf.get_mut(pos) {
                    *b = value;
                }
            }
            StreamOp::RandomizeBlock { start, ref data } => {
                for (dst, src) in buf.iter_mut().skip(start).zip(data) {
                    *dst = *src;
                }
            }
            StreamOp::ZeroBlock { start, len } => {
                for b in buf.iter_mut().skip(start).take(len) {
                    *b = 0;
                }
            }
        }
    }
}

fn block<R: Rng + ?Sized>(rng: &mut R, len: usize) -> (usize, usize) {
    let n = rng.gen_range(1..=len.min(MAX_BLOCK));
    let start = rng.gen_range(0..=len - n);
    (start, n)
}

/// Applies a stack of 1, 2 or 4 random operators.
pub fn havoc<R: Rng + ?Sized>(buf: &mut [u8], rng: &mut R) {
    let stack = 1usize << rng.gen_range(0..STACK_POW2);
    for _ in 0..stack {
        if let Some(op) = StreamOp::random(rng, buf.len()) {
            op.apply(buf);
        }
    }
}

/// Clears every bit at or beyond `used_bits`.
pub fn mask_unused(buf: &mut [u8], used_bits: usize) {
    for (i, b) in buf.iter_mut().enumerate() {
        let lo = i * 8;
        if lo >= used_bits {
            *b = 0;
        } else if used_bits - lo < 8 {
            *b &= (1u8 << (used_bits - lo)) - 1;
        }
    }
}

/// A fresh stream for a site: havoc over zeros, restricted to the bits the
/// site will actually consume, with at least one fault bit set.
pub fn generate_stream<R: Rng + ?Sized>(len: usize, used_bits: usize, rng: &mut R) -> Vec<u8> {
    let used_bits = used_bits.min(len * 8);
    let mut stream = vec![0u8; len];
    havoc(&mut stream, rng);
    mask_unused(&mut stream, used_bits);
    if used_bits > 0 && stream.iter().all(|&b| b == 0) {
        let bit = rng.gen_range(0..used_bits);
        stream[bit / 8] |= 1 << (bit % 8);
    }
    stream
}

/// Bits of `entry` the weird peer will consume according to calibration.
fn used_bits(program: &FaultProgram, entry: &ProgramEntry, manifest: &Manifest) -> usize {
    match (program.calibration.get(&entry.site_id), manifest.width(entry.site_id)) {
        (Some(&hits), Some(width)) => (hits as usize * usize::from(width)).min(entry.stream.len() * 8),
        _ => entry.stream.len() * 8,
    }
}

fn child_of(parent: &FaultProgram, provenance: Provenance) -> FaultProgram {
    FaultProgram {
        entries: parent.entries.clone(),
        calibration: parent.calibration.clone(),
        provenance,
        discovery_time: 0,
        novel_cells: Vec::new(),
    }
}

/// Havoc on the stream of one rng-chosen entry. `None` when no entry has a
/// live stream to mutate.
pub fn mutate_stream<R: Rng + ?Sized>(
    parent: &FaultProgram,
    parent_id: usize,
    manifest: &Manifest,
    rng: &mut R,
) -> Option<FaultProgram> {
    let live: Vec<usize> = parent
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| used_bits(parent, e, manifest) > 0)
        .map(|(i, _)| i)
        .collect();
    if live.is_empty() {
        return None;
    }
    let idx = live[rng.gen_range(0..live.len())];
    let used = used_bits(parent, &parent.entries[idx], manifest);
    let mut child = child_of(parent, Provenance::StreamMutation(parent_id));
    for _ in 0..RETRIES {
        let stream = &mut child.entries[idx].stream;
        havoc(stream, rng);
        mask_unused(stream, used);
        if *stream != parent.entries[idx].stream {
            break;
        }
    }
    Some(child)
}

/// Appends one entry of `b` whose site `a` does not use. `None` when every
/// site of `b` collides with `a`.
pub fn splice<R: Rng + ?Sized>(
    a: &FaultProgram,
    a_id: usize,
    b: &FaultProgram,
    b_id: usize,
    rng: &mut R,
) -> Option<FaultProgram> {
    let candidates: Vec<&ProgramEntry> = b.entries.iter().filter(|e| !a.contains_site(e.site_id)).collect();
    if candidates.is_empty() {
        return None;
    }
    let picked = candidates[rng.gen_range(0..candidates.len())].clone();
    let mut child = child_of(a, Provenance::Splice(a_id, b_id));
    if let Some(&hits) = b.calibration.get(&picked.site_id) {
        child.calibration.insert(picked.site_id, hits);
    }
    child.entries.push(picked);
    Some(child)
}

/// Sites `extend` may draw from: registered, unused by `program`, not
/// skip-listed and not known to be dormant.
pub fn extend_candidates(
    program: &FaultProgram,
    manifest: &Manifest,
    skip: &BTreeSet<u32>,
    site_hits: &BTreeMap<u32, u64>,
) -> Vec<u32> {
    manifest
        .iter()
        .map(|s| s.site_id)
        .filter(|id| !program.contains_site(*id) && !skip.contains(id))
        .filter(|id| site_hits.get(id) != Some(&0))
        .collect()
}

/// Appends a freshly generated tuple for an unused site.
pub fn extend<R: Rng + ?Sized>(
    program: &FaultProgram,
    parent_id: usize,
    manifest: &Manifest,
    skip: &BTreeSet<u32>,
    site_hits: &BTreeMap<u32, u64>,
    default_probe_bytes: usize,
    rng: &mut R,
) -> Option<FaultProgram> {
    let eligible = extend_candidates(program, manifest, skip, site_hits);
    if eligible.is_empty() {
        return None;
    }
    let site = eligible[rng.gen_range(0..eligible.len())];
    let width = manifest.width(site).unwrap_or(8);
    let (len, used) = match site_hits.get(&site) {
        Some(&hits) => (stream_len_for(hits, width), hits as usize * usize::from(width)),
        None => (default_probe_bytes, default_probe_bytes * 8),
    };
    let mut child = child_of(program, Provenance::Extend(parent_id));
    if let Some(&hits) = site_hits.get(&site) {
        child.calibration.insert(site, hits);
    }
    child
        .entries
        .push(ProgramEntry::new(site, generate_stream(len, used, rng)));
    Some(child)
}
