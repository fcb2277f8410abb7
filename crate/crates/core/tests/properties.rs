use std::collections::BTreeSet;

use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weirdpeer_core::control::ControlMessage;
use weirdpeer_core::coverage::edge_index;
use weirdpeer_core::frame::{self, RawFrame};
use weirdpeer_core::mutation::{generate_stream, havoc, mask_unused};
use weirdpeer_core::program::stream_len_for;
use weirdpeer_core::transcript::{Direction, Transcript};
use weirdpeer_core::triage::{dedup_key, parse_crash_record, BucketKey};
use weirdpeer_core::{bucketize, CoverageMap, FaultProgram, FaultStream, NoveltyIndex, ProgramEntry};

/// Set of `(cell, class)` pairs; an observation contributes every class up
/// to the one it reached.
#[derive(Default)]
struct PairOracle(BTreeSet<(usize, u8)>);

impl PairOracle {
    fn observe(&mut self, cells: &[u8]) -> Vec<u32> {
        let pairs: BTreeSet<(usize, u8)> = cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .flat_map(|(i, &c)| (1..=bucketize(c)).map(move |b| (i, b)))
            .collect();
        let novel: BTreeSet<u32> = pairs.difference(&self.0).map(|&(i, _)| i as u32).collect();
        self.0.extend(pairs);
        novel.into_iter().collect()
    }
}

fn count() -> impl Strategy<Value = u8> {
    prop_oneof![3 => Just(0u8), 2 => 1u8..4, 1 => any::<u8>()]
}

fn map_seq(cells: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    vec(vec(count(), cells), 1..12)
}

proptest! {
    #[test]
    fn novelty_agrees_with_pair_oracle(seq in map_seq(64)) {
        let mut index = NoveltyIndex::with_size(64);
        let mut oracle = PairOracle::default();
        for cells in seq {
            let obs = index.observe(&CoverageMap::from_cells(cells.clone()));
            let expected = oracle.observe(&cells);
            prop_assert_eq!(obs.is_novel, !expected.is_empty());
            prop_assert_eq!(obs.novel_cells, expected);
            prop_assert_eq!(index.recorded_pairs(), oracle.0.len());
        }
    }

    #[test]
    fn recorded_pairs_grow_monotonically(seq in map_seq(16)) {
        let mut index = NoveltyIndex::with_size(16);
        let mut last = 0;
        for cells in seq {
            index.observe(&CoverageMap::from_cells(cells));
            prop_assert!(index.recorded_pairs() >= last);
            last = index.recorded_pairs();
        }
    }

    #[test]
    fn dominated_map_is_not_novel(a in vec(any::<u8>(), 16), shrink in vec(any::<u8>(), 16)) {
        let b: Vec<u8> = a.iter().zip(&shrink).map(|(&x, &s)| x.min(s)).collect();
        let mut index = NoveltyIndex::with_size(16);
        index.observe(&CoverageMap::from_cells(a));
        prop_assert!(!index.observe(&CoverageMap::from_cells(b)).is_novel);
    }

    #[test]
    fn bucketize_is_monotone(a: u8, b: u8) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(bucketize(lo) <= bucketize(hi));
        prop_assert!(bucketize(hi) < 9);
    }

    #[test]
    fn edge_index_in_range(prev: u32, cur: u32, shift in 4u32..17) {
        let size = 1usize << shift;
        prop_assert!(edge_index(prev, cur, size) < size);
    }

    #[test]
    fn stream_reads_match_bit_trace(bytes in vec(any::<u8>(), 0..24), widths in vec(prop::sample::select(vec![1u32, 8, 16, 32, 64]), 1..40)) {
        let mut s = FaultStream::new(bytes.clone());
        let mut cursor = 0usize;
        let mut exhausted = false;
        for w in widths {
            let got = s.consume(w);
            let w = w as usize;
            if exhausted || bytes.len() * 8 - cursor < w {
                exhausted = true;
                prop_assert_eq!(got, 0);
                prop_assert!(s.is_exhausted());
                continue;
            }
            let mut want = 0u64;
            for k in 0..w {
                let bit = cursor + k;
                if bytes[bit / 8] >> (bit % 8) & 1 == 1 {
                    want |= 1 << k;
                }
            }
            cursor += w;
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn program_round_trips(entries in vec((any::<u32>(), vec(any::<u8>(), 0..40)), 0..8)) {
        let mut seen = BTreeSet::new();
        let entries: Vec<ProgramEntry> = entries
            .into_iter()
            .filter(|(id, _)| seen.insert(*id))
            .map(|(id, s)| ProgramEntry::new(id, s))
            .collect();
        let p = FaultProgram::from_entries(entries);
        let bytes = p.encode().unwrap();
        prop_assert_eq!(&bytes[..4], b"FTNP");
        prop_assert_eq!(FaultProgram::decode(&bytes).unwrap().entries, p.entries);
    }

    #[test]
    fn truncated_program_is_rejected(entries in vec(vec(any::<u8>(), 1..10), 1..4), cut in 1usize..8) {
        let p = FaultProgram::from_entries(entries.into_iter().enumerate().map(|(i, s)| ProgramEntry::new(i as u32, s)).collect());
        let bytes = p.encode().unwrap();
        let cut = cut.min(bytes.len());
        prop_assert!(FaultProgram::decode(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn generated_streams_are_masked_and_live(len in 1usize..16, used in 1usize..128, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = generate_stream(len, used, &mut rng);
        prop_assert_eq!(s.len(), len);
        let used = used.min(len * 8);
        let mut masked = s.clone();
        mask_unused(&mut masked, used);
        prop_assert_eq!(&masked, &s);
        prop_assert!(s.iter().any(|&b| b != 0));
    }

    #[test]
    fn havoc_keeps_length(buf in vec(any::<u8>(), 0..64), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = buf.clone();
        havoc(&mut out, &mut rng);
        prop_assert_eq!(out.len(), buf.len());
    }

    #[test]
    fn stream_len_is_bit_ceiling(hits in 0u64..10_000, width in prop::sample::select(vec![1u8, 8, 16, 32, 64])) {
        let bits = hits * u64::from(width);
        let len = stream_len_for(hits, width) as u64;
        prop_assert!(len * 8 >= bits);
        prop_assert!(len == 0 || (len - 1) * 8 < bits);
    }

    #[test]
    fn transcript_round_trips(records in vec((any::<bool>(), vec(any::<u8>(), 0..50)), 1..10)) {
        let mut t = Transcript::default();
        for (dir, bytes) in &records {
            let d = if *dir { Direction::ClientToServer } else { Direction::ServerToClient };
            t.push(d, bytes);
        }
        prop_assert_eq!(Transcript::decode(&t.encode()).unwrap().records, t.records);
    }

    #[test]
    fn frame_round_trips(kind in 1u8..7, payload in vec(any::<u8>(), 0..300)) {
        let bytes = frame::encode(kind, &payload).unwrap();
        let (raw, used) = RawFrame::parse(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert!(raw.crc_ok());
        prop_assert_eq!(raw.kind().map(|k| k as u8), Some(kind));
    }

    #[test]
    fn corrupted_frame_fails_crc(payload in vec(any::<u8>(), 1..100), at: prop::sample::Index, flip in 1u8..=255) {
        let mut bytes = frame::encode(3, &payload).unwrap();
        let i = frame::HEADER_LEN + at.index(payload.len());
        bytes[i] ^= flip;
        let (raw, _) = RawFrame::parse(&bytes).unwrap();
        prop_assert!(!raw.crc_ok());
    }

    #[test]
    fn control_messages_round_trip(port: u16, text in "[ -~]{0,40}") {
        for m in [
            ControlMessage::Ready { address: "127.0.0.1".into(), port },
            ControlMessage::Connecting,
            ControlMessage::Connected,
            ControlMessage::PeerError { text: text.clone() },
        ] {
            let bytes = m.encode().unwrap();
            prop_assert_eq!(ControlMessage::decode(&bytes).unwrap(), Some((m, bytes.len())));
            prop_assert_eq!(ControlMessage::decode(&bytes[..bytes.len() - 1]).unwrap_or(None), None);
        }
    }

    #[test]
    fn bucket_key_uses_first_five_frames(frames in vec("[a-z_]{1,12}", 0..9)) {
        let key = dedup_key(&frames);
        for (i, slot) in key.frames().iter().enumerate() {
            prop_assert_eq!(slot.as_deref(), frames.get(i).map(String::as_str));
        }
        prop_assert_eq!(BucketKey::parse(&key.to_string()), Some(key.clone()));
        let mut longer = frames.clone();
        longer.push("extra".into());
        if frames.len() >= 5 {
            prop_assert_eq!(dedup_key(&longer), key);
        }
    }

    #[test]
    fn crash_record_parses_frames_in_order(bug in "[A-Z][0-9]", frames in vec("[a-z_]{1,12}", 1..8)) {
        let mut text = format!("noise line\nFTN-BUG {bug}\n");
        for f in &frames {
            text.push_str(&format!("FRAME {f}\n"));
        }
        let ev = parse_crash_record(&text);
        prop_assert_eq!(ev.bug.as_deref(), Some(bug.as_str()));
        prop_assert_eq!(ev.frames, frames);
    }
}
