use weirdpeer_core::fault::{branch_fault, call_fault, switch_fault, value_fault};
use weirdpeer_core::{CallAction, FaultEngine, FaultProgram, FaultStream, Mode, ProgramEntry, SiteDescriptor};

fn engine(sites: Vec<SiteDescriptor>, program: &FaultProgram) -> FaultEngine {
    let mut e = FaultEngine::new(Mode::Faulting);
    for s in sites {
        e.register_site(s).unwrap();
    }
    e.seal();
    e.load_program(program);
    e
}

fn one(site: u32, stream: &[u8]) -> FaultProgram {
    FaultProgram::from_entries(vec![ProgramEntry::new(site, stream.to_vec())])
}

#[test]
fn byte_aligned_reads_equal_raw_bytes() {
    let mut s = FaultStream::new(vec![0xAB, 0xCD]);
    assert_eq!(s.consume(8), 0xAB);
    assert_eq!(s.consume(8), 0xCD);
    assert!(!s.is_exhausted());
    assert_eq!(s.consume(8), 0);
    assert!(s.is_exhausted());
}

#[test]
fn multi_byte_values_are_little_endian() {
    let mut s = FaultStream::new(vec![0x34, 0x12, 0x78, 0x56]);
    assert_eq!(s.consume(16), 0x1234);
    assert_eq!(s.consume(16), 0x5678);
}

#[test]
fn branch_flips_follow_stream_bits() {
    let mut e = engine(vec![SiteDescriptor::branch(1, "b")], &one(1, &[0b0000_0101]));
    let h = e.handle(1).unwrap();
    let taken: Vec<bool> = (0..5).map(|_| e.apply_branch(h, false)).collect();
    assert_eq!(taken, [true, false, true, false, false]);
    assert_eq!(e.hits(1), 5);
}

#[test]
fn exhausted_stream_is_identity() {
    let mut e = engine(vec![SiteDescriptor::value_load(1, 8, "v").unwrap()], &one(1, &[0xFF]));
    let h = e.handle(1).unwrap();
    assert_eq!(e.apply_value(h, 0x0F), 0xF0);
    for _ in 0..10 {
        assert_eq!(e.apply_value(h, 0x0F), 0x0F);
    }
    assert_eq!(e.consumed_bits(1), 8);
}

#[test]
fn value_xor_truncates_to_width() {
    assert_eq!(value_fault(0x1FF, 0x01, 8), 0xFE);
    assert_eq!(value_fault(u64::MAX, u64::MAX, 64), 0);
    assert_eq!(value_fault(0, 0xFFFF_FFFF_FFFF, 16), 0xFFFF);
}

#[test]
fn branch_fault_truth_table() {
    for cond in [false, true] {
        assert_eq!(branch_fault(cond, 0), cond);
        assert_eq!(branch_fault(cond, 1), !cond);
    }
}

#[test]
fn switch_zero_keeps_arm_else_advances() {
    assert_eq!(switch_fault(2, 5, 0), 2);
    assert_eq!(switch_fault(2, 5, 1), 3);
    assert_eq!(switch_fault(4, 5, 1), 0);
    assert_eq!(switch_fault(0, 1, 200), 0);
}

#[test]
fn call_skip_and_index_partition() {
    assert_eq!(call_fault(4, 0), CallAction::CallEntryAt(0));
    assert_eq!(call_fault(4, 4), CallAction::SkipCall);
    assert_eq!(call_fault(4, 3), CallAction::CallEntryAt(3));
    assert_eq!(call_fault(4, 5), CallAction::CallEntryAt(0));
    assert_eq!(call_fault(1, 1), CallAction::SkipCall);
    assert_eq!(call_fault(1, 2), CallAction::CallEntryAt(0));
}

#[test]
fn sites_without_streams_are_transparent() {
    let mut e = engine(
        vec![SiteDescriptor::branch(1, "b"), SiteDescriptor::switch(2, "s")],
        &one(1, &[0xFF]),
    );
    let s = e.handle(2).unwrap();
    assert_eq!(e.apply_switch(s, 1, 3), 1);
}

#[test]
fn off_mode_neither_faults_nor_counts() {
    let mut e = FaultEngine::new(Mode::Off);
    e.register_site(SiteDescriptor::branch(1, "b")).unwrap();
    e.seal();
    e.load_program(&one(1, &[0xFF]));
    let h = e.handle(1).unwrap();
    assert!(!e.apply_branch(h, false));
    assert_eq!(e.hits(1), 0);
}

#[test]
fn counting_mode_counts_without_faulting() {
    let mut e = FaultEngine::new(Mode::Counting);
    e.register_site(SiteDescriptor::branch(1, "b")).unwrap();
    e.seal();
    e.load_program(&one(1, &[0xFF]));
    let h = e.handle(1).unwrap();
    for _ in 0..9 {
        assert!(!e.apply_branch(h, false));
    }
    assert_eq!(e.record_hits().get(&1), Some(&9));
}

#[test]
fn registration_rules() {
    let mut e = FaultEngine::new(Mode::Faulting);
    e.register_site(SiteDescriptor::branch(1, "b")).unwrap();
    assert!(e.register_site(SiteDescriptor::branch(1, "again")).is_err());
    e.seal();
    assert!(e.register_site(SiteDescriptor::branch(2, "late")).is_err());
    assert!(SiteDescriptor::value_load(3, 12, "odd").is_err());
    let unknown = e.load_program(&FaultProgram::from_entries(vec![
        ProgramEntry::new(1, vec![1]),
        ProgramEntry::new(99, vec![1]),
    ]));
    assert_eq!(unknown, vec![99]);
}
