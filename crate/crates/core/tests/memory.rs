use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::Arc;
use std::thread;

use chrono::DateTime;
use cia_core::memory::{ledger_row_count, MemoryError, NewStudy, Recall, StudyKind, StudyMemory};
use cia_core::pipeline::{Decision, PipelineConfig};
use cia_core::tools::ToolRegistry;
use cia_grid::{BusId, ConnectionType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const CASES: [&str; 3] = ["ieee14", "ieee30", "ieee118"];
const STATUSES: [Decision; 3] = [Decision::Approve, Decision::Reject, Decision::Borderline];

fn random_study(rng: &mut impl Rng, session: &str) -> NewStudy {
    let case = CASES[rng.random_range(0..CASES.len())];
    let bus = rng.random_range(1..15);
    let status = STATUSES[rng.random_range(0..3)];
    let capacity = rng.random_bool(0.3);
    let mw = (rng.random_range(0.0..300.0f64) * 100.0).round() / 100.0;
    NewStudy {
        timestamp: DateTime::from_timestamp(1_760_000_000 + rng.random_range(0..100_000), 0).unwrap(),
        session_id: session.into(),
        case_name: case.into(),
        bus: BusId(bus),
        p_mw: mw,
        ctype: ConnectionType::ALL[rng.random_range(0..6)],
        status,
        hard_count: rng.random_range(0..4),
        borderline_count: rng.random_range(0..3),
        kind: if capacity { StudyKind::MaxCapacity } else { StudyKind::Cia },
        max_mw: capacity.then_some(mw),
        summary: format!("{mw} MW at bus {bus} on {case}: {status}"),
    }
}

fn digest(bytes: &[u8]) -> u64 {
    let mut h = DefaultHasher::new();
    bytes.hash(&mut h);
    h.finish()
}

#[test]
fn records_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let written = {
        let m = StudyMemory::open(&path, None).unwrap();
        m.append(random_study(&mut rng, "a")).unwrap();
        m.append(random_study(&mut rng, "b")).unwrap();
        m.all()
    };
    let m = StudyMemory::open(&path, None).unwrap();
    assert_eq!(m.all(), written);
    let first = &written[0];
    let hits = m.recall(&Recall::ByBus {
        case: first.case_name.clone(),
        bus: first.bus,
    });
    assert!(hits.contains(first));
    // ids continue after the restart
    assert_eq!(m.append(random_study(&mut rng, "c")).unwrap(), 3);
    assert!(dir.path().join("ledger.txt").exists());
}

fn check_recall(m: &StudyMemory, q: &Recall) {
    let hits = m.recall(q);
    assert!(hits.iter().all(|r| q.matches(r)), "{q:?}");
    assert!(hits.windows(2).all(|w| w[0].id > w[1].id), "newest first");
    let expected = m.all().iter().filter(|r| q.matches(r)).count();
    match q {
        Recall::MaxCapacity { .. } => assert_eq!(hits.len(), expected.min(1)),
        _ => assert_eq!(hits.len(), expected),
    }
}

#[test]
fn thousand_random_operations_never_rewrite_history() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.jsonl");
    let ledger = dir.path().join("ledger.txt");
    let mut m = StudyMemory::open(&path, Some(ledger.clone())).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut appended = 0usize;
    for op in 0..1000 {
        let before = fs::read(&path).unwrap_or_default();
        let before_records = m.all();
        match rng.random_range(0..10) {
            0..=4 => {
                let id = m.append(random_study(&mut rng, "p")).unwrap();
                appended += 1;
                assert_eq!(id as usize, appended);
                assert_eq!(ledger_row_count(&fs::read_to_string(&ledger).unwrap()), m.len(), "op {op}");
            }
            5 => check_recall(
                &m,
                &Recall::ByBus {
                    case: CASES[rng.random_range(0..3)].into(),
                    bus: BusId(rng.random_range(1..15)),
                },
            ),
            6 => check_recall(&m, &Recall::ByCase { case: CASES[rng.random_range(0..3)].into() }),
            7 => check_recall(&m, &Recall::Keyword { keyword: ["REJECT", "approve", "bus 3 ", "ieee30"][rng.random_range(0..4)].into() }),
            8 => check_recall(
                &m,
                &Recall::MaxCapacity {
                    case: CASES[rng.random_range(0..3)].into(),
                    bus: BusId(rng.random_range(1..15)),
                },
            ),
            _ => {
                if rng.random_bool(0.5) {
                    m = StudyMemory::open(&path, Some(ledger.clone())).unwrap();
                } else {
                    let a = m.regenerate_ledger().unwrap();
                    let b = m.regenerate_ledger().unwrap();
                    assert_eq!(a, b);
                    assert_eq!(fs::read_to_string(&ledger).unwrap(), a);
                }
            }
        }
        let after = fs::read(&path).unwrap_or_default();
        assert!(after.len() >= before.len(), "op {op}: file shrank");
        assert_eq!(digest(&after[..before.len()]), digest(&before), "op {op}: prefix changed");
        let now = m.all();
        assert_eq!(&now[..before_records.len()], &before_records[..], "op {op}: record changed");
    }
    assert_eq!(m.len(), appended);
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), appended);
}

#[test]
fn concurrent_sessions_get_unique_ids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.jsonl");
    let m = Arc::new(StudyMemory::open(&path, None).unwrap());
    let handles: Vec<_> = (0..4)
        .map(|t| {
            let m = m.clone();
            thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(t);
                (0..50).map(|_| m.append(random_study(&mut rng, &format!("s{t}"))).unwrap()).collect::<Vec<u64>>()
            })
        })
        .collect();
    let mut ids: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    ids.sort();
    assert_eq!(ids, (1..=200).collect::<Vec<u64>>());
    let reopened = StudyMemory::open(&path, None).unwrap();
    assert_eq!(reopened.len(), 200);
    let file_ids: Vec<u64> = reopened.all().iter().map(|r| r.id).collect();
    assert!(file_ids.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn ledger_rows_follow_id_order() {
    let m = StudyMemory::in_memory();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(ledger_row_count(&m.ledger_text()), 0);
    for _ in 0..3 {
        m.append(random_study(&mut rng, "x")).unwrap();
    }
    let text = m.ledger_text();
    let ids: Vec<&str> = text.lines().skip(2).map(|l| l.split(" | ").next().unwrap()).collect();
    assert_eq!(ids, ["1", "2", "3"]);
    assert_eq!(m.regenerate_ledger().unwrap(), text);
}

#[test]
fn recall_modes() {
    let m = StudyMemory::in_memory();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = random_study(&mut rng, "x");
    s.summary = "40 MW wind at bus 9 on ieee14: reject".into();
    s.case_name = "ieee14".into();
    s.bus = BusId(9);
    s.kind = StudyKind::Cia;
    m.append(s).unwrap();
    assert_eq!(m.recall(&Recall::Keyword { keyword: "REJECT".into() }).len(), 1);
    assert!(m
        .recall(&Recall::ByBus {
            case: "ieee14".into(),
            bus: BusId(13)
        })
        .is_empty());
    assert!(m
        .recall(&Recall::MaxCapacity {
            case: "ieee14".into(),
            bus: BusId(9)
        })
        .is_empty());
}

#[test]
fn capacity_search_is_recalled() {
    let reg = ToolRegistry::new(Arc::new(StudyMemory::in_memory()), PipelineConfig::default());
    let out = reg
        .execute("find_max_capacity", &json!({"case_path": "ieee118", "bus": 14, "connection_type": "load"}), "s")
        .unwrap();
    let found = out.capacity.unwrap().max_approved_mw;
    let rec = reg.memory().recall(&Recall::MaxCapacity {
        case: "ieee118".into(),
        bus: BusId(14),
    });
    assert_eq!(rec.len(), 1);
    assert!((rec[0].max_mw.unwrap() - found).abs() < 1e-9);
    assert!(rec[0].summary.contains(&format!("{found:.2}")));
}

#[test]
fn corrupt_lines_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.jsonl");
    fs::write(&path, "{not json}\n").unwrap();
    match StudyMemory::open(&path, None) {
        Err(MemoryError::Corrupt { line, .. }) => assert_eq!(line, 1),
        other => panic!("expected a corrupt-line error, got {:?}", other.map(|m| m.len())),
    }
}

fn break_storage(path: &Path) {
    fs::remove_file(path).ok();
    fs::create_dir_all(path).unwrap();
}

#[test]
fn storage_failure_becomes_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("memory.jsonl");
    let mem = Arc::new(StudyMemory::open(&path, None).unwrap());
    assert!(mem.check_storage().is_ok());
    let before = fs::read(&path).unwrap_or_default();
    assert!(mem.check_storage().is_ok());
    assert_eq!(fs::read(&path).unwrap_or_default(), before, "the check writes nothing");
    break_storage(&path);
    assert!(mem.check_storage().is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert!(matches!(mem.append(random_study(&mut rng, "x")), Err(MemoryError::Io { .. })));

    let reg = ToolRegistry::new(mem, PipelineConfig::default());
    let args = json!({"case_path": "ieee14", "connection": {"bus": 9, "capacity_mw": 5, "type": "load"}});
    let out = reg.execute("run_cia", &args, "s").unwrap();
    assert!(out.result.ok);
    assert!(out.report.is_some());
    assert!(out.result.payload["persistence_warning"].is_string());
    assert!(matches!(out.memory, Some(Err(_))));
}
