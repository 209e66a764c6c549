use nymkit::ids::NymMode;
use nymkit::metrics::{MetricSample, Phase};
use nymkit::nymcore::{
    Engine, EngineConfig, EngineError, EngineEvent, NymBoxSpec, NymState, StoreAction, StoreTarget, VmRole, Workload,
    CACHE_DIR, TRANSPORT_STATE_PATH,
};
use nymkit::overlay::OverlayError;
use nymkit::snapstore::{LocalDir, MockCloud, StorageBackend};
use nymkit::transports::TransportKind;

fn engine() -> Engine {
    Engine::new(EngineConfig::fast()).unwrap()
}

fn cloud() -> MockCloud {
    let mut c = MockCloud::new("cloud.example").with_account("alice", "pw");
    c.login("alice", "pw").unwrap();
    c
}

#[test]
fn create_runs_and_lists() {
    let mut e = engine();
    let id = e.create_nym(NymMode::Ephemeral, None, None).unwrap();
    let rec = e.nym(id).unwrap();
    assert_eq!(rec.state, NymState::Running);
    assert_eq!(rec.transport_kind, TransportKind::OnionSim);
    assert!(!rec.transport().unwrap().is_seeded());
    assert_eq!(e.list().len(), 1);
    assert_eq!(e.ram_in_use_mb(), 656);
    assert!(e.probe().violations.is_empty());
}

#[test]
fn budget_is_enforced() {
    let mut e = Engine::new(EngineConfig { host_ram_mb: 1500, ..EngineConfig::fast() }).unwrap();
    e.create_nym(NymMode::Ephemeral, None, None).unwrap();
    let b = e.create_nym(NymMode::Ephemeral, None, None).unwrap();
    assert_eq!(
        e.create_nym(NymMode::Ephemeral, None, None).unwrap_err(),
        EngineError::BudgetExceeded { need_mb: 656, free_mb: 1500 - 1312 }
    );
    e.terminate_nym(b).unwrap();
    e.create_nym(NymMode::Ephemeral, None, None).unwrap();
}

#[test]
fn pause_resume_and_bad_transitions() {
    let mut e = engine();
    let id = e.create_nym(NymMode::Ephemeral, None, None).unwrap();
    e.pause_nym(id).unwrap();
    assert!(matches!(e.write_file(id, VmRole::Anon, "/x", b"1"), Err(EngineError::InvalidTransition { .. })));
    assert!(matches!(e.pause_nym(id), Err(EngineError::InvalidTransition { .. })));
    e.resume_nym(id).unwrap();
    e.terminate_nym(id).unwrap();
    e.terminate_nym(id).unwrap();
    assert!(matches!(e.resume_nym(id), Err(EngineError::InvalidTransition { .. })));
    assert_eq!(e.terminate_nym(nymkit::ids::NymId(99)), Err(EngineError::UnknownNym(nymkit::ids::NymId(99))));
}

#[test]
fn ephemeral_store_forbidden_and_preconfigured_store_mismatch() {
    let mut e = engine();
    let mut c = cloud();
    let eph = e.create_nym(NymMode::Ephemeral, None, None).unwrap();
    let t = StoreTarget { object: "a", password: "pw", backend: &mut c };
    assert_eq!(e.store_nym(eph, t).unwrap_err(), EngineError::ModeForbidsStore);
    let pre = e.create_nym(NymMode::Preconfigured, None, None).unwrap();
    let t = StoreTarget { object: "a", password: "pw", backend: &mut c };
    assert!(matches!(e.store_nym(pre, t), Err(EngineError::ModeMismatch { .. })));
    let per = e.create_nym(NymMode::Persistent, None, None).unwrap();
    let t = StoreTarget { object: "a", password: "pw", backend: &mut c };
    assert!(matches!(e.snapshot_nym(per, t), Err(EngineError::ModeMismatch { .. })));
}

#[test]
fn store_load_round_trip_over_cloud() {
    let mut e = engine();
    let mut c = cloud();
    let id = e.create_nym(NymMode::Persistent, None, None).unwrap();
    e.write_file(id, VmRole::Anon, "/home/user/notes", b"hello").unwrap();
    e.write_file(id, VmRole::Comm, "/var/lib/extra", b"comm").unwrap();
    let r = e.store_nym(id, StoreTarget { object: "alice-nym", password: "secret", backend: &mut c }).unwrap();
    assert_eq!(r.version, 1);
    assert_eq!(e.nym(id).unwrap().state, NymState::Running);
    let exit = r.observed_source.unwrap();
    assert_ne!(exit, e.config().gateway, "cloud saw the host address");
    let anon_before = e.nym(id).unwrap().anon_stack().unwrap().writable().digest();
    e.terminate_nym(id).unwrap();

    let l = e.load_nym("alice-nym", "secret", &mut c, None).unwrap();
    let rec = e.nym(l).unwrap();
    assert_eq!(rec.mode, NymMode::Persistent);
    assert_eq!(rec.anon_stack().unwrap().writable().digest(), anon_before);
    assert_eq!(e.read_file(l, VmRole::Anon, "/home/user/notes").unwrap(), b"hello");
    assert_eq!(e.read_file(l, VmRole::Comm, "/var/lib/extra").unwrap(), b"comm");
    assert!(e.nym(l).unwrap().transport().unwrap().is_seeded());
    assert!(c.access_log().iter().all(|a| a.source != e.config().gateway));

    assert!(matches!(
        e.load_nym("alice-nym", "wrong", &mut c, None),
        Err(EngineError::Archive(nymkit::snapstore::ArchiveError::AuthFailure))
    ));
    // the loader never outlives the load
    assert_eq!(e.live_nyms(), vec![l]);
}

#[test]
fn store_over_local_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = LocalDir::open(dir.path()).unwrap();
    let mut e = engine();
    let id = e.create_nym(NymMode::Persistent, Some(TransportKind::Incognito), None).unwrap();
    e.write_file(id, VmRole::Anon, "/f", b"x").unwrap();
    let r = e.store_nym(id, StoreTarget { object: "n", password: "p", backend: &mut b }).unwrap();
    assert_eq!(r.observed_source, None);
    assert!(r.location.starts_with("file://"));
    e.terminate_nym(id).unwrap();
    let l = e.load_nym("n", "p", &mut b, None).unwrap();
    assert_eq!(e.nym(l).unwrap().transport_kind, TransportKind::Incognito);
    assert_eq!(b.versions("n").unwrap(), vec![1]);
}

#[test]
fn failed_upload_leaves_nym_running() {
    let mut e = engine();
    let mut c = MockCloud::new("cloud.example").with_account("u", "p");
    let id = e.create_nym(NymMode::Persistent, None, None).unwrap();
    let err = e.store_nym(id, StoreTarget { object: "x", password: "p", backend: &mut c }).unwrap_err();
    assert_eq!(err, EngineError::Backend(nymkit::snapstore::BackendError::NotAuthenticated));
    assert_eq!(e.nym(id).unwrap().state, NymState::Running);
}

#[test]
fn close_session_policy() {
    let mut e = engine();
    let mut c = cloud();
    let per = e.create_nym(NymMode::Persistent, None, None).unwrap();
    assert_eq!(e.session_end_policy(per).unwrap(), StoreAction::StoreThenTerminate);
    assert_eq!(e.close_session(per, None).unwrap_err(), EngineError::StoreConfirmationRequired(per));
    let r = e.close_session(per, Some(StoreTarget { object: "p", password: "pw", backend: &mut c })).unwrap();
    assert!(r.is_some());
    assert!(e.nym(per).unwrap().is_terminated());
    let eph = e.create_nym(NymMode::Ephemeral, None, None).unwrap();
    assert_eq!(e.session_end_policy(eph).unwrap(), StoreAction::Discard);
    assert_eq!(e.close_session(eph, None).unwrap(), None);
}

#[test]
fn disk_limit() {
    let mut e = engine();
    let spec = NymBoxSpec {
        anonvm: nymkit::nymcore::VmSpec { ram_mb: 16, writable_disk_mb: 1 },
        ..NymBoxSpec::default()
    };
    let id = e.create_nym(NymMode::Ephemeral, Some(TransportKind::Incognito), Some(spec)).unwrap();
    e.write_file(id, VmRole::Anon, "/a", &vec![1u8; 600 << 10]).unwrap();
    e.write_file(id, VmRole::Anon, "/a", &vec![2u8; 900 << 10]).unwrap();
    assert!(matches!(e.write_file(id, VmRole::Anon, "/b", &vec![3u8; 200 << 10]), Err(EngineError::DiskFull { .. })));
}

#[test]
fn workload_grows_cache_and_state() {
    let mut e = engine();
    let id = e.create_nym(NymMode::Persistent, None, None).unwrap();
    let s = e.run_workload(id, &Workload::default()).unwrap();
    assert_eq!(s.pages, 8);
    assert!(s.wire_bytes > s.payload_bytes);
    let rec = e.nym(id).unwrap();
    let cached = rec.anon_stack().unwrap().writable().entries().keys().filter(|p| p.starts_with(CACHE_DIR)).count();
    assert_eq!(cached, 8);
    assert!(rec.comm_stack().unwrap().exists(TRANSPORT_STATE_PATH));
}

#[test]
fn phases_recorded_per_usage() {
    let mut e = engine();
    let mut c = cloud();
    let id = e.create_nym(NymMode::Persistent, None, None).unwrap();
    e.store_nym(id, StoreTarget { object: "o", password: "p", backend: &mut c }).unwrap();
    e.terminate_nym(id).unwrap();
    e.load_nym("o", "p", &mut c, None).unwrap();
    let traces = e.metrics().phase_traces();
    assert_eq!(traces.len(), 2);
    assert_eq!(traces[0].duration(Phase::EphemeralLoader), None);
    assert!(traces[1].duration(Phase::EphemeralLoader).unwrap() > 0);
    assert!(traces[1].duration(Phase::TransportStartup) < traces[0].duration(Phase::TransportStartup));
    assert!(e.metrics().snapshot().iter().any(|s| matches!(s, MetricSample::ArchiveSize { .. })));
}

#[test]
fn events_are_delivered() {
    let mut e = engine();
    let rx = e.subscribe();
    let id = e.create_nym(NymMode::Ephemeral, None, None).unwrap();
    e.terminate_nym(id).unwrap();
    let evs: Vec<EngineEvent> = rx.try_iter().collect();
    assert_eq!(
        evs,
        vec![
            EngineEvent::StateChanged { nym: id, from: NymState::Created, to: NymState::Running },
            EngineEvent::StateChanged { nym: id, from: NymState::Running, to: NymState::Terminated },
        ]
    );
}

#[test]
fn tampered_base_stops_boot_and_workload() {
    let mut e = engine();
    let id = e.create_nym(NymMode::Ephemeral, None, None).unwrap();
    let rx = e.subscribe();
    e.base_image_mut().flip_bit(12345);
    assert!(matches!(e.run_workload(id, &Workload { pages: 64, ..Workload::default() }), Err(EngineError::BaseImageTampered { .. })));
    assert!(e.nym(id).unwrap().is_terminated());
    assert!(rx.try_iter().any(|ev| matches!(ev, EngineEvent::TamperDetected { .. })));
    assert!(matches!(e.create_nym(NymMode::Ephemeral, None, None), Err(EngineError::BaseImageTampered { .. })));
    e.base_image_mut().flip_bit(12345);
    e.create_nym(NymMode::Ephemeral, None, None).unwrap();
}

#[test]
fn pinned_root_mismatch_rejected() {
    let good = engine().base_image().root();
    let cfg = EngineConfig { base_merkle_root: Some(good), ..EngineConfig::fast() };
    Engine::new(cfg).unwrap();
    let bad = EngineConfig { base_merkle_root: Some(nymkit::digest::Digest::of(b"x")), ..EngineConfig::fast() };
    assert!(matches!(Engine::new(bad), Err(EngineError::BaseRootMismatch(_))));
}

#[test]
fn base_files_read_through_and_cow() {
    let mut e = engine();
    let id = e.create_nym(NymMode::Ephemeral, None, None).unwrap();
    let base = e.base_digest();
    let path = e.base_image().layer().entries().keys().next().unwrap().clone();
    let orig = e.read_file(id, VmRole::Anon, &path).unwrap();
    e.write_file(id, VmRole::Anon, &path, b"changed").unwrap();
    assert_eq!(e.read_file(id, VmRole::Anon, &path).unwrap(), b"changed");
    e.remove_file(id, VmRole::Anon, &path).unwrap();
    assert!(matches!(e.read_file(id, VmRole::Anon, &path), Err(EngineError::Overlay(OverlayError::NotFound(_)))));
    assert_eq!(e.base_digest(), base);
    let other = e.create_nym(NymMode::Ephemeral, None, None).unwrap();
    assert_eq!(e.read_file(other, VmRole::Anon, &path).unwrap(), orig);
}

#[test]
fn dns_resolution_through_commvm() {
    let mut e = engine();
    let id = e.create_nym(NymMode::Ephemeral, Some(TransportKind::Incognito), None).unwrap();
    let s = e.connect(id, "news.example", 80).unwrap();
    assert_eq!(s.observed_source, e.config().gateway);
    assert!(e.connect(id, "nowhere.example", 80).is_err());
}
