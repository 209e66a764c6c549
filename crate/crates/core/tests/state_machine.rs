//! Random engine call sequences checked against a small reference model
//! of nym lifecycles and the host RAM budget.

use std::collections::BTreeMap;

use nymkit::ids::{NymId, NymMode};
use nymkit::nymcore::{Engine, EngineConfig, EngineError, NymState, StoreTarget, VmRole};
use nymkit::snapstore::MockCloud;
use nymkit::transports::TransportKind;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NYM_MB: u64 = 656;
const BUDGET_MB: u64 = 6 * NYM_MB + 100;

#[derive(Debug, Clone, Copy)]
enum Op {
    Create(NymMode),
    Pause,
    Resume,
    Terminate,
    Write,
    Store,
    Close,
}

struct Model {
    nyms: BTreeMap<NymId, (NymMode, NymState)>,
    next: u32,
}

impl Model {
    fn live_mb(&self) -> u64 {
        self.nyms.values().filter(|(_, s)| *s != NymState::Terminated).count() as u64 * NYM_MB
    }

    /// Expected outcome of `op` on `id`: `Ok(new state)` or the error variant name.
    fn step(&mut self, op: Op, id: NymId) -> Result<(), &'static str> {
        use NymState::*;
        if let Op::Create(mode) = op {
            if self.live_mb() + NYM_MB > BUDGET_MB {
                return Err("BudgetExceeded");
            }
            self.nyms.insert(NymId(self.next), (mode, Running));
            self.next += 1;
            return Ok(());
        }
        let Some((mode, state)) = self.nyms.get_mut(&id) else { return Err("UnknownNym") };
        let next = match (op, *state) {
            (Op::Pause, Running) => Paused,
            (Op::Resume, Paused) => Running,
            (Op::Terminate, Terminated) => Terminated,
            (Op::Terminate, Running | Paused) => Terminated,
            (Op::Write, Running) => Running,
            (Op::Store, _) if *mode == NymMode::Ephemeral => return Err("ModeForbidsStore"),
            (Op::Store, _) if *mode == NymMode::Preconfigured => return Err("ModeMismatch"),
            (Op::Store, Running | Paused) => Running,
            (Op::Close, _) if *mode == NymMode::Persistent => return Err("StoreConfirmationRequired"),
            (Op::Close, Terminated) => Terminated,
            (Op::Close, Running | Paused) => Terminated,
            _ => return Err("InvalidTransition"),
        };
        *state = next;
        Ok(())
    }
}

fn variant(e: &EngineError) -> &'static str {
    match e {
        EngineError::BudgetExceeded { .. } => "BudgetExceeded",
        EngineError::UnknownNym(_) => "UnknownNym",
        EngineError::InvalidTransition { .. } => "InvalidTransition",
        EngineError::ModeForbidsStore => "ModeForbidsStore",
        EngineError::ModeMismatch { .. } => "ModeMismatch",
        EngineError::StoreConfirmationRequired(_) => "StoreConfirmationRequired",
        _ => "Other",
    }
}

#[test]
fn engine_matches_lifecycle_model() {
    let mut eng = Engine::new(EngineConfig { host_ram_mb: BUDGET_MB, ..EngineConfig::fast() }).unwrap();
    let mut cloud = MockCloud::new("cloud.example").with_account("a", "b");
    cloud.login("a", "b").unwrap();
    let mut model = Model { nyms: BTreeMap::new(), next: 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let modes = [NymMode::Ephemeral, NymMode::Persistent, NymMode::Preconfigured];
    let mut stores = 0;

    for step in 0..100_000u32 {
        let op = match rng.gen_range(0..100) {
            0..=14 => Op::Create(modes[rng.gen_range(0..3)]),
            15..=34 => Op::Pause,
            35..=54 => Op::Resume,
            55..=66 => Op::Terminate,
            67..=88 => Op::Write,
            89..=90 => Op::Store,
            _ => Op::Close,
        };
        let live_ids: Vec<NymId> = model.nyms.iter().filter(|(_, (_, s))| s.is_live()).map(|(k, _)| *k).collect();
        let id = match live_ids.choose(&mut rng) {
            Some(l) if rng.gen_bool(0.8) => *l,
            _ => NymId(rng.gen_range(0..model.next + 2)),
        };
        let got: Result<(), EngineError> = match op {
            Op::Create(mode) => eng.create_nym(mode, Some(TransportKind::Incognito), None).map(|_| ()),
            Op::Pause => eng.pause_nym(id),
            Op::Resume => eng.resume_nym(id),
            Op::Terminate => eng.terminate_nym(id),
            Op::Write => eng.write_file(id, VmRole::Anon, "/home/user/f", &step.to_be_bytes()),
            Op::Store => {
                let r = eng.store_nym(id, StoreTarget { object: "fuzz", password: "pw", backend: &mut cloud }).map(|_| ());
                stores += r.is_ok() as u32;
                r
            }
            Op::Close => eng.close_session(id, None).map(|_| ()),
        };
        let want = model.step(op, id);
        assert_eq!(got.as_ref().map_err(variant).copied(), want, "step {step}: {op:?} on {id}: {got:?}");

        assert_eq!(eng.nym(id).map(|r| r.state), model.nyms.get(&id).map(|(_, s)| *s), "step {step}: state of {id}");
        assert_eq!(eng.ram_in_use_mb(), model.live_mb(), "step {step}: RAM accounting");
        let live: Vec<NymId> = model.nyms.iter().filter(|(_, (_, s))| s.is_live()).map(|(k, _)| *k).collect();
        assert_eq!(eng.live_nyms(), live);
        for l in &live {
            assert_eq!(eng.nym(*l).map(|r| r.state), model.nyms.get(l).map(|(_, s)| *s), "step {step}: state of {l}");
        }
        assert_eq!(eng.topology().nyms().into_iter().collect::<Vec<_>>(), live, "step {step}: topology nodes");
        if step % 5000 == 0 {
            assert!(eng.probe().violations.is_empty());
        }
    }
    assert!(stores > 50, "only {stores} stores succeeded");
}
