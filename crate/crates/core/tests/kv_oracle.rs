//! Key-value dumps compared with an ordinary map replaying the same operation
//! log up to each trigger.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snapkit::kv::{read_dump, DumpTarget, KvConfig, KvMode, KvStore};

enum Step {
    Put(String, Vec<u8>),
    Trigger,
    Dump,
}

fn plan(seed: u64) -> Vec<Step> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::new();
    let mut triggered = false;
    for i in 0..3000u32 {
        let key = format!("k{}", rng.random_range(0..200));
        let len = rng.random_range(0..24);
        steps.push(Step::Put(key, i.to_le_bytes().repeat(len / 4 + 1)[..len].to_vec()));
        if i % 250 == 249 {
            steps.push(if triggered { Step::Dump } else { Step::Trigger });
            triggered = !triggered;
        }
    }
    steps
}

/// Dump order is first-insertion order; the model sorts both sides.
fn sorted(items: Vec<(String, Vec<u8>)>) -> Vec<(String, Vec<u8>)> {
    let mut items = items;
    items.sort();
    items
}

#[test]
fn dumps_match_map_at_trigger() {
    for mode in KvMode::ALL {
        let mode = mode.resolve();
        let dir = tempfile::tempdir().unwrap();
        let mut kv = KvStore::new(
            mode,
            KvConfig {
                dump: DumpTarget::Dir(dir.path().to_path_buf()),
                ..KvConfig::default()
            },
        )
        .unwrap();
        let snap = kv.snapshotter();
        let mut model = BTreeMap::<String, Vec<u8>>::new();
        let mut frozen = None;
        let mut dumps = 0;
        for step in plan(mode as u64 + 1) {
            match step {
                Step::Put(k, v) => {
                    kv.put(&k, &v).unwrap();
                    model.insert(k, v);
                }
                Step::Trigger => {
                    kv.trigger().unwrap().unwrap();
                    frozen = Some(model.clone());
                }
                Step::Dump => {
                    let dump = snap.dump().unwrap();
                    let want: Vec<_> = frozen.take().unwrap().into_iter().collect();
                    assert_eq!(sorted(read_dump(dump.path.as_ref().unwrap()).unwrap()), want, "{mode}");
                    dumps += 1;
                }
            }
        }
        assert_eq!(dumps, 6, "{mode}");
        for (k, v) in &model {
            assert_eq!(&**kv.get(k).unwrap(), v.as_slice(), "{mode}");
        }
        let live = kv.ledger().live_bytes;
        let dataset: u64 = model.values().map(|v| v.len() as u64).sum();
        assert!(live >= dataset, "{mode}: {live} live bytes under {dataset}");
    }
}
