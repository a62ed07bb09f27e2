//! Randomized checks of the read and update constraints for every physical
//! algorithm, with a plain image as the model.

use proptest::prelude::*;

use snapkit::{build, AlgorithmConfig, AlgorithmKind, Layout, MemorySink, PageImage, PageStore};

const PAGES: usize = 8;
const ITEMS: usize = 4;

type Write = (usize, usize, u32);

fn writes(max: usize) -> impl Strategy<Value = Vec<Write>> {
    prop::collection::vec((0..PAGES, 0..ITEMS, any::<u32>()), 0..max)
}

/// Each period: writes before the trigger, then writes while the snapshot is
/// being traversed.
fn periods() -> impl Strategy<Value = Vec<(Vec<Write>, Vec<Write>)>> {
    prop::collection::vec((writes(24), writes(24)), 1..5)
}

fn layout() -> Layout {
    Layout::new(PAGES, ITEMS * 4, 4).unwrap()
}

fn initial(seed: u32) -> PageImage {
    let items: Vec<u32> = (0..(PAGES * ITEMS) as u32).map(|i| i.wrapping_mul(seed | 1)).collect();
    PageImage::from_items(layout(), &items).unwrap()
}

fn check(kind: AlgorithmKind, seed: u32, plan: &[(Vec<Write>, Vec<Write>)]) -> Result<(), TestCaseError> {
    let init = initial(seed);
    let dir = tempfile::tempdir().unwrap();
    let config = AlgorithmConfig {
        spool_dir: Some(dir.path().to_path_buf()),
    };
    let algo = build(kind, &init, &config).unwrap();
    let mut model = init.clone();
    let mut sink = MemorySink::new(init.clone());
    let apply = |model: &mut PageImage, &(p, i, v): &Write| -> Result<(), TestCaseError> {
        algo.write(p, i, v);
        model.set_item(p, i, v);
        prop_assert_eq!(algo.read(p, i), v, "{} read after write", kind);
        Ok(())
    };
    for (before, during) in plan {
        for w in before {
            apply(&mut model, w)?;
        }
        algo.take_snapshot().unwrap();
        let frozen = model.clone();
        for w in during {
            apply(&mut model, w)?;
        }
        algo.traverse_snapshot(&mut sink).unwrap();
        prop_assert!(
            sink.image().as_bytes() == frozen.as_bytes(),
            "{} snapshot differs from trigger image",
            kind
        );
        prop_assert!(
            algo.client_view().as_bytes() == model.as_bytes(),
            "{} client view",
            kind
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn snapshots_freeze_and_reads_see_latest(seed in any::<u32>(), plan in periods()) {
        for kind in AlgorithmKind::ALL.into_iter().filter(|k| k.is_available()) {
            check(kind, seed, &plan)?;
        }
    }

    /// Checksums of a bulk-copied store agree page by page.
    #[test]
    fn bulk_copy_preserves_checksums(seed in any::<u32>(), ws in writes(64)) {
        let a = PageStore::from_image(&initial(seed));
        for &(p, i, v) in &ws {
            a.write_item(p, i, v);
        }
        let b = PageStore::new(layout());
        b.copy_from(&a);
        prop_assert!(a.same_contents(&b));
        for p in 0..PAGES {
            prop_assert_eq!(a.checksum([p]), b.checksum([p]));
        }
    }
}
