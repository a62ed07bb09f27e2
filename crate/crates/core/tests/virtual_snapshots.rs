//! Multi-threaded virtual snapshots checked against a sequential replay of the
//! commit log.

use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snapkit::vsnap::{
    run_virtual, CommitRecord, ConsistencyPoint, Executor, Transaction, TriggerPolicy, TxnSource, VirtualConfig,
};
use snapkit::{build_virtual, Layout, MemorySink, PageImage, VirtualEngine, VirtualKind};

fn transactions(count: usize, pages: usize, seed: u64) -> Vec<Transaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut value = 0u32;
    (0..count as u64)
        .map(|id| {
            let n = rng.random_range(1..=4);
            let writes: Vec<(usize, u32)> = (0..n)
                .map(|_| {
                    value += 1;
                    (rng.random_range(0..pages), value)
                })
                .collect();
            Transaction::writes(id, &writes)
        })
        .collect()
}

/// Commit-ordered replay of the records selected by `keep`.
fn replay(initial: &PageImage, records: &[CommitRecord], keep: impl Fn(&CommitRecord) -> bool) -> PageImage {
    let mut sorted: Vec<&CommitRecord> = records.iter().filter(|r| keep(r)).collect();
    sorted.sort_by_key(|r| r.seq);
    let mut image = initial.clone();
    let layout = *image.layout();
    for r in sorted {
        for &(page, value) in &r.writes {
            image.set_item(page, layout.item_slot(value), value);
        }
    }
    image
}

fn cut(point: ConsistencyPoint) -> impl Fn(&CommitRecord) -> bool {
    move |r| match point {
        ConsistencyPoint::CommitsBefore(seq) => r.seq < seq,
        ConsistencyPoint::EpochsBelow(epoch) => r.epoch < epoch,
    }
}

#[test]
fn snapshots_equal_truncated_replay() {
    let init = PageImage::zeroed(Layout::with_pages(100).unwrap());
    let txns = transactions(2000, 100, 17);
    for kind in VirtualKind::ALL {
        let engine: Arc<dyn VirtualEngine> = build_virtual(kind, &init).into();
        let executor = Executor::new(engine.clone());
        let config = VirtualConfig {
            threads: 4,
            checkpoints: Some(3),
            trigger: TriggerPolicy::AfterCommits(400),
            max_duration: Duration::from_secs(60),
        };
        let mut checked = 0;
        let (run, _) = run_virtual(
            &executor,
            TxnSource::Fixed(txns.clone()),
            &config,
            MemorySink::new(init.clone()),
            |snap, sink, log| {
                let records = log.expect("commit log kept").ordered();
                let want = replay(&init, &records, cut(snap.point));
                assert!(
                    sink.image().as_bytes() == want.as_bytes(),
                    "{kind}: snapshot {}",
                    snap.checkpoint_id
                );
                checked += 1;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(checked, 3, "{kind}");
        assert_eq!(run.commits + run.aborts, 2000, "{kind}");
        assert_eq!(run.aborts, 0, "{kind}");

        let records = executor.log().unwrap().ordered();
        let seqs: Vec<u64> = records.iter().map(|r| r.seq).collect();
        assert!(
            seqs.windows(2).all(|w| w[0] < w[1]),
            "{kind}: duplicate commit sequence"
        );
        let full = replay(&init, &records, |_| true);
        assert!(
            engine.current_image().as_bytes() == full.as_bytes(),
            "{kind}: final state"
        );

        let c = run.counters;
        match kind {
            VirtualKind::Calc => assert!(c.snapshot_copies > 0, "calc copied nothing"),
            _ => assert_eq!(c.snapshot_copies, 0, "{kind}"),
        }
    }
}
