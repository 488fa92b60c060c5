use std::collections::VecDeque;

use adamec::sim::AtomCache;
use proptest::prelude::*;

/// Straight-line model of the release rule: oldest unpinned first, then
/// oldest pinned, never the atom being admitted.
fn model_admit(q: &mut VecDeque<(usize, u64)>, cap: u64, atom: usize, bytes: u64, pinned: &[bool]) -> Option<Vec<usize>> {
    if q.iter().any(|r| r.0 == atom) {
        return Some(Vec::new());
    }
    if bytes > cap {
        return None;
    }
    q.push_back((atom, bytes));
    let mut out = Vec::new();
    for pass in [false, true] {
        loop {
            let used: u64 = q.iter().map(|r| r.1).sum();
            if used <= cap {
                break;
            }
            match q.iter().position(|r| r.0 != atom && pinned[r.0] == pass) {
                Some(i) => out.push(q.remove(i).unwrap().0),
                None => break,
            }
        }
    }
    Some(out)
}

proptest! {
    #[test]
    fn admissions_follow_the_release_rule(
        cap in 1u64..40,
        sizes in proptest::collection::vec(1u64..15, 8),
        pinned in proptest::collection::vec(any::<bool>(), 8),
        arrivals in proptest::collection::vec(0usize..8, 1..40),
    ) {
        let mut cache = AtomCache::new(cap);
        let mut model = VecDeque::new();
        for atom in arrivals {
            let is_pinned = |a: usize| pinned[a];
            let got = cache.admit(atom, sizes[atom], &is_pinned).ok();
            prop_assert_eq!(got, model_admit(&mut model, cap, atom, sizes[atom], &pinned));
            prop_assert!(cache.used_bytes() <= cap);
            prop_assert_eq!(cache.residents(), model.iter().map(|r| r.0).collect::<Vec<_>>());
        }
    }

    #[test]
    fn shrinking_releases_unpinned_first(
        sizes in proptest::collection::vec(1u64..10, 6),
        pinned in proptest::collection::vec(any::<bool>(), 6),
        new_cap in 0u64..60,
    ) {
        let mut cache = AtomCache::new(60);
        for (a, &b) in sizes.iter().enumerate() {
            cache.admit(a, b, &|_| false).unwrap();
        }
        let evicted = cache.resize(new_cap, &|a| pinned[a]);
        prop_assert!(cache.used_bytes() <= new_cap);
        let first_pinned = evicted.iter().position(|&a| pinned[a]).unwrap_or(evicted.len());
        prop_assert!(evicted[first_pinned..].iter().all(|&a| pinned[a]));
        if first_pinned < evicted.len() {
            prop_assert!(cache.residents().iter().all(|&a| pinned[a]));
        }
    }
}
