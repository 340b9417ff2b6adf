mod oracles;

use std::collections::BTreeSet;

use oracles::{brute_duplicates, brute_one_sided, qa_votes, vote};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use streetpulse::qa::{agreement, filter_duplicates, filter_one_sided, usable_games, QaParams};
use streetpulse::votes::{Choice, Vote};

fn ids(votes: &[Vote]) -> BTreeSet<u64> {
    votes.iter().map(|v| v.vote_id).collect()
}

fn check_filters(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let votes = qa_votes(&mut rng, 24, 12);
    let p = QaParams::default();

    let deduped = filter_duplicates(&votes, p.duplicate_window_s);
    let expected: BTreeSet<u64> = ids(&votes).difference(&brute_duplicates(&votes, 60.0)).copied().collect();
    assert_eq!(ids(&deduped), expected, "seed {seed}: duplicate filter");

    let (kept, removed) = filter_one_sided(&deduped, p.one_sided_threshold, p.one_sided_min_games);
    assert_eq!(removed, brute_one_sided(&deduped, 0.9, 10), "seed {seed}: one-sided sessions");
    assert!(kept.iter().all(|v| !removed.contains(&v.session_id)));
    assert_eq!(kept.len() + deduped.iter().filter(|v| removed.contains(&v.session_id)).count(), deduped.len());

    // both filters are idempotent
    assert_eq!(filter_duplicates(&deduped, 60.0), deduped);
    let (again, none) = filter_one_sided(&kept, 0.9, 10);
    assert_eq!(again, kept);
    assert!(none.is_empty(), "seed {seed}: second pass removed {none:?}");

    let usable = usable_games(&votes, &p).unwrap();
    assert!(usable.provenance.balances());
    assert_eq!(usable.votes, kept);
}

#[test]
fn filters_match_brute_force_recounts() {
    for seed in 0..50 {
        check_filters(seed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn filters_match_brute_force_on_arbitrary_seeds(seed in any::<u64>()) {
        check_filters(seed);
    }
}

#[test]
fn one_sided_boundaries_are_strict_above_ninety_percent() {
    let session = |name: &str, left: usize, right: usize| -> Vec<Vote> {
        (0..left + right)
            .map(|i| {
                let c = if i < left { Choice::Left } else { Choice::Right };
                vote(i as u64, name, &format!("a{i}"), &format!("b{i}"), c, i as f64 * 100.0)
            })
            .collect()
    };
    let mut votes = session("exactly90", 9, 1);
    votes.extend(session("above90", 19, 1));
    votes.extend(session("nine_games", 9, 0));
    votes.extend(session("right_bias", 0, 10));
    let (_, removed) = filter_one_sided(&votes, 0.9, 10);
    let want: BTreeSet<String> = ["above90", "right_bias"].map(String::from).into();
    assert_eq!(removed, want);
}

#[test]
fn duplicate_window_is_exclusive() {
    let votes = vec![
        vote(1, "s", "a", "b", Choice::Left, 0.0),
        vote(2, "s", "b", "a", Choice::Right, 59.999_999),
        vote(3, "s", "a", "b", Choice::Left, 200.0),
        vote(4, "s", "a", "b", Choice::Left, 260.0),
        vote(5, "t", "a", "b", Choice::Left, 200.5),
    ];
    assert_eq!(ids(&filter_duplicates(&votes, 60.0)), [1, 3, 4, 5].into());
}

fn repeated(pair: (&str, &str), first: usize, second: usize, offset: u64) -> Vec<Vote> {
    (0..first + second)
        .map(|i| {
            let c = if i < first { Choice::Left } else { Choice::Right };
            vote(offset + i as u64, &format!("r{i}"), pair.0, pair.1, c, i as f64)
        })
        .collect()
}

#[test]
fn agreement_is_the_majority_share() {
    // 8 of 11 choose a; 2 of 12 choose c, so d holds 10 of 12
    let mut votes = repeated(("a", "b"), 8, 3, 0);
    votes.extend(repeated(("c", "d"), 2, 10, 100));
    let r = agreement(&votes, 10);
    assert_eq!(r.pairs.len(), 2);
    assert_eq!(r.pairs[0].majority_image, "a");
    assert_eq!(r.pairs[0].agreement, 8.0 / 11.0);
    assert_eq!(r.pairs[1].majority_image, "d");
    assert_eq!(r.pairs[1].agreement, 10.0 / 12.0);
    assert_eq!(r.mean, Some((8.0 / 11.0 + 10.0 / 12.0) / 2.0));
}

#[test]
fn eight_to_two_is_eighty_percent_and_needs_more_than_the_gate() {
    let votes = repeated(("x", "y"), 8, 2, 0);
    // exactly 10 games does not pass a strict > 10 gate
    assert!(agreement(&votes, 10).pairs.is_empty());
    let r = agreement(&votes, 9);
    assert_eq!(r.pairs[0].agreement, 0.8);
    // 2 of 10 for the other image still reads as 80% agreement
    let flipped = repeated(("x", "y"), 2, 8, 0);
    assert_eq!(agreement(&flipped, 9).pairs[0].agreement, 0.8);
}
