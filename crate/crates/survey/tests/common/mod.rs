#![allow(dead_code)]

use streetpulse::scheduler::{PairScheduler, SchedulerConfig};

pub fn scheduler(n: usize) -> PairScheduler {
    let ids: Vec<String> = (0..n).map(|i| format!("img{i:03}")).collect();
    let clusters: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let cfg = SchedulerConfig {
        alpha: 0.3,
        repeat_rate: 0.1,
        repeated_pairs: vec![(ids[0].clone(), ids[1].clone())],
        seed: 42,
        ..Default::default()
    };
    PairScheduler::new(ids, &clusters, cfg).unwrap()
}
