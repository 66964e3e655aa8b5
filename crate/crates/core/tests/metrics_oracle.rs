mod common;

use common::{metric, metric_queries, naive, random_instance, report, METRIC_REFERENCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn mixed_fixture_matches_reference_script() {
    let r = report(&metric_queries());
    for (name, expected) in METRIC_REFERENCE {
        assert_eq!(metric(&r, name), expected, "{name}");
    }
}

#[test]
fn thousand_random_instances_match_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let queries: Vec<_> = (0..rng.gen_range(1..=4)).map(|_| random_instance(&mut rng)).collect();
        let r = report(&queries);
        assert_eq!(r.mrr, naive::mrr(&queries));
        for m in &r.recall {
            assert_eq!(m.value, naive::mean_recall(&queries, m.k));
        }
        for m in &r.effort {
            assert_eq!(m.value, naive::me(&queries, m.k));
        }
        assert_eq!(r.effort[0].value, 1.0);
        assert!(r.recall.windows(2).all(|w| w[0].value <= w[1].value));
        assert!(r.effort.windows(2).all(|w| w[0].value <= w[1].value));
        assert!((0.0..=1.0).contains(&r.mrr));
    }
}
