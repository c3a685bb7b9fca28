use std::fs;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use smartfd::data::{
    compute_density, ingest_dir, segment_by_limit, snap_mean_limit, write_dataset, EventCategory, EventRecord, Link,
    LinkSeries, Observation, SignReading, SpeedLimit,
};

fn observation(minute: i64, speed: f64, flow: f64) -> Observation {
    Observation {
        timestamp: Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap() + Duration::minutes(minute),
        speed_kmh: speed,
        flow_vph: flow,
    }
}

/// Nearest feasible limit to the floating-point mean, lower limit on ties.
fn nearest_oracle(limits: &[u32]) -> u32 {
    let mean = limits.iter().map(|&l| l as f64).sum::<f64>() / limits.len() as f64;
    let mut best = 40;
    for candidate in [50, 60, 70] {
        if (mean - candidate as f64).abs() < (mean - best as f64).abs() {
            best = candidate;
        }
    }
    best
}

fn multisets(max_len: usize) -> Vec<Vec<u32>> {
    let values = [40u32, 50, 60, 70];
    let mut out = Vec::new();
    let mut frontier: Vec<(Vec<u32>, usize)> = vec![(Vec::new(), 0)];
    while let Some((set, from)) = frontier.pop() {
        if !set.is_empty() {
            out.push(set.clone());
        }
        if set.len() == max_len {
            continue;
        }
        for (i, &v) in values.iter().enumerate().skip(from) {
            let mut next = set.clone();
            next.push(v);
            frontier.push((next, i));
        }
    }
    out
}

#[test]
fn snapping_is_exhaustively_nearest() {
    let all = multisets(6);
    // C(4 + n - 1, n) summed over n = 1..=6
    assert_eq!(all.len(), 4 + 10 + 20 + 35 + 56 + 84);
    for set in all {
        let got = snap_mean_limit(&set).unwrap();
        assert_eq!(got.mph(), Some(nearest_oracle(&set)), "{set:?}");
    }
}

#[test]
fn kmh_values() {
    let kmh: Vec<f64> = SpeedLimit::FEASIBLE.iter().map(|l| l.value_kmh().unwrap()).collect();
    assert_eq!(kmh, vec![64.4, 80.5, 96.6, 112.7]);
    assert_eq!(SpeedLimit::National.value_kmh(), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn density_consistency(speed in 0.0f64..200.0, flow in 0.0f64..10000.0, min_speed in 0.1f64..20.0) {
        let obs = observation(0, speed, flow);
        match compute_density(&obs, min_speed) {
            Some(p) => {
                prop_assert!(speed >= min_speed);
                prop_assert!((p.density * p.speed - p.flow).abs() <= 1e-6 * p.flow.max(1.0));
            }
            None => prop_assert!(speed < min_speed),
        }
    }

    #[test]
    fn segmentation_partitions(
        speeds in prop::collection::vec(0.0f64..130.0, 1..120),
        batches in prop::collection::vec((0i64..130, prop::collection::vec(prop::sample::select(vec![40u32, 50, 60, 70]), 1..4)), 0..8),
    ) {
        let link = Link::new("L", 500.0, 3).unwrap();
        let observations: Vec<Observation> =
            speeds.iter().enumerate().map(|(i, &s)| observation(i as i64, s, 1200.0)).collect();
        let mut signs = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (minute, limits) in &batches {
            if !seen.insert(*minute) {
                continue;
            }
            for (k, &limit) in limits.iter().enumerate() {
                signs.push(SignReading {
                    link_id: "L".into(),
                    timestamp: observation(*minute, 0.0, 0.0).timestamp,
                    sign_id: format!("s{k}"),
                    limit_mph: limit,
                });
            }
        }
        let series = LinkSeries::new(link, observations, vec![], signs).unwrap();
        let segments = segment_by_limit(&series, 1.0);
        let total: usize = segments.values().map(Vec::len).sum();
        prop_assert_eq!(total, series.points(1.0).len());
        let mut stamps: Vec<_> = segments.values().flatten().map(|p| p.timestamp).collect();
        stamps.sort();
        stamps.dedup();
        prop_assert_eq!(stamps.len(), total);
        prop_assert!(segments.values().all(|v| !v.is_empty()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn write_ingest_write_is_bit_identical(
        rows in prop::collection::vec((0.0f64..150.0, 0.0f64..8000.0), 1..40),
        events in prop::collection::vec((0usize..5, 0i64..60, 0i64..30), 0..5),
        signs in prop::collection::vec((0i64..60, prop::sample::select(vec![40u32, 50, 60, 70])), 0..5),
    ) {
        let link = Link::new("M1/2", 1234.5, 4).unwrap();
        let observations = rows.iter().enumerate().map(|(i, &(s, f))| observation(i as i64, s, f)).collect();
        let events = events
            .iter()
            .map(|&(c, start, len)| EventRecord {
                link_id: link.id.clone(),
                category: EventCategory::ALL[c],
                start: observation(start, 0.0, 0.0).timestamp,
                end: observation(start + len, 0.0, 0.0).timestamp,
            })
            .collect();
        let signs = signs
            .iter()
            .enumerate()
            .map(|(k, &(minute, limit))| SignReading {
                link_id: link.id.clone(),
                timestamp: observation(minute, 0.0, 0.0).timestamp,
                sign_id: format!("sign{k}"),
                limit_mph: limit,
            })
            .collect();
        let series = LinkSeries::new(link.clone(), observations, events, signs).unwrap();

        let root = tempdir();
        let (first, second) = (root.join("a"), root.join("b"));
        write_dataset(&first, &[link], &[series.clone()]).unwrap();
        let ingested = ingest_dir(&first).unwrap();
        prop_assert_eq!(&ingested.series[0], &series);
        write_dataset(&second, &ingested.links, &ingested.series).unwrap();
        for name in ["links.csv", "timeseries.csv", "events.csv", "signs.csv"] {
            prop_assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap());
        }
        fs::remove_dir_all(&root).unwrap();
    }
}

fn tempdir() -> std::path::PathBuf {
    use std::sync::atomic::{AtomicUsize, Ordering};
    static NEXT: AtomicUsize = AtomicUsize::new(0);
    let dir = std::env::temp_dir().join(format!(
        "smartfd-roundtrip-{}-{}",
        std::process::id(),
        NEXT.fetch_add(1, Ordering::Relaxed)
    ));
    fs::create_dir_all(&dir).unwrap();
    dir
}
