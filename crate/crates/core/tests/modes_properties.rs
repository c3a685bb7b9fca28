use std::collections::BTreeMap;

use proptest::prelude::*;
use smartfd::data::{FlowDensityPoint, ScaleFactors, SpeedLimit};
use smartfd::models::FdModelParams;
use smartfd::modes::{clara, exact_kmedoids, mode_trajectory, two_modes, ClaraConfig};
use smartfd::synth::{generate, generate_segmented, DensityLaw, LimitModes, MixtureComponent, SynthSpec};

fn cloud() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0f64..5.0, 0.0f64..5.0).prop_map(|(x, y)| [x, y]), 4..40)
}

fn d(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clara_result_is_consistent(points in cloud(), k in 1usize..4, half in any::<bool>(), seed in any::<u64>()) {
        let n = points.len();
        let sample_size = if half { (n / 2).max(k) } else { n };
        let config = ClaraConfig { sample_size, n_restarts: 5, ..ClaraConfig::new(k, seed) };
        let r = clara(&points, &config).unwrap();
        prop_assert_eq!(r.medoids.len(), k);
        prop_assert!(r.medoids.windows(2).all(|w| w[0] < w[1]));
        // Each medoid belongs to its own cluster and every point sits with
        // its nearest medoid.
        for (c, &m) in r.medoids.iter().enumerate() {
            prop_assert_eq!(r.assignments[m], c);
        }
        let mut total = 0.0;
        for (i, &c) in r.assignments.iter().enumerate() {
            let own = d(points[i], points[r.medoids[c]]);
            for &m in &r.medoids {
                prop_assert!(own <= d(points[i], points[m]) + 1e-12);
            }
            total += own;
        }
        prop_assert!((total - r.total_cost).abs() <= 1e-9 * total.max(1.0));

        let exact = exact_kmedoids(&points, k).unwrap();
        prop_assert!(r.total_cost >= exact.total_cost - 1e-9 * exact.total_cost.max(1.0));
    }

    #[test]
    fn clara_is_reproducible(points in cloud(), seed in any::<u64>()) {
        let config = ClaraConfig { n_restarts: 4, ..ClaraConfig::new(2, seed) };
        prop_assert_eq!(clara(&points, &config).unwrap(), clara(&points, &config).unwrap());
    }
}

fn bimodal(low: f64, high: f64) -> DensityLaw {
    DensityLaw::Bimodal {
        low: MixtureComponent { density: low, weight: 0.6, jitter: 1.5 },
        high: MixtureComponent { density: high, weight: 0.4, jitter: 3.0 },
    }
}

fn model() -> FdModelParams {
    FdModelParams::daganzo_newell(5000.0, 40.0, 220.0)
}

#[test]
fn low_mode_has_lower_density() {
    for seed in 0..10 {
        let points = generate(&SynthSpec::new(model(), bimodal(20.0, 90.0), 0.03, 300, seed)).unwrap();
        let scale = ScaleFactors::from_points(&points).unwrap();
        let entry = two_modes(&points, &scale, &ClaraConfig::new(2, seed)).unwrap();
        assert!(entry.low.density < entry.high.density);
        assert!((entry.low.density - 20.0).abs() < 2.0, "{:?}", entry.low);
        assert!((entry.high.density - 90.0).abs() < 4.0, "{:?}", entry.high);
    }
}

#[test]
fn segmented_modes_track_the_construction() {
    let table = [
        (SpeedLimit::L40, 20.0, 90.0),
        (SpeedLimit::L50, 17.0, 75.0),
        (SpeedLimit::L60, 15.0, 60.0),
        (SpeedLimit::L70, 12.0, 45.0),
    ];
    let mut spec = SynthSpec::new(model(), bimodal(20.0, 90.0), 0.03, 300, 5);
    spec.limit_modes = table.iter().map(|&(l, low, high)| (l, LimitModes { low, high })).collect();
    let synth = generate_segmented(&spec, "V").unwrap();
    let all: Vec<FlowDensityPoint> = synth.segments.values().flatten().cloned().collect();
    let scale = ScaleFactors::from_points(&all).unwrap();
    let segments: BTreeMap<SpeedLimit, Vec<FlowDensityPoint>> = synth.segments;
    let trajectory = mode_trajectory(&segments, &scale, &ClaraConfig::new(2, 0));
    assert!(trajectory.skipped.is_empty());
    let highs: Vec<f64> = trajectory.entries.values().map(|e| e.high.density).collect();
    assert!(highs.windows(2).all(|w| w[1] < w[0]), "{highs:?}");
    for ((_, low, high), e) in table.iter().zip(trajectory.entries.values()) {
        assert!((e.low.density - low).abs() < 2.0);
        assert!((e.high.density - high).abs() < 4.0);
    }
}
