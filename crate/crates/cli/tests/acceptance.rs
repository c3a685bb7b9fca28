//! Acceptance criteria, each checked against an independent oracle and
//! reported on one line. Exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use smartfd::data::{compute_density, snap_mean_limit, Link, LinkSeries, Observation, SpeedLimit};
use smartfd::fit::{compare_models, fit, FitConfig};
use smartfd::kde::{
    evaluate_grid, find_modes, separation_cells, BandwidthMethod, KdeModel,
    DEFAULT_MIN_RELATIVE_DENSITY,
};
use smartfd::links::{hac_ward, Merge, ParameterVector};
use smartfd::models::{FdModelKind, FdModelParams};
use smartfd::modes::{clara, exact_kmedoids, ClaraConfig};
use smartfd::synth::{generate, DatasetSpec, DensityLaw, SynthSpec};

type Verdict = Result<String, String>;

fn check(pass: bool, detail: String) -> Verdict {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn xy(spec: &SynthSpec) -> Vec<[f64; 2]> {
    generate(spec).unwrap().iter().map(|p| [p.density, p.flow]).collect()
}

fn parameter_recovery() -> Verdict {
    let started = Instant::now();
    // Models without a jam density get a range well past their capacity.
    let truths = [
        (FdModelParams::greenshields(110.0, 130.0), 130.0),
        (FdModelParams::greenberg(35.0, 140.0), 140.0),
        (FdModelParams::northwestern(105.0, 35.0), 150.0),
        (FdModelParams::newell(110.0, 125.0, 2500.0), 125.0),
        (FdModelParams::logistic(100.0, 45.0, 9.0), 150.0),
        (FdModelParams::daganzo_newell(4000.0, 40.0, 120.0), 120.0),
        (FdModelParams::continuous_triangle(900.0, 8.0, 0.3, 130.0), 130.0),
    ];
    let mut worst_rel = 0.0f64;
    let mut worst_rmse = 0.0f64;
    for (truth, upper) in truths {
        let spec = SynthSpec::new(truth.clone(), DensityLaw::Uniform { min: 0.0, max: upper }, 0.0, 500, 3);
        let r = fit(truth.kind(), &xy(&spec), &FitConfig::default()).map_err(|e| format!("{}: {e}", truth.kind()))?;
        for (got, want) in r.best_params.values().iter().zip(truth.values()) {
            worst_rel = worst_rel.max((got - want).abs() / want.abs());
        }
        worst_rmse = worst_rmse.max(r.rmse);
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst_rel < 1e-4 && worst_rmse < 1e-6 && secs < 60.0,
        format!("max relative error {worst_rel:.2e}, max rmse {worst_rmse:.2e}, {secs:.1} s"),
    )
}

fn model_selection() -> Verdict {
    let truth = FdModelParams::daganzo_newell(6000.0, 40.0, 180.0);
    let wins: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let spec = SynthSpec::new(truth.clone(), DensityLaw::Uniform { min: 0.0, max: 180.0 }, 0.05, 500, seed);
            let c = compare_models(&xy(&spec), &FdModelKind::ALL, &FitConfig::default().with_seed(seed));
            c.best().is_some_and(|b| b.kind().is_triangular()) as usize
        })
        .sum();
    check(wins >= 95, format!("triangular form first in {wins}/100"))
}

/// (worst - best) / best over every model fitted to the points.
fn normalized_gap(points: &[[f64; 2]], seed: u64) -> f64 {
    let c = compare_models(points, &FdModelKind::ALL, &FitConfig::default().with_seed(seed));
    let best = c.ranked.first().unwrap().rmse;
    let worst = c.ranked.last().unwrap().rmse;
    (worst - best) / best
}

fn segmented_contrast() -> Verdict {
    let truth = FdModelParams::daganzo_newell(6000.0, 40.0, 180.0);
    let law = DensityLaw::Uniform { min: 0.0, max: 180.0 };
    let smaller: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let noisy = SynthSpec::new(truth.clone(), law, 0.20, 300, seed);
            let clean = SynthSpec::new(truth.clone(), law, 0.02, 300, seed);
            (normalized_gap(&xy(&noisy), seed) < normalized_gap(&xy(&clean), seed)) as usize
        })
        .sum();
    check(smaller >= 90, format!("gap smaller on the noisy segment in {smaller}/100"))
}

fn random_cloud(rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = rng.random_range(10..200);
    let (sx, sy): (f64, f64) = (rng.random_range(0.1..10.0), rng.random_range(0.1..10.0));
    let rho: f64 = rng.random_range(-0.8..0.8);
    let unit = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let (a, b): (f64, f64) = (unit.sample(rng), unit.sample(rng));
            [sx * a, sy * (rho * a + (1.0 - rho * rho).sqrt() * b)]
        })
        .collect()
}

fn kde_normalization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..20 {
        let model = KdeModel::fit(random_cloud(&mut rng), BandwidthMethod::RuleOfThumb).map_err(|e| e.to_string())?;
        let [xr, yr] = model.padded_ranges(8.0);
        let total = evaluate_grid(&model, xr, yr, 256, 256).map_err(|e| e.to_string())?.integral();
        range = (range.0.min(total), range.1.max(total));
    }
    check(
        range.0 >= 0.99 && range.1 <= 1.01,
        format!("integrals in [{:.5}, {:.5}]", range.0, range.1),
    )
}

fn kde_bimodality() -> Verdict {
    let mut passed = 0;
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        // 150 unit-variance points per mean, means 6 sigma apart along a
        // random direction.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let means = [[0.0, 0.0], [6.0 * angle.cos(), 6.0 * angle.sin()]];
        let unit = Normal::new(0.0, 1.0).unwrap();
        let points: Vec<[f64; 2]> = means
            .iter()
            .flat_map(|m| (0..150).map(|_| [m[0] + unit.sample(&mut rng), m[1] + unit.sample(&mut rng)]).collect::<Vec<_>>())
            .collect();
        let model = KdeModel::fit(points, BandwidthMethod::RuleOfThumb).map_err(|e| e.to_string())?;
        let [xr, yr] = model.square_ranges(3.0);
        let grid = evaluate_grid(&model, xr, yr, 256, 256).map_err(|e| e.to_string())?;
        let bandwidth = model.bandwidth();
        let modes = find_modes(&grid, separation_cells(&grid, bandwidth, 2.0), DEFAULT_MIN_RELATIVE_DENSITY);
        let width = bandwidth.width();
        let near = |m: &[f64; 2]| {
            modes.iter().map(|f| (f.x - m[0]).hypot(f.y - m[1])).fold(f64::INFINITY, f64::min) <= 0.5 * width
        };
        if modes.len() == 2 && means.iter().all(near) {
            passed += 1;
        } else {
            failures.push(seed);
        }
    }
    check(passed == 100, format!("{passed}/100 trials, failing seeds {failures:?}"))
}

fn two_blobs(rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = rng.random_range(10..=60);
    let unit = Normal::new(0.0, 0.3).unwrap();
    (0..n)
        .map(|i| {
            let c = if i % 2 == 0 { [0.5, 0.5] } else { [2.0, 1.5] };
            [c[0] + unit.sample(rng), c[1] + unit.sample(rng)]
        })
        .collect()
}

fn clara_vs_exact() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut full_equal, mut half_close) = (0, 0);
    for instance in 0..50u64 {
        let points = two_blobs(&mut rng);
        let n = points.len();
        let exact = exact_kmedoids(&points, 2).map_err(|e| e.to_string())?.total_cost;
        let full = clara(&points, &ClaraConfig { sample_size: n, ..ClaraConfig::new(2, instance) })
            .map_err(|e| e.to_string())?
            .total_cost;
        let half = clara(&points, &ClaraConfig { sample_size: n / 2, ..ClaraConfig::new(2, instance) })
            .map_err(|e| e.to_string())?
            .total_cost;
        full_equal += ((full - exact).abs() <= 1e-9 * exact) as usize;
        half_close += (half <= 1.05 * exact) as usize;
    }
    check(
        full_equal == 50 && half_close >= 48,
        format!("full sample equal in {full_equal}/50, half sample within 5% in {half_close}/50"),
    )
}

/// Agglomerates by recomputing every pairwise Ward cost from centroids.
fn brute_force_ward(points: &[Vec<f64>]) -> Vec<Merge> {
    let n = points.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let centroid = |members: &[usize]| -> Vec<f64> {
        (0..points[0].len())
            .map(|f| members.iter().map(|&m| points[m][f]).sum::<f64>() / members.len() as f64)
            .collect()
    };
    let mut merges = Vec::new();
    for step in 0..n - 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for (la, ma) in &clusters {
            for (lb, mb) in &clusters {
                if la >= lb {
                    continue;
                }
                let sq: f64 = centroid(ma).iter().zip(centroid(mb)).map(|(a, b)| (a - b).powi(2)).sum();
                let (na, nb) = (ma.len() as f64, mb.len() as f64);
                let cost = na * nb / (na + nb) * sq;
                if best.is_none_or(|(ba, bb, bc)| cost < bc || (cost == bc && (*la, *lb) < (ba, bb))) {
                    best = Some((*la, *lb, cost));
                }
            }
        }
        let (a, b, height) = best.unwrap();
        let mut members = Vec::new();
        clusters.retain(|(l, m)| {
            let merged = *l == a || *l == b;
            if merged {
                members.extend_from_slice(m);
            }
            !merged
        });
        merges.push(Merge { a, b, height, size: members.len() });
        clusters.push((n + step, members));
    }
    merges
}

fn vectors(points: &[Vec<f64>]) -> Vec<ParameterVector> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| ParameterVector::new(format!("link{i}"), p.clone()))
        .collect()
}

fn ward_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut identical = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let dim = rng.random_range(1..=4);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let got = hac_ward(&vectors(&points)).map_err(|e| e.to_string())?.merges;
        let want = brute_force_ward(&points);
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(g, w)| {
                g.a == w.a && g.b == w.b && g.size == w.size && (g.height - w.height).abs() <= 1e-12 * w.height.max(1.0)
            });
        identical += same as usize;
    }
    let fixture = vec![vec![0.0], vec![1.0], vec![10.0]];
    let first = hac_ward(&vectors(&fixture)).map_err(|e| e.to_string())?.merges[0].height;
    check(
        identical == 100 && first == 0.5,
        format!("{identical}/100 merge sequences identical, fixture first height {first}"),
    )
}

fn multisets(max_len: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut frontier: Vec<(Vec<u32>, usize)> = vec![(Vec::new(), 0)];
    while let Some((set, from)) = frontier.pop() {
        if !set.is_empty() {
            out.push(set.clone());
        }
        if set.len() < max_len {
            for (i, v) in [40u32, 50, 60, 70].into_iter().enumerate().skip(from) {
                let mut next = set.clone();
                next.push(v);
                frontier.push((next, i));
            }
        }
    }
    out
}

fn snapping() -> Verdict {
    let sets = multisets(6);
    let mut mismatches = 0;
    for set in &sets {
        let mean = set.iter().sum::<u32>() as f64 / set.len() as f64;
        let mut want = 40;
        for c in [50, 60, 70] {
            if (mean - c as f64).abs() < (mean - want as f64).abs() {
                want = c;
            }
        }
        if snap_mean_limit(set).ok().and_then(SpeedLimit::mph) != Some(want) {
            mismatches += 1;
        }
    }
    let kmh: Vec<f64> = SpeedLimit::FEASIBLE.iter().filter_map(|l| l.value_kmh()).collect();
    check(
        mismatches == 0 && kmh == [64.4, 80.5, 96.6, 112.7],
        format!("{} multisets, {mismatches} mismatches, km/h {kmh:?}", sets.len()),
    )
}

fn density_pipeline() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let min_speed = 1.0;
    let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    let observations: Vec<Observation> = (0..100_000)
        .map(|i| {
            // Every tenth speed falls below the threshold.
            let speed = if i % 10 == 0 { rng.random_range(0.0..min_speed) } else { rng.random_range(0.0..200.0) };
            Observation {
                timestamp: t0 + Duration::minutes(i),
                speed_kmh: speed,
                flow_vph: rng.random_range(0.0..10_000.0),
            }
        })
        .collect();
    let (mut retained, mut bad) = (0, 0);
    for o in &observations {
        match compute_density(o, min_speed) {
            Some(p) => {
                retained += 1;
                bad += ((p.density * p.speed - p.flow).abs() > 1e-6 * p.flow.max(1.0) || o.speed_kmh < min_speed) as usize;
            }
            None => bad += (o.speed_kmh >= min_speed) as usize,
        }
    }
    let link = Link::new("L", 1000.0, 3).map_err(|e| e.to_string())?;
    let series = LinkSeries::new(link, observations, Vec::new(), Vec::new()).map_err(|e| e.to_string())?;
    let via_series = series.points(min_speed).len();
    check(
        bad == 0 && via_series == retained,
        format!("{retained} retained of 100000, {bad} violations"),
    )
}

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_smartfd")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/motorway.toml")
}

fn run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(binary()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    run(&["--out-dir", s(&data), "synth", s(&fixture())])?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        run(&["--seed", "11", "--out-dir", s(out), "report", "--data", s(&data)])?;
    }
    let (fa, fb) = (files(&a), files(&b));
    let differing: Vec<&PathBuf> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    check(
        !fa.is_empty() && fa.len() == fb.len() && differing.is_empty(),
        format!("{} files compared, differing {differing:?}", fa.len()),
    )
}

fn mode_trajectory() -> Verdict {
    let spec: DatasetSpec = toml::from_str(&fs::read_to_string(fixture()).unwrap()).map_err(|e| e.to_string())?;
    let link = spec.links.iter().find(|l| l.id == "V1").ok_or("fixture lacks V1")?;
    let table = &link.synth.limit_modes;
    let (first, last) = (table.values().next().unwrap(), table.values().last().unwrap());
    let truth = ((first.low - last.low) / first.low, (first.high - last.high) / first.high);

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    run(&["--out-dir", s(&data), "synth", s(&fixture())])?;
    run(&["--out-dir", s(&out), "--links", "V1", "modes", "--by-limit", "--data", s(&data)])?;
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("modes/V1.json")).unwrap()).map_err(|e| e.to_string())?;
    let high: Vec<f64> = ["40mph", "50mph", "60mph", "70mph"]
        .iter()
        .map(|k| json["modes"][k]["high"]["density"].as_f64().unwrap_or(f64::NAN))
        .collect();
    let monotone = high.windows(2).all(|w| w[1] < w[0]);
    let change = &json["relative_change"];
    let got = (change["low"].as_f64().unwrap_or(f64::NAN), change["high"].as_f64().unwrap_or(f64::NAN));
    let within = |g: f64, t: f64| (g - t).abs() <= 0.1 * t;
    check(
        monotone && within(got.0, truth.0) && within(got.1, truth.1),
        format!(
            "high mode densities {:?}, relative change low {:.3} (true {:.3}), high {:.3} (true {:.3})",
            high.iter().map(|d| (d * 10.0).round() / 10.0).collect::<Vec<_>>(),
            got.0,
            truth.0,
            got.1,
            truth.1
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("parameter recovery", parameter_recovery),
        ("model selection", model_selection),
        ("segmented-fit contrast", segmented_contrast),
        ("KDE normalization", kde_normalization),
        ("KDE bimodality", kde_bimodality),
        ("CLARA vs exact k-medoids", clara_vs_exact),
        ("Ward HAC oracle", ward_oracle),
        ("segmentation snapping", snapping),
        ("density pipeline", density_pipeline),
        ("end-to-end determinism", determinism),
        ("mode trajectory", mode_trajectory),
    ];
    // Drop the default hook's backtrace noise; failures are reported below.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d}) [{secs:.1} s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d}) [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
