use proptest::prelude::*;
use smartfd::models::{FdModelKind, FdModelParams};

fn valid_params() -> impl Strategy<Value = FdModelParams> {
    let v = 40.0f64..140.0;
    let jam = 100.0f64..200.0;
    prop_oneof![
        (v.clone(), jam.clone()).prop_map(|(v, m)| FdModelParams::greenshields(v, m)),
        (10.0f64..60.0, jam.clone()).prop_map(|(v, m)| FdModelParams::greenberg(v, m)),
        (v.clone(), 15.0f64..60.0).prop_map(|(v, c)| FdModelParams::northwestern(v, c)),
        (v.clone(), jam.clone(), 500.0f64..5000.0).prop_map(|(v, m, c1)| FdModelParams::newell(v, m, c1)),
        (v.clone(), 15.0f64..60.0, 2.0f64..20.0).prop_map(|(v, c, s)| FdModelParams::logistic(v, c, s)),
        (1000.0f64..8000.0, 15.0f64..60.0, jam.clone())
            .prop_map(|(q, c, m)| FdModelParams::daganzo_newell(q, c, m)),
        (100.0f64..2000.0, 0.5f64..50.0, 0.05f64..0.95, jam)
            .prop_map(|(a, l, p, m)| FdModelParams::continuous_triangle(a, l, p, m)),
    ]
}

/// Densities where the model is defined: up to jam density, or a generous
/// range for the two models without one.
fn domain(p: &FdModelParams) -> f64 {
    p.rho_max().unwrap_or(200.0)
}

fn argmax(p: &FdModelParams, upper: f64) -> f64 {
    let n = 10_000;
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..=n {
        let rho = upper * i as f64 / n as f64;
        let q = p.flux(rho).unwrap();
        if q > best.1 {
            best = (rho, q);
        }
    }
    best.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn zero_at_zero_and_non_negative(p in valid_params(), t in 0.0f64..=1.0) {
        // The smooth triangle only vanishes at zero up to rounding of its square roots.
        let at_zero = p.flux(0.0).unwrap();
        if p.kind() == FdModelKind::ContinuousTriangle {
            prop_assert!(at_zero.abs() <= 1e-12 * p.values()[0] * 10.0);
        } else {
            prop_assert_eq!(at_zero, 0.0);
        }
        let q = p.flux(t * domain(&p)).unwrap();
        if p.kind() == FdModelKind::ContinuousTriangle {
            prop_assert!(q >= -1e-9 * p.values()[0]);
        } else {
            prop_assert!(q >= 0.0);
        }
    }

    #[test]
    fn jam_density_is_exact_zero(m in 100.0f64..200.0, v in 40.0f64..140.0, q in 1000.0f64..8000.0, c in 15.0f64..60.0) {
        prop_assert_eq!(FdModelParams::greenshields(v, m).flux(m).unwrap(), 0.0);
        prop_assert_eq!(FdModelParams::daganzo_newell(q, c, m).flux(m).unwrap(), 0.0);
    }

    #[test]
    fn daganzo_newell_continuous_at_crit(q in 1000.0f64..8000.0, c in 15.0f64..60.0, m in 100.0f64..200.0) {
        let p = FdModelParams::daganzo_newell(q, c, m);
        let eps = c * 1e-13;
        let left = p.flux(c - eps).unwrap();
        let right = p.flux(c + eps).unwrap();
        prop_assert!((left - q).abs() <= 1e-12 * q * 10.0);
        prop_assert!((right - q).abs() <= 1e-12 * q * 10.0);
        prop_assert_eq!(p.flux(c).unwrap(), q);
    }

    #[test]
    fn argmax_locations(q in 1000.0f64..8000.0, c in 15.0f64..60.0, m in 100.0f64..200.0, v in 40.0f64..140.0) {
        let step = m / 10_000.0;
        prop_assert!((argmax(&FdModelParams::daganzo_newell(q, c, m), m) - c).abs() <= step);
        prop_assert!((argmax(&FdModelParams::greenshields(v, m), m) - m / 2.0).abs() <= step);
        let nw_upper = 4.0 * c;
        prop_assert!((argmax(&FdModelParams::northwestern(v, c), nw_upper) - c).abs() <= nw_upper / 10_000.0);
    }

    #[test]
    fn continuous_triangle_is_concave(a in 100.0f64..2000.0, l in 0.5f64..50.0, pp in 0.05f64..0.95, m in 100.0f64..200.0) {
        let p = FdModelParams::continuous_triangle(a, l, pp, m);
        let h = m / 1000.0;
        for i in 1..1000 {
            let rho = i as f64 * h;
            let second = (p.flux(rho + h).unwrap() - 2.0 * p.flux(rho).unwrap() + p.flux((rho - h).max(0.0)).unwrap()) / (h * h);
            prop_assert!(second <= 1e-8, "second difference {second} at {rho}");
        }
    }
}
