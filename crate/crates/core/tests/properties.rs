use proptest::prelude::*;

use onesided::catalog::{self, CatalogModel, ParamValue, Params};
use onesided::expr::parse;
use onesided::invariance::{residual_profile, residual_with, GridSpec, MeasureSpec, ResidualOptions, Verdict};
use onesided::montecarlo::{simulate_paths, SimConfig};
use onesided::numeric::exp_remainder;
use onesided::transforms::BijectionSpec;

fn build(name: &str, kv: &[(&str, f64)]) -> CatalogModel {
    let p: Params = kv.iter().map(|(k, v)| (k.to_string(), ParamValue::Number(*v))).collect();
    catalog::build(name, &p, None).unwrap()
}

fn grid() -> GridSpec {
    GridSpec {
        xi_min: 1e-2,
        xi_max: 1e2,
        n_points: 12,
    }
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn symbol_vanishes_at_zero(x in 0.0f64..50.0, a in 0.1f64..5.0, s in 0.1f64..3.0) {
        for m in [
            build("cir", &[("a", a), ("b", 1.0), ("sigma", s)]),
            build("verhulst", &[("a", a), ("sigma", s)]),
            build("cbi", &[("a_g", -a), ("sigma_g2", s), ("nu_f_rate", 1.0), ("nu_g_rate", 0.5)]),
            build("absorbed_bm", &[]),
            build("subordinator", &[("phi", s)]),
            build("gou", &[("sigma_l2", s)]),
        ] {
            prop_assert_eq!(m.symbol.eval1(x, 0.0).unwrap(), 0.0, "{}", m.name);
        }
    }

    #[test]
    fn cir_gamma_law_is_invariant(a in 0.2f64..5.0, b in 0.2f64..5.0, s in 0.3f64..3.0) {
        let m = build("cir", &[("a", a), ("b", b), ("sigma", s)]);
        let mu = MeasureSpec::gamma(2.0 * a * b / (s * s), 2.0 * a / (s * s)).unwrap();
        let r = residual_profile(&m.symbol, &mu, &grid(), 1e-6).unwrap();
        prop_assert!(r.max_r <= 1e-8, "max R = {}", r.max_r);
    }

    #[test]
    fn cbi_gamma_law_is_invariant(a_f in 0.1f64..4.0, a_g in 0.1f64..4.0, s2 in 0.1f64..2.0) {
        let m = build("cbi", &[("a_f", a_f), ("a_g", -a_g), ("sigma_g2", s2)]);
        let mu = MeasureSpec::gamma(a_f / s2, a_g / s2).unwrap();
        let r = residual_profile(&m.symbol, &mu, &grid(), 1e-6).unwrap();
        prop_assert_eq!(r.verdict, Verdict::Invariant);
    }

    #[test]
    fn normalized_residual_is_at_most_one(k in 0.2f64..8.0, th in 0.2f64..8.0, xi in 1e-3f64..1e3) {
        let m = build("cir", &[]);
        let v = residual_with(&m.symbol, &MeasureSpec::gamma(k, th).unwrap(), &[xi], &ResidualOptions::default()).unwrap();
        prop_assert!(v.integrable);
        prop_assert!(v.normalized() <= 1.0 + 1e-12, "R = {}", v.normalized());
    }

    #[test]
    fn residual_is_linear_in_the_measure(w in 0.01f64..0.99, k1 in 0.5f64..6.0, k2 in 0.5f64..6.0, xi in 1e-2f64..1e2) {
        let m = build("verhulst", &[]);
        let (m1, m2) = (MeasureSpec::gamma(k1, 2.0).unwrap(), MeasureSpec::dirac(vec![k2]).unwrap());
        let mix = MeasureSpec::mixture(vec![(w, m1.clone()), (1.0 - w, m2.clone())]).unwrap();
        let opts = ResidualOptions::default();
        let i = |mu: &MeasureSpec| residual_with(&m.symbol, mu, &[xi], &opts).unwrap();
        let (a, b, c) = (i(&m1), i(&m2), i(&mix));
        let scale = (w * a.abs_integral + (1.0 - w) * b.abs_integral).max(1e-300);
        prop_assert!((c.value - w * a.value - (1.0 - w) * b.value).abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn precedence_matches_oracle(a in 1u32..9, b in 1u32..9, c in 1u32..4, ops in proptest::sample::select(vec!["+", "-", "*", "/", "^"]), ops2 in proptest::sample::select(vec!["+", "-", "*", "/", "^"])) {
        let (a, b, c) = (a as f64, b as f64, c as f64);
        let src = format!("{a} {ops} {b} {ops2} {c}");
        let rank = |o: &str| match o { "+" | "-" => 1, "*" | "/" => 2, _ => 3 };
        let apply = |x: f64, o: &str, y: f64| match o { "+" => x + y, "-" => x - y, "*" => x * y, "/" => x / y, _ => x.powf(y) };
        // left-associative except for ^
        let want = if rank(ops2) > rank(ops) || (ops == "^" && ops2 == "^") {
            apply(a, ops, apply(b, ops2, c))
        } else {
            apply(apply(a, ops, b), ops2, c)
        };
        let got = parse(&src).unwrap().eval(&[]).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{} = {} vs {}", src, got, want);
        let neg = parse(&format!("-{a} ^ {c}")).unwrap().eval(&[]).unwrap();
        prop_assert_eq!(neg, -(a.powf(c)));
    }

    #[test]
    fn derivative_matches_central_difference(c0 in -3.0f64..3.0, c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, x in 0.3f64..4.0) {
        for src in [
            format!("{c0} + {c1}*x + {c2}*x^2"),
            format!("exp({c1}*x/4) * sqrt(x)"),
            format!("log(1 + x^2) / ({c2}^2 + 1 + x)"),
        ] {
            let e = parse(&src).unwrap();
            let d = e.differentiate("x").eval(&[("x", x)]).unwrap();
            let h = 1e-5;
            let fd = (e.eval(&[("x", x + h)]).unwrap() - e.eval(&[("x", x - h)]).unwrap()) / (2.0 * h);
            prop_assert!((d - fd).abs() <= 1e-7 * d.abs().max(1.0), "{}: {} vs {}", src, d, fd);
        }
    }

    #[test]
    fn canonical_bijection_round_trips(x in -30.0f64..30.0, y in -5.0f64..5.0) {
        let f = BijectionSpec::canonical();
        let fx = (f.f)(x);
        prop_assert!(fx > 0.0);
        prop_assert!(((f.inv)(fx) - x).abs() <= 1e-12 * x.abs().max(1.0));
        let direct = (f.f)(x + y) - fx - (f.df)(x) * y;
        let rem = (f.remainder)(x, y);
        prop_assert!((rem - direct).abs() <= 1e-9 * (f.f)(x + y).max(fx).max(1.0), "{} vs {}", rem, direct);
    }

    #[test]
    fn exp_remainder_matches_series(z in -0.49f64..0.49) {
        // e^{−z} − 1 + z, summed in long form
        let mut term = 1.0f64;
        let mut sum = 0.0f64;
        for n in 1..40 {
            term *= -z / n as f64;
            if n >= 2 {
                sum += term;
            }
        }
        prop_assert!((exp_remainder(z) - sum).abs() <= 4.0 * f64::EPSILON * sum.abs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn simulation_is_seed_deterministic(seed in any::<u64>()) {
        let m = build("cbi", &[("nu_f_rate", 2.0), ("nu_g_rate", 1.0)]);
        let model = m.model.as_ref().unwrap();
        let cfg = SimConfig { n_paths: 64, horizon: 0.2, seed, ..SimConfig::default() };
        let a = simulate_paths(model, &[1.0], &cfg, false).unwrap();
        let b = simulate_paths(model, &[1.0], &cfg, false).unwrap();
        let bits = |e: &onesided::montecarlo::PathEnsemble| e.terminal.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
        let c = simulate_paths(model, &[1.0], &SimConfig { seed: seed.wrapping_add(1), ..cfg }, false).unwrap();
        prop_assert_ne!(bits(&a), bits(&c));
    }
}
