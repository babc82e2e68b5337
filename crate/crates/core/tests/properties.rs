use arwimcf::background::{make_canonical, ArwParams};
use arwimcf::flow::{rhs, FlowConfig, InitialData, Mode, Wave};
use arwimcf::geometry::{SpatialDomain, StencilOrder};
use arwimcf::io::{RunConfig, ScaleFactorSpec, SCHEMA_VERSION};
use proptest::prelude::*;

const N: usize = 16;

fn plane(order: StencilOrder) -> FlowConfig {
    let p = ArwParams::new(2, 2.0, 1.0).unwrap();
    let d = SpatialDomain::new(2, N, order, 0.0).unwrap();
    FlowConfig::new(make_canonical(p, -10.0).unwrap(), d, InitialData::constant(-0.5))
}

fn noisy_graph() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.02f64..0.02, N * N).prop_map(|v| v.into_iter().map(|e| -0.5 + e).collect())
}

fn order() -> impl Strategy<Value = StencilOrder> {
    prop_oneof![Just(StencilOrder::Second), Just(StencilOrder::Fourth)]
}

fn remap(u: &[f64], map: impl Fn(usize, usize) -> (usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    for j in 0..N {
        for i in 0..N {
            let (a, b) = map(i, j);
            out[a + N * b] = u[i + N * j];
        }
    }
    out
}

fn assert_close(a: &[f64], b: &[f64]) {
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "index {k}: {x} vs {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn speed_commutes_with_grid_translation(u in noisy_graph(), o in order(), si in 0..N, sj in 0..N) {
        let cfg = plane(o);
        let shift = |i: usize, j: usize| ((i + si) % N, (j + sj) % N);
        let lhs = rhs(&cfg, 0.3, &remap(&u, shift)).unwrap();
        let rhs_shifted = remap(&rhs(&cfg, 0.3, &u).unwrap(), shift);
        assert_close(&lhs, &rhs_shifted);
    }

    #[test]
    fn speed_commutes_with_reflection_and_axis_swap(u in noisy_graph(), o in order()) {
        let cfg = plane(o);
        type IndexMap = fn(usize, usize) -> (usize, usize);
        let maps: [IndexMap; 2] = [
            |i, j| ((N - i) % N, j),
            |i, j| (j, i),
        ];
        let base = rhs(&cfg, 0.0, &u).unwrap();
        for map in maps {
            let lhs = rhs(&cfg, 0.0, &remap(&u, map)).unwrap();
            assert_close(&lhs, &remap(&base, map));
        }
    }
}

fn mode() -> impl Strategy<Value = Mode> {
    (-0.1f64..0.1, -3i32..=3, -3i32..=3, any::<bool>()).prop_map(|(amplitude, kx, ky, sin)| Mode {
        amplitude,
        kx,
        ky,
        wave: if sin { Wave::Sin } else { Wave::Cos },
    })
}

fn config() -> impl Strategy<Value = RunConfig> {
    let dims = prop_oneof![Just(1usize), Just(2usize)];
    (
        dims,
        1.1f64..5.0,
        0.1f64..4.0,
        prop_oneof![Just(16usize), Just(32), Just(64)],
        order(),
        -20.0f64..-1.0,
        prop::option::of(-0.5f64..0.5),
        -1.0f64..-0.1,
        prop::collection::vec(mode(), 0..4),
        (1.0f64..20.0, 1e-12f64..1e-6, 0.01f64..0.5),
        prop::collection::vec(0usize..256, 0..5),
        0..=i64::MAX as u64,
    )
        .prop_map(|(n, omega, m, points, order, start, amp, constant, modes, flow, seeds, seed)| {
            let params = ArwParams::new(n, omega, m).unwrap();
            let domain = SpatialDomain::new(n, points, order, 0.0).unwrap();
            let len = domain.len();
            let mut cfg = RunConfig {
                schema_version: SCHEMA_VERSION,
                seed,
                out_dir: "runs/x".into(),
                params,
                scale_factor: match amp {
                    Some(amplitude) => ScaleFactorSpec::Perturbed { start, amplitude },
                    None => ScaleFactorSpec::Canonical { start },
                },
                domain,
                initial: InitialData { constant, modes },
                flow: Default::default(),
                analysis: Default::default(),
                certificate: Default::default(),
                transition: Default::default(),
            };
            cfg.flow.t_end = flow.0;
            cfg.flow.rel_tol = flow.1;
            cfg.flow.record_every = flow.2;
            cfg.transition.seeds = seeds.into_iter().filter(|&s| s < len).collect();
            cfg
        })
}

proptest! {
    #[test]
    fn config_round_trips(cfg in config()) {
        prop_assert!(cfg.validate().is_ok());
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
