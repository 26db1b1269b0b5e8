use hyperqd::analysis::{efficiency_report, random_inputs};
use hyperqd::cli::parse_netlist;
use hyperqd::coeffs::CavityParams;
use hyperqd::devices::protocol::{run, CircuitBuilder};
use hyperqd::devices::{run_device, Cavity, DeviceConfig, DeviceKind, RunOptions};
use hyperqd::elements::HwpAngle;
use hyperqd::state::{PhotonSpec, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kind_and_n() -> impl Strategy<Value = (DeviceKind, usize)> {
    prop_oneof![
        (1usize..=3).prop_map(|n| (DeviceKind::PTransistor, n)),
        (1usize..=3).prop_map(|n| (DeviceKind::STransistor, n)),
        Just((DeviceKind::HyperRouter, 0)),
        (0usize..=4).prop_map(|n| (DeviceKind::HyperDram, n)),
    ]
}

/// A linear-optics step on the four modes m0..m3, as (netlist line, apply).
#[derive(Debug, Clone)]
enum Op {
    Pbs(usize, usize, usize, usize),
    Bs(usize, usize, usize, usize, bool),
    Hwp(usize, bool),
    Mirror(usize, usize),
}

fn distinct4() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    Just(vec![0usize, 1, 2, 3]).prop_shuffle().prop_map(|v| (v[0], v[1], v[2], v[3]))
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        distinct4().prop_map(|(a, b, c, d)| Op::Pbs(a, b, c, d)),
        (distinct4(), any::<bool>()).prop_map(|((a, b, c, d), r)| Op::Bs(a, b, c, d, r)),
        (0usize..4, any::<bool>()).prop_map(|(m, h)| Op::Hwp(m, h)),
        (0usize..4, 0usize..4).prop_filter("distinct", |(a, b)| a != b).prop_map(|(a, b)| Op::Mirror(a, b)),
    ]
}

fn m(i: usize) -> String {
    format!("m{i}")
}

impl Op {
    fn line(&self) -> String {
        match *self {
            Op::Pbs(a, b, c, d) => format!("pbs m{a} m{b} m{c} m{d}"),
            Op::Bs(a, b, c, d, r) => format!("bs m{a} m{b} m{c} m{d}{}", if r { " rotated" } else { "" }),
            Op::Hwp(a, h) => format!("hwp m{a} {}", if h { "22.5" } else { "45" }),
            Op::Mirror(a, b) => format!("mirror m{a} m{b}"),
        }
    }

    fn build(&self, b: &mut CircuitBuilder) {
        match *self {
            Op::Pbs(a, x, c, d) => b.pbs(&m(a), &m(x), &m(c), &m(d)).unwrap(),
            Op::Bs(a, x, c, d, r) => b.bs(&m(a), &m(x), &m(c), &m(d), r).unwrap(),
            Op::Hwp(a, h) => b
                .hwp(&m(a), if h { HwpAngle::Hadamard } else { HwpAngle::Flip })
                .unwrap(),
            Op::Mirror(a, x) => b.mirror(&m(a), &m(x)).unwrap(),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn physical_runs_are_faithful_and_closed(
        (kind, n) in kind_and_n(),
        g in 0.2f64..3.0,
        kappa_s in 0.0f64..1.0,
        gamma in 0.01f64..0.5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = DeviceConfig::new(kind, n).with_params(CavityParams::resonant(g, kappa_s, gamma));
        if kind == DeviceKind::HyperDram {
            cfg.cavities.push(Cavity::Params(CavityParams::resonant(g, kappa_s, gamma)));
        }
        cfg.inputs = random_inputs(kind, n, &mut rng);
        let r = run_device(&cfg).unwrap();
        prop_assert!(r.fidelity >= 1.0 - 1e-9, "fidelity {}", r.fidelity);
        let e = efficiency_report(&r);
        prop_assert!((e.total() - 1.0).abs() <= 1e-10, "ledger {}", e.total());
        prop_assert!(e.success <= 1.0 + 1e-12 && e.failure() >= -1e-15);
        let branch_total: f64 = r.branches.iter().map(|b| b.probability).sum();
        prop_assert!((branch_total - e.success).abs() <= 1e-12);
    }

    #[test]
    fn netlist_text_round_trips(ops in prop::collection::vec(op(), 1..20)) {
        let mut text = String::from("mode m0 m1 m2 m3\ninput photon p R=0.6 L=0,0.8 m0=0.8 m1=0.6\n");
        for o in &ops {
            text.push_str(&o.line());
            text.push('\n');
        }
        let a = parse_netlist(&text).unwrap();
        let printed = a.to_string();
        let b = parse_netlist(&printed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(printed, b.to_string());
    }

    #[test]
    fn netlists_match_the_builder(ops in prop::collection::vec(op(), 1..20)) {
        let spec = PhotonSpec::new(
            C64::new(0.6, 0.0),
            C64::new(0.0, 0.8),
            &[("m0", C64::new(0.8, 0.0)), ("m1", C64::new(0.6, 0.0))],
        );
        let mut text = String::from("mode m0 m1 m2 m3\ninput photon p R=0.6 L=0,0.8 m0=0.8 m1=0.6\n");
        let mut b = CircuitBuilder::new();
        for i in 0..4 {
            b.mode(&m(i));
        }
        b.input_photon("p", spec).unwrap();
        for o in &ops {
            text.push_str(&o.line());
            text.push('\n');
            o.build(&mut b);
        }
        let from_text = parse_netlist(&text).unwrap().to_protocol(None, None).unwrap();
        let opts = RunOptions::default();
        let x = run(&from_text, &opts).unwrap();
        let y = run(&b.build().unwrap(), &opts).unwrap();
        prop_assert_eq!(x.branches.len(), y.branches.len());
        for (u, v) in x.branches.iter().zip(&y.branches) {
            prop_assert!(u.state.max_amplitude_deviation(&v.state) <= 1e-15);
        }
    }
}
