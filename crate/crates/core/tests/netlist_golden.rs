mod common;

use common::{netlist_config, netlist_path, run_netlist, NETLISTS};
use hyperqd::analysis::max_branch_deviation;
use hyperqd::cli::parse_netlist;
use hyperqd::devices::run_device;
use hyperqd::Error;

#[test]
fn shipped_netlists_reproduce_the_builtin_devices() {
    for (name, kind) in NETLISTS {
        let builtin = run_device(&netlist_config(kind)).unwrap();
        let net = run_netlist(name, kind);
        assert_eq!(net.branches.len(), builtin.branches.len(), "{name}");
        let d = max_branch_deviation(&builtin, &net);
        assert!(d <= 1e-12, "{name}: deviation {d:e}");
        assert!((net.success_probability() - builtin.success_probability()).abs() <= 1e-12, "{name}");
        for (sink, p) in &builtin.outcome.sinks {
            let q = net.outcome.sinks.get(sink).copied().unwrap_or(0.0);
            assert!((p - q).abs() <= 1e-12, "{name}: sink {sink} {p} vs {q}");
        }
        assert!(net.fidelity > 1.0 - 1e-9, "{name}: fidelity {}", net.fidelity);
    }
}

#[test]
fn shipped_netlists_round_trip() {
    for (name, _) in NETLISTS {
        let text = std::fs::read_to_string(netlist_path(name)).unwrap();
        let a = parse_netlist(&text).unwrap();
        let b = parse_netlist(&a.to_string()).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn malformed_netlists_report_positions() {
    let cases = [
        ("", 1, 1, "missing input statement"),
        ("mode a b c\ninput photon p R=1 L=0 a=1\nbs a b c\n", 3, 1, "arity"),
        ("mode a\ninput photon p R=1 L=0 a=1\n   warp a\n", 3, 4, "unknown keyword"),
        ("mode a b\ninput photon p R=1 L=0 a=1\npbs a b x b\n", 3, 1, "undeclared mode `x`"),
        ("mode a b c\ninput photon p R=1 L=0 a=1\nbs a b c c\n", 3, 1, "duplicate mode write"),
        ("mode a\ninput photon p R=1 L=0 a=1\nspinflip q\n", 3, 1, "undeclared qd"),
        ("mode a\ninput photon p R=1 L=0 a=1\nhwp a 30\n", 3, 7, "22.5 or 45"),
    ];
    for (text, line, column, needle) in cases {
        let errs = parse_netlist(text).unwrap_err();
        match &errs.0[0] {
            Error::Netlist {
                line: l,
                column: c,
                message,
            } => {
                assert_eq!((*l, *c), (line, column), "{text:?}: {message}");
                assert!(message.contains(needle), "{text:?}: {message}");
            }
            other => panic!("{other:?}"),
        }
    }
}
