//! Describe a circuit as text, check it, and run it.

use hyperqd::cli::parse_netlist;
use hyperqd::devices::protocol::run;
use hyperqd::devices::RunOptions;

const CIRCUIT: &str = "\
# A photon on one rail passes a QD phase block; the spin decides its sign.
qd q g=2.4 kappa_s=0.05 gamma=0.1
mode in vac x y ret out
input photon p R=1 L=0 in=1
input spin q up=0.7071067811865476 down=0.7071067811865476
bs in vac x y
hwp x 22.5
hwp y 22.5
qdscatter q y x
hwp x 22.5
hwp y 22.5
bs x y ret out
detector ret D1
herald silent=D1
measure spin q all
";

fn main() -> hyperqd::Result<()> {
    let net = parse_netlist(CIRCUIT)?;
    print!("canonical form:\n{net}");
    let record = run(&net.to_protocol(None, None)?, &RunOptions::default())?;
    println!("success {:.6}", record.success_probability());
    for b in &record.branches {
        println!("{:?}:\n{}", b.outcomes, b.state.serialize());
    }

    match parse_netlist("mode a b\ninput photon p R=1 L=0 a=1\nbs a b c\nwarp a\n") {
        Ok(_) => unreachable!(),
        Err(errors) => println!("rejected:\n{errors}"),
    }
    Ok(())
}
