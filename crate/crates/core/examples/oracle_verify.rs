//! Cross-check the sparse simulator against the dense tensor oracle.

use hyperqd::analysis::{max_branch_deviation, oracle_run, random_config};
use hyperqd::devices::{run_device, DeviceKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hyperqd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for kind in DeviceKind::ALL {
        let n = kind.min_n().max(2);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let cfg = random_config(kind, n, &mut rng);
            worst = worst.max(max_branch_deviation(&run_device(&cfg)?, &oracle_run(&cfg)?));
        }
        println!("{kind:<13} N={n}: max deviation {worst:.2e}");
    }
    Ok(())
}
