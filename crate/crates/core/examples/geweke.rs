//! Joint-distribution test of the sampler on a toy problem.
//!
//! `cargo run --release --example geweke -- [rounds] [seed]`

use ggplds::gibbs::{geweke_test, toy_hyperparameters, SweepOptions, ToyShape};
use ggplds::ObservationKind;

fn main() -> ggplds::Result<()> {
    let mut args = std::env::args().skip(1);
    let rounds: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(100_000);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    for kind in [ObservationKind::Gaussian, ObservationKind::NegativeBinomial] {
        for update_mask in [true, false] {
            let hyper = toy_hyperparameters(kind);
            let started = std::time::Instant::now();
            let report = geweke_test(&hyper, ToyShape::default(), rounds, seed, &SweepOptions { update_mask })?;
            println!("{kind:?} update_mask={update_mask} ({:.1?})", started.elapsed());
            for s in &report.statistics {
                println!(
                    "  {:<14} mc {:>10.5} ± {:<8.5} sc {:>10.5} ± {:<8.5} z {:>7.2}",
                    s.name, s.mc_mean, s.mc_se, s.sc_mean, s.sc_se, s.z
                );
            }
        }
    }
    Ok(())
}
