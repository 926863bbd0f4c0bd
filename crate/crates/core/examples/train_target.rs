//! Train a toy target with known membership and inspect the result.
//!
//! `cargo run --release --example train_target -- [identities] [photos]`

use tuni::evaluation::ToyBenchmarkConfig;

fn main() -> tuni::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config = ToyBenchmarkConfig::default();
    if let Some(n) = args.next() {
        config.dataset.identities = n.parse().expect("identities");
    }
    if let Some(p) = args.next() {
        config.dataset.photos_per_identity = p.parse().expect("photos per identity");
    }
    let toy = config.build()?;
    let ds = &toy.dataset;
    println!(
        "{} identities ({} members), {} training pairs incl. {} distractors",
        ds.identities.len(),
        ds.members().count(),
        ds.training_pool().len(),
        ds.distractors.len()
    );
    let loss = &toy.training.loss_history;
    for (epoch, l) in loss.iter().enumerate().step_by((loss.len() / 10).max(1)) {
        println!("epoch {epoch:4}  loss {l:.4}");
    }
    println!(
        "member/non-member similarity margin: {:.4}",
        toy.training.margin
    );
    println!(
        "trainer read {} identities, all members: {}",
        toy.training.accessed_identities.len(),
        toy.training
            .accessed_identities
            .iter()
            .all(|&i| ds.identities[i].is_member)
    );
    Ok(())
}
