//! Text-only versus photo-enhanced inference over repeated runs.

use tuni::evaluation::{run_experiment, ExperimentConfig, ToyBenchmarkConfig};
use tuni::features::OptimizationConfig;

fn main() -> tuni::Result<()> {
    let toy = ToyBenchmarkConfig::default().build()?;
    let config = ExperimentConfig {
        repeats: 5,
        optimization: OptimizationConfig {
            epochs: 20,
            iterations: 200,
            ..Default::default()
        },
        photos: 3,
        ..Default::default()
    };
    let report = run_experiment(&toy.benchmark(), &config)?;
    let t = &report.text_only;
    println!(
        "text-only  precision {}  recall {}  accuracy {}",
        t.precision.display(),
        t.recall.display(),
        t.accuracy.display()
    );
    if let Some(e) = &report.enhanced {
        println!(
            "enhanced   precision {}  recall {}  accuracy {}",
            e.precision.display(),
            e.recall.display(),
            e.accuracy.display()
        );
    }
    Ok(())
}
