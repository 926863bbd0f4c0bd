//! Sweep the number of gibberish texts and print a plot-ready table.

use tuni::evaluation::{
    ablation_sweep, write_sweep_table, AblationSpec, ExperimentConfig, SweepParam,
    ToyBenchmarkConfig,
};
use tuni::features::OptimizationConfig;

fn main() -> tuni::Result<()> {
    let toy = ToyBenchmarkConfig::default().build()?;
    let spec = AblationSpec {
        param: SweepParam::Gibberish,
        values: vec![10, 25, 50],
        base: ExperimentConfig {
            repeats: 3,
            optimization: OptimizationConfig {
                epochs: 20,
                iterations: 200,
                ..Default::default()
            },
            ..Default::default()
        },
    };
    let points = ablation_sweep(&toy.benchmark(), &spec)?;
    let out = std::env::temp_dir().join("tuni-sweep.csv");
    write_sweep_table(&out, spec.param, &points)?;
    print!("{}", std::fs::read_to_string(&out)?);
    Ok(())
}
