//! Train a target, save it, and run the file-staged pipeline against it.

use tuni::evaluation::ToyBenchmarkConfig;
use tuni::features::OptimizationConfig;
use tuni::pipeline::{run_pipeline, save_target, PipelineInputs, PipelineSettings};

fn main() -> tuni::Result<()> {
    let dir = std::env::temp_dir().join("tuni-example");
    let toy = ToyBenchmarkConfig::default().build()?;
    let target = save_target(&toy, dir.join("target"))?;
    println!("target written to {}", target.0.display());

    let mut settings = PipelineSettings::from_run(&Default::default(), 0);
    settings.optimization = OptimizationConfig {
        epochs: 20,
        iterations: 200,
        ..Default::default()
    };
    settings.photos = 3;
    let inputs = PipelineInputs {
        backend: &toy.backend,
        texts: toy.dataset.names().into_iter().map(str::to_owned).collect(),
        truth: Some(toy.dataset.ground_truth()),
        face: Some(&toy.face_extractor),
        photo_pool: toy.photo_pool.clone(),
    };
    let report = run_pipeline(&inputs, &settings, dir.join("run"), false)?;
    println!("text-only: {:?}", report.text_only);
    println!("enhanced:  {:?}", report.enhanced);
    Ok(())
}
