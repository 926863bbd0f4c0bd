//! Fit the four detectors on gibberish features and vote on test names.

use tuni::backend::TextQuery;
use tuni::ensemble::{fit_ensemble, infer, EnsembleConfig};
use tuni::evaluation::{compute_metrics, ToyBenchmarkConfig};
use tuni::features::{batch_extract, OptimizationConfig};
use tuni::gibberish::{generate_random_gibberish, GibberishConfig};

fn main() -> tuni::Result<()> {
    let toy = ToyBenchmarkConfig::default().build()?;
    let config = OptimizationConfig {
        epochs: 20,
        iterations: 200,
        ..Default::default()
    };
    let gib: Vec<TextQuery> = generate_random_gibberish(&GibberishConfig::default())?
        .into_iter()
        .map(TextQuery::new)
        .collect::<tuni::Result<_>>()?;
    let gib_features = batch_extract(&toy.backend, &gib, &config, None, None)?;
    let model = fit_ensemble(&gib_features, &EnsembleConfig::default())?;

    let truth = toy.dataset.ground_truth();
    let texts: Vec<TextQuery> = truth
        .keys()
        .map(|t| TextQuery::new(t.as_str()))
        .collect::<tuni::Result<_>>()?;
    let features = batch_extract(&toy.backend, &texts, &config, None, None)?;
    let results = features
        .rows
        .iter()
        .map(|f| infer(&model, f))
        .collect::<tuni::Result<Vec<_>>>()?;
    for r in results.iter().take(6) {
        println!("{:20} votes {:?} → {}", r.text_id, r.votes, r.decision);
    }
    let m = compute_metrics(&results, &truth)?;
    println!(
        "accuracy {:.3} recall {:.3} precision {:?}",
        m.accuracy, m.recall, m.precision
    );
    Ok(())
}
