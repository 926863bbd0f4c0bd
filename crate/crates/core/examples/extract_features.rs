//! S and D features for members, non-members and gibberish on a toy target.

use tuni::backend::TextQuery;
use tuni::evaluation::ToyBenchmarkConfig;
use tuni::features::{extract_features, OptimizationConfig};
use tuni::gibberish::{generate_random_gibberish, GibberishConfig};
use tuni::stats;

fn main() -> tuni::Result<()> {
    let toy = ToyBenchmarkConfig::default().build()?;
    let config = OptimizationConfig {
        epochs: 20,
        iterations: 200,
        ..Default::default()
    };
    let gib = generate_random_gibberish(&GibberishConfig {
        count: 10,
        ..Default::default()
    })?;
    let groups = [
        (
            "members",
            toy.dataset
                .members()
                .take(10)
                .map(|i| i.name.clone())
                .collect::<Vec<_>>(),
        ),
        (
            "non-members",
            toy.dataset
                .non_members()
                .take(10)
                .map(|i| i.name.clone())
                .collect(),
        ),
        ("gibberish", gib),
    ];
    for (label, texts) in groups {
        let (mut s, mut d) = (Vec::new(), Vec::new());
        for t in &texts {
            let (f, _) = extract_features(&toy.backend, &TextQuery::new(t.as_str())?, &config)?;
            s.push(f.s);
            d.push(f.d);
        }
        println!(
            "{label:12} S {:.4} ± {:.4}   D {:.4} ± {:.4}",
            stats::mean(&s),
            stats::std_dev(&s),
            stats::mean(&d),
            stats::std_dev(&d)
        );
    }
    Ok(())
}
