//! Query a synthetic backend: embeddings, cosine similarity and the
//! analytic similarity gradient checked against finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tuni::backend::{
    cosine_similarity, EmbeddingBackend, ImageTensor, SyntheticBackend, SyntheticConfig, TextQuery,
};

fn main() -> tuni::Result<()> {
    let backend = SyntheticBackend::random(&SyntheticConfig {
        embedding_dim: 8,
        image_len: 6,
        seed: 42,
        ..SyntheticConfig::default()
    })?;
    println!("{:?}", backend.info());

    let text = backend.embed_text(&TextQuery::new("Ada Lovelace")?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image = ImageTensor::random_uniform(vec![6], &mut rng);
    let sim = cosine_similarity(&text, &backend.embed_image(&image)?)?;
    println!("cos(text, image) = {sim:.6}");

    let g = backend.similarity_gradient(&text, &image)?;
    let h = 1e-5;
    for i in 0..image.len() {
        let bump = |d: f64| -> tuni::Result<f64> {
            let mut p = image.pixels().to_vec();
            p[i] += d;
            cosine_similarity(&text, &backend.embed_image(&ImageTensor::new(vec![6], p)?)?)
        };
        let fd = (bump(h)? - bump(-h)?) / (2.0 * h);
        println!(
            "pixel {i}: analytic {:+.6}  finite difference {fd:+.6}",
            g.grad[i]
        );
    }
    Ok(())
}
