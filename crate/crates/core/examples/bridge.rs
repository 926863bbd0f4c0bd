//! The bridge wire protocol, answered in process and optionally over a
//! child process.
//!
//! With an argument, the example spawns it as a bridge server, e.g.
//! `cargo run --example bridge -- "target/debug/tuni serve --target tgt"`.

use serde_json::json;
use tuni::backend::protocol::{encode_pixels, respond};
use tuni::backend::{
    BridgeBackend, EmbeddingBackend, SyntheticBackend, SyntheticConfig, TextQuery,
};

fn main() -> tuni::Result<()> {
    let backend = SyntheticBackend::random(&SyntheticConfig {
        embedding_dim: 4,
        image_len: 3,
        ..SyntheticConfig::default()
    })?;
    let requests = [
        json!({"op": "info"}),
        json!({"op": "embed_text", "text": "Grace Hopper"}),
        json!({"op": "embed_image", "shape": [3], "pixels": encode_pixels(&[0.1, 0.5, 0.9])}),
        json!({"op": "embed_text", "text": ""}),
    ];
    for req in requests {
        let line = req.to_string();
        println!("> {line}\n< {}", respond(&backend, None, &line));
    }

    if let Some(cmd) = std::env::args().nth(1) {
        let bridge = BridgeBackend::spawn(&cmd)?;
        println!("bridge info: {:?}", bridge.info());
        let e = bridge.embed_text(&TextQuery::new("Grace Hopper")?)?;
        println!("bridge embedding: {:?}", e.values());
    }
    Ok(())
}
