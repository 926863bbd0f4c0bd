//! Newline-delimited JSON protocol spoken with out-of-process model servers.
//!
//! Requests carry an `op` tag. Images travel as base64 of little-endian
//! `f32` pixels together with their shape. Every response is a single line
//! with `"ok": true` plus a payload, or `"ok": false` and an `"error"` string.
//!
//! [`serve`] answers the protocol for any in-process backend, which is how
//! the command line tool exposes a synthetic target to external tooling.

use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Embedding, EmbeddingBackend, ImageTensor, TextQuery};
use crate::error::{Error, Result};
use crate::photo::FaceExtractor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Info,
    EmbedText {
        text: String,
    },
    EmbedImage {
        shape: Vec<usize>,
        pixels: String,
    },
    GradSim {
        text_embedding: Vec<f64>,
        shape: Vec<usize>,
        pixels: String,
    },
    FaceEmbed {
        shape: Vec<usize>,
        pixels: String,
    },
}

pub fn encode_pixels(pixels: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(pixels.len() * 4);
    for &p in pixels {
        bytes.extend_from_slice(&(p as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_pixels(encoded: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(encoded)
        .map_err(|e| Error::format(format!("pixels: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format("pixel payload is not a whole number of f32"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn ok(mut payload: Value) -> Value {
    if let Value::Object(map) = &mut payload {
        map.insert("ok".into(), Value::Bool(true));
    }
    payload
}

fn handle(
    backend: &dyn EmbeddingBackend,
    face: Option<&dyn FaceExtractor>,
    request: Request,
) -> Result<Value> {
    match request {
        Request::Info => {
            let info = backend.info();
            Ok(json!({
                "embedding_dim": info.embedding_dim,
                "image_shape": info.image_shape,
                "grad_support": info.grad_support,
                "backend_id": info.backend_id,
            }))
        }
        Request::EmbedText { text } => {
            let e = backend.embed_text(&TextQuery::new(text)?)?;
            Ok(json!({ "embedding": e.values() }))
        }
        Request::EmbedImage { shape, pixels } => {
            let image = ImageTensor::new(shape, decode_pixels(&pixels)?)?;
            let e = backend.embed_image(&image)?;
            Ok(json!({ "embedding": e.values() }))
        }
        Request::GradSim {
            text_embedding,
            shape,
            pixels,
        } => {
            let target = Embedding::new(text_embedding)?;
            let image = ImageTensor::new(shape, decode_pixels(&pixels)?)?;
            let g = backend.similarity_gradient(&target, &image)?;
            Ok(json!({ "grad": g.grad, "sim": g.similarity }))
        }
        Request::FaceEmbed { shape, pixels } => {
            let face = face.ok_or(Error::Unsupported {
                backend: backend.info().backend_id.clone(),
                op: "face_embed",
            })?;
            if shape != face.input_shape() {
                return Err(Error::invalid(format!(
                    "face input shape {shape:?} does not match {:?}",
                    face.input_shape()
                )));
            }
            let e = face.embed_face(&decode_pixels(&pixels)?)?;
            Ok(json!({ "embedding": e }))
        }
    }
}

/// Answers one request line; malformed input yields an `ok: false` response.
pub fn respond(
    backend: &dyn EmbeddingBackend,
    face: Option<&dyn FaceExtractor>,
    line: &str,
) -> Value {
    let result = serde_json::from_str::<Request>(line)
        .map_err(|e| Error::format(format!("malformed request: {e}")))
        .and_then(|req| handle(backend, face, req));
    match result {
        Ok(payload) => ok(payload),
        Err(e) => json!({ "ok": false, "error": e.to_string() }),
    }
}

/// Serves requests in order until the reader reaches end of input.
pub fn serve<R: BufRead, W: Write>(
    backend: &dyn EmbeddingBackend,
    face: Option<&dyn FaceExtractor>,
    reader: R,
    mut writer: W,
) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = respond(backend, face, &line);
        serde_json::to_writer(&mut writer, &response)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{SyntheticBackend, SyntheticConfig};

    fn backend() -> SyntheticBackend {
        SyntheticBackend::random(&SyntheticConfig {
            embedding_dim: 4,
            image_len: 3,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn request_wire_format() {
        let r = Request::EmbedText { text: "x".into() };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"op":"embed_text","text":"x"}"#
        );
        assert_eq!(
            serde_json::from_str::<Request>(r#"{"op":"info"}"#).unwrap(),
            Request::Info
        );
    }

    #[test]
    fn pixel_encoding_is_f32_le() {
        let enc = encode_pixels(&[1.0, 0.5]);
        let raw = STANDARD.decode(&enc).unwrap();
        assert_eq!(&raw[..4], &1.0f32.to_le_bytes());
        assert_eq!(decode_pixels(&enc).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn malformed_request_does_not_stop_server() {
        let b = backend();
        let input = "not json\n{\"op\":\"info\"}\n{\"op\":\"embed_text\",\"text\":\"\"}\n";
        let mut out = Vec::new();
        serve(&b, None, input.as_bytes(), &mut out).unwrap();
        let lines: Vec<Value> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0]["ok"], false);
        assert_eq!(lines[1]["ok"], true);
        assert_eq!(lines[1]["embedding_dim"], 4);
        assert_eq!(lines[2]["ok"], false);
    }

    #[test]
    fn face_embed_without_extractor_is_unsupported() {
        let b = backend();
        let line = format!(
            r#"{{"op":"face_embed","shape":[3],"pixels":"{}"}}"#,
            encode_pixels(&[0.1, 0.2, 0.3])
        );
        let v = respond(&b, None, &line);
        assert_eq!(v["ok"], false);
    }
}
