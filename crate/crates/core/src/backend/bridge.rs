//! Client side of the model-server protocol: a child process spoken to over
//! its standard streams, one request at a time.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde_json::Value;

use super::protocol::{encode_pixels, Request};
use super::{BackendInfo, Embedding, EmbeddingBackend, ImageTensor, SimilarityGradient, TextQuery};
use crate::error::{Error, Result};
use crate::photo::FaceExtractor;

struct Session {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
    dead: bool,
}

/// Backend served by an external process (e.g. a real CLIP checkpoint).
///
/// The process is single-session: all calls go through one mutex-guarded
/// request queue, in order.
pub struct BridgeBackend {
    info: BackendInfo,
    session: Mutex<Session>,
}

impl std::fmt::Debug for BridgeBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeBackend")
            .field("info", &self.info)
            .finish_non_exhaustive()
    }
}

impl BridgeBackend {
    /// Spawns `command_line` (split on whitespace) and performs the `info` handshake.
    pub fn spawn(command_line: &str) -> Result<Self> {
        let mut parts = command_line.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::invalid("empty bridge command"))?;
        let args: Vec<String> = parts.map(str::to_owned).collect();
        Self::spawn_with_args(program, &args)
    }

    pub fn spawn_with_args(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::BackendUnavailable(format!("cannot start `{program}`: {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let session = Mutex::new(Session {
            child,
            stdin: Some(stdin),
            stdout,
            dead: false,
        });
        let mut backend = Self {
            info: BackendInfo {
                embedding_dim: 0,
                image_shape: Vec::new(),
                grad_support: false,
                backend_id: String::new(),
                single_session: true,
            },
            session,
        };
        let reply = backend.request(&Request::Info)?;
        let mut info: BackendInfo = serde_json::from_value(reply)
            .map_err(|e| Error::Backend(format!("bad info reply: {e}")))?;
        info.single_session = true;
        info.validate()?;
        backend.info = info;
        Ok(backend)
    }

    fn request(&self, request: &Request) -> Result<Value> {
        let mut session = self
            .session
            .lock()
            .map_err(|_| Error::BackendUnavailable("bridge session poisoned".into()))?;
        if session.dead {
            return Err(Error::BackendUnavailable(
                "bridge process has exited".into(),
            ));
        }
        let result = Self::round_trip(&mut session, request);
        if matches!(result, Err(Error::BackendUnavailable(_))) {
            session.dead = true;
        }
        result
    }

    fn round_trip(session: &mut Session, request: &Request) -> Result<Value> {
        let unavailable = |e: std::io::Error| Error::BackendUnavailable(e.to_string());
        let stdin = session
            .stdin
            .as_mut()
            .ok_or_else(|| Error::BackendUnavailable("bridge stdin closed".into()))?;
        serde_json::to_writer(&mut *stdin, request)?;
        stdin.write_all(b"\n").map_err(unavailable)?;
        stdin.flush().map_err(unavailable)?;
        let mut line = String::new();
        let n = session.stdout.read_line(&mut line).map_err(unavailable)?;
        if n == 0 {
            return Err(Error::BackendUnavailable(
                "bridge closed its output stream".into(),
            ));
        }
        let mut reply: Value = serde_json::from_str(&line)
            .map_err(|e| Error::Backend(format!("unparseable reply: {e}")))?;
        match reply.get("ok").and_then(Value::as_bool) {
            Some(true) => {
                if let Value::Object(map) = &mut reply {
                    map.remove("ok");
                }
                Ok(reply)
            }
            Some(false) => Err(Error::Backend(
                reply
                    .get("error")
                    .and_then(Value::as_str)
                    .unwrap_or("unspecified error")
                    .to_owned(),
            )),
            None => Err(Error::Backend("reply lacks `ok` field".into())),
        }
    }

    fn floats(reply: &Value, key: &str) -> Result<Vec<f64>> {
        reply
            .get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Backend(format!("reply lacks `{key}`")))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| Error::Backend(format!("non-numeric entry in `{key}`")))
            })
            .collect()
    }

    fn embedding(&self, reply: &Value) -> Result<Embedding> {
        let values = Self::floats(reply, "embedding")?;
        if values.len() != self.info.embedding_dim {
            return Err(Error::DimensionMismatch {
                expected: self.info.embedding_dim,
                actual: values.len(),
            });
        }
        Embedding::new(values)
    }
}

impl EmbeddingBackend for BridgeBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn embed_text(&self, text: &TextQuery) -> Result<Embedding> {
        let reply = self.request(&Request::EmbedText {
            text: text.as_str().to_owned(),
        })?;
        self.embedding(&reply)
    }

    fn embed_image(&self, image: &ImageTensor) -> Result<Embedding> {
        self.info.check_image(image)?;
        let reply = self.request(&Request::EmbedImage {
            shape: image.shape().to_vec(),
            pixels: encode_pixels(image.pixels()),
        })?;
        self.embedding(&reply)
    }

    fn similarity_gradient(
        &self,
        target: &Embedding,
        image: &ImageTensor,
    ) -> Result<SimilarityGradient> {
        if !self.info.grad_support {
            return Err(Error::Unsupported {
                backend: self.info.backend_id.clone(),
                op: "similarity_gradient",
            });
        }
        self.info.check_image(image)?;
        let reply = self.request(&Request::GradSim {
            text_embedding: target.values().to_vec(),
            shape: image.shape().to_vec(),
            pixels: encode_pixels(image.pixels()),
        })?;
        let grad = Self::floats(&reply, "grad")?;
        if grad.len() != image.len() {
            return Err(Error::DimensionMismatch {
                expected: image.len(),
                actual: grad.len(),
            });
        }
        let similarity = reply
            .get("sim")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Backend("reply lacks `sim`".into()))?;
        Ok(SimilarityGradient { grad, similarity })
    }
}

/// Face embeddings through the bridge's `face_embed` op, using the image shape.
impl FaceExtractor for BridgeBackend {
    fn input_shape(&self) -> &[usize] {
        &self.info.image_shape
    }

    fn embed_face(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        let reply = self.request(&Request::FaceEmbed {
            shape: self.info.image_shape.clone(),
            pixels: encode_pixels(pixels),
        })?;
        Self::floats(&reply, "embedding")
    }
}

impl Drop for BridgeBackend {
    fn drop(&mut self) {
        if let Ok(session) = self.session.get_mut() {
            // closing stdin is the shutdown signal
            session.stdin.take();
            for _ in 0..50 {
                match session.child.try_wait() {
                    Ok(Some(_)) | Err(_) => return,
                    Ok(None) => std::thread::sleep(std::time::Duration::from_millis(10)),
                }
            }
            let _ = session.child.kill();
            let _ = session.child.wait();
        }
    }
}
