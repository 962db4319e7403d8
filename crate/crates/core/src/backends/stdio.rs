//! Out-of-process backends over a JSON-lines protocol.
//!
//! Each request is one line `{"op": ..., "args": {...}}` on the child's
//! stdin; each reply is one line `{"ok": true, "result": ...}` or
//! `{"ok": false, "error": "..."}` on its stdout. Calls are serialised.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Mutex, OnceLock};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    BackendDescriptor, BackendKind, Captioner, Classifier, EmbeddingVector, Generator,
    ImageTensor, JointEncoder, LatentVector, Perturber, ScoreVector, SentenceEmbedder,
};
use crate::error::{Error, Result};
use crate::perturbation::VariationFactor;

struct Process {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

#[derive(Deserialize)]
struct Reply {
    ok: bool,
    #[serde(default)]
    result: Value,
    #[serde(default)]
    error: Option<String>,
}

pub struct StdioAdapter {
    name: String,
    kind: BackendKind,
    process: Mutex<Process>,
    classes: OnceLock<Vec<String>>,
    null: OnceLock<EmbeddingVector>,
}

impl std::fmt::Debug for StdioAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StdioAdapter")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .finish()
    }
}

impl StdioAdapter {
    pub fn spawn(command: &Path, args: &[String], kind: BackendKind) -> Result<Self> {
        let name = command.display().to_string();
        let mut child = Command::new(command)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::BackendUnavailable(format!("{name}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let adapter = StdioAdapter {
            name,
            kind,
            process: Mutex::new(Process {
                child,
                stdin,
                stdout,
            }),
            classes: OnceLock::new(),
            null: OnceLock::new(),
        };
        if kind == BackendKind::Generator {
            let null: EmbeddingVector = adapter.call_as("null_embedding", json!({}))?;
            EmbeddingVector::new(null.data.clone())?;
            let _ = adapter.null.set(null);
        }
        if kind == BackendKind::Classifier {
            let classes: Vec<String> = adapter.call_as("class_names", json!({}))?;
            let _ = adapter.classes.set(classes);
        }
        Ok(adapter)
    }

    /// Sends one request and waits for its reply.
    pub fn call(&self, op: &str, args: Value) -> Result<Value> {
        let mut p = self.process.lock().map_err(|_| Error::backend(&self.name, "adapter lock poisoned"))?;
        let unavailable = |e: std::io::Error| Error::BackendUnavailable(format!("{}: {e}", self.name));
        let mut line = serde_json::to_string(&json!({ "op": op, "args": args }))?;
        line.push('\n');
        p.stdin.write_all(line.as_bytes()).map_err(unavailable)?;
        p.stdin.flush().map_err(unavailable)?;
        let mut reply = String::new();
        if p.stdout.read_line(&mut reply).map_err(unavailable)? == 0 {
            return Err(Error::BackendUnavailable(format!("{}: closed its output", self.name)));
        }
        let reply: Reply = serde_json::from_str(&reply)
            .map_err(|e| Error::backend(&self.name, format!("malformed reply to `{op}`: {e}")))?;
        if reply.ok {
            Ok(reply.result)
        } else {
            Err(Error::backend(
                &self.name,
                reply.error.unwrap_or_else(|| format!("`{op}` failed")),
            ))
        }
    }

    fn call_as<T: DeserializeOwned>(&self, op: &str, args: Value) -> Result<T> {
        let v = self.call(op, args)?;
        serde_json::from_value(v)
            .map_err(|e| Error::backend(&self.name, format!("unexpected result for `{op}`: {e}")))
    }

    fn describe(&self, kind: BackendKind) -> BackendDescriptor {
        BackendDescriptor {
            kind,
            name: format!("stdio:{}", self.name),
            deterministic: false,
            seed: 0,
            output_dim: None,
        }
    }
}

impl Drop for StdioAdapter {
    fn drop(&mut self) {
        if let Ok(p) = self.process.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

impl Captioner for StdioAdapter {
    fn descriptor(&self) -> BackendDescriptor {
        self.describe(BackendKind::Captioner)
    }

    fn caption(&self, image: &ImageTensor, min_words: usize, repetition_penalty: f64) -> Result<String> {
        let text: String = self.call_as(
            "caption",
            json!({ "image": image, "min_words": min_words, "repetition_penalty": repetition_penalty }),
        )?;
        let words = text.split_whitespace().count();
        if words < min_words {
            return Err(Error::backend(
                &self.name,
                format!("caption has {words} words, fewer than {min_words}"),
            ));
        }
        Ok(text)
    }
}

impl Perturber for StdioAdapter {
    fn descriptor(&self) -> BackendDescriptor {
        self.describe(BackendKind::Perturber)
    }

    fn perturb(&self, caption: &str, factor: VariationFactor, max_edits: usize) -> Result<Vec<String>> {
        let mut edits: Vec<String> = self.call_as(
            "perturb",
            json!({ "caption": caption, "factor": factor, "max_edits": max_edits }),
        )?;
        edits.truncate(max_edits);
        Ok(edits)
    }
}

impl SentenceEmbedder for StdioAdapter {
    fn descriptor(&self) -> BackendDescriptor {
        self.describe(BackendKind::SentenceEmbedder)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        EmbeddingVector::new(self.call_as("embed", json!({ "text": text }))?)
    }
}

impl JointEncoder for StdioAdapter {
    fn descriptor(&self) -> BackendDescriptor {
        self.describe(BackendKind::JointEncoder)
    }

    fn encode_image(&self, image: &ImageTensor) -> Result<EmbeddingVector> {
        EmbeddingVector::new(self.call_as("encode_image", json!({ "image": image }))?)
    }

    fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        EmbeddingVector::new(self.call_as("encode_text", json!({ "text": text }))?)
    }
}

fn latent(v: Value, name: &str) -> Result<LatentVector> {
    let z: LatentVector = serde_json::from_value(v)
        .map_err(|e| Error::backend(name, format!("unexpected latent: {e}")))?;
    LatentVector::new(z.data, z.timestep)
}

impl Generator for StdioAdapter {
    fn descriptor(&self) -> BackendDescriptor {
        self.describe(BackendKind::Generator)
    }

    fn encode_image(&self, image: &ImageTensor) -> Result<LatentVector> {
        latent(self.call("vae_encode", json!({ "image": image }))?, &self.name)
    }

    fn decode_latent(&self, z: &LatentVector, like: &ImageTensor, id: &str) -> Result<ImageTensor> {
        let (c, h, w) = like.shape();
        let data: Vec<f64> = self.call_as(
            "vae_decode",
            json!({ "latent": z, "shape": [c, h, w] }),
        )?;
        ImageTensor::from_clamped(id, c, h, w, data)
    }

    fn embed_caption(&self, text: &str) -> Result<EmbeddingVector> {
        EmbeddingVector::new(self.call_as("embed_caption", json!({ "text": text }))?)
    }

    fn null_embedding(&self) -> EmbeddingVector {
        self.null.get().cloned().unwrap_or_else(|| EmbeddingVector::zeros(0))
    }

    fn denoise_step(
        &self,
        z: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
        null_embedding: &EmbeddingVector,
        guidance_scale: f64,
    ) -> Result<LatentVector> {
        if k == 0 {
            return Err(Error::TimestepExhausted);
        }
        let v = self.call(
            "denoise_step",
            json!({ "latent": z, "k": k, "text": text_embedding, "null": null_embedding, "guidance": guidance_scale }),
        )?;
        latent(v, &self.name)
    }

    fn invert_step(&self, z_prev: &LatentVector, k: usize, text_embedding: &EmbeddingVector) -> Result<LatentVector> {
        if k == 0 {
            return Err(Error::TimestepExhausted);
        }
        let v = self.call("invert_step", json!({ "latent": z_prev, "k": k, "text": text_embedding }))?;
        latent(v, &self.name)
    }

    fn null_jvp(
        &self,
        z: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
        null_embedding: &EmbeddingVector,
        guidance_scale: f64,
        tangent: &[f64],
    ) -> Result<Vec<f64>> {
        self.call_as(
            "null_jvp",
            json!({ "latent": z, "k": k, "text": text_embedding, "null": null_embedding,
                    "guidance": guidance_scale, "vector": tangent }),
        )
    }

    fn null_vjp(
        &self,
        z: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
        null_embedding: &EmbeddingVector,
        guidance_scale: f64,
        cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        self.call_as(
            "null_vjp",
            json!({ "latent": z, "k": k, "text": text_embedding, "null": null_embedding,
                    "guidance": guidance_scale, "vector": cotangent }),
        )
    }
}

impl Classifier for StdioAdapter {
    fn descriptor(&self) -> BackendDescriptor {
        self.describe(BackendKind::Classifier)
    }

    fn class_names(&self) -> Result<&[String]> {
        match self.classes.get() {
            Some(c) if !c.is_empty() => Ok(c),
            _ => Err(Error::ClassSetUndefined),
        }
    }

    fn classify(&self, image: &ImageTensor) -> Result<ScoreVector> {
        let names = self.class_names()?.to_vec();
        let scores: Vec<f64> = self.call_as("classify", json!({ "image": image }))?;
        ScoreVector::new(scores, names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    fn script(body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.sh");
        std::fs::write(&path, format!("#!/bin/sh\nwhile read -r line; do\n{body}\ndone\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        (dir, path)
    }

    #[test]
    fn round_trips_requests() {
        let (_d, path) = script(
            r#"case "$line" in
  *'"op":"caption"'*) echo '{"ok":true,"result":"a dog pulls a sled across the snow"}' ;;
  *) echo '{"ok":false,"error":"unsupported"}' ;;
esac"#,
        );
        let a = StdioAdapter::spawn(&path, &[], BackendKind::Captioner).unwrap();
        let img = ImageTensor::new("x", 1, 1, 1, vec![0.5]).unwrap();
        assert_eq!(a.caption(&img, 3, 1.0).unwrap(), "a dog pulls a sled across the snow");
        assert!(matches!(a.caption(&img, 50, 1.0), Err(Error::Backend { .. })));
        assert!(matches!(a.embed("x"), Err(Error::Backend { .. })));
    }

    #[test]
    fn classifier_fetches_class_names() {
        let (_d, path) = script(
            r#"case "$line" in
  *'"op":"class_names"'*) echo '{"ok":true,"result":["a","b"]}' ;;
  *'"op":"classify"'*) echo '{"ok":true,"result":[0.25,0.75]}' ;;
esac"#,
        );
        let a = StdioAdapter::spawn(&path, &[], BackendKind::Classifier).unwrap();
        assert_eq!(a.class_names().unwrap(), ["a", "b"]);
        let s = a.classify(&ImageTensor::new("x", 1, 1, 1, vec![0.5]).unwrap()).unwrap();
        assert_eq!(s.scores, vec![0.25, 0.75]);
    }

    #[test]
    fn exited_process_is_unavailable() {
        let (_d, path) = script("exit 0");
        let a = StdioAdapter::spawn(&path, &[], BackendKind::SentenceEmbedder).unwrap();
        assert!(matches!(a.embed("x"), Err(Error::BackendUnavailable(_))));
    }
}
