use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::stdio::StdioAdapter;
use super::toy::{
    AffineToyGenerator, BagOfWordsEmbedder, LexiconPerturber, ToyCaptioner, ToyClassifier,
    ToyJointEncoder,
};
use super::{
    BackendDescriptor, BackendKind, Captioner, Classifier, Generator, JointEncoder, Perturber,
    SentenceEmbedder,
};
use crate::config::EditingConfig;
use crate::error::{Error, Result};

/// How to obtain one backend: a built-in toy model or an external process
/// speaking the JSON-lines protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Toy {
        #[serde(default)]
        seed: u64,
        /// Toy classifier only: parameter directory to load.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<PathBuf>,
    },
    Stdio {
        command: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Toy {
            seed: 0,
            params: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub captioner: BackendSpec,
    pub perturber: BackendSpec,
    pub embedder: BackendSpec,
    pub encoder: BackendSpec,
    pub generator: BackendSpec,
    pub classifier: BackendSpec,
}

impl BackendsConfig {
    pub(crate) fn resolve_paths(&mut self, base: &Path) {
        for spec in [
            &mut self.captioner,
            &mut self.perturber,
            &mut self.embedder,
            &mut self.encoder,
            &mut self.generator,
            &mut self.classifier,
        ] {
            match spec {
                BackendSpec::Toy {
                    params: Some(p), ..
                } if p.is_relative() => *p = base.join(&*p),
                BackendSpec::Stdio { command, .. }
                    if command.components().count() > 1 && command.is_relative() =>
                {
                    *command = base.join(&*command)
                }
                _ => {}
            }
        }
    }
}

/// The classifier under test: trainable when it is the toy model.
#[derive(Clone)]
pub enum ClassifierBackend {
    Toy(ToyClassifier),
    Remote(Arc<StdioAdapter>),
}

impl ClassifierBackend {
    pub fn as_classifier(&self) -> &dyn Classifier {
        match self {
            ClassifierBackend::Toy(c) => c,
            ClassifierBackend::Remote(c) => c.as_ref(),
        }
    }

    pub fn trainable(&self) -> Result<&ToyClassifier> {
        match self {
            ClassifierBackend::Toy(c) => Ok(c),
            ClassifierBackend::Remote(_) => Err(Error::BackendUnavailable(
                "head fine-tuning needs a trainable classifier; the external adapter exposes none"
                    .into(),
            )),
        }
    }
}

enum GeneratorSource {
    Toy {
        steps: usize,
        edit_gain: f64,
        guidance: f64,
        mismatch: f64,
        seed: u64,
        cache: Mutex<BTreeMap<(usize, usize, usize), Arc<AffineToyGenerator>>>,
    },
    Remote(Arc<StdioAdapter>),
}

/// Every backend a run needs, built from configuration.
pub struct Backends {
    pub captioner: Arc<dyn Captioner>,
    pub perturber: Arc<dyn Perturber>,
    pub embedder: Arc<dyn SentenceEmbedder>,
    pub encoder: Arc<dyn JointEncoder>,
    pub classifier: ClassifierBackend,
    generator: GeneratorSource,
}

fn spawn(spec: &BackendSpec, kind: BackendKind) -> Result<Option<Arc<StdioAdapter>>> {
    match spec {
        BackendSpec::Stdio { command, args } => Ok(Some(Arc::new(StdioAdapter::spawn(command, args, kind)?))),
        BackendSpec::Toy { .. } => Ok(None),
    }
}

fn toy_seed(spec: &BackendSpec) -> u64 {
    match spec {
        BackendSpec::Toy { seed, .. } => *seed,
        BackendSpec::Stdio { .. } => 0,
    }
}

impl Backends {
    pub fn from_config(config: &BackendsConfig, editing: &EditingConfig) -> Result<Self> {
        let captioner: Arc<dyn Captioner> = match spawn(&config.captioner, BackendKind::Captioner)? {
            Some(a) => a,
            None => Arc::new(ToyCaptioner::new(toy_seed(&config.captioner))),
        };
        let perturber: Arc<dyn Perturber> = match spawn(&config.perturber, BackendKind::Perturber)? {
            Some(a) => a,
            None => Arc::new(LexiconPerturber::new(toy_seed(&config.perturber))),
        };
        let embedder: Arc<dyn SentenceEmbedder> =
            match spawn(&config.embedder, BackendKind::SentenceEmbedder)? {
                Some(a) => a,
                None => Arc::new(BagOfWordsEmbedder::new(
                    super::toy::EMBEDDER_DIM,
                    toy_seed(&config.embedder),
                )),
            };
        let encoder: Arc<dyn JointEncoder> = match spawn(&config.encoder, BackendKind::JointEncoder)? {
            Some(a) => a,
            None => Arc::new(ToyJointEncoder::new(toy_seed(&config.encoder))),
        };
        let generator = match spawn(&config.generator, BackendKind::Generator)? {
            Some(a) => GeneratorSource::Remote(a),
            None => GeneratorSource::Toy {
                steps: editing.ddim_steps,
                edit_gain: editing.edit_gain,
                guidance: editing.guidance_scale,
                mismatch: editing.inversion_mismatch,
                seed: toy_seed(&config.generator),
                cache: Mutex::new(BTreeMap::new()),
            },
        };
        let classifier = match &config.classifier {
            BackendSpec::Stdio { .. } => ClassifierBackend::Remote(
                spawn(&config.classifier, BackendKind::Classifier)?.expect("stdio spec spawns"),
            ),
            BackendSpec::Toy { seed, params } => {
                let clf = match params {
                    Some(dir) => ToyClassifier::load(dir)
                        .map_err(|e| e.context(format!("loading classifier from {}", dir.display())))?,
                    None => ToyClassifier::standard(),
                };
                ClassifierBackend::Toy(clf.with_seed(*seed))
            }
        };
        Ok(Backends {
            captioner,
            perturber,
            embedder,
            encoder,
            classifier,
            generator,
        })
    }

    /// Generator for latents of the given image shape.
    pub fn generator_for(&self, shape: (usize, usize, usize)) -> Result<Arc<dyn Generator>> {
        match &self.generator {
            GeneratorSource::Remote(a) => Ok(a.clone()),
            GeneratorSource::Toy {
                steps,
                edit_gain,
                guidance,
                mismatch,
                seed,
                cache,
            } => {
                let mut cache = cache.lock().expect("generator cache poisoned");
                if let Some(g) = cache.get(&shape) {
                    return Ok(g.clone());
                }
                let g = Arc::new(
                    AffineToyGenerator::for_editing(shape, *steps, *edit_gain, *guidance)?
                        .with_inversion_mismatch(*mismatch)
                        .with_seed(*seed),
                );
                cache.insert(shape, g.clone());
                Ok(g)
            }
        }
    }

    /// Descriptors of every backend; the generator's is reported for the
    /// given latent shape.
    pub fn descriptors(&self, shape: (usize, usize, usize)) -> Result<Vec<BackendDescriptor>> {
        Ok(vec![
            self.captioner.descriptor(),
            self.perturber.descriptor(),
            self.embedder.descriptor(),
            self.encoder.descriptor(),
            self.generator_for(shape)?.descriptor(),
            self.classifier.as_classifier().descriptor(),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_backends_are_deterministic() {
        let b = Backends::from_config(&BackendsConfig::default(), &EditingConfig::default()).unwrap();
        let d = b.descriptors((3, 16, 16)).unwrap();
        assert_eq!(d.len(), 6);
        assert!(d.iter().all(|d| d.deterministic));
        let g1 = b.generator_for((3, 16, 16)).unwrap();
        let g2 = b.generator_for((3, 16, 16)).unwrap();
        assert!(Arc::ptr_eq(&g1, &g2));
    }

    #[test]
    fn spec_parses_from_toml() {
        let cfg: BackendsConfig = toml::from_str(
            "captioner = { kind = \"stdio\", command = \"my-captioner\", args = [\"--fast\"] }\n\
             classifier = { kind = \"toy\", seed = 3 }\n",
        )
        .unwrap();
        assert_eq!(
            cfg.captioner,
            BackendSpec::Stdio {
                command: "my-captioner".into(),
                args: vec!["--fast".into()]
            }
        );
        assert_eq!(cfg.classifier, BackendSpec::Toy { seed: 3, params: None });
        assert_eq!(cfg.embedder, BackendSpec::default());
    }

    #[test]
    fn missing_adapter_is_unavailable() {
        let cfg = BackendsConfig {
            captioner: BackendSpec::Stdio {
                command: "/nonexistent/cfr-adapter".into(),
                args: vec![],
            },
            ..BackendsConfig::default()
        };
        let err = Backends::from_config(&cfg, &EditingConfig::default()).err().unwrap();
        assert!(matches!(err, Error::BackendUnavailable(_)), "{err}");
    }
}
