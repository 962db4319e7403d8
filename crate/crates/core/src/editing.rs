//! Counterfactual image editing: deterministic inversion, per-timestep
//! null-text tuning, caption-swap editing with a `tau` injection schedule,
//! and the directional-similarity controller that picks `tau`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{
    EmbeddingVector, Generator, ImageTensor, JointEncoder, LatentVector,
};
use crate::error::{io_at, Error, Result};
use crate::imageio;
use crate::perturbation::CaptionEdit;
use crate::util;

/// Latents `[z_0, ..., z_K]` of a deterministic inversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionTrajectory {
    pub latents: Vec<LatentVector>,
    pub caption_embedding: EmbeddingVector,
}

impl InversionTrajectory {
    pub fn k(&self) -> usize {
        self.latents.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latents.len() < 2 {
            return Err(Error::invalid("trajectory", "needs at least z_0 and z_1"));
        }
        for (k, z) in self.latents.iter().enumerate() {
            if z.timestep != k {
                return Err(Error::invalid(
                    "trajectory",
                    format!("latent {k} carries timestep {}", z.timestep),
                ));
            }
        }
        Ok(())
    }
}

/// Null-text embeddings `∅_1 ... ∅_K` (index `k - 1` holds `∅_k`) with the
/// final squared reconstruction error of each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullTextSchedule {
    pub embeddings: Vec<EmbeddingVector>,
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
}

impl NullTextSchedule {
    pub fn k(&self) -> usize {
        self.embeddings.len()
    }

    pub fn embedding(&self, k: usize) -> &EmbeddingVector {
        &self.embeddings[k - 1]
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NullTextOptions {
    pub steps_per_timestep: usize,
    /// Damping on the exact line-search step; 1 takes the full step.
    pub learning_rate: f64,
    /// Squared-residual level at which a timestep counts as converged.
    pub tolerance: f64,
}

impl Default for NullTextOptions {
    fn default() -> Self {
        NullTextOptions {
            steps_per_timestep: 10,
            learning_rate: 1.0,
            tolerance: 1e-5,
        }
    }
}

/// Runs the generator's inversion step `K` times from `z0`.
pub fn ddim_invert(
    z0: &LatentVector,
    caption_embedding: &EmbeddingVector,
    k: usize,
    generator: &dyn Generator,
) -> Result<InversionTrajectory> {
    if k == 0 {
        return Err(Error::invalid("K", "must be at least 1"));
    }
    if z0.timestep != 0 {
        return Err(Error::invalid("z0", format!("timestep {} != 0", z0.timestep)));
    }
    let mut latents = Vec::with_capacity(k + 1);
    latents.push(z0.clone());
    for step in 1..=k {
        let next = generator
            .invert_step(&latents[step - 1], step, caption_embedding)
            .map_err(|e| Error::PartialTrajectory {
                completed: step - 1,
                requested: k,
                source: Box::new(e),
            })?;
        latents.push(next);
    }
    Ok(InversionTrajectory {
        latents,
        caption_embedding: caption_embedding.clone(),
    })
}

/// Tunes one null-text embedding per timestep so that sampling from `z_K`
/// with guidance retraces the inversion trajectory.
///
/// For `k = K ... 1` this minimises `|z_{k-1} - S(ẑ_k, ∅_k, c)|²` by steepest
/// descent with an exact line search along the gradient (the step is
/// quadratic in `∅` along any line through a locally affine sampler). `∅_k`
/// starts from `∅_{k+1}`, and `ẑ_{k-1}` is the sample produced with the tuned
/// `∅_k`. Timesteps left above `tolerance` are flagged, not fatal.
pub fn optimize_null_text(
    trajectory: &InversionTrajectory,
    options: &NullTextOptions,
    guidance_scale: f64,
    generator: &dyn Generator,
) -> Result<NullTextSchedule> {
    trajectory.validate()?;
    if options.steps_per_timestep == 0 {
        return Err(Error::invalid("steps_per_timestep", "must be at least 1"));
    }
    if !(options.tolerance > 0.0) {
        return Err(Error::invalid("tolerance", "must be positive"));
    }
    let big_k = trajectory.k();
    let c = &trajectory.caption_embedding;
    let mut embeddings = vec![EmbeddingVector::zeros(0); big_k];
    let mut residuals = vec![0.0; big_k];
    let mut converged = vec![false; big_k];
    let mut z_hat = trajectory.latents[big_k].clone();
    let mut null = generator.null_embedding();

    for k in (1..=big_k).rev() {
        let target = &trajectory.latents[k - 1].data;
        for _ in 0..options.steps_per_timestep {
            let pred = generator.denoise_step(&z_hat, k, c, &null, guidance_scale)?;
            let r = util::sub(target, &pred.data);
            let loss = util::dot(&r, &r);
            if loss <= options.tolerance {
                break;
            }
            // d loss / d∅ = -2 Jᵀ r
            let grad: Vec<f64> = generator
                .null_vjp(&z_hat, k, c, &null, guidance_scale, &r)?
                .into_iter()
                .map(|v| -2.0 * v)
                .collect();
            let jg = generator.null_jvp(&z_hat, k, c, &null, guidance_scale, &grad)?;
            let denom = util::dot(&jg, &jg);
            if denom == 0.0 {
                break;
            }
            // Moving ∅ by -t·grad changes the residual to r + t·J grad.
            let t = -util::dot(&r, &jg) / denom;
            null = EmbeddingVector::new(util::axpby(1.0, &null.data, -options.learning_rate * t, &grad))?;
        }
        let pred = generator.denoise_step(&z_hat, k, c, &null, guidance_scale)?;
        let r = util::sub(target, &pred.data);
        let loss = util::dot(&r, &r);
        if !loss.is_finite() {
            return Err(Error::backend(
                generator.descriptor().name,
                format!("non-finite reconstruction error at k = {k}"),
            ));
        }
        residuals[k - 1] = loss;
        converged[k - 1] = loss <= options.tolerance;
        embeddings[k - 1] = null.clone();
        z_hat = pred;
    }
    Ok(NullTextSchedule {
        embeddings,
        residuals,
        converged,
    })
}

/// Samples `z_K -> z_0` with the tuned schedule and a fixed conditioning.
pub fn reconstruct(
    trajectory: &InversionTrajectory,
    schedule: &NullTextSchedule,
    guidance_scale: f64,
    generator: &dyn Generator,
) -> Result<LatentVector> {
    check_k(trajectory, schedule)?;
    let mut z = trajectory.latents[trajectory.k()].clone();
    for k in (1..=trajectory.k()).rev() {
        z = generator.denoise_step(
            &z,
            k,
            &trajectory.caption_embedding,
            schedule.embedding(k),
            guidance_scale,
        )?;
    }
    Ok(z)
}

fn check_k(trajectory: &InversionTrajectory, schedule: &NullTextSchedule) -> Result<()> {
    if trajectory.k() != schedule.k() {
        return Err(Error::StepMismatch {
            schedule: schedule.k(),
            trajectory: trajectory.k(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditRequest {
    pub image: ImageTensor,
    pub original_caption: String,
    pub perturbed_caption: String,
    pub tau: f64,
}

impl EditRequest {
    pub fn new(image: ImageTensor, original: &str, perturbed: &str, tau: f64) -> Result<Self> {
        if original == perturbed {
            return Err(Error::invalid("edit request", "captions must differ"));
        }
        let req = EditRequest {
            image,
            original_caption: original.to_string(),
            perturbed_caption: perturbed.to_string(),
            tau,
        };
        req.check()?;
        Ok(req)
    }

    fn check(&self) -> Result<()> {
        if self.original_caption.trim().is_empty() || self.perturbed_caption.trim().is_empty() {
            return Err(Error::invalid("edit request", "captions must be nonempty"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau", format!("{} outside [0, 1]", self.tau)));
        }
        Ok(())
    }
}

/// Weight of the original caption at 0-based denoising step `i` of `K`:
/// the first `tau * K` steps use it fully, with a fractional step between.
pub fn injection_weight(tau: f64, k: usize, i: usize) -> f64 {
    (tau * k as f64 - i as f64).clamp(0.0, 1.0)
}

/// Denoises from `z_K` with the tuned null-text schedule, conditioning the
/// early steps on the original caption and the rest on the perturbed one.
pub fn edit_image(
    request: &EditRequest,
    schedule: &NullTextSchedule,
    trajectory: &InversionTrajectory,
    guidance_scale: f64,
    generator: &dyn Generator,
    output_id: &str,
) -> Result<ImageTensor> {
    request.check()?;
    check_k(trajectory, schedule)?;
    let big_k = trajectory.k();
    let c = &trajectory.caption_embedding;
    let c_edit = if request.perturbed_caption == request.original_caption {
        c.clone()
    } else {
        generator.embed_caption(&request.perturbed_caption)?
    };
    if c_edit.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            actual: c_edit.dim(),
        });
    }
    let mut z = trajectory.latents[big_k].clone();
    for i in 0..big_k {
        let k = big_k - i;
        let w = injection_weight(request.tau, big_k, i);
        let cond = if w == 1.0 {
            c.clone()
        } else if w == 0.0 {
            c_edit.clone()
        } else {
            EmbeddingVector::new(util::axpby(w, &c.data, 1.0 - w, &c_edit.data))?
        };
        z = generator.denoise_step(&z, k, &cond, schedule.embedding(k), guidance_scale)?;
    }
    generator.decode_latent(&z, &request.image, output_id)
}

/// `1 - cos(image delta, text delta)` from already-computed deltas.
pub fn directional_from_deltas(image_delta: &[f64], text_delta: &[f64]) -> Result<f64> {
    if image_delta.len() != text_delta.len() {
        return Err(Error::DimensionMismatch {
            expected: image_delta.len(),
            actual: text_delta.len(),
        });
    }
    let ni = util::norm(image_delta);
    let nt = util::norm(text_delta);
    if ni == 0.0 {
        return Err(Error::ZeroDelta("image embeddings of x and x' coincide"));
    }
    if nt == 0.0 {
        return Err(Error::ZeroDelta("text embeddings of c and c' coincide"));
    }
    let cos = util::dot(image_delta, text_delta) / (ni * nt);
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

/// Directional similarity `O = 1 - cos(O_I(x) - O_I(x'), O_T(c) - O_T(c'))`.
pub fn directional_similarity(
    x: &ImageTensor,
    x_cf: &ImageTensor,
    c: &str,
    c_cf: &str,
    encoder: &dyn JointEncoder,
) -> Result<f64> {
    let ix = encoder.encode_image(x)?;
    let ix_cf = encoder.encode_image(x_cf)?;
    let tc = encoder.encode_text(c)?;
    let tc_cf = encoder.encode_text(c_cf)?;
    let di = ix.sub(&ix_cf)?;
    let dt = tc.sub(&tc_cf)?;
    directional_from_deltas(&di.data, &dt.data)
}

/// Evaluates `score` at every grid value and keeps the minimiser, preferring
/// the larger `tau` on ties. Candidates failing with a zero delta are skipped.
pub fn argmin_tau<T>(
    tau_grid: &[f64],
    mut score: impl FnMut(f64) -> Result<(f64, T)>,
) -> Result<(f64, f64, T)> {
    validate_grid(tau_grid)?;
    let mut best: Option<(f64, f64, T)> = None;
    let mut failures = Vec::new();
    for &tau in tau_grid {
        match score(tau) {
            Ok((o, item)) => {
                let better = match &best {
                    None => true,
                    Some((bt, bo, _)) => o < *bo || (o == *bo && tau > *bt),
                };
                if better {
                    best = Some((tau, o, item));
                }
            }
            Err(e) if matches!(e.root(), Error::ZeroDelta(_)) => {
                failures.push(format!("tau {tau}: {e}"));
            }
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| Error::AllCandidatesFailed(failures.join("; ")))
}

pub fn validate_grid(tau_grid: &[f64]) -> Result<()> {
    if tau_grid.is_empty() {
        return Err(Error::invalid("tau_grid", "must be nonempty"));
    }
    if let Some(t) = tau_grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid("tau_grid", format!("{t} outside [0, 1]")));
    }
    Ok(())
}

pub fn default_tau_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditorConfig {
    pub ddim_steps: usize,
    pub guidance_scale: f64,
    pub tau_grid: Vec<f64>,
    pub null_text: NullTextOptions,
}

impl Default for EditorConfig {
    fn default() -> Self {
        EditorConfig {
            ddim_steps: 50,
            guidance_scale: 7.5,
            tau_grid: default_tau_grid(),
            null_text: NullTextOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualExample {
    pub image: ImageTensor,
    pub source_image_id: String,
    pub edit: CaptionEdit,
    pub tau: f64,
    pub directional_score: f64,
    pub gt_class: String,
}

/// Inversion and null-text schedule of one image under its caption,
/// shared by every edit and `tau` candidate of that image.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub image: ImageTensor,
    pub caption: String,
    pub trajectory: InversionTrajectory,
    pub schedule: NullTextSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauCandidate {
    pub tau: f64,
    pub score: Option<f64>,
    pub error: Option<String>,
}

pub struct CounterfactualEditor<'a> {
    pub generator: &'a dyn Generator,
    pub encoder: &'a dyn JointEncoder,
    pub config: EditorConfig,
}

impl<'a> CounterfactualEditor<'a> {
    pub fn new(generator: &'a dyn Generator, encoder: &'a dyn JointEncoder, config: EditorConfig) -> Self {
        CounterfactualEditor {
            generator,
            encoder,
            config,
        }
    }

    pub fn prepare(&self, image: &ImageTensor, caption: &str) -> Result<PreparedImage> {
        let z0 = self.generator.encode_image(image)?;
        let c = self.generator.embed_caption(caption)?;
        let trajectory = ddim_invert(&z0, &c, self.config.ddim_steps, self.generator)?;
        let schedule = optimize_null_text(
            &trajectory,
            &self.config.null_text,
            self.config.guidance_scale,
            self.generator,
        )?;
        Ok(PreparedImage {
            image: image.clone(),
            caption: caption.to_string(),
            trajectory,
            schedule,
        })
    }

    /// Generates one candidate per grid value and returns the one with the
    /// lowest directional score, together with every candidate's outcome.
    pub fn select_tau(
        &self,
        prepared: &PreparedImage,
        edit: &CaptionEdit,
        gt_class: &str,
    ) -> Result<(CounterfactualExample, Vec<TauCandidate>)> {
        if edit.original != prepared.caption {
            return Err(Error::invalid(
                "edit",
                "original caption differs from the prepared caption",
            ));
        }
        let mut log = Vec::new();
        let result = argmin_tau(&self.config.tau_grid, |tau| {
            let outcome = self.candidate(prepared, edit, tau);
            log.push(TauCandidate {
                tau,
                score: outcome.as_ref().ok().map(|(o, _)| *o),
                error: outcome.as_ref().err().map(|e| e.to_string()),
            });
            outcome
        });
        let (tau, score, image) = result?;
        Ok((
            CounterfactualExample {
                image,
                source_image_id: prepared.image.id().to_string(),
                edit: edit.clone(),
                tau,
                directional_score: score,
                gt_class: gt_class.to_string(),
            },
            log,
        ))
    }

    fn candidate(&self, prepared: &PreparedImage, edit: &CaptionEdit, tau: f64) -> Result<(f64, ImageTensor)> {
        let request = EditRequest::new(prepared.image.clone(), &edit.original, &edit.perturbed, tau)?;
        let id = format!("{}__{}__{}", prepared.image.id(), edit.factor, format_tau(tau));
        let x_cf = edit_image(
            &request,
            &prepared.schedule,
            &prepared.trajectory,
            self.config.guidance_scale,
            self.generator,
            &id,
        )?;
        let o = directional_similarity(&prepared.image, &x_cf, &edit.original, &edit.perturbed, self.encoder)?;
        Ok((o, x_cf))
    }
}

/// One-shot `tau` selection: prepares the image and runs the grid.
pub fn select_tau(
    image: &ImageTensor,
    edit: &CaptionEdit,
    gt_class: &str,
    generator: &dyn Generator,
    encoder: &dyn JointEncoder,
    config: &EditorConfig,
) -> Result<(f64, CounterfactualExample)> {
    let editor = CounterfactualEditor::new(generator, encoder, config.clone());
    let prepared = editor.prepare(image, &edit.original)?;
    let (best, _) = editor.select_tau(&prepared, edit, gt_class)?;
    Ok((best.tau, best))
}

pub fn format_tau(tau: f64) -> String {
    format!("{tau:.2}")
}

/// Metadata line of a persisted counterfactual; `image` is a file name
/// relative to the set directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub image: String,
    pub source_image_id: String,
    pub edit: CaptionEdit,
    pub tau: f64,
    pub directional_score: f64,
    pub gt_class: String,
}

pub const METADATA_FILE: &str = "metadata.jsonl";

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Writes each image as `{source_id}__{factor}__{tau}.png` (a `__{n}` suffix
/// separates repeats) plus the metadata file. Returns the records written.
pub fn write_counterfactual_set(
    dir: &Path,
    examples: &[CounterfactualExample],
) -> Result<Vec<CounterfactualRecord>> {
    io_at(dir, std::fs::create_dir_all(dir))?;
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let mut records = Vec::with_capacity(examples.len());
    for ex in examples {
        let stem = format!(
            "{}__{}__{}",
            sanitize(&ex.source_image_id),
            ex.edit.factor,
            format_tau(ex.tau)
        );
        let n = used.entry(stem.clone()).or_insert(0);
        let name = if *n == 0 {
            format!("{stem}.png")
        } else {
            format!("{stem}__{n}.png")
        };
        *n += 1;
        imageio::save_png(&dir.join(&name), &ex.image)?;
        records.push(CounterfactualRecord {
            image: name,
            source_image_id: ex.source_image_id.clone(),
            edit: ex.edit.clone(),
            tau: ex.tau,
            directional_score: ex.directional_score,
            gt_class: ex.gt_class.clone(),
        });
    }
    util::write_jsonl(&dir.join(METADATA_FILE), &records)?;
    Ok(records)
}

pub fn read_counterfactual_records(dir: &Path) -> Result<Vec<CounterfactualRecord>> {
    util::read_jsonl(&dir.join(METADATA_FILE))
}

pub fn read_counterfactual_set(dir: &Path) -> Result<Vec<CounterfactualExample>> {
    read_counterfactual_records(dir)?
        .into_iter()
        .map(|r| {
            let stem = r.image.trim_end_matches(".png").to_string();
            let image = imageio::load_png(&dir.join(&r.image), &stem)?;
            if !(0.0..=2.0).contains(&r.directional_score) {
                return Err(Error::invalid(
                    "directional_score",
                    format!("{} outside [0, 2] in {}", r.directional_score, r.image),
                ));
            }
            Ok(CounterfactualExample {
                image,
                source_image_id: r.source_image_id,
                edit: r.edit,
                tau: r.tau,
                directional_score: r.directional_score,
                gt_class: r.gt_class,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::toy::AffineToyGenerator;

    fn generator() -> AffineToyGenerator {
        AffineToyGenerator::new((1, 1, 3), vec![(0.9, 0.1), (1.1, 0.05), (0.8, 0.2)])
            .unwrap()
            .with_inversion_mismatch(0.05)
    }

    fn z0() -> LatentVector {
        LatentVector::new(vec![0.2, 0.5, 0.9], 0).unwrap()
    }

    #[test]
    fn one_step_inversion_matches_hand_solution() {
        let g = AffineToyGenerator::new((1, 1, 3), vec![(0.9, 0.1)]).unwrap();
        let c = EmbeddingVector::new(vec![1.0, 0.0, -1.0]).unwrap();
        let tr = ddim_invert(&z0(), &c, 1, &g).unwrap();
        assert_eq!(tr.latents[0], z0());
        // z0 = 0.9 z1 + 0.1 c  =>  z1 = (z0 - 0.1 c) / 0.9
        let expect = [(0.2 - 0.1) / 0.9, 0.5 / 0.9, (0.9 + 0.1) / 0.9];
        for (a, b) in tr.latents[1].data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn null_text_matches_closed_form() {
        let g = generator();
        let c = EmbeddingVector::new(vec![0.3, -0.2, 0.1]).unwrap();
        let w = 7.5;
        let tr = ddim_invert(&z0(), &c, 3, &g).unwrap();
        let sched = optimize_null_text(&tr, &NullTextOptions::default(), w, &g).unwrap();
        let mut z_hat = tr.latents[3].data.clone();
        for k in (1..=3).rev() {
            let (a, b, d) = g.coefficients(k, w).unwrap();
            let closed: Vec<f64> = (0..3)
                .map(|i| (tr.latents[k - 1].data[i] - a * z_hat[i] - d * c.data[i]) / b)
                .collect();
            for (x, y) in sched.embedding(k).data.iter().zip(&closed) {
                assert!((x - y).abs() < 1e-6);
            }
            assert!(sched.residuals[k - 1] < 1e-10);
            z_hat = (0..3)
                .map(|i| a * z_hat[i] + b * closed[i] + d * c.data[i])
                .collect();
        }
        let back = reconstruct(&tr, &sched, w, &g).unwrap();
        for (a, b) in back.data.iter().zip(&z0().data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_learning_rate_makes_no_progress() {
        let g = generator();
        let c = EmbeddingVector::new(vec![0.3, -0.2, 0.1]).unwrap();
        let tr = ddim_invert(&z0(), &c, 1, &g).unwrap();
        let opts = NullTextOptions {
            steps_per_timestep: 1,
            learning_rate: 0.0,
            tolerance: 1e-12,
        };
        let sched = optimize_null_text(&tr, &opts, 7.5, &g).unwrap();
        let pred = g
            .denoise_step(&tr.latents[1], 1, &c, &g.null_embedding(), 7.5)
            .unwrap();
        let r = util::sub(&tr.latents[0].data, &pred.data);
        assert_eq!(sched.residuals[0], util::dot(&r, &r));
        assert!(!sched.converged[0]);
    }

    #[test]
    fn consistent_trajectory_needs_no_null_text() {
        let g = AffineToyGenerator::new((1, 1, 3), vec![(0.9, 0.1); 2]).unwrap();
        let c = EmbeddingVector::new(vec![0.3, -0.2, 0.1]).unwrap();
        // Exact inversion at guidance 1 would zero b; at w = 0 the sampler
        // is a z + eta ∅, so build the trajectory forward with ∅ = 0.
        let z2 = LatentVector::new(vec![1.0, 2.0, 3.0], 2).unwrap();
        let zero = g.null_embedding();
        let z1 = g.denoise_step(&z2, 2, &c, &zero, 0.0).unwrap();
        let z0 = g.denoise_step(&z1, 1, &c, &zero, 0.0).unwrap();
        let tr = InversionTrajectory {
            latents: vec![z0, z1, z2],
            caption_embedding: c,
        };
        let sched = optimize_null_text(&tr, &NullTextOptions::default(), 0.0, &g).unwrap();
        assert!(sched.residuals.iter().all(|r| *r < 1e-20));
        assert!(sched.embeddings.iter().all(|e| e.norm() < 1e-12));
    }

    #[test]
    fn schedule_length_mismatch_is_reported() {
        let g = generator();
        let c = EmbeddingVector::new(vec![0.0; 3]).unwrap();
        let tr = ddim_invert(&z0(), &c, 3, &g).unwrap();
        let mut sched = optimize_null_text(&tr, &NullTextOptions::default(), 7.5, &g).unwrap();
        sched.embeddings.pop();
        assert!(matches!(
            reconstruct(&tr, &sched, 7.5, &g),
            Err(Error::StepMismatch { .. })
        ));
    }

    #[test]
    fn inversion_failure_reports_progress() {
        let g = generator();
        let c = EmbeddingVector::new(vec![0.0; 3]).unwrap();
        let err = ddim_invert(&z0(), &c, 5, &g).unwrap_err();
        match err {
            Error::PartialTrajectory {
                completed,
                requested,
                ..
            } => assert_eq!((completed, requested), (3, 5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn directional_boundaries() {
        assert_eq!(directional_from_deltas(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), 0.0);
        assert_eq!(directional_from_deltas(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(directional_from_deltas(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(
            directional_from_deltas(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroDelta(_))
        ));
    }

    #[test]
    fn argmin_tau_grid_rules() {
        let (t, o, _) = argmin_tau(&default_tau_grid(), |t| Ok(((t - 0.4).powi(2) + 0.1, ()))).unwrap();
        assert!((t - 0.4).abs() < 1e-12 && (o - 0.1).abs() < 1e-12);
        let (t, _, _) = argmin_tau(&[0.5], |_| Ok((3.0, ()))).unwrap();
        assert_eq!(t, 0.5);
        let (t, _, _) = argmin_tau(&[0.7, 0.3], |_| Ok((1.0, ()))).unwrap();
        assert_eq!(t, 0.7);
        let (t, _, _) = argmin_tau(&[0.3, 0.7], |_| Ok((1.0, ()))).unwrap();
        assert_eq!(t, 0.7);
        let err = argmin_tau(&[0.2, 0.4], |_| -> Result<(f64, ())> { Err(Error::ZeroDelta("x")) })
            .unwrap_err();
        assert!(matches!(err, Error::AllCandidatesFailed(_)));
        assert!(argmin_tau(&[], |_| Ok((0.0, ()))).is_err());
        assert!(argmin_tau(&[1.5], |_| Ok((0.0, ()))).is_err());
    }

    #[test]
    fn injection_weights_cover_boundaries() {
        assert!((0..10).all(|i| injection_weight(1.0, 10, i) == 1.0));
        assert!((0..10).all(|i| injection_weight(0.0, 10, i) == 0.0));
        let w: Vec<f64> = (0..4).map(|i| injection_weight(0.5, 4, i)).collect();
        assert_eq!(w, [1.0, 1.0, 0.0, 0.0]);
    }
}
