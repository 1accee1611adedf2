//! Adversarial-example generation under the L∞ threat model, parameterized
//! by a backpropagation path.
//!
//! Crafting is embarrassingly parallel across examples: the batch is split
//! into fixed-size chunks and every random draw is derived from
//! (seed, example index, step), so results are byte-identical for any worker
//! count.

use crate::container::{Container, ContainerHeader, TensorEntry};
use crate::model::ModelGraph;
use crate::reparam::PathConfig;
use crate::tensor::{argmax_rows, sign, Tensor};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fixed crafting-partition size; fixed so chunked results do not depend on
/// the worker count.
const CHUNK: usize = 32;

/// Attack hyperparameters. `momentum_decay` = 0 disables momentum
/// accumulation, `di_probability` = 0 disables the diverse-input transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L∞ budget ε in pixel units.
    pub epsilon: f64,
    /// Step size η; `None` selects ε / steps.
    pub step_size: Option<f64>,
    /// Iteration count T.
    pub steps: usize,
    /// Momentum decay μ.
    pub momentum_decay: f64,
    /// Probability of applying the diverse-input transform per gradient
    /// computation.
    pub di_probability: f64,
    /// Lower bound of the uniform resize scale.
    pub di_min_scale: f64,
    /// Pixel value bounds.
    pub bounds: (f64, f64),
    /// Seed for the transform draws.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.1,
            step_size: None,
            steps: 10,
            momentum_decay: 0.0,
            di_probability: 0.0,
            di_min_scale: 0.875,
            bounds: (0.0, 1.0),
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// One-step configuration with step size ε.
    pub fn one_step(epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            step_size: Some(epsilon),
            steps: 1,
            ..Default::default()
        }
    }

    pub fn resolved_step_size(&self) -> f64 {
        self.step_size
            .unwrap_or(self.epsilon / self.steps.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::invalid("epsilon must be non-negative"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.resolved_step_size() <= 0.0 && self.epsilon > 0.0 {
            return Err(Error::invalid("step size must be positive"));
        }
        if self.momentum_decay < 0.0 {
            return Err(Error::invalid("momentum decay must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.di_probability) {
            return Err(Error::invalid("di probability must be in [0, 1]"));
        }
        if !(0.0 < self.di_min_scale && self.di_min_scale <= 1.0) {
            return Err(Error::invalid("di min scale must be in (0, 1]"));
        }
        if self.bounds.0 >= self.bounds.1 {
            return Err(Error::invalid("pixel bounds must be ordered"));
        }
        Ok(())
    }
}

/// Originals, adversarials, labels, and white-box success flags against
/// `flag_model`. `constraint_violations` counts per-step budget or bound
/// violations observed during crafting (always 0 for a correct projection).
#[derive(Debug, Clone)]
pub struct AdversarialBatch {
    pub originals: Tensor<f32>,
    pub adversarials: Tensor<f32>,
    pub labels: Vec<usize>,
    pub success: Vec<bool>,
    pub flag_model: String,
    pub constraint_violations: usize,
}

impl AdversarialBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks the batch invariants: ‖x_adv − x‖∞ ≤ ε + 1e-6 and pixel
    /// bounds.
    pub fn validate(&self, epsilon: f64, bounds: (f64, f64)) -> Result<()> {
        let delta = self.adversarials.sub(&self.originals)?;
        let linf = delta.max_abs() as f64;
        if linf > epsilon + 1e-6 {
            return Err(Error::invalid(format!(
                "batch violates the L-infinity budget: {linf} > {epsilon}"
            )));
        }
        let (lo, hi) = (bounds.0 as f32, bounds.1 as f32);
        if self
            .adversarials
            .data()
            .iter()
            .any(|&v| v < lo || v > hi)
        {
            return Err(Error::invalid("batch violates pixel bounds"));
        }
        Ok(())
    }

    /// Recomputes success flags against a model (used after loading a
    /// persisted batch, which stores tensors only).
    pub fn flag_against(&mut self, model: &ModelGraph<f32>) -> Result<()> {
        self.success = misclassified(model, &self.adversarials, &self.labels)?;
        self.flag_model = model.name.clone();
        Ok(())
    }
}

/// Element-wise projection of `x_adv` into the ε-ball around `x` intersected
/// with the pixel bounds.
pub fn project_linf(
    x_adv: &Tensor<f32>,
    x: &Tensor<f32>,
    epsilon: f64,
    bounds: (f64, f64),
) -> Result<Tensor<f32>> {
    let eps = epsilon as f32;
    let (lo, hi) = (bounds.0 as f32, bounds.1 as f32);
    x_adv.zip(x, |v, orig| {
        v.max(orig - eps).min(orig + eps).max(lo).min(hi)
    })
}

/// One signed-gradient step of size ε through the path-rewired backward,
/// clamped to pixel bounds.
pub fn fgsm_step(
    model: &ModelGraph<f32>,
    path: &PathConfig,
    x: &Tensor<f32>,
    labels: &[usize],
    epsilon: f64,
) -> Result<Tensor<f32>> {
    let eps = epsilon as f32;
    let grad = model.loss_input_gradient(x, labels, path)?;
    let direction = sign(&grad);
    let stepped = x.zip(&direction, |xv, s| xv + eps * s)?;
    Ok(stepped.map(|v| v.max(0.0).min(1.0)))
}

fn misclassified(
    model: &ModelGraph<f32>,
    images: &Tensor<f32>,
    labels: &[usize],
) -> Result<Vec<bool>> {
    let logits = model.forward_logits(images)?;
    let preds = argmax_rows(&logits)?;
    Ok(preds.iter().zip(labels).map(|(p, y)| p != y).collect())
}

/// Fraction of batch examples the victim misclassifies (argmax ties broken
/// toward the lowest class index).
pub fn attack_success_rate(victim: &ModelGraph<f32>, batch: &AdversarialBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("cannot score an empty batch"));
    }
    let n = batch.len();
    let [c, h, w] = [
        batch.adversarials.shape()[1],
        batch.adversarials.shape()[2],
        batch.adversarials.shape()[3],
    ];
    let stride = c * h * w;
    let wrong: Result<usize> = (0..n)
        .step_by(64)
        .map(|s| (s, (s + 64).min(n)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(s, e)| {
            let images = Tensor::new(
                vec![e - s, c, h, w],
                batch.adversarials.data()[s * stride..e * stride].to_vec(),
            )?;
            let flags = misclassified(victim, &images, &batch.labels[s..e])?;
            Ok(flags.iter().filter(|&&f| f).count())
        })
        .collect::<Result<Vec<_>>>()
        .map(|counts| counts.iter().sum());
    Ok(wrong? as f64 / n as f64)
}

/// Parameters of one diverse-input draw.
#[derive(Debug, Clone, Copy)]
struct DiDraw {
    applied: bool,
    new_h: usize,
    new_w: usize,
    off_y: usize,
    off_x: usize,
}

fn di_draw(rng: &mut impl Rng, p: f64, min_scale: f64, h: usize, w: usize) -> DiDraw {
    let identity = DiDraw {
        applied: false,
        new_h: h,
        new_w: w,
        off_y: 0,
        off_x: 0,
    };
    if p <= 0.0 || rng.gen_range(0.0..1.0) >= p {
        return identity;
    }
    let scale = rng.gen_range(min_scale..=1.0);
    let new_h = ((h as f64 * scale).round() as usize).clamp(1, h);
    let new_w = ((w as f64 * scale).round() as usize).clamp(1, w);
    let off_y = rng.gen_range(0..=h - new_h);
    let off_x = rng.gen_range(0..=w - new_w);
    DiDraw {
        applied: true,
        new_h,
        new_w,
        off_y,
        off_x,
    }
}

/// Nearest-neighbor source row/column for a resized position.
#[inline]
fn nn_src(pos: usize, new_extent: usize, extent: usize) -> usize {
    (((pos as f64 + 0.5) * extent as f64 / new_extent as f64) as usize).min(extent - 1)
}

/// Shrink one (C, H, W) image to (new_h, new_w) by nearest neighbor and
/// zero-pad it back at the drawn offset.
fn di_apply_image(image: &[f32], c: usize, h: usize, w: usize, draw: &DiDraw) -> Vec<f32> {
    if !draw.applied {
        return image.to_vec();
    }
    let mut out = vec![0f32; c * h * w];
    for ci in 0..c {
        for y in 0..draw.new_h {
            let sy = nn_src(y, draw.new_h, h);
            for x in 0..draw.new_w {
                let sx = nn_src(x, draw.new_w, w);
                out[(ci * h + draw.off_y + y) * w + draw.off_x + x] =
                    image[(ci * h + sy) * w + sx];
            }
        }
    }
    out
}

/// Exact adjoint of [`di_apply_image`]: gradients at padded positions
/// scatter-add back onto their nearest-neighbor source pixels.
fn di_adjoint_image(grad: &[f32], c: usize, h: usize, w: usize, draw: &DiDraw) -> Vec<f32> {
    if !draw.applied {
        return grad.to_vec();
    }
    let mut out = vec![0f32; c * h * w];
    for ci in 0..c {
        for y in 0..draw.new_h {
            let sy = nn_src(y, draw.new_h, h);
            for x in 0..draw.new_w {
                let sx = nn_src(x, draw.new_w, w);
                out[(ci * h + sy) * w + sx] +=
                    grad[(ci * h + draw.off_y + y) * w + draw.off_x + x];
            }
        }
    }
    out
}

/// Diverse-input transform over a batch: with probability `p` per example,
/// shrink to a uniform scale in [min_scale, 1] by nearest neighbor and
/// zero-pad back to the original size at a random offset. Output shape always
/// equals input shape.
pub fn di_transform(
    x: &Tensor<f32>,
    p: f64,
    min_scale: f64,
    rng: &mut impl Rng,
) -> Result<Tensor<f32>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::invalid(format!(
            "diverse-input transform expects NCHW, got {s:?}"
        )));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let stride = c * h * w;
    let mut out = Vec::with_capacity(n * stride);
    for i in 0..n {
        let draw = di_draw(rng, p, min_scale, h, w);
        out.extend(di_apply_image(
            &x.data()[i * stride..(i + 1) * stride],
            c,
            h,
            w,
            &draw,
        ));
    }
    Tensor::new(s.to_vec(), out)
}

/// Per-(seed, example, step) rng so crafting is deterministic under any
/// partitioning.
fn example_rng(seed: u64, example: usize, step: usize) -> ChaCha8Rng {
    let tag = seed
        ^ (example as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (step as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    ChaCha8Rng::seed_from_u64(tag)
}

/// Iterative FGSM with optional momentum accumulation and diverse inputs:
/// T projected signed-gradient steps of size η through the path-rewired
/// backward of `model`.
pub fn ifgsm(
    model: &ModelGraph<f32>,
    path: &PathConfig,
    x: &Tensor<f32>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    cfg.validate()?;
    let s = x.shape();
    if s.len() != 4 || s[0] != labels.len() {
        return Err(Error::invalid(format!(
            "attack input shape {s:?} does not match {} labels",
            labels.len()
        )));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let stride = c * h * w;

    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK).min(n)))
        .collect();
    let results: Vec<Result<(Vec<f32>, Vec<bool>, usize)>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let count = end - start;
            let originals = Tensor::new(
                vec![count, c, h, w],
                x.data()[start * stride..end * stride].to_vec(),
            )?;
            let chunk_labels = &labels[start..end];
            let adv = craft_chunk(model, path, &originals, chunk_labels, cfg, start)?;
            let flags = misclassified(model, &adv.0, chunk_labels)?;
            Ok((adv.0.into_data(), flags, adv.1))
        })
        .collect();

    let mut adv_data = Vec::with_capacity(n * stride);
    let mut success = Vec::with_capacity(n);
    let mut violations = 0usize;
    for result in results {
        let (data, flags, viol) = result?;
        adv_data.extend(data);
        success.extend(flags);
        violations += viol;
    }

    let batch = AdversarialBatch {
        originals: x.clone(),
        adversarials: Tensor::new(s.to_vec(), adv_data)?,
        labels: labels.to_vec(),
        success,
        flag_model: model.name.clone(),
        constraint_violations: violations,
    };
    batch.validate(cfg.epsilon, cfg.bounds)?;
    Ok(batch)
}

/// The per-chunk crafting loop. Returns the adversarials and the number of
/// per-step constraint violations observed (0 unless the projection is
/// broken).
fn craft_chunk(
    model: &ModelGraph<f32>,
    path: &PathConfig,
    originals: &Tensor<f32>,
    labels: &[usize],
    cfg: &AttackConfig,
    global_offset: usize,
) -> Result<(Tensor<f32>, usize)> {
    let n = labels.len();
    let s = originals.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let stride = c * h * w;
    let eta = cfg.resolved_step_size() as f32;
    let mu = cfg.momentum_decay as f32;
    let use_di = cfg.di_probability > 0.0;
    let use_momentum = cfg.momentum_decay > 0.0;

    let mut x_adv = originals.clone();
    let mut momentum = if use_momentum {
        Some(Tensor::<f32>::zeros(s))
    } else {
        None
    };
    let mut violations = 0usize;

    for step in 0..cfg.steps {
        let grad_input = if use_di {
            let mut draws = Vec::with_capacity(n);
            let mut transformed = Vec::with_capacity(n * stride);
            for i in 0..n {
                let mut rng = example_rng(cfg.seed, global_offset + i, step);
                let draw = di_draw(&mut rng, cfg.di_probability, cfg.di_min_scale, h, w);
                transformed.extend(di_apply_image(
                    &x_adv.data()[i * stride..(i + 1) * stride],
                    c,
                    h,
                    w,
                    &draw,
                ));
                draws.push(draw);
            }
            let transformed = Tensor::new(s.to_vec(), transformed)?;
            let grad = model.loss_input_gradient(&transformed, labels, path)?;
            let mut pulled = Vec::with_capacity(n * stride);
            for (i, draw) in draws.iter().enumerate() {
                pulled.extend(di_adjoint_image(
                    &grad.data()[i * stride..(i + 1) * stride],
                    c,
                    h,
                    w,
                    draw,
                ));
            }
            Tensor::new(s.to_vec(), pulled)?
        } else {
            model.loss_input_gradient(&x_adv, labels, path)?
        };

        let direction = if let Some(acc) = momentum.as_mut() {
            // g ← μ·g + ∇/‖∇‖₁ per example
            for i in 0..n {
                let g = &grad_input.data()[i * stride..(i + 1) * stride];
                let l1: f32 = g.iter().map(|v| v.abs()).sum();
                let acc_slice = &mut acc.data_mut()[i * stride..(i + 1) * stride];
                if l1 > 0.0 {
                    for (a, &gv) in acc_slice.iter_mut().zip(g) {
                        *a = mu * *a + gv / l1;
                    }
                } else {
                    for a in acc_slice.iter_mut() {
                        *a *= mu;
                    }
                }
            }
            sign(acc)
        } else {
            sign(&grad_input)
        };

        let stepped = x_adv.zip(&direction, |v, d| v + eta * d)?;
        x_adv = project_linf(&stepped, originals, cfg.epsilon, cfg.bounds)?;

        // per-step constraint audit
        let eps_tol = cfg.epsilon as f32 + 1e-6;
        let (lo, hi) = (cfg.bounds.0 as f32, cfg.bounds.1 as f32);
        for (&a, &o) in x_adv.data().iter().zip(originals.data()) {
            if (a - o).abs() > eps_tol || a < lo || a > hi {
                violations += 1;
            }
        }
    }

    Ok((x_adv, violations))
}

/// JSON header for persisted adversarial batches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchHeader {
    pub kind: String,
    pub attack: AttackConfig,
    pub path_sha256: String,
    pub surrogate: String,
    pub flag_model: String,
    pub tensors: Vec<TensorEntry>,
}

pub const BATCH_KIND: &str = "adversarial-batch";

impl ContainerHeader for BatchHeader {
    fn manifest(&self) -> &[TensorEntry] {
        &self.tensors
    }
    fn set_manifest(&mut self, manifest: Vec<TensorEntry>) {
        self.tensors = manifest;
    }
}

/// Persists a batch as a `PASC` container holding tensors `x`, `x_adv`, `y`
/// plus the attack configuration and the hash of the path that crafted it.
pub fn save_batch(
    batch: &AdversarialBatch,
    attack: &AttackConfig,
    path_sha256: &str,
    surrogate: &str,
    out: &Path,
) -> Result<()> {
    let labels: Vec<f32> = batch.labels.iter().map(|&y| y as f32).collect();
    let mut container = Container::new(
        BatchHeader {
            kind: BATCH_KIND.to_string(),
            attack: attack.clone(),
            path_sha256: path_sha256.to_string(),
            surrogate: surrogate.to_string(),
            flag_model: batch.flag_model.clone(),
            tensors: vec![],
        },
        vec![
            ("x".to_string(), batch.originals.clone()),
            ("x_adv".to_string(), batch.adversarials.clone()),
            (
                "y".to_string(),
                Tensor::new(vec![labels.len()], labels)?,
            ),
        ],
    );
    container.save(out)
}

/// Loads a persisted batch. Success flags are not part of the container;
/// call [`AdversarialBatch::flag_against`] to recompute them.
pub fn load_batch(path: &Path) -> Result<(AdversarialBatch, BatchHeader)> {
    let container = Container::<BatchHeader>::load(path)?;
    if container.header.kind != BATCH_KIND {
        return Err(Error::format(
            12,
            format!("container kind `{}` is not an {BATCH_KIND}", container.header.kind),
        ));
    }
    let originals = container.tensor("x")?.clone();
    let adversarials = container.tensor("x_adv")?.clone();
    let labels: Vec<usize> = container
        .tensor("y")?
        .data()
        .iter()
        .map(|&v| v as usize)
        .collect();
    let batch = AdversarialBatch {
        originals,
        adversarials,
        labels,
        success: vec![],
        flag_model: container.header.flag_model.clone(),
        constraint_violations: 0,
    };
    batch.validate(container.header.attack.epsilon, container.header.attack.bounds)?;
    Ok((batch, container.header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ArchitectureSpec};
    use rand::rngs::StdRng;

    fn toy_model(seed: u64) -> ModelGraph<f32> {
        let spec = ArchitectureSpec::plain_cnn((1, 12, 12), 4, &[4, 8]);
        build_model(&spec, seed).unwrap()
    }

    fn random_images(n: usize, seed: u64) -> Tensor<f32> {
        let mut rng = StdRng::seed_from_u64(seed);
        Tensor::from_fn(&[n, 1, 12, 12], |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn projection_hand_case() {
        let x = Tensor::new(vec![1], vec![0.5f32]).unwrap();
        let x_adv = Tensor::new(vec![1], vec![0.9f32]).unwrap();
        let projected = project_linf(&x_adv, &x, 0.1, (0.0, 1.0)).unwrap();
        assert!((projected.data()[0] - 0.6).abs() < 1e-7);
    }

    #[test]
    fn projection_zero_epsilon_returns_original() {
        let x = random_images(2, 40);
        let x_adv = random_images(2, 41);
        let projected = project_linf(&x_adv, &x, 0.0, (0.0, 1.0)).unwrap();
        assert!(projected.max_abs_diff(&x) < 1e-7);
    }

    #[test]
    fn projection_satisfies_both_constraints() {
        let x = random_images(4, 42);
        let x_adv = x.map(|v| v + 0.7);
        let projected = project_linf(&x_adv, &x, 0.25, (0.0, 1.0)).unwrap();
        for (&p, &o) in projected.data().iter().zip(x.data()) {
            assert!((p - o).abs() <= 0.25 + 1e-6);
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let model = toy_model(1);
        let x = random_images(3, 43);
        let adv = fgsm_step(&model, &model.identity_path(), &x, &[0, 1, 2], 0.0).unwrap();
        assert_eq!(adv, x.map(|v| v.max(0.0).min(1.0)));
    }

    #[test]
    fn ifgsm_single_step_reduces_to_fgsm() {
        let model = toy_model(2);
        let x = random_images(5, 44);
        let labels = [0usize, 1, 2, 3, 0];
        let cfg = AttackConfig::one_step(0.08);
        let batch = ifgsm(&model, &model.identity_path(), &x, &labels, &cfg).unwrap();
        let direct = fgsm_step(&model, &model.identity_path(), &x, &labels, 0.08).unwrap();
        assert_eq!(batch.adversarials.data(), direct.data());
        assert_eq!(batch.constraint_violations, 0);
    }

    #[test]
    fn momentum_recurrence_matches_hand_rolled_oracle() {
        let model = toy_model(3);
        let x = random_images(2, 45);
        let labels = [1usize, 3];
        let path = model.identity_path();
        let cfg = AttackConfig {
            epsilon: 0.1,
            step_size: Some(0.02),
            steps: 3,
            momentum_decay: 0.9,
            ..Default::default()
        };
        let batch = ifgsm(&model, &path, &x, &labels, &cfg).unwrap();

        // hand-rolled recurrence on the same primitives
        let stride = 12 * 12;
        let mut x_adv = x.clone();
        let mut acc = Tensor::<f32>::zeros(x.shape());
        for _ in 0..3 {
            let grad = model.loss_input_gradient(&x_adv, &labels, &path).unwrap();
            for i in 0..2 {
                let g = &grad.data()[i * stride..(i + 1) * stride];
                let l1: f32 = g.iter().map(|v| v.abs()).sum();
                let a = &mut acc.data_mut()[i * stride..(i + 1) * stride];
                for (av, &gv) in a.iter_mut().zip(g) {
                    *av = 0.9 * *av + gv / l1;
                }
            }
            let stepped = x_adv.zip(&sign(&acc), |v, d| v + 0.02 * d).unwrap();
            x_adv = project_linf(&stepped, &x, 0.1, (0.0, 1.0)).unwrap();
        }
        assert_eq!(batch.adversarials.data(), x_adv.data());

        // and momentum genuinely changes the trajectory
        let cfg_plain = AttackConfig {
            momentum_decay: 0.0,
            ..cfg
        };
        let plain = ifgsm(&model, &path, &x, &labels, &cfg_plain).unwrap();
        assert_ne!(plain.adversarials.data(), batch.adversarials.data());
    }

    #[test]
    fn di_zero_probability_is_identity() {
        let x = random_images(3, 46);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = di_transform(&x, 0.0, 0.875, &mut rng).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn di_full_scale_is_identity() {
        let x = random_images(3, 47);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = di_transform(&x, 1.0, 1.0, &mut rng).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn di_is_seeded_and_shape_preserving() {
        let x = random_images(4, 48);
        for seed in 0..100u64 {
            let mut ra = ChaCha8Rng::seed_from_u64(seed);
            let mut rb = ChaCha8Rng::seed_from_u64(seed);
            let a = di_transform(&x, 0.7, 0.6, &mut ra).unwrap();
            let b = di_transform(&x, 0.7, 0.6, &mut rb).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.shape(), x.shape());
        }
    }

    #[test]
    fn di_adjoint_is_exact() {
        // ⟨T(x), g⟩ == ⟨x, Tᵀ(g)⟩ for the resize+pad map
        let mut rng = StdRng::seed_from_u64(49);
        let (c, h, w) = (2usize, 9usize, 9usize);
        let x: Vec<f32> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f32> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let draw = DiDraw {
            applied: true,
            new_h: 6,
            new_w: 7,
            off_y: 2,
            off_x: 1,
        };
        let tx = di_apply_image(&x, c, h, w, &draw);
        let tg = di_adjoint_image(&g, c, h, w, &draw);
        let lhs: f32 = tx.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&tg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn crafting_is_deterministic() {
        let model = toy_model(4);
        let x = random_images(6, 50);
        let labels = [0usize, 1, 2, 3, 0, 1];
        let cfg = AttackConfig {
            epsilon: 0.1,
            steps: 4,
            momentum_decay: 1.0,
            di_probability: 0.5,
            seed: 9,
            ..Default::default()
        };
        let a = ifgsm(&model, &model.identity_path(), &x, &labels, &cfg).unwrap();
        let b = ifgsm(&model, &model.identity_path(), &x, &labels, &cfg).unwrap();
        assert_eq!(a.adversarials.data(), b.adversarials.data());
    }

    #[test]
    fn asr_trivial_cases() {
        let model = toy_model(5);
        let data = random_images(20, 51);
        let logits = model.forward_logits(&data).unwrap();
        let preds = argmax_rows(&logits).unwrap();

        // all "correct" labels → ASR 0
        let correct = AdversarialBatch {
            originals: data.clone(),
            adversarials: data.clone(),
            labels: preds.clone(),
            success: vec![],
            flag_model: String::new(),
            constraint_violations: 0,
        };
        assert_eq!(attack_success_rate(&model, &correct).unwrap(), 0.0);

        // permuted labels so every prediction is wrong → ASR 1
        let wrong_labels: Vec<usize> = preds.iter().map(|&p| (p + 1) % 4).collect();
        let wrong = AdversarialBatch {
            labels: wrong_labels,
            ..correct
        };
        assert_eq!(attack_success_rate(&model, &wrong).unwrap(), 1.0);
    }

    #[test]
    fn asr_untrained_victim_is_near_point_nine() {
        // an untrained 10-class model predicts nearly uniformly
        let spec = ArchitectureSpec::plain_cnn((1, 12, 12), 10, &[8, 8]);
        let victim = build_model(&spec, 99).unwrap();
        let n = 400;
        let mut rng = StdRng::seed_from_u64(52);
        let images = Tensor::from_fn(&[n, 1, 12, 12], |_| rng.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let batch = AdversarialBatch {
            originals: images.clone(),
            adversarials: images,
            labels,
            success: vec![],
            flag_model: String::new(),
            constraint_violations: 0,
        };
        let asr = attack_success_rate(&victim, &batch).unwrap();
        assert!((0.8..=0.97).contains(&asr), "asr {asr}");
    }

    #[test]
    fn batch_round_trips_through_container() {
        let model = toy_model(6);
        let x = random_images(4, 53);
        let labels = [0usize, 1, 2, 3];
        let cfg = AttackConfig {
            epsilon: 0.05,
            steps: 2,
            ..Default::default()
        };
        let batch = ifgsm(&model, &model.identity_path(), &x, &labels, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("batch.pasc");
        save_batch(&batch, &cfg, "abc123", &model.name, &file).unwrap();
        let (loaded, header) = load_batch(&file).unwrap();
        assert_eq!(loaded.originals.data(), batch.originals.data());
        assert_eq!(loaded.adversarials.data(), batch.adversarials.data());
        assert_eq!(loaded.labels, batch.labels);
        assert_eq!(header.path_sha256, "abc123");
        assert_eq!(header.attack.steps, 2);
    }
}
