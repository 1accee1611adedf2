//! Evaluation harness: transfer matrices across victim models,
//! integrated-gradients attribution through a chosen backward path, and
//! γ-vs-depth reports.

use crate::attack::{attack_success_rate, ifgsm, AdversarialBatch, AttackConfig};
use crate::data::Dataset;
use crate::model::ModelGraph;
use crate::reparam::{PathConfig, SiteKind};
use crate::tensor::Tensor;
use crate::{Error, Result};
use std::path::Path;

/// One attack source: a surrogate model plus the path its gradients flow
/// through, labeled for reporting.
pub struct AttackRow<'a> {
    pub label: String,
    pub surrogate: &'a ModelGraph<f32>,
    pub path: &'a PathConfig,
}

/// ASR fractions for every (row, victim) pair, annotated with the attack
/// metadata that produced them.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    pub row_labels: Vec<String>,
    pub victim_names: Vec<String>,
    pub cells: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub steps: usize,
    pub seed: u64,
}

impl TransferMatrix {
    /// CSV with `#` metadata lines, a header row of victim names, then one
    /// row per attack source.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# eps={} steps={} seed={}\n",
            self.epsilon, self.steps, self.seed
        );
        out.push_str("attack");
        for name in &self.victim_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.cells) {
            out.push_str(label);
            for cell in row {
                out.push_str(&format!(",{cell}"));
            }
            out.push('\n');
        }
        out
    }

    /// Indices of rows whose white-box cell (victim named like the row's
    /// surrogate) is below some black-box cell in the same row. Reported as
    /// a soft check; converged attacks rarely trip it.
    pub fn whitebox_dominance_violations(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, label) in self.row_labels.iter().enumerate() {
            let surrogate = label.split('+').next().unwrap_or(label);
            if let Some(col) = self.victim_names.iter().position(|v| v == surrogate) {
                let own = self.cells[i][col];
                if self.cells[i].iter().any(|&c| c > own) {
                    out.push(i);
                }
            }
        }
        out
    }
}

/// Crafts one adversarial batch per row and scores every victim on the
/// identical batch.
pub fn transfer_matrix(
    rows: &[AttackRow<'_>],
    victims: &[&ModelGraph<f32>],
    dataset: &Dataset,
    cfg: &AttackConfig,
) -> Result<(TransferMatrix, Vec<AdversarialBatch>)> {
    if rows.is_empty() || victims.is_empty() {
        return Err(Error::Configuration(
            "transfer matrix needs at least one row and one victim".into(),
        ));
    }
    let shape = dataset.example_shape();
    for victim in victims {
        let (c, h, w) = victim.arch().input_shape;
        if [c, h, w] != shape {
            return Err(Error::Configuration(format!(
                "victim `{}` expects input {:?} but dataset examples are {:?}",
                victim.name,
                (c, h, w),
                shape
            )));
        }
    }
    let mut cells = Vec::with_capacity(rows.len());
    let mut batches = Vec::with_capacity(rows.len());
    for row in rows {
        let batch = ifgsm(
            row.surrogate,
            row.path,
            &dataset.images,
            &dataset.labels,
            cfg,
        )?;
        let mut row_cells = Vec::with_capacity(victims.len());
        for victim in victims {
            row_cells.push(attack_success_rate(victim, &batch)?);
        }
        cells.push(row_cells);
        batches.push(batch);
    }
    Ok((
        TransferMatrix {
            row_labels: rows.iter().map(|r| r.label.clone()).collect(),
            victim_names: victims.iter().map(|v| v.name.clone()).collect(),
            cells,
            epsilon: cfg.epsilon,
            steps: cfg.steps,
            seed: cfg.seed,
        },
        batches,
    ))
}

/// Integrated-gradients settings: `steps` Riemann terms, all-zero baseline.
#[derive(Debug, Clone, Copy)]
pub struct AttributionConfig {
    pub steps: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig { steps: 64 }
    }
}

/// Integrated gradients of the target-class logit for one image (C, H, W) or
/// a singleton batch, with gradients taken through the path-rewired backward:
/// IG_i = (x_i − x'_i) · (1/m) Σ_{k=1..m} ∂f_target(x' + (k/m)(x−x'))/∂x_i
/// against the all-zero baseline x'.
pub fn integrated_gradients(
    model: &ModelGraph<f32>,
    path: &PathConfig,
    image: &Tensor<f32>,
    target_class: usize,
    cfg: &AttributionConfig,
) -> Result<Tensor<f32>> {
    if cfg.steps == 0 {
        return Err(Error::invalid("attribution needs at least one step"));
    }
    if target_class >= model.class_count() {
        return Err(Error::invalid(format!(
            "target class {target_class} out of range for {} classes",
            model.class_count()
        )));
    }
    let x = as_singleton_batch(image)?;
    let m = cfg.steps;
    let mut grad_sum = Tensor::<f32>::zeros(x.shape());
    for k in 1..=m {
        let alpha = k as f32 / m as f32;
        let point = x.scale(alpha);
        let (logits, tape) = model.forward(&point)?;
        let mut seed = Tensor::<f32>::zeros(logits.shape());
        seed.data_mut()[target_class] = 1.0;
        let grad = model.backward_with_path(&tape, &seed, path)?;
        grad_sum = grad_sum.add(&grad)?;
    }
    let attribution = grad_sum.scale(1.0 / m as f32).hadamard(&x)?;
    // reshape back to the caller's layout
    Tensor::new(image.shape().to_vec(), attribution.into_data())
}

fn as_singleton_batch(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    match image.shape() {
        [c, h, w] => Tensor::new(vec![1, *c, *h, *w], image.data().to_vec()),
        [1, _, _, _] => Ok(image.clone()),
        other => Err(Error::invalid(format!(
            "attribution expects one image (C, H, W), got {other:?}"
        ))),
    }
}

/// One γ-vs-depth report row.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaDepthRow {
    pub depth_fraction: f64,
    pub kind: SiteKind,
    pub layer_name: String,
    pub gamma: f64,
}

/// Every site's scaled depth and decay weight, in site order.
pub fn gamma_depth_report(model: &ModelGraph<f32>, path: &PathConfig) -> Result<Vec<GammaDepthRow>> {
    path.validate_for(model.sites())?;
    Ok(model
        .sites()
        .iter()
        .map(|s| GammaDepthRow {
            depth_fraction: s.depth_fraction,
            kind: s.kind,
            layer_name: s.layer_name.clone(),
            gamma: path.gamma(s.site_id).unwrap(),
        })
        .collect())
}

pub fn gamma_depth_csv(rows: &[GammaDepthRow]) -> String {
    let mut out = String::from("depth_fraction,kind,layer_name,gamma\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.depth_fraction,
            row.kind.as_str(),
            row.layer_name,
            row.gamma
        ));
    }
    out
}

/// Writes an attribution map as a binary PGM (P5): per-pixel |attribution|
/// summed over channels, min-max normalized to [0, 255]. A raw CSV of the
/// unnormalized per-pixel values lands next to it at `<path>.csv`.
pub fn export_heatmap(attribution: &Tensor<f32>, out: &Path) -> Result<()> {
    let (c, h, w) = match attribution.shape() {
        [c, h, w] => (*c, *h, *w),
        [1, c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::invalid(format!(
                "heatmap expects one attribution image, got {other:?}"
            )))
        }
    };
    let mut magnitude = vec![0f64; h * w];
    for ci in 0..c {
        for p in 0..h * w {
            magnitude[p] += attribution.data()[ci * h * w + p].abs() as f64;
        }
    }
    let max = magnitude.iter().cloned().fold(0.0, f64::max);
    let min = magnitude.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    let bytes: Vec<u8> = magnitude
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - min) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();

    let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
    pgm.extend(&bytes);
    std::fs::write(out, pgm)?;

    let mut csv = String::new();
    for y in 0..h {
        let row: Vec<String> = (0..w).map(|x| magnitude[y * w + x].to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let csv_path = out.with_extension(format!(
        "{}.csv",
        out.extension().and_then(|e| e.to_str()).unwrap_or("pgm")
    ));
    std::fs::write(csv_path, csv)?;
    Ok(())
}
