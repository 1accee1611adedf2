//! Skip-path rewiring of the backward pass.
//!
//! A convolution kernel k splits into a skip kernel I plus a residual kernel
//! k − I, so its gradient can flow through a skip connection weighted against
//! the residual term by a decay γ. ReLU gets a blended gradient between its
//! sparse mask and a linear pass-through scaled by the sparsity estimate α̂.
//! Residual additions get a γ on the branch gradient. Forward values never
//! change: the constant remainder terms carry no gradient and are never
//! materialized.
//!
//! A [`PathConfig`] assigns one γ per rewiring site; searching over these
//! weights is what the [`crate::search`] module does.

use crate::conv::{conv2d_backward_input, ConvSpec};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// What kind of module a rewiring site sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Conv,
    Activation,
    Residual,
}

impl SiteKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SiteKind::Conv => "conv",
            SiteKind::Activation => "activation",
            SiteKind::Residual => "residual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(SiteKind::Conv),
            "activation" => Ok(SiteKind::Activation),
            "residual" => Ok(SiteKind::Residual),
            other => Err(Error::invalid(format!("unknown site kind `{other}`"))),
        }
    }
}

/// One rewirable position in a model's forward graph. `site_id` numbers the
/// sites densely in topological order; `depth_fraction` is that index scaled
/// to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteDescriptor {
    pub site_id: usize,
    pub kind: SiteKind,
    pub layer_name: String,
    pub depth_fraction: f64,
}

/// Per-ReLU record taped during the forward pass: the positive mask M and the
/// sparsity estimate α̂ = ‖M‖₂ / ‖z‖₂ (clamped to [0, 1]).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSiteRecord<S = f32> {
    pub mask: Tensor<S>,
    pub alpha_hat: S,
}

/// The searched object: one decay weight γ ∈ [0, 1] per site.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathConfig {
    gammas: BTreeMap<usize, f64>,
}

impl PathConfig {
    pub fn new() -> Self {
        PathConfig::default()
    }

    pub fn from_gammas(gammas: BTreeMap<usize, f64>) -> Result<Self> {
        for (&id, &g) in &gammas {
            check_gamma_f64(g, id)?;
        }
        Ok(PathConfig { gammas })
    }

    pub fn set(&mut self, site_id: usize, gamma: f64) -> Result<()> {
        check_gamma_f64(gamma, site_id)?;
        self.gammas.insert(site_id, gamma);
        Ok(())
    }

    pub fn gamma(&self, site_id: usize) -> Option<f64> {
        self.gammas.get(&site_id).copied()
    }

    pub fn gammas(&self) -> &BTreeMap<usize, f64> {
        &self.gammas
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// The reference path: γ = 1 on conv and residual sites, γ = 0 on
    /// activation sites. Backward through it equals standard backpropagation.
    pub fn identity_for(sites: &[SiteDescriptor]) -> Self {
        let gammas = sites
            .iter()
            .map(|s| {
                let g = match s.kind {
                    SiteKind::Conv | SiteKind::Residual => 1.0,
                    SiteKind::Activation => 0.0,
                };
                (s.site_id, g)
            })
            .collect();
        PathConfig { gammas }
    }

    /// Checks this config covers exactly the given sites, no more, no less.
    pub fn validate_for(&self, sites: &[SiteDescriptor]) -> Result<()> {
        let missing: Vec<usize> = sites
            .iter()
            .map(|s| s.site_id)
            .filter(|id| !self.gammas.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "path config missing gamma for site ids {missing:?}"
            )));
        }
        let known: std::collections::BTreeSet<usize> = sites.iter().map(|s| s.site_id).collect();
        let extra: Vec<usize> = self
            .gammas
            .keys()
            .copied()
            .filter(|id| !known.contains(id))
            .collect();
        if !extra.is_empty() {
            return Err(Error::invalid(format!(
                "path config has gamma for unknown site ids {extra:?}"
            )));
        }
        Ok(())
    }

    /// Serializes to the path text format:
    /// a `#pas-path v1` header followed by one
    /// `site_id<TAB>kind<TAB>layer_name<TAB>gamma` line per site, gamma
    /// printed as its shortest round-trip decimal.
    pub fn to_text(&self, sites: &[SiteDescriptor]) -> Result<String> {
        self.validate_for(sites)?;
        let mut out = String::from("#pas-path v1\n");
        for site in sites {
            let gamma = self.gammas[&site.site_id];
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                site.site_id,
                site.kind.as_str(),
                site.layer_name,
                gamma
            ));
        }
        Ok(out)
    }

    /// Parses the path text format. The kind and layer-name columns are
    /// informative; only site ids and gammas bind.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("#pas-path v1") => {}
            other => {
                return Err(Error::invalid(format!(
                    "expected `#pas-path v1` header, got {other:?}"
                )))
            }
        }
        let mut gammas = BTreeMap::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::invalid(format!(
                    "path line {} has {} fields, expected 4",
                    lineno + 2,
                    fields.len()
                )));
            }
            let site_id: usize = fields[0]
                .parse()
                .map_err(|_| Error::invalid(format!("bad site id `{}`", fields[0])))?;
            SiteKind::parse(fields[1])?;
            let gamma: f64 = fields[3]
                .parse()
                .map_err(|_| Error::invalid(format!("bad gamma `{}`", fields[3])))?;
            check_gamma_f64(gamma, site_id)?;
            if gammas.insert(site_id, gamma).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate gamma for site id {site_id}"
                )));
            }
        }
        Ok(PathConfig { gammas })
    }

    pub fn write_to_file(&self, sites: &[SiteDescriptor], path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text(sites)?)?;
        Ok(())
    }

    pub fn read_from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Hex SHA-256 of the canonical text form; used to tie persisted
    /// artifacts to the path that produced them.
    pub fn content_hash(&self, sites: &[SiteDescriptor]) -> Result<String> {
        use sha2::{Digest, Sha256};
        let text = self.to_text(sites)?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn check_gamma_f64(gamma: f64, site_id: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) || gamma.is_nan() {
        return Err(Error::invalid(format!(
            "gamma {gamma} for site {site_id} outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_gamma<S: Scalar>(gamma: S) -> Result<()> {
    if gamma < S::zero() || gamma > S::one() || gamma.is_nan() {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    Ok(())
}

/// Skip kernel I for a conv site: 1 at the spatial center for every
/// (out, in) channel pair, 0 elsewhere. Convolving with I under the original
/// stride/padding computes a (strided) per-pixel channel sum, the conv
/// analogue of a skip connection.
pub fn make_skip_kernel<S: Scalar>(spec: &ConvSpec) -> Result<Tensor<S>> {
    if spec.kernel_h % 2 == 0 || spec.kernel_w % 2 == 0 {
        return Err(Error::UnsupportedConfiguration(format!(
            "skip kernel needs an odd kernel size for an unambiguous center, got {}x{}",
            spec.kernel_h, spec.kernel_w
        )));
    }
    let (cy, cx) = (spec.kernel_h / 2, spec.kernel_w / 2);
    let mut kernel = Tensor::zeros(&spec.kernel_shape());
    for o in 0..spec.out_channels {
        for i in 0..spec.in_channels {
            let idx = ((o * spec.in_channels + i) * spec.kernel_h + cy) * spec.kernel_w + cx;
            kernel.data_mut()[idx] = S::one();
        }
    }
    Ok(kernel)
}

/// Input gradient of a conv site under decay γ: the skip-kernel gradient plus
/// γ times the residual-kernel gradient. By kernel linearity this is a single
/// backward pass through γ·(k − I) + I; γ = 1 short-circuits to the original
/// kernel and γ = 0 to the bare skip kernel, keeping those reference cases
/// bit-exact.
pub fn skipconv_backward_input<S: Scalar>(
    grad_out: &Tensor<S>,
    input_shape: &[usize],
    kernel: &Tensor<S>,
    spec: &ConvSpec,
    gamma: S,
) -> Result<Tensor<S>> {
    check_gamma(gamma)?;
    if gamma == S::one() {
        return conv2d_backward_input(grad_out, kernel, spec, input_shape);
    }
    let skip = make_skip_kernel::<S>(spec)?;
    if gamma == S::zero() {
        return conv2d_backward_input(grad_out, &skip, spec, input_shape);
    }
    let residual = kernel.sub(&skip)?;
    let effective = residual.scale(gamma).add(&skip)?;
    conv2d_backward_input(grad_out, &effective, spec, input_shape)
}

/// Sparsity estimate α̂ = ‖mask‖₂ / ‖preactivation‖₂, clamped to [0, 1];
/// zero when the preactivation is all-zero.
pub fn linrelu_alpha<S: Scalar>(preactivation: &Tensor<S>, mask: &Tensor<S>) -> S {
    let denom = preactivation.norm_l2();
    if denom == S::zero() {
        return S::zero();
    }
    let alpha = mask.norm_l2() / denom;
    alpha.min(S::one()).max(S::zero())
}

/// ReLU backward under decay γ: with λ = γ·α̂, blends the linear pass-through
/// λ·g with the masked gradient (1 − λ)·(g ⊙ M). γ = 0 is the standard
/// sparse ReLU backward.
pub fn linrelu_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    record: &ActivationSiteRecord<S>,
    gamma: S,
) -> Result<Tensor<S>> {
    check_gamma(gamma)?;
    let lambda = gamma * record.alpha_hat;
    if lambda == S::zero() {
        return grad_out.hadamard(&record.mask);
    }
    if lambda == S::one() {
        return Ok(grad_out.clone());
    }
    let masked = grad_out.hadamard(&record.mask)?;
    masked
        .scale(S::one() - lambda)
        .add(&grad_out.scale(lambda))
}

/// Residual-addition backward under decay γ: the skip path passes `grad_out`
/// through unchanged and the branch contributes γ times its own backward.
/// γ = 0 skips the branch computation entirely.
pub fn skipgrad_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    branch_backward: impl FnOnce(&Tensor<S>) -> Result<Tensor<S>>,
    gamma: S,
) -> Result<Tensor<S>> {
    check_gamma(gamma)?;
    if gamma == S::zero() {
        return Ok(grad_out.clone());
    }
    let branch = branch_backward(grad_out)?;
    if gamma == S::one() {
        return grad_out.add(&branch);
    }
    grad_out.add(&branch.scale(gamma))
}
