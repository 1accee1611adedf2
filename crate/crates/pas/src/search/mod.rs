//! Path search: sample candidate paths (TPE or uniform random), score them
//! with the one-step transfer proxy against a validation model, allocate
//! evaluation examples via Hyperband, and keep a chi-square window of paths
//! statistically indistinguishable from the best.

mod hyperband;
mod stats;
mod tpe;

pub use hyperband::{hyperband_plan, rungs_for, BracketPlan, HyperbandPlan, HyperbandSettings, RungPlan};
pub use stats::{chi_square_stat, chi_square_threshold, is_significant, spearman};
pub use tpe::{tpe_sample, TpeParams};

use crate::attack::fgsm_step;
use crate::data::Dataset;
use crate::model::ModelGraph;
use crate::reparam::{PathConfig, SiteDescriptor};
use crate::tensor::argmax_rows;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Tpe,
    Random,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tpe" => Ok(SamplerKind::Tpe),
            "random" => Ok(SamplerKind::Random),
            other => Err(Error::Configuration(format!(
                "unknown sampler `{other}` (expected tpe or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Number of sampled paths N_t.
    pub trials: usize,
    /// Maximum evaluation examples per trial (the full Hyperband resource).
    pub eval_n: usize,
    /// Reference labels for logs and manifests.
    pub surrogate: String,
    pub validation: String,
    /// One-step attack budget ε.
    pub epsilon: f64,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub hyperband: HyperbandSettings,
    pub tpe: TpeParams,
    /// Confidence level of the significance window.
    pub significance_level: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            trials: 2000,
            eval_n: 256,
            surrogate: String::new(),
            validation: String::new(),
            epsilon: 0.1,
            seed: 0,
            sampler: SamplerKind::Tpe,
            hyperband: HyperbandSettings::default(),
            tpe: TpeParams::default(),
            significance_level: 0.95,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Configuration("trials must be at least 1".into()));
        }
        if self.eval_n == 0 {
            return Err(Error::Configuration("eval-n must be at least 1".into()));
        }
        if self.hyperband.enabled
            && !(1..=self.eval_n).contains(&self.hyperband.min_resource)
        {
            return Err(Error::Configuration(format!(
                "hyperband min resource must be in [1, {}]",
                self.eval_n
            )));
        }
        if self.epsilon < 0.0 {
            return Err(Error::Configuration("epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Completed,
    Pruned,
}

/// One sampled path with its latest (resource, score) evaluation.
#[derive(Debug, Clone)]
pub struct Trial {
    pub id: usize,
    pub path: PathConfig,
    pub resource: usize,
    pub score: f64,
    pub status: TrialStatus,
}

/// Completed trials whose scores are not significantly different from the
/// best, per the chi-square test at the configured confidence level.
#[derive(Debug, Clone)]
pub struct SignificanceWindow {
    pub threshold: f64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SearchHistory {
    pub trials: Vec<Trial>,
    pub window: SignificanceWindow,
}

impl SearchHistory {
    pub fn completed(&self) -> impl Iterator<Item = &Trial> {
        self.trials
            .iter()
            .filter(|t| t.status == TrialStatus::Completed)
    }

    /// CSV with one row per trial; `path_file` columns reference the
    /// per-trial path files written next to the history.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial_id,resource,score,status,path_file\n");
        for t in &self.trials {
            let status = match t.status {
                TrialStatus::Completed => "completed",
                TrialStatus::Pruned => "pruned",
            };
            out.push_str(&format!(
                "{},{},{},{},paths/trial_{:06}.path\n",
                t.id, t.resource, t.score, status, t.id
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_trial: usize,
    pub best_path: PathConfig,
    pub best_score: f64,
    pub history: SearchHistory,
}

/// One-step transfer score of a path: craft single-step adversarial examples
/// against the path-rewired surrogate at budget ε and report the fraction the
/// validation model misclassifies.
pub fn evaluate_path(
    path: &PathConfig,
    surrogate: &ModelGraph<f32>,
    validation: &ModelGraph<f32>,
    examples: &Dataset,
    epsilon: f64,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot evaluate a path on zero examples"));
    }
    let adv = fgsm_step(surrogate, path, &examples.images, &examples.labels, epsilon)?;
    let logits = validation.forward_logits(&adv)?;
    let preds = argmax_rows(&logits)?;
    let wrong = preds
        .iter()
        .zip(&examples.labels)
        .filter(|(p, y)| p != y)
        .count();
    Ok(wrong as f64 / examples.len() as f64)
}

fn sites_to_vec(path: &PathConfig, sites: &[SiteDescriptor]) -> Vec<f64> {
    sites
        .iter()
        .map(|s| path.gamma(s.site_id).unwrap_or(0.0))
        .collect()
}

fn vec_to_path(values: &[f64], sites: &[SiteDescriptor]) -> Result<PathConfig> {
    let mut path = PathConfig::new();
    for (site, &v) in sites.iter().zip(values) {
        path.set(site.site_id, v)?;
    }
    Ok(path)
}

struct SearchState<'a> {
    cfg: &'a SearchConfig,
    surrogate: &'a ModelGraph<f32>,
    validation: &'a ModelGraph<f32>,
    examples: &'a Dataset,
    rng: ChaCha8Rng,
    trials: Vec<Trial>,
}

impl<'a> SearchState<'a> {
    fn observations(&self) -> Vec<(Vec<f64>, f64)> {
        self.trials
            .iter()
            .filter(|t| t.status == TrialStatus::Completed)
            .map(|t| (sites_to_vec(&t.path, self.surrogate.sites()), t.score))
            .collect()
    }

    fn sample_path(&mut self) -> Result<PathConfig> {
        let sites = self.surrogate.sites();
        let dims = sites.len();
        let values = match self.cfg.sampler {
            SamplerKind::Random => (0..dims)
                .map(|_| self.rng.gen_range(0.0..=1.0))
                .collect::<Vec<f64>>(),
            SamplerKind::Tpe => {
                let observations = self.observations();
                tpe_sample(&observations, dims, &self.cfg.tpe, &mut self.rng)
            }
        };
        vec_to_path(&values, sites)
    }

    /// Evaluates the given trial ids on the first `resource` examples,
    /// in parallel, merging results back in trial order.
    fn evaluate_rung(&mut self, ids: &[usize], resource: usize) -> Result<()> {
        let subset = self.examples.take(resource)?;
        let scored: Vec<Result<f64>> = ids
            .par_iter()
            .map(|&id| {
                evaluate_path(
                    &self.trials[id].path,
                    self.surrogate,
                    self.validation,
                    &subset,
                    self.cfg.epsilon,
                )
            })
            .collect();
        for (&id, score) in ids.iter().zip(scored) {
            let trial = &mut self.trials[id];
            trial.score = score?;
            trial.resource = resource;
            if resource == self.cfg.eval_n {
                trial.status = TrialStatus::Completed;
            }
        }
        Ok(())
    }

    /// Successive halving over freshly sampled trial ids.
    fn run_bracket(&mut self, ids: Vec<usize>, rungs: &[RungPlan]) -> Result<()> {
        let mut active = ids;
        for (i, rung) in rungs.iter().enumerate() {
            if active.is_empty() {
                break;
            }
            self.evaluate_rung(&active, rung.resource)?;
            if i + 1 < rungs.len() {
                // promote the top floor(n/eta); ties broken by earlier id
                active.sort_by(|&a, &b| {
                    self.trials[b]
                        .score
                        .partial_cmp(&self.trials[a].score)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                let keep = active.len() / self.cfg.hyperband.eta;
                active.truncate(keep);
            }
        }
        Ok(())
    }
}

/// Runs the full search loop and returns the best full-resource path plus
/// the complete trial history.
///
/// Only trials completed at full resource compete for best; when none exist
/// (tiny budgets where every trial is pruned mid-bracket), the best-scoring
/// trial at any resource is returned instead.
pub fn run_search(
    cfg: &SearchConfig,
    surrogate: &ModelGraph<f32>,
    validation: &ModelGraph<f32>,
    examples: &Dataset,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if examples.len() < cfg.eval_n {
        return Err(Error::Configuration(format!(
            "need at least eval-n = {} evaluation examples, got {}",
            cfg.eval_n,
            examples.len()
        )));
    }
    let eval_examples = examples.take(cfg.eval_n)?;
    let mut state = SearchState {
        cfg,
        surrogate,
        validation,
        examples: &eval_examples,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        trials: Vec::with_capacity(cfg.trials),
    };

    let plan = if cfg.hyperband.enabled {
        Some(hyperband_plan(
            cfg.eval_n,
            cfg.hyperband.eta,
            cfg.hyperband.min_resource,
        )?)
    } else {
        None
    };

    let mut bracket_cursor = 0usize;
    while state.trials.len() < cfg.trials {
        let remaining = cfg.trials - state.trials.len();
        let (count, rungs) = match &plan {
            Some(plan) => {
                let bracket = &plan.brackets[bracket_cursor % plan.brackets.len()];
                bracket_cursor += 1;
                let count = bracket.configs.min(remaining);
                // truncated brackets rebuild their rung sizes from the
                // actual population
                let rungs = if count == bracket.configs {
                    bracket.rungs.clone()
                } else {
                    rungs_for(count, bracket.s, cfg.eval_n, cfg.hyperband.eta)
                };
                (count, rungs)
            }
            None => (
                remaining.min(1),
                vec![RungPlan {
                    resource: cfg.eval_n,
                    configs: 1,
                    promote: 0,
                }],
            ),
        };

        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let path = state.sample_path()?;
            let id = state.trials.len();
            state.trials.push(Trial {
                id,
                path,
                resource: 0,
                score: 0.0,
                status: TrialStatus::Pruned,
            });
            ids.push(id);
        }
        state.run_bracket(ids, &rungs)?;
    }

    let trials = state.trials;
    let best_trial = select_best(&trials)?;
    let threshold = chi_square_threshold(cfg.significance_level)?;
    let best_score = trials[best_trial].score;
    let members = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .filter(|t| {
            chi_square_stat(cfg.eval_n, best_score, t.score)
                .map(|stat| stat < threshold)
                .unwrap_or(false)
        })
        .map(|t| t.id)
        .collect();

    Ok(SearchOutcome {
        best_trial,
        best_path: trials[best_trial].path.clone(),
        best_score,
        history: SearchHistory {
            trials,
            window: SignificanceWindow { threshold, members },
        },
    })
}

fn select_best(trials: &[Trial]) -> Result<usize> {
    let argmax = |iter: &mut dyn Iterator<Item = &Trial>| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for t in iter {
            let better = match best {
                None => true,
                Some((_, s)) => t.score > s,
            };
            if better {
                best = Some((t.id, t.score));
            }
        }
        best.map(|(id, _)| id)
    };
    argmax(&mut trials.iter().filter(|t| t.status == TrialStatus::Completed))
        .or_else(|| argmax(&mut trials.iter()))
        .ok_or_else(|| Error::invalid("search produced no trials"))
}

/// Writes history.csv, per-trial path files, and best.path under `dir`.
pub fn save_search_artifacts(
    outcome: &SearchOutcome,
    sites: &[SiteDescriptor],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir.join("paths"))?;
    std::fs::write(dir.join("history.csv"), outcome.history.to_csv())?;
    for trial in &outcome.history.trials {
        trial.path.write_to_file(
            sites,
            &dir.join("paths").join(format!("trial_{:06}.path", trial.id)),
        )?;
    }
    outcome.best_path.write_to_file(sites, &dir.join("best.path"))?;
    Ok(())
}
