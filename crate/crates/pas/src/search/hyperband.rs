//! Hyperband bracket planning. Resource here is the number of evaluation
//! examples a trial is scored on.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HyperbandSettings {
    pub enabled: bool,
    /// Reduction factor η.
    pub eta: usize,
    /// Smallest per-trial resource.
    pub min_resource: usize,
}

impl Default for HyperbandSettings {
    fn default() -> Self {
        HyperbandSettings {
            enabled: true,
            eta: 4,
            min_resource: 16,
        }
    }
}

/// One successive-halving rung: evaluate `configs` trials on `resource`
/// examples, promote the top `promote` by score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RungPlan {
    pub resource: usize,
    pub configs: usize,
    pub promote: usize,
}

/// One bracket: `configs` fresh trials run through `rungs`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketPlan {
    pub s: usize,
    pub configs: usize,
    pub rungs: Vec<RungPlan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperbandPlan {
    pub max_resource: usize,
    pub eta: usize,
    pub s_max: usize,
    pub brackets: Vec<BracketPlan>,
}

impl HyperbandPlan {
    /// Per-bracket budget B = (s_max + 1) · R.
    pub fn bracket_budget(&self) -> usize {
        (self.s_max + 1) * self.max_resource
    }

    /// Total resource the full plan consumes (every rung re-evaluates its
    /// survivors at the rung resource).
    pub fn total_resource(&self) -> usize {
        self.brackets
            .iter()
            .flat_map(|b| b.rungs.iter())
            .map(|r| r.configs * r.resource)
            .sum()
    }
}

/// Standard Hyperband schedule: brackets s = s_max..0 with
/// s_max = floor(log_η(R / r_min)); bracket s starts
/// ceil((s_max+1)/(s+1) · η^s) configs at resource R/η^s and runs successive
/// halving up to R, keeping the top floor(n_i/η) each rung.
pub fn hyperband_plan(
    max_resource: usize,
    eta: usize,
    min_resource: usize,
) -> Result<HyperbandPlan> {
    if eta < 2 {
        return Err(Error::Configuration(
            "hyperband reduction factor must be at least 2".into(),
        ));
    }
    if min_resource == 0 || min_resource > max_resource {
        return Err(Error::Configuration(format!(
            "min resource must be in [1, {max_resource}], got {min_resource}"
        )));
    }
    let ratio = max_resource as f64 / min_resource as f64;
    let s_max = ratio.log(eta as f64).floor() as usize;

    let mut brackets = Vec::with_capacity(s_max + 1);
    for s in (0..=s_max).rev() {
        let configs =
            (((s_max + 1) as f64 / (s + 1) as f64) * (eta as f64).powi(s as i32)).ceil() as usize;
        let rungs = rungs_for(configs, s, max_resource, eta);
        brackets.push(BracketPlan { s, configs, rungs });
    }
    Ok(HyperbandPlan {
        max_resource,
        eta,
        s_max,
        brackets,
    })
}

/// Successive-halving rungs for `configs` trials entering a depth-`s`
/// bracket.
pub fn rungs_for(configs: usize, s: usize, max_resource: usize, eta: usize) -> Vec<RungPlan> {
    let mut rungs = Vec::with_capacity(s + 1);
    let mut n = configs;
    for i in 0..=s {
        let resource = max_resource / eta.pow((s - i) as u32);
        let promote = if i == s { 0 } else { n / eta };
        rungs.push(RungPlan {
            resource,
            configs: n,
            promote,
        });
        n = n / eta;
        if n == 0 {
            break;
        }
    }
    rungs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_schedule_rungs() {
        let plan = hyperband_plan(256, 4, 16).unwrap();
        assert_eq!(plan.s_max, 2);
        assert_eq!(plan.brackets.len(), 3);
        let resources: Vec<usize> = plan.brackets[0].rungs.iter().map(|r| r.resource).collect();
        assert_eq!(resources, vec![16, 64, 256]);
        assert_eq!(plan.brackets[0].configs, 16);
        assert_eq!(plan.brackets[0].rungs[0].promote, 4);
        assert_eq!(plan.brackets[0].rungs[1].promote, 1);
        assert_eq!(plan.brackets[1].rungs.iter().map(|r| r.resource).collect::<Vec<_>>(), vec![64, 256]);
        assert_eq!(plan.brackets[2].rungs.iter().map(|r| r.resource).collect::<Vec<_>>(), vec![256]);
    }

    #[test]
    fn large_eta_degenerates_to_single_rung_at_full_resource() {
        let plan = hyperband_plan(256, 32, 16).unwrap();
        assert_eq!(plan.s_max, 0);
        assert_eq!(plan.brackets.len(), 1);
        assert_eq!(plan.brackets[0].rungs.len(), 1);
        assert_eq!(plan.brackets[0].rungs[0].resource, 256);
    }

    #[test]
    fn budget_identity_holds() {
        for (r, eta, rmin) in [(256usize, 4usize, 16usize), (256, 2, 8), (128, 3, 4)] {
            let plan = hyperband_plan(r, eta, rmin).unwrap();
            let cap = (plan.s_max + 1) * plan.bracket_budget();
            assert!(
                plan.total_resource() <= cap,
                "total {} exceeds cap {cap} for R={r} eta={eta}",
                plan.total_resource()
            );
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(hyperband_plan(256, 1, 16).is_err());
        assert!(hyperband_plan(256, 4, 0).is_err());
        assert!(hyperband_plan(16, 4, 64).is_err());
    }
}
