//! Design-sensitivity sweeps: one axis (reward or goal representation)
//! varied over several seeds.

use std::fmt;
use std::path::Path;

use crate::config::{Mode, RunConfig};
use crate::error::{HarnessError, Result};
use crate::stats::iqm;
use crate::train::train;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Reward,
    Goal,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reward" => Ok(Axis::Reward),
            "goal" => Ok(Axis::Goal),
            other => Err(HarnessError::config(format!(
                "unknown axis `{other}` (expected reward or goal)"
            ))),
        }
    }

    fn required_mode(self) -> Mode {
        match self {
            Axis::Reward => Mode::Ippo,
            Axis::Goal => Mode::Icppo,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Reward => "reward",
            Axis::Goal => "goal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: String,
    /// Final evaluation win rate per seed.
    pub win_rates: Vec<f64>,
    pub iqm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub axis: Axis,
    pub variants: Vec<VariantResult>,
    /// Best minus worst per-variant IQM.
    pub range: f64,
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "axis: {}", self.axis)?;
        for v in &self.variants {
            let seeds: Vec<String> = v.win_rates.iter().map(|w| format!("{w:.3}")).collect();
            writeln!(f, "  {:<18} iqm {:.3}  [{}]", v.variant, v.iqm, seeds.join(", "))?;
        }
        write!(f, "range: {:.3}", self.range)
    }
}

/// Builds the config for one cell of the sweep.
pub fn variant_config(base: &RunConfig, axis: Axis, variant: &str, seed: u64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match axis {
        Axis::Reward => cfg.env.reward_variant = Some(variant.to_string()),
        Axis::Goal => cfg.env.goal_variant = Some(variant.to_string()),
    }
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

/// Checks the axis against the base mode and every variant against the
/// environment before any training starts.
pub fn check_plan(base: &RunConfig, axis: Axis, variants: &[String], seeds: usize) -> Result<()> {
    let mut problems = Vec::new();
    if base.mode != axis.required_mode() {
        problems.push(format!(
            "the {axis} axis requires mode {:?}, config has {:?}",
            axis.required_mode(),
            base.mode
        ));
    }
    if variants.is_empty() {
        problems.push("at least one variant is required".into());
    }
    if seeds == 0 {
        problems.push("at least one seed is required".into());
    }
    let known = match axis {
        Axis::Reward => base.env.reward_variants(),
        Axis::Goal => base.env.goal_variants(),
    };
    for v in variants {
        if !known.contains(&v.as_str()) {
            problems.push(format!(
                "unknown {axis} variant `{v}` for this env (expected one of {})",
                known.join(", ")
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Config(problems))
    }
}

/// Trains every (variant, seed) pair with seeds `base.seed .. base.seed+seeds`.
/// With `out_dir`, each run writes into `<out>/<variant>/seed<k>/`.
pub fn ablate(base: &RunConfig, axis: Axis, variants: &[String], seeds: usize, out_dir: Option<&Path>) -> Result<AblationReport> {
    check_plan(base, axis, variants, seeds)?;
    let mut results = Vec::with_capacity(variants.len());
    for v in variants {
        let mut win_rates = Vec::with_capacity(seeds);
        for k in 0..seeds as u64 {
            let seed = base.seed + k;
            let cfg = variant_config(base, axis, v, seed)?;
            let dir = out_dir.map(|d| d.join(v).join(format!("seed{seed}")));
            win_rates.push(train(&cfg, dir.as_deref())?.final_eval.win_rate);
        }
        let iqm = iqm(&win_rates)?;
        results.push(VariantResult {
            variant: v.clone(),
            win_rates,
            iqm,
        });
    }
    Ok(report(axis, results))
}

pub fn report(axis: Axis, variants: Vec<VariantResult>) -> AblationReport {
    let best = variants.iter().map(|v| v.iqm).fold(f64::NEG_INFINITY, f64::max);
    let worst = variants.iter().map(|v| v.iqm).fold(f64::INFINITY, f64::min);
    AblationReport {
        axis,
        variants,
        range: best - worst,
    }
}
