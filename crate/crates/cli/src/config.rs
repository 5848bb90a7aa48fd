//! JSON experiment configuration.
//!
//! Parsing goes through `serde_path_to_error` so type errors and unknown keys
//! name the offending field; [`ExperimentConfig::validate`] then checks every
//! downstream invariant before anything runs.

use std::path::{Path, PathBuf};

use perfrl_core::{
    random_policy, seeded, FwConfig, PerformativeEnv, Policy, RegCoefficient, RegKind, RewardTable,
    SamplingScheme, SensitivityConstants, TabularMdpBase, TransitionKernel,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Zfw,
    Retraining,
    /// Zeroth-order Frank-Wolfe with the hyperparameters of the convergence theorem.
    Theory,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Zfw => "zfw",
            Algorithm::Retraining => "retraining",
            Algorithm::Theory => "theory",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    AffineMix,
    Fixed,
    Interpolated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredConstants {
    pub eps_p: f64,
    pub eps_r: f64,
    #[serde(default)]
    pub s_p: f64,
    #[serde(default)]
    pub s_r: f64,
    pub d_min: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub rule: RuleName,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// Initial distribution; uniform when absent.
    #[serde(default)]
    pub rho: Option<Vec<f64>>,
    /// Interpolation weight of the policy-dependent part (`interpolated` only).
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Flat `[s][a][s']` kernel for `fixed`, or the base kernel for `interpolated`.
    #[serde(default)]
    pub transition: Option<Vec<f64>>,
    /// Flat `[s][a]` rewards, same role as `transition`.
    #[serde(default)]
    pub reward: Option<Vec<f64>>,
    /// Seed for a random kernel/reward when `transition`/`reward` are absent.
    #[serde(default)]
    pub instance_seed: u64,
    #[serde(default)]
    pub declared_constants: Option<DeclaredConstants>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    pub kind: RegKind,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZfwBlock {
    pub iterations: usize,
    pub batch: usize,
    pub floor: f64,
    pub probe: f64,
    pub step: f64,
    #[serde(default)]
    pub eval_noise: f64,
    #[serde(default)]
    pub sampling: SamplingScheme,
    #[serde(default)]
    pub oracle_gap: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainingBlock {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub inner_step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryBlock {
    pub target_eps: f64,
    pub fail_prob: f64,
}

fn default_pairs() -> usize {
    500
}

fn default_samples() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsBlock {
    /// Also report sampled sensitivity and visitation-floor estimates.
    #[serde(default)]
    pub estimate: bool,
    #[serde(default = "default_pairs")]
    pub n_pairs: usize,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
}

impl Default for ConstantsBlock {
    fn default() -> Self {
        ConstantsBlock {
            estimate: false,
            n_pairs: default_pairs(),
            n_samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Dominance,
    LowerBound,
    Prop2,
    StationaryToPo,
}

fn default_check_pairs() -> usize {
    50
}

fn default_check_policies() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckBlock {
    pub suites: Vec<Suite>,
    #[serde(default = "default_check_pairs")]
    pub n_pairs: usize,
    /// Random interior policies per pointwise suite.
    #[serde(default = "default_check_policies")]
    pub n_policies: usize,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Record per-iteration wall time in the CSV. Off by default because it
    /// breaks byte-identical reruns.
    #[serde(default)]
    pub trace_timing: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: default_out_dir(),
            trace_timing: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub reg: RegConfig,
    #[serde(default)]
    pub algorithm: Option<Algorithm>,
    #[serde(default)]
    pub zfw: Option<ZfwBlock>,
    #[serde(default)]
    pub retraining: Option<RetrainingBlock>,
    #[serde(default)]
    pub theory: Option<TheoryBlock>,
    #[serde(default)]
    pub constants: ConstantsBlock,
    #[serde(default)]
    pub check: Option<CheckBlock>,
    /// Flat `[s][a]` initial policy; uniform when absent.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    pub seed: u64,
    #[serde(default)]
    pub output: OutputBlock,
}

/// A validated config together with the JSON it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: Value,
}

pub fn load(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("", format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> CliResult<LoadedConfig> {
    let raw: Value = serde_json::from_str(text).map_err(|e| CliError::config("", format!("invalid JSON: {e}")))?;
    let config: ExperimentConfig = serde_path_to_error::deserialize(raw.clone()).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(LoadedConfig { config, raw })
}

fn check(ok: bool, path: &str, message: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(path, message()))
    }
}

fn check_distribution(values: &[f64], path: &str) -> CliResult<()> {
    check(values.iter().all(|&x| (0.0..=1.0).contains(&x)), path, || {
        "entries must lie in [0,1]".into()
    })?;
    let total: f64 = values.iter().sum();
    check((total - 1.0).abs() <= 1e-12, path, || format!("entries must sum to 1, got {total}"))
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        let e = &self.env;
        check(e.n_states >= 1, "env.n_states", || "must be >= 1".into())?;
        check(e.n_actions >= 1, "env.n_actions", || "must be >= 1".into())?;
        check((0.0..1.0).contains(&e.gamma), "env.gamma", || {
            format!("must lie in [0,1), got {}", e.gamma)
        })?;
        if let Some(rho) = &e.rho {
            check(rho.len() == e.n_states, "env.rho", || {
                format!("expected {} entries, got {}", e.n_states, rho.len())
            })?;
            check_distribution(rho, "env.rho")?;
        }
        match e.rule {
            RuleName::AffineMix => {
                for (field, present) in [
                    ("env.kappa", e.kappa.is_some()),
                    ("env.transition", e.transition.is_some()),
                    ("env.reward", e.reward.is_some()),
                ] {
                    check(!present, field, || "not used by the affine_mix rule".into())?;
                }
            }
            RuleName::Fixed => check(e.kappa.is_none(), "env.kappa", || "not used by the fixed rule".into())?,
            RuleName::Interpolated => {
                let kappa = e
                    .kappa
                    .ok_or_else(|| CliError::config("env.kappa", "required by the interpolated rule"))?;
                check((0.0..=1.0).contains(&kappa), "env.kappa", || format!("must lie in [0,1], got {kappa}"))?;
            }
        }
        let (n_s, n_a) = (e.n_states, e.n_actions);
        if let Some(p) = &e.transition {
            check(p.len() == n_s * n_a * n_s, "env.transition", || {
                format!("expected {} entries, got {}", n_s * n_a * n_s, p.len())
            })?;
            for (i, row) in p.chunks(n_s).enumerate() {
                check_distribution(row, &format!("env.transition[{}..{}]", i * n_s, (i + 1) * n_s))?;
            }
        }
        if let Some(r) = &e.reward {
            check(r.len() == n_s * n_a, "env.reward", || {
                format!("expected {} entries, got {}", n_s * n_a, r.len())
            })?;
            check(r.iter().all(|x| (0.0..=1.0).contains(x)), "env.reward", || {
                "entries must lie in [0,1]".into()
            })?;
        }
        if let Some(c) = &e.declared_constants {
            SensitivityConstants::new(c.eps_p, c.eps_r, c.s_p, c.s_r, c.d_min)
                .map_err(|err| CliError::config("env.declared_constants", err.to_string()))?;
        }

        check(self.reg.lambda >= 0.0 && self.reg.lambda.is_finite(), "reg.lambda", || {
            format!("must be a finite value >= 0, got {}", self.reg.lambda)
        })?;

        if let Some(init) = &self.init {
            check(init.len() == n_s * n_a, "init", || {
                format!("expected {} entries, got {}", n_s * n_a, init.len())
            })?;
            for (s, row) in init.chunks(n_a).enumerate() {
                check_distribution(row, &format!("init[{}..{}]", s * n_a, (s + 1) * n_a))?;
            }
        }

        if let Some(z) = &self.zfw {
            self.validate_zfw(z)?;
        }
        if let Some(r) = &self.retraining {
            self.validate_retraining(r)?;
        }
        if let Some(t) = &self.theory {
            check(t.target_eps > 0.0, "theory.target_eps", || format!("must be > 0, got {}", t.target_eps))?;
            check(t.fail_prob > 0.0 && t.fail_prob < 1.0, "theory.fail_prob", || {
                format!("must lie in (0,1), got {}", t.fail_prob)
            })?;
        }
        check(self.constants.n_pairs >= 1, "constants.n_pairs", || "must be >= 1".into())?;
        check(self.constants.n_samples >= 1, "constants.n_samples", || "must be >= 1".into())?;
        if let Some(c) = &self.check {
            check(!c.suites.is_empty(), "check.suites", || "select at least one suite".into())?;
            check(c.n_pairs >= 1, "check.n_pairs", || "must be >= 1".into())?;
        }

        match self.algorithm {
            Some(Algorithm::Zfw) => check(self.zfw.is_some(), "zfw", || "required when algorithm is zfw".into())?,
            Some(Algorithm::Retraining) => check(self.retraining.is_some(), "retraining", || {
                "required when algorithm is retraining".into()
            })?,
            Some(Algorithm::Theory) => check(self.theory.is_some(), "theory", || {
                "required when algorithm is theory".into()
            })?,
            None => {}
        }
        if self.algorithm == Some(Algorithm::Theory) || self.check.is_some() || self.retraining.is_some() {
            check(self.reg.kind == RegKind::Entropy, "reg.kind", || {
                "retraining, theory runs and checks need the entropy regularizer".into()
            })?;
        }
        Ok(())
    }

    fn validate_zfw(&self, z: &ZfwBlock) -> CliResult<()> {
        let n_a = self.env.n_actions;
        check(n_a >= 2, "env.n_actions", || "zeroth-order Frank-Wolfe needs at least 2 actions".into())?;
        check(z.iterations >= 1, "zfw.iterations", || "must be >= 1".into())?;
        check(z.batch >= 1, "zfw.batch", || "must be >= 1".into())?;
        check(z.floor > 0.0 && z.floor <= 1.0 / n_a as f64, "zfw.floor", || {
            format!("must lie in (0, 1/|A|], got {}", z.floor)
        })?;
        check(z.probe > 0.0 && z.probe < z.floor, "zfw.probe", || {
            format!("must lie in (0, floor), got {}", z.probe)
        })?;
        check((0.0..=1.0).contains(&z.step), "zfw.step", || format!("must lie in [0,1], got {}", z.step))?;
        check(z.eval_noise >= 0.0, "zfw.eval_noise", || format!("must be >= 0, got {}", z.eval_noise))?;
        if let Some(init) = &self.init {
            let low = init.iter().copied().fold(f64::INFINITY, f64::min);
            check(low >= z.floor, "init", || format!("minimum mass {low} is below zfw.floor {}", z.floor))?;
        }
        Ok(())
    }

    fn validate_retraining(&self, r: &RetrainingBlock) -> CliResult<()> {
        check(r.inner_step > 0.0, "retraining.inner_step", || format!("must be > 0, got {}", r.inner_step))?;
        let exponent = r.inner_step * self.reg.lambda / (1.0 - self.env.gamma);
        check(exponent < 1.0, "retraining.inner_step", || {
            format!("inner_step·λ/(1-γ) = {exponent} must be < 1")
        })?;
        if let Some(init) = &self.init {
            check(init.iter().all(|&x| x > 0.0), "init", || {
                "retraining needs a strictly positive initial policy".into()
            })?;
        }
        Ok(())
    }

    pub fn base(&self) -> CliResult<TabularMdpBase> {
        let e = &self.env;
        let rho = e.rho.clone().unwrap_or_else(|| vec![1.0 / e.n_states as f64; e.n_states]);
        TabularMdpBase::new(e.n_states, e.n_actions, e.gamma, rho).map_err(|err| CliError::config("env", err.to_string()))
    }

    pub fn reg(&self) -> CliResult<RegCoefficient> {
        RegCoefficient::new(self.reg.lambda, self.reg.kind).map_err(|err| CliError::config("reg", err.to_string()))
    }

    fn instance(&self) -> CliResult<(TransitionKernel, RewardTable)> {
        let e = &self.env;
        let (n_s, n_a) = (e.n_states, e.n_actions);
        let mut rng = seeded(e.instance_seed);
        let p = match &e.transition {
            Some(p) => TransitionKernel::new(n_s, n_a, p.clone()),
            None => TransitionKernel::new(n_s, n_a, random_policy(n_s * n_a, n_s, &mut rng).into_table().into_vec()),
        }
        .map_err(|err| CliError::config("env.transition", err.to_string()))?;
        let r = match &e.reward {
            Some(r) => RewardTable::new(n_s, n_a, r.clone()),
            None => RewardTable::new(n_s, n_a, (0..n_s * n_a).map(|_| rng.random::<f64>()).collect()),
        }
        .map_err(|err| CliError::config("env.reward", err.to_string()))?;
        Ok((p, r))
    }

    pub fn build_env(&self) -> CliResult<PerformativeEnv> {
        let base = self.base()?;
        let env = match self.env.rule {
            RuleName::AffineMix => PerformativeEnv::affine_mix(base),
            RuleName::Fixed => {
                let (p, r) = self.instance()?;
                PerformativeEnv::fixed(base, p, r).map_err(|err| CliError::config("env", err.to_string()))?
            }
            RuleName::Interpolated => {
                let (p, r) = self.instance()?;
                let kappa = self.env.kappa.unwrap_or(0.0);
                PerformativeEnv::interpolated(base, kappa, p, r)
                    .map_err(|err| CliError::config("env", err.to_string()))?
            }
        };
        match &self.env.declared_constants {
            Some(c) => {
                let c = SensitivityConstants::new(c.eps_p, c.eps_r, c.s_p, c.s_r, c.d_min)
                    .map_err(|err| CliError::config("env.declared_constants", err.to_string()))?;
                env.with_declared(c)
                    .map_err(|err| CliError::config("env.declared_constants", err.to_string()))
            }
            None => Ok(env),
        }
    }

    pub fn init_policy(&self) -> CliResult<Policy> {
        let (n_s, n_a) = (self.env.n_states, self.env.n_actions);
        match &self.init {
            Some(p) => Policy::new(n_s, n_a, p.clone()).map_err(|err| CliError::config("init", err.to_string())),
            None => Ok(Policy::uniform(n_s, n_a)),
        }
    }

    pub fn fw_config(&self) -> CliResult<FwConfig> {
        let z = self
            .zfw
            .as_ref()
            .ok_or_else(|| CliError::config("zfw", "block is required here"))?;
        Ok(FwConfig {
            iterations: z.iterations,
            batch: z.batch,
            floor: z.floor,
            probe: z.probe,
            step: z.step,
            eval_noise: z.eval_noise,
            seed: self.seed,
            sampling: z.sampling,
            oracle_gap: z.oracle_gap,
        })
    }

    pub fn retraining_block(&self) -> CliResult<&RetrainingBlock> {
        self.retraining
            .as_ref()
            .ok_or_else(|| CliError::config("retraining", "block is required here"))
    }
}
