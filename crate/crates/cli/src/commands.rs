//! The four subcommands. Each returns what should go to stdout; files are
//! written under the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use perfrl_core::theory::{
    check_gradient_dominance, check_policy_lower_bound, check_prop2, check_stationary_to_po, mu_direct,
    GapComparisonReport, LowerBoundReport, OptimalityReport, ViolationReport, GRID_MAX_DIM,
};
use perfrl_core::{
    compute_constants, estimate_d_min, estimate_sensitivity, guaranteed_d_min, performative_value,
    random_floored_policy, repeated_retraining, run_zfw, seeded, theory_hyperparams, PerformativeEnv, Policy,
    RegCoefficient, RegKind, RunResult, SensitivityConstants, TheoryConstants, TheorySchedule,
};
use serde::Serialize;
use serde_json::Value;

use crate::config::{Algorithm, ExperimentConfig, LoadedConfig, Suite};
use crate::error::{CliError, CliResult};
use crate::output::{policy_rows, trace_csv, write_json, write_text};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Interior floor of the random policies fed to the pointwise checkers.
const CHECK_POLICY_FLOOR: f64 = 0.01;

/// What a command prints and how many checker violations it saw.
#[derive(Debug)]
pub struct CommandOutput {
    pub stdout: String,
    pub violations: usize,
}

impl CommandOutput {
    fn text(stdout: String) -> Self {
        CommandOutput { stdout, violations: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    #[serde(flatten)]
    pub values: SensitivityConstants,
    /// `declared` when taken from the config, `derived` when computed from the rule.
    pub source: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub eps_p: f64,
    pub eps_r: f64,
    pub d_min: f64,
    pub n_pairs: usize,
    pub n_samples: usize,
    pub status: &'static str,
}

struct Theory {
    sensitivity: SensitivityReport,
    constants: TheoryConstants,
}

fn theory_for(cfg: &ExperimentConfig, env: &PerformativeEnv, reg: RegCoefficient) -> CliResult<Theory> {
    if reg.kind != RegKind::Entropy {
        return Err(CliError::config("reg.kind", "theory constants need the entropy regularizer"));
    }
    let source = if env.declared().is_some() { "declared" } else { "derived" };
    let values = env.default_constants(cfg.constants.n_pairs, &mut seeded(cfg.seed))?;
    let constants = compute_constants(values, env.base(), reg).map_err(|e| CliError::config("reg", e.to_string()))?;
    Ok(Theory {
        sensitivity: SensitivityReport { values, source },
        constants,
    })
}

fn schedule_for(cfg: &ExperimentConfig, env: &PerformativeEnv, reg: RegCoefficient, th: &Theory) -> CliResult<Option<TheorySchedule>> {
    let Some(block) = &cfg.theory else {
        return Ok(None);
    };
    if reg.lambda <= 0.0 {
        return Err(CliError::config("reg.lambda", "π_min is undefined for λ = 0; the schedule needs λ > 0"));
    }
    theory_hyperparams(
        &th.constants,
        &th.sensitivity.values,
        env.base(),
        reg,
        block.target_eps,
        block.fail_prob,
    )
    .map(Some)
    .map_err(|e| CliError::config("theory.target_eps", e.to_string()))
}

fn execute(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    env: &PerformativeEnv,
    reg: RegCoefficient,
    init: &Policy,
) -> CliResult<(RunResult, Option<TheorySchedule>)> {
    match algorithm {
        Algorithm::Zfw => Ok((run_zfw(env, reg, &cfg.fw_config()?, init)?, None)),
        Algorithm::Retraining => {
            let r = cfg.retraining_block()?;
            Ok((repeated_retraining(env, reg, r.outer_iters, r.inner_iters, r.inner_step, init)?, None))
        }
        Algorithm::Theory => {
            let th = theory_for(cfg, env, reg)?;
            let schedule = schedule_for(cfg, env, reg, &th)?.expect("validated: theory block present");
            let fw = schedule
                .to_fw_config(cfg.seed)
                .map_err(|e| CliError::config("theory.target_eps", e.to_string()))?;
            if !init.in_floored(fw.floor) {
                return Err(CliError::config("init", format!("initial policy is below the schedule floor {}", fw.floor)));
            }
            Ok((run_zfw(env, reg, &fw, init)?, Some(schedule)))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmSummary {
    pub rows: usize,
    pub output_index: usize,
    pub output_v_reg: f64,
    pub output_v_unreg: f64,
    /// Values of the policy left after the last update.
    pub final_v_reg: f64,
    pub final_v_unreg: f64,
    pub last_fw_gap: f64,
    pub output_policy: Vec<Vec<f64>>,
    pub final_policy: Vec<Vec<f64>>,
}

fn summarize(env: &PerformativeEnv, reg: RegCoefficient, res: &RunResult) -> CliResult<AlgorithmSummary> {
    let out = &res.trace[res.output_index];
    Ok(AlgorithmSummary {
        rows: res.trace.len(),
        output_index: res.output_index,
        output_v_reg: out.v_reg,
        output_v_unreg: out.v_unreg,
        final_v_reg: performative_value(env, &res.final_policy, reg)?,
        final_v_unreg: performative_value(env, &res.final_policy, reg.unregularized())?,
        last_fw_gap: res.trace.last().map_or(f64::NAN, |r| r.fw_gap),
        output_policy: policy_rows(&res.output_policy),
        final_policy: policy_rows(&res.final_policy),
    })
}

#[derive(Serialize)]
struct RunSummary<'a> {
    version: &'static str,
    algorithm: &'static str,
    trace: String,
    #[serde(flatten)]
    result: AlgorithmSummary,
    wall_time_ms: f64,
    sensitivity: Option<SensitivityReport>,
    theory_constants: Option<TheoryConstants>,
    schedule: Option<TheorySchedule>,
    config: &'a Value,
}

fn out_dir<'a>(cfg: &'a ExperimentConfig, override_dir: Option<&'a Path>) -> &'a Path {
    override_dir.unwrap_or(&cfg.output.dir)
}

fn written(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| format!("wrote {}\n", p.display())).collect()
}

pub fn cmd_run(loaded: &LoadedConfig, out: Option<&Path>) -> CliResult<CommandOutput> {
    let cfg = &loaded.config;
    let algorithm = cfg
        .algorithm
        .ok_or_else(|| CliError::config("algorithm", "required by run (zfw, retraining or theory)"))?;
    let env = cfg.build_env()?;
    let reg = cfg.reg()?;
    let init = cfg.init_policy()?;

    let started = Instant::now();
    let (res, schedule) = execute(cfg, algorithm, &env, reg, &init)?;
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;

    // constants are informative here, so failures to derive them are not fatal
    let theory = theory_for(cfg, &env, reg).ok();
    let dir = out_dir(cfg, out);
    let csv_name = format!("{}.csv", algorithm.name());
    let csv = write_text(dir, &csv_name, &trace_csv(&res.trace, cfg.output.trace_timing))?;
    let summary = RunSummary {
        version: VERSION,
        algorithm: algorithm.name(),
        trace: csv_name,
        result: summarize(&env, reg, &res)?,
        wall_time_ms,
        sensitivity: theory.as_ref().map(|t| t.sensitivity.clone()),
        theory_constants: theory.as_ref().map(|t| t.constants),
        schedule,
        config: &loaded.raw,
    };
    let json = write_json(dir, &format!("{}_summary.json", algorithm.name()), &summary)?;
    Ok(CommandOutput::text(written(&[csv, json])))
}

#[derive(Serialize)]
struct ConstantsReport {
    version: &'static str,
    sensitivity: SensitivityReport,
    /// `(1-γ)·min ρ`, valid for every policy.
    guaranteed_d_min: f64,
    estimated: Option<EstimateReport>,
    theory_constants: TheoryConstants,
    /// The modulus evaluated as a single expression, for cross-checking `mu`.
    mu_direct: f64,
    schedule: Option<TheorySchedule>,
}

pub fn cmd_constants(loaded: &LoadedConfig) -> CliResult<CommandOutput> {
    let cfg = &loaded.config;
    let env = cfg.build_env()?;
    let reg = cfg.reg()?;
    let th = theory_for(cfg, &env, reg)?;
    let schedule = schedule_for(cfg, &env, reg, &th)?;
    let estimated = if cfg.constants.estimate {
        let mut rng = seeded(cfg.seed);
        let est = estimate_sensitivity(&env, cfg.constants.n_pairs, &mut rng)?;
        Some(EstimateReport {
            eps_p: est.eps_p,
            eps_r: est.eps_r,
            d_min: estimate_d_min(&env, cfg.constants.n_samples, &mut rng)?,
            n_pairs: cfg.constants.n_pairs,
            n_samples: cfg.constants.n_samples,
            status: "estimated",
        })
    } else {
        None
    };
    let report = ConstantsReport {
        version: VERSION,
        guaranteed_d_min: guaranteed_d_min(env.base()),
        mu_direct: mu_direct(&th.sensitivity.values, env.base(), reg),
        sensitivity: th.sensitivity,
        estimated,
        theory_constants: th.constants,
        schedule,
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
    text.push('\n');
    Ok(CommandOutput::text(text))
}

#[derive(Debug, Serialize)]
pub struct Labeled<T> {
    pub policy: String,
    #[serde(flatten)]
    pub report: T,
}

#[derive(Debug, Default, Serialize)]
pub struct SuiteReports {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dominance: Option<ViolationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<Vec<Labeled<LowerBoundReport>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prop2: Option<Vec<Labeled<GapComparisonReport>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stationary_to_po: Option<Vec<Labeled<OptimalityReport>>>,
}

#[derive(Serialize)]
struct CheckReport<'a> {
    version: &'static str,
    sensitivity: SensitivityReport,
    theory_constants: TheoryConstants,
    mu_override: Option<f64>,
    suites: SuiteReports,
    violations: usize,
    config: &'a Value,
}

/// Runs the selected checker suites. `mu_override` replaces the computed modulus
/// (a negative control: a wrong modulus should produce violations).
pub fn cmd_check(loaded: &LoadedConfig, mu_override: Option<f64>) -> CliResult<CommandOutput> {
    let cfg = &loaded.config;
    let block = cfg
        .check
        .as_ref()
        .ok_or_else(|| CliError::config("check", "required by the check command"))?;
    let env = cfg.build_env()?;
    let reg = cfg.reg()?;
    if reg.lambda <= 0.0 {
        return Err(CliError::config("reg.lambda", "the checkers need λ > 0"));
    }
    let base = env.base().clone();
    let (n_s, n_a) = (base.n_states(), base.n_actions());
    if block.suites.contains(&Suite::StationaryToPo) && n_s * (n_a - 1) > GRID_MAX_DIM {
        return Err(CliError::config(
            "check.suites",
            format!("stationary_to_po needs |S|(|A|-1) <= {GRID_MAX_DIM}, got {}", n_s * (n_a - 1)),
        ));
    }
    let th = theory_for(cfg, &env, reg)?;
    let mut tc = th.constants;
    if let Some(mu) = mu_override {
        tc.mu = mu;
    }

    let mut rng = seeded(cfg.seed);
    let mut labeled: Vec<(String, Policy)> = vec![("uniform".into(), Policy::uniform(n_s, n_a))];
    for i in 0..block.n_policies {
        labeled.push((format!("random[{i}]"), random_floored_policy(n_s, n_a, CHECK_POLICY_FLOOR, &mut rng)));
    }
    let run = match &cfg.zfw {
        Some(_) => Some(run_zfw(&env, reg, &cfg.fw_config()?, &cfg.init_policy()?)?),
        None => None,
    };
    if let Some(res) = &run {
        labeled.push(("zfw_output".into(), res.output_policy.clone()));
        labeled.push(("zfw_final".into(), res.final_policy.clone()));
    }

    let mut suites = SuiteReports::default();
    let mut violations = 0;
    for suite in &block.suites {
        match suite {
            Suite::Dominance => {
                let rep = check_gradient_dominance(&env, reg, &tc, block.n_pairs, &mut rng)?;
                violations += rep.violations;
                suites.dominance = Some(rep);
            }
            Suite::LowerBound => {
                let mut reps = Vec::new();
                for (label, pi) in &labeled {
                    let rep = check_policy_lower_bound(&env, reg, &tc, pi)?;
                    violations += rep.report.violations;
                    reps.push(Labeled {
                        policy: label.clone(),
                        report: rep,
                    });
                }
                suites.lower_bound = Some(reps);
            }
            Suite::Prop2 => {
                let res = run
                    .as_ref()
                    .ok_or_else(|| CliError::config("zfw", "required by the prop2 suite"))?;
                let (pi_min, _) = tc.require_pi_min()?;
                let floor = (pi_min / 3.0).min(cfg.fw_config()?.floor);
                let mut reps = Vec::new();
                for (label, pi) in [("zfw_output", &res.output_policy), ("zfw_final", &res.final_policy)] {
                    let rep = check_prop2(&env, reg, &tc, pi, floor)?;
                    violations += usize::from(rep.violated);
                    reps.push(Labeled {
                        policy: label.into(),
                        report: rep,
                    });
                }
                suites.prop2 = Some(reps);
            }
            Suite::StationaryToPo => {
                let mut reps = Vec::new();
                for (label, pi) in &labeled {
                    let rep = check_stationary_to_po(&env, reg, &tc, pi)?;
                    violations += usize::from(!rep.holds);
                    reps.push(Labeled {
                        policy: label.clone(),
                        report: rep,
                    });
                }
                suites.stationary_to_po = Some(reps);
            }
        }
    }

    let report = CheckReport {
        version: VERSION,
        sensitivity: th.sensitivity,
        theory_constants: tc,
        mu_override,
        suites,
        violations,
        config: &loaded.raw,
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
    text.push('\n');
    Ok(CommandOutput { stdout: text, violations })
}

#[derive(Serialize)]
struct Comparison<'a> {
    version: &'static str,
    zfw: AlgorithmSummary,
    retraining: AlgorithmSummary,
    /// Frobenius distance of the retraining result from the uniform policy.
    retraining_distance_from_uniform: f64,
    zfw_final_v_reg_exceeds_retraining: bool,
    wall_time_ms: f64,
    zfw_config: &'a Value,
    retraining_config: &'a Value,
    config: &'a Value,
}

pub fn cmd_compare(loaded: &LoadedConfig, out: Option<&Path>) -> CliResult<CommandOutput> {
    let cfg = &loaded.config;
    let env = cfg.build_env()?;
    let reg = cfg.reg()?;
    let init = cfg.init_policy()?;
    if cfg.zfw.is_none() {
        return Err(CliError::config("zfw", "required by compare"));
    }
    if cfg.retraining.is_none() {
        return Err(CliError::config("retraining", "required by compare"));
    }

    let started = Instant::now();
    let (zfw, _) = execute(cfg, Algorithm::Zfw, &env, reg, &init)?;
    let (rr, _) = execute(cfg, Algorithm::Retraining, &env, reg, &init)?;
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;

    let dir = out_dir(cfg, out);
    let timing = cfg.output.trace_timing;
    let zfw_csv = write_text(dir, "zfw.csv", &trace_csv(&zfw.trace, timing))?;
    let rr_csv = write_text(dir, "retraining.csv", &trace_csv(&rr.trace, timing))?;

    let uniform = Policy::uniform(env.base().n_states(), env.base().n_actions());
    let zfw_summary = summarize(&env, reg, &zfw)?;
    let rr_summary = summarize(&env, reg, &rr)?;
    let report = Comparison {
        version: VERSION,
        zfw_final_v_reg_exceeds_retraining: zfw_summary.final_v_reg > rr_summary.final_v_reg,
        zfw: zfw_summary,
        retraining: rr_summary,
        retraining_distance_from_uniform: rr.final_policy.table().sub(uniform.table()).norm(),
        wall_time_ms,
        zfw_config: &loaded.raw["zfw"],
        retraining_config: &loaded.raw["retraining"],
        config: &loaded.raw,
    };
    let json = write_json(dir, "comparison.json", &report)?;
    Ok(CommandOutput::text(written(&[zfw_csv, rr_csv, json])))
}
