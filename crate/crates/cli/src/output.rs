//! Trace CSVs and JSON summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use perfrl_core::{IterationRecord, Policy};
use serde::Serialize;

pub const CSV_HEADER: &str = "iter,v_reg,v_unreg,fw_gap,min_mass,elapsed_ms";

/// Decimal notation with 12 significant digits; never scientific.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can leave "-0.000…" for tiny negatives
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn trace_csv(trace: &[IterationRecord], with_timing: bool) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in trace {
        let elapsed = if with_timing { r.elapsed_ms } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            format_number(r.v_reg),
            format_number(r.v_unreg),
            format_number(r.fw_gap),
            format_number(r.min_mass),
            format_number(elapsed)
        );
    }
    out
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(dir, name, &text)
}

/// Rows of a policy table, one per state.
pub fn policy_rows(pi: &Policy) -> Vec<Vec<f64>> {
    (0..pi.n_states()).map(|s| pi.row(s).to_vec()).collect()
}
