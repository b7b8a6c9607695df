//! Report envelopes and the campaign-summary merge.
//!
//! Every CLI artifact is a JSON object with a `kind` tag, the verbatim
//! invocation (argv and raw config file) for reproducibility, and a
//! payload. Reruns with the same seed must be byte-identical except for
//! the `elapsed_seconds` field, which is why that field always sits on its
//! own line of the pretty-printed output.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::io::Write;
use std::path::Path;

/// A report artifact: payload plus the full effective configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEnvelope<T> {
    pub kind: String,
    /// Command line, verbatim.
    pub argv: Vec<String>,
    /// Raw config file contents, when one was given.
    pub config_text: Option<String>,
    pub payload: T,
    pub elapsed_seconds: f64,
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(to_json_pretty(value)?.as_bytes())?;
    Ok(())
}

/// Strips the volatile timing line, for byte comparison of reruns.
pub fn strip_elapsed(json_text: &str) -> String {
    json_text
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"elapsed_seconds\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn get<'a>(v: &'a Value, path: &[&str]) -> Option<&'a Value> {
    let mut cur = v;
    for p in path {
        cur = cur.get(p)?;
    }
    Some(cur)
}

fn cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

/// Merges campaign JSONs into one CSV summary row per report. Append-safe:
/// when `existing` already holds rows, the header is not repeated.
pub fn merge_reports_csv(reports: &[Value], existing: Option<&str>) -> Result<String> {
    const HEADER: &str =
        "kind,n,k,f_max,trials,resolution,seed,violations,min_lhs_relative,min_eig,max_negative_part_ratio,cnk_estimate,residual_max,kappa_max,q_max,case,elapsed_seconds";
    let mut out = String::new();
    match existing {
        Some(prev) if !prev.trim().is_empty() => {
            out.push_str(prev.trim_end());
            out.push('\n');
        }
        _ => {
            out.push_str(HEADER);
            out.push('\n');
        }
    }
    for r in reports {
        let kind = cell(get(r, &["kind"]));
        if kind.is_empty() {
            return Err(Error::Parse("report without a `kind` field".into()));
        }
        let p = |path: &[&str]| cell(get(r, path));
        let row = [
            kind.clone(),
            p(&["payload", "n"]),
            p(&["payload", "k"]),
            p(&["payload", "f_max"]),
            p(&["payload", "trials"]),
            p(&["payload", "resolution"]),
            p(&["payload", "seed"]),
            // violations: count of the list when present
            get(r, &["payload", "violations"])
                .and_then(|v| v.as_array())
                .map(|a| a.len().to_string())
                .unwrap_or_default(),
            p(&["payload", "min_lhs_relative"]),
            p(&["payload", "min_eig"]),
            p(&["payload", "max_negative_part_ratio"]),
            p(&["payload", "cnk_estimate"]),
            p(&["payload", "residual_max"]),
            p(&["payload", "kappa_max"]),
            p(&["payload", "q_max"]),
            p(&["payload", "case"]),
            p(&["elapsed_seconds"]),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}
