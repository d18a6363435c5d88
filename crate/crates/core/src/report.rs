//! Versioned JSON reports and the Table-I style CSV summary.
//!
//! Reports are written with sorted keys, two-space indentation and every
//! floating-point number as `{:.16e}` (17 significant digits), so equal
//! inputs give byte-equal files and every double reads back bit-exactly.
//! Wall-clock timings are the only fields that vary between runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use crate::error::{Error, Result};
use crate::registration::{evaluate_metrics, Histogram, LossRecord, RegistrationParams, RegistrationResult};
use crate::synth::RNG_NAME;

pub const SCHEMA_VERSION: u32 = 1;

/// Header shared by every report, around a kind-specific payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub generator: String,
    pub kind: String,
    pub rng: String,
    pub seed: Option<u64>,
    pub payload: T,
}

impl<T> Envelope<T> {
    pub fn new(kind: impl Into<String>, seed: Option<u64>, payload: T) -> Self {
        Envelope {
            schema_version: SCHEMA_VERSION,
            generator: format!("qcreg {}", crate::VERSION),
            kind: kind.into(),
            rng: RNG_NAME.to_string(),
            seed,
            payload,
        }
    }
}

/// Registration metrics with the parameters that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mean_mu: f64,
    pub sd_mu: f64,
    pub max_mu: f64,
    pub landmark_rmse: f64,
    pub wall_time: f64,
    pub histogram: Histogram,
    pub parameters: RegistrationParams,
    pub loss_trace: Vec<LossRecord>,
    pub converged: bool,
    pub infeasible_pairs: Vec<(usize, usize)>,
    pub reach: f64,
}

impl MetricsRecord {
    pub fn from_result(result: &RegistrationResult) -> Self {
        let m = evaluate_metrics(result);
        MetricsRecord {
            mean_mu: m.mean_mu,
            sd_mu: m.sd_mu,
            max_mu: m.max_mu,
            landmark_rmse: m.landmark_rmse,
            wall_time: m.wall_time,
            histogram: m.histogram,
            parameters: result.params,
            loss_trace: result.loss_trace.clone(),
            converged: result.converged,
            infeasible_pairs: result.infeasible.clone(),
            reach: result.reach,
        }
    }

    /// Checks that every number is finite and the histogram is non-empty.
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.mean_mu,
            self.sd_mu,
            self.max_mu,
            self.landmark_rmse,
            self.wall_time,
            self.reach,
        ];
        let trace = self
            .loss_trace
            .iter()
            .flat_map(|r| [r.l_mu, r.l_grad_mu, r.l_landmark, r.total]);
        if !scalars.into_iter().chain(trace).all(f64::is_finite) {
            return Err(Error::invalid("metrics record holds a non-finite value"));
        }
        if self.histogram.counts.is_empty() {
            return Err(Error::invalid("metrics record has an empty histogram"));
        }
        Ok(())
    }
}

/// Canonical text of a JSON value.
pub fn to_canonical_json(value: &Value) -> Result<String> {
    let mut out = String::new();
    write_value(&mut out, value, 0)?;
    out.push('\n');
    Ok(out)
}

fn write_number(out: &mut String, n: &Number) {
    if n.is_f64() {
        let x = n.as_f64().expect("f64 number");
        let _ = write!(out, "{x:.16e}");
    } else {
        let _ = write!(out, "{n}");
    }
}

fn indent(out: &mut String, depth: usize) {
    out.push('\n');
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, value: &Value, depth: usize) -> Result<()> {
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&value.to_string()),
        Value::Number(n) => write_number(out, n),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return Ok(());
            }
            // Arrays of scalars stay on one line.
            let flat = items.iter().all(|v| !v.is_array() && !v.is_object());
            out.push('[');
            for (k, v) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                    if flat {
                        out.push(' ');
                    }
                }
                if !flat {
                    indent(out, depth + 1);
                }
                write_value(out, v, depth + 1)?;
            }
            if !flat {
                indent(out, depth);
            }
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return Ok(());
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (k, key) in keys.into_iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                indent(out, depth + 1);
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[key], depth + 1)?;
            }
            indent(out, depth);
            out.push('}');
        }
    }
    Ok(())
}

pub fn report_string<T: Serialize>(report: &Envelope<T>) -> Result<String> {
    to_canonical_json(&serde_json::to_value(report)?)
}

pub fn write_report<T: Serialize>(report: &Envelope<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report_string(report)?).map_err(|e| Error::io(path, e))
}

/// Parses a report, checking the schema version before the payload.
pub fn parse_report<T: DeserializeOwned>(text: &str) -> Result<Envelope<T>> {
    let value: Value = serde_json::from_str(text)?;
    let found = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::invalid("report has no schema_version"))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            found: found as u32,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn read_report<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Envelope<T>> {
    let path = path.as_ref();
    parse_report(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub mean_mu: f64,
    pub sd_mu: f64,
    pub landmark_error: f64,
    pub sd_landmark_error: f64,
    pub time: f64,
}

pub const TABLE_HEADER: &str = "Method,Mean |mu|,SD |mu|,Landmark Error,SD Landmark Error,Time (second)";

/// CSV with the summary-table column order.
pub fn table_csv(rows: &[TableRow]) -> String {
    let mut s = format!("{TABLE_HEADER}\n");
    for r in rows {
        let method = if r.method.contains([',', '"']) {
            format!("\"{}\"", r.method.replace('"', "\"\""))
        } else {
            r.method.clone()
        };
        let _ = writeln!(
            s,
            "{method},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.mean_mu, r.sd_mu, r.landmark_error, r.sd_landmark_error, r.time
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn record() -> MetricsRecord {
        MetricsRecord {
            mean_mu: 0.0187,
            sd_mu: 1.0 / 3.0,
            max_mu: 0.2,
            landmark_rmse: 1.14e-2,
            wall_time: 0.53,
            histogram: Histogram {
                lo: 0.0,
                hi: 1.0,
                counts: vec![3, 0, 7],
            },
            parameters: RegistrationParams::default(),
            loss_trace: vec![LossRecord {
                l_mu: 0.1,
                l_grad_mu: 0.2,
                l_landmark: 1e-300,
                total: std::f64::consts::PI,
            }],
            converged: true,
            infeasible_pairs: vec![(1, 2)],
            reach: 1.0,
        }
    }

    #[test]
    fn round_trip_and_stability() {
        let env = Envelope::new("registration", Some(4), record());
        let text = report_string(&env).unwrap();
        let back: Envelope<MetricsRecord> = parse_report(&text).unwrap();
        assert_eq!(back, env);
        assert_eq!(report_string(&back).unwrap(), text);
        // Keys come out sorted.
        let gen = text.find("\"generator\"").unwrap();
        let kind = text.find("\"kind\"").unwrap();
        assert!(gen < kind);
    }

    #[test]
    fn schema_mismatch_names_both_versions() {
        let text = report_string(&Envelope::new("x", None, 1u32))
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 7");
        let err = parse_report::<u32>(&text).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion { found: 7, expected: 1 }));
        let msg = err.to_string();
        assert!(msg.contains('7') && msg.contains('1'));
    }

    #[test]
    fn doubles_round_trip_bit_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..1000)
            .map(|k| {
                let x = f64::from_bits(rng.random::<u64>());
                if x.is_finite() {
                    x
                } else {
                    k as f64 * 1e-7
                }
            })
            .collect();
        let text = report_string(&Envelope::new("doubles", None, values.clone())).unwrap();
        let back: Envelope<Vec<f64>> = parse_report(&text).unwrap();
        for (a, b) in values.iter().zip(&back.payload) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn non_finite_is_rejected() {
        assert!(record().validate().is_ok());
        let mut bad = record();
        bad.loss_trace[0].total = f64::INFINITY;
        assert!(bad.validate().is_err());
        // serde_json turns NaN into null, which then fails to parse back as f64.
        let text = report_string(&Envelope::new("x", None, vec![f64::NAN])).unwrap();
        assert!(parse_report::<Vec<f64>>(&text).is_err());
    }

    #[test]
    fn table_layout() {
        let csv = table_csv(&[TableRow {
            method: "classical, gamma=1e4".into(),
            mean_mu: 0.02,
            sd_mu: 0.01,
            landmark_error: 0.011,
            sd_landmark_error: 0.001,
            time: 1.5,
        }]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), TABLE_HEADER);
        assert!(lines
            .next()
            .unwrap()
            .starts_with("\"classical, gamma=1e4\",2.0000000000000000e-2,"));
    }
}
