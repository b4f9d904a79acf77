//! CSV and JSON persistence.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rdrlvi_core::experiment::RegretRecord;
use serde::Serialize;

use crate::error::{HarnessError, Result};

pub const EPISODE_HEADER: &str =
    "run_id,replication,episode,inst_regret,cum_regret,realized_return,eps,match_count,nnz_mean,wall_ms";

pub const TELEMETRY_HEADER: &str = "run_id,replication,episode,v_policy,est_error,lasso_iterations,lasso_unconverged";

/// Nine significant digits, `%.9g` style.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-4..9).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanSd { mean: f64::NAN, sd: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanSd { mean, sd }
}

pub struct Writer {
    inner: BufWriter<File>,
    path: std::path::PathBuf,
}

impl Writer {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut w = Self { inner: BufWriter::new(file), path: path.to_path_buf() };
        w.line(header)?;
        Ok(w)
    }

    pub fn line(&mut self, line: &str) -> Result<()> {
        self.inner.write_all(line.as_bytes()).and_then(|_| self.inner.write_all(b"\n")).map_err(|e| HarnessError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| HarnessError::io(&self.path, e))
    }
}

pub fn episode_row(run_id: &str, replication: usize, r: &RegretRecord) -> String {
    format!(
        "{run_id},{replication},{},{},{},{},{},{},{},{}",
        r.episode,
        fmt_sig(r.inst_regret),
        fmt_sig(r.cum_regret),
        fmt_sig(r.realized_return),
        fmt_sig(r.eps),
        r.match_count,
        fmt_sig(r.nnz_mean),
        fmt_sig(r.wall_ms),
    )
}

pub fn telemetry_row(run_id: &str, replication: usize, r: &RegretRecord) -> String {
    let est = r.est_error.map(fmt_sig).unwrap_or_default();
    format!(
        "{run_id},{replication},{},{},{est},{},{}",
        r.episode,
        fmt_sig(r.v_policy),
        r.lasso_iterations,
        r.lasso_unconverged
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-2.5), "-2.5");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig(123456789.4), "123456789");
        assert_eq!(fmt_sig(1234567894.0), "1.23456789e+09");
        assert_eq!(fmt_sig(0.000012345678912), "1.23456789e-05");
        assert_eq!(fmt_sig(0.0001), "0.0001");
        assert_eq!(fmt_sig(2.0 / 3.0 * 1e3), "666.666667");
    }

    #[test]
    fn round_trip_within_precision() {
        for x in [std::f64::consts::PI, 1e-7 / 3.0, 98765.4321e3, -0.5e-12] {
            let back: f64 = fmt_sig(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-8, "{x} -> {}", fmt_sig(x));
        }
    }

    #[test]
    fn mean_sd_values() {
        let m = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.sd - 1.0).abs() < 1e-15);
        assert_eq!(mean_sd(&[4.0]).sd, 0.0);
    }
}
