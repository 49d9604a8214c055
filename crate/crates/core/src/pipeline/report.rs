//! Aggregation of per-run fit and metric files into one CSV table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::erfmeter::FitReport;
use crate::error::Result;

pub const FIT_FILE: &str = "fit.json";
pub const METRICS_FILE: &str = "metrics.json";

/// Optional image-quality numbers stored next to a run's fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetrics {
    #[serde(default)]
    pub psnr: Option<f64>,
    #[serde(default)]
    pub psnr_input: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub run: String,
    pub fit: FitReport,
    pub metrics: RunMetrics,
}

/// Every subdirectory of `dir` holding a `fit.json`, in name order.
pub fn collect_runs(dir: impl AsRef<Path>) -> Result<Vec<RunRow>> {
    let mut entries: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(FIT_FILE).is_file())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|path| {
            let fit: FitReport = serde_json::from_str(&fs::read_to_string(path.join(FIT_FILE))?)?;
            let metrics_path = path.join(METRICS_FILE);
            let metrics = if metrics_path.is_file() {
                serde_json::from_str(&fs::read_to_string(metrics_path)?)?
            } else {
                RunMetrics::default()
            };
            let run = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(RunRow { run, fit, metrics })
        })
        .collect()
}

pub const REPORT_HEADER: &str = "run,layer,sigma,beta,mu,c1,c2,r_squared,max_value,erfm,psnr,psnr_input";

/// One line per run; missing metrics are left empty.
pub fn report_csv(rows: &[RunRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        let f = &r.fit;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.run,
            f.layer,
            f.sigma,
            f.beta,
            f.mu,
            f.c1,
            f.c2,
            f.r_squared,
            f.max_value,
            f.erfm,
            opt(r.metrics.psnr),
            opt(r.metrics.psnr_input)
        );
    }
    out
}
