use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{geometric_mean_metric, improvement_percent, BenchError, Benchmark, MetricRow};
use crate::agents::{evaluate_policy, Policy};
use crate::env::{EnvConfig, PassEnv};
use crate::graph::{cost_analysis, Bindings, Graph, OpKind, Tensor};
use crate::passes::Catalog;

/// Uniform `[-1, 1]` values for every parameter of `graph`.
pub fn random_bindings(graph: &Graph, rng: &mut impl Rng) -> Bindings {
    graph
        .nodes
        .iter()
        .filter(|n| n.kind == OpKind::Parameter)
        .map(|n| {
            let data = (0..n.shape.element_count())
                .map(|_| rng.gen_range(-1.0..=1.0))
                .collect();
            (
                n.id,
                Tensor {
                    shape: n.shape.clone(),
                    data,
                },
            )
        })
        .collect()
}

/// Same shape, and every element pair within `rel * max(1, |a|, |b|)`.
pub fn tensors_close(a: &Tensor, b: &Tensor, rel: f64) -> bool {
    a.shape == b.shape
        && a.data.len() == b.data.len()
        && a.data
            .iter()
            .zip(&b.data)
            .all(|(x, y)| (x - y).abs() <= rel * 1f64.max(x.abs()).max(y.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Excluded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub i: u64,
    pub r: Option<u64>,
    pub d: u64,
    pub ratio: Option<f64>,
    pub improvement_percent: Option<f64>,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub passes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub geometric_mean: Option<f64>,
    pub excluded: Vec<String>,
    pub failed: Vec<String>,
}

impl EvalReport {
    /// Assembles a report from finished rows, sorting them by name.
    pub fn from_rows(mut rows: Vec<EvalRow>) -> Self {
        rows.sort_by(|a, b| a.name.cmp(&b.name));
        let scored: Vec<(usize, MetricRow)> = rows
            .iter()
            .enumerate()
            .filter_map(|(k, row)| row.r.map(|r| (k, MetricRow::new(row.i, r, row.d))))
            .collect();
        let metric_rows: Vec<MetricRow> = scored.iter().map(|&(_, m)| m).collect();
        let geometric_mean = geometric_mean_metric(&metric_rows).ok();
        for (k, m) in &scored {
            let row = &mut rows[*k];
            row.ratio = m.ratio().value();
            row.status = if row.ratio.is_some() {
                RowStatus::Ok
            } else {
                RowStatus::Excluded
            };
        }
        let names = |s: RowStatus| rows.iter().filter(|r| r.status == s).map(|r| r.name.clone()).collect();
        Self {
            excluded: names(RowStatus::Excluded),
            failed: names(RowStatus::Failed),
            geometric_mean: geometric_mean.map(|m| m.value),
            rows,
        }
    }

    pub fn worst_improvement(&self) -> Option<&EvalRow> {
        self.rows
            .iter()
            .filter(|r| r.improvement_percent.is_some())
            .min_by(|a, b| {
                a.improvement_percent
                    .partial_cmp(&b.improvement_percent)
                    .expect("finite")
            })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// CSV with one line per benchmark and a trailing aggregate line.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let fmt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["name", "I", "R", "D", "ratio", "improvement_percent"])?;
        for row in &self.rows {
            w.write_record([
                row.name.clone(),
                row.i.to_string(),
                row.r.map_or(String::new(), |r| r.to_string()),
                row.d.to_string(),
                fmt(row.ratio),
                fmt(row.improvement_percent),
            ])?;
        }
        w.write_record(["geometric_mean", "", "", "", &fmt(self.geometric_mean), ""])?;
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Scores `policy` on every benchmark. Rows whose evaluation fails are
/// marked failed and left out of the metric.
pub fn run_evaluation(
    policy: &dyn Policy,
    suite: &[Benchmark],
    env_config: &EnvConfig,
    catalog: Arc<Catalog>,
) -> Result<EvalReport, BenchError> {
    if suite.is_empty() {
        return Err(BenchError::EmptySuite);
    }
    env_config.validate(&catalog)?;
    let rows = suite
        .par_iter()
        .map(|b| {
            let i = cost_analysis(&b.graph).op_count;
            let d = cost_analysis(&catalog.run_default_pipeline(&b.graph)).op_count;
            let outcome = PassEnv::new(env_config.clone(), catalog.clone())
                .map_err(Into::into)
                .and_then(|mut env| {
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    evaluate_policy(policy, &mut env, &b.graph, true, &mut rng)
                });
            match outcome {
                Ok(o) => EvalRow {
                    name: b.name.clone(),
                    i,
                    r: Some(o.final_op_count),
                    d,
                    ratio: None,
                    improvement_percent: Some(improvement_percent(i, o.final_op_count, d)),
                    status: RowStatus::Ok,
                    passes: o.passes.iter().map(|&p| catalog.name(p).to_string()).collect(),
                    error: None,
                },
                Err(e) => EvalRow {
                    name: b.name.clone(),
                    i,
                    r: None,
                    d,
                    ratio: None,
                    improvement_percent: None,
                    status: RowStatus::Failed,
                    passes: vec![],
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(EvalReport::from_rows(rows))
}

/// Writes `<stem>.csv` and `<stem>.json` next to each other.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<(), BenchError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(BenchError::io(dir))?;
    }
    let csv_path = path.with_extension("csv");
    let json_path = path.with_extension("json");
    let csv = report.to_csv().map_err(|source| BenchError::Csv {
        path: csv_path.clone(),
        source,
    })?;
    std::fs::write(&csv_path, csv).map_err(BenchError::io(&csv_path))?;
    std::fs::write(&json_path, report.to_json()).map_err(BenchError::io(&json_path))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioDelta {
    pub name: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta: Option<f64>,
}

/// Per-benchmark `b - a` ratio differences over the union of names.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Vec<RatioDelta> {
    let mut names: BTreeMap<&str, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for row in &a.rows {
        names.entry(&row.name).or_default().0 = row.ratio;
    }
    for row in &b.rows {
        names.entry(&row.name).or_default().1 = row.ratio;
    }
    names
        .into_iter()
        .map(|(name, (ra, rb))| RatioDelta {
            name: name.to_string(),
            a: ra,
            b: rb,
            delta: ra.zip(rb).map(|(x, y)| y - x),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, i: u64, r: Option<u64>, d: u64) -> EvalRow {
        EvalRow {
            name: name.into(),
            i,
            r,
            d,
            ratio: None,
            improvement_percent: r.map(|r| improvement_percent(i, r, d)),
            status: if r.is_some() { RowStatus::Ok } else { RowStatus::Failed },
            passes: vec![],
            error: None,
        }
    }

    #[test]
    fn rows_sorted_and_classified() {
        let rep = EvalReport::from_rows(vec![
            row("b", 100, Some(80), 90),
            row("a", 10, Some(8), 10),
            row("c", 10, None, 5),
        ]);
        assert_eq!(
            rep.rows.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
        assert_eq!(rep.excluded, ["a"]);
        assert_eq!(rep.failed, ["c"]);
        assert_eq!(rep.geometric_mean, Some(2.0));
        assert_eq!(rep.worst_improvement().unwrap().name, "b");
    }

    #[test]
    fn csv_has_aggregate_line() {
        let rep = EvalReport::from_rows(vec![row("a", 100, Some(80), 90), row("b", 100, Some(95), 90)]);
        let csv = rep.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "name,I,R,D,ratio,improvement_percent");
        assert_eq!(lines[3], "geometric_mean,,,,1,");
    }

    #[test]
    fn compare_takes_union() {
        let a = EvalReport::from_rows(vec![row("x", 100, Some(80), 90)]);
        let b = EvalReport::from_rows(vec![row("x", 100, Some(90), 90), row("y", 10, Some(5), 5)]);
        let d = compare_reports(&a, &b);
        assert_eq!(d[0].delta, Some(-1.0));
        assert_eq!(d[1].a, None);
    }
}
