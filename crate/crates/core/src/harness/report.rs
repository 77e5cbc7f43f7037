//! Results persistence and aggregation: the flat results CSV, per-group
//! summaries (mean and std over seeds) and the aligned text table.

use std::path::Path;

use crate::error::{Error, Result};

use super::experiment::RunRecord;

/// One row of `results.csv`: the metrics of one client under one protocol
/// for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub config_hash: String,
    pub seed: u64,
    pub protocol: String,
    pub sweep_param: Option<String>,
    pub sweep_value: Option<f64>,
    pub client_id: usize,
    pub query_classes: Vec<usize>,
    pub comm_rounds: u32,
    pub avg_acc: f64,
    pub avg_acc_pre: f64,
    pub query_acc_gain: f64,
    pub forgetting: f64,
    pub uniform_acc: f64,
    pub uniform_acc_pre: f64,
}

/// Column order of `results.csv`.
pub const RESULTS_HEADER: [&str; 14] = [
    "config_hash",
    "seed",
    "protocol",
    "sweep_param",
    "sweep_value",
    "client_id",
    "query_classes",
    "comm_rounds",
    "avg_acc",
    "avg_acc_pre",
    "query_acc_gain",
    "forgetting",
    "uniform_acc",
    "uniform_acc_pre",
];

/// Flatten run records into CSV rows (record order is preserved; clients
/// ascend within a record).
pub fn result_rows(records: &[RunRecord]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for record in records {
        for report in &record.reports {
            rows.push(ResultRow {
                config_hash: record.config_hash.clone(),
                seed: record.seed,
                protocol: record.protocol.clone(),
                sweep_param: record.sweep_param.clone(),
                sweep_value: record.sweep_value,
                client_id: report.client_id,
                query_classes: report.query_classes.clone(),
                comm_rounds: report.comm_rounds,
                avg_acc: report.avg_acc,
                avg_acc_pre: report.avg_acc_pre,
                query_acc_gain: report.query_acc_gain,
                forgetting: report.forgetting,
                uniform_acc: report.uniform_acc,
                uniform_acc_pre: report.uniform_acc_pre,
            });
        }
    }
    rows
}

/// Render rows as CSV text (deterministic shortest-round-trip floats).
pub fn results_csv_string(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    out.push_str(&RESULTS_HEADER.join(","));
    out.push('\n');
    for r in rows {
        let query = r
            .query_classes
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.config_hash,
            r.seed,
            r.protocol,
            r.sweep_param.as_deref().unwrap_or(""),
            r.sweep_value.map(|v| v.to_string()).unwrap_or_default(),
            r.client_id,
            query,
            r.comm_rounds,
            r.avg_acc,
            r.avg_acc_pre,
            r.query_acc_gain,
            r.forgetting,
            r.uniform_acc,
            r.uniform_acc_pre,
        ));
    }
    out
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    std::fs::write(path, results_csv_string(rows))?;
    Ok(())
}

/// Parse a `results.csv` produced by [`write_results_csv`].
pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let field = |idx: usize| -> Result<&str> {
            record
                .get(idx)
                .ok_or_else(|| Error::Csv(format!("results row {i}: missing column {idx}")))
        };
        let parse_f64 = |idx: usize| -> Result<f64> {
            field(idx)?
                .parse()
                .map_err(|_| Error::Csv(format!("results row {i}: bad number in column {idx}")))
        };
        let query_classes = {
            let raw = field(6)?;
            if raw.is_empty() {
                Vec::new()
            } else {
                raw.split(';')
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::Csv(format!("results row {i}: bad query class {s:?}")))
                    })
                    .collect::<Result<Vec<usize>>>()?
            }
        };
        rows.push(ResultRow {
            config_hash: field(0)?.to_string(),
            seed: field(1)?
                .parse()
                .map_err(|_| Error::Csv(format!("results row {i}: bad seed")))?,
            protocol: field(2)?.to_string(),
            sweep_param: match field(3)? {
                "" => None,
                s => Some(s.to_string()),
            },
            sweep_value: match field(4)? {
                "" => None,
                s => Some(
                    s.parse()
                        .map_err(|_| Error::Csv(format!("results row {i}: bad sweep value")))?,
                ),
            },
            client_id: field(5)?
                .parse()
                .map_err(|_| Error::Csv(format!("results row {i}: bad client id")))?,
            query_classes,
            comm_rounds: field(7)?
                .parse()
                .map_err(|_| Error::Csv(format!("results row {i}: bad comm_rounds")))?,
            avg_acc: parse_f64(8)?,
            avg_acc_pre: parse_f64(9)?,
            query_acc_gain: parse_f64(10)?,
            forgetting: parse_f64(11)?,
            uniform_acc: parse_f64(12)?,
            uniform_acc_pre: parse_f64(13)?,
        });
    }
    Ok(rows)
}

/// Seed-aggregated summary of one `(protocol, sweep value)` group: the
/// network-level value of each metric is the unweighted mean over clients
/// within a seed; the summary reports mean and population std over seeds.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub protocol: String,
    pub sweep_param: Option<String>,
    pub sweep_value: Option<f64>,
    pub num_seeds: usize,
    pub avg_acc_mean: f64,
    pub avg_acc_std: f64,
    pub query_acc_gain_mean: f64,
    pub query_acc_gain_std: f64,
    pub forgetting_mean: f64,
    pub forgetting_std: f64,
    pub uniform_acc_mean: f64,
    pub uniform_acc_std: f64,
    pub comm_rounds: u32,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Group rows by `(protocol, sweep value)` and aggregate over seeds.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    // Group key preserves first-seen order for deterministic output.
    let mut order: Vec<(String, Option<String>, Option<u64>)> = Vec::new();
    let key_of = |r: &ResultRow| {
        (
            r.protocol.clone(),
            r.sweep_param.clone(),
            r.sweep_value.map(f64::to_bits),
        )
    };
    for r in rows {
        let k = key_of(r);
        if !order.contains(&k) {
            order.push(k);
        }
    }

    let mut out = Vec::new();
    for key in order {
        let group: Vec<&ResultRow> = rows.iter().filter(|r| key_of(r) == key).collect();
        // Per-seed network means.
        let mut seeds: Vec<u64> = group.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut avg = Vec::new();
        let mut gain = Vec::new();
        let mut forg = Vec::new();
        let mut uni = Vec::new();
        for &seed in &seeds {
            let of_seed: Vec<&&ResultRow> = group.iter().filter(|r| r.seed == seed).collect();
            let n = of_seed.len() as f64;
            avg.push(of_seed.iter().map(|r| r.avg_acc).sum::<f64>() / n);
            gain.push(of_seed.iter().map(|r| r.query_acc_gain).sum::<f64>() / n);
            forg.push(of_seed.iter().map(|r| r.forgetting).sum::<f64>() / n);
            uni.push(of_seed.iter().map(|r| r.uniform_acc).sum::<f64>() / n);
        }
        let (avg_m, avg_s) = mean_std(&avg);
        let (gain_m, gain_s) = mean_std(&gain);
        let (forg_m, forg_s) = mean_std(&forg);
        let (uni_m, uni_s) = mean_std(&uni);
        out.push(SummaryRow {
            protocol: key.0,
            sweep_param: key.1,
            sweep_value: key.2.map(f64::from_bits),
            num_seeds: seeds.len(),
            avg_acc_mean: avg_m,
            avg_acc_std: avg_s,
            query_acc_gain_mean: gain_m,
            query_acc_gain_std: gain_s,
            forgetting_mean: forg_m,
            forgetting_std: forg_s,
            uniform_acc_mean: uni_m,
            uniform_acc_std: uni_s,
            comm_rounds: group.first().map_or(0, |r| r.comm_rounds),
        })
    }
    out
}

/// Summary rows as CSV.
pub fn summary_csv_string(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "protocol,sweep_param,sweep_value,seeds,avg_acc_mean,avg_acc_std,query_acc_gain_mean,\
         query_acc_gain_std,forgetting_mean,forgetting_std,uniform_acc_mean,uniform_acc_std,comm_rounds\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.protocol,
            r.sweep_param.as_deref().unwrap_or(""),
            r.sweep_value.map(|v| v.to_string()).unwrap_or_default(),
            r.num_seeds,
            r.avg_acc_mean,
            r.avg_acc_std,
            r.query_acc_gain_mean,
            r.query_acc_gain_std,
            r.forgetting_mean,
            r.forgetting_std,
            r.uniform_acc_mean,
            r.uniform_acc_std,
            r.comm_rounds,
        ));
    }
    out
}

/// Aligned text table (mean +- std per metric, grouped rows).
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let headers = ["protocol", "sweep", "seeds", "avg_acc", "query_gain", "forgetting", "uniform_acc", "comm"];
    let mut cells: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        let sweep = match (&r.sweep_param, r.sweep_value) {
            (Some(p), Some(v)) => format!("{p}={v}"),
            _ => "-".to_string(),
        };
        cells.push(vec![
            r.protocol.clone(),
            sweep,
            r.num_seeds.to_string(),
            format!("{:.4} +- {:.4}", r.avg_acc_mean, r.avg_acc_std),
            format!("{:.4} +- {:.4}", r.query_acc_gain_mean, r.query_acc_gain_std),
            format!("{:.4} +- {:.4}", r.forgetting_mean, r.forgetting_std),
            format!("{:.4} +- {:.4}", r.uniform_acc_mean, r.uniform_acc_std),
            r.comm_rounds.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..headers.len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(protocol: &str, seed: u64, client: usize, avg: f64) -> ResultRow {
        ResultRow {
            config_hash: "h".into(),
            seed,
            protocol: protocol.into(),
            sweep_param: None,
            sweep_value: None,
            client_id: client,
            query_classes: vec![2],
            comm_rounds: 1,
            avg_acc: avg,
            avg_acc_pre: 0.4,
            query_acc_gain: avg / 2.0,
            forgetting: -0.1,
            uniform_acc: avg,
            uniform_acc_pre: 0.4,
        }
    }

    #[test]
    fn single_record_has_zero_std() {
        let rows = vec![row("qkt", 0, 0, 0.7)];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].num_seeds, 1);
        assert_eq!(summary[0].avg_acc_mean, 0.7);
        assert_eq!(summary[0].avg_acc_std, 0.0);
    }

    #[test]
    fn absent_group_key_folds_everything_together() {
        let rows = vec![row("qkt", 0, 0, 0.6), row("qkt", 0, 1, 0.8)];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 1);
        assert!((summary[0].avg_acc_mean - 0.7).abs() < 1e-12);
    }

    #[test]
    fn hand_checked_aggregation_over_seeds() {
        // Seed 0 clients: 0.6, 0.8 -> 0.7; seed 1 clients: 0.5, 0.7 -> 0.6.
        // Mean 0.65, population std 0.05.
        let rows = vec![
            row("qkt", 0, 0, 0.6),
            row("qkt", 0, 1, 0.8),
            row("qkt", 1, 0, 0.5),
            row("qkt", 1, 1, 0.7),
        ];
        let summary = summarize(&rows);
        assert!((summary[0].avg_acc_mean - 0.65).abs() < 1e-12);
        assert!((summary[0].avg_acc_std - 0.05).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_preserves_rows() {
        let dir = std::env::temp_dir().join("qkt_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("results.csv");
        let mut a = row("qkt", 3, 1, 0.625);
        a.sweep_param = Some("query_emphasis".into());
        a.sweep_value = Some(1.5);
        a.query_classes = vec![2, 7];
        let rows = vec![a, row("naive_kd", 0, 0, 0.5)];
        write_results_csv(&path, &rows).unwrap();
        let back = read_results_csv(&path).unwrap();
        assert_eq!(back, rows);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn table_renders_header_and_rows() {
        let summary = summarize(&[row("qkt", 0, 0, 0.7)]);
        let table = summary_table(&summary);
        assert!(table.contains("protocol"));
        assert!(table.contains("qkt"));
    }
}
