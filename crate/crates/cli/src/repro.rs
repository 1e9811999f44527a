//! Benchmark table regeneration. Cells run concurrently on the rayon pool;
//! the table is assembled after all cells finish.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use reluqc::certifier::{certify_gain, stability_margin, BisectionOptions, CertifyOptions};
use reluqc::io::{reference_values, ReferenceTable};
use reluqc::qc::QcKind;
use reluqc::sysmodel::{build_lurye, gain_example};
use reluqc::Error;
use serde::Serialize;

use crate::write_output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Table {
    /// Lurye stability margins, alpha bisection on [0, alpha_hi].
    StabilityTable,
    /// Gain bounds on the four-state gain benchmark.
    GainTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    #[arg(value_enum)]
    table: Table,
    /// Comma-separated horizons; defaults to the reference table columns.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..))]
    horizons: Option<Vec<u32>>,
    #[arg(long, default_value_t = 200.0)]
    alpha_hi: f64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

const KINDS: [QcKind; 2] = [QcKind::ReluFull, QcKind::DoublyHyperdominant];

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub qc_class: &'static str,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub value: Option<f64>,
    pub reference: Option<f64>,
    pub rel_deviation: Option<f64>,
    pub seconds: f64,
    pub status: String,
}

#[derive(Debug, Serialize)]
struct TableReport<'a> {
    table: Table,
    horizons: &'a [usize],
    cells: &'a [CellResult],
}

fn run_cell(table: Table, kind: QcKind, n: usize, alpha_hi: f64, refs: &ReferenceTable) -> CellResult {
    let opts = CertifyOptions::from_env();
    let start = Instant::now();
    let (value, status) = match table {
        Table::StabilityTable => {
            let bisection = BisectionOptions { alpha_hi, ..BisectionOptions::default() };
            match stability_margin(build_lurye, n, kind, &bisection, &opts) {
                Ok(out) if out.certificate.is_none() => (Some(0.0), "not-certified".to_string()),
                Ok(out) if out.range_saturated => (Some(out.alpha), "range-saturated".to_string()),
                Ok(out) => (Some(out.alpha), "certified".to_string()),
                Err(e) => (None, format!("error: {e}")),
            }
        }
        Table::GainTable => match certify_gain(&gain_example(), n, kind, &opts) {
            Ok(cert) => (cert.gamma, "certified".to_string()),
            Err(Error::Infeasible(_)) => (None, "infeasible".to_string()),
            Err(e) => (None, format!("error: {e}")),
        },
    };
    let reference = refs.value(kind, n);
    let rel_deviation = value.zip(reference).map(|(v, r)| (v - r) / r);
    CellResult {
        qc_class: kind.short_name(),
        horizon: n,
        value,
        reference,
        rel_deviation,
        seconds: start.elapsed().as_secs_f64(),
        status,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Wide layout: one column per horizon, one row per quantity and class.
pub fn to_csv(horizons: &[usize], cells: &[CellResult]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["quantity".to_string()];
    header.extend(horizons.iter().map(|n| format!("N={n}")));
    wtr.write_record(&header)?;
    type Field = fn(&CellResult) -> String;
    let rows: [(&str, Field); 5] = [
        ("", |c| opt(c.value)),
        ("_reference", |c| opt(c.reference)),
        ("_rel_deviation", |c| opt(c.rel_deviation)),
        ("_seconds", |c| format!("{:.3}", c.seconds)),
        ("_status", |c| c.status.clone()),
    ];
    for (suffix, field) in rows {
        for kind in KINDS {
            let name = kind.short_name();
            let mut record = vec![format!("{name}{suffix}")];
            for &n in horizons {
                let cell = cells.iter().find(|c| c.qc_class == name && c.horizon == n);
                record.push(cell.map(field).unwrap_or_default());
            }
            wtr.write_record(&record)?;
        }
    }
    Ok(String::from_utf8(wtr.into_inner()?)?)
}

pub fn run(args: &ReproArgs) -> Result<ExitCode> {
    let refs = reference_values();
    let table_refs = match args.table {
        Table::StabilityTable => refs.stability_table,
        Table::GainTable => refs.gain_table,
    };
    let horizons: Vec<usize> = match &args.horizons {
        Some(h) => h.iter().map(|&n| n as usize).collect(),
        None => table_refs.horizons.clone(),
    };
    let jobs: Vec<(QcKind, usize)> =
        KINDS.iter().flat_map(|&k| horizons.iter().map(move |&n| (k, n))).collect();
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(kind, n)| run_cell(args.table, kind, n, args.alpha_hi, &table_refs))
        .collect();
    for c in &cells {
        log::info!("{} N={}: {:?} ({})", c.qc_class, c.horizon, c.value, c.status);
    }
    let text = match args.format {
        Format::Csv => to_csv(&horizons, &cells)?,
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&TableReport {
                table: args.table,
                horizons: &horizons,
                cells: &cells,
            })?;
            s.push('\n');
            s
        }
    };
    write_output(args.output.as_deref(), &text)?;
    let failed = cells.iter().any(|c| c.value.is_none());
    Ok(if failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
}
