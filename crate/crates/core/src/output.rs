//! CSV and JSON emission of run results.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{DecisionRow, FlowLog, RunOutput};
use crate::metrics::MetricsRow;
use crate::occ::Bottleneck;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Serialize)]
struct DecisionRecord {
    subframe: u64,
    c_p: f64,
    c_f: f64,
    b: f64,
    c_p_prime: f64,
    r: f64,
    state: &'static str,
    d: u64,
    fallback: bool,
    flow_id: u32,
}

impl From<&DecisionRow> for DecisionRecord {
    fn from(row: &DecisionRow) -> Self {
        let d = &row.decision;
        Self {
            subframe: d.subframe,
            c_p: d.c_p,
            c_f: d.c_f,
            b: d.b,
            c_p_prime: d.c_p_prime,
            r: d.r,
            state: match d.state {
                Bottleneck::Wireless => "wireless",
                Bottleneck::Internet => "internet",
            },
            d: d.d,
            fallback: d.fallback,
            flow_id: row.flow_id,
        }
    }
}

#[derive(Debug, Serialize)]
struct PacketRecord {
    flow_id: u32,
    frame_id: u64,
    seq: u64,
    sent_at: u64,
    arrived_bs_at: u64,
    delivered_at: Option<u64>,
    size: u32,
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per `(axis value, flow)`, led by `axis` and `value` columns.
pub fn write_sweep_csv<W: Write>(mut out: W, axis: &str, runs: &[(f64, Vec<MetricsRow>)]) -> Result<(), OutputError> {
    let mut header_written = false;
    for (value, rows) in runs {
        for row in rows {
            let mut buf = Vec::new();
            write_metrics_csv(&mut buf, std::slice::from_ref(row))?;
            let text = String::from_utf8_lossy(&buf);
            let mut lines = text.lines();
            let (header, data) = (lines.next().unwrap_or_default(), lines.next().unwrap_or_default());
            let io = |source| OutputError::Io {
                path: "sweep csv".into(),
                source,
            };
            if !header_written {
                writeln!(out, "axis,value,{header}").map_err(io)?;
                header_written = true;
            }
            writeln!(out, "{axis},{value},{data}").map_err(io)?;
        }
    }
    Ok(())
}

pub fn write_decisions_csv<W: Write>(out: W, rows: &[DecisionRow]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(DecisionRecord::from(r))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Delivered and dropped video packets, ordered by flow then sequence.
pub fn write_packets_csv<W: Write>(out: W, flows: &[FlowLog]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_writer(out);
    for f in flows {
        let mut packets: Vec<_> = f.delivered.iter().chain(&f.dropped).collect();
        packets.sort_by_key(|p| p.seq);
        for p in packets {
            w.serialize(PacketRecord {
                flow_id: p.flow_id.0,
                frame_id: p.frame_id,
                seq: p.seq,
                sent_at: p.sent_at,
                arrived_bs_at: p.arrived_bs_at,
                delivered_at: p.delivered_at,
                size: p.size,
            })?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LogOptions {
    pub decisions: bool,
    pub packets: bool,
}

/// Writes `config.json`, `metrics.json`, `metrics.csv` and the requested logs into `dir`.
pub fn write_run_dir(
    dir: &Path,
    config: &ScenarioConfig,
    output: &RunOutput,
    logs: LogOptions,
) -> Result<(), OutputError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| OutputError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let file = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p).map_err(io(&p))
    };
    let mut cfg = file("config.json")?;
    writeln!(cfg, "{}", config.to_json()).map_err(io(&dir.join("config.json")))?;
    let mut metrics = file("metrics.json")?;
    serde_json::to_writer_pretty(&mut metrics, &output.report)?;
    writeln!(metrics).map_err(io(&dir.join("metrics.json")))?;
    write_metrics_csv(file("metrics.csv")?, &output.report.rows())?;
    if logs.decisions {
        write_decisions_csv(file("decisions.csv")?, &output.decisions)?;
    }
    if logs.packets {
        write_packets_csv(file("packets.csv")?, &output.flows)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::preset;

    #[test]
    fn run_dir_layout_and_columns() {
        let mut c = preset("bottleneck_switch").unwrap();
        c.horizon = 1500;
        let out = crate::run(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run_dir(dir.path(), &c, &out, LogOptions { decisions: true, packets: true }).unwrap();
        let read = |n: &str| fs::read_to_string(dir.path().join(n)).unwrap();
        assert_eq!(ScenarioConfig::from_json(&read("config.json")).unwrap(), c);
        let report: crate::MetricsReport = serde_json::from_str(&read("metrics.json")).unwrap();
        assert_eq!(report, out.report);
        assert!(read("metrics.csv").starts_with("scenario,seed,flow_id,controller,"));
        let decisions = read("decisions.csv");
        assert!(decisions.starts_with("subframe,c_p,c_f,b,c_p_prime,r,state,d,fallback,flow_id\n"));
        assert_eq!(decisions.lines().count(), out.decisions.len() + 1);
        assert!(read("packets.csv").starts_with("flow_id,frame_id,seq,sent_at,arrived_bs_at,delivered_at,size\n"));
    }

    #[test]
    fn sweep_csv_prefixes_axis_columns() {
        let mut c = preset("burst_sweep").unwrap();
        c.horizon = 500;
        let rows = crate::run(&c).unwrap().report.rows();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, "fps", &[(25.0, rows.clone()), (30.0, rows)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("axis,value,scenario,"));
        assert!(lines[1].starts_with("fps,25,"));
        assert!(lines[2].starts_with("fps,30,"));
    }
}
