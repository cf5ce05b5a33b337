//! Run reports: JSON summary, CSV sample dumps, plot columns and an aligned
//! text table.
//!
//! CSV headers (stable):
//!
//! * `responses.csv`: `request_id,ub,dc,created_ms,returned_ms,response_ms,network_ms,migrations`
//! * `services.csv`: `request_id,dc,vm,dc_arrival_ms,service_start_ms,service_end_ms,queue_wait_ms,migration_transit_ms,service_ms,processing_ms`
//! * `loading.csv`: `dc,hour,requests`
//!
//! Plot files hold `index value` pairs with a `#` header naming the entities.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::metrics::{HourlyLoading, Summary, SummaryTable};
use crate::sim::{CheckCounts, RunOutcome};

pub const RESPONSES_HEADER: &str =
    "request_id,ub,dc,created_ms,returned_ms,response_ms,network_ms,migrations";
pub const SERVICES_HEADER: &str = "request_id,dc,vm,dc_arrival_ms,service_start_ms,service_end_ms,queue_wait_ms,migration_transit_ms,service_ms,processing_ms";
pub const LOADING_HEADER: &str = "dc,hour,requests";
pub const ASSIGNMENTS_HEADER: &str = "request_id,dc,vm,migrations";
pub const ARRIVALS_HEADER: &str = "request_id,ub,created_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecksReport {
    pub esce_argmin: u64,
    pub throttle_cap: u64,
    pub decomposition: u64,
}

impl From<CheckCounts> for ChecksReport {
    fn from(c: CheckCounts) -> Self {
        ChecksReport {
            esce_argmin: c.esce_argmin,
            throttle_cap: c.throttle_cap,
            decomposition: c.decomposition,
        }
    }
}

/// Everything in `summary.json`. Contains no wall-clock data so identical
/// runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: String,
    pub mode: String,
    pub seed: u64,
    pub hours: u32,
    pub generated: u64,
    pub returned: u64,
    pub dropped: u64,
    pub events: u64,
    pub migrations: u64,
    pub migrated_requests: u64,
    pub final_clock_ms: f64,
    pub peak_in_flight: Vec<u32>,
    pub checks: ChecksReport,
    pub summary: Summary,
    pub loading: Vec<HourlyLoading>,
}

impl RunReport {
    pub fn new(cfg: &SimulationConfig, out: &RunOutcome) -> Self {
        RunReport {
            policy: cfg.policy.name().into(),
            mode: cfg.scheduling_mode.name().into(),
            seed: cfg.seed,
            hours: cfg.duration_hours,
            generated: out.generated,
            returned: out.returned,
            dropped: out.dropped,
            events: out.events_processed,
            migrations: out.metrics.migrations(),
            migrated_requests: out.metrics.migrated_requests(),
            final_clock_ms: out.final_clock.as_millis_f64(),
            peak_in_flight: out.peak_in_flight.clone(),
            checks: out.checks.into(),
            summary: out.metrics.summarize(),
            loading: out.metrics.hourly_loading(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn ms(t: crate::time::SimTime) -> String {
    t.to_string()
}

pub fn write_responses(w: &mut dyn Write, out: &RunOutcome) -> io::Result<()> {
    writeln!(w, "{RESPONSES_HEADER}")?;
    let ubs = out.metrics.ub_names();
    let dcs = out.metrics.dc_names();
    for s in out.metrics.responses() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.request,
            ubs[s.ub],
            dcs[s.dc],
            ms(s.created),
            ms(s.returned),
            ms(s.response()),
            ms(s.network),
            s.migrations
        )?;
    }
    Ok(())
}

pub fn write_services(w: &mut dyn Write, out: &RunOutcome) -> io::Result<()> {
    writeln!(w, "{SERVICES_HEADER}")?;
    let dcs = out.metrics.dc_names();
    for s in out.metrics.services() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            s.request,
            dcs[s.dc],
            s.vm,
            ms(s.dc_arrival),
            ms(s.service_start),
            ms(s.service_end),
            ms(s.queue_wait),
            ms(s.migration_transit),
            ms(s.service()),
            ms(s.processing())
        )?;
    }
    Ok(())
}

pub fn write_loading(w: &mut dyn Write, loading: &[HourlyLoading]) -> io::Result<()> {
    writeln!(w, "{LOADING_HEADER}")?;
    for l in loading {
        for (h, c) in l.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", l.dc, h, c)?;
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:.6}"))
}

/// `index avg_ms` per entity; empty entities are written as `nan` so plot
/// tools skip them.
pub fn plot_table(t: &SummaryTable) -> String {
    let mut s = format!("# {} avg_ms\n# index entity\n", t.metric);
    for (i, r) in t.entity_rows().iter().enumerate() {
        let _ = writeln!(s, "#   {i} {}", r.entity);
    }
    for (i, r) in t.entity_rows().iter().enumerate() {
        let _ = writeln!(s, "{i} {}", fmt_opt(r.avg_ms));
    }
    s
}

/// One `hour requests` block per data center, blocks separated by two blank
/// lines.
pub fn plot_loading(loading: &[HourlyLoading]) -> String {
    let mut s = String::from("# hourly requests serviced\n");
    for (i, l) in loading.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# {}", l.dc);
        for (h, c) in l.counts.iter().enumerate() {
            let _ = writeln!(s, "{h} {c}");
        }
    }
    s
}

/// Aligned `entity avg min max` table.
pub fn text_table(t: &SummaryTable) -> String {
    let width = t.rows.iter().map(|r| r.entity.len()).max().unwrap_or(0).max(6);
    let mut s = format!(
        "{}\n{:<width$} {:>10} {:>10} {:>10} {:>10}\n",
        t.metric, "entity", "count", "avg (ms)", "min (ms)", "max (ms)"
    );
    let cell = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.3}"));
    for r in &t.rows {
        let _ = writeln!(
            s,
            "{:<width$} {:>10} {:>10} {:>10} {:>10}",
            r.entity,
            r.count,
            cell(r.avg_ms),
            cell(r.min_ms),
            cell(r.max_ms)
        );
    }
    if t.empty {
        s.push_str("(no samples)\n");
    }
    s
}

/// Writes the full set of run artifacts into `dir`. Sample CSVs are written
/// only when the run retained samples.
pub fn write_run(dir: &Path, report: &RunReport, out: &RunOutcome) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.json"), report.to_json())?;
    let mut buf = Vec::new();
    write_loading(&mut buf, &report.loading)?;
    std::fs::write(dir.join("loading.csv"), &buf)?;
    buf.clear();
    write_responses(&mut buf, out)?;
    std::fs::write(dir.join("responses.csv"), &buf)?;
    buf.clear();
    write_services(&mut buf, out)?;
    std::fs::write(dir.join("services.csv"), &buf)?;
    std::fs::write(dir.join("fig_response.dat"), plot_table(&report.summary.response_time))?;
    std::fs::write(
        dir.join("fig_service.dat"),
        plot_table(&report.summary.dc_processing_time),
    )?;
    std::fs::write(dir.join("fig_loading.dat"), plot_loading(&report.loading))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_paper_config;
    use crate::sim::{simulate, SimOptions};

    fn short_run() -> (SimulationConfig, RunOutcome) {
        let mut cfg = default_paper_config();
        cfg.duration_hours = 1;
        let opts = SimOptions {
            retain_samples: true,
            ..SimOptions::default()
        };
        let out = simulate(&cfg, &opts).unwrap();
        (cfg, out)
    }

    #[test]
    fn json_round_trips() {
        let (cfg, out) = short_run();
        let r = RunReport::new(&cfg, &out);
        let back: RunReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_row_counts_match_samples() {
        let (_, out) = short_run();
        let mut buf = Vec::new();
        write_responses(&mut buf, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(RESPONSES_HEADER));
        assert_eq!(lines.count() as u64, out.returned);
    }

    #[test]
    fn plot_table_has_one_row_per_entity() {
        let (cfg, out) = short_run();
        let r = RunReport::new(&cfg, &out);
        let p = plot_table(&r.summary.response_time);
        let data: Vec<_> = p.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 6);
        assert!(data[0].starts_with("0 "));
    }

    #[test]
    fn empty_table_renders_dashes() {
        let t = SummaryTable::from_stats("x", &["A".into()], &[Default::default()]);
        let s = text_table(&t);
        assert!(s.contains("(no samples)"));
        assert!(!s.contains("NaN"));
        assert!(plot_table(&t).contains("0 nan"));
    }
}
