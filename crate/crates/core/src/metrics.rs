//! Per-request samples and the summary tables built from them.
//!
//! All accumulation is in integer microseconds so streaming statistics are
//! exactly reproducible from the retained samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;
use crate::workload::RequestId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("request {request}: {what}")]
    OutOfOrder { request: RequestId, what: &'static str },
}

/// Streaming count/sum/min/max over durations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamingStats {
    pub count: u64,
    pub sum_us: u128,
    pub min_us: u64,
    pub max_us: u64,
}

impl StreamingStats {
    pub fn record(&mut self, d: SimTime) {
        let us = d.as_micros();
        if self.count == 0 {
            self.min_us = us;
            self.max_us = us;
        } else {
            self.min_us = self.min_us.min(us);
            self.max_us = self.max_us.max(us);
        }
        self.count += 1;
        self.sum_us += us as u128;
    }

    pub fn merge(&mut self, other: &StreamingStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        self.count += other.count;
        self.sum_us += other.sum_us;
        self.min_us = self.min_us.min(other.min_us);
        self.max_us = self.max_us.max(other.max_us);
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn avg_ms(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_us as f64 / self.count as f64 / 1000.0)
    }

    pub fn min_ms(&self) -> Option<f64> {
        (self.count > 0).then(|| self.min_us as f64 / 1000.0)
    }

    pub fn max_ms(&self) -> Option<f64> {
        (self.count > 0).then(|| self.max_us as f64 / 1000.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub ub: usize,
    pub request: RequestId,
    pub created: SimTime,
    pub returned: SimTime,
    pub dc: usize,
    pub migrations: u32,
    /// Total time on the network across every leg.
    pub network: SimTime,
}

impl ResponseSample {
    pub fn response(&self) -> SimTime {
        self.returned - self.created
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSample {
    pub dc: usize,
    pub vm: usize,
    pub request: RequestId,
    /// First arrival at any data center.
    pub dc_arrival: SimTime,
    pub service_start: SimTime,
    pub service_end: SimTime,
    /// Waiting for a VM, excluding transit between data centers.
    pub queue_wait: SimTime,
    pub migration_transit: SimTime,
}

impl ServiceSample {
    /// Time executing on the VM.
    pub fn service(&self) -> SimTime {
        self.service_end - self.service_start
    }

    /// Time from reaching the data center tier to finishing execution:
    /// migration transit + queue wait + service.
    pub fn processing(&self) -> SimTime {
        self.service_end - self.dc_arrival
    }
}

/// Requests serviced per hour at one data center.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourlyLoading {
    pub dc: String,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub entity: String,
    pub count: u64,
    pub avg_ms: Option<f64>,
    pub min_ms: Option<f64>,
    pub max_ms: Option<f64>,
}

impl SummaryRow {
    fn from_stats(entity: &str, s: &StreamingStats) -> Self {
        SummaryRow {
            entity: entity.to_string(),
            count: s.count,
            avg_ms: s.avg_ms(),
            min_ms: s.min_ms(),
            max_ms: s.max_ms(),
        }
    }
}

/// Avg/min/max per entity with an `Overall` row last. Entities without
/// samples carry `None` rather than NaN; `empty` is set when nothing at all
/// was recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub metric: String,
    pub empty: bool,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn from_stats(metric: &str, names: &[String], stats: &[StreamingStats]) -> Self {
        let mut overall = StreamingStats::default();
        let mut rows: Vec<_> = names
            .iter()
            .zip(stats)
            .map(|(n, s)| {
                overall.merge(s);
                SummaryRow::from_stats(n, s)
            })
            .collect();
        rows.push(SummaryRow::from_stats("Overall", &overall));
        SummaryTable {
            metric: metric.to_string(),
            empty: overall.is_empty(),
            rows,
        }
    }

    pub fn overall(&self) -> &SummaryRow {
        self.rows.last().expect("overall row always present")
    }

    pub fn row(&self, entity: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.entity == entity)
    }

    /// Rows for individual entities, without the overall row.
    pub fn entity_rows(&self) -> &[SummaryRow] {
        &self.rows[..self.rows.len() - 1]
    }
}

/// The three report families for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub response_time: SummaryTable,
    pub dc_processing_time: SummaryTable,
    pub dc_service_time: SummaryTable,
    pub dc_queue_wait: SummaryTable,
}

/// Accumulates samples for a single run.
#[derive(Debug, Clone)]
pub struct MetricsStore {
    ub_names: Vec<String>,
    dc_names: Vec<String>,
    hours: usize,
    retain: bool,
    response: Vec<StreamingStats>,
    processing: Vec<StreamingStats>,
    service: Vec<StreamingStats>,
    queue_wait: Vec<StreamingStats>,
    loading: Vec<Vec<u64>>,
    responses: Vec<ResponseSample>,
    services: Vec<ServiceSample>,
    migrations: u64,
    migrated_requests: u64,
}

impl MetricsStore {
    /// `hours` sets the loading histogram width; completions past the last
    /// bucket are folded into it. With `retain` every sample is kept for
    /// export, otherwise only streaming statistics are.
    pub fn new(ub_names: Vec<String>, dc_names: Vec<String>, hours: usize, retain: bool) -> Self {
        let hours = hours.max(1);
        let n_ub = ub_names.len();
        let n_dc = dc_names.len();
        MetricsStore {
            ub_names,
            dc_names,
            hours,
            retain,
            response: vec![StreamingStats::default(); n_ub],
            processing: vec![StreamingStats::default(); n_dc],
            service: vec![StreamingStats::default(); n_dc],
            queue_wait: vec![StreamingStats::default(); n_dc],
            loading: vec![vec![0; hours]; n_dc],
            responses: Vec::new(),
            services: Vec::new(),
            migrations: 0,
            migrated_requests: 0,
        }
    }

    pub fn record_response(&mut self, s: ResponseSample) -> Result<(), MetricsError> {
        if s.returned < s.created {
            return Err(MetricsError::OutOfOrder {
                request: s.request,
                what: "returned before created",
            });
        }
        self.response[s.ub].record(s.response());
        self.migrations += s.migrations as u64;
        self.migrated_requests += u64::from(s.migrations > 0);
        if self.retain {
            self.responses.push(s);
        }
        Ok(())
    }

    pub fn record_service(&mut self, s: ServiceSample) -> Result<(), MetricsError> {
        let err = |what| {
            Err(MetricsError::OutOfOrder {
                request: s.request,
                what,
            })
        };
        if s.service_end < s.service_start {
            return err("service ended before it started");
        }
        if s.service_start < s.dc_arrival {
            return err("service started before reaching a data center");
        }
        if s.queue_wait + s.migration_transit != s.service_start - s.dc_arrival {
            return err("queue wait and transit do not add up");
        }
        self.processing[s.dc].record(s.processing());
        self.service[s.dc].record(s.service());
        self.queue_wait[s.dc].record(s.queue_wait);
        let hour = (s.service_end.hour_index() as usize).min(self.hours - 1);
        self.loading[s.dc][hour] += 1;
        if self.retain {
            self.services.push(s);
        }
        Ok(())
    }

    pub fn summarize(&self) -> Summary {
        Summary {
            response_time: SummaryTable::from_stats("response_time", &self.ub_names, &self.response),
            dc_processing_time: SummaryTable::from_stats(
                "dc_processing_time",
                &self.dc_names,
                &self.processing,
            ),
            dc_service_time: SummaryTable::from_stats("dc_service_time", &self.dc_names, &self.service),
            dc_queue_wait: SummaryTable::from_stats("dc_queue_wait", &self.dc_names, &self.queue_wait),
        }
    }

    pub fn hourly_loading(&self) -> Vec<HourlyLoading> {
        self.dc_names
            .iter()
            .zip(&self.loading)
            .map(|(dc, counts)| HourlyLoading {
                dc: dc.clone(),
                counts: counts.clone(),
            })
            .collect()
    }

    pub fn response_stats(&self) -> &[StreamingStats] {
        &self.response
    }

    pub fn processing_stats(&self) -> &[StreamingStats] {
        &self.processing
    }

    pub fn responses(&self) -> &[ResponseSample] {
        &self.responses
    }

    pub fn services(&self) -> &[ServiceSample] {
        &self.services
    }

    pub fn total_returned(&self) -> u64 {
        self.response.iter().map(|s| s.count).sum()
    }

    pub fn total_serviced(&self) -> u64 {
        self.service.iter().map(|s| s.count).sum()
    }

    pub fn migrations(&self) -> u64 {
        self.migrations
    }

    pub fn migrated_requests(&self) -> u64 {
        self.migrated_requests
    }

    pub fn ub_names(&self) -> &[String] {
        &self.ub_names
    }

    pub fn dc_names(&self) -> &[String] {
        &self.dc_names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn us(v: u64) -> SimTime {
        SimTime::from_micros(v)
    }

    fn store() -> MetricsStore {
        MetricsStore::new(vec!["UB1".into()], vec!["DC1".into()], 2, true)
    }

    fn resp(request: u64, created: u64, returned: u64) -> ResponseSample {
        ResponseSample {
            ub: 0,
            request,
            created: us(created),
            returned: us(returned),
            dc: 0,
            migrations: 0,
            network: SimTime::ZERO,
        }
    }

    fn svc(request: u64, start: u64, end: u64) -> ServiceSample {
        ServiceSample {
            dc: 0,
            vm: 0,
            request,
            dc_arrival: us(start),
            service_start: us(start),
            service_end: us(end),
            queue_wait: SimTime::ZERO,
            migration_transit: SimTime::ZERO,
        }
    }

    #[test]
    fn single_sample_stats() {
        let mut m = store();
        m.record_response(resp(0, 0, 50_000)).unwrap();
        let row = m.summarize().response_time.rows[0].clone();
        assert_eq!(row.avg_ms, Some(50.0));
        assert_eq!(row.min_ms, Some(50.0));
        assert_eq!(row.max_ms, Some(50.0));
    }

    #[test]
    fn two_sample_stats() {
        let mut m = store();
        m.record_response(resp(0, 0, 40_000)).unwrap();
        m.record_response(resp(1, 10, 60_010)).unwrap();
        let t = m.summarize().response_time;
        let row = t.row("UB1").unwrap();
        assert_eq!((row.avg_ms, row.min_ms, row.max_ms), (Some(50.0), Some(40.0), Some(60.0)));
        assert_eq!(t.overall().count, 2);
    }

    #[test]
    fn streaming_equals_batch_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = MetricsStore::new(
            (0..4).map(|i| format!("UB{i}")).collect(),
            vec!["DC1".into()],
            1,
            true,
        );
        for i in 0..100_000u64 {
            let created = rng.random_range(0..1_000_000u64);
            let len = rng.random_range(0..200_000u64);
            let mut s = resp(i, created, created + len);
            s.ub = rng.random_range(0..4);
            m.record_response(s).unwrap();
        }
        let table = m.summarize().response_time;
        for ub in 0..4 {
            let xs: Vec<u64> = m
                .responses()
                .iter()
                .filter(|s| s.ub == ub)
                .map(|s| s.response().as_micros())
                .collect();
            let sum: u128 = xs.iter().map(|&x| x as u128).sum();
            let row = &table.rows[ub];
            assert_eq!(row.count, xs.len() as u64);
            assert_eq!(row.avg_ms, Some(sum as f64 / xs.len() as f64 / 1000.0));
            assert_eq!(row.min_ms, Some(*xs.iter().min().unwrap() as f64 / 1000.0));
            assert_eq!(row.max_ms, Some(*xs.iter().max().unwrap() as f64 / 1000.0));
        }
    }

    #[test]
    fn out_of_order_rejected() {
        let mut m = store();
        assert!(m.record_response(resp(0, 10, 5)).is_err());
        assert!(m.record_service(svc(0, 10, 5)).is_err());
        let mut s = svc(1, 10, 20);
        s.dc_arrival = us(11);
        assert!(m.record_service(s).is_err());
        assert_eq!(m.total_returned(), 0);
    }

    #[test]
    fn empty_store_has_marker_not_nan() {
        let t = store().summarize().response_time;
        assert!(t.empty);
        assert!(t.rows.iter().all(|r| r.avg_ms.is_none() && r.count == 0));
        let json = serde_json::to_string(&t).unwrap();
        assert!(!json.contains("NaN"));
    }

    #[test]
    fn loading_buckets_by_end_hour_and_folds_overflow() {
        let mut m = store();
        let h = crate::time::MICROS_PER_HOUR;
        m.record_service(svc(0, 0, 10)).unwrap();
        m.record_service(svc(1, h - 5, h + 5)).unwrap();
        m.record_service(svc(2, 5 * h, 5 * h + 1)).unwrap();
        assert_eq!(m.hourly_loading()[0].counts, vec![1, 2]);
        assert_eq!(m.total_serviced(), 3);
    }

    #[test]
    fn processing_includes_wait_and_transit() {
        let s = ServiceSample {
            dc: 0,
            vm: 0,
            request: 0,
            dc_arrival: us(100),
            service_start: us(400),
            service_end: us(900),
            queue_wait: us(50),
            migration_transit: us(250),
        };
        assert_eq!(s.service(), us(500));
        assert_eq!(s.processing(), us(800));
        let mut m = store();
        m.record_service(s).unwrap();
        let mut bad = s;
        bad.queue_wait = us(51);
        assert!(m.record_service(bad).is_err());
    }
}
