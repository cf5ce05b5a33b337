//! Static world description and scenario file handling.
//!
//! Scenario files are TOML: a `[simulation]` header for run parameters,
//! `[availability]` and `[network]` sections, then one `[[user_base]]` table
//! per user base and one `[[data_center]]` table per data center with its
//! `[[data_center.vm]]` fleet. See `configs/SCHEMA.md` for every key.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balancer::PolicyKind;
use crate::vm::SchedulingMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation{}: {message}", field.as_deref().map(|f| format!(" in `{f}`")).unwrap_or_default())]
    Schema {
        field: Option<String>,
        message: String,
    },
    #[error("invalid configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// One broken rule, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

/// Half-open interval `[start, end)` of hours of day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct HourRange {
    pub start: u32,
    pub end: u32,
}

impl HourRange {
    pub fn contains(&self, hour: u32) -> bool {
        self.start <= hour && hour < self.end
    }
}

impl From<[u32; 2]> for HourRange {
    fn from([start, end]: [u32; 2]) -> Self {
        HourRange { start, end }
    }
}

impl From<HourRange> for [u32; 2] {
    fn from(r: HourRange) -> Self {
        [r.start, r.end]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserBase {
    pub id: String,
    pub region: usize,
    pub users_peak: u64,
    #[serde(default)]
    pub users_offpeak: u64,
    #[serde(default = "default_peak_hours")]
    pub peak_hours: HourRange,
    #[serde(default = "default_requests_per_user_per_hour")]
    pub requests_per_user_per_hour: f64,
    /// Bytes per request.
    #[serde(default = "default_request_size")]
    pub request_size: u64,
    /// Work per request in MI.
    #[serde(default = "default_request_length")]
    pub request_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmSpec {
    pub id: usize,
    /// Instruction throughput in MI/s.
    pub mips: u64,
    #[serde(default = "default_vm_memory")]
    pub memory: u64,
    #[serde(default = "default_vm_bandwidth")]
    pub bandwidth: u64,
    /// Expected resource-loss events per measurement period.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub loss_rate: f64,
    /// Expected downtime per loss event, minutes.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub downtime_min: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCenter {
    pub id: String,
    pub region: usize,
    #[serde(rename = "vm", default)]
    pub vms: Vec<VmSpec>,
}

/// Symmetric one-way delays between regions plus per-leg uniform jitter.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyMatrix {
    pub jitter_ms: f64,
    pub delay_ms: Vec<Vec<f64>>,
}

impl LatencyMatrix {
    pub fn delay(&self, from: usize, to: usize) -> f64 {
        self.delay_ms[from][to]
    }
}

/// VM availability screening built on the expected-availability estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvailabilityConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_avail_threshold")]
    pub threshold: f64,
    #[serde(default = "default_measurement_period")]
    pub measurement_period_min: f64,
}

impl Default for AvailabilityConfig {
    fn default() -> Self {
        AvailabilityConfig {
            enabled: false,
            threshold: default_avail_threshold(),
            measurement_period_min: default_measurement_period(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub regions: usize,
    pub user_bases: Vec<UserBase>,
    pub data_centers: Vec<DataCenter>,
    pub latency: LatencyMatrix,
    pub policy: PolicyKind,
    pub scheduling_mode: SchedulingMode,
    pub throttle_threshold: u32,
    pub duration_hours: u32,
    pub seed: u64,
    pub availability: AvailabilityConfig,
}

fn default_peak_hours() -> HourRange {
    HourRange { start: 3, end: 9 }
}
fn default_requests_per_user_per_hour() -> f64 {
    12.0
}
fn default_request_size() -> u64 {
    100
}
fn default_request_length() -> u64 {
    100
}
fn default_vm_memory() -> u64 {
    1 << 30
}
fn default_vm_bandwidth() -> u64 {
    125_000_000
}
fn default_avail_threshold() -> f64 {
    0.95
}
fn default_measurement_period() -> f64 {
    60.0
}
fn default_threshold() -> u32 {
    1
}
fn default_duration() -> u32 {
    24
}

pub const DEFAULT_INTRA_REGION_DELAY_MS: f64 = 25.0;
pub const DEFAULT_INTER_REGION_DELAY_MS: f64 = 100.0;
pub const DEFAULT_JITTER_MS: f64 = 6.0;
pub const DEFAULT_VM_MIPS: u64 = 200_000;
pub const DEFAULT_VMS_PER_DC: usize = 5;

/// Six regions, each with one user base and one data center of five
/// identical VMs. Unloaded round trip is about 50 ms and unloaded service
/// 0.5 ms (100 MI at 200,000 MIPS).
pub fn default_paper_config() -> SimulationConfig {
    const R: usize = 6;
    let delay_ms = (0..R)
        .map(|i| {
            (0..R)
                .map(|j| {
                    if i == j {
                        DEFAULT_INTRA_REGION_DELAY_MS
                    } else {
                        DEFAULT_INTER_REGION_DELAY_MS
                    }
                })
                .collect()
        })
        .collect();
    let user_bases = (0..R)
        .map(|r| UserBase {
            id: format!("UB{}", r + 1),
            region: r,
            users_peak: 1000,
            users_offpeak: 100,
            peak_hours: default_peak_hours(),
            requests_per_user_per_hour: default_requests_per_user_per_hour(),
            request_size: default_request_size(),
            request_length: default_request_length(),
        })
        .collect();
    let data_centers = (0..R)
        .map(|r| DataCenter {
            id: format!("DC{}", r + 1),
            region: r,
            vms: (0..DEFAULT_VMS_PER_DC)
                .map(|id| VmSpec {
                    id,
                    mips: DEFAULT_VM_MIPS,
                    memory: default_vm_memory(),
                    bandwidth: default_vm_bandwidth(),
                    loss_rate: 0.0,
                    downtime_min: 0.0,
                })
                .collect(),
        })
        .collect();
    SimulationConfig {
        regions: R,
        user_bases,
        data_centers,
        latency: LatencyMatrix {
            jitter_ms: DEFAULT_JITTER_MS,
            delay_ms,
        },
        policy: PolicyKind::RoundRobin,
        scheduling_mode: SchedulingMode::TimeSharedPreemptive,
        throttle_threshold: default_threshold(),
        duration_hours: default_duration(),
        seed: 0,
        availability: AvailabilityConfig::default(),
    }
}

/// Parameters of a one-hour traffic spike added on top of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spike {
    pub region: usize,
    pub hour: u32,
    pub users: u64,
    /// MI per request.
    pub request_length: u64,
}

/// Spike used by the policy comparison: 300 requests/s of 10 ms work
/// (3 erlangs) landing on the five VMs of region 0 during hour 12. Peak
/// concurrency at that data center reaches several times its five
/// threshold-1 slots while the fleet as a whole stays stable.
pub const DEFAULT_SPIKE: Spike = Spike {
    region: 0,
    hour: 12,
    users: 90_000,
    request_length: 2_000,
};

/// `cfg` plus an extra user base that is active only during `spike.hour`.
pub fn with_spike(cfg: &SimulationConfig, spike: Spike) -> SimulationConfig {
    let mut out = cfg.clone();
    out.user_bases.push(UserBase {
        id: format!("SPIKE{}", spike.region + 1),
        region: spike.region,
        users_peak: spike.users,
        users_offpeak: 0,
        peak_hours: HourRange {
            start: spike.hour,
            end: spike.hour + 1,
        },
        requests_per_user_per_hour: default_requests_per_user_per_hour(),
        request_size: default_request_size(),
        request_length: spike.request_length,
    });
    out
}

/// Default scenario with [`DEFAULT_SPIKE`].
pub fn overload_hour_config() -> SimulationConfig {
    with_spike(&default_paper_config(), DEFAULT_SPIKE)
}

// ---- file schema ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    #[serde(default)]
    policy: PolicyKind,
    #[serde(default)]
    scheduling_mode: SchedulingMode,
    #[serde(default = "default_threshold")]
    throttle_threshold: u32,
    #[serde(default = "default_duration")]
    duration_hours: u32,
    #[serde(default)]
    seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            policy: PolicyKind::default(),
            scheduling_mode: SchedulingMode::default(),
            throttle_threshold: default_threshold(),
            duration_hours: default_duration(),
            seed: 0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    regions: usize,
    #[serde(default)]
    jitter_ms: f64,
    delay_ms: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    simulation: SimulationSection,
    #[serde(default)]
    availability: AvailabilityConfig,
    network: NetworkSection,
    #[serde(default, rename = "user_base")]
    user_bases: Vec<UserBase>,
    #[serde(rename = "data_center")]
    data_centers: Vec<DataCenter>,
}

impl From<ConfigFile> for SimulationConfig {
    fn from(f: ConfigFile) -> Self {
        SimulationConfig {
            regions: f.network.regions,
            user_bases: f.user_bases,
            data_centers: f.data_centers,
            latency: LatencyMatrix {
                jitter_ms: f.network.jitter_ms,
                delay_ms: f.network.delay_ms,
            },
            policy: f.simulation.policy,
            scheduling_mode: f.simulation.scheduling_mode,
            throttle_threshold: f.simulation.throttle_threshold,
            duration_hours: f.simulation.duration_hours,
            seed: f.simulation.seed,
            availability: f.availability,
        }
    }
}

impl From<&SimulationConfig> for ConfigFile {
    fn from(c: &SimulationConfig) -> Self {
        ConfigFile {
            simulation: SimulationSection {
                policy: c.policy,
                scheduling_mode: c.scheduling_mode,
                throttle_threshold: c.throttle_threshold,
                duration_hours: c.duration_hours,
                seed: c.seed,
            },
            availability: c.availability.clone(),
            network: NetworkSection {
                regions: c.regions,
                jitter_ms: c.latency.jitter_ms,
                delay_ms: c.latency.delay_ms.clone(),
            },
            user_bases: c.user_bases.clone(),
            data_centers: c.data_centers.clone(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn schema_field(message: &str) -> Option<String> {
    let start = message.find('`')?;
    let rest = &message[start + 1..];
    let end = rest.find('`')?;
    Some(rest[..end].to_string())
}

/// Parses a scenario document, applies defaults and validates it.
pub fn parse_config(text: &str) -> Result<SimulationConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let file = ConfigFile::deserialize(table).map_err(|e| ConfigError::Schema {
        field: schema_field(e.message()),
        message: e.message().to_string(),
    })?;
    let cfg = SimulationConfig::from(file);
    let violations = validate_config(&cfg);
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SimulationConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Renders `cfg` in the scenario file format. Output is stable for equal input.
pub fn serialize_config(cfg: &SimulationConfig) -> String {
    toml::to_string(&ConfigFile::from(cfg)).expect("config is always representable as TOML")
}

/// Checks every structural rule; an empty list means the scenario can run.
pub fn validate_config(cfg: &SimulationConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |entity: String, rule: &str| {
        out.push(Violation {
            entity,
            rule: rule.to_string(),
        })
    };

    if cfg.regions == 0 {
        bad("network".into(), "at least one region is required");
    }
    if cfg.duration_hours == 0 {
        bad("simulation".into(), "duration_hours must be > 0");
    }
    if cfg.throttle_threshold == 0 {
        bad("simulation".into(), "throttle_threshold must be >= 1");
    }
    if i64::try_from(cfg.seed).is_err() {
        bad("simulation".into(), "seed must be <= 9223372036854775807");
    }

    let lat = &cfg.latency;
    if !(lat.jitter_ms.is_finite() && lat.jitter_ms >= 0.0) {
        bad("network".into(), "jitter_ms must be finite and >= 0");
    }
    let square =
        lat.delay_ms.len() == cfg.regions && lat.delay_ms.iter().all(|row| row.len() == cfg.regions);
    if !square {
        bad(
            "network".into(),
            "delay_ms must be a regions x regions matrix",
        );
    } else {
        for i in 0..cfg.regions {
            for j in 0..cfg.regions {
                let d = lat.delay_ms[i][j];
                if !(d.is_finite() && d >= 0.0) {
                    bad(
                        format!("network.delay_ms[{i}][{j}]"),
                        "delay must be finite and >= 0",
                    );
                } else if j > i && d != lat.delay_ms[j][i] {
                    bad(
                        format!("network.delay_ms[{i}][{j}]"),
                        "delay matrix must be symmetric",
                    );
                }
            }
        }
    }

    let mut seen = HashSet::new();
    for ub in &cfg.user_bases {
        let name = format!("user_base {}", ub.id);
        if !seen.insert(ub.id.as_str()) {
            bad(name.clone(), "duplicate user base id");
        }
        if ub.region >= cfg.regions {
            bad(name.clone(), "region does not exist");
        }
        if ub.users_peak < ub.users_offpeak {
            bad(name.clone(), "users_peak must be >= users_offpeak");
        }
        if !(ub.requests_per_user_per_hour.is_finite() && ub.requests_per_user_per_hour >= 0.0) {
            bad(name.clone(), "requests_per_user_per_hour must be finite and >= 0");
        }
        if ub.request_length == 0 {
            bad(name.clone(), "request_length must be > 0");
        }
        if ub.peak_hours.start > ub.peak_hours.end || ub.peak_hours.end > 24 {
            bad(name, "peak_hours must satisfy start <= end <= 24");
        }
    }

    if cfg.data_centers.is_empty() {
        bad("data_center".into(), "at least one data center is required");
    }
    let mut seen = HashSet::new();
    for dc in &cfg.data_centers {
        let name = format!("data_center {}", dc.id);
        if !seen.insert(dc.id.as_str()) {
            bad(name.clone(), "duplicate data center id");
        }
        if dc.region >= cfg.regions {
            bad(name.clone(), "region does not exist");
        }
        if dc.vms.is_empty() {
            bad(name.clone(), "at least one VM is required");
        }
        for (pos, vm) in dc.vms.iter().enumerate() {
            let vm_name = format!("{name} vm {}", vm.id);
            if vm.id != pos {
                bad(vm_name.clone(), "VM ids must be dense and in order");
            }
            if vm.mips == 0 {
                bad(vm_name.clone(), "mips must be > 0");
            }
            if !(vm.loss_rate.is_finite() && vm.loss_rate >= 0.0) {
                bad(vm_name.clone(), "loss_rate must be finite and >= 0");
            }
            if !(vm.downtime_min.is_finite() && vm.downtime_min >= 0.0) {
                bad(vm_name, "downtime_min must be finite and >= 0");
            }
        }
    }

    let av = &cfg.availability;
    if !(0.0..=1.0).contains(&av.threshold) {
        bad("availability".into(), "threshold must be within [0, 1]");
    }
    if !(av.measurement_period_min.is_finite() && av.measurement_period_min > 0.0) {
        bad("availability".into(), "measurement_period_min must be > 0");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[network]
regions = 1
delay_ms = [[10.0]]

[[user_base]]
id = "UB1"
region = 0
users_peak = 10

[[data_center]]
id = "DC1"
region = 0

[[data_center.vm]]
id = 0
mips = 1000
"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.policy, PolicyKind::RoundRobin);
        assert_eq!(cfg.scheduling_mode, SchedulingMode::TimeSharedPreemptive);
        assert_eq!(cfg.throttle_threshold, 1);
        assert_eq!(cfg.duration_hours, 24);
        assert_eq!(cfg.user_bases[0].peak_hours, HourRange { start: 3, end: 9 });
        assert_eq!(cfg.user_bases[0].request_length, 100);
        assert_eq!(cfg.latency.jitter_ms, 0.0);
        assert!(!cfg.availability.enabled);
        assert!(validate_config(&cfg).is_empty());
    }

    #[test]
    fn duplicate_dc_id_is_named() {
        let doc = format!(
            "{MINIMAL}\n[[data_center]]\nid = \"DC1\"\nregion = 0\n\n[[data_center.vm]]\nid = 0\nmips = 5\n"
        );
        let err = parse_config(&doc).unwrap_err();
        match &err {
            ConfigError::Invalid(v) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].entity.contains("DC1"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("DC1"));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_config("[network]\nregions = = 3\n").unwrap_err();
        match err {
            ConfigError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_required_field_is_named() {
        let doc = MINIMAL.replace("mips = 1000", "");
        match parse_config(&doc).unwrap_err() {
            ConfigError::Schema { field, .. } => assert_eq!(field.as_deref(), Some("mips")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let doc = MINIMAL.replace("regions = 1", "regions = 1\nbogus = 3");
        assert!(matches!(
            parse_config(&doc).unwrap_err(),
            ConfigError::Schema { .. }
        ));
    }

    #[test]
    fn default_config_validates() {
        assert!(validate_config(&default_paper_config()).is_empty());
    }

    #[test]
    fn default_config_names() {
        let cfg = default_paper_config();
        let ubs: Vec<_> = cfg.user_bases.iter().map(|u| u.id.as_str()).collect();
        let dcs: Vec<_> = cfg.data_centers.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ubs, ["UB1", "UB2", "UB3", "UB4", "UB5", "UB6"]);
        assert_eq!(dcs, ["DC1", "DC2", "DC3", "DC4", "DC5", "DC6"]);
        assert_eq!(default_paper_config(), cfg);
    }

    #[test]
    fn zero_mips_is_one_violation() {
        let mut cfg = default_paper_config();
        cfg.data_centers[2].vms[4].mips = 0;
        let v = validate_config(&cfg);
        assert_eq!(v.len(), 1);
        assert!(v[0].entity.contains("DC3") && v[0].entity.contains("vm 4"));
    }

    #[test]
    fn dangling_region_references() {
        let mut cfg = default_paper_config();
        cfg.user_bases[0].region = 7;
        assert_eq!(validate_config(&cfg).len(), 1);

        let mut cfg = default_paper_config();
        cfg.data_centers[5].region = 6;
        assert_eq!(validate_config(&cfg).len(), 1);

        // every region index past the end dangles; every one inside does not
        for r in 0..10 {
            let mut cfg = default_paper_config();
            cfg.user_bases[3].region = r;
            assert_eq!(validate_config(&cfg).is_empty(), r < 6, "region {r}");
        }
    }

    #[test]
    fn asymmetric_latency_rejected() {
        let mut cfg = default_paper_config();
        cfg.latency.delay_ms[0][1] = 80.0;
        assert_eq!(validate_config(&cfg).len(), 1);
    }

    #[test]
    fn other_scalar_rules() {
        let mut cfg = default_paper_config();
        cfg.duration_hours = 0;
        cfg.throttle_threshold = 0;
        cfg.user_bases[1].users_offpeak = 5000;
        cfg.user_bases[2].request_length = 0;
        cfg.data_centers[0].vms.clear();
        assert_eq!(validate_config(&cfg).len(), 5);
    }

    #[test]
    fn default_round_trips_through_text() {
        let cfg = default_paper_config();
        let text = serialize_config(&cfg);
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }
}
