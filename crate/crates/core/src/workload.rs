//! Reproducible random jobset generation and the jobset file format.
//!
//! A jobset is the arrival trace for one episode: jobs with arrival time,
//! duration, and a per-resource demand vector. Generation follows the usual
//! synthetic cluster workload: Bernoulli arrivals over a fixed window, a
//! short/long duration mix, and one uniformly chosen dominant resource per
//! job whose demand is drawn from a higher range than the others.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::rngstream::{self, StreamKind};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("jobset parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("jobset io error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Parameters controlling random jobset generation.
///
/// Demand ranges are fractions of machine capacity; generated demands are
/// rounded up to whole resource units and clamped to capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadParams {
    /// Probability that a new job arrives at each timestep of the window.
    pub arrival_rate: f64,
    /// Probability that an arriving job is short.
    pub short_fraction: f64,
    /// Inclusive duration range for short jobs, in timesteps.
    pub short_duration_range: (u32, u32),
    /// Inclusive duration range for long jobs, in timesteps.
    pub long_duration_range: (u32, u32),
    /// Demand range for the dominant resource, as a fraction of capacity.
    pub dominant_demand_range: (f64, f64),
    /// Demand range for every other resource, as a fraction of capacity.
    pub other_demand_range: (f64, f64),
    /// Number of resource types per machine.
    pub num_resources: usize,
    /// Machine capacity in units, one entry per resource.
    pub capacity: Vec<u32>,
    /// Timesteps during which jobs may arrive (arrivals at t in [0, window)).
    pub episode_arrival_window: u32,
    /// Master seed; generation is a pure function of the full parameter set.
    pub seed: u64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            arrival_rate: 0.7,
            short_fraction: 0.8,
            short_duration_range: (1, 3),
            long_duration_range: (10, 15),
            dominant_demand_range: (0.25, 0.5),
            other_demand_range: (0.05, 0.1),
            num_resources: 2,
            capacity: vec![10, 10],
            episode_arrival_window: 50,
            seed: 0,
        }
    }
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |field: &'static str, reason: String| Err(WorkloadError::InvalidParam { field, reason });
        if !(0.0..=1.0).contains(&self.arrival_rate) {
            return bad("arrival_rate", format!("{} not in [0,1]", self.arrival_rate));
        }
        if !(0.0..=1.0).contains(&self.short_fraction) {
            return bad("short_fraction", format!("{} not in [0,1]", self.short_fraction));
        }
        for (field, range) in [
            ("short_duration_range", self.short_duration_range),
            ("long_duration_range", self.long_duration_range),
        ] {
            if range.0 < 1 || range.1 < range.0 {
                return bad(field, format!("{:?} must satisfy 1 <= min <= max", range));
            }
        }
        for (field, range) in [
            ("dominant_demand_range", self.dominant_demand_range),
            ("other_demand_range", self.other_demand_range),
        ] {
            if !(range.0 > 0.0 && range.1 >= range.0) {
                return bad(field, format!("{:?} must satisfy 0 < min <= max", range));
            }
        }
        if self.dominant_demand_range.1 > 1.0 {
            return bad(
                "dominant_demand_range",
                format!("max {} exceeds full capacity 1.0", self.dominant_demand_range.1),
            );
        }
        if self.other_demand_range.1 > 1.0 {
            return bad(
                "other_demand_range",
                format!("max {} exceeds full capacity 1.0", self.other_demand_range.1),
            );
        }
        if self.num_resources == 0 {
            return bad("num_resources", "must be >= 1".into());
        }
        if self.capacity.len() != self.num_resources {
            return bad(
                "capacity",
                format!("{} entries for {} resources", self.capacity.len(), self.num_resources),
            );
        }
        if self.capacity.iter().any(|&c| c == 0) {
            return bad("capacity", "every capacity must be >= 1 unit".into());
        }
        Ok(())
    }

    /// Largest duration this parameter set can generate.
    pub fn max_duration(&self) -> u32 {
        self.short_duration_range.1.max(self.long_duration_range.1)
    }
}

/// One job request: a fixed demand vector held for a fixed number of timesteps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub id: u32,
    pub arrival_time: u32,
    /// Ideal service duration in timesteps (>= 1).
    pub duration: u32,
    /// Demand in resource units, one entry per resource.
    pub demand: Vec<u32>,
    /// Timestep service begins, once placed on a machine.
    pub schedule_time: Option<u32>,
    pub assigned_machine: Option<usize>,
    /// Timestep service completes; `finish - schedule == duration`.
    pub finish_time: Option<u32>,
}

impl Job {
    pub fn new(id: u32, arrival_time: u32, duration: u32, demand: Vec<u32>) -> Self {
        Job {
            id,
            arrival_time,
            duration,
            demand,
            schedule_time: None,
            assigned_machine: None,
            finish_time: None,
        }
    }
}

/// Jobs ordered by arrival time plus the parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSet {
    pub jobs: Vec<Job>,
    pub params: WorkloadParams,
}

impl JobSet {
    pub fn num_resources(&self) -> usize {
        self.params.num_resources
    }

    pub fn capacity(&self) -> &[u32] {
        &self.params.capacity
    }
}

impl fmt::Display for JobSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "jobset of {} jobs over {} resources", self.jobs.len(), self.num_resources())
    }
}

/// Generate a jobset. Pure in `params` (the seed included): equal params give
/// byte-identical jobsets.
pub fn generate_jobset(params: &WorkloadParams) -> Result<JobSet, WorkloadError> {
    params.validate()?;
    let mut rng = rngstream::derive(params.seed, StreamKind::TrainJobset, 0, 0, 0);
    let jobs = generate_jobs(params, &mut rng);
    Ok(JobSet { jobs, params: params.clone() })
}

/// Variant used by the harness to derive many jobsets from one master seed.
/// `kind`/`index` select the stream; `params.seed` is ignored in favor of
/// `master_seed` so training and evaluation sets stay disjoint by stream.
pub fn generate_jobset_stream(
    params: &WorkloadParams,
    master_seed: u64,
    kind: StreamKind,
    index: u64,
) -> Result<JobSet, WorkloadError> {
    params.validate()?;
    let mut rng = rngstream::derive(master_seed, kind, index, 0, 0);
    let jobs = generate_jobs(params, &mut rng);
    let mut params = params.clone();
    params.seed = master_seed;
    Ok(JobSet { jobs, params })
}

fn generate_jobs(params: &WorkloadParams, rng: &mut impl Rng) -> Vec<Job> {
    let mut jobs = Vec::new();
    for t in 0..params.episode_arrival_window {
        if rng.gen::<f64>() >= params.arrival_rate {
            continue;
        }
        let short = rng.gen::<f64>() < params.short_fraction;
        let (lo, hi) = if short { params.short_duration_range } else { params.long_duration_range };
        let duration = rng.gen_range(lo..=hi);
        let dominant = rng.gen_range(0..params.num_resources);
        let mut demand = Vec::with_capacity(params.num_resources);
        for r in 0..params.num_resources {
            let (lo, hi) = if r == dominant {
                params.dominant_demand_range
            } else {
                params.other_demand_range
            };
            let frac = rng.gen_range(lo..=hi);
            let units = (frac * f64::from(params.capacity[r])).ceil() as u32;
            demand.push(units.clamp(1, params.capacity[r]));
        }
        jobs.push(Job::new(jobs.len() as u32, t, duration, demand));
    }
    jobs
}

/// Write a jobset in the line-oriented text format:
/// header `jobset v1 d=<d> cap=<c1,...,cd>`, then one `id arrival duration d1 .. dd`
/// line per job, space-separated decimal integers.
pub fn save_jobset(jobset: &JobSet, path: &Path) -> Result<(), WorkloadError> {
    let io_err = |source| WorkloadError::Io { path: path.display().to_string(), source };
    let mut out = String::new();
    let caps: Vec<String> = jobset.capacity().iter().map(|c| c.to_string()).collect();
    out.push_str(&format!("jobset v1 d={} cap={}\n", jobset.num_resources(), caps.join(",")));
    for job in &jobset.jobs {
        out.push_str(&format!("{} {} {}", job.id, job.arrival_time, job.duration));
        for d in &job.demand {
            out.push_str(&format!(" {}", d));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(out.as_bytes()).map_err(io_err)
}

/// Read a jobset written by [`save_jobset`]. The header only carries the
/// resource count and capacities, so the returned params are defaults with
/// those two fields restored; jobs round-trip exactly.
pub fn load_jobset(path: &Path) -> Result<JobSet, WorkloadError> {
    let text = fs::read_to_string(path)
        .map_err(|source| WorkloadError::Io { path: path.display().to_string(), source })?;
    parse_jobset(&text)
}

pub fn parse_jobset(text: &str) -> Result<JobSet, WorkloadError> {
    let parse_err =
        |line: usize, reason: String| WorkloadError::Parse { line, reason };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("jobset") || fields.next() != Some("v1") {
        return Err(parse_err(1, format!("expected `jobset v1 ...` header, got `{header}`")));
    }
    let d_field = fields.next().ok_or_else(|| parse_err(1, "missing d= field".into()))?;
    let d: usize = d_field
        .strip_prefix("d=")
        .ok_or_else(|| parse_err(1, format!("expected d=<count>, got `{d_field}`")))?
        .parse()
        .map_err(|e| parse_err(1, format!("bad resource count: {e}")))?;
    let cap_field = fields.next().ok_or_else(|| parse_err(1, "missing cap= field".into()))?;
    let capacity: Vec<u32> = cap_field
        .strip_prefix("cap=")
        .ok_or_else(|| parse_err(1, format!("expected cap=<c1,...>, got `{cap_field}`")))?
        .split(',')
        .map(|c| c.parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|e| parse_err(1, format!("bad capacity list: {e}")))?;
    if capacity.len() != d {
        return Err(parse_err(1, format!("{} capacities for d={}", capacity.len(), d)));
    }
    if let Some(extra) = fields.next() {
        return Err(parse_err(1, format!("unexpected header field `{extra}`")));
    }

    let mut jobs = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<u32> = line
            .split_whitespace()
            .map(|tok| tok.parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(lineno, format!("bad integer: {e}")))?;
        if nums.len() != 3 + d {
            return Err(parse_err(
                lineno,
                format!("expected {} fields (id arrival duration + {} demands), got {}", 3 + d, d, nums.len()),
            ));
        }
        if nums[2] == 0 {
            return Err(parse_err(lineno, "duration must be >= 1".into()));
        }
        for (r, &units) in nums[3..].iter().enumerate() {
            if units == 0 || units > capacity[r] {
                return Err(parse_err(
                    lineno,
                    format!("demand {} for resource {} outside [1, {}]", units, r, capacity[r]),
                ));
            }
        }
        jobs.push(Job::new(nums[0], nums[1], nums[2], nums[3..].to_vec()));
    }
    if jobs.windows(2).any(|w| w[0].arrival_time > w[1].arrival_time) {
        return Err(parse_err(1, "arrival times must be nondecreasing".into()));
    }
    let params = WorkloadParams {
        num_resources: d,
        capacity,
        ..WorkloadParams::default()
    };
    Ok(JobSet { jobs, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream;
    use rand::Rng;

    fn params_with(seed: u64) -> WorkloadParams {
        WorkloadParams { seed, ..WorkloadParams::default() }
    }

    #[test]
    fn zero_window_gives_empty_jobset() {
        let params = WorkloadParams { episode_arrival_window: 0, ..params_with(3) };
        let js = generate_jobset(&params).unwrap();
        assert!(js.jobs.is_empty());
    }

    #[test]
    fn same_seed_same_jobset() {
        let a = generate_jobset(&params_with(42)).unwrap();
        let b = generate_jobset(&params_with(42)).unwrap();
        assert_eq!(a, b);
        let c = generate_jobset(&params_with(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn short_fraction_matches_bernoulli_oracle() {
        // Generate ~10k jobs and compare the observed short fraction against an
        // independent Bernoulli sampler run at the same rate.
        let params = WorkloadParams {
            episode_arrival_window: 10_000,
            arrival_rate: 1.0,
            ..params_with(7)
        };
        let js = generate_jobset(&params).unwrap();
        assert_eq!(js.jobs.len(), 10_000);
        let (lo, hi) = params.short_duration_range;
        let short = js.jobs.iter().filter(|j| (lo..=hi).contains(&j.duration)).count();
        let observed = short as f64 / js.jobs.len() as f64;
        assert!((observed - 0.8).abs() <= 0.02, "observed short fraction {observed}");

        let mut oracle_rng = rngstream::derive(99, crate::rngstream::StreamKind::EvalJobset, 0, 0, 0);
        let oracle_hits = (0..10_000).filter(|_| oracle_rng.gen::<f64>() < 0.8).count();
        let oracle = oracle_hits as f64 / 10_000.0;
        assert!((oracle - 0.8).abs() <= 0.02, "oracle frequency {oracle}");
    }

    #[test]
    fn durations_and_demands_in_bounds() {
        let params = params_with(11);
        let js = generate_jobset(&params).unwrap();
        assert!(!js.jobs.is_empty());
        for job in &js.jobs {
            let short = (params.short_duration_range.0..=params.short_duration_range.1)
                .contains(&job.duration);
            let long = (params.long_duration_range.0..=params.long_duration_range.1)
                .contains(&job.duration);
            assert!(short || long, "duration {} outside both ranges", job.duration);
            assert_eq!(job.demand.len(), params.num_resources);
            for (r, &d) in job.demand.iter().enumerate() {
                assert!(d >= 1 && d <= params.capacity[r]);
            }
        }
    }

    #[test]
    fn arrivals_nondecreasing_ids_unique() {
        let js = generate_jobset(&params_with(5)).unwrap();
        for w in js.jobs.windows(2) {
            assert!(w[0].arrival_time <= w[1].arrival_time);
            assert_ne!(w[0].id, w[1].id);
        }
    }

    #[test]
    fn invalid_params_name_the_field() {
        let params = WorkloadParams { arrival_rate: 1.5, ..params_with(0) };
        let err = generate_jobset(&params).unwrap_err();
        assert!(err.to_string().contains("arrival_rate"), "{err}");

        let params = WorkloadParams { dominant_demand_range: (0.5, 1.2), ..params_with(0) };
        let err = generate_jobset(&params).unwrap_err();
        assert!(err.to_string().contains("dominant_demand_range"), "{err}");

        let params = WorkloadParams { capacity: vec![10], ..params_with(0) };
        let err = generate_jobset(&params).unwrap_err();
        assert!(err.to_string().contains("capacity"), "{err}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jobs.txt");
        let js = generate_jobset(&params_with(21)).unwrap();
        save_jobset(&js, &path).unwrap();
        let back = load_jobset(&path).unwrap();
        assert_eq!(js.jobs, back.jobs);
        assert_eq!(js.params.num_resources, back.params.num_resources);
        assert_eq!(js.params.capacity, back.params.capacity);
    }

    #[test]
    fn missing_header_is_parse_error() {
        let err = parse_jobset("").unwrap_err();
        assert!(matches!(err, WorkloadError::Parse { line: 1, .. }), "{err}");
        let err = parse_jobset("0 0 3 2 1\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn hand_written_two_job_file() {
        let text = "jobset v1 d=2 cap=10,10\n0 0 3 2 1\n1 4 12 5 1\n";
        let js = parse_jobset(text).unwrap();
        assert_eq!(js.jobs.len(), 2);
        assert_eq!(js.jobs[0], Job::new(0, 0, 3, vec![2, 1]));
        assert_eq!(js.jobs[1], Job::new(1, 4, 12, vec![5, 1]));
        assert_eq!(js.capacity(), &[10, 10]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = parse_jobset("jobset v1 d=2 cap=10,10\n0 0 3 2\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Parse { line: 2, .. }), "{err}");
        let err = parse_jobset("jobset v1 d=2 cap=10,10\n0 0 3 2 1\n1 1 x 1 1\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Parse { line: 3, .. }), "{err}");
        let err = parse_jobset("jobset v1 d=2 cap=10,10\n0 0 3 11 1\n").unwrap_err();
        assert!(matches!(err, WorkloadError::Parse { line: 2, .. }), "{err}");
    }

    proptest::proptest! {
        #[test]
        fn round_trip_identity(seed in 0u64..1000, rate in 0.0f64..=1.0, window in 0u32..80) {
            let params = WorkloadParams {
                seed,
                arrival_rate: rate,
                episode_arrival_window: window,
                ..WorkloadParams::default()
            };
            let js = generate_jobset(&params).unwrap();
            let text = {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("js.txt");
                save_jobset(&js, &path).unwrap();
                std::fs::read_to_string(&path).unwrap()
            };
            let back = parse_jobset(&text).unwrap();
            proptest::prop_assert_eq!(&js.jobs, &back.jobs);
            proptest::prop_assert_eq!(js.capacity(), back.capacity());
        }
    }
}
