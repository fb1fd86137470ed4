//! Synthetic tensors and the producer/consumer timing harness.
//!
//! [`run_bench`] publishes a tensor, spawns a consumer process that attaches
//! and runs CP-ALS over the shared partitions, then runs the same
//! decomposition in-process over the same partitions for comparison.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::consumer::ConsumerSession;
use crate::coo::{CooTensor, TnsError};
use crate::cp::{cp_als, CpOptions, Matrix};
use crate::partition::PartitionPlan;
use crate::producer::publish;
use crate::session::SessionError;

pub const CSV_HEADER: &str =
    "tensor,P,repeat,setup_s,attach_s,compute_handoff_s,compute_inprocess_s,padding_ratio";

/// How long either side waits for the other before giving up.
pub const HANDOFF_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Tns(#[from] TnsError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("could not launch consumer {exe}: {source}")]
    Launch { exe: PathBuf, source: io::Error },
    #[error("consumer failed: {0}")]
    Consumer(String),
    #[error("bad configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Samples a tensor from a random rank-`rank` model.
///
/// Factors are uniform on [0, 1). `⌈density · ∏dims⌉` distinct coordinates
/// are drawn uniformly and stored in row-major order; each value is the
/// model entry plus `noise · N(0, 1)`.
pub fn gen_synthetic(dims: &[usize], rank: usize, density: f64, noise: f64, seed: u64) -> CooTensor {
    let mut rng = StdRng::seed_from_u64(seed);
    let factors: Vec<Matrix> = dims
        .iter()
        .map(|&n| Matrix::from_row_major(n, rank, (0..n * rank).map(|_| rng.gen()).collect()))
        .collect();
    let total: usize = dims.iter().product();
    let nnz = ((density.clamp(0.0, 1.0) * total as f64).ceil() as usize).min(total);
    let mut linear = rand::seq::index::sample(&mut rng, total, nnz).into_vec();
    linear.sort_unstable();

    let d = dims.len();
    let mut coords = vec![0u64; nnz * d];
    let mut values = Vec::with_capacity(nnz);
    for (e, mut flat) in linear.into_iter().enumerate() {
        let c = &mut coords[e * d..(e + 1) * d];
        for m in (0..d).rev() {
            c[m] = (flat % dims[m]) as u64;
            flat /= dims[m];
        }
        let mut v = 0.0;
        for r in 0..rank {
            v += factors
                .iter()
                .zip(c.iter())
                .map(|(f, &i)| f[(i as usize, r)])
                .product::<f64>();
        }
        if noise != 0.0 {
            v += noise * rng.sample::<f64, _>(StandardNormal);
        }
        values.push(v);
    }
    CooTensor::new(dims.to_vec(), coords, values).expect("generated coordinates are in bounds")
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorSource {
    Synthetic {
        dims: Vec<usize>,
        rank: usize,
        density: f64,
        noise: f64,
    },
    File(PathBuf),
}

impl TensorSource {
    pub fn label(&self) -> String {
        match self {
            TensorSource::Synthetic { dims, .. } => {
                let shape: Vec<String> = dims.iter().map(usize::to_string).collect();
                format!("synth-{}", shape.join("x"))
            }
            TensorSource::File(p) => p
                .file_stem()
                .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()),
        }
    }

    pub fn load(&self, seed: u64) -> Result<CooTensor> {
        match self {
            TensorSource::Synthetic {
                dims,
                rank,
                density,
                noise,
            } => Ok(gen_synthetic(dims, *rank, *density, *noise, seed)),
            TensorSource::File(p) => Ok(CooTensor::parse_tns(BufReader::new(fs::File::open(p)?), None)?),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub source: TensorSource,
    pub parts: Vec<usize>,
    pub cp: CpOptions,
    pub repeats: usize,
    /// Executable that understands the `consume` subcommand.
    pub consumer_exe: PathBuf,
    /// Leave regions and metadata in place when a run fails.
    pub keep: bool,
    pub file_baseline: bool,
    /// Directory for metadata files.
    pub workdir: PathBuf,
}

impl BenchConfig {
    pub fn new(source: TensorSource, consumer_exe: PathBuf) -> Self {
        Self {
            source,
            parts: vec![4],
            cp: CpOptions::default(),
            repeats: 5,
            consumer_exe,
            keep: false,
            file_baseline: false,
            workdir: std::env::temp_dir(),
        }
    }
}

/// One full session.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub tensor: String,
    pub parts: usize,
    pub repeat: usize,
    pub setup_s: f64,
    pub attach_s: f64,
    pub compute_handoff_s: f64,
    pub compute_inprocess_s: f64,
    pub padding_ratio: f64,
    pub fit: f64,
    pub models_identical: bool,
    /// Writing and re-reading the tensor as `.tns` text, when requested.
    pub file_baseline_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub stdev: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        assert!(!xs.is_empty(), "summary of no values");
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stdev = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Self { mean, stdev, median }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
}

impl BenchReport {
    fn runs_for(&self, parts: usize) -> impl Iterator<Item = &BenchRun> {
        self.runs.iter().filter(move |r| r.parts == parts)
    }

    pub fn part_counts(&self) -> Vec<usize> {
        let mut ps: Vec<usize> = self.runs.iter().map(|r| r.parts).collect();
        ps.dedup();
        ps
    }

    /// Summary of one column over the runs with `parts` partitions.
    pub fn summary(&self, parts: usize, column: impl Fn(&BenchRun) -> f64) -> Summary {
        Summary::of(&self.runs_for(parts).map(column).collect::<Vec<_>>())
    }

    pub fn all_models_identical(&self) -> bool {
        self.runs.iter().all(|r| r.models_identical)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{:.9},{:.9},{:.9},{:.9},{}",
                r.tensor,
                r.parts,
                r.repeat,
                r.setup_s,
                r.attach_s,
                r.compute_handoff_s,
                r.compute_inprocess_s,
                r.padding_ratio
            );
        }
        out
    }
}

impl fmt::Display for BenchReport {
    /// Mean (stdev) per partition count.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |s: Summary| format!("{:.3e} ({:.1e})", s.mean, s.stdev);
        writeln!(
            f,
            "{:<16} {:>4} {:>20} {:>20} {:>20} {:>20} {:>8} {:>9}",
            "tensor", "P", "setup_s", "attach_s", "compute_handoff_s", "compute_inproc_s", "padding", "identical"
        )?;
        for p in self.part_counts() {
            let first = self.runs_for(p).next().expect("part count from runs");
            writeln!(
                f,
                "{:<16} {:>4} {:>20} {:>20} {:>20} {:>20} {:>8.3} {:>9}",
                first.tensor,
                p,
                cell(self.summary(p, |r| r.setup_s)),
                cell(self.summary(p, |r| r.attach_s)),
                cell(self.summary(p, |r| r.compute_handoff_s)),
                cell(self.summary(p, |r| r.compute_inprocess_s)),
                first.padding_ratio,
                self.runs_for(p).all(|r| r.models_identical)
            )?;
            if self.runs_for(p).any(|r| r.file_baseline_s.is_some()) {
                let s = self.summary(p, |r| r.file_baseline_s.unwrap_or(0.0));
                writeln!(f, "{:<16} {:>4} file round trip {}", "", p, cell(s))?;
            }
        }
        Ok(())
    }
}

/// Timings the consumer process reports on its stdout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsumeStats {
    pub attach_s: f64,
    pub compute_s: f64,
    pub fit: f64,
}

impl ConsumeStats {
    pub fn to_line(&self) -> String {
        format!("attach_s={:e} compute_s={:e} fit={:e}", self.attach_s, self.compute_s, self.fit)
    }

    pub fn parse_line(line: &str) -> Option<Self> {
        let mut attach_s = None;
        let mut compute_s = None;
        let mut fit = None;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=')?;
            let v: f64 = v.parse().ok()?;
            match k {
                "attach_s" => attach_s = Some(v),
                "compute_s" => compute_s = Some(v),
                "fit" => fit = Some(v),
                _ => {}
            }
        }
        Some(Self {
            attach_s: attach_s?,
            compute_s: compute_s?,
            fit: fit?,
        })
    }
}

/// The consumer side of one run: attach, decompose the shared partitions,
/// publish the model, raise DONE.
pub fn consume(metadata_path: &Path, opts: &CpOptions, timeout: Duration) -> Result<ConsumeStats> {
    let start = Instant::now();
    let mut session = ConsumerSession::attach(metadata_path, timeout)?;
    let attach_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let result = session.decompose(opts)?;
    let compute_s = start.elapsed().as_secs_f64();
    session.finish(&result.model)?;
    Ok(ConsumeStats {
        attach_s,
        compute_s,
        fit: result.fit,
    })
}

fn file_round_trip(t: &CooTensor, path: &Path) -> Result<f64> {
    let start = Instant::now();
    {
        let mut w = io::BufWriter::new(fs::File::create(path)?);
        t.emit_tns(&mut w)?;
        io::Write::flush(&mut w)?;
    }
    let back = CooTensor::parse_tns(BufReader::new(fs::File::open(path)?), Some(t.dims()))?;
    let elapsed = start.elapsed().as_secs_f64();
    fs::remove_file(path)?;
    debug_assert_eq!(back.nnz(), t.nnz());
    Ok(elapsed)
}

fn run_once(config: &BenchConfig, t: &CooTensor, label: &str, parts: usize, repeat: usize) -> Result<BenchRun> {
    let plan = PartitionPlan::build(t, parts).map_err(SessionError::from)?;
    let session = format!("bench{}_{parts}_{repeat}", std::process::id());
    let metadata_path = config.workdir.join(format!("tshm-{session}.meta"));

    let start = Instant::now();
    let mut producer = publish(t, &plan, &session, &metadata_path)?;
    let setup_s = start.elapsed().as_secs_f64();

    let outcome = (|| -> Result<(ConsumeStats, crate::cp::KruskalModel)> {
        let child = Command::new(&config.consumer_exe)
            .arg("consume")
            .arg("--metadata")
            .arg(&metadata_path)
            .arg("--cp-rank")
            .arg(config.cp.rank.to_string())
            .arg("--iters")
            .arg(config.cp.iterations.to_string())
            .arg("--seed")
            .arg(config.cp.seed.to_string())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| BenchError::Launch {
                exe: config.consumer_exe.clone(),
                source,
            })?;
        // Reap the child before touching the flag so polling does not
        // compete with the consumer for a CPU.
        let output = child.wait_with_output()?;
        let model = producer.await_done(HANDOFF_TIMEOUT);
        let stdout = String::from_utf8_lossy(&output.stdout);
        if !output.status.success() {
            return Err(BenchError::Consumer(format!(
                "{}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let model = model?;
        let stats = stdout
            .lines()
            .find_map(ConsumeStats::parse_line)
            .ok_or_else(|| BenchError::Consumer(format!("no timing line in {stdout:?}")))?;
        Ok((stats, model))
    })();

    let (stats, handoff_model) = match outcome {
        Ok(v) => v,
        Err(e) => {
            if config.keep {
                log::error!(
                    "keeping session {session}: metadata {} regions {:?}",
                    metadata_path.display(),
                    producer.region_names()
                );
            } else {
                let _ = producer.teardown();
            }
            return Err(e);
        }
    };
    producer.teardown()?;

    // Same partitions in the same order as the consumer saw them.
    let split = plan.split(t);
    let start = Instant::now();
    let inprocess = cp_als(&split.view(), &config.cp).map_err(SessionError::from)?;
    let compute_inprocess_s = start.elapsed().as_secs_f64();

    let file_baseline_s = if config.file_baseline {
        Some(file_round_trip(t, &config.workdir.join(format!("tshm-{session}.tns")))?)
    } else {
        None
    };

    Ok(BenchRun {
        tensor: label.to_string(),
        parts,
        repeat,
        setup_s,
        attach_s: stats.attach_s,
        compute_handoff_s: stats.compute_s,
        compute_inprocess_s,
        padding_ratio: plan.padding_ratio(),
        fit: stats.fit,
        models_identical: inprocess.model.bit_identical(&handoff_model),
        file_baseline_s,
    })
}

/// Runs `repeats` sessions for every partition count in the config.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.repeats == 0 {
        return Err(BenchError::Config("repeats must be at least 1".into()));
    }
    if config.parts.is_empty() {
        return Err(BenchError::Config("no partition counts given".into()));
    }
    let t = config.source.load(config.cp.seed)?;
    let label = config.source.label();
    let mut report = BenchReport::default();
    for &parts in &config.parts {
        for repeat in 0..config.repeats {
            report.runs.push(run_once(config, &t, &label, parts, repeat)?);
        }
    }
    Ok(report)
}
