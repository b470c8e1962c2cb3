//! Kernel × vector length × mode experiment matrix with oracle checking.

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Kernel;
use crate::guest::{run_oracle, ArchState, GuestError};
use crate::metrics::{DynamicCounts, MetricsError, MetricsRecord};
use crate::timing::{CycleReport, TimingConfig};
use crate::tol::{run_program, Mode, RunResult, SuperblockDump, TolConfig, TolError, TolStats};
use crate::translate::Thresholds;

#[derive(Debug, Clone)]
pub struct MatrixConfig {
    pub kernels: Vec<Kernel>,
    pub vlens: Vec<u32>,
    pub modes: Vec<Mode>,
    pub thresholds: Thresholds,
    pub timing: TimingConfig,
    pub dumps: bool,
    /// Test hook: corrupts the first record's final state before checking.
    pub inject_mismatch: bool,
}

impl MatrixConfig {
    pub fn new(kernels: Vec<Kernel>, vlens: Vec<u32>, modes: Vec<Mode>) -> Self {
        MatrixConfig {
            kernels,
            vlens,
            modes,
            thresholds: Thresholds::default(),
            timing: TimingConfig::default(),
            dumps: false,
            inject_mismatch: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("empty run matrix: at least one kernel, vector length and mode are required")]
    EmptyMatrix,
    #[error("kernel `{kernel}`: {source}")]
    Parse { kernel: String, source: GuestError },
    #[error("kernel `{kernel}` at {vlen} bits, mode {mode}: {source}")]
    Run { kernel: String, vlen: u32, mode: Mode, source: TolError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One verified cell of the matrix.
#[derive(Debug, Clone)]
pub struct Entry {
    pub record: MetricsRecord,
    pub counts: DynamicCounts,
    pub cycles: CycleReport,
    pub stats: TolStats,
    pub dumps: Vec<SuperblockDump>,
}

/// A final state differing from the interpreter's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub kernel: String,
    pub vlen: u32,
    pub mode: Mode,
    pub difference: String,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixReport {
    /// Ordered by kernel, vector length, then mode as configured.
    pub entries: Vec<Entry>,
    pub mismatches: Vec<Mismatch>,
}

impl MatrixReport {
    pub fn records(&self) -> Vec<MetricsRecord> {
        self.entries.iter().map(|e| e.record.clone()).collect()
    }
}

struct Cell {
    mode: Mode,
    run: RunResult,
}

/// Runs every cell and checks it against the interpreter. Cells run in
/// parallel; the result order does not depend on scheduling.
pub fn run_matrix(cfg: &MatrixConfig) -> Result<MatrixReport, ExperimentError> {
    if cfg.kernels.is_empty() || cfg.vlens.is_empty() || cfg.modes.is_empty() {
        return Err(ExperimentError::EmptyMatrix);
    }
    let programs = cfg
        .kernels
        .iter()
        .map(|k| {
            let p = k.program().map_err(|source| ExperimentError::Parse { kernel: k.id.clone(), source })?;
            let (oracle, _) =
                run_oracle(&p).map_err(|source| ExperimentError::Parse { kernel: k.id.clone(), source })?;
            Ok((p, oracle))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    let jobs: Vec<(usize, u32)> =
        (0..programs.len()).flat_map(|k| cfg.vlens.iter().map(move |&v| (k, v))).collect();
    let groups = jobs
        .par_iter()
        .map(|&(k, vlen)| {
            let program = &programs[k].0;
            let tol = |mode| {
                let mut t = TolConfig::new(vlen, mode);
                t.thresholds = cfg.thresholds;
                t.timing = cfg.timing.clone();
                t.dumps = cfg.dumps;
                run_program(program, &t).map_err(|source| ExperimentError::Run {
                    kernel: program.name.clone(),
                    vlen,
                    mode,
                    source,
                })
            };
            let scalar = tol(Mode::Scalar)?;
            let cells = cfg
                .modes
                .iter()
                .map(|&mode| {
                    let run = if mode == Mode::Scalar { scalar.clone() } else { tol(mode)? };
                    Ok(Cell { mode, run })
                })
                .collect::<Result<Vec<_>, ExperimentError>>()?;
            Ok((k, vlen, scalar, cells))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    let mut report = MatrixReport::default();
    for (k, vlen, scalar, cells) in groups {
        let oracle: &ArchState = &programs[k].1;
        for Cell { mode, mut run } in cells {
            if cfg.inject_mismatch && report.entries.is_empty() && report.mismatches.is_empty() {
                corrupt(&mut run.final_state);
            }
            if let Some(difference) = run.final_state.first_difference(oracle) {
                report.mismatches.push(Mismatch { kernel: cfg.kernels[k].id.clone(), vlen, mode, difference });
                continue;
            }
            let record = MetricsRecord::build(
                vlen,
                mode.name(),
                (&scalar.counts, scalar.cycles.total_cycles),
                (&run.counts, run.cycles.total_cycles),
            )?;
            report.entries.push(Entry {
                record,
                counts: run.counts,
                cycles: run.cycles,
                stats: run.stats,
                dumps: run.dumps,
            });
        }
    }
    Ok(report)
}

fn corrupt(state: &mut ArchState) {
    match state.memory.first_mut() {
        Some(b) => *b ^= 0xff,
        None => state.int_regs[0] ^= 1,
    }
}
