//! Dynamic instruction accounting and the evaluation metrics derived from it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::host::{HostProgram, InstrClass, TraceEntry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("runs belong to different kernels: `{0}` and `{1}`")]
    KernelMismatch(String, String),
}

/// Dynamic host-instruction counts of one run, by accounting class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicCounts {
    pub kernel: String,
    /// Scalar FP arithmetic, loads and stores.
    pub scalar_fp: u64,
    pub vector: u64,
    /// Enabled lanes summed over executed vector instructions.
    pub vector_lanes: u64,
    pub permutation: u64,
    pub unvectorizable: u64,
    pub other: u64,
    /// Executed vector-instruction masks, run-length encoded as
    /// `(mask, run length)`.
    pub mask_runs: Vec<(u8, u64)>,
}

impl DynamicCounts {
    pub fn new(kernel: impl Into<String>) -> Self {
        DynamicCounts { kernel: kernel.into(), ..Default::default() }
    }

    /// Adds every instruction executed in `trace`.
    pub fn record_trace(&mut self, prog: &HostProgram, trace: &[TraceEntry]) {
        for e in trace {
            let op = &prog.instrs[e.idx as usize].op;
            match op.class() {
                InstrClass::ScalarFp => self.scalar_fp += 1,
                InstrClass::Permutation => self.permutation += 1,
                InstrClass::Unvectorizable => self.unvectorizable += 1,
                InstrClass::Other => self.other += 1,
                InstrClass::Vector => {
                    let k = op.mask().expect("vector instructions carry a mask");
                    self.vector += 1;
                    self.vector_lanes += k as u64;
                    match self.mask_runs.last_mut() {
                        Some((m, n)) if *m == k => *n += 1,
                        _ => self.mask_runs.push((k, 1)),
                    }
                }
            }
        }
    }

    /// Dynamic FP work in scalar-instruction units: every vector lane, plus
    /// scalar FP and unvectorizable FP instructions.
    pub fn fp_total(&self) -> u64 {
        self.vector_lanes + self.scalar_fp + self.unvectorizable
    }

    pub fn vlr_run_avg(&self) -> Option<f64> {
        if self.mask_runs.is_empty() {
            None
        } else {
            Some(self.vector as f64 / self.mask_runs.len() as f64)
        }
    }
}

/// Fraction of the vectorized run's dynamic FP work executed in vector
/// lanes. Both runs must come from the same kernel; `None` when the kernel
/// executes no FP work in translated code.
pub fn compute_coverage(scalar: &DynamicCounts, vectorized: &DynamicCounts) -> Result<Option<f64>, MetricsError> {
    if scalar.kernel != vectorized.kernel {
        return Err(MetricsError::KernelMismatch(scalar.kernel.clone(), vectorized.kernel.clone()));
    }
    let total = vectorized.fp_total();
    Ok((total > 0).then(|| vectorized.vector_lanes as f64 / total as f64))
}

/// Mean length of maximal runs of equal consecutive masks; `None` for an
/// empty sequence.
pub fn compute_vlr_runs(masks: &[u8]) -> Option<f64> {
    if masks.is_empty() {
        return None;
    }
    let runs = 1 + masks.windows(2).filter(|w| w[0] != w[1]).count();
    Some(masks.len() as f64 / runs as f64)
}

/// Shares of the four accounted classes; `None` when all are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub scalar: f64,
    pub vector: f64,
    pub pack_unpack: f64,
    pub unvectorizable: f64,
}

pub fn distribution(c: &DynamicCounts) -> Option<Distribution> {
    let total = c.scalar_fp + c.vector + c.permutation + c.unvectorizable;
    (total > 0).then(|| {
        let t = total as f64;
        Distribution {
            scalar: c.scalar_fp as f64 / t,
            vector: c.vector as f64 / t,
            pack_unpack: c.permutation as f64 / t,
            unvectorizable: c.unvectorizable as f64 / t,
        }
    })
}

/// Metrics of one kernel × vector length × mode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub kernel: String,
    pub vlen: u32,
    pub mode: String,
    pub dyn_fp_total: u64,
    pub dyn_vectorized: u64,
    pub coverage: Option<f64>,
    pub perm_per_vector: Option<f64>,
    pub distribution: Option<Distribution>,
    pub vlr_run_avg: Option<f64>,
    pub cycles_scalar: u64,
    pub cycles: u64,
    pub speedup: Option<f64>,
}

impl MetricsRecord {
    /// Builds a record from the scalar-mode and this mode's counts and cycle
    /// totals.
    pub fn build(
        vlen: u32,
        mode: &str,
        scalar: (&DynamicCounts, u64),
        this: (&DynamicCounts, u64),
    ) -> Result<Self, MetricsError> {
        let (counts, cycles) = this;
        let coverage = compute_coverage(scalar.0, counts)?;
        Ok(MetricsRecord {
            kernel: counts.kernel.clone(),
            vlen,
            mode: mode.to_string(),
            dyn_fp_total: counts.fp_total(),
            dyn_vectorized: counts.vector_lanes,
            coverage,
            perm_per_vector: (counts.vector > 0).then(|| counts.permutation as f64 / counts.vector as f64),
            distribution: distribution(counts),
            vlr_run_avg: counts.vlr_run_avg(),
            cycles_scalar: scalar.1,
            cycles,
            speedup: (cycles > 0).then(|| scalar.1 as f64 / cycles as f64),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(lanes: u64, scalar: u64) -> DynamicCounts {
        DynamicCounts { kernel: "k".into(), vector: lanes.min(1), vector_lanes: lanes, scalar_fp: scalar, ..Default::default() }
    }

    #[test]
    fn coverage_bounds() {
        let s = counts(0, 6);
        assert_eq!(compute_coverage(&s, &counts(6, 0)).unwrap(), Some(1.0));
        assert_eq!(compute_coverage(&s, &counts(0, 6)).unwrap(), Some(0.0));
        assert_eq!(compute_coverage(&s, &counts(4, 2)).unwrap(), Some(4.0 / 6.0));
    }

    #[test]
    fn coverage_rejects_other_kernels() {
        let mut other = counts(1, 1);
        other.kernel = "j".into();
        assert!(matches!(compute_coverage(&counts(0, 2), &other), Err(MetricsError::KernelMismatch(..))));
    }

    #[test]
    fn vlr_examples() {
        assert_eq!(compute_vlr_runs(&[4, 4, 2, 2, 2]), Some(2.5));
        assert_eq!(compute_vlr_runs(&[2, 2, 2]), Some(3.0));
        assert_eq!(compute_vlr_runs(&[4, 2, 4, 2]), Some(1.0));
        assert_eq!(compute_vlr_runs(&[]), None);
    }

    #[test]
    fn absent_values_without_vector_work() {
        let s = counts(0, 3);
        let r = MetricsRecord::build(128, "scalar", (&s, 10), (&s, 10)).unwrap();
        assert_eq!(r.perm_per_vector, None);
        assert_eq!(r.vlr_run_avg, None);
        assert_eq!(r.speedup, Some(1.0));
        let d = r.distribution.unwrap();
        assert!((d.scalar + d.vector + d.pack_unpack + d.unvectorizable - 1.0).abs() < 1e-9);
    }
}
