//! Closed-form per-machine traffic and memory models for the distributed
//! primitives, plus the measured-vs-modeled comparison report.
//!
//! The formulas count payload entries (ids or scalars) received per machine
//! under idealized assumptions: evenly divisible splits, and for the sparse
//! primitives a uniform column distribution with `Z` non-zeros per column.
//! They are models, not invariants: the dense GEMM paths match them exactly,
//! while the sparse paths deviate where real graphs break the assumptions
//! (deduplicated requests, skewed degrees). [`compare`] quantifies the gap.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub m: usize,
    /// Average non-zeros per column of the sparse operand (nnz / N).
    pub z: f64,
}

impl CostParams {
    pub fn new(n: usize, d: usize, p: usize, m: usize, z: f64) -> Result<Self> {
        let params = CostParams { n, d, p, m, z };
        params.validate()?;
        Ok(params)
    }

    /// Derive `Z` from an actual graph so model and measurement share
    /// inputs.
    pub fn for_graph(n: usize, nnz: usize, d: usize, p: usize, m: usize) -> Result<Self> {
        CostParams::new(n, d, p, m, nnz as f64 / n as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.p == 0 || self.m == 0 {
            return Err(Error::Config("cost parameters must all be positive".into()));
        }
        if self.z < 0.0 || self.z > self.n as f64 {
            return Err(Error::Config(format!(
                "average column fill {} outside [0, {}]",
                self.z, self.n
            )));
        }
        Ok(())
    }
}

/// Modeled per-machine entries: transient buffer footprint and total
/// received communication volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub memory_entries: f64,
    pub comm_entries: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GemmVariant {
    /// Ring full-width row chunks, multiply once, ring results back.
    Ring,
    /// Full-width partial products reduced onto each output slice's owner.
    AllReduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpmmVariant {
    /// Fetch deduplicated remote feature rows to the non-zeros.
    FeatureFetch,
    /// Ship remote sub-blocks to the feature owners, return partial rows.
    GraphExchange,
    /// Cost reference for a 2-D partitioned layout; no executable variant.
    TwoD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SddmmVariant {
    Duplicate,
    Split,
}

pub fn gemm_cost(params: &CostParams, variant: GemmVariant) -> CostEstimate {
    let nd = params.n as f64 * params.d as f64;
    let p = params.p as f64;
    let m = params.m as f64;
    match variant {
        GemmVariant::Ring => CostEstimate {
            memory_entries: nd / (p * m * m),
            comm_entries: 2.0 * nd / (p * m * m) * (m - 1.0),
        },
        GemmVariant::AllReduce => CostEstimate {
            memory_entries: nd / p,
            comm_entries: nd / (p * m) * (m - 1.0),
        },
    }
}

/// The sparse models count communication only; the transient buffers are
/// the messages themselves, so memory is reported equal to comm.
pub fn spmm_cost(params: &CostParams, variant: SpmmVariant) -> CostEstimate {
    let n = params.n as f64;
    let d = params.d as f64;
    let p = params.p as f64;
    let m = params.m as f64;
    let z = params.z;
    let comm = match variant {
        SpmmVariant::FeatureFetch => {
            z * n * (p - 1.0) / (p * p) + n * (p - 1.0) / (p * p) * (d / m)
        }
        SpmmVariant::GraphExchange => z * n * (p - 1.0) / (p * p) * (d / m) + n * d / (p * m),
        SpmmVariant::TwoD => n * (p - 1.0) / (p * p) * (d / m) + n * d * (m - 1.0) / (p * m),
    };
    CostEstimate { memory_entries: comm, comm_entries: comm }
}

pub fn sddmm_cost(params: &CostParams, variant: SddmmVariant) -> CostEstimate {
    let n = params.n as f64;
    let d = params.d as f64;
    let p = params.p as f64;
    let m = params.m as f64;
    let z = params.z;
    let comm = match variant {
        SddmmVariant::Duplicate => (m + m * p - 2.0) * n * d / (m * p),
        SddmmVariant::Split => {
            (m + m * p - 2.0) * n * d / (m * m * p) + n * z * (m - 1.0) / (p * m)
        }
    };
    CostEstimate { memory_entries: comm, comm_entries: comm }
}

// ---------------------------------------------------------------------------
// Measured-vs-modeled report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CostRow {
    pub primitive: String,
    pub variant: String,
    pub params: CostParams,
    pub modeled: f64,
    pub measured: Option<f64>,
    /// measured / modeled; 1.0 when both are zero.
    pub ratio: Option<f64>,
    pub within_tolerance: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct CostReport {
    pub tolerance: f64,
    pub rows: Vec<CostRow>,
}

/// measured / modeled, treating 0/0 as a perfect 1.0.
pub fn deviation(modeled: f64, measured: f64) -> f64 {
    if modeled == 0.0 {
        if measured == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        measured / modeled
    }
}

impl CostReport {
    pub fn new(tolerance: f64) -> Self {
        CostReport { tolerance, rows: Vec::new() }
    }

    pub fn add_modeled(&mut self, primitive: &str, variant: &str, params: CostParams, modeled: f64) {
        self.rows.push(CostRow {
            primitive: primitive.into(),
            variant: variant.into(),
            params,
            modeled,
            measured: None,
            ratio: None,
            within_tolerance: None,
        });
    }

    pub fn add_measured(
        &mut self,
        primitive: &str,
        variant: &str,
        params: CostParams,
        modeled: f64,
        measured: f64,
    ) {
        let ratio = deviation(modeled, measured);
        self.rows.push(CostRow {
            primitive: primitive.into(),
            variant: variant.into(),
            params,
            modeled,
            measured: Some(measured),
            ratio: Some(ratio),
            within_tolerance: Some((ratio - 1.0).abs() <= self.tolerance),
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("primitive,variant,n,d,p,m,z,modeled,measured,ratio,within\n");
        for r in &self.rows {
            let measured = r.measured.map(|v| v.to_string()).unwrap_or_default();
            let ratio = r.ratio.map(|v| format!("{v:.6}")).unwrap_or_default();
            let within = r
                .within_tolerance
                .map(|w| if w { "yes" } else { "no" }.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.primitive,
                r.variant,
                r.params.n,
                r.params.d,
                r.params.p,
                r.params.m,
                r.params.z,
                r.modeled,
                measured,
                ratio,
                within,
            ));
        }
        out
    }
}
