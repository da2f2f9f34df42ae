//! Energy bookkeeping shared by the segmentation, registration and joint
//! solvers.

/// Additive components of the joint energy.
///
/// `seg_data` is the kernel-weighted mixture data/log term, `entropy`
/// the entropy barrier, `smoothness` the weighted quadratic boundary
/// regularizer, `cross_entropy` the atlas coupling, and
/// `fidelity`/`tikhonov` the two registration terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub seg_data: f64,
    pub entropy: f64,
    pub smoothness: f64,
    pub cross_entropy: f64,
    pub fidelity: f64,
    pub tikhonov: f64,
}

impl EnergyBreakdown {
    /// Segmentation component (data + entropy + smoothness).
    pub fn e_seg(&self) -> f64 {
        self.seg_data + self.entropy + self.smoothness
    }

    /// Cross-entropy coupling component.
    pub fn e_ce(&self) -> f64 {
        self.cross_entropy
    }

    pub fn e_reg_fidelity(&self) -> f64 {
        self.fidelity
    }

    pub fn e_reg_tikhonov(&self) -> f64 {
        self.tikhonov
    }

    /// Sum of all components.
    pub fn total(&self) -> f64 {
        self.seg_data
            + self.entropy
            + self.smoothness
            + self.cross_entropy
            + self.fidelity
            + self.tikhonov
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

/// CSV header matching [`trace_csv_row`].
///
/// `e_reg_term` aggregates everything outside the mixture data, entropy
/// and cross-entropy columns: the quadratic smoothness term plus the two
/// registration terms, so the five component columns always sum to
/// `e_total`.
pub const TRACE_CSV_HEADER: &str = "iter,e_seg_data,e_entropy,e_reg_term,e_ce,e_total";

pub fn trace_csv_row(iter: usize, e: &EnergyBreakdown) -> String {
    let reg_term = e.smoothness + e.fidelity + e.tikhonov;
    format!(
        "{iter},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
        e.seg_data,
        e.entropy,
        reg_term,
        e.cross_entropy,
        e.total()
    )
}

/// Render a full trace as CSV text.
pub fn trace_to_csv(trace: &[EnergyBreakdown]) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for (i, e) in trace.iter().enumerate() {
        out.push_str(&trace_csv_row(i, e));
        out.push('\n');
    }
    out
}
