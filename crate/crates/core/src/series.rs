//! Time series recorded by the solvers.

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The stopping quantity fell below the configured tolerance.
    Tolerance,
    /// `max_steps` was reached first.
    MaxSteps,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Tolerance => "tolerance",
            Termination::MaxSteps => "max_steps",
        }
    }
}

/// One recorded state.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    /// `V = ½ ∫ |x - E|²`.
    pub variance: f64,
    pub mean: Vec<f64>,
    pub m_f: Vec<f64>,
    pub weight_norm: f64,
    /// W₂ distance to the Dirac mass at the known minimizer, if any.
    pub w2: Option<f64>,
    /// `χ_{K-1} - χ_0`, for quantile-grid runs.
    pub support_width: Option<f64>,
}

/// Snapshots of a single run plus the reason it ended.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsSeries {
    pub snapshots: Vec<Snapshot>,
    pub termination: Termination,
    /// Number of steps actually taken.
    pub steps: usize,
}

/// Which scalar column of a series to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesField {
    Variance,
    W2,
}

impl DiagnosticsSeries {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// Values of `field`; snapshots without a W₂ value are skipped.
    pub fn field(&self, field: SeriesField) -> Vec<(f64, f64)> {
        self.snapshots
            .iter()
            .filter_map(|s| match field {
                SeriesField::Variance => Some((s.t, s.variance)),
                SeriesField::W2 => s.w2.map(|w| (s.t, w)),
            })
            .collect()
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("series always holds the initial snapshot")
    }
}

/// Decides which steps get recorded: every `record_every`-th step plus the
/// final one.
pub(crate) struct Recorder {
    record_every: usize,
    pub(crate) snapshots: Vec<Snapshot>,
}

impl Recorder {
    pub(crate) fn new(record_every: usize) -> Self {
        Recorder {
            record_every: record_every.max(1),
            snapshots: Vec::new(),
        }
    }

    pub(crate) fn due(&self, step: usize) -> bool {
        step.is_multiple_of(self.record_every)
    }

    pub(crate) fn push(&mut self, snap: Snapshot) {
        if self.snapshots.last().map(|s| s.step) != Some(snap.step) {
            self.snapshots.push(snap);
        }
    }

    pub(crate) fn finish(self, termination: Termination, steps: usize) -> DiagnosticsSeries {
        DiagnosticsSeries {
            snapshots: self.snapshots,
            termination,
            steps,
        }
    }
}
