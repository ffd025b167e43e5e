//! The CODA descent-ascent algorithms and the SGDA / SCGDA baselines.
//!
//! Every algorithm consumes a [`Problem`], an [`AlgoConfig`] and
//! [`RunOptions`], and returns a [`RunResult`] whose records are measured on
//! the full-expectation objective of the problem it was given.

mod plain;
mod vr;
mod wrap;

use std::time::Instant;

pub use plain::{
    coda_dual, coda_pd, coda_primal, coda_scsc, sample_output_index, scgda_baseline, sgda_baseline,
    theta_weights,
};
pub use vr::{coda_primal_plus, coda_scsc_plus};
pub use wrap::{augment_concavity, ProximalWrap};

use crate::error::{shape_err, CodaError, Result};
use crate::geometry::project;
use crate::measures::{InnerSolveSpec, MeasureSet, Measurer};
use crate::oracle::{CompositionMode, Problem};
use crate::tracking::{tracking_error, TrackerState};
use crate::types::{stack, stream_rng, AlgoConfig, IterationRecord, PrimalDualPoint, Rng, RunResult, Stream, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlgoKind {
    CodaPrimal,
    CodaDual,
    CodaScsc,
    CodaPd,
    CodaScscPlus,
    CodaPrimalPlus,
    Sgda,
    Scgda,
}

impl AlgoKind {
    pub const ALL: [AlgoKind; 8] = [
        AlgoKind::CodaPrimal,
        AlgoKind::CodaDual,
        AlgoKind::CodaScsc,
        AlgoKind::CodaPd,
        AlgoKind::CodaScscPlus,
        AlgoKind::CodaPrimalPlus,
        AlgoKind::Sgda,
        AlgoKind::Scgda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgoKind::CodaPrimal => "coda_primal",
            AlgoKind::CodaDual => "coda_dual",
            AlgoKind::CodaScsc => "coda_scsc",
            AlgoKind::CodaPd => "coda_pd",
            AlgoKind::CodaScscPlus => "coda_scsc_plus",
            AlgoKind::CodaPrimalPlus => "coda_primal_plus",
            AlgoKind::Sgda => "sgda",
            AlgoKind::Scgda => "scgda",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// The composition mode the algorithm is defined for.
    pub fn required_mode(self) -> CompositionMode {
        match self {
            AlgoKind::CodaDual => CompositionMode::OnDual,
            AlgoKind::CodaScsc | AlgoKind::CodaPd => CompositionMode::OnBoth,
            _ => CompositionMode::OnPrimal,
        }
    }

    pub fn check_mode(self, problem: &dyn Problem) -> Result<()> {
        let mode = problem.meta().mode;
        if mode == self.required_mode() {
            Ok(())
        } else {
            Err(CodaError::Config(format!(
                "{} needs a problem composed {}, but '{}' is {}",
                self.name(),
                self.required_mode().name(),
                problem.meta().name,
                mode.name()
            )))
        }
    }
}

impl std::fmt::Display for AlgoKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Start point and measurement plan of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Defaults to [`Problem::default_start`].
    pub start: Option<PrimalDualPoint>,
    pub measures: MeasureSet,
    /// Records are taken at `t = 0`, every `measure_every` steps and at the end.
    pub measure_every: usize,
    pub inner_spec: InnerSolveSpec,
    /// Moreau parameter; defaults to `1 / (2 L)`.
    pub moreau_lambda: Option<f64>,
    /// Keep the iterate of every record in [`RunResult::points`].
    pub keep_points: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            start: None,
            measures: MeasureSet::none(),
            measure_every: 1,
            inner_spec: InnerSolveSpec::default(),
            moreau_lambda: None,
            keep_points: false,
        }
    }
}

impl RunOptions {
    pub fn with_measures(measures: MeasureSet, every: usize) -> Self {
        Self { measures, measure_every: every, ..Default::default() }
    }
}

/// Runs `kind` with its default wiring. The single-call subroutines
/// (`coda_scsc`, `coda_scsc_plus`) are anchored at the start point with the
/// proximal weights `1/gamma` and `mu_x` respectively.
pub fn run_algorithm(
    kind: AlgoKind,
    problem: &dyn Problem,
    config: &AlgoConfig,
    opts: &RunOptions,
) -> Result<RunResult> {
    match kind {
        AlgoKind::CodaPrimal => coda_primal(problem, config, opts),
        AlgoKind::CodaDual => coda_dual(problem, config, opts),
        AlgoKind::CodaScsc => plain::coda_scsc_run(problem, config, opts),
        AlgoKind::CodaPd => coda_pd(problem, config, opts),
        AlgoKind::CodaScscPlus => vr::coda_scsc_plus_run(problem, config, opts),
        AlgoKind::CodaPrimalPlus => coda_primal_plus(problem, config, opts),
        AlgoKind::Sgda => sgda_baseline(problem, config, opts),
        AlgoKind::Scgda => scgda_baseline(problem, config, opts),
    }
}

/// Per-purpose random streams of one run.
pub(crate) struct Streams {
    pub tracker: Rng,
    pub grad: Rng,
    pub output: Rng,
    pub init: Rng,
    pub vr_inner: Rng,
    pub vr_dual: Rng,
    pub vr_primal: Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            tracker: stream_rng(seed, Stream::Tracker),
            grad: stream_rng(seed, Stream::Gradient),
            output: stream_rng(seed, Stream::Output),
            init: stream_rng(seed, Stream::TrackerInit),
            vr_inner: stream_rng(seed, Stream::VrInner),
            vr_dual: stream_rng(seed, Stream::VrDual),
            vr_primal: stream_rng(seed, Stream::VrPrimal),
        }
    }
}

/// The vector the inner map consumes for the problem's composition mode.
pub(crate) fn tracker_input(mode: CompositionMode, x: &Vector, y: &Vector) -> Vector {
    match mode {
        CompositionMode::OnDual => y.clone(),
        CompositionMode::OnBoth => stack(x, y),
        _ => x.clone(),
    }
}

pub(crate) fn start_point(problem: &dyn Problem, opts: &RunOptions) -> Result<PrimalDualPoint> {
    let p = opts.start.clone().unwrap_or_else(|| problem.default_start());
    let m = problem.meta();
    if p.x.len() != m.d_x {
        return Err(shape_err("start x", m.d_x, p.x.len()));
    }
    if p.y.len() != m.d_y {
        return Err(shape_err("start y", m.d_y, p.y.len()));
    }
    Ok(PrimalDualPoint::new(project(problem.domain_x(), &p.x)?, project(problem.domain_y(), &p.y)?))
}

pub(crate) fn validate_run(kind: AlgoKind, problem: &dyn Problem, config: &AlgoConfig, opts: &RunOptions) -> Result<()> {
    kind.check_mode(problem)?;
    config.validate()?;
    problem.meta().validate()?;
    if opts.measure_every == 0 {
        return Err(CodaError::Parameter("measure_every must be positive".into()));
    }
    Ok(())
}

/// Collects trajectory records at the scheduled iterations.
pub(crate) struct Recorder<'a> {
    problem: &'a dyn Problem,
    measurer: Measurer<'a>,
    every: usize,
    records: Vec<IterationRecord>,
    points: Option<Vec<PrimalDualPoint>>,
    clock: Option<Instant>,
}

impl<'a> Recorder<'a> {
    pub fn new(problem: &'a dyn Problem, config: &AlgoConfig, opts: &RunOptions) -> Result<Self> {
        let measurer = Measurer::new(
            problem,
            opts.measures,
            opts.inner_spec,
            opts.moreau_lambda,
            (config.eta_x, config.eta_y),
        )?;
        Ok(Self {
            problem,
            measurer,
            every: opts.measure_every,
            records: Vec::new(),
            points: opts.keep_points.then(Vec::new),
            clock: config.record_timing.then(Instant::now),
        })
    }

    pub fn due(&self, t: usize, last: bool) -> bool {
        last || t.is_multiple_of(self.every)
    }

    pub fn record(
        &mut self,
        t: usize,
        samples: u64,
        point: &PrimalDualPoint,
        tracker: Option<&TrackerState>,
    ) -> Result<()> {
        let mut rec = IterationRecord::at(t, samples);
        self.measurer.fill(point, &mut rec)?;
        if self.measurer.set().tracking_err {
            if let Some(tr) = tracker {
                rec.tracking_err_sq = Some(tracking_error(tr, self.problem)?);
            }
        }
        if let Some(c) = self.clock {
            rec.wall_nanos = c.elapsed().as_nanos() as u64;
        }
        self.records.push(rec);
        if let Some(p) = &mut self.points {
            p.push(point.clone());
        }
        Ok(())
    }

    pub fn finish(self, final_point: PrimalDualPoint, sampled_index: Option<usize>) -> Result<RunResult> {
        let mut out = RunResult::new(final_point);
        out.sampled_index = sampled_index;
        out.points = self.points.unwrap_or_default();
        for r in self.records {
            out.push(r)?;
        }
        Ok(out)
    }
}
