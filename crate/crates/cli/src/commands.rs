//! The four subcommands, as library functions over a [`RunConfig`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use wbary_core::discrete::{solve_discrete_with, DiscreteOtOptions};
use wbary_core::eval::rejection_sample;
use wbary_core::gaussian::{gaussian_barycenter_mean, run_gaussian_frbary};
use wbary_core::mirror::{TraceRow, TraceSink};
use wbary_core::semidiscrete::{solve_semidiscrete_lenient, transport_cost_estimate};
use wbary_core::{BoxDomain, DiscreteMeasure, GridDensity, InputMeasure, MeasureKind, RegularGrid};

use crate::config::{DomainSpec, InputSpec, RunConfig};
use crate::error::{CliError, Result};
use crate::formats::{self, fmt_f64, InputKind};

/// Reads every input and attaches normalized weights. Explicit weights that
/// do not sum to one are rescaled with a warning.
pub fn load_inputs(specs: &[InputSpec]) -> Result<Vec<InputMeasure>> {
    if specs.is_empty() {
        return Err(CliError::Usage("no inputs given".into()));
    }
    let raw: Vec<f64> = specs.iter().map(|s| s.weight.unwrap_or(1.0)).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(CliError::Usage("input weights sum to zero".into()));
    }
    if specs.iter().any(|s| s.weight.is_some()) && (total - 1.0).abs() > 1e-12 {
        log::warn!("input weights sum to {total}; normalized to 1");
    }
    let mut inputs = Vec::with_capacity(specs.len());
    let mut dim = None;
    for (spec, w) in specs.iter().zip(raw) {
        let measure = formats::ingest(spec.kind, &spec.path)?;
        let d = measure.dim();
        match dim {
            None => dim = Some(d),
            Some(first) if first != d => {
                return Err(CliError::input(&spec.path, format!("dimension mismatch: {d} vs {first}")));
            }
            _ => {}
        }
        inputs.push(InputMeasure::new(measure, w / total));
    }
    Ok(inputs)
}

/// Axis ranges covered by a measure; Gaussians count to four standard
/// deviations.
fn support_box(m: &MeasureKind) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; m.dim()];
    let mut hi = vec![f64::NEG_INFINITY; m.dim()];
    let mut include = |p: &[f64]| {
        for a in 0..p.len() {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    };
    match m {
        MeasureKind::Discrete(d) => d.points().chunks_exact(d.dim()).for_each(include),
        MeasureKind::Histogram(h) => {
            let grid = h.grid();
            for (j, &w) in h.weights().iter().enumerate() {
                if w > 0.0 {
                    let cell = grid.cell_lo(j);
                    include(&cell);
                    let far: Vec<f64> = cell.iter().zip(grid.widths()).map(|(c, w)| c + w).collect();
                    include(&far);
                }
            }
        }
        MeasureKind::Density(r) => {
            include(r.grid().domain().lo());
            include(r.grid().domain().hi());
        }
        MeasureKind::Gaussian(g) => {
            let sd: Vec<f64> = (0..g.dim()).map(|a| 4.0 * g.cov().matrix()[(a, a)].sqrt()).collect();
            include(&g.mean().iter().zip(&sd).map(|(m, s)| m - s).collect::<Vec<_>>());
            include(&g.mean().iter().zip(&sd).map(|(m, s)| m + s).collect::<Vec<_>>());
        }
    }
    (lo, hi)
}

pub fn resolve_domain(cfg: &RunConfig, inputs: &[InputMeasure]) -> Result<BoxDomain> {
    let dim = cfg.grid.len();
    let domain = match &cfg.domain {
        DomainSpec::Explicit { lo, hi } => BoxDomain::new(lo.clone(), hi.clone()),
        DomainSpec::Auto => {
            let mut corners = Vec::new();
            for m in inputs {
                let (lo, hi) = support_box(&m.measure);
                corners.extend(lo);
                corners.extend(hi);
            }
            BoxDomain::bounding(&corners, dim, cfg.margin)
        }
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    if domain.dim() != dim {
        return Err(CliError::Usage(format!(
            "dimension mismatch: grid has {dim} axes, domain has {}",
            domain.dim()
        )));
    }
    Ok(domain)
}

fn check_dims(cfg: &RunConfig, inputs: &[InputMeasure]) -> Result<()> {
    for (spec, m) in cfg.inputs.iter().zip(inputs) {
        if m.measure.dim() != cfg.grid.len() {
            return Err(CliError::input(
                &spec.path,
                format!("dimension mismatch: input is {}D, grid is {}D", m.measure.dim(), cfg.grid.len()),
            ));
        }
    }
    Ok(())
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

/// Streams trace rows to CSV, keeping the first write error.
struct CsvTrace<'a> {
    path: &'a Path,
    out: BufWriter<File>,
    error: Option<std::io::Error>,
    timing: bool,
    eval_every: usize,
}

impl CsvTrace<'_> {
    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(CliError::io(self.path, e));
        }
        self.out.flush().map_err(|e| CliError::io(self.path, e))
    }
}

impl TraceSink for CsvTrace<'_> {
    fn record(&mut self, row: &TraceRow) {
        if self.eval_every > 0 && row.k.is_multiple_of(self.eval_every) {
            log::info!("k={} eta={:.4e} objective={:.10e} kl={:.3e}", row.k, row.eta, row.objective, row.kl_step);
        }
        if row.k == 0 {
            let mut header: Vec<String> = ["k", "eta", "objective", "kl_step", "max_potential", "wall_ms"]
                .map(String::from)
                .into();
            header.extend((0..row.inner_residuals.len()).map(|i| format!("residual_{i}")));
            self.write(header.join(",") + "\n");
        }
        let wall = if self.timing { row.wall_ms } else { 0.0 };
        let mut fields = vec![
            row.k.to_string(),
            fmt_f64(row.eta),
            fmt_f64(row.objective),
            fmt_f64(row.kl_step),
            fmt_f64(row.max_potential),
            fmt_f64(wall),
        ];
        fields.extend(row.inner_residuals.iter().map(|&r| fmt_f64(r)));
        self.write(fields.join(",") + "\n");
    }
}

impl CsvTrace<'_> {
    fn write(&mut self, s: String) {
        if self.error.is_none() {
            if let Err(e) = self.out.write_all(s.as_bytes()) {
                self.error = Some(e);
            }
        }
    }
}

fn write_summary(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut out = create(path)?;
    let body: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    out.write_all(body.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterReport {
    pub best_k: usize,
    pub best_objective: f64,
    pub violations: usize,
}

/// Runs mirror descent from the uniform density and writes the best
/// iterate, the trace and the summary.
pub fn barycenter(cfg: &RunConfig) -> Result<BarycenterReport> {
    let inputs = load_inputs(&cfg.inputs)?;
    check_dims(cfg, &inputs)?;
    let domain = resolve_domain(cfg, &inputs)?;
    let grid = RegularGrid::new(domain, cfg.grid.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let schedule = cfg.schedule()?;
    let opts = cfg.frbary_options();
    let mut sink = CsvTrace {
        path: &cfg.out_trace,
        out: create(&cfg.out_trace)?,
        error: None,
        timing: cfg.timing,
        eval_every: cfg.eval_every,
    };
    let result = with_pool(cfg.threads, || {
        Ok(wbary_core::run_frbary(&inputs, GridDensity::uniform(grid), &schedule, &opts, &mut sink)?)
    })?;
    sink.finish()?;
    let violations = result.trace.violations();
    for v in &violations {
        log::warn!("invariant: {v}");
    }
    let best = result.best_density.as_ref().unwrap_or(&result.density);
    formats::write_density(&cfg.out_density, best)?;
    let last = result.trace.rows.last().map_or(f64::NAN, |r| r.objective);
    write_summary(
        &cfg.out_summary,
        &[
            ("best_k", result.best_k.to_string()),
            ("best_objective", fmt_f64(result.best_objective)),
            ("final_objective", fmt_f64(last)),
            ("iterations", schedule.iterations.to_string()),
            ("violations", violations.len().to_string()),
        ],
    )?;
    Ok(BarycenterReport {
        best_k: result.best_k,
        best_objective: result.best_objective,
        violations: violations.len(),
    })
}

/// Closed-form covariance iteration for Gaussian inputs; writes the
/// barycenter, the distance trace and the summary. Returns the final
/// distance to the fixed-point barycenter.
pub fn gaussian(cfg: &RunConfig) -> Result<f64> {
    let inputs = load_inputs(&cfg.inputs)?;
    let mut means = Vec::new();
    let mut sigmas = Vec::new();
    for (spec, m) in cfg.inputs.iter().zip(&inputs) {
        match &m.measure {
            MeasureKind::Gaussian(g) => {
                means.push(g.mean().to_vec());
                sigmas.push(g.cov().clone());
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "{}: the gaussian command takes {} inputs",
                    spec.path.display(),
                    InputKind::GaussianTxt
                )))
            }
        }
    }
    let weights: Vec<f64> = inputs.iter().map(|m| m.weight).collect();
    let schedule = cfg.schedule()?;
    let run = with_pool(cfg.threads, || Ok(run_gaussian_frbary(&sigmas, &weights, &schedule, cfg.gaussian_init)?))?;
    let mean_refs: Vec<&[f64]> = means.iter().map(Vec::as_slice).collect();
    let mean = gaussian_barycenter_mean(&mean_refs, &weights);
    formats::write_gaussian(&cfg.out_covariance, &mean, &run.covariance)?;

    let mut out = create(&cfg.out_trace)?;
    let mut body = String::from("k,eta,bw_distance\n");
    for (k, bw) in run.bw_trace.iter().enumerate() {
        let eta = if k == 0 { 0.0 } else { run.etas[k - 1] };
        body.push_str(&format!("{k},{},{}\n", fmt_f64(eta), fmt_f64(*bw)));
    }
    out.write_all(body.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(&cfg.out_trace, e))?;
    let last = *run.bw_trace.last().expect("trace holds the starting point");
    write_summary(
        &cfg.out_summary,
        &[
            ("final_bw_distance", fmt_f64(last)),
            ("iterations", schedule.iterations.to_string()),
        ],
    )?;
    Ok(last)
}

/// Draws `n` points from a stored density and writes them as a point cloud.
pub fn sample(density: &Path, n: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(CliError::Usage("sample count must be positive".into()));
    }
    let rho = formats::read_density(density)?;
    let samples = rejection_sample(&rho, n, seed);
    formats::write_point_cloud(out, samples.dim(), samples.points(), None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtReport {
    pub semidiscrete: bool,
    pub w2_squared: f64,
    /// Gradient norm of the semi-discrete dual or the discrete duality gap.
    pub residual: f64,
}

enum OtSide {
    Atoms(DiscreteMeasure),
    Density(GridDensity),
}

fn ot_side(spec: &InputSpec) -> Result<OtSide> {
    Ok(match formats::ingest(spec.kind, &spec.path)? {
        MeasureKind::Discrete(d) => OtSide::Atoms(d),
        MeasureKind::Histogram(h) => OtSide::Atoms(h.to_discrete(0.0)?),
        MeasureKind::Density(r) => OtSide::Density(r),
        MeasureKind::Gaussian(_) => {
            return Err(CliError::Usage(format!(
                "{}: ot takes point clouds, histograms or densities",
                spec.path.display()
            )))
        }
    })
}

/// One transport solve: semi-discrete when a side is a density, discrete
/// otherwise.
pub fn ot(source: &InputSpec, target: &InputSpec, cfg: &RunConfig) -> Result<OtReport> {
    let a = ot_side(source)?;
    let b = ot_side(target)?;
    let dims = |s: &OtSide| match s {
        OtSide::Atoms(d) => d.dim(),
        OtSide::Density(r) => r.grid().dim(),
    };
    if dims(&a) != dims(&b) {
        return Err(wbary_core::Error::DimensionMismatch {
            expected: dims(&a),
            found: dims(&b),
        }
        .into());
    }
    with_pool(cfg.threads, || match (a, b) {
        (OtSide::Atoms(x), OtSide::Atoms(y)) => {
            let sol = solve_discrete_with(&x, &y, &DiscreteOtOptions::default())?;
            Ok(OtReport {
                semidiscrete: false,
                w2_squared: 2.0 * sol.plan.cost,
                residual: sol.duality_gap(),
            })
        }
        (OtSide::Atoms(x), OtSide::Density(r)) | (OtSide::Density(r), OtSide::Atoms(x)) => {
            let sol = solve_semidiscrete_lenient(&x, &r, &cfg.solver_options(), None)?;
            Ok(OtReport {
                semidiscrete: true,
                w2_squared: transport_cost_estimate(&sol),
                residual: sol.grad_norm,
            })
        }
        (OtSide::Density(_), OtSide::Density(_)) => {
            Err(CliError::Usage("ot needs at least one point cloud or histogram".into()))
        }
    })
}
