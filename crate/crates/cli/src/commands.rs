//! Subcommands: arguments and the computation behind each one.

use std::collections::BTreeMap;
use std::path::PathBuf;

use catalyst_core::anderson::{dual_log_weights, direct_log_weights, DualSetup, Estimator, MomentParams, MomentReport};
use catalyst_core::coalescing::{
    block_inequality_check, calibrate_c_epsilon, correlation_dual, k_good_deficiency, meeting_probability, parse_points,
    points_dimension, BlockConfig,
};
use catalyst_core::kernels::fourier::{green_constants_with, green_g};
use catalyst_core::kernels::{BoxRegion, QuadratureOptions};
use catalyst_core::lyapunov::{
    clumping_check, curve_from_reports, dichotomy_scan, hard_checks, DichotomyConfig, EstimatorChoice, ExtrapolationModel,
    PredicateReport,
};
use catalyst_core::polaron::{conjecture_rhs, solve_p5, ConjectureInputs, PolaronOptions};
use catalyst_core::rng::{derive_seed, Replication};
use catalyst_core::stats::{MomentEstimate, Z95};
use catalyst_core::voter::{occupation_samples, persistence_probability, InitialLaw, OccupationTail, VoterConfig};
use catalyst_core::{make_simple_random_walk, Error, Kernel, Lattice, Site, Torus};
use clap::{Args, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::table::{Format, Table};

#[derive(Subcommand, Debug, Clone, PartialEq)]
pub enum Command {
    /// Green constants G and G* of a kernel.
    Greens(GreensArgs),
    /// Occupation time of the origin by the voter model, via the dual.
    VoterOccupation(OccupationArgs),
    /// Probability that a box stays fully occupied up to time t.
    VoterPersistence(PersistenceArgs),
    /// Space-time correlation of the voter model from coalescing walks.
    DualityCheck(DualityArgs),
    /// p-th moment of the Anderson solution, direct or dual estimator.
    Moment(MomentArgs),
    /// Lyapunov curves over a grid of kappa, p and t.
    LyapunovScan(ScanArgs),
    /// Lambda_1 against kappa in several dimensions.
    Dichotomy(DichotomyArgs),
    /// Radial lower bound for the five-dimensional polaron constant.
    Polaron(PolaronArgs),
    /// Predicted large-kappa correction of lambda_p.
    Conjecture(ConjectureArgs),
    /// K-good deficiency, meeting decay and the block decoupling bound.
    BlockCheck(BlockArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Greens(_) => "greens",
            Command::VoterOccupation(_) => "voter-occupation",
            Command::VoterPersistence(_) => "voter-persistence",
            Command::DualityCheck(_) => "duality-check",
            Command::Moment(_) => "moment",
            Command::LyapunovScan(_) => "lyapunov-scan",
            Command::Dichotomy(_) => "dichotomy",
            Command::Polaron(_) => "polaron",
            Command::Conjecture(_) => "conjecture",
            Command::BlockCheck(_) => "block-check",
        }
    }

    pub fn replicas(&self) -> Option<usize> {
        match self {
            Command::VoterOccupation(a) => Some(a.replicas),
            Command::VoterPersistence(a) => Some(a.replicas),
            Command::DualityCheck(a) => Some(a.replicas),
            Command::Moment(a) => Some(a.replicas),
            Command::LyapunovScan(a) => Some(a.replicas),
            Command::Dichotomy(a) => Some(a.replicas),
            Command::BlockCheck(a) => Some(a.replicas),
            Command::Greens(_) | Command::Polaron(_) | Command::Conjecture(_) => None,
        }
    }

    pub fn run(&self, ctx: &Context) -> CliResult<Outcome> {
        match self {
            Command::Greens(a) => greens(a),
            Command::VoterOccupation(a) => voter_occupation(a, ctx),
            Command::VoterPersistence(a) => voter_persistence(a, ctx),
            Command::DualityCheck(a) => duality_check(a, ctx),
            Command::Moment(a) => moment(a, ctx),
            Command::LyapunovScan(a) => lyapunov_scan(a, ctx),
            Command::Dichotomy(a) => dichotomy(a, ctx),
            Command::Polaron(a) => polaron(a, ctx),
            Command::Conjecture(a) => conjecture(a),
            Command::BlockCheck(a) => block_check(a, ctx),
        }
    }
}

/// What every command sees besides its own arguments.
#[derive(Clone, Debug)]
pub struct Context {
    pub master_seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub format: Format,
}

impl Context {
    fn rep(&self, replicas: usize) -> Replication {
        Replication::new(self.master_seed, replicas).with_workers(self.workers)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Warnings {
    pub counts: BTreeMap<String, usize>,
    pub details: Vec<String>,
}

impl Warnings {
    pub fn add(&mut self, kind: &str, count: usize, detail: String) {
        if count == 0 {
            return;
        }
        *self.counts.entry(kind.into()).or_default() += count;
        self.details.push(format!("{kind}: {detail}"));
    }

    fn estimate(&mut self, what: &str, e: &MomentEstimate) {
        self.add("window_violation", e.excluded, format!("{what}: {} replicas left the torus window", e.excluded));
        if e.heavy_tail {
            self.add("heavy_tail", 1, format!("{what}: largest weight carries {:.3} of the sum", e.max_weight_share));
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub summary: Value,
    pub tables: Vec<Table>,
    pub predicates: Vec<PredicateReport>,
    pub warnings: Warnings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Direct,
    Dual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Model {
    InverseT,
    InverseTLog,
}

impl From<Model> for ExtrapolationModel {
    fn from(m: Model) -> Self {
        match m {
            Model::InverseT => ExtrapolationModel::InverseT,
            Model::InverseTLog => ExtrapolationModel::InverseTLog,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// `srw` or the path of a kernel JSON file.
pub fn load_kernel(spec: &str, dim: usize) -> CliResult<Kernel> {
    let k = if spec == "srw" {
        make_simple_random_walk(dim)?
    } else {
        let text = std::fs::read_to_string(spec).map_err(|e| config_err(format!("kernel file {spec}: {e}")))?;
        Kernel::from_json(&text)?
    };
    if k.dim() != dim {
        return Err(config_err(format!("kernel has dimension {} but --dim is {dim}", k.dim())));
    }
    Ok(k)
}

fn voter_config(dim: usize, side: usize, rho: f64, warmup: Option<f64>, kernel: &str) -> CliResult<VoterConfig> {
    let torus = Torus::new(side, dim)?;
    let init = warmup.map_or(InitialLaw::Bernoulli, InitialLaw::Warmed);
    Ok(VoterConfig::new(torus, load_kernel(kernel, dim)?, rho, init)?)
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct GreensArgs {
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    /// `srw` or a path to a kernel JSON file.
    #[arg(long, default_value = "srw")]
    pub kernel: String,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

fn greens(a: &GreensArgs) -> CliResult<Outcome> {
    let k = load_kernel(&a.kernel, a.dim)?;
    let opts = QuadratureOptions::default().with_tolerance(a.tol);
    let mut out = Outcome::default();
    out.summary = match green_constants_with(&k, &opts) {
        Ok(c) => json!({ "g": c.g, "g_star": c.g_star, "error": c.quadrature_error }),
        Err(Error::NotStronglyTransient(d)) => {
            let q = green_g(&k, &opts)?;
            out.warnings.add("not_strongly_transient", 1, format!("G* diverges in d={d}"));
            json!({ "g": q.value, "g_star": null, "error": q.error })
        }
        Err(e) => return Err(e.into()),
    };
    Ok(out)
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct OccupationArgs {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Torus side length.
    #[arg(long = "L", default_value_t = 16)]
    pub side: usize,
    #[arg(long, default_value_t = 0.2)]
    pub rho: f64,
    #[arg(long, default_value_t = 8.0)]
    pub t: f64,
    /// Threshold on the occupied fraction `T_t / t`.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10_000)]
    pub replicas: usize,
    /// Warm-up of the initial law; product Bernoulli when absent.
    #[arg(long = "T")]
    pub warmup: Option<f64>,
    #[arg(long, default_value = "srw")]
    pub kernel: String,
}

fn voter_occupation(a: &OccupationArgs, ctx: &Context) -> CliResult<Outcome> {
    let cfg = voter_config(a.dim, a.side, a.rho, a.warmup, &a.kernel)?;
    if !(a.alpha > a.rho && a.alpha < 1.0) {
        return Err(config_err(format!("alpha {} must lie in (rho, 1)", a.alpha)));
    }
    let samples = occupation_samples(&cfg, Site::ORIGIN, a.t, &ctx.rep(a.replicas))?;
    let mut out = Outcome::default();
    let mut table = Table::new("occupation", &["replica", "occupation_time"]);
    for (i, v) in samples.iter().enumerate() {
        table.push(vec![i.into(), (*v).into()]);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    out.summary = match OccupationTail::from_samples(&samples, a.alpha, a.t, a.dim) {
        Ok(tail) => json!({
            "alpha": a.alpha, "t": a.t, "replicas": samples.len(), "mean_occupation": mean,
            "hits": tail.estimate.hits, "p_hat": tail.estimate.p_hat,
            "ci_low": tail.estimate.ci_low, "ci_high": tail.estimate.ci_high,
            "speed": tail.speed, "decay": tail.decay,
        }),
        Err(Error::ZeroHits { upper_bound, replicas }) => {
            out.warnings.add("zero_hits", 1, format!("T_t/t >= {} never observed in {replicas} replicas", a.alpha));
            json!({
                "alpha": a.alpha, "t": a.t, "replicas": replicas, "mean_occupation": mean,
                "hits": 0, "p_hat": 0.0, "ci_low": 0.0, "ci_high": upper_bound, "speed": null, "decay": null,
            })
        }
        Err(e) => return Err(e.into()),
    };
    out.tables.push(table);
    Ok(out)
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct PersistenceArgs {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long = "L", default_value_t = 16)]
    pub side: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Side of the cube anchored at the origin.
    #[arg(long, default_value_t = 1)]
    pub box_side: usize,
    #[arg(long, default_value_t = 10_000)]
    pub replicas: usize,
    #[arg(long = "T")]
    pub warmup: Option<f64>,
    #[arg(long, default_value = "srw")]
    pub kernel: String,
}

fn voter_persistence(a: &PersistenceArgs, ctx: &Context) -> CliResult<Outcome> {
    let cfg = voter_config(a.dim, a.side, a.rho, a.warmup, &a.kernel)?;
    let q = BoxRegion::cube(a.box_side, a.dim);
    let mut out = Outcome::default();
    out.summary = match persistence_probability(&cfg, &q, a.t, &ctx.rep(a.replicas)) {
        Ok(p) => json!({
            "t": a.t, "p_hat": p.estimate.p_hat, "ci_low": p.estimate.ci_low, "ci_high": p.estimate.ci_high,
            "rate": p.rate, "hits": p.estimate.hits, "replicas": p.estimate.trials,
            "conditional": p.conditional.mean, "conditional_std_error": p.conditional.std_error,
        }),
        Err(Error::ZeroHits { upper_bound, replicas }) => {
            out.warnings.add("zero_hits", 1, format!("box never stayed occupied in {replicas} replicas"));
            json!({
                "t": a.t, "p_hat": 0.0, "ci_low": 0.0, "ci_high": upper_bound, "rate": null,
                "hits": 0, "replicas": replicas,
            })
        }
        Err(e) => return Err(e.into()),
    };
    Ok(out)
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct DualityArgs {
    /// Space-time points `x1,..,xd@s;...`.
    #[arg(long, allow_hyphen_values = true)]
    pub points: String,
    #[arg(long, default_value_t = 0.3)]
    pub rho: f64,
    #[arg(long, default_value_t = 2.0)]
    pub t: f64,
    #[arg(long = "T", default_value_t = 16.0)]
    pub warmup: f64,
    /// Torus side; the walks live on `Z^d` when absent.
    #[arg(long = "L")]
    pub side: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    pub replicas: usize,
    #[arg(long, default_value = "srw")]
    pub kernel: String,
}

fn lattice_for(dim: usize, side: Option<usize>) -> CliResult<Lattice> {
    Ok(match side {
        Some(l) => Lattice::Torus(Torus::new(l, dim)?),
        None => Lattice::Free(dim),
    })
}

fn duality_check(a: &DualityArgs, ctx: &Context) -> CliResult<Outcome> {
    let dim = points_dimension(&a.points).ok_or_else(|| config_err("cannot read the dimension of --points"))?;
    let seeds = parse_points(&a.points)?;
    let kernel = load_kernel(&a.kernel, dim)?;
    let lattice = lattice_for(dim, a.side)?;
    let r = correlation_dual(&seeds, a.rho, a.warmup, a.t, &kernel, &lattice, &ctx.rep(a.replicas))?;
    let mut out = Outcome::default();
    out.warnings.estimate("duality", &r.estimate);
    out.summary = json!({
        "estimate": r.estimate.mean,
        "std_error": r.estimate.std_error,
        "ci": [r.estimate.ci_low, r.estimate.ci_high],
        "bracket_low": r.bracket_low,
        "bracket_high": r.bracket_high,
        "mean_alive": r.mean_alive,
        "replicas": r.estimate.replicas,
    });
    Ok(out)
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct MomentArgs {
    #[arg(long, value_enum, default_value = "dual")]
    pub mode: Mode,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 2.0)]
    pub t: f64,
    #[arg(long = "T", default_value_t = 8.0)]
    pub warmup: f64,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Torus side; required for the direct estimator.
    #[arg(long = "L")]
    pub side: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub replicas: usize,
    /// Also write the per-replica log-weights.
    #[arg(long)]
    pub emit_csv: bool,
    #[arg(long, default_value = "srw")]
    pub kernel: String,
}

fn estimator_choice(
    mode: Mode,
    dim: usize,
    side: Option<usize>,
    rho: f64,
    warmup: f64,
    kernel: &str,
) -> CliResult<EstimatorChoice> {
    Ok(match mode {
        Mode::Direct => {
            let side = side.ok_or_else(|| config_err("the direct estimator needs --L"))?;
            EstimatorChoice::Direct(voter_config(dim, side, rho, Some(warmup), kernel)?)
        }
        Mode::Dual => {
            let setup = DualSetup { kernel: load_kernel(kernel, dim)?, lattice: lattice_for(dim, side)?, rho, warmup };
            setup.validate()?;
            EstimatorChoice::Dual(setup)
        }
    })
}

/// Per-replica log-weights of every grid point and the reports built from
/// them.
fn moment_reports(
    choice: &EstimatorChoice,
    grid: &[MomentParams],
    rep: &Replication,
) -> CliResult<(Vec<Vec<Option<f64>>>, Vec<MomentReport>)> {
    let (weights, estimator, warmup) = match choice {
        EstimatorChoice::Direct(c) => (direct_log_weights(c, grid, rep)?, Estimator::Direct, c.warmup()),
        EstimatorChoice::Dual(s) => {
            let w = dual_log_weights(s, grid, rep)?;
            (w.into_iter().map(|row| row.into_iter().map(Some).collect()).collect(), Estimator::Dual, s.warmup)
        }
    };
    let reports = grid
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let column: Vec<Option<f64>> = weights.iter().map(|r| r[i]).collect();
            MomentReport::from_log_weights(estimator, *g, choice.rho(), warmup, &column)
        })
        .collect::<catalyst_core::Result<Vec<_>>>()?;
    Ok((weights, reports))
}

pub fn moment_table(name: &str, dim: usize, reports: &[MomentReport]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "dim", "estimator", "p", "kappa", "gamma", "rho", "t", "warmup", "mean", "std_error", "log_mean", "lambda_hat",
            "lambda_std_error", "ci_low", "ci_high", "excluded", "heavy_tail",
        ],
    );
    for r in reports {
        let est = match r.estimator {
            Estimator::Direct => "direct",
            Estimator::Dual => "dual",
            Estimator::Pinned => "pinned",
        };
        t.push(vec![
            dim.into(),
            est.into(),
            r.params.p.into(),
            r.params.kappa.into(),
            r.params.gamma.into(),
            r.rho.into(),
            r.params.t.into(),
            r.warmup.into(),
            r.estimate.mean.into(),
            r.estimate.std_error.into(),
            r.estimate.log_mean.into(),
            r.lambda_hat.into(),
            r.lambda_std_error.into(),
            (r.lambda_hat - Z95 * r.lambda_std_error).into(),
            (r.lambda_hat + Z95 * r.lambda_std_error).into(),
            r.estimate.excluded.into(),
            r.estimate.heavy_tail.into(),
        ]);
    }
    t
}

fn moment(a: &MomentArgs, ctx: &Context) -> CliResult<Outcome> {
    if a.p == 0 {
        return Err(config_err("p must be at least 1"));
    }
    let choice = estimator_choice(a.mode, a.dim, a.side, a.rho, a.warmup, &a.kernel)?;
    let grid: Vec<MomentParams> = (1..=a.p).map(|p| MomentParams::new(p, a.kappa, a.gamma, a.t)).collect();
    let (weights, reports) = moment_reports(&choice, &grid, &ctx.rep(a.replicas))?;
    let mut out = Outcome::default();
    for r in &reports {
        out.warnings.estimate(&format!("p={}", r.params.p), &r.estimate);
    }
    out.predicates = hard_checks(&reports);
    out.tables.push(moment_table("moments", a.dim, &reports));
    if a.emit_csv {
        let mut w = Table::new("weights", &["replica", "log_weight"]);
        for (i, row) in weights.iter().enumerate() {
            let cell = row[a.p - 1].map_or_else(|| "".into(), Into::into);
            w.push(vec![i.into(), cell]);
        }
        out.tables.push(w);
    }
    out.summary = serde_json::to_value(reports.last().expect("p >= 1")).map_err(catalyst_core::Error::from)?;
    Ok(out)
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct ScanArgs {
    #[arg(long, value_enum, default_value = "dual")]
    pub mode: Mode,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long = "L")]
    pub side: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub kappas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub ps: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub t_grid: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long = "T", default_value_t = 8.0)]
    pub warmup: f64,
    #[arg(long, default_value_t = 10_000)]
    pub replicas: usize,
    #[arg(long, value_enum, default_value = "inverse-t")]
    pub model: Model,
    /// Time scale of the clumping lower bound.
    #[arg(long, default_value_t = 0.1)]
    pub t_probe: f64,
    #[arg(long, default_value = "srw")]
    pub kernel: String,
}

fn lyapunov_scan(a: &ScanArgs, ctx: &Context) -> CliResult<Outcome> {
    if a.t_grid.len() < 3 || a.t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(config_err("t-grid must be increasing with at least three points"));
    }
    if a.ps.is_empty() || a.ps.contains(&0) || a.kappas.is_empty() {
        return Err(config_err("need p >= 1 and at least one kappa"));
    }
    let choice = estimator_choice(a.mode, a.dim, a.side, a.rho, a.warmup, &a.kernel)?;
    let rep = ctx.rep(a.replicas);
    let mut out = Outcome::default();
    let mut points = Table::new("lyapunov", &["d", "kappa", "p", "t", "lambda_hat", "ci_low", "ci_high"]);
    let mut fits = Table::new("lyapunov_fit", &["d", "kappa", "p", "lambda_hat", "std_error", "residual", "sane"]);
    let mut curves = Vec::new();
    for &kappa in &a.kappas {
        let grid: Vec<MomentParams> = a
            .ps
            .iter()
            .flat_map(|&p| a.t_grid.iter().map(move |&t| MomentParams::new(p, kappa, a.gamma, t)))
            .collect();
        let (_, reports) = moment_reports(&choice, &grid, &rep)?;
        for r in &reports {
            out.warnings.estimate(&format!("kappa={kappa} p={} t={}", r.params.p, r.params.t), &r.estimate);
        }
        out.predicates.extend(hard_checks(&reports));
        for &p in &a.ps {
            let mine: Vec<MomentReport> = reports.iter().filter(|r| r.params.p == p).cloned().collect();
            let curve = curve_from_reports(mine, a.dim, a.model.into())?;
            for pt in &curve.points {
                points.push(vec![
                    a.dim.into(),
                    kappa.into(),
                    p.into(),
                    pt.t.into(),
                    pt.lambda_hat.into(),
                    pt.ci_low.into(),
                    pt.ci_high.into(),
                ]);
            }
            let sane = curve.extrapolation_is_sane();
            fits.push(vec![
                a.dim.into(),
                kappa.into(),
                p.into(),
                curve.lambda_hat.into(),
                curve.lambda_std_error.into(),
                curve.residual.into(),
                sane.into(),
            ]);
            out.predicates.push(PredicateReport {
                name: "extrapolation".into(),
                passed: sane,
                hard: false,
                statistic: curve.lambda_hat,
                bound: f64::NAN,
                sigma: curve.lambda_std_error,
                detail: format!("kappa={kappa} p={p} residual={}", curve.residual),
            });
            if p == 1 {
                out.predicates.push(clumping_check(&curve, a.t_probe)?);
            }
            curves.push(json!({
                "kappa": kappa, "p": p, "lambda_hat": curve.lambda_hat,
                "std_error": curve.lambda_std_error, "residual": curve.residual, "sane": sane,
            }));
        }
    }
    out.summary = json!({ "dim": a.dim, "curves": curves });
    out.tables.push(points);
    out.tables.push(fits);
    Ok(out)
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct DichotomyArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,5")]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,4,16")]
    pub kappas: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 4.0)]
    pub t: f64,
    #[arg(long = "T", default_value_t = 8.0)]
    pub warmup: f64,
    #[arg(long, default_value_t = 10_000)]
    pub replicas: usize,
}

fn dichotomy(a: &DichotomyArgs, ctx: &Context) -> CliResult<Outcome> {
    let cfg = DichotomyConfig {
        dims: a.dims.clone(),
        kappas: a.kappas.clone(),
        p: a.p,
        gamma: a.gamma,
        rho: a.rho,
        t: a.t,
        warmup: a.warmup,
    };
    let scan = dichotomy_scan(&cfg, &ctx.rep(a.replicas))?;
    let mut table = Table::new("dichotomy", &["d", "kappa", "lambda_hat", "std_error", "ci_low", "ci_high"]);
    for r in &scan.rows {
        table.push(vec![
            r.dim.into(),
            r.kappa.into(),
            r.lambda_hat.into(),
            r.std_error.into(),
            r.ci_low.into(),
            r.ci_high.into(),
        ]);
    }
    Ok(Outcome {
        summary: json!({ "rows": scan.rows }),
        tables: vec![table],
        predicates: scan.checks,
        warnings: Warnings::default(),
    })
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct PolaronArgs {
    /// Radial grid points.
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    /// Outer radius.
    #[arg(long = "R", default_value_t = 30.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    /// Re-solve on the grid with twice the intervals.
    #[arg(long)]
    pub refine: bool,
}

fn polaron(a: &PolaronArgs, ctx: &Context) -> CliResult<Outcome> {
    let opts = PolaronOptions { n: a.n, radius: a.radius, iterations: a.iters, refine: a.refine, ..Default::default() };
    let s = solve_p5(&opts)?;
    let mut table = Table::new("polaron_profile", &["r", "f"]);
    for (r, f) in s.profile.radii().zip(&s.profile.values) {
        table.push(vec![r.into(), (*f).into()]);
    }
    let path = ctx.out_dir.join(format!("polaron_profile.{}", ctx.format.extension()));
    let mut out = Outcome::default();
    if s.profile.boundary_decay() > 1e-3 {
        out.warnings.add("boundary", 1, format!("profile at R is {:.2e} of its maximum", s.profile.boundary_decay()));
    }
    out.summary = json!({
        "p5_lower_bound": s.lower_bound,
        "refinement_delta": s.refinement_delta,
        "profile_csv_path": path.display().to_string(),
        "coulomb": s.coulomb,
        "dirichlet": s.dirichlet,
        "best_dilation": s.best_dilation,
        "gaussian_value": s.gaussian_value,
        "gaussian_width": s.gaussian_width,
        "accepted_steps": s.history.len() - 1,
    });
    out.tables.push(table);
    Ok(out)
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct ConjectureArgs {
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    #[arg(long, default_value_t = 0.2)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    /// Polaron lower bound to use instead of solving for it.
    #[arg(long)]
    pub p5: Option<f64>,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long = "R", default_value_t = 30.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
}

fn conjecture(a: &ConjectureArgs) -> CliResult<Outcome> {
    let green = catalyst_core::kernels::green_constants(&make_simple_random_walk(a.d)?)?;
    let p5 = match (a.d, a.p5) {
        (_, Some(v)) => v,
        (5, None) => solve_p5(&PolaronOptions { n: a.n, radius: a.radius, iterations: a.iters, ..Default::default() })?.lower_bound,
        _ => 0.0,
    };
    let inputs = ConjectureInputs { d: a.d, p: a.p, rho: a.rho, gamma: a.gamma, green, p5_lower_bound: p5 };
    let terms = conjecture_rhs(&inputs)?;
    let mut out = Outcome::default();
    out.summary = json!({
        "d": a.d, "p": a.p, "rho": a.rho, "gamma": a.gamma,
        "g": green.g, "g_star": green.g_star, "p5_lower_bound": p5,
        "green_term": terms.green_term, "polaron_term": terms.polaron_term, "total": terms.total,
        "polaron_is_lower_bound": terms.polaron_is_lower_bound,
    });
    Ok(out)
}

#[derive(Args, Debug, Clone, PartialEq)]
pub struct BlockArgs {
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    /// K values for the K-good deficiency.
    #[arg(long, value_delimiter = ',', default_value = "3,6")]
    pub k_good: Vec<f64>,
    /// Unit intervals followed by the K-good walker.
    #[arg(long, default_value_t = 32)]
    pub units: usize,
    /// Birth gaps of the meeting-probability fit.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub gaps: Vec<f64>,
    #[arg(long, default_value_t = 8.0)]
    pub meeting_k: f64,
    #[arg(long, default_value_t = 64.0)]
    pub meeting_horizon: f64,
    /// Number of times in each block.
    #[arg(long, value_delimiter = ',', default_value = "2,2,1")]
    pub blocks: Vec<usize>,
    /// Spacing of times inside a block.
    #[arg(long, default_value_t = 0.5)]
    pub spacing: f64,
    /// Distance between consecutive blocks.
    #[arg(long, default_value_t = 4.0)]
    pub gap: f64,
    #[arg(long, default_value_t = 4.0)]
    pub k: f64,
    #[arg(long, default_value_t = 0.25)]
    pub epsilon: f64,
    /// Hölder exponent; its conjugate is derived.
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
    /// Time the coalescing system runs past the last birth.
    #[arg(long, default_value_t = 32.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 20_000)]
    pub replicas: usize,
    #[arg(long, default_value = "srw")]
    pub kernel: String,
}

fn block_check(a: &BlockArgs, ctx: &Context) -> CliResult<Outcome> {
    if !(a.r > 1.0) {
        return Err(config_err("r must exceed 1"));
    }
    let kernel = load_kernel(&a.kernel, a.dim)?;
    let tagged = |tag: &str| ctx.rep(a.replicas).with_seed(derive_seed(ctx.master_seed, tag));
    let mut out = Outcome::default();

    let mut kg = Table::new("k_good", &["k", "units", "hits", "replicas", "p_hat", "delta", "mean_range", "passes"]);
    let mut kg_json = Vec::new();
    for &k in &a.k_good {
        let r = k_good_deficiency(&kernel, k, a.units, &tagged(&format!("k-good {k}")))?;
        kg.push(vec![
            k.into(),
            a.units.into(),
            r.deficiency.hits.into(),
            r.deficiency.trials.into(),
            r.deficiency.p_hat.into(),
            r.delta.into(),
            r.mean_range.into(),
            r.passes.into(),
        ]);
        out.predicates.push(PredicateReport {
            name: "k_good".into(),
            passed: r.passes,
            hard: false,
            statistic: r.deficiency.p_hat,
            bound: r.delta,
            sigma: r.deficiency.std_error,
            detail: format!("K={k}"),
        });
        kg_json.push(serde_json::to_value(&r).map_err(Error::from)?);
    }

    let meeting = meeting_probability(&kernel, &a.gaps, a.meeting_k, a.meeting_horizon, &tagged("meeting"))?;
    let mut mt = Table::new("meeting", &["gap", "hits", "replicas", "p_hat", "std_error"]);
    for (g, e) in meeting.gaps.iter().zip(&meeting.estimates) {
        mt.push(vec![(*g).into(), e.hits.into(), e.trials.into(), e.p_hat.into(), e.std_error.into()]);
        if e.hits == 0 {
            out.warnings.add("zero_hits", 1, format!("no meeting at gap {g}"));
        }
    }
    out.predicates.push(PredicateReport {
        name: "meeting_decay".into(),
        passed: meeting.decay_exponent >= 1.0,
        hard: false,
        statistic: meeting.decay_exponent,
        bound: 1.0,
        sigma: 0.0,
        detail: format!("K={}", a.meeting_k),
    });
    let c_epsilon = calibrate_c_epsilon(&meeting, a.epsilon);

    let cfg = BlockConfig {
        rho: a.rho,
        k: a.k,
        r: a.r,
        r_prime: a.r / (a.r - 1.0),
        epsilon: a.epsilon,
        c_epsilon,
        ..BlockConfig::evenly_spaced(a.dim, &a.blocks, a.spacing, a.gap)
    };
    let block = block_inequality_check(&kernel, &cfg, a.horizon, &tagged("blocks"))?;
    let mut bt = Table::new("blocks", &["block", "size", "moment", "std_error"]);
    for (j, (m, s)) in block.block_moments.iter().zip(&cfg.sets).enumerate() {
        bt.push(vec![j.into(), s.len().into(), m.mean.into(), m.std_error.into()]);
        out.warnings.estimate(&format!("block {j}"), m);
    }
    out.warnings.estimate("blocks joint", &block.lhs);
    out.predicates.push(PredicateReport {
        name: "block_inequality".into(),
        passed: block.passes,
        hard: false,
        statistic: block.lhs.mean,
        bound: block.rhs,
        sigma: block.lhs.std_error.hypot(block.rhs_std_error),
        detail: format!("blocks {:?}", a.blocks),
    });
    out.summary = json!({
        "k_good": kg_json,
        "meeting_decay_exponent": meeting.decay_exponent,
        "c_epsilon": c_epsilon,
        "lhs": block.lhs.mean,
        "lhs_std_error": block.lhs.std_error,
        "rhs": block.rhs,
        "rhs_std_error": block.rhs_std_error,
        "product_of_blocks": block.product_of_blocks,
        "passes": block.passes,
    });
    out.tables.extend([kg, mt, bt]);
    Ok(out)
}
