use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use seqmetro::asymptotics::{covariance_matrix, finite_n_moments, AsymptoticReport, FisherOptions};
use seqmetro::instrument::build_generators;
use seqmetro::linop::{spectral_decompose, validate_cptp, Classification, CPTP_TOL, PERIPHERAL_TOL};
use seqmetro::model::{fisher_grid, matrix_to_wire, ModelFamily, ModelSpec, Parametrization, Rule};
use seqmetro::thermometer::{log_grid, fisher_sweep_table, write_sweep_csv, SweepConfig, ThermometerParams};
use seqmetro::trajectory::{
    enumerate_exact, gaussianity_diagnostics, sample_batch, write_batch_csv, DEFAULT_ENUMERATION_CAP,
    MIN_DIAGNOSTIC_BATCH, RNG_ALGORITHM,
};
use seqmetro::{Error, Result};

#[derive(Parser)]
#[command(name = "seqmetro", version, about = "Parameter estimation from sequential quantum measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// CPTP check, spectrum, mixing class, fixed point and asymptotic moments.
    Analyze(AnalyzeArgs),
    /// Monte Carlo records (or exact enumeration with --exact).
    Simulate(SimulateArgs),
    /// Fisher information along the model's parametrization grid.
    Fisher(FisherArgs),
    /// Standard versus sequential Fisher sweep for the qubit thermometer.
    Thermometer(ThermometerArgs),
    /// Writes a thermometer model in the JSON model format.
    ExportSpec(ExportArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Largest lag in the covariance matrix.
    #[arg(long = "L", default_value_t = 2)]
    l: usize,
    /// Tolerance for the CPTP check and the unit-circle classification.
    #[arg(long)]
    tol: Option<f64>,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "N")]
    n: usize,
    #[arg(long = "L", default_value_t = 2)]
    l: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Enumerate all outcome sequences instead of sampling.
    #[arg(long)]
    exact: bool,
    /// CSV path; the JSON summary goes to `<out>.json`. Without it the CSV
    /// goes to stdout and no summary is written.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct FisherArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "L", default_value_t = 2)]
    l: usize,
    #[arg(long = "N", default_value_t = 1)]
    n: usize,
    /// Finite-difference step (thermometer rule only).
    #[arg(long)]
    step: Option<f64>,
    /// Include the covariance-derivative term.
    #[arg(long)]
    sigma_derivative: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ThermometerArgs {
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    /// Values of γβ/γ.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.2, 2.0, 5.0])]
    ratios: Vec<f64>,
    /// Explicit τγ grid; overrides the log grid.
    #[arg(long, value_delimiter = ',')]
    tau_gamma: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.01)]
    tau_min: f64,
    #[arg(long, default_value_t = 5.0)]
    tau_max: f64,
    #[arg(long, default_value_t = 50)]
    tau_points: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.3])]
    etas: Vec<f64>,
    #[arg(long = "L", default_value_t = 2)]
    l: usize,
    #[arg(long)]
    step: Option<f64>,
    /// Add the standard strategy started from the equilibrium state.
    #[arg(long)]
    equilibrium: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    gamma_beta: f64,
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    /// Initial Bloch polar angle; omitted means start from the fixed point.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 0.0, requires = "theta")]
    phi: f64,
    /// Parameter to expose as a grid (gamma, gamma_beta, omega, tau, eta).
    #[arg(long, requires = "values")]
    param: Option<String>,
    #[arg(long, value_delimiter = ',', requires = "param")]
    values: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!("--{name} must be positive, got {v}")))
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SEQMETRO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("SEQMETRO_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Writes the whole payload at once so failures leave no partial file.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn fmt_complex(z: num_complex::Complex64) -> String {
    if z.im.abs() < 1e-15 {
        format!("{:.12}", z.re)
    } else {
        format!("{:.12} {} {:.12}i", z.re, if z.im < 0.0 { '-' } else { '+' }, z.im.abs())
    }
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let tol = match a.tol {
        Some(t) => positive("tol", t)?,
        None => CPTP_TOL,
    };
    let spec_tol = a.tol.unwrap_or(PERIPHERAL_TOL);
    let spec = ModelSpec::load(&a.model)?;
    let model = spec.build_with(tol)?;
    let cptp = validate_cptp(&model.channel, tol);
    let avg = model.instrument.average();
    let spectral = spectral_decompose(avg, spec_tol)?;

    let mut text = String::new();
    writeln!(text, "model: {}", a.model.display()).ok();
    writeln!(text, "dimension: {}", model.instrument.dim()).ok();
    writeln!(text, "outcomes: {:?}", model.instrument.values()).ok();
    writeln!(
        text,
        "cptp: trace residual {:.3e}, min Choi eigenvalue {:.3e}, hermiticity {:.3e} (tol {tol:e})",
        cptp.trace_residual, cptp.min_choi_eigenvalue, cptp.hermiticity_residual
    )
    .ok();
    writeln!(text, "spectrum of the averaged channel:").ok();
    for z in &spectral.eigenvalues {
        writeln!(text, "  {}  |λ| = {:.12}", fmt_complex(*z), z.norm()).ok();
    }
    writeln!(text, "classification: {}", spectral.classification).ok();
    writeln!(text, "spectral gap: {:.12}", spectral.spectral_gap).ok();

    let mut report = json!({
        "model": a.model.display().to_string(),
        "dimension": model.instrument.dim(),
        "outcomes": model.instrument.values(),
        "cptp": cptp,
        "spectrum": spectral.eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "classification": spectral.classification,
        "spectral_gap": spectral.spectral_gap,
    });

    match spectral.classification {
        Classification::NonErgodic => {
            writeln!(
                text,
                "the averaged channel has {} eigenvalues at 1, so there is no unique fixed point; \
                 stationary moments and σ² are undefined",
                spectral.unit_multiplicity
            )
            .ok();
        }
        class => {
            let st = spectral.stationary()?;
            writeln!(text, "fixed point:").ok();
            let rho = st.rho.matrix();
            for i in 0..rho.nrows() {
                let row: Vec<String> = (0..rho.ncols()).map(|j| fmt_complex(rho[(i, j)])).collect();
                writeln!(text, "  [{}]", row.join(", ")).ok();
            }
            report["fixed_point"] = json!(matrix_to_wire(rho));
            if class == Classification::Mixing {
                let gen = build_generators(&model.instrument, a.l.max(1))?;
                let asym = covariance_matrix(&gen, a.l)?;
                writeln!(text, "<S>* = {:.12}", asym.mean).ok();
                for (k, m) in asym.lag_means.iter().enumerate() {
                    writeln!(text, "<C{}>* = {:.12}", k + 1, m).ok();
                }
                writeln!(text, "sigma^2 = {:.12}", asym.sigma2).ok();
                writeln!(text, "Sigma (S, C1..C{}):", a.l).ok();
                for i in 0..asym.sigma.nrows() {
                    let row: Vec<String> = asym.sigma.row(i).iter().map(|x| format!("{x:.10e}")).collect();
                    writeln!(text, "  [{}]", row.join(", ")).ok();
                }
                report["asymptotic"] = serde_json::to_value(&asym)?;
            } else {
                let gen = build_generators(&model.instrument, 1)?;
                writeln!(text, "<S>* = {:.12}", gen.mean()).ok();
                writeln!(
                    text,
                    "the channel is ergodic but not mixing: peripheral eigenvalues other than 1 \
                     make σ² undefined"
                )
                .ok();
                report["mean"] = json!(gen.mean());
            }
        }
    }
    if let Some(p) = &a.out {
        emit(Some(p), &json_bytes(&report)?)?;
    }
    emit(None, text.as_bytes())
}

#[derive(Serialize)]
struct ExactSummary {
    n: usize,
    l: usize,
    values: Vec<f64>,
    sequences: usize,
    total_probability: f64,
    min_probability: f64,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    s_central_moments: [f64; 5],
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::InvalidArgument("--N must be positive".into()));
    }
    if a.batch == 0 {
        return Err(Error::InvalidArgument("--batch must be positive".into()));
    }
    let tol = match a.tol {
        Some(t) => positive("tol", t)?,
        None => CPTP_TOL,
    };
    let spec = ModelSpec::load(&a.model)?;
    let model = spec.build_with(tol)?;
    let spectral = model.instrument.spectral();
    if spectral.classification == Classification::NonErgodic {
        return Err(Error::NoUniqueFixedPoint);
    }
    let rho0 = model.initial_or_stationary()?;
    let start = if model.initial_state.is_some() { "given" } else { "stationary" };
    let moments = if a.n > a.l {
        let gen = build_generators(&model.instrument, a.l.max(1))?;
        Some(finite_n_moments(&gen, &rho0, a.n, a.l)?)
    } else {
        None
    };
    let asym: Option<AsymptoticReport> = if spectral.classification == Classification::Mixing {
        let gen = build_generators(&model.instrument, a.l.max(1))?;
        Some(covariance_matrix(&gen, a.l)?)
    } else {
        None
    };

    if a.exact {
        let ex = enumerate_exact(&model.instrument, &rho0, a.n, a.l, DEFAULT_ENUMERATION_CAP)?;
        let summary = ExactSummary {
            n: ex.n,
            l: ex.l,
            values: ex.values.clone(),
            sequences: ex.probabilities.len(),
            total_probability: ex.total_probability,
            min_probability: ex.min_probability,
            mean: ex.mean.clone(),
            covariance: rows(&ex.covariance),
            s_central_moments: ex.s_central_moments,
        };
        let doc = json!({
            "mode": "exact",
            "model": a.model.display().to_string(),
            "initial_state": start,
            "enumeration": summary,
            "formulas": moments,
            "asymptotic": asym,
        });
        return emit(a.out.as_deref(), &json_bytes(&doc)?);
    }

    let batch = sample_batch(&model.instrument, &rho0, a.n, a.l, a.batch, a.seed)?;
    let mut csv = Vec::new();
    write_batch_csv(&mut csv, &batch, a.l)?;

    let Some(out) = a.out else {
        return emit(None, &csv);
    };
    let records: Vec<_> = batch.iter().map(|(_, r)| r.clone()).collect();
    let dim = a.l + 1;
    let bf = records.len() as f64;
    let mut sample_mean = vec![0.0; dim];
    for r in &records {
        for (acc, x) in sample_mean.iter_mut().zip(r.vector()) {
            *acc += x / bf;
        }
    }
    let sample_cov = (records.len() > 1).then(|| {
        let mut c = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for r in &records {
            let v = r.vector();
            for i in 0..dim {
                for j in 0..dim {
                    c[(i, j)] += (v[i] - sample_mean[i]) * (v[j] - sample_mean[j]) / (bf - 1.0);
                }
            }
        }
        rows(&c)
    });
    let diagnostics = match &asym {
        Some(rep) if records.len() >= MIN_DIAGNOSTIC_BATCH => Some(gaussianity_diagnostics(&records, rep)?),
        _ => None,
    };
    let sidecar = json!({
        "mode": "sample",
        "model": a.model.display().to_string(),
        "n": a.n,
        "l": a.l,
        "batch": a.batch,
        "seed": a.seed,
        "rng": RNG_ALGORITHM,
        "initial_state": start,
        "sample_mean": sample_mean,
        "sample_covariance": sample_cov,
        "formulas": moments,
        "asymptotic": asym,
        "diagnostics": diagnostics,
    });
    let mut side = out.clone().into_os_string();
    side.push(".json");
    emit(Some(&out), &csv)?;
    emit(Some(Path::new(&side)), &json_bytes(&sidecar)?)
}

fn fisher_cmd(a: FisherArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::InvalidArgument("--N must be positive".into()));
    }
    let step = a.step.map(|h| positive("step", h)).transpose()?;
    let family = ModelFamily::load(&a.model)?;
    let reports = fisher_grid(
        &family,
        a.l,
        a.n,
        FisherOptions {
            step,
            include_sigma_derivative: a.sigma_derivative,
        },
    )?;
    let name = &family.parametrization()?.name;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![name.clone(), "N".into(), "step".into()];
    header.extend((0..=a.l).map(|k| format!("F{k}")));
    header.extend((0..=a.l).map(|k| format!("F{k}_per_N")));
    header.push("pseudo_inverse_used".into());
    w.write_record(&header)?;
    for r in &reports {
        let mut rec = vec![format!("{}", r.g), r.n.to_string(), format!("{:e}", r.step)];
        rec.extend(r.f.iter().map(|x| format!("{x:e}")));
        rec.extend(r.per_n.iter().map(|x| format!("{x:e}")));
        rec.push(r.pseudo_inverse_used.to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    emit(a.out.as_deref(), &bytes)
}

fn thermometer_cmd(a: ThermometerArgs) -> Result<()> {
    let tau_gamma = match a.tau_gamma {
        Some(v) => v,
        None => {
            positive("tau-min", a.tau_min)?;
            positive("tau-max", a.tau_max)?;
            if a.tau_points == 0 {
                return Err(Error::InvalidArgument("--tau-points must be positive".into()));
            }
            log_grid(a.tau_min, a.tau_max, a.tau_points)
        }
    };
    let cfg = SweepConfig {
        gamma: positive("gamma", a.gamma)?,
        omega: a.omega,
        ratios: a.ratios,
        tau_gamma,
        etas: a.etas,
        l_max: a.l,
        step: a.step.map(|h| positive("step", h)).transpose()?,
        include_equilibrium: a.equilibrium,
    };
    let rows = fisher_sweep_table(&cfg)?;
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &cfg, &rows)?;
    emit(a.out.as_deref(), &buf)
}

fn export_spec(a: ExportArgs) -> Result<()> {
    let mut p = ThermometerParams::new(a.gamma, a.gamma_beta, a.omega, a.tau, a.eta)?;
    if let Some(theta) = a.theta {
        p = p.with_initial_angles(theta, a.phi)?;
    }
    let mut spec = ModelSpec::thermometer(&p)?;
    if a.theta.is_some() {
        spec.initial_state = Some(matrix_to_wire(p.initial_state()?.matrix()));
    }
    if let (Some(name), Some(values)) = (a.param, a.values) {
        spec.parametrization = Some(Parametrization {
            name,
            values,
            rule: Rule::Thermometer { base: p },
        });
        // rejects unknown names and an empty grid before anything is written
        ModelFamily {
            spec: spec.clone(),
            base_dir: PathBuf::new(),
        }
        .parametrization()?;
    }
    let mut text = spec.to_json()?;
    text.push('\n');
    emit(a.out.as_deref(), text.as_bytes())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Fisher(a) => fisher_cmd(a),
        Command::Thermometer(a) => thermometer_cmd(a),
        Command::ExportSpec(a) => export_spec(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
