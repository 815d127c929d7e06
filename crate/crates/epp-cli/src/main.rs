//! `epp`: projection pursuit from the command line.
//!
//! Subcommands cover the full workflow: `run` searches for interesting
//! directions and writes a run file, `report` turns a run into plot-ready
//! CSV tables, `aggregate` combines runs into a rank-k projector, `outliers`
//! flags extreme observations, `predict` projects new observations, and
//! `simbench` reproduces the mixture simulation study at desk scale.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/compute error. All randomness
//! is controlled by `--seed`; outputs are written atomically.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

use epp_core::aggregate::{aggregate, DirectionSource, SelectMethod};
use epp_core::data::{load_csv, DataMatrix};
use epp_core::indices::{IndexConfig, IndexKind};
use epp_core::optimize::{Algorithm, OptimizerParams, StoppingRule};
use epp_core::outliers::{detect_with_data, plot_data, summarize, Location, OutlierConfig, Scale};
use epp_core::results::{density_report, histogram_report, EppRun};
use epp_core::simbench::{run_benchmark, BenchConfig, Setting};

#[derive(Parser)]
#[command(
    name = "epp",
    about = "Exploratory projection pursuit: find, summarize and combine interesting 1-D projections",
    version
)]
struct Cli {
    /// Number of worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a projection index n-simu times and write a run file.
    Run(RunArgs),
    /// Emit plot-ready CSV tables (scree, angles, density, hist, pairs) for a run.
    Report(ReportArgs),
    /// Combine runs into a rank-k averaged projector.
    Aggregate(AggregateArgs),
    /// Flag observations extreme along any direction of a run.
    Outliers(OutliersArgs),
    /// Project observations onto selected directions of a run.
    Predict(PredictArgs),
    /// Run the Gaussian-mixture benchmark against k-means/PCA baselines.
    Simbench(SimbenchArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV (first row is the header).
    #[arg(long)]
    data: PathBuf,
    /// Header name of the row-label column.
    #[arg(long)]
    labels: Option<String>,
}

impl DataArgs {
    fn load(&self) -> epp_core::Result<DataMatrix> {
        load_csv(&self.data, true, self.labels.as_deref())
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Projection index (repeatable; unique prefixes accepted).
    #[arg(long = "index", default_values_t = [String::from("KurtosisMax")])]
    indices: Vec<String>,
    /// Optimizer: GA, PSO or Tribe (unique prefixes accepted).
    #[arg(long, default_value = "Tribe")]
    alg: String,
    #[arg(long = "n-simu", default_value_t = 100)]
    n_simu: usize,
    #[arg(long, default_value_t = 100)]
    maxiter: usize,
    #[arg(long = "step-iter", default_value_t = 10)]
    step_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Whiten the data instead of only standardizing it.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    sphere: bool,
    /// PSO swarm size.
    #[arg(long, default_value_t = 50)]
    particles: usize,
    /// GA population size.
    #[arg(long, default_value_t = 50)]
    individuals: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run file to write (stem for multiple indices).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run file written by `epp run`.
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Report type.
    #[arg(long = "type", value_parser = ["scree", "angles", "density", "hist", "pairs"])]
    kind: String,
    /// Comma-separated 1-based direction numbers (default: first 10).
    #[arg(long, value_delimiter = ',')]
    which: Vec<usize>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Run files to combine.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Rank selection: cumulative, inverse or sq.inverse.
    #[arg(long, default_value = "inverse")]
    method: String,
    /// Eigenvalue mass for the cumulative rule.
    #[arg(long, default_value_t = 0.85)]
    percentage: f64,
    /// Aggregation document to write.
    #[arg(long)]
    out: PathBuf,
    /// Also export the orthonormal basis as CSV.
    #[arg(long = "basis-csv")]
    basis_csv: Option<PathBuf>,
}

#[derive(Args)]
struct OutliersArgs {
    /// Run file written by `epp run`.
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Flag threshold in units of the scale estimate.
    #[arg(long)]
    k: f64,
    #[arg(long, default_value = "mean", value_parser = ["mean", "median"])]
    location: String,
    #[arg(long, default_value = "sd", value_parser = ["sd", "mad"])]
    scale: String,
    /// Write the binary flag matrix as CSV (summary always goes to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict the long-format table to flagged observations.
    #[arg(long, default_value_t = false)]
    only_outliers: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Run file written by `epp run`.
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated 1-based direction numbers (default: first 10).
    #[arg(long, value_delimiter = ',')]
    which: Vec<usize>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimbenchArgs {
    #[arg(long, default_value = "both", value_parser = ["balanced", "unbalanced", "both"])]
    setting: String,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long = "n-simu", default_value_t = 20)]
    n_simu: usize,
    /// Comma-separated index names.
    #[arg(long, value_delimiter = ',', default_values_t = [
        String::from("Friedman"),
        String::from("KurtosisMin"),
        String::from("KurtosisMax"),
    ])]
    indices: Vec<String>,
    /// Comma-separated aggregation methods.
    #[arg(long, value_delimiter = ',', default_values_t = [
        String::from("inverse"),
        String::from("cumulative"),
    ])]
    agg: Vec<String>,
    #[arg(long, default_value_t = 0.85)]
    percentage: f64,
    #[arg(long, default_value_t = 200)]
    maxiter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprint!(": {s}");
                source = s.source();
            }
            eprintln!();
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> epp_core::Result<()> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
        Command::Aggregate(args) => cmd_aggregate(args),
        Command::Outliers(args) => cmd_outliers(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Simbench(args) => cmd_simbench(args),
    }
}

/// Write through a temp file in the destination directory so readers never
/// observe a partial file.
fn atomic_write(path: &Path, bytes: &[u8]) -> epp_core::Result<()> {
    let io_err = |source| epp_core::EppError::Io {
        path: path.to_owned(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, content: &str) -> epp_core::Result<()> {
    match out {
        Some(path) => atomic_write(path, content.as_bytes()),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn parse_which(run: &EppRun, which: &[usize]) -> Vec<usize> {
    if which.is_empty() {
        run.default_which()
    } else {
        which.to_vec()
    }
}

fn warn_fingerprint(run: &EppRun, data: &DataMatrix) {
    if !run.matches_data(data) {
        eprintln!(
            "warning: data fingerprint {:016x} differs from the table this run was fitted on ({:016x})",
            data.fingerprint(),
            run.data_fingerprint()
        );
    }
}

fn cmd_run(args: RunArgs) -> epp_core::Result<()> {
    let data = args.data.load()?;
    let algorithm = Algorithm::parse(&args.alg)?;
    let kinds: Vec<IndexKind> = args
        .indices
        .iter()
        .map(|name| IndexKind::parse(name))
        .collect::<epp_core::Result<_>>()?;
    let stop = StoppingRule {
        maxiter: args.maxiter,
        step_iter: args.step_iter,
        eps: args.eps,
    };
    let params = OptimizerParams {
        algorithm,
        individuals: args.individuals,
        particles: args.particles,
        seed: args.seed,
    };
    let cfg = IndexConfig::default();

    let mut written: Vec<(IndexKind, PathBuf)> = Vec::new();
    for &kind in &kinds {
        let run = EppRun::fit(&data, args.sphere, kind, &cfg, &params, &stop, args.n_simu)?;
        for warning in run.warnings() {
            eprintln!("warning: {warning}");
        }
        let path = if kinds.len() == 1 {
            args.out.clone()
        } else {
            path_with_tag(&args.out, kind.name())
        };
        save_run_atomically(&run, &path)?;
        print_run_summary(&run);
        written.push((kind, path));
    }
    if kinds.len() > 1 {
        let manifest = RunManifest {
            format_version: 1,
            seed: args.seed,
            data: args.data.data.display().to_string(),
            runs: written
                .iter()
                .map(|(kind, path)| ManifestEntry {
                    index: kind.name().to_string(),
                    file: path.display().to_string(),
                })
                .collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        atomic_write(&path_with_tag(&args.out, "manifest"), &bytes)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunManifest {
    format_version: u32,
    seed: u64,
    data: String,
    runs: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    index: String,
    file: String,
}

/// `runs.json` + tag `Friedman` -> `runs.Friedman.json`.
fn path_with_tag(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("runs");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("json");
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

fn save_run_atomically(run: &EppRun, path: &Path) -> epp_core::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = tempfile::Builder::new()
        .suffix(".json")
        .tempfile_in(dir.unwrap_or(Path::new(".")))
        .map_err(|source| epp_core::EppError::Io {
            path: path.to_owned(),
            source,
        })?;
    run.save(tmp.path())?;
    tmp.persist(path).map_err(|e| epp_core::EppError::Io {
        path: path.to_owned(),
        source: e.error,
    })?;
    Ok(())
}

fn print_run_summary(run: &EppRun) {
    let first: Vec<String> = run
        .records()
        .iter()
        .take(10)
        .map(|r| format!("{:.4}", r.index_value))
        .collect();
    let iterations: Vec<String> = run
        .records()
        .iter()
        .take(10)
        .map(|r| r.iterations.to_string())
        .collect();
    println!("Index name       : {}", run.index());
    println!("Index values     : {}", first.join(" "));
    println!("Algorithm used   : {}", run.algorithm());
    println!("Sphered          : {}", if run.preprocessor().sphered() { "TRUE" } else { "FALSE" });
    println!("Iterations       : {}", iterations.join(" "));
}

fn cmd_report(args: ReportArgs) -> epp_core::Result<()> {
    let run = EppRun::load(&args.run)?;
    let data = args.data.load()?;
    warn_fingerprint(&run, &data);
    let which = parse_which(&run, &args.which);
    let scores = run.predict(data.values(), &which)?;

    let mut csv = String::new();
    match args.kind.as_str() {
        "scree" => {
            csv.push_str("run,value\n");
            for (number, value) in run.scree(&which)? {
                csv.push_str(&format!("{number},{value}\n"));
            }
        }
        "angles" => {
            csv.push_str("run,angle_degrees\n");
            for (&w, angle) in which.iter().zip(run.angles_to_best(&which)?) {
                csv.push_str(&format!("{w},{angle}\n"));
            }
        }
        "density" => {
            csv.push_str("direction,x,density\n");
            for (j, &w) in which.iter().enumerate() {
                let column: Vec<f64> = scores.column(j).iter().cloned().collect();
                for (x, d) in density_report(&column, 512)? {
                    csv.push_str(&format!("{w},{x},{d}\n"));
                }
            }
        }
        "hist" => {
            csv.push_str("direction,bin_left,bin_right,count\n");
            for (j, &w) in which.iter().enumerate() {
                let column: Vec<f64> = scores.column(j).iter().cloned().collect();
                let bins = sturges(column.len());
                for (left, right, count) in histogram_report(&column, bins)? {
                    csv.push_str(&format!("{w},{left},{right},{count}\n"));
                }
            }
        }
        "pairs" => {
            csv.push_str("label");
            for &w in &which {
                csv.push_str(&format!(",dir{w}"));
            }
            csv.push('\n');
            for i in 0..data.n() {
                csv.push_str(&data.row_labels()[i]);
                for j in 0..which.len() {
                    csv.push_str(&format!(",{}", scores[(i, j)]));
                }
                csv.push('\n');
            }
        }
        other => {
            return Err(epp_core::EppError::InvalidArgument(format!(
                "unknown report type {other:?}"
            )))
        }
    }
    emit(args.out.as_deref(), &csv)
}

fn sturges(n: usize) -> usize {
    ((n as f64).log2().ceil() as usize + 1).max(1)
}

#[derive(Serialize)]
struct AggFile {
    format_version: u32,
    method: String,
    percentage: f64,
    p: usize,
    k: usize,
    eigenvalues: Vec<f64>,
    /// p x k, column-major.
    basis: Vec<f64>,
    /// p x p, column-major.
    projector: Vec<f64>,
}

fn cmd_aggregate(args: AggregateArgs) -> epp_core::Result<()> {
    let method = SelectMethod::parse(&args.method)?;
    let runs: Vec<EppRun> = args
        .runs
        .iter()
        .map(EppRun::load)
        .collect::<epp_core::Result<_>>()?;
    let sources: Vec<DirectionSource> = runs.iter().map(DirectionSource::Run).collect();
    let agg = aggregate(&sources, method, args.percentage)?;

    let file = AggFile {
        format_version: 1,
        method: method.name().to_string(),
        percentage: args.percentage,
        p: agg.projector.nrows(),
        k: agg.k,
        eigenvalues: agg.eigenvalues.as_slice().to_vec(),
        basis: agg.basis.as_slice().to_vec(),
        projector: agg.projector.as_slice().to_vec(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    atomic_write(&args.out, &bytes)?;

    if let Some(csv_path) = &args.basis_csv {
        let mut csv = String::new();
        let header: Vec<String> = (1..=agg.k).map(|j| format!("basis_{j}")).collect();
        csv.push_str(&header.join(","));
        csv.push('\n');
        for i in 0..agg.basis.nrows() {
            let row: Vec<String> = (0..agg.k).map(|j| agg.basis[(i, j)].to_string()).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        atomic_write(csv_path, csv.as_bytes())?;
    }
    println!("k = {}", agg.k);
    Ok(())
}

fn cmd_outliers(args: OutliersArgs) -> epp_core::Result<()> {
    let run = EppRun::load(&args.run)?;
    let data = args.data.load()?;
    let cfg = OutlierConfig {
        k: args.k,
        location: Location::parse(&args.location)?,
        scale: Scale::parse(&args.scale)?,
    };
    let om = detect_with_data(&run, &data, &cfg)?;
    for warning in om.warnings() {
        eprintln!("warning: {warning}");
    }
    print!("{}", summarize(&om));

    if let Some(out) = &args.out {
        let mut csv = String::from("label");
        for j in 1..=om.m() {
            csv.push_str(&format!(",dir{j}"));
        }
        csv.push('\n');
        let rows = plot_data(&om, args.only_outliers);
        for chunk in rows.chunks(om.m()) {
            csv.push_str(&chunk[0].0);
            for (_, _, flag) in chunk {
                csv.push_str(if *flag { ",1" } else { ",0" });
            }
            csv.push('\n');
        }
        atomic_write(out, csv.as_bytes())?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> epp_core::Result<()> {
    let run = EppRun::load(&args.run)?;
    let data = args.data.load()?;
    warn_fingerprint(&run, &data);
    let which = parse_which(&run, &args.which);
    let scores = run.predict(data.values(), &which)?;
    let mut csv = String::from("label");
    for &w in &which {
        csv.push_str(&format!(",dir{w}"));
    }
    csv.push('\n');
    for i in 0..data.n() {
        csv.push_str(&data.row_labels()[i]);
        for j in 0..which.len() {
            csv.push_str(&format!(",{}", scores[(i, j)]));
        }
        csv.push('\n');
    }
    emit(args.out.as_deref(), &csv)
}

fn cmd_simbench(args: SimbenchArgs) -> epp_core::Result<()> {
    let settings = match args.setting.as_str() {
        "balanced" => vec![Setting::Balanced],
        "unbalanced" => vec![Setting::Unbalanced],
        _ => vec![Setting::Balanced, Setting::Unbalanced],
    };
    let indices: Vec<IndexKind> = args
        .indices
        .iter()
        .map(|name| IndexKind::parse(name))
        .collect::<epp_core::Result<_>>()?;
    let agg_methods: Vec<SelectMethod> = args
        .agg
        .iter()
        .map(|name| SelectMethod::parse(name))
        .collect::<epp_core::Result<_>>()?;
    let config = BenchConfig {
        settings,
        reps: args.reps,
        n_simu: args.n_simu,
        indices,
        agg_methods,
        percentage: args.percentage,
        maxiter: args.maxiter,
        seed: args.seed,
    };
    let rows = run_benchmark(&config)?;
    let mut csv = String::from("setting,rep,method,agg,k_chosen,ari,seconds\n");
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.setting,
            row.rep,
            row.method,
            row.agg,
            row.k_chosen.map_or(String::new(), |k| k.to_string()),
            row.ari,
            row.seconds
        ));
    }
    emit(args.out.as_deref(), &csv)
}

// silences an unused-import lint when DVector is only used in tests
#[allow(unused)]
fn _assert_types(v: DVector<f64>) -> usize {
    v.len()
}
