use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use redfa::io::bands::{default_bands, parse_bands};
use redfa::io::config::config_hash;
use redfa::io::tables::Provenance;
use redfa::io::RunConfig;
use redfa::pipeline::{
    analyze, compare_groups, parse_range, regress_traits, render_regression, simulate, write_comparison,
};
use redfa::select::MomentScale;
use redfa::synth::StudyConfig;
use redfa::{Error, Result};

#[derive(Parser)]
#[command(name = "redfa", version, about = "Bayesian factor analysis with clustered loadings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select (K, G), fit and summarize every group of a spectra file.
    Fit(FitArgs),
    /// Run the synthetic replication study.
    Simulate(SimulateArgs),
    /// Compare the partitions and correlation estimates of two fits.
    Compare(CompareArgs),
    /// Regress responses on the variables of each cluster.
    Regress(RegressArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Log,
    Likelihood,
}

#[derive(Args)]
struct FitArgs {
    /// TOML run configuration; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Spectra CSV: one row per sample, numeric headers are wavenumbers.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Column whose values split the samples into separately analysed groups.
    #[arg(long)]
    group_by: Option<String>,
    /// Band file (`lo,hi` per line), `defaults` or `none`.
    #[arg(long)]
    exclude_bands: Option<String>,
    /// Rename a group value before splitting, as `FROM=TO`. Repeatable.
    #[arg(long = "label-map", value_name = "FROM=TO")]
    label_map: Vec<String>,
    /// Input rows are wavenumbers and columns are samples.
    #[arg(long)]
    transpose: bool,
    /// Largest number of factors tried during initialization [default: 10].
    #[arg(long)]
    kmax: Option<usize>,
    /// Largest number of clusters tried during initialization [default: min(p, 30)].
    #[arg(long)]
    gmax: Option<usize>,
    /// Sweeps per chain, including burn-in.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Base seed; each (K, G) chain derives its own seed from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of search rings.
    #[arg(long)]
    budget: Option<usize>,
    /// Also try (K±1, G) and (K, G±1) during the search.
    #[arg(long)]
    axis_neighbors: bool,
    /// Scale of the draw moments used by BICM and AICM.
    #[arg(long, value_enum)]
    moment_scale: Option<Scale>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML study file with `[design]` and `[sampler]` tables.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// 1-based inclusive variable range, `lo:hi`.
    #[arg(long)]
    range: Option<String>,
    /// Directory for `comparison.json` and `confusion.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RegressArgs {
    /// A fit output directory or one of its group directories.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    responses: PathBuf,
    /// Output CSV; defaults to `regression.csv` inside the fit directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// `println!` that tolerates a closed stdout (e.g. piping into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn run_config(args: FitArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let mut cfg = RunConfig::from_toml_str(&fs::read_to_string(path)?)?;
            // relative inputs in a config file are relative to that file
            if cfg.input.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.input = dir.join(&cfg.input);
                }
            }
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(v) = args.input {
        cfg.input = v;
    }
    if let Some(v) = args.group_by {
        cfg.group_by = Some(v);
    }
    match args.exclude_bands.as_deref() {
        None => {}
        Some("defaults") => cfg.bands = default_bands(),
        Some("none") => cfg.bands = Vec::new(),
        Some(path) => cfg.bands = parse_bands(&fs::read_to_string(path)?)?,
    }
    if !args.label_map.is_empty() {
        let mut map = BTreeMap::new();
        for pair in &args.label_map {
            let (from, to) = pair
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("label map `{pair}` must look like FROM=TO")))?;
            map.insert(from.to_string(), to.to_string());
        }
        cfg.label_map = map;
    }
    cfg.transpose |= args.transpose;
    if let Some(v) = args.kmax {
        cfg.k_max = v;
    }
    if let Some(v) = args.gmax {
        cfg.g_max = Some(v);
    }
    if let Some(v) = args.iters {
        cfg.sampler.n_iter = v;
    }
    if let Some(v) = args.burn_in {
        cfg.sampler.burn_in = v;
    }
    if let Some(v) = args.thin {
        cfg.sampler.thin = v;
    }
    if let Some(v) = args.seed {
        cfg.sampler.seed = v;
    }
    if let Some(v) = args.budget {
        cfg.search.budget = v;
    }
    cfg.search.axis_neighbors |= args.axis_neighbors;
    if let Some(s) = args.moment_scale {
        cfg.moment_scale = match s {
            Scale::Log => MomentScale::Log,
            Scale::Likelihood => MomentScale::Likelihood,
        };
    }
    if let Some(v) = args.out {
        cfg.out = v;
    }
    cfg.validate()?;
    // `regress` re-reads the input recorded in the summary from any directory
    cfg.input = std::path::absolute(&cfg.input)?;
    Ok(cfg)
}

fn fit(args: FitArgs) -> Result<u8> {
    let cfg = run_config(args)?;
    let report = analyze(&cfg)?;
    for o in &report.outcomes {
        let name = o.group.as_deref().unwrap_or("all");
        match &o.result {
            Ok(s) => say!(
                "{name}: n={} p={} init=(K={}, G={}) selected=(K={}, G={}) occupied={} rv_vs_sample={:.4} -> {}",
                s.n,
                s.p,
                s.k_init,
                s.g_init,
                s.k,
                s.g,
                s.occupied_clusters,
                s.rv_vs_sample,
                o.dir.display()
            ),
            Err(e) => eprintln!("{name}: failed: {e}"),
        }
    }
    // Every group is attempted; the first failure decides the exit code.
    Ok(report.first_error().map_or(0, |e| e.exit_code() as u8))
}

fn simulate_cmd(args: SimulateArgs) -> Result<()> {
    let mut cfg = match &args.design {
        Some(path) => StudyConfig::from_toml_str(&fs::read_to_string(path)?)?,
        None => StudyConfig::default(),
    };
    if let Some(v) = args.replicates {
        cfg.design.replicates = v;
    }
    if let Some(v) = args.seed {
        cfg.design.seed = v;
    }
    let report = simulate(&cfg, &args.out)?;
    for c in &report.cells {
        say!(
            "K={} G={} ari={:.3} mse={:.4} rv={:.4} n={}",
            c.k,
            c.g,
            c.ari.mean,
            c.mse.mean,
            c.rv.mean,
            c.ari.count
        );
    }
    for (&(k, g), &count) in &report.selections {
        say!("selected K={k} G={g}: {count}");
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let range = args.range.as_deref().map(parse_range).transpose()?;
    let report = compare_groups(&args.a, &args.b, range)?;
    if let Some(out) = &args.out {
        let prov = Provenance {
            seed: 0,
            config_hash: config_hash(&(&args.a, &args.b, range)),
        };
        write_comparison(out, &report, &prov)?;
    }
    say!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn regress(args: RegressArgs) -> Result<()> {
    let rows = regress_traits(&args.fit, &args.responses)?;
    let prov = Provenance {
        seed: 0,
        config_hash: config_hash(&(&args.fit, &args.responses)),
    };
    let text = render_regression(&rows, &prov);
    let out = args.out.unwrap_or_else(|| args.fit.join("regression.csv"));
    fs::write(&out, &text)?;
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate_cmd(a).map(|()| 0),
        Command::Compare(a) => compare(a).map(|()| 0),
        Command::Regress(a) => regress(a).map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
