use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use freetree::bench::{
    evaluate, read_sweep_csv, summarize, summary_svg, sweep, write_summary_csv, write_sweep_csv, SweepOptions,
};
use freetree::corr_net::build_network;
use freetree::error::Result;
use freetree::panel_data::{FeatureRoles, PanelDataset};
use freetree::pipeline::{run_freetree, FreetreeFit, FreetreeOptions};
use freetree::simulate::{gen_panel, Design, SimConfig, SimTruth};

#[derive(Parser)]
#[command(name = "freetree", version, about = "Feature selection and prediction for longitudinal panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated panel plus truth and roles sidecars.
    Simulate {
        #[arg(long, value_enum)]
        design: Design,
        /// Number of subjects.
        #[arg(long)]
        n: usize,
        /// Time points per subject.
        #[arg(long, default_value_t = 6)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        rho: f64,
        #[arg(long, default_value_t = 3.0)]
        sigma2_b: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2_eps: f64,
        /// Draw features once per subject.
        #[arg(long)]
        freeze_features: bool,
        /// Number subjects from `id_offset + 1`.
        #[arg(long, default_value_t = 0)]
        id_offset: usize,
        /// Output path; `.csv`, `.truth.json` and `.roles` files are written
        /// next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the selection pipeline and fit the final tree.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        roles: PathBuf,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        fuzzy: bool,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 10)]
        min_node_factor: usize,
        #[arg(long)]
        min_node_size: Option<usize>,
        #[arg(long, default_value_t = 50)]
        max_em_iter: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the similarity, adjacency, overlap and merge tables here.
        #[arg(long)]
        dump_network: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fit on held-out subjects.
    Evaluate {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample-size sweep over simulated data with validation tuning.
    Sweep {
        #[arg(long, value_enum)]
        design: Design,
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 100)]
        n_validation: usize,
        #[arg(long, default_value_t = 100)]
        n_test: usize,
        #[arg(long, default_value_t = 6)]
        t: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        min_node_factors: Vec<usize>,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        fuzzy: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a sweep table as CSV or an SVG chart.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            design,
            n,
            t,
            seed,
            rho,
            sigma2_b,
            sigma2_eps,
            freeze_features,
            id_offset,
            out,
        } => {
            let mut cfg = SimConfig::new(design, n, seed);
            cfg.n_timepoints = t;
            cfg.within_corr = rho;
            cfg.sigma2_b = sigma2_b;
            cfg.sigma2_eps = sigma2_eps;
            cfg.freeze_features = freeze_features;
            cfg.id_offset = id_offset;
            let (ds, truth) = gen_panel(&cfg)?;
            let base = if out.extension().is_some_and(|e| e == "csv") {
                out.with_extension("")
            } else {
                out
            };
            ds.save_csv(&with_suffix(&base, ".csv"))?;
            truth.save(&with_suffix(&base, ".truth.json"))?;
            std::fs::write(with_suffix(&base, ".roles"), ds.roles().to_config_string())?;
            log::info!("wrote {} rows for {} subjects", ds.n_rows(), ds.n_clusters());
        }
        Command::Fit {
            data,
            roles,
            fuzzy,
            alpha,
            min_node_factor,
            min_node_size,
            max_em_iter,
            seed,
            dump_network,
            out,
        } => {
            let roles = FeatureRoles::read_config(&roles)?;
            let ds = PanelDataset::load_csv(&data, &roles)?;
            let mut opts = FreetreeOptions {
                fuzzy,
                ..FreetreeOptions::default()
            };
            opts.mob.alpha = alpha;
            opts.mob.min_node_factor = min_node_factor;
            opts.mob.min_node_size = min_node_size;
            opts.mob.max_em_iter = max_em_iter;
            opts.mob.seed = seed;
            if let Some(dir) = dump_network {
                let net = build_network(&ds, &roles.var_select, &opts.network)?;
                net.dump(&dir)?;
            }
            let fit = run_freetree(&ds, &roles, &opts)?;
            for (stage, secs) in &fit.timing {
                log::info!("{stage}: {secs:.3}s");
            }
            for d in &fit.report.diagnostics {
                log::warn!("{d}");
            }
            fit.save(&out)?;
            println!("selected: {}", fit.report.selected.join(","));
            print!("{}", fit.final_tree.to_text());
        }
        Command::Evaluate { fit, test, truth, out } => {
            let fit = FreetreeFit::load(&fit)?;
            let test = PanelDataset::load_csv(&test, &fit.roles)?;
            let truth = truth.map(|p| SimTruth::load(&p)).transpose()?;
            let report = evaluate(&fit, &test, truth.as_ref())?;
            for (stage, secs) in &report.timing {
                log::info!("{stage}: {secs:.3}s");
            }
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
        }
        Command::Sweep {
            design,
            n_list,
            seeds,
            workers,
            n_validation,
            n_test,
            t,
            alphas,
            min_node_factors,
            fuzzy,
            out,
        } => {
            let mut opts = SweepOptions::new(design, n_list, seeds);
            opts.workers = workers;
            opts.n_validation = n_validation;
            opts.n_test = n_test;
            opts.n_timepoints = t;
            opts.alphas = alphas;
            opts.min_node_factors = min_node_factors;
            opts.base.fuzzy = fuzzy;
            let rows = sweep(&opts)?;
            write_sweep_csv(&rows, BufWriter::new(File::create(&out)?))?;
        }
        Command::Report { input, format, out } => {
            let rows = read_sweep_csv(File::open(&input)?)?;
            let summary = summarize(&rows);
            let mut w = output(out.as_deref())?;
            match format {
                ReportFormat::Csv => write_summary_csv(&summary, &mut w)?,
                ReportFormat::Svg => w.write_all(summary_svg(&summary).as_bytes())?,
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
