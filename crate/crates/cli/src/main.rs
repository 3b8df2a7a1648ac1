use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use multifluid::analysis::{self, ProbeSet, SweepConfig, Tolerances};
use multifluid::cases::{self, Case, Preset, RunConfig};

/// Two-fluid transfer schemes: parameter sweeps, property classification and rising-bubble runs.
#[derive(Parser)]
#[command(name = "multifluid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the 0-D transfer kernels and write the envelope CSV.
    Sweep(SweepArgs),
    /// Run a rising-bubble case for a set of schemes.
    Bubble(BubbleArgs),
    /// Print the empirical property table of all 20 schemes.
    Classify(ClassifyArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Samples per axis (inclusive endpoints).
    #[arg(long, default_value_t = 50)]
    points: usize,
    /// `all20`, `named`, or a comma list of numbers and labels.
    #[arg(long, default_value = "all20")]
    scheme: String,
    /// Output directory.
    #[arg(long, default_value = "output")]
    out: PathBuf,
}

#[derive(Args)]
struct BubbleArgs {
    /// Flat key=value configuration file, applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// single-fluid, full-bubble or half-bubble.
    #[arg(long)]
    case: Option<String>,
    /// `all20`, `named`, or a comma list of numbers and labels.
    #[arg(long)]
    scheme: Option<String>,
    /// desk or paper.
    #[arg(long)]
    preset: Option<String>,
    /// Shorthand for `--preset paper`.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Field dump interval in steps (0 disables).
    #[arg(long)]
    dump_every: Option<usize>,
    /// Extra `key=value` assignments, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Samples per axis of the sweep behind the classification.
    #[arg(long, default_value_t = 50)]
    points: usize,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn bubble_config(a: &BubbleArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(Case::FullBubble, Preset::Desk);
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
    }
    let mut assign = |k: &str, v: String| cfg.set(k, &v);
    if let Some(p) = &a.preset {
        assign("preset", p.clone())?;
    }
    if a.paper_scale {
        assign("paper-scale", "true".into())?;
    }
    if let Some(c) = &a.case {
        assign("case", c.clone())?;
    }
    if let Some(s) = &a.scheme {
        assign("scheme", s.clone())?;
    }
    if let Some(v) = a.dt {
        assign("dt", v.to_string())?;
    }
    if let Some(v) = a.t_end {
        assign("t-end", v.to_string())?;
    }
    if let Some(v) = &a.out {
        assign("out", v.display().to_string())?;
    }
    if let Some(v) = a.dump_every {
        assign("dump-every", v.to_string())?;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("`--set {kv}` is not KEY=VALUE"))?;
        assign(k, v.to_string())?;
    }
    if cfg.case == Case::Sweep {
        anyhow::bail!("use the `sweep` subcommand for the kernel sweep");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |d| format!("{d:+.3e}"))
}

fn bubble(a: &BubbleArgs) -> Result<ExitCode> {
    let cfg = bubble_config(a)?;
    let n = cfg.n_steps()?;
    eprintln!(
        "{}: {}x{} cells, dx={} m, dt={} s, {} steps, {} scheme(s)",
        cfg.case.name(),
        cfg.nx,
        cfg.nz,
        cfg.dx,
        cfg.dt,
        n,
        if cfg.case == Case::SingleFluid {
            0
        } else {
            cfg.schemes.len()
        }
    );
    let (report, art) = cases::run(&cfg)?;
    let report = report.expect("bubble cases produce a report");
    let mut fatal = false;
    if let Some(r) = &report.reference {
        if let Some(f) = &r.failure {
            eprintln!("single-fluid reference failed: {f}");
            fatal = true;
        }
    }
    if cfg.case != Case::SingleFluid {
        println!(
            "{:<16} {:>11} {:>11} {:>8}",
            "scheme", "dE_RSF(1)", "dE_RSF(end)", "blow-up"
        );
        for r in &report.runs {
            let end = if r.failure.is_some() {
                None
            } else {
                r.de_rsf_at(report.n_steps)
            };
            println!(
                "{:<16} {:>11} {:>11} {:>8}",
                r.id(),
                fmt_opt(r.de_rsf_at(1)),
                fmt_opt(end),
                r.blew_up()
            );
            if let Some(f) = &r.failure {
                eprintln!("  {}: {f}", r.id());
                if r.scheme.and_then(|s| s.number()).is_some() {
                    fatal = true;
                }
            }
        }
    }
    for f in &art.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(if fatal {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn sweep(a: &SweepArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::new(Case::Sweep, Preset::Desk);
    cfg.points_per_axis = a.points;
    cfg.schemes = cases::parse_schemes(&a.scheme)?;
    cfg.out = a.out.clone();
    let (_, art) = cases::run(&cfg)?;
    for f in &art.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn classify(a: &ClassifyArgs) -> Result<ExitCode> {
    let envs = analysis::run_sweep(
        &SweepConfig::with_points(a.points),
        &multifluid::SchemeConfig::all20(),
    )?;
    let rows = analysis::classify_schemes(&envs, &ProbeSet::default(), &Tolerances::default());
    let table = analysis::format_property_table(&rows);
    print!("{table}");
    if let Some(path) = &a.out {
        std::fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Bubble(a) => bubble(a),
        Command::Classify(a) => classify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn bubble_args(args: &[&str]) -> BubbleArgs {
        let mut argv = vec!["multifluid", "bubble"];
        argv.extend_from_slice(args);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Bubble(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_preset_and_set_comes_last() {
        let a = bubble_args(&[
            "--case",
            "half-bubble",
            "--paper-scale",
            "--dt",
            "1",
            "--set",
            "dt=0.5",
            "--t-end",
            "10",
        ]);
        let cfg = bubble_config(&a).unwrap();
        assert_eq!(
            (cfg.case, cfg.nx, cfg.dt, cfg.t_end),
            (Case::HalfBubble, 200, 0.5, 10.0)
        );
    }

    #[test]
    fn bad_assignments_are_reported() {
        assert!(bubble_config(&bubble_args(&["--set", "dt"])).is_err());
        assert!(bubble_config(&bubble_args(&["--set", "nope=1"])).is_err());
        assert!(bubble_config(&bubble_args(&["--case", "sweep"])).is_err());
        assert!(bubble_config(&bubble_args(&["--t-end", "13"])).is_err());
    }
}
