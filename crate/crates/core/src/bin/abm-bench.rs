//! Benchmark driver.
//!
//! Exit codes: 0 when every repetition succeeded, 1 when any run failed,
//! 2 for invalid configuration or I/O errors.

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use abm_core::bench::{self, BenchConfig, BenchRow};
use abm_core::exec::THREADS_ENV_VAR;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "abm-bench", about = "Run and benchmark agent-based models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration and write a JSON report.
    Run(Flags),
    /// Run the cross product of the sweep axes and write CSV rows.
    Bench(Flags),
    /// Sorting frequency sweep on the clustering model.
    SweepSorting(Flags),
    /// Uniform grid versus kd-tree.
    SweepEnv(Flags),
    /// Pool allocator versus the system allocator.
    SweepAlloc(Flags),
    /// Wall time and memory against agent count, one process per size.
    Complexity(Flags),
}

#[derive(Args, Clone, Default)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated list for sweeps.
    #[arg(long)]
    agents: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    domains: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    allocator: Option<String>,
    #[arg(long)]
    sorting_frequency: Option<String>,
    #[arg(long)]
    static_detection: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut push = |k: &'static str, x: &Option<String>| {
            if let Some(x) = x {
                v.push((k, x.clone()));
            }
        };
        push("model", &self.model);
        push("agents", &self.agents);
        push("iterations", &self.iterations);
        push("threads", &self.threads);
        push("domains", &self.domains);
        push("env", &self.env);
        push("allocator", &self.allocator);
        push("sorting_frequency", &self.sorting_frequency);
        push("static_detection", &self.static_detection);
        push("seed", &self.seed);
        push("reps", &self.reps);
        v
    }
}

/// Defaults, then the file, then the thread env var, then flags.
fn load_config(flags: &Flags, preset: &str) -> Result<BenchConfig, String> {
    let mut cfg = BenchConfig::default();
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.apply_text(&text)
            .map_err(|e| format!("{}:{}", path.display(), e))?;
    }
    if let Ok(t) = std::env::var(THREADS_ENV_VAR) {
        cfg.set("threads", &t)
            .map_err(|e| format!("{THREADS_ENV_VAR}: {e}"))?;
    }
    for (k, v) in flags.pairs() {
        cfg.set(k, &v)
            .map_err(|e| format!("--{}: {e}", k.replace('_', "-")))?;
    }
    if let Some(out) = &flags.out {
        cfg.out = Some(out.clone());
    }
    let explicit = cfg.explicit.clone();
    bench::preset(preset, &mut cfg, &explicit);
    cfg.validate()?;
    Ok(cfg)
}

fn open_out(path: Option<&Path>) -> io::Result<(Box<dyn Write>, bool)> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            let fresh = std::fs::metadata(p).map(|m| m.len() == 0).unwrap_or(true);
            let f = OpenOptions::new().create(true).append(true).open(p)?;
            Ok((Box::new(f), fresh))
        }
        _ => Ok((Box::new(io::stdout()), true)),
    }
}

#[derive(Serialize)]
struct RunOutput<'a> {
    cell: &'a bench::BenchCell,
    report: &'a abm_core::report::SimulationReport,
}

fn cmd_run(cfg: &BenchConfig) -> Result<bool, String> {
    let cells = cfg.cells();
    if cells.len() != 1 {
        return Err(format!("run takes a single configuration, got {} (use bench for sweeps)", cells.len()));
    }
    let cell = &cells[0];
    match bench::run_cell(cell) {
        Ok(report) => {
            let (mut w, _) = open_out(cfg.out.as_deref()).map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&RunOutput { cell, report: &report })
                .map_err(|e| e.to_string())?;
            writeln!(w, "{json}").map_err(|e| e.to_string())?;
            Ok(true)
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            Ok(false)
        }
    }
}

fn cmd_bench(cfg: &BenchConfig) -> Result<bool, String> {
    let (out, fresh) = open_out(cfg.out.as_deref()).map_err(|e| e.to_string())?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(out);
    let mut ok = true;
    let mut io_err = None;
    bench::run_bench(cfg, |(cell, rep, result)| match result {
        Ok(report) => {
            let row = BenchRow::new(&cell, &report, rep);
            if let Err(e) = w.serialize(&row).and_then(|_| w.flush().map_err(Into::into)) {
                io_err.get_or_insert(e.to_string());
            }
        }
        Err(e) => {
            ok = false;
            eprintln!(
                "{} agents={} threads={:?} rep={rep}: {e}",
                cell.model.name(),
                cell.agents,
                cell.params.threads
            );
        }
    });
    match io_err {
        Some(e) => Err(e),
        None => Ok(ok),
    }
}

/// Runs every agent count in its own process so peak RSS is per size.
fn cmd_complexity(flags: &Flags, cfg: &BenchConfig) -> Result<bool, String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let mut rows: Vec<BenchRow> = Vec::new();
    let mut ok = true;
    for &n in &cfg.agents {
        let mut cmd = Command::new(&exe);
        cmd.arg("bench").arg("--out").arg("-");
        if let Some(c) = &flags.config {
            cmd.arg("--config").arg(c);
        }
        for (k, v) in flags.pairs() {
            if k != "agents" {
                cmd.arg(format!("--{}", k.replace('_', "-"))).arg(v);
            }
        }
        if flags.model.is_none() {
            cmd.arg("--model").arg(cfg.model.name());
        }
        cmd.arg("--agents").arg(n.to_string());
        let out = cmd.output().map_err(|e| e.to_string())?;
        io::stderr().write_all(&out.stderr).ok();
        if !out.status.success() {
            ok = false;
        }
        rows.extend(bench::read_csv(&out.stdout[..]).map_err(|e| e.to_string())?);
    }
    let (out, fresh) = open_out(cfg.out.as_deref()).map_err(|e| e.to_string())?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(out);
    for r in &rows {
        w.serialize(r).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())?;

    let above: Vec<&BenchRow> = rows.iter().filter(|r| r.agents >= 10_000).collect();
    let time: Vec<(f64, f64)> = above.iter().map(|r| (r.agents as f64, r.wall_ms_total)).collect();
    let mem: Vec<(f64, f64)> = above.iter().map(|r| (r.agents as f64, r.peak_rss_bytes as f64)).collect();
    let fmt = |s: Option<f64>| s.map_or("n/a".to_string(), |s| format!("{s:.3}"));
    eprintln!(
        "log-log slope above 1e4: time {} memory {}",
        fmt(bench::loglog_slope(&time)),
        fmt(bench::loglog_slope(&mem))
    );
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, flags) = match &cli.command {
        Cmd::Run(f) => ("run", f),
        Cmd::Bench(f) => ("bench", f),
        Cmd::SweepSorting(f) => ("sweep-sorting", f),
        Cmd::SweepEnv(f) => ("sweep-env", f),
        Cmd::SweepAlloc(f) => ("sweep-alloc", f),
        Cmd::Complexity(f) => ("complexity", f),
    };
    let cfg = match load_config(flags, name) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match name {
        "run" => cmd_run(&cfg),
        "complexity" => cmd_complexity(flags, &cfg),
        _ => cmd_bench(&cfg),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
