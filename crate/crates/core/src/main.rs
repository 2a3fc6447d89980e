use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use ris_uplink::experiments::{
    self, complexity_estimate, convergence_from_counts, convergence_runs, csi_errors, estimate_realization,
    parse_config, realization_channels, run_method, run_sweep, ComplexityMethod, ExperimentConfig,
};
use ris_uplink::{Error, Result};

#[derive(Parser)]
#[command(name = "ris-uplink", version, about = "Uplink power minimization with a reconfigurable intelligent surface")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep one parameter over several values and channel realizations.
    Sweep(Common),
    /// Solve a single channel realization with every configured method.
    SolveOne(Common),
    /// Estimate channels from a fraction of active elements and report errors.
    EstimateCsi(Common),
    /// Tabulate analytic flop counts.
    Complexity(Common),
    /// Iteration-count distributions of the joint optimizer.
    Convergence(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, String, PathBuf)> {
        let text = match &self.config {
            Some(path) => fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => String::new(),
        };
        let mut cfg = parse_config(&text)?;
        if let Some(seed) = self.seed {
            cfg.system.rng_seed = seed;
        }
        if let Some(r) = self.realizations {
            if r == 0 {
                return Err(Error::Config("--realizations must be >= 1".into()));
            }
            cfg.realizations = r;
        }
        if let Some(j) = self.jobs {
            if j == 0 {
                return Err(Error::Config("--jobs must be >= 1".into()));
            }
            cfg.jobs = j;
        }
        let out = self.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
        cfg.out = Some(out.clone());
        Ok((cfg.clone(), cfg.to_text(), out))
    }
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.display().to_string(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })
}

fn sweep(c: &Common) -> Result<()> {
    let (cfg, text, out) = c.load()?;
    let t = Instant::now();
    let res = run_sweep(&cfg.sweep_spec())?;
    experiments::write_sweep(&out, &res.records, &res.summary)?;
    experiments::write_meta(&out, &text, cfg.system.rng_seed, t.elapsed().as_secs_f64())?;
    let failed = res.records.iter().filter(|r| r.error.is_some()).count();
    eprintln!("{} runs ({failed} failed) -> {}", res.records.len(), out.display());
    Ok(())
}

fn solve_one(c: &Common) -> Result<()> {
    let (cfg, text, out) = c.load()?;
    ensure_dir(&out)?;
    let t = Instant::now();
    let seed = cfg.system.rng_seed;
    let ch = realization_channels(&cfg.system, seed)?;
    let mut data = Vec::new();
    let mut summary = Vec::new();
    let mut trace = Vec::new();
    for &method in &cfg.methods {
        let report = run_method(method, &ch, &cfg.system, cfg.sample_fraction, seed)?;
        for (k, (p, slack)) in report.powers.as_vector().iter().zip(report.rate_slack.iter()).enumerate() {
            data.push(vec![method.to_string(), k.to_string(), format!("{p:e}"), format!("{slack:e}")]);
        }
        summary.push(vec![
            method.to_string(),
            seed.to_string(),
            format!("{:016x}", ch.fingerprint()),
            format!("{:e}", report.total_power),
            report.feasible.to_string(),
            report.outer_iterations.to_string(),
            report.max_inner_iterations().to_string(),
        ]);
        for (solve, tr) in report.inner_traces.iter().enumerate() {
            for r in &tr.records {
                trace.push(vec![
                    method.to_string(),
                    solve.to_string(),
                    r.iteration.to_string(),
                    format!("{:e}", r.value),
                    format!("{:e}", r.grad_norm),
                    format!("{:e}", r.alpha),
                    format!("{:e}", r.beta),
                    r.restarted.to_string(),
                ]);
            }
        }
    }
    write_table(&out.join("data.csv"), &["method", "device", "power_w", "rate_slack_bps_hz"], &data)?;
    write_table(
        &out.join("summary.csv"),
        &["method", "seed", "channel_hash", "total_power_w", "feasible", "outer_iters", "inner_iters"],
        &summary,
    )?;
    write_table(
        &out.join("trace.csv"),
        &["method", "solve", "iteration", "objective", "grad_norm", "alpha", "beta", "restarted"],
        &trace,
    )?;
    experiments::write_meta(&out, &text, seed, t.elapsed().as_secs_f64())?;
    for row in &summary {
        eprintln!("{}: total {} W, feasible {}", row[0], row[3], row[4]);
    }
    Ok(())
}

fn estimate_csi(c: &Common) -> Result<()> {
    let (cfg, text, out) = c.load()?;
    ensure_dir(&out)?;
    let t = Instant::now();
    let mut data = Vec::new();
    let (mut g_sum, mut u_sum, mut ok) = (0.0, 0.0, 0usize);
    for r in 0..cfg.realizations {
        let seed = cfg.system.rng_seed.wrapping_add(r as u64);
        let row = match estimate_realization(&cfg.system, cfg.sample_fraction, seed)
            .and_then(|(truth, est)| csi_errors(&truth, &est))
        {
            Ok((g, u)) => {
                g_sum += g;
                u_sum += u;
                ok += 1;
                vec![format!("{g:e}"), format!("{u:e}"), String::new()]
            }
            Err(e) => vec![String::new(), String::new(), e.to_string()],
        };
        let mut full = vec![r.to_string(), seed.to_string(), format!("{}", cfg.sample_fraction)];
        full.extend(row);
        data.push(full);
    }
    write_table(
        &out.join("data.csv"),
        &["realization", "seed", "sample_fraction", "g_rel_error", "u_rel_error", "error"],
        &data,
    )?;
    let mean = |s: f64| if ok > 0 { format!("{:e}", s / ok as f64) } else { String::new() };
    write_table(
        &out.join("summary.csv"),
        &["sample_fraction", "runs", "completed", "mean_g_rel_error", "mean_u_rel_error"],
        &[vec![
            format!("{}", cfg.sample_fraction),
            cfg.realizations.to_string(),
            ok.to_string(),
            mean(g_sum),
            mean(u_sum),
        ]],
    )?;
    experiments::write_meta(&out, &text, cfg.system.rng_seed, t.elapsed().as_secs_f64())
}

fn complexity(c: &Common) -> Result<()> {
    let (cfg, text, out) = c.load()?;
    ensure_dir(&out)?;
    let t = Instant::now();
    let (k, m) = (cfg.system.k_devices, cfg.system.m_antennas);
    let mut ns = vec![4, 16, 32, 64];
    if !ns.contains(&cfg.system.n_elements()) {
        ns.push(cfg.system.n_elements());
    }
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &n in &ns {
        let rcg = complexity_estimate(ComplexityMethod::RcgJo, k, m, n)?;
        let sdr = complexity_estimate(ComplexityMethod::Sdr, k, m, n)?;
        rows.push(("rcg_jo", k, m, n, rcg));
        rows.push(("sdr", k, m, n, sdr));
        ratios.push(vec![n.to_string(), format!("{rcg:e}"), format!("{sdr:e}"), format!("{:e}", sdr / rcg)]);
    }
    experiments::write_complexity(&out.join("data.csv"), &rows)?;
    write_table(&out.join("summary.csv"), &["n", "rcg_jo_flops", "sdr_flops", "sdr_over_rcg_jo"], &ratios)?;
    experiments::write_meta(&out, &text, cfg.system.rng_seed, t.elapsed().as_secs_f64())
}

fn convergence(c: &Common) -> Result<()> {
    let (cfg, text, out) = c.load()?;
    ensure_dir(&out)?;
    let t = Instant::now();
    let counts = convergence_runs(&cfg.system, cfg.realizations, cfg.jobs)?;
    let rows: Vec<Vec<String>> = counts
        .iter()
        .enumerate()
        .map(|(r, (o, i))| {
            let seed = cfg.system.rng_seed.wrapping_add(r as u64);
            vec![r.to_string(), seed.to_string(), o.to_string(), i.to_string()]
        })
        .collect();
    write_table(&out.join("data.csv"), &["realization", "seed", "outer_iters", "inner_iters"], &rows)?;
    experiments::write_convergence(&out.join("summary.csv"), &convergence_from_counts(&counts)?)?;
    experiments::write_meta(&out, &text, cfg.system.rng_seed, t.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Sweep(c) => sweep(c),
        Command::SolveOne(c) => solve_one(c),
        Command::EstimateCsi(c) => estimate_csi(c),
        Command::Complexity(c) => complexity(c),
        Command::Convergence(c) => convergence(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
