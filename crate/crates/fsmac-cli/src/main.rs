//! `fsmac` — capacity regions and power control for finite-state Markov
//! multiple-access channels with delayed transmitter CSI.
//!
//! Subcommands: `validate`, `sweep-delay`, `region`, `power-policy`,
//! `simulate`, `multiletter-check`. All take `--model model.json`; outputs
//! are CSV files under `--out` (plus SVG plots with `--svg`).
//!
//! Exit codes: 0 ok, 1 I/O, 2 parse error, 3 invalid model/arguments,
//! 4 solver non-convergence, 5 enumeration budget exceeded.

mod model;
mod output;

use clap::{Parser, Subcommand, ValueEnum};
use fsmac::gaussian::{
    delay_sweep, gaussian_rate_triple, kkt_residual, optimize_direction, optimize_sum_rate,
    DelayCase, GaussianError, PowerPolicy, PowerSolveOptions, SweepCase,
};
use fsmac::inforate::{assemble_joint, InputPolicy};
use fsmac::markov::Delay;
use fsmac::multiletter::{embed_policy, rn_point};
use fsmac::region::{
    frontier_sweep, upper_concave_envelope, FrontierPoint, RegionError, SolveOptions,
};
use fsmac::simulate::{empirical_rate_estimate, occupancy_trial};
use model::{load_model, load_policy, ChannelKind, Model, ModelError};
use output::{fmt, svg_line_plot, Csv, Series};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "fsmac", version, about = "Finite-state MAC capacity regions with delayed CSI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Asymmetric,
    Symmetric,
    OneEncoder,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model file: chain ergodicity, channel normalization, delays.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Optimized sum rate per delay value (Gaussian channels).
    SweepDelay {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum)]
        case: CaseArg,
        /// Delay values: "0..20", "0,1,2,5" or a single value.
        #[arg(long)]
        d: String,
        /// Fixed d2 for the asymmetric case (default 0).
        #[arg(long)]
        d2: Option<u32>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        svg: bool,
    },
    /// Rate-region frontier via the weighted problem max αR1 + R2.
    Region {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Weight grid "start:stop:step" (inclusive), e.g. "0:4:0.25".
        #[arg(long, default_value = "0:4:0.25")]
        alpha_grid: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        svg: bool,
    },
    /// Optimal power policy and KKT report at the model's delays (Gaussian).
    PowerPolicy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Occupancy trials and plug-in empirical rates (discrete channels).
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Optional policy JSON (default: uniform product policy).
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Multi-letter (directed-information) cross-check of the single-letter
    /// rates for an embedded policy (discrete channels).
    MultiletterCheck {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        n_max: usize,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Gaussian(#[from] GaussianError),
    #[error("{0}")]
    Region(#[from] RegionError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Io(_) => 1,
            AppError::Model(ModelError::Io { .. }) => 1,
            AppError::Model(ModelError::Parse { .. }) => 2,
            AppError::Model(ModelError::Invalid(_)) => 3,
            AppError::Usage(_) | AppError::Domain(_) => 3,
            AppError::Gaussian(GaussianError::NonConvergence { .. }) => 4,
            AppError::Region(RegionError::NonConvergence { .. }) => 4,
            AppError::Region(RegionError::BudgetExceeded { .. }) => 5,
            AppError::Gaussian(_) | AppError::Region(_) => 3,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Validate { model } => validate(&model),
        Command::SweepDelay {
            model,
            out,
            case,
            d,
            d2,
            tolerance,
            svg,
        } => sweep_delay(&model, &out, case, &d, d2, tolerance, svg),
        Command::Region {
            model,
            out,
            alpha_grid,
            seed,
            tolerance,
            svg,
        } => region(&model, &out, &alpha_grid, seed, tolerance, svg),
        Command::PowerPolicy {
            model,
            out,
            tolerance,
        } => power_policy(&model, &out, tolerance),
        Command::Simulate {
            model,
            out,
            n,
            trials,
            epsilon,
            seed,
            policy,
        } => simulate(&model, &out, n, trials, epsilon, seed, policy.as_deref()),
        Command::MultiletterCheck {
            model,
            out,
            n_max,
            policy,
            svg,
        } => multiletter_check(&model, &out, n_max, policy.as_deref(), svg),
    }
}

fn validate(path: &Path) -> Result<(), AppError> {
    let m = load_model(path)?;
    println!("chain: {} states {:?}", m.chain.k(), m.chain.states());
    let pi: Vec<String> = m.chain.stationary().iter().map(|&v| format!("{v:.6}")).collect();
    println!("stationary: ({})", pi.join(", "));
    match &m.channel {
        ChannelKind::Discrete(ch) => println!(
            "channel: discrete, |X1|={} |X2|={} |Y|={}",
            ch.nx1(),
            ch.nx2(),
            ch.ny()
        ),
        ChannelKind::Gaussian(ch) => {
            let sig: Vec<String> = (0..ch.k()).map(|s| format!("{}", ch.sigma2(s))).collect();
            println!(
                "channel: gaussian, sigma2=({}) budgets=({}, {})",
                sig.join(", "),
                ch.budget1(),
                ch.budget2()
            );
        }
    }
    match m.delays {
        Some(d) => println!("delays: d1={:?}, d2={}", d.d1(), d.d2()),
        None => println!("delays: not set"),
    }
    println!("ok");
    Ok(())
}

fn power_opts(model: &Model, tolerance: Option<f64>) -> PowerSolveOptions {
    let mut opts = PowerSolveOptions::default();
    if let Some(t) = tolerance.or(model.solver.tolerance) {
        opts.kkt_tol = t;
    }
    opts
}

fn parse_d_list(text: &str) -> Result<Vec<u32>, AppError> {
    let bad = |what: &str| AppError::Usage(format!("cannot parse --d {text:?}: {what}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| bad("range start"))?;
        let b: u32 = b.trim().parse().map_err(|_| bad("range end"))?;
        if b < a {
            return Err(bad("range end below start"));
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|tok| tok.trim().parse().map_err(|_| bad("list entry")))
        .collect()
}

fn parse_alpha_grid(text: &str) -> Result<Vec<f64>, AppError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || AppError::Usage(format!("--alpha-grid must be start:stop:step, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].parse().map_err(|_| bad())?;
    let step: f64 = parts[2].parse().map_err(|_| bad())?;
    if !(step > 0.0 && stop >= start && start >= 0.0) {
        return Err(bad());
    }
    let mut grid = Vec::new();
    let mut a = start;
    while a <= stop + 1e-12 {
        grid.push(a);
        a += step;
    }
    Ok(grid)
}

fn power_columns(k: usize, labels: &[String]) -> Vec<String> {
    let mut cols = Vec::new();
    for a in 0..k {
        cols.push(format!("p1_{}", labels[a]));
    }
    for a in 0..k {
        for b in 0..k {
            cols.push(format!("p2_{}{}", labels[a], labels[b]));
        }
    }
    cols
}

fn power_fields(policy: &PowerPolicy, k: usize) -> Vec<String> {
    let mut fields = Vec::new();
    for a in 0..k {
        fields.push(fmt(policy.power1(a)));
    }
    for a in 0..k {
        for b in 0..k {
            fields.push(fmt(policy.power2(a, b, k)));
        }
    }
    fields
}

fn sweep_delay(
    model_path: &Path,
    out: &Path,
    case: CaseArg,
    d_text: &str,
    d2: Option<u32>,
    tolerance: Option<f64>,
    svg: bool,
) -> Result<(), AppError> {
    let m = load_model(model_path)?;
    let ch = match &m.channel {
        ChannelKind::Gaussian(ch) => ch,
        ChannelKind::Discrete(_) => {
            return Err(AppError::Domain(
                "sweep-delay needs a gaussian channel".into(),
            ))
        }
    };
    let ds = parse_d_list(d_text)?;
    let sweep_case = match case {
        CaseArg::Asymmetric => SweepCase::Asymmetric {
            d2: d2.unwrap_or(0),
        },
        CaseArg::Symmetric => SweepCase::Symmetric,
        CaseArg::OneEncoder => SweepCase::OneEncoder,
    };
    let opts = power_opts(&m, tolerance);
    let rows = delay_sweep(&m.chain, ch, sweep_case, &ds, opts)?;

    let k = m.chain.k();
    let labels = m.chain.states().to_vec();
    let mut header = vec!["d".to_string(), "rate_bits".to_string()];
    header.extend(power_columns(k, &labels));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new("delay-sweep", &header_refs);
    for row in &rows {
        let mut fields = vec![row.d.to_string(), fmt(row.sum_rate_bits)];
        fields.extend(power_fields(&row.policy, k));
        csv.row(&fields);
    }
    std::fs::create_dir_all(out)?;
    let csv_path = out.join("delay_sweep.csv");
    csv.write(&csv_path)?;
    println!("wrote {}", csv_path.display());
    if svg {
        let series = vec![Series {
            name: "sum rate".into(),
            points: rows.iter().map(|r| (r.d as f64, r.sum_rate_bits)).collect(),
        }];
        let svg_path = out.join("delay_sweep.svg");
        svg_line_plot(
            &svg_path,
            "Optimized sum rate vs delay",
            "delay d (symbols)",
            "sum rate (bits/symbol)",
            &series,
        )?;
        println!("wrote {}", svg_path.display());
    }
    Ok(())
}

fn region(
    model_path: &Path,
    out: &Path,
    alpha_grid: &str,
    seed: Option<u64>,
    tolerance: Option<f64>,
    svg: bool,
) -> Result<(), AppError> {
    let m = load_model(model_path)?;
    let delays = m
        .delays
        .ok_or_else(|| AppError::Domain("region needs a delays block in the model".into()))?;
    let alphas = parse_alpha_grid(alpha_grid)?;

    let frontier = match &m.channel {
        ChannelKind::Discrete(ch) => {
            let mut opts = SolveOptions::default();
            if let Some(ms) = m.solver.multistarts {
                opts.multistarts = ms;
            }
            if let Some(s) = seed.or(m.solver.seed) {
                opts.seed = s;
            }
            if let Some(t) = tolerance.or(m.solver.tolerance) {
                opts.stall_tol = t;
            }
            frontier_sweep(&m.chain, delays, ch, &alphas, &opts)?.frontier
        }
        ChannelKind::Gaussian(ch) => {
            let opts = power_opts(&m, tolerance);
            let mut directions = vec![(1.0, 0.0), (0.0, 1.0)];
            for &a in &alphas {
                directions.push((a, 1.0));
                directions.push((1.0, a));
            }
            directions.retain(|&(a, b)| a + b > 0.0);
            let mut points = Vec::new();
            for (w1, w2) in directions {
                let (point, policy, corner) =
                    optimize_direction(&m.chain, delays, ch, w1, w2, opts)?;
                points.push(FrontierPoint {
                    w1,
                    w2,
                    corner,
                    point,
                    policy_hash: policy.fingerprint(),
                });
            }
            upper_concave_envelope(points)
        }
    };

    let mut csv = Csv::new(
        "region",
        &["alpha", "r1_bits", "r2_bits", "corner_id", "policy_hash"],
    );
    for f in &frontier {
        let alpha = if f.w2 > 0.0 {
            fmt(f.w1 / f.w2)
        } else {
            "inf".to_string()
        };
        csv.row(&[
            alpha,
            fmt(f.point.r1),
            fmt(f.point.r2),
            f.corner.to_string(),
            format!("{:016x}", f.policy_hash),
        ]);
    }
    std::fs::create_dir_all(out)?;
    let csv_path = out.join("region.csv");
    csv.write(&csv_path)?;
    println!("wrote {} ({} frontier points)", csv_path.display(), frontier.len());
    if svg {
        let series = vec![Series {
            name: "frontier".into(),
            points: frontier.iter().map(|f| (f.point.r1, f.point.r2)).collect(),
        }];
        let svg_path = out.join("region.svg");
        svg_line_plot(
            &svg_path,
            "Rate region frontier",
            "R1 (bits/symbol)",
            "R2 (bits/symbol)",
            &series,
        )?;
        println!("wrote {}", svg_path.display());
    }
    Ok(())
}

fn power_policy(model_path: &Path, out: &Path, tolerance: Option<f64>) -> Result<(), AppError> {
    let m = load_model(model_path)?;
    let ch = match &m.channel {
        ChannelKind::Gaussian(ch) => ch,
        ChannelKind::Discrete(_) => {
            return Err(AppError::Domain(
                "power-policy needs a gaussian channel".into(),
            ))
        }
    };
    let delays = m
        .delays
        .ok_or_else(|| AppError::Domain("power-policy needs a delays block".into()))?;
    let opts = power_opts(&m, tolerance);
    let (policy, rate) = optimize_sum_rate(&m.chain, delays, ch, opts)?;
    let report = kkt_residual(&m.chain, delays, ch, &policy)?;
    let triple = gaussian_rate_triple(&m.chain, delays, ch, &policy)?;

    let k = m.chain.k();
    let labels = m.chain.states().to_vec();
    let mut header = vec![
        "d1".to_string(),
        "d2".to_string(),
        "sum_rate_bits".to_string(),
        "r1_bits".to_string(),
        "r2_bits".to_string(),
    ];
    header.extend(power_columns(k, &labels));
    header.push("kkt_residual".to_string());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new("power-policy", &header_refs);
    let d1 = match delays.d1() {
        Delay::Finite(v) => v.to_string(),
        Delay::Infinite => "inf".to_string(),
    };
    let mut fields = vec![
        d1,
        delays.d2().to_string(),
        fmt(rate),
        fmt(triple.r1),
        fmt(triple.r2),
    ];
    fields.extend(power_fields(&policy, k));
    fields.push(format!("{:.3e}", report.max_residual()));
    csv.row(&fields);
    std::fs::create_dir_all(out)?;
    let csv_path = out.join("power_policy.csv");
    csv.write(&csv_path)?;

    println!("case: {:?}", DelayCase::of(delays));
    println!("sum rate: {rate:.9} bits/symbol");
    println!("kkt residual: {:.3e}", report.max_residual());
    println!(
        "budget gaps: ({:.3e}, {:.3e})",
        report.budget_gap[0], report.budget_gap[1]
    );
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn simulate(
    model_path: &Path,
    out: &Path,
    n: usize,
    trials: u64,
    epsilon: f64,
    seed: Option<u64>,
    policy_path: Option<&Path>,
) -> Result<(), AppError> {
    let m = load_model(model_path)?;
    let delays = m
        .delays
        .ok_or_else(|| AppError::Domain("simulate needs a delays block".into()))?;
    let base_seed = seed.unwrap_or(m.solver.seed.unwrap_or(0));
    let k = m.chain.k();
    let labels = m.chain.states().to_vec();

    let mut header = vec!["trial".to_string(), "seed".to_string(), "n".to_string()];
    for a in 0..k {
        header.push(format!("N_{}", labels[a]));
    }
    for a in 0..k {
        for b in 0..k {
            header.push(format!("N_{}{}", labels[a], labels[b]));
        }
    }
    header.push("declared_error".to_string());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new("simulate-occupancy", &header_refs);
    let mut declared = 0u64;
    for trial in 0..trials {
        let rep = occupancy_trial(&m.chain, delays, n, epsilon, base_seed.wrapping_add(trial))
            .map_err(|e| AppError::Domain(e.to_string()))?;
        declared += rep.declared_error as u64;
        let mut fields = vec![
            trial.to_string(),
            (base_seed.wrapping_add(trial)).to_string(),
            n.to_string(),
        ];
        fields.extend(rep.counts1.iter().map(|c| c.to_string()));
        fields.extend(rep.counts2.iter().map(|c| c.to_string()));
        fields.push((rep.declared_error as u8).to_string());
        csv.row(&fields);
    }
    // Trailing summary row: declared-error frequency in the last column.
    let mut summary = vec!["summary".to_string(), base_seed.to_string(), n.to_string()];
    summary.extend(std::iter::repeat("".to_string()).take(k + k * k));
    summary.push(fmt(declared as f64 / trials as f64));
    csv.row(&summary);
    std::fs::create_dir_all(out)?;
    let csv_path = out.join("simulate_occupancy.csv");
    csv.write(&csv_path)?;
    println!(
        "wrote {} (declared-error frequency {:.4})",
        csv_path.display(),
        declared as f64 / trials as f64
    );

    if let ChannelKind::Discrete(ch) = &m.channel {
        let policy = match policy_path {
            Some(p) => load_policy(p, k, k, ch.nx1(), ch.nx2())?,
            None => InputPolicy::uniform(1, k, k, ch.nx1(), ch.nx2()),
        };
        let est = empirical_rate_estimate(&m.chain, delays, ch, &policy, n, base_seed)
            .map_err(|e| AppError::Domain(e.to_string()))?;
        let exact = assemble_joint(&m.chain.delayed_joint(delays), ch, &policy)
            .and_then(|j| j.rate_triple())
            .map_err(|e| AppError::Domain(e.to_string()))?;
        let mut rates = Csv::new(
            "simulate-rates",
            &[
                "n", "seed", "est_r1", "est_r2", "est_rsum", "exact_r1", "exact_r2", "exact_rsum",
            ],
        );
        rates.row(&[
            n.to_string(),
            base_seed.to_string(),
            fmt(est.r1),
            fmt(est.r2),
            fmt(est.rsum),
            fmt(exact.r1),
            fmt(exact.r2),
            fmt(exact.rsum),
        ]);
        let rates_path = out.join("simulate_rates.csv");
        rates.write(&rates_path)?;
        println!("wrote {}", rates_path.display());
    } else {
        println!("gaussian channel: occupancy only (rates are closed-form)");
    }
    Ok(())
}

fn multiletter_check(
    model_path: &Path,
    out: &Path,
    n_max: usize,
    policy_path: Option<&Path>,
    svg: bool,
) -> Result<(), AppError> {
    let m = load_model(model_path)?;
    let ch = match &m.channel {
        ChannelKind::Discrete(ch) => ch,
        ChannelKind::Gaussian(_) => {
            return Err(AppError::Domain(
                "multiletter-check needs a discrete channel".into(),
            ))
        }
    };
    let delays = m
        .delays
        .ok_or_else(|| AppError::Domain("multiletter-check needs a delays block".into()))?;
    let k = m.chain.k();
    let k1 = if delays.d1().is_infinite() { 1 } else { k };
    let policy = match policy_path {
        Some(p) => load_policy(p, k1, k, ch.nx1(), ch.nx2())?,
        None => InputPolicy::uniform(1, k1, k, ch.nx1(), ch.nx2()),
    };
    let single = assemble_joint(&m.chain.delayed_joint(delays), ch, &policy)
        .and_then(|j| j.rate_triple())
        .map_err(|e| AppError::Domain(e.to_string()))?;

    let mut csv = Csv::new(
        "multiletter-check",
        &[
            "n", "r1", "r2", "rsum", "single_r1", "single_r2", "single_rsum", "deficit_r1",
            "deficit_r2", "deficit_rsum",
        ],
    );
    let mut points = Vec::new();
    for n in 1..=n_max {
        let (law1, law2) = embed_policy(&m.chain, delays, &policy, n)
            .map_err(|e| AppError::Domain(e.to_string()))?;
        let multi = rn_point(&m.chain, delays, ch, &law1, &law2, n)
            .map_err(|e| AppError::Domain(e.to_string()))?;
        csv.row(&[
            n.to_string(),
            fmt(multi.r1),
            fmt(multi.r2),
            fmt(multi.rsum),
            fmt(single.r1),
            fmt(single.r2),
            fmt(single.rsum),
            fmt(single.r1 - multi.r1),
            fmt(single.r2 - multi.r2),
            fmt(single.rsum - multi.rsum),
        ]);
        points.push((n as f64, multi.rsum));
    }
    std::fs::create_dir_all(out)?;
    let csv_path = out.join("multiletter.csv");
    csv.write(&csv_path)?;
    println!("wrote {}", csv_path.display());
    if svg {
        let series = vec![
            Series {
                name: "per-symbol rsum".into(),
                points,
            },
            Series {
                name: "single-letter rsum".into(),
                points: (1..=n_max).map(|n| (n as f64, single.rsum)).collect(),
            },
        ];
        let svg_path = out.join("multiletter.svg");
        svg_line_plot(
            &svg_path,
            "Multi-letter sum-rate bound vs horizon",
            "horizon n",
            "bits/symbol",
            &series,
        )?;
        println!("wrote {}", svg_path.display());
    }
    Ok(())
}
