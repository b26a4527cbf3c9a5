use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pclq::estimators::{fit_model, EstimatorKind};
use pclq::harness::{csv_string, run_sweep, ConfigOverrides, ExperimentConfig};
use pclq::io::{self, fmt_f64};
use pclq::lqr::{solve_dare_value_iteration, DARE_MAX_ITER, DARE_TOL};
use pclq::structure::{
    block_partition_sparsity, controllability_matrix, linf_block_norm, numeric_rank, pc_decompose,
    relevant_disturbances_matrix, SubspaceBasis,
};
use pclq::synth::{gen_pclq, sample_transitions, NoiseSpec, Normalization, PcLqSpec, QMode};
use pclq::{Error, Mat, Rng};

const RANK_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(
    name = "pclq",
    version,
    about = "Learning LQ control of partially controllable systems"
)]
struct Cli {
    /// Random seed (ignored by deterministic subcommands).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random PC-LQ system file.
    Gen(GenArgs),
    /// Sample one-step transitions from a system file.
    Sample(SampleArgs),
    /// Fit a sparse model to a dataset.
    Estimate(EstimateArgs),
    /// Solve the Riccati equation for a system file.
    Solve(SolveArgs),
    /// Report controllability structure of a system file.
    Structure(StructureArgs),
    /// Run a Monte-Carlo sweep and write CSV.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    s_c: usize,
    #[arg(long)]
    s_e: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    d_u: usize,
    #[arg(long, default_value_t = 1.0)]
    rho1: f64,
    #[arg(long, default_value_t = 0.9)]
    rho2: f64,
    #[arg(long, default_value_t = 0.9)]
    rho3: f64,
    /// `i_onetwo` or `identity`.
    #[arg(long, default_value = "i_onetwo")]
    q_mode: String,
    /// `spectral_radius` or `top_singular`.
    #[arg(long, default_value = "spectral_radius")]
    normalization: String,
    /// Output file (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma0: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_u: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_xi: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// `ols`, `moment` or `semiparam`.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// System file whose B is treated as known; its A is used to count
    /// false-positive nonzeros.
    #[arg(long)]
    system: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    system: PathBuf,
    #[arg(long, default_value_t = DARE_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DARE_MAX_ITER)]
    max_iter: usize,
}

#[derive(Args)]
struct StructureArgs {
    system: PathBuf,
    #[arg(long, default_value_t = RANK_TOL)]
    rank_tol: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output file (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    d_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    s_c: Option<usize>,
    #[arg(long)]
    s_e: Option<usize>,
    #[arg(long)]
    d_u: Option<usize>,
    #[arg(long)]
    success_factor: Option<f64>,
    #[arg(long)]
    known_b: Option<bool>,
    #[arg(long)]
    q_mode: Option<String>,
    #[arg(long)]
    normalization: Option<String>,
    /// `system` or `identity`.
    #[arg(long)]
    synthesis_costs: Option<String>,
}

fn emit(out: Option<&PathBuf>, text: &str) -> pclq::Result<()> {
    match out {
        Some(path) => io::write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_matrix(name: &str, m: &Mat) {
    println!("{name} = [");
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        println!("  [{}],", row.join(", "));
    }
    println!("]");
}

fn gen(args: GenArgs, seed: u64) -> pclq::Result<()> {
    let spec = PcLqSpec {
        s_c: args.s_c,
        s_e: args.s_e,
        d: args.d,
        d_u: args.d_u,
        rho1: args.rho1,
        rho2: args.rho2,
        rho3: args.rho3,
        normalization: Normalization::parse(&args.normalization)?,
        seed,
    };
    let q_mode = QMode::parse(&args.q_mode)?;
    let g = gen_pclq(&spec, q_mode, &mut Rng::new(seed))?;
    if g.linf_a3 >= 1.0 && args.d > args.s_c + args.s_e {
        eprintln!("note: block-3 L_inf norm is {:.4} (>= 1)", g.linf_a3);
    }
    emit(args.out.as_ref(), &io::system_to_string(&g.system, Some(&g.blocks)))
}

fn sample(args: SampleArgs, seed: u64) -> pclq::Result<()> {
    let record = io::read_system(&args.system)?;
    let noise = NoiseSpec::isotropic(args.sigma0, args.sigma_u, args.sigma_xi);
    let ds = sample_transitions(&record.system, args.n, &noise, &mut Rng::new(seed))?;
    emit(args.out.as_ref(), &io::dataset_to_string(&ds))
}

fn estimate(args: EstimateArgs) -> pclq::Result<()> {
    let kind = EstimatorKind::parse(&args.kind)?;
    let ds = io::read_dataset(&args.data)?;
    let truth = args.system.as_deref().map(io::read_system).transpose()?;
    let known_b = truth.as_ref().map(|t| t.system.b());
    let model = fit_model(&ds, args.eps, kind, known_b)?;
    let text = io::estimate_to_string(&model, args.eps);
    match &args.out {
        Some(path) => io::write_text(path, &text)?,
        None => print!("{text}"),
    }

    let a = &model.a_bar;
    let zeros = (0..a.rows())
        .flat_map(|i| (0..a.cols()).map(move |j| (i, j)))
        .filter(|&ij| a[ij] == 0.0)
        .count();
    eprintln!("zero entries in A: {zeros} of {}", a.rows() * a.cols());
    if model.raw.failed_entries > 0 {
        eprintln!("entries that fell back to zero: {}", model.raw.failed_entries);
    }
    if let Some(t) = &truth {
        let true_a = t.system.a();
        let mut false_pos = 0;
        let mut false_neg = 0;
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                match (true_a[(i, j)] == 0.0, a[(i, j)] == 0.0) {
                    (true, false) => false_pos += 1,
                    (false, true) => false_neg += 1,
                    _ => {}
                }
            }
        }
        eprintln!("nonzero where true A is zero: {false_pos}");
        eprintln!("zero where true A is nonzero: {false_neg}");
    }
    Ok(())
}

fn solve(args: SolveArgs) -> pclq::Result<()> {
    let record = io::read_system(&args.system)?;
    let sol = solve_dare_value_iteration(&record.system, args.tol, args.max_iter)?;
    println!("iterations = {}", sol.iterations);
    println!("residual = {}", fmt_f64(sol.residual));
    print_matrix("P", &sol.p);
    print_matrix("K", &sol.k);
    Ok(())
}

fn structure(args: StructureArgs) -> pclq::Result<()> {
    let record = io::read_system(&args.system)?;
    let (a, b) = (record.system.a(), record.system.b());
    let d = a.rows();
    let gamma = controllability_matrix(a, b)?;
    let rank_gamma = numeric_rank(&gamma, args.rank_tol)?;
    let p_c = SubspaceBasis::span_of(&gamma, args.rank_tol)?;
    let rd = relevant_disturbances_matrix(a, &p_c)?;
    let rank_rd = numeric_rank(&rd, args.rank_tol)?;
    let part = pc_decompose(a, b, args.rank_tol)?;
    let blocks = record.blocks.unwrap_or_else(|| block_partition_sparsity(a, b, 0.0));

    println!("d = {d}");
    println!("rank_controllability = {rank_gamma}");
    println!("rank_relevant_disturbances = {rank_rd}");
    println!("s_c = {}", part.s_c());
    println!("s_e = {}", part.s_e());
    println!("s = {}", part.s());
    println!("decomposition_residual = {}", fmt_f64(part.residual));
    if blocks.block3.is_empty() {
        println!("block3_linf = 0");
    } else {
        let a3 = a.select(&blocks.block3, &blocks.block3);
        let norm = linf_block_norm(&a3);
        println!("block3_linf = {}", fmt_f64(norm));
        if norm >= 1.0 {
            eprintln!("note: block-3 L_inf norm is not below 1");
        }
    }
    Ok(())
}

fn experiment(args: ExperimentArgs, seed: Option<u64>) -> pclq::Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        ConfigOverrides::read(path)?.apply(&mut cfg)?;
    }
    let flags = ConfigOverrides {
        d_list: args.d_list,
        n_grid: args.n_grid,
        trials: args.trials,
        eps: args.eps,
        estimators: args.estimators,
        s_c: args.s_c,
        s_e: args.s_e,
        d_u: args.d_u,
        success_factor: args.success_factor,
        known_b: args.known_b,
        q_mode: args.q_mode,
        normalization: args.normalization,
        synthesis_costs: args.synthesis_costs,
        base_seed: seed,
        ..ConfigOverrides::default()
    };
    flags.apply(&mut cfg)?;
    let out = run_sweep(&cfg, args.threads)?;
    emit(args.out.as_ref(), &csv_string(&out.rows))
}

fn run(cli: Cli) -> pclq::Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Gen(a) => gen(a, seed),
        Command::Sample(a) => sample(a, seed),
        Command::Estimate(a) => estimate(a),
        Command::Solve(a) => solve(a),
        Command::Structure(a) => structure(a),
        Command::Experiment(a) => experiment(a, cli.seed),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
