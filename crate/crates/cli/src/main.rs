mod config;
mod output;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use decotree::free::exceptional_s;
use decotree::oracle::{convention_lock, oracle_equivalence};
use decotree::population::moment_series;
use decotree::recursion::{mu_scan, MuScanConfig};
use decotree::tree::{diagonal, write_matrix_market, MatrixOptions};
use decotree::{
    ac_diagnostic, build_tree, dense_resolvent, dos_curve, init_population, recursion_green_finite, sample_potential,
    support_f, Complex64, TreeShape,
};
use serde::Serialize;

use config::{Overrides, RunConfig};
use output::Sink;

#[derive(Parser)]
#[command(name = "decotree", version, about = "Anderson model on decorated binary trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Free spectral support. Writes support.json: {intervals, S, convention, punctures}.
    Support,
    /// Exceptional set S with the condition each point satisfies. Writes exceptional.json.
    Exceptional,
    /// Smoothed density of states at the origin.
    ///
    /// Writes dos.csv with columns lambda,epsilon,density,stderr (one block per epsilon).
    /// With --ac-window also writes diagnostic.csv with columns y,integral.
    Dos,
    /// Pool moment per generation at --lambda.
    ///
    /// Writes moments.csv with columns generation,moment,stderr.
    Moments,
    /// Contraction scan over the window times the epsilon list.
    ///
    /// Writes mu_scan.csv with columns lambda_re,lambda_im,max_mu,argmax_z1,argmax_z2,fitted_C,fitted_eps.
    MuScan,
    /// Resolvent entry at --vertex of a random truncation, dense and recursive.
    ///
    /// Writes green.json; with --dump-tree also tree.json and hamiltonian.mtx.
    Green,
    /// Oracle equivalence and truncation checks. Exits nonzero on any breach.
    ///
    /// Writes validate.json and oracle.csv.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Support => "support",
            Command::Exceptional => "exceptional",
            Command::Dos => "dos",
            Command::Moments => "moments",
            Command::MuScan => "mu-scan",
            Command::Green => "green",
            Command::Validate => "validate",
        }
    }
}

fn cfmt(z: Complex64) -> String {
    format!("{}{:+}i", z.re, z.im)
}

fn support(cfg: &RunConfig, sink: &mut Sink) -> Result<bool> {
    #[derive(Serialize)]
    struct Out {
        intervals: Vec<(f64, f64)>,
        #[serde(rename = "S")]
        s: Vec<f64>,
        convention: String,
        punctures: Vec<f64>,
        window: [f64; 2],
        grid_step: f64,
    }
    let r = support_f(cfg.shape, cfg.paper_window(), cfg.step)?;
    let shift = |x: f64| cfg.shown(x);
    let out = Out {
        intervals: r.intervals.iter().map(|&(a, b)| (shift(a), shift(b))).collect(),
        s: r.exceptional.iter().map(|&x| shift(x)).collect(),
        convention: cfg.convention.name().into(),
        punctures: r.punctures.iter().map(|&x| shift(x)).collect(),
        window: cfg.window,
        grid_step: cfg.step,
    };
    sink.json("support.json", &out)?;
    Ok(true)
}

fn exceptional(cfg: &RunConfig, sink: &mut Sink) -> Result<bool> {
    let mut set = exceptional_s(cfg.shape, cfg.paper_window())?;
    for p in &mut set.points {
        p.lambda = cfg.shown(p.lambda);
    }
    for d in &mut set.discontinuities {
        *d = cfg.shown(*d);
    }
    set.window = (cfg.window[0], cfg.window[1]);
    #[derive(Serialize)]
    struct Out {
        convention: String,
        #[serde(flatten)]
        set: decotree::ExceptionalSet,
    }
    sink.json("exceptional.json", &Out { convention: cfg.convention.name().into(), set })?;
    Ok(true)
}

fn dos(cfg: &RunConfig, seed: u64, sink: &mut Sink) -> Result<bool> {
    let model = cfg.model();
    let mut rows = Vec::new();
    for (i, &eps) in cfg.epsilon.iter().enumerate() {
        let s = decotree::rng::derive_seed(seed, &[i as u64]);
        let mut curve = dos_curve(&model, cfg.shape, cfg.paper_window(), cfg.step, eps, cfg.pool_size, cfg.generations, s)?;
        for p in &mut curve {
            p.lambda = cfg.shown(p.lambda);
        }
        rows.extend(curve);
    }
    sink.csv("dos.csv", rows)?;
    if let Some(w) = cfg.ac_window {
        #[derive(Serialize)]
        struct Row {
            y: f64,
            integral: f64,
        }
        let e = (cfg.to_paper(w[0]), cfg.to_paper(w[1]));
        let s = decotree::rng::derive_seed(seed, &[u64::MAX]);
        let d = ac_diagnostic(&model, cfg.shape, e, cfg.p, &cfg.ys, cfg.ac_points, cfg.pool_size, cfg.generations, s)?;
        eprintln!("diagnostic: median {:.6e}, spread {:.4}, within 2x: {}", d.median, d.spread, d.bounded);
        sink.csv("diagnostic.csv", d.rows.iter().map(|r| Row { y: r.y, integral: r.integral }))?;
    }
    Ok(true)
}

fn moments(cfg: &RunConfig, seed: u64, sink: &mut Sink) -> Result<bool> {
    let pop = init_population(cfg.paper_lambda(), cfg.pool_size, cfg.shape, seed)?;
    let (_, series) = moment_series(&pop, &cfg.model(), cfg.generations, cfg.p, cfg.quantity, cfg.evolve_options())?;
    sink.csv("moments.csv", series)?;
    Ok(true)
}

fn mu_scan_cmd(cfg: &RunConfig, seed: u64, sink: &mut Sink) -> Result<bool> {
    #[derive(Serialize)]
    struct Row {
        lambda_re: f64,
        lambda_im: f64,
        max_mu: f64,
        argmax_z1: String,
        argmax_z2: String,
        #[serde(rename = "fitted_C")]
        fitted_c: f64,
        fitted_eps: f64,
    }
    let (lo, hi) = cfg.paper_window();
    let n = ((hi - lo) / cfg.step + 1e-9).floor() as usize;
    let lambdas: Vec<Complex64> = cfg
        .epsilon
        .iter()
        .flat_map(|&eps| (0..=n).map(move |i| Complex64::new((lo + i as f64 * cfg.step).min(hi), eps)))
        .collect();
    let mc = MuScanConfig {
        p: cfg.p,
        samples: cfg.samples,
        envelope_samples: cfg.envelope_samples,
        seed,
        w0: cfg.w0,
        envelope_q: cfg.envelope_q,
        polish: cfg.polish,
    };
    let rows = mu_scan(cfg.shape, &lambdas, &mc)?;
    for r in rows.iter().filter(|r| r.near_one) {
        eprintln!("max mu within 1e-3 of one at lambda = {}", cfmt(cfg.convention.from_paper(r.lambda)));
    }
    sink.csv(
        "mu_scan.csv",
        rows.iter().map(|r| Row {
            lambda_re: cfg.shown(r.lambda.re),
            lambda_im: r.lambda.im,
            max_mu: r.max_mu,
            argmax_z1: cfmt(r.argmax_z1),
            argmax_z2: cfmt(r.argmax_z2),
            fitted_c: r.fitted_c,
            fitted_eps: r.fitted_eps,
        }),
    )?;
    Ok(true)
}

fn green(cfg: &RunConfig, seed: u64, sink: &mut Sink) -> Result<bool> {
    #[derive(Serialize)]
    struct Out {
        shape: TreeShape,
        depth: usize,
        vertices: usize,
        vertex: usize,
        lambda: Complex64,
        convention: String,
        dense: Complex64,
        recursion: Complex64,
        rel_err: f64,
    }
    let tree = build_tree(cfg.shape, cfg.depth)?;
    let model = cfg.model();
    let sample = sample_potential(&model, tree.len(), seed)?;
    let lambda = Complex64::new(cfg.lambda[0], cfg.lambda[1]);
    let opts = MatrixOptions::new(cfg.convention);
    let d = dense_resolvent(&tree, &model, &sample, lambda, cfg.vertex, opts)?.value;
    let r = recursion_green_finite(&tree, &model, &sample, lambda, cfg.vertex, opts)?.value;
    let out = Out {
        shape: cfg.shape,
        depth: cfg.depth,
        vertices: tree.len(),
        vertex: cfg.vertex,
        lambda,
        convention: cfg.convention.name().into(),
        dense: d,
        recursion: r,
        rel_err: (d - r).norm() / d.norm(),
    };
    sink.json("green.json", &out)?;
    if cfg.dump_tree {
        sink.json("tree.json", &tree.dump())?;
        let diag = diagonal(&tree, &model, &sample, opts)?;
        let mut buf = Vec::new();
        write_matrix_market(&tree, &diag, &mut buf)?;
        let text = String::from_utf8(buf)?;
        let (head, body) = text.split_once('\n').unwrap_or((&text, ""));
        sink.text("hamiltonian.mtx", &format!("{head}\n% manifest_sha256={}\n{body}", sink.hash))?;
    }
    Ok(true)
}

fn validate(cfg: &RunConfig, seed: u64, sink: &mut Sink) -> Result<bool> {
    #[derive(Serialize)]
    struct Out {
        oracle_passed: usize,
        oracle_total: usize,
        tolerance: f64,
        worst_rel_err: f64,
        seconds: f64,
        lock: Vec<decotree::oracle::LockRow>,
        lock_passed: bool,
        ok: bool,
    }
    #[derive(Serialize)]
    struct Row {
        index: usize,
        m: usize,
        n: usize,
        depth: usize,
        k: f64,
        lambda_re: f64,
        lambda_im: f64,
        vertices: usize,
        max_rel_err: f64,
        herglotz: bool,
    }
    let report = oracle_equivalence(cfg.oracle_configs, seed, cfg.tolerance)?;
    let shapes = [TreeShape::new(1, 2), TreeShape::new(2, 1), TreeShape::new(1, 3), TreeShape::new(0, 0)];
    let lambdas = [Complex64::new(-1.5, 0.2), Complex64::new(0.4, 0.2), Complex64::new(1.2, 0.5)];
    let lock = convention_lock(&shapes, &lambdas, cfg.lock_depth)?;
    // deeper truncations must move toward the infinite tree
    let lock_passed = lock.iter().all(|r| r.error_deeper < r.error && r.infinite.im > 0.0);
    let worst = report.cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let ok = report.all_passed() && lock_passed;
    eprintln!("oracle: {}/{} within {:e} (worst {:.2e}, {:.1} s)", report.passed, report.cases.len(), cfg.tolerance, worst, report.seconds);
    eprintln!("truncation checks: {}", if lock_passed { "pass" } else { "FAIL" });
    sink.csv(
        "oracle.csv",
        report.cases.iter().enumerate().map(|(i, c)| Row {
            index: i,
            m: c.shape.m,
            n: c.shape.n,
            depth: c.depth,
            k: c.k,
            lambda_re: c.lambda.re,
            lambda_im: c.lambda.im,
            vertices: c.vertices,
            max_rel_err: c.max_rel_err,
            herglotz: c.herglotz,
        }),
    )?;
    let out = Out {
        oracle_passed: report.passed,
        oracle_total: report.cases.len(),
        tolerance: cfg.tolerance,
        worst_rel_err: worst,
        seconds: report.seconds,
        lock,
        lock_passed,
        ok,
    };
    sink.json("validate.json", &out)?;
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.flags.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    cli.flags.apply(&mut cfg);
    cfg.validate()?;
    let seed = *cfg.seed.get_or_insert_with(rand::random);
    let workers = *cfg.workers.get_or_insert_with(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().context("starting worker pool")?;

    let cmd = cli.command;
    let mut sink = Sink::new(cmd.name(), &cfg)?;
    let ok = match cmd {
        Command::Support => support(&cfg, &mut sink),
        Command::Exceptional => exceptional(&cfg, &mut sink),
        Command::Dos => dos(&cfg, seed, &mut sink),
        Command::Moments => moments(&cfg, seed, &mut sink),
        Command::MuScan => mu_scan_cmd(&cfg, seed, &mut sink),
        Command::Green => green(&cfg, seed, &mut sink),
        Command::Validate => validate(&cfg, seed, &mut sink),
    }
    .with_context(|| format!("{} failed", cmd.name()))?;
    let manifest = sink.finish()?;
    eprintln!("seed {seed}, manifest {}", manifest.display());
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
