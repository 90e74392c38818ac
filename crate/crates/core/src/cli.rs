//! Batch experiment runner: key=value configuration, one subcommand per
//! experiment, CSV/JSON reports and a JSON manifest per run.
//!
//! Exit codes: 0 when every certification passes, 1 on configuration errors,
//! 2 on certification failures and numerical failures.

use crate::error::{Error, Result};
use crate::lattice::{Boundary, Filling, LatticeSpec};
use crate::{grassmann, multiscale, oracle, perturbation, powercount, propagator, rgflow};
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Environment variable that overrides --out.
pub const OUT_ENV: &str = "FERMIRG_OUT";
/// Output directory when neither --out nor FERMIRG_OUT is given.
pub const DEFAULT_OUT: &str = "fermirg-out";

#[derive(Debug, Parser)]
#[command(name = "fermirg", version, about = "Multiscale RG numerics for 1D lattice fermions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file with one key = value per line.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override one configuration key; repeatable, wins over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Dirichlet propagator dump and reflection identity check.
    Propagator,
    /// Single-scale norms, slopes and decay constants.
    Scales,
    /// Randomized Grassmann algebra cross-checks.
    GrassmannSelftest,
    /// Exact diagonalization against second-order perturbation theory.
    Energy,
    /// Boundary scaling of the first-order free energy.
    Scaling,
    /// Running couplings with the nu and varpi fixed points.
    Flow,
    /// Power-counting sums over scale-labelled trees.
    Powercount,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Propagator => "propagator",
            Command::Scales => "scales",
            Command::GrassmannSelftest => "grassmann-selftest",
            Command::Energy => "energy",
            Command::Scaling => "scaling",
            Command::Flow => "flow",
            Command::Powercount => "powercount",
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub l: usize,
    pub beta: f64,
    pub m: usize,
    pub p_f: f64,
    /// Chemical potential; takes precedence over p_f when set.
    pub mu: Option<f64>,
    pub gamma: f64,
    pub kappa: Option<f64>,
    pub bc: Boundary,
    pub lambda: f64,
    pub nu: f64,
    pub varpi: f64,
    pub theta: f64,
    pub theta_bar: f64,
    pub ball_c: f64,
    pub lambdas: Vec<f64>,
    pub l_sweep: Vec<usize>,
    pub order: u32,
    pub h_lo: i32,
    pub h_hi: i32,
    pub n_t: usize,
    pub n: usize,
    pub legs: u32,
    pub depth: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Every accepted configuration key.
pub const KEYS: &[&str] = &[
    "L", "beta", "M", "pF", "mu", "gamma", "kappa", "bc", "lambda", "nu", "varpi", "theta", "theta_bar", "ball_c", "lambdas",
    "L_sweep", "order", "h_lo", "h_hi", "n_t", "n", "legs", "depth", "samples", "seed",
];

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

impl ExperimentConfig {
    /// Defaults of each subcommand.
    pub fn defaults(cmd: Command) -> Self {
        let base = ExperimentConfig {
            l: 16,
            beta: 8.0,
            m: 4096,
            p_f: PI / 3.0,
            mu: None,
            gamma: 2.0,
            kappa: None,
            bc: Boundary::Dirichlet,
            lambda: 0.05,
            nu: 0.0,
            varpi: 0.0,
            theta: 0.5,
            theta_bar: 0.5,
            ball_c: 1.0,
            lambdas: log_spaced(1e-3, 1e-1, 9),
            l_sweep: vec![32, 64, 128, 256, 512],
            order: 1,
            h_lo: -8,
            h_hi: -2,
            n_t: 8,
            n: 1,
            legs: 2,
            depth: 12,
            samples: 1000,
            seed: 1,
        };
        match cmd {
            Command::Propagator | Command::GrassmannSelftest | Command::Powercount => base,
            Command::Scales => ExperimentConfig { l: 4095, beta: 8192.0, m: 1 << 20, gamma: 2f64.sqrt(), ..base },
            Command::Energy => ExperimentConfig { l: 6, beta: 32.0, m: 16, mu: Some(1.0), lambda: 0.0, ..base },
            Command::Scaling => ExperimentConfig { beta: f64::INFINITY, mu: Some(1.0), lambda: 1.0, ..base },
            Command::Flow => ExperimentConfig { l: 128, beta: 256.0, ..base },
        }
    }

    /// Applies one key = value pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |what: &str| Error::InvalidConfig(format!("key {key}: cannot parse {v:?} as {what}"));
        let float = || v.parse::<f64>().map_err(|_| bad("a number"));
        let uint = || v.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let int = || v.parse::<i32>().map_err(|_| bad("an integer"));
        match key {
            "L" => self.l = uint()?,
            "beta" => self.beta = float()?,
            "M" => self.m = uint()?,
            "pF" => {
                self.p_f = float()?;
                self.mu = None;
            }
            "mu" => self.mu = Some(float()?),
            "gamma" => self.gamma = float()?,
            "kappa" => self.kappa = Some(float()?),
            "bc" => {
                self.bc = match v.to_ascii_lowercase().as_str() {
                    "dirichlet" | "dbc" => Boundary::Dirichlet,
                    "periodic" | "pbc" => Boundary::PeriodicExtended,
                    _ => return Err(bad("a boundary (dirichlet or periodic)")),
                }
            }
            "lambda" => self.lambda = float()?,
            "nu" => self.nu = float()?,
            "varpi" => self.varpi = float()?,
            "theta" => self.theta = float()?,
            "theta_bar" => self.theta_bar = float()?,
            "ball_c" => self.ball_c = float()?,
            "lambdas" => {
                self.lambdas = v.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad("a comma-separated list of numbers"))).collect::<Result<_>>()?
            }
            "L_sweep" => {
                self.l_sweep = v.split(',').map(|s| s.trim().parse::<usize>().map_err(|_| bad("a comma-separated list of sizes"))).collect::<Result<_>>()?
            }
            "order" => self.order = v.parse().map_err(|_| bad("1 or 2"))?,
            "h_lo" => self.h_lo = int()?,
            "h_hi" => self.h_hi = int()?,
            "n_t" => self.n_t = uint()?,
            "n" => self.n = uint()?,
            "legs" => self.legs = v.parse().map_err(|_| bad("an even leg count"))?,
            "depth" => self.depth = uint()?,
            "samples" => self.samples = uint()?,
            "seed" => self.seed = v.parse().map_err(|_| bad("a non-negative integer"))?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}; accepted keys: {}", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// Key = value echo of every field.
    pub fn echo(&self) -> BTreeMap<&'static str, String> {
        let list = |xs: &[String]| xs.join(",");
        let mut m = BTreeMap::new();
        m.insert("L", self.l.to_string());
        m.insert("beta", self.beta.to_string());
        m.insert("M", self.m.to_string());
        m.insert("pF", self.p_f.to_string());
        m.insert("mu", self.mu.map(|x| x.to_string()).unwrap_or_default());
        m.insert("gamma", self.gamma.to_string());
        m.insert("kappa", self.kappa.map(|x| x.to_string()).unwrap_or_default());
        m.insert("bc", match self.bc {
            Boundary::Dirichlet => "dirichlet".into(),
            Boundary::PeriodicExtended => "periodic".into(),
        });
        m.insert("lambda", self.lambda.to_string());
        m.insert("nu", self.nu.to_string());
        m.insert("varpi", self.varpi.to_string());
        m.insert("theta", self.theta.to_string());
        m.insert("theta_bar", self.theta_bar.to_string());
        m.insert("ball_c", self.ball_c.to_string());
        m.insert("lambdas", list(&self.lambdas.iter().map(|x| x.to_string()).collect::<Vec<_>>()));
        m.insert("L_sweep", list(&self.l_sweep.iter().map(|x| x.to_string()).collect::<Vec<_>>()));
        m.insert("order", self.order.to_string());
        m.insert("h_lo", self.h_lo.to_string());
        m.insert("h_hi", self.h_hi.to_string());
        m.insert("n_t", self.n_t.to_string());
        m.insert("n", self.n.to_string());
        m.insert("legs", self.legs.to_string());
        m.insert("depth", self.depth.to_string());
        m.insert("samples", self.samples.to_string());
        m.insert("seed", self.seed.to_string());
        m
    }

    /// Lattice spec built from the spec fields; every lattice precondition is checked here.
    pub fn spec(&self) -> Result<LatticeSpec> {
        let filling = match self.mu {
            Some(mu) => Filling::Mu(mu),
            None => Filling::FermiMomentum(self.p_f),
        };
        let mut spec = LatticeSpec::new(self.l, self.beta, self.m, filling, self.bc)?.with_gamma(self.gamma)?;
        if let Some(k) = self.kappa {
            spec = spec.with_kappa(k)?;
        }
        Ok(spec)
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Defaults, then the config file, then --set overrides.
pub fn resolve_config(cmd: Command, file: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(cmd);
    if let Some(p) = file {
        let text = std::fs::read_to_string(p).map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", p.display())))?;
        for (k, v) in parse_pairs(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

/// One certified quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certification {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance condition.
    pub condition: String,
    pub pass: bool,
}

impl Certification {
    fn new(name: &str, value: f64, condition: &str, pass: bool) -> Self {
        Certification { name: name.into(), value, condition: condition.into(), pass }
    }
}

/// Files written and certifications of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub files: Vec<String>,
    pub certifications: Vec<Certification>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.certifications.iter().all(|c| c.pass)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: String,
    subcommand: &'a str,
    config: BTreeMap<&'static str, String>,
    files: &'a [String],
    certifications: &'a [Certification],
    all_pass: bool,
}

struct Output<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Output<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Runs one experiment, writing its reports and manifest.json into `out`.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out)?;
    let mut o = Output { dir: out, files: Vec::new() };
    let certifications = match cmd {
        Command::Propagator => run_propagator(cfg, &mut o)?,
        Command::Scales => run_scales(cfg, &mut o)?,
        Command::GrassmannSelftest => run_grassmann(cfg, &mut o)?,
        Command::Energy => run_energy(cfg, &mut o)?,
        Command::Scaling => run_scaling(cfg, &mut o)?,
        Command::Flow => run_flow(cfg, &mut o)?,
        Command::Powercount => run_powercount(cfg, &mut o)?,
    };
    let report = RunReport { files: o.files.clone(), certifications };
    let manifest = Manifest {
        version: format!("v{}", env!("CARGO_PKG_VERSION")),
        subcommand: cmd.name(),
        config: cfg.echo(),
        files: &report.files,
        certifications: &report.certifications,
        all_pass: report.all_pass(),
    };
    o.json("manifest.json", &manifest)?;
    let mut report = report;
    report.files.push("manifest.json".into());
    Ok(report)
}

fn run_propagator(cfg: &ExperimentConfig, o: &mut Output) -> Result<Vec<Certification>> {
    let spec = cfg.spec()?.with_bc(Boundary::Dirichlet)?;
    if cfg.n_t == 0 {
        return Err(Error::InvalidConfig("n_t must be positive".into()));
    }
    let eval = propagator::Evaluation::Matsubara;
    let residual = propagator::reflection_residual_equal_time(&spec, eval);
    let kernel = propagator::dbc_kernel(&spec, propagator::TimeGrid::new(spec.beta, cfg.n_t), eval);
    let mut w = o.create("propagator_full.csv")?;
    kernel.write_csv(&mut w)?;
    w.flush()?;
    let mut certs = vec![Certification::new("reflection_residual_equal_time", residual, "< 1e-10", residual < 1e-10)];
    match propagator::reflection_decompose(&kernel, eval, 1e-10) {
        Ok((p, r)) => {
            for (name, k) in [("propagator_P.csv", &p), ("propagator_R.csv", &r)] {
                let mut w = o.create(name)?;
                k.write_csv(&mut w)?;
                w.flush()?;
            }
            certs.push(Certification::new("reflection_residual_grid", p.add(&r, propagator::Component::Full).max_deviation(&kernel), "< 1e-10", true));
        }
        Err(Error::ReflectionMismatch { deviation, .. }) => {
            certs.push(Certification::new("reflection_residual_grid", deviation, "< 1e-10", false));
        }
        Err(e) => return Err(e),
    }
    Ok(certs)
}

fn run_scales(cfg: &ExperimentConfig, o: &mut Output) -> Result<Vec<Certification>> {
    let spec = cfg.spec()?;
    if cfg.h_lo >= cfg.h_hi || cfg.h_hi > 0 {
        return Err(Error::InvalidConfig(format!("need h_lo < h_hi <= 0 (got {} and {})", cfg.h_lo, cfg.h_hi)));
    }
    let ladder = multiscale::ScaleLadder::new(&spec);
    if cfg.h_lo < ladder.h_min() {
        return Err(Error::InvalidConfig(format!("h_lo = {} lies below the ladder bottom {}", cfg.h_lo, ladder.h_min())));
    }
    let ns = multiscale::norm_scaling(&spec, cfg.h_lo, cfg.h_hi);
    let mut w = o.create("scales.csv")?;
    multiscale::write_scale_report(&mut w, &ns.stats, spec.gamma)?;
    w.flush()?;
    o.json("scales.json", &ns)?;
    let mut certs = vec![
        Certification::new("sup_slope", ns.sup_slope, "1.0 +- 0.15", (ns.sup_slope - 1.0).abs() <= 0.15),
        Certification::new("l1_P_slope", ns.l1_p_slope, "-1.0 +- 0.15", (ns.l1_p_slope + 1.0).abs() <= 0.15),
        Certification::new("l1_R_constant", ns.r_constant, "< 10", ns.r_constant < 10.0),
    ];
    for (n, s) in ns.c_n_spread.iter().enumerate() {
        certs.push(Certification::new(&format!("C_{}_spread", n + 1), *s, "finite and < 2", s.is_finite() && *s < 2.0));
    }
    Ok(certs)
}

fn run_grassmann(cfg: &ExperimentConfig, o: &mut Output) -> Result<Vec<Certification>> {
    if cfg.samples == 0 {
        return Err(Error::InvalidConfig("samples must be positive".into()));
    }
    let r = grassmann::self_test(cfg.samples, cfg.seed)?;
    o.json("grassmann.json", &r)?;
    Ok(vec![
        Certification::new("wick_vs_berezin", r.wick_berezin_max, "< 1e-12", r.wick_berezin_max < 1e-12),
        Certification::new("cumulant_vs_log_series", r.cumulant_max, "< 1e-10", r.cumulant_max < 1e-10),
        Certification::new("gram_hadamard_violations", r.gram_violations as f64, "== 0", r.gram_violations == 0),
    ])
}

fn run_energy(cfg: &ExperimentConfig, o: &mut Output) -> Result<Vec<Certification>> {
    let spec = cfg.spec()?.with_bc(Boundary::Dirichlet)?;
    if cfg.lambdas.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidConfig("lambdas must be positive for the log-log fit".into()));
    }
    let mut certs = Vec::new();
    if spec.l <= 8 {
        let free = oracle::ManyBodyProblem::free(&spec);
        let product = oracle::free_log_partition(&spec);
        let trace = oracle::fock_log_trace(&free)?;
        let diff = (product - trace).abs() / (1.0 + trace.abs());
        certs.push(Certification::new("free_product_vs_fock_trace", diff, "< 1e-12", diff < 1e-12));
    }
    let cmp = perturbation::ed_comparison(spec.l, spec.beta, spec.mu, &cfg.lambdas)?;
    let mut w = o.create("energy.csv")?;
    perturbation::write_ed_csv(&mut w, &cmp)?;
    w.flush()?;
    let boundary_pi = nalgebra::DMatrix::from_fn(spec.l, spec.l, |i, j| if i == j && (i == 0 || i + 1 == spec.l) { 1.0 } else { 0.0 });
    let records = cfg
        .lambdas
        .iter()
        .map(|&lambda| {
            let p = oracle::ManyBodyProblem::free(&spec)
                .with_interaction(lambda, oracle::dirichlet_potential(spec.l, oracle::default_vhat))
                .with_nu(cfg.nu)
                .with_varpi(cfg.varpi, boundary_pi.clone());
            oracle::evaluate(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    o.json("records.json", &records)?;
    certs.push(Certification::new("pt_vs_ed_slope", cmp.slope, "3.0 +- 0.2", (cmp.slope - 3.0).abs() <= 0.2));
    Ok(certs)
}

fn run_scaling(cfg: &ExperimentConfig, o: &mut Output) -> Result<Vec<Certification>> {
    let mu = cfg.mu.unwrap_or(1.0 - cfg.p_f.cos());
    if !(mu > 0.0 && mu < 2.0) {
        return Err(Error::InvalidConfig(format!("mu must lie in (0, 2) (got {mu})")));
    }
    if !(cfg.beta > 0.0) {
        return Err(Error::InvalidConfig(format!("beta must be positive (got {})", cfg.beta)));
    }
    if cfg.l_sweep.iter().any(|&l| l == 0) {
        return Err(Error::InvalidConfig("L must be a positive integer (got 0 in L_sweep)".into()));
    }
    let t = perturbation::ScalingTemplate { mu, beta: cfg.beta, lambda: cfg.lambda, order: cfg.order };
    let s = perturbation::boundary_scaling(&t, &cfg.l_sweep)?;
    let mut w = o.create("scaling.csv")?;
    perturbation::write_scaling_csv(&mut w, &s)?;
    w.flush()?;
    o.json("scaling.json", &s)?;
    Ok(vec![Certification::new("boundary_exponent", s.slope, "in [-1.15, -0.80]", (-1.15..=-0.80).contains(&s.slope))])
}

#[derive(Serialize)]
struct ScaleEntry<'a> {
    #[serde(flatten)]
    record: &'a rgflow::ScaleRecord,
    varpi_norm: f64,
}

#[derive(Serialize)]
struct TrajectoryDump<'a> {
    gamma: f64,
    lambda: f64,
    theta: f64,
    theta_bar: f64,
    nu_iterations: usize,
    nu_differences: &'a [f64],
    varpi_iterations: usize,
    varpi_norms: &'a [f64],
    varpi_differences: &'a [f64],
    varpi_strength: f64,
    diagnostics: rgflow::FlowDiagnostics,
    scales: Vec<ScaleEntry<'a>>,
}

fn run_flow(cfg: &ExperimentConfig, o: &mut Output) -> Result<Vec<Certification>> {
    let spec = cfg.spec()?.with_bc(Boundary::Dirichlet)?;
    for (name, v) in [("theta", cfg.theta), ("theta_bar", cfg.theta_bar)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1) (got {v})")));
        }
    }
    if !(cfg.ball_c > 0.0) {
        return Err(Error::InvalidConfig(format!("ball_c must be positive (got {})", cfg.ball_c)));
    }
    let setup = rgflow::FlowSetup::new(&spec, oracle::default_vhat);
    let solver = rgflow::SolverConfig { theta: cfg.theta, ..Default::default() };
    let flow = rgflow::solve_flow(&setup, cfg.lambda, cfg.theta_bar, cfg.ball_c, &solver)?;
    let diag = rgflow::flow_diagnostics(&setup, &flow, cfg.lambda, cfg.theta, cfg.theta_bar);
    let hs = setup.scales();
    let g = spec.gamma;
    let scales = flow
        .nu
        .trajectory
        .records
        .iter()
        .zip(&flow.varpi.varpi)
        .map(|(r, m)| ScaleEntry { record: r, varpi_norm: rgflow::weighted_norm(m, cfg.theta_bar, r.h, g) })
        .collect();
    let dump = TrajectoryDump {
        gamma: g,
        lambda: cfg.lambda,
        theta: cfg.theta,
        theta_bar: cfg.theta_bar,
        nu_iterations: flow.nu.iterations,
        nu_differences: &flow.nu.differences,
        varpi_iterations: flow.varpi.iterations,
        varpi_norms: &flow.varpi.norms,
        varpi_differences: &flow.varpi.differences,
        varpi_strength: flow.varpi.strength,
        diagnostics: diag,
        scales,
    };
    o.json("trajectory.json", &dump)?;
    let mut w = o.create("profiles.csv")?;
    rgflow::write_profiles(&mut w, &hs, &flow.varpi.varpi)?;
    w.flush()?;
    Ok(vec![
        Certification::new("nu_iterations", diag.nu_iterations as f64, "< 50", diag.nu_iterations < 50),
        Certification::new("nu_contraction", diag.nu_max_ratio, "< 0.5", diag.nu_max_ratio < 0.5),
        Certification::new("nu_bound_c", diag.nu_c, "finite", diag.nu_c.is_finite()),
        Certification::new("varpi_in_ball", diag.varpi_max_norm, "<= ball_c |lambda|", diag.varpi_max_norm <= diag.ball_radius * (1.0 + 1e-12)),
        Certification::new("varpi_geometric_decay", diag.varpi_max_ratio, "< 1", diag.varpi_max_ratio < 1.0),
        Certification::new("pi_profile_constant", diag.pi_profile_constant, "finite", diag.pi_profile_constant.is_finite()),
    ])
}

/// Summary of a power-counting scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSummary {
    /// log_gamma growth of the naive sums per depth unit over the second half of the scan.
    pub naive_log_slope: f64,
    /// Fitted C_d = (S_d - S_{d-1}) gamma^{theta d} of the renormalized sums, second half.
    pub tail_constants: Vec<f64>,
    /// max / min of the tail constants.
    pub tail_spread: f64,
}

/// Fits the naive growth and the renormalized tail constants of a scan.
pub fn scan_summary(rows: &[powercount::ScanRow], gamma: f64, theta: f64) -> ScanSummary {
    let half: Vec<&powercount::ScanRow> = rows.iter().filter(|r| r.depth > rows.len() / 2 && r.naive_sum > 0.0).collect();
    let xs: Vec<f64> = half.iter().map(|r| r.depth as f64).collect();
    let ys: Vec<f64> = half.iter().map(|r| r.naive_sum.ln() / gamma.ln()).collect();
    let naive_log_slope = if xs.len() >= 2 { crate::numerics::linear_fit(&xs, &ys).slope } else { f64::NAN };
    let tail_constants: Vec<f64> = rows
        .windows(2)
        .filter(|w| w[1].depth > rows.len() / 2)
        .map(|w| (w[1].renormalized_sum - w[0].renormalized_sum) * gamma.powf(theta * w[1].depth as f64))
        .collect();
    let hi = tail_constants.iter().cloned().fold(0.0, f64::max);
    let lo = tail_constants.iter().cloned().fold(f64::INFINITY, f64::min);
    ScanSummary { naive_log_slope, tail_spread: hi / lo, tail_constants }
}

fn run_powercount(cfg: &ExperimentConfig, o: &mut Output) -> Result<Vec<Certification>> {
    if !(cfg.gamma > 1.0) {
        return Err(Error::InvalidConfig(format!("gamma must exceed 1 (got {})", cfg.gamma)));
    }
    if cfg.depth < 4 {
        return Err(Error::InvalidConfig(format!("depth must be at least 4 (got {})", cfg.depth)));
    }
    if cfg.depth > powercount::MAX_WINDOW {
        return Err(Error::WindowTooLarge { size: cfg.depth, max: powercount::MAX_WINDOW });
    }
    let rows = powercount::summability_scan(cfg.n, cfg.legs, cfg.theta, cfg.gamma, cfg.depth)?;
    let mut w = o.create("powercount.csv")?;
    powercount::write_scan_csv(&mut w, cfg.legs, &rows)?;
    w.flush()?;
    let s = scan_summary(&rows, cfg.gamma, cfg.theta);
    o.json("powercount.json", &s)?;
    let mut certs = Vec::new();
    if cfg.legs == 2 {
        certs.push(Certification::new("naive_log_slope", s.naive_log_slope, "1.0 +- 0.1", (s.naive_log_slope - 1.0).abs() <= 0.1));
    }
    certs.push(Certification::new("renormalized_tail_spread", s.tail_spread, "finite and < 2", s.tail_spread.is_finite() && s.tail_spread < 2.0));
    Ok(certs)
}

/// 1 for configuration errors, 2 for everything else.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::DimensionTooLarge { .. } | Error::WindowTooLarge { .. } | Error::Io(_) => 1,
        _ => 2,
    }
}

/// Parses arguments, runs the experiment and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: invalid configuration: --jobs must be positive");
            return 1;
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let result = resolve_config(cli.command, cli.config.as_deref(), &cli.set).and_then(|cfg| run(cli.command, &cfg, &out));
    match result {
        Ok(report) => {
            for c in &report.certifications {
                println!("{} {} = {:.6e} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.condition);
            }
            println!("wrote {} files to {}", report.files.len(), out.display());
            if report.all_pass() {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            error_exit_code(&e)
        }
    }
}
