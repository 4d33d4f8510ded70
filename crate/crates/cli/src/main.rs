use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use steercert::bounds::{bound_report, expectation_density, functional_trace, lhs_exact_enumeration, BoundConfig};
use steercert::certifier::{
    certify_density, extract_and_compare, scrambled_instance, CertificationReport, CertifyConfig, CERTIFICATION_TOL,
    RELATION_TOL,
};
use steercert::correlations::{born_table_pure, depolarize};
use steercert::io::{load_state, parse_scenario, LoadedScenario, LoadedState, StateFile};
use steercert::linalg::StateVector;

#[derive(Parser)]
#[command(
    name = "steercert",
    version,
    about = "Steering functionals: LHS bounds, quantum bounds and self-testing checks"
)]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, env = "STEERCERT_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Realize the functional and reference state and write their summary.
    Build {
        #[command(flatten)]
        common: Common,
        /// Also write the ideal correlation table as CSV.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Quantum bound, analytical LHS bound and exact LHS value.
    Bound {
        #[command(flatten)]
        common: Common,
    },
    /// Run the self-testing checks on a state.
    Certify {
        #[command(flatten)]
        common: Common,
        /// `reference`, `scrambled`, `depolarized:V` or a state JSON file.
        #[arg(long, default_value = "reference")]
        state: String,
        /// Junk dimension per untrusted party for `scrambled`.
        #[arg(long, default_value_t = 2)]
        junk_dim: usize,
        /// Dimension of the unheld environment factor for `scrambled`.
        #[arg(long, default_value_t = 1)]
        env_dim: usize,
        /// Embed extraction unitaries and the junk state in the report.
        #[arg(long)]
        embed_matrices: bool,
    },
    /// Depolarizing-noise scan of the reference state, as CSV.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        v_min: f64,
        #[arg(long, default_value_t = 1.0)]
        v_max: f64,
        #[arg(long, default_value_t = 11)]
        steps: usize,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Certification tolerance (deficit, residuals, fidelity).
    #[arg(long, default_value_t = CERTIFICATION_TOL)]
    tol: f64,
    /// Tolerance on algebraic relations between observables.
    #[arg(long, default_value_t = RELATION_TOL)]
    relation_tol: f64,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    /// Optimizer restarts for the analytical LHS bounds.
    #[arg(long, default_value_t = 64)]
    restarts: usize,
    /// Maximum number of deterministic strategies to enumerate.
    #[arg(long, default_value_t = 1_000_000)]
    enum_cap: u64,
    /// Output path; standard output when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(anyhow::Error),
    Compute(anyhow::Error),
}

trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn compute(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
    fn compute(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Compute(e.into()))
    }
}

#[derive(Serialize)]
struct Meta {
    version: &'static str,
    seed: u64,
    cert_tol: f64,
    relation_tol: f64,
    restarts: usize,
    enum_cap: u64,
    scenario_sha256: String,
}

#[derive(Serialize)]
struct Output<'a, T: Serialize> {
    meta: &'a Meta,
    #[serde(flatten)]
    body: T,
}

struct Loaded {
    meta: Meta,
    scenario: LoadedScenario,
}

impl Common {
    fn validate(&self) -> anyhow::Result<()> {
        for (name, v) in [("--tol", self.tol), ("--relation-tol", self.relation_tol)] {
            if !(v.is_finite() && v > 0.0) {
                bail!("{name} must be a positive number, got {v}");
            }
        }
        if self.restarts == 0 {
            bail!("--restarts must be positive");
        }
        Ok(())
    }

    fn load(&self) -> Result<Loaded, Failure> {
        self.validate().input()?;
        let bytes =
            std::fs::read(&self.scenario).with_context(|| format!("reading {}", self.scenario.display())).input()?;
        let text = String::from_utf8(bytes.clone()).context("scenario file is not UTF-8").input()?;
        let file = parse_scenario(&text).with_context(|| format!("{}", self.scenario.display())).input()?;
        let scenario = file.resolve().with_context(|| format!("{}", self.scenario.display())).input()?;
        let meta = Meta {
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            cert_tol: self.tol,
            relation_tol: self.relation_tol,
            restarts: self.restarts,
            enum_cap: self.enum_cap,
            scenario_sha256: hex::encode(Sha256::digest(&bytes)),
        };
        Ok(Loaded { meta, scenario })
    }

    fn bound_config(&self) -> BoundConfig {
        BoundConfig { restarts: self.restarts, seed: self.seed, enum_cap: self.enum_cap }
    }

    fn certify_config(&self) -> CertifyConfig {
        CertifyConfig { relation_tol: self.relation_tol, cert_tol: self.tol }
    }
}

fn write_atomic(out: Option<&Path>, contents: &[u8]) -> anyhow::Result<()> {
    match out {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(contents)?;
            stdout.flush()?;
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let mut tmp =
                tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating file in {}", dir.display()))?;
            tmp.write_all(contents)?;
            tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(out: Option<&Path>, meta: &Meta, body: T) -> Result<(), Failure> {
    let mut text = serde_json::to_vec_pretty(&Output { meta, body }).compute()?;
    text.push(b'\n');
    write_atomic(out, &text).compute()
}

#[derive(Serialize)]
struct BuildSummary {
    family: steercert::operators::Family,
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    dims: Vec<usize>,
    term_count: usize,
    beta_q: f64,
    functional_trace: f64,
    ideal_observables: bool,
    blocks: Vec<String>,
    reference_state: StateFile,
}

fn cmd_build(common: &Common, table: Option<&Path>) -> Result<(), Failure> {
    let Loaded { meta, scenario } = common.load()?;
    let (params, s) = (&scenario.params, &scenario.scenario);
    let f = params.functional().compute()?;
    let psi = params.reference_state().compute()?;
    let summary = BuildSummary {
        family: params.family(),
        d: params.d(),
        n: params.n_parties(),
        dims: s.dims(),
        term_count: f.term_count(),
        beta_q: params.beta_q(),
        functional_trace: functional_trace(&f, s).compute()?,
        ideal_observables: scenario.ideal,
        blocks: f.expanded_blocks().into_iter().map(|b| b.label).collect(),
        reference_state: StateFile::pure(s.dims(), &psi),
    };
    if let Some(path) = table {
        let t = born_table_pure(&psi, s).compute()?;
        let mut buf = Vec::new();
        t.write_csv(&mut buf).compute()?;
        write_atomic(Some(path), &buf).compute()?;
    }
    write_json(common.out.as_deref(), &meta, summary)
}

fn cmd_bound(common: &Common) -> Result<(), Failure> {
    let Loaded { meta, scenario } = common.load()?;
    let report = bound_report(&scenario.params, &common.bound_config()).compute()?;
    write_json(common.out.as_deref(), &meta, report)
}

#[derive(Serialize)]
struct CertifyOutput {
    state_source: String,
    #[serde(flatten)]
    report: CertificationReport,
}

fn cmd_certify(common: &Common, state: &str, junk_dim: usize, env_dim: usize, embed: bool) -> Result<(), Failure> {
    let Loaded { meta, scenario } = common.load()?;
    let cfg = common.certify_config();
    let (params, s) = (&scenario.params, &scenario.scenario);
    let mut report = if state == "reference" {
        let psi = params.reference_state().compute()?;
        extract_and_compare(&psi, s, params, &cfg).compute()?
    } else if state == "scrambled" {
        if junk_dim == 0 || env_dim == 0 {
            return Err(Failure::Input(anyhow!("--junk-dim and --env-dim must be positive")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
        let junk = vec![junk_dim; params.n_parties() - 1];
        let inst = scrambled_instance(params, &junk, env_dim, &mut rng).compute()?;
        extract_and_compare(&inst.state, &inst.scenario, params, &cfg).compute()?
    } else if let Some(v) = state.strip_prefix("depolarized:") {
        let v: f64 = v.parse().with_context(|| format!("bad visibility in {state:?}")).input()?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Failure::Input(anyhow!("visibility {v} outside [0, 1]")));
        }
        let rho = depolarize(&params.reference_state().compute()?, v).compute()?;
        certify_density(&rho, s, params, &cfg).compute()?
    } else {
        let path = Path::new(state);
        let file = load_state(path).with_context(|| format!("{}", path.display())).input()?;
        let dims = s.dims();
        if file.dims.len() < dims.len() || file.dims[..dims.len()] != dims[..] || file.dims.len() > dims.len() + 1 {
            return Err(Failure::Input(anyhow!(
                "state dims {:?} do not match scenario dims {:?} (plus an optional environment factor)",
                file.dims,
                dims
            )));
        }
        match file.resolve().with_context(|| format!("{}", path.display())).input()? {
            LoadedState::Pure(psi) => extract_and_compare(&psi, s, params, &cfg).compute()?,
            LoadedState::Mixed(rho) => {
                if file.dims.len() != dims.len() {
                    return Err(Failure::Input(anyhow!("density matrices may not carry an environment factor")));
                }
                certify_density(&rho, s, params, &cfg).compute()?
            }
        }
    };
    if !embed {
        report.strip_matrices();
    }
    write_json(common.out.as_deref(), &meta, CertifyOutput { state_source: state.to_string(), report })
}

fn cmd_scan(common: &Common, v_min: f64, v_max: f64, steps: usize) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&v_min) || !(0.0..=1.0).contains(&v_max) || v_min > v_max || steps == 0 {
        return Err(Failure::Input(anyhow!("need 0 <= v-min <= v-max <= 1 and steps >= 1")));
    }
    if steps == 1 && v_min != v_max {
        return Err(Failure::Input(anyhow!("a single step needs v-min = v-max")));
    }
    let Loaded { meta, scenario } = common.load()?;
    let cfg = common.certify_config();
    let (params, s) = (&scenario.params, &scenario.scenario);
    let f = params.functional().compute()?;
    let psi: StateVector = params.reference_state().compute()?;
    let beta_q = params.beta_q();
    let lhs_exact = match lhs_exact_enumeration(&f, s, common.enum_cap) {
        Ok(r) => Some(r.value),
        Err(steercert::error::Error::EnumerationCap { .. }) => None,
        Err(e) => return Err(Failure::Compute(e.into())),
    };

    let mut out = String::new();
    out.push_str(&format!("# version={}\n", meta.version));
    out.push_str(&format!("# scenario_sha256={}\n", meta.scenario_sha256));
    out.push_str(&format!("# seed={}\n", meta.seed));
    out.push_str(&format!("# cert_tol={:e}\n# relation_tol={:e}\n", meta.cert_tol, meta.relation_tol));
    out.push_str(&format!("# enum_cap={}\n", meta.enum_cap));
    out.push_str("v,value,lhs_exact,beta_q,certified\n");
    for k in 0..steps {
        let v = if steps == 1 { v_min } else { v_min + (v_max - v_min) * k as f64 / (steps - 1) as f64 };
        let rho = depolarize(&psi, v).compute()?;
        let value = expectation_density(&f, s, &rho).compute()?;
        let report = certify_density(&rho, s, params, &cfg).compute()?;
        let lhs = lhs_exact.map(|x| format!("{x:.12}")).unwrap_or_default();
        out.push_str(&format!("{v:.6},{value:.12},{lhs},{beta_q:.12},{}\n", report.certified));
    }
    write_atomic(common.out.as_deref(), out.as_bytes()).compute()
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Input(anyhow!("STEERCERT_THREADS must be positive")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().compute()?;
    }
    match &cli.command {
        Command::Build { common, table } => cmd_build(common, table.as_deref()),
        Command::Bound { common } => cmd_bound(common),
        Command::Certify { common, state, junk_dim, env_dim, embed_matrices } => {
            cmd_certify(common, state, *junk_dim, *env_dim, *embed_matrices)
        }
        Command::Scan { common, v_min, v_max, steps } => cmd_scan(common, *v_min, *v_max, *steps),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
