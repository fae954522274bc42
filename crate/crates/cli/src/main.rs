mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{sha256_hex, versions, Manifest, Outputs, Resolver};

#[derive(Parser)]
#[command(name = "torusfp", version, about = "Spectral Fokker-Planck sampling experiments on the torus")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// JSON config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Turn every bound comparison into a hard failure (exit 3).
    #[arg(long = "assert")]
    pub assert_mode: bool,
}

#[derive(Args, Clone, Default)]
pub struct Geometry {
    /// zero | cosine:z=1[,freq=f] | twowell:z=2 | invcos:z=4 | mlp:<file.json>
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub l: Option<f64>,
}

#[derive(Args, Clone, Default)]
pub struct PipelineArgs {
    /// Upsampled lattice size.
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// Evolution time, or `auto`.
    #[arg(long = "T")]
    pub t: Option<String>,
    /// Choose both M and T automatically.
    #[arg(long)]
    pub auto: bool,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Upper limit for automatic M.
    #[arg(long = "m-cap")]
    pub m_cap: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral derivative errors against analytic derivatives and the stated bounds.
    DeriveCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        l: Option<f64>,
        #[arg(long)]
        z: Option<f64>,
        /// Comma-separated lattice sizes.
        #[arg(long)]
        ns: Option<String>,
        #[arg(long)]
        emit: Option<String>,
    },
    /// Upsampling error table for a function family.
    Interpolate {
        #[command(flatten)]
        common: Common,
        /// expcos | invcos
        #[arg(long)]
        family: Option<String>,
        /// A value, a list `1,2,4`, or an inclusive range `1..8`.
        #[arg(long)]
        z: Option<String>,
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long = "n-max")]
        n_max: Option<usize>,
        #[arg(long)]
        l: Option<f64>,
        #[arg(long)]
        emit: Option<String>,
    },
    /// Generator spectrum and structural diagnostics.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        geom: Geometry,
        /// Build with W = E instead of W = E/2.
        #[arg(long = "no-halve")]
        no_halve: bool,
        /// Also write the dense operator.
        #[arg(long)]
        matrix: bool,
    },
    /// Exact evolution from the constant state with norm and decay diagnostics.
    Evolve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        geom: Geometry,
        #[arg(long = "T")]
        t: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        snapshots: Option<usize>,
    },
    /// End-to-end sampling with TV against the exact Gibbs density.
    Gibbs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        geom: Geometry,
        #[command(flatten)]
        pipe: PipelineArgs,
    },
    /// Fourier moment profile, fitted (C, a) and tail bounds of the Gibbs amplitude.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        geom: Geometry,
        #[arg(long = "m-max")]
        m_max: Option<usize>,
    },
    /// Aliasing witness pair for the lower bound.
    Witness {
        #[command(flatten)]
        common: Common,
        #[arg(long = "C")]
        c: Option<f64>,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long)]
        l: Option<f64>,
    },
    /// Monte Carlo estimate of E cos(2 pi x_0 / l) from pipeline samples.
    Mean {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        geom: Geometry,
        #[command(flatten)]
        pipe: PipelineArgs,
    },
}

pub struct Ctx {
    pub res: Resolver,
    pub out: Option<Outputs>,
    pub out_dir: PathBuf,
    pub assert_mode: bool,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl Ctx {
    fn new(common: &Common) -> torusfp::Result<Self> {
        let mut res = Resolver::new(common.config.as_deref())?;
        let out_dir: PathBuf = res.get("out", common.out.clone(), PathBuf::from("."))?;
        let assert_mode = res.switch("assert", common.assert_mode)?;
        Ok(Ctx { res, out: None, out_dir, assert_mode, violations: Vec::new(), warnings: Vec::new() })
    }

    /// Output sink, created on first use so that validation happens before anything is written.
    pub fn out(&mut self) -> torusfp::Result<&mut Outputs> {
        if self.out.is_none() {
            self.out = Some(Outputs::new(self.out_dir.clone())?);
        }
        Ok(self.out.as_mut().expect("just created"))
    }

    /// Records a bound comparison; failures count as violations.
    pub fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.violations.push(what());
        }
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("TORUSFP_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring TORUSFP_THREADS={v:?}"),
        }
    }
}

fn exit_for(e: &torusfp::Error) -> u8 {
    match e {
        torusfp::Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    let start = Instant::now();
    let (name, common) = match &cli.cmd {
        Command::DeriveCheck { common, .. } => ("derive-check", common),
        Command::Interpolate { common, .. } => ("interpolate", common),
        Command::Spectrum { common, .. } => ("spectrum", common),
        Command::Evolve { common, .. } => ("evolve", common),
        Command::Gibbs { common, .. } => ("gibbs", common),
        Command::Analyze { common, .. } => ("analyze", common),
        Command::Witness { common, .. } => ("witness", common),
        Command::Mean { common, .. } => ("mean", common),
    };
    let mut ctx = match Ctx::new(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    let run = match &cli.cmd {
        Command::DeriveCheck { d, l, z, ns, emit, .. } => {
            commands::derive_check(&mut ctx, *d, *l, *z, ns.clone(), emit.clone())
        }
        Command::Interpolate { family, z, m, n_max, l, emit, .. } => {
            commands::interpolate(&mut ctx, family.clone(), z.clone(), *m, *n_max, *l, emit.clone())
        }
        Command::Spectrum { geom, no_halve, matrix, .. } => commands::spectrum(&mut ctx, geom, *no_halve, *matrix),
        Command::Evolve { geom, t, eps, snapshots, .. } => {
            commands::evolve(&mut ctx, geom, t.clone(), *eps, *snapshots)
        }
        Command::Gibbs { geom, pipe, .. } => commands::gibbs(&mut ctx, geom, pipe),
        Command::Analyze { geom, m_max, .. } => commands::analyze(&mut ctx, geom, *m_max),
        Command::Witness { c, a, theta, n, l, .. } => commands::witness(&mut ctx, *c, *a, *theta, *n, *l),
        Command::Mean { geom, pipe, .. } => commands::mean(&mut ctx, geom, pipe),
    };
    if let Err(e) = run {
        eprintln!("error: {e}");
        return ExitCode::from(exit_for(&e));
    }
    // the output location does not change results, so it stays out of the hash
    let mut hashed = ctx.res.used().clone();
    hashed.remove("out");
    let params = serde_json::to_string(&hashed).expect("serializable");
    let artifacts = ctx.out.as_ref().map(|o| o.written.clone()).unwrap_or_default();
    let manifest = Manifest {
        subcommand: name,
        parameters: ctx.res.used(),
        config_hash: sha256_hex(params.as_bytes()),
        versions: versions(),
        wall_time_s: start.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        artifacts,
        violations: &ctx.violations,
        warnings: &ctx.warnings,
    };
    let written = serde_json::to_string_pretty(&manifest).map_err(torusfp::Error::from).and_then(|text| {
        let dir = ctx.out()?.dir.clone();
        std::fs::write(dir.join("manifest.json"), text + "\n").map_err(torusfp::Error::from)
    });
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(exit_for(&e));
    }
    for w in &ctx.warnings {
        eprintln!("warning: {w}");
    }
    for v in &ctx.violations {
        eprintln!("bound violation: {v}");
    }
    if ctx.assert_mode && !ctx.violations.is_empty() {
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
