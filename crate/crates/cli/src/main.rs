mod bench;
mod deploy;
mod project;
mod testenv;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fastiot::scaffold::ServiceKind;

/// Scaffold, validate, build and deploy IIoT microservice projects.
#[derive(Debug, Parser)]
#[command(
    name = "fastiot",
    version,
    propagate_version = true,
    allow_external_subcommands = true
)]
struct Cli {
    /// Run as if started in this directory.
    #[arg(
        short = 'C',
        long,
        global = true,
        env = "FASTIOT_PROJECT_DIR",
        value_name = "DIR"
    )]
    project_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a new project in a new directory.
    NewProject {
        name: String,
        /// Add a producer and a consumer service.
        #[arg(long)]
        samples: bool,
        /// Do not create a shared library crate.
        #[arg(long)]
        no_library: bool,
    },
    /// Add a service to the current project.
    NewService {
        name: String,
        #[arg(long, value_enum, default_value_t = Kind::Sample)]
        kind: Kind,
    },
    /// Copy a service directory from another project into this one.
    ImportService {
        /// Path to `src/services/<name>` of the other project.
        dir: PathBuf,
    },
    /// Check the project layout, manifests and deployments.
    Validate,
    /// Compile a deployment into build/deployments/<deployment>/.
    Config { deployment: String },
    /// Write (and optionally run) the image build script for a deployment.
    Build {
        #[arg(long, default_value = "default", env = "FASTIOT_DEPLOYMENT")]
        deployment: String,
        /// Tag replacing the deployment's default tag.
        #[arg(long, env = "FASTIOT_BUILD_TAG")]
        tag: Option<String>,
        /// Push images to their registry (builds every architecture).
        #[arg(long)]
        push: bool,
        /// Run the build commands instead of only writing the script.
        #[arg(long)]
        execute: bool,
    },
    /// Emit the inventory and playbook for a multi-host deployment.
    Rollout { deployment: String },
    /// Start, stop or inspect the local test infrastructure.
    TestEnv {
        #[command(subcommand)]
        action: TestEnvAction,
    },
    /// Measure end-to-end message latency through a broker.
    Bench {
        /// Messages per second.
        #[arg(long, default_value_t = fastiot::bench::DEFAULT_RATE, env = "FASTIOT_BENCH_RATE")]
        rate: u32,
        /// Number of messages.
        #[arg(long, default_value_t = fastiot::bench::DEFAULT_COUNT, env = "FASTIOT_BENCH_COUNT")]
        count: u32,
        /// Use an in-process loopback broker.
        #[arg(long, conflicts_with = "broker")]
        loopback: bool,
        /// Broker address; defaults to FASTIOT_BROKER_HOST and FASTIOT_BROKER_PORT.
        #[arg(long, value_name = "HOST:PORT")]
        broker: Option<String>,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run a loopback broker in the foreground until interrupted.
    Broker {
        /// Port to listen on; 0 picks a free one.
        #[arg(long, default_value_t = fastiot::broker::DEFAULT_PORT, env = "FASTIOT_BROKER_PORT")]
        port: u16,
        /// Write the bound port to this file once listening.
        #[arg(long, value_name = "FILE")]
        port_file: Option<PathBuf>,
    },
    /// Print the version.
    Version,
    #[command(external_subcommand)]
    External(Vec<OsString>),
}

#[derive(Debug, Subcommand)]
enum TestEnvAction {
    /// Start the infrastructure the project's services require.
    Start {
        /// Run a loopback broker instead of containers.
        #[arg(long)]
        loopback: bool,
    },
    /// Stop the running test infrastructure.
    Stop,
    /// Report whether each component is running.
    Status,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Sample,
    Bare,
    Producer,
    Consumer,
}

impl From<Kind> for ServiceKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Sample => ServiceKind::Sample,
            Kind::Bare => ServiceKind::Bare,
            Kind::Producer => ServiceKind::Producer,
            Kind::Consumer => ServiceKind::Consumer,
        }
    }
}

/// A failure caused by the invocation or the project, reported with exit code 1.
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user(msg: impl fmt::Display) -> anyhow::Error {
    UserError(msg.to_string()).into()
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
    let root = cli
        .project_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("."));
    match run(cli.command, &root) {
        Ok(code) => code,
        Err(e) if e.is::<UserError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command, root: &Path) -> anyhow::Result<ExitCode> {
    match command {
        Command::NewProject {
            name,
            samples,
            no_library,
        } => project::new_project(root, &name, samples, !no_library)?,
        Command::NewService { name, kind } => project::new_service(root, &name, kind.into())?,
        Command::ImportService { dir } => project::import_service(root, &dir)?,
        Command::Validate => project::validate(root)?,
        Command::Config { deployment } => deploy::config(root, &deployment)?,
        Command::Build {
            deployment,
            tag,
            push,
            execute,
        } => deploy::build(root, &deployment, tag, push, execute)?,
        Command::Rollout { deployment } => deploy::rollout(root, &deployment)?,
        Command::TestEnv { action } => match action {
            TestEnvAction::Start { loopback } => testenv::start(root, loopback)?,
            TestEnvAction::Stop => testenv::stop(root)?,
            TestEnvAction::Status => testenv::status(root)?,
        },
        Command::Bench {
            rate,
            count,
            loopback,
            broker,
            json,
        } => bench::bench(rate, count, loopback, broker.as_deref(), json)?,
        Command::Broker { port, port_file } => bench::broker(port, port_file.as_deref())?,
        Command::Version => println!("fastiot {}", env!("CARGO_PKG_VERSION")),
        Command::External(args) => return plugin(root, args),
    }
    Ok(ExitCode::SUCCESS)
}

/// Runs `fastiot-<cmd>` from PATH with the remaining arguments.
fn plugin(root: &Path, args: Vec<OsString>) -> anyhow::Result<ExitCode> {
    let (cmd, rest) = args.split_first().expect("clap passes the subcommand name");
    let exe = format!("fastiot-{}", cmd.to_string_lossy());
    let found = std::env::var_os("PATH")
        .map(|p| {
            std::env::split_paths(&p)
                .map(|d| d.join(&exe))
                .find(|c| c.is_file())
        })
        .unwrap_or_default();
    let Some(path) = found else {
        return Err(user(format!(
            "unknown command {:?}; no {exe} found on PATH. Run `fastiot --help` for usage",
            cmd.to_string_lossy()
        )));
    };
    let status = std::process::Command::new(path)
        .args(rest)
        .current_dir(root)
        .status()
        .map_err(|e| anyhow::anyhow!("cannot run {exe}: {e}"))?;
    Ok(ExitCode::from(
        status.code().unwrap_or(2).clamp(0, 255) as u8
    ))
}
