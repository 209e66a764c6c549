use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use nymkit::ctl::{dispatch, serve, CtlClient, CtlError, CtlService, Shared, Verb, PASSWORD_ENV, SOCK_ENV};
use nymkit::hostnym::{DriverProfile, HostDiskImage, OsLabel};
use nymkit::nymcore::{Engine, EngineConfig};
use nymkit::snapstore::{LocalDir, MockCloud};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "nym", version, about = "Create, store and isolate pseudonymous browsing environments")]
struct Cli {
    /// Control socket of a running `nym serve`.
    #[arg(long, env = SOCK_ENV, global = true)]
    sock: Option<PathBuf>,
    /// Engine configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory backing the `local` storage backend.
    #[arg(long, env = "NYMKIT_DATA", global = true)]
    data: Option<PathBuf>,
    /// Run against a one-shot in-process engine even if a server is up.
    #[arg(long, global = true)]
    in_process: bool,
    /// Print raw JSON responses.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the engine and listen on the control socket.
    Serve,
    /// Start a fresh nym.
    Create {
        #[arg(long, default_value = "ephemeral")]
        mode: String,
        #[arg(long)]
        transport: Option<String>,
    },
    /// Restore a stored nym. The password is read from the environment or prompted for.
    Load {
        object: String,
        #[arg(long, default_value = "cloud")]
        backend: String,
        #[arg(long)]
        version: Option<u64>,
    },
    /// Store a persistent nym.
    Store {
        nym: String,
        object: String,
        #[arg(long, default_value = "cloud")]
        backend: String,
    },
    /// Save a preconfigured nym as its boot image.
    Snapshot {
        nym: String,
        object: String,
        #[arg(long, default_value = "cloud")]
        backend: String,
    },
    Terminate {
        nym: String,
    },
    List,
    /// Show what a scrub would find and change in a host file.
    Scrub {
        path: PathBuf,
        #[arg(long, default_value_t = 2)]
        paranoia: u8,
    },
    /// Sanitize a host file and hand it to a nym.
    Transfer {
        nym: String,
        path: PathBuf,
        #[arg(long, default_value_t = 2)]
        paranoia: u8,
    },
    /// Sweep the network fabric for isolation violations.
    Probe,
    Report {
        #[arg(long, default_value = "phases")]
        kind: String,
    },
    /// Boot an installed OS from a disk image behind a copy-on-write layer.
    HostBoot {
        image: PathBuf,
        #[arg(long)]
        repair: bool,
        #[arg(long)]
        transport: Option<String>,
    },
    /// Write a synthetic host disk image.
    HostImage {
        out: PathBuf,
        #[arg(long, default_value = "windows7")]
        os: String,
        #[arg(long, default_value = "bare-metal")]
        profile: String,
        #[arg(long, default_value_t = 4096)]
        block_size: usize,
        #[arg(long, default_value_t = 256)]
        blocks: usize,
    },
    /// Stream engine events from a running server.
    Watch,
    /// Answer a pending transfer approval.
    Approve {
        request: u64,
        #[arg(long)]
        deny: bool,
    },
}

#[derive(Debug)]
struct Failure(String);

impl From<CtlError> for Failure {
    fn from(e: CtlError) -> Self {
        match e {
            CtlError::Remote(m) => Failure(m),
            e => Failure(format!("{}: {e}", e.kind())),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure(format!("Io: {e}"))
    }
}

fn password() -> Result<String, Failure> {
    if let Ok(p) = std::env::var(PASSWORD_ENV) {
        return Ok(p);
    }
    rpassword::prompt_password("nym password: ").map_err(|e| Failure(format!("Io: cannot read password: {e}")))
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    Ok(std::path::absolute(p)?)
}

fn request(cmd: &Cmd) -> Result<Option<(Verb, Value)>, Failure> {
    Ok(Some(match cmd {
        Cmd::Create { mode, transport } => (Verb::Create, json!({ "mode": mode, "transport": transport })),
        Cmd::Load { object, backend, version } => (
            Verb::Load,
            json!({ "object": object, "password": password()?, "backend": backend, "version": version }),
        ),
        Cmd::Store { nym, object, backend } => {
            (Verb::Store, json!({ "nym": nym, "object": object, "password": password()?, "backend": backend }))
        }
        Cmd::Snapshot { nym, object, backend } => {
            (Verb::Snapshot, json!({ "nym": nym, "object": object, "password": password()?, "backend": backend }))
        }
        Cmd::Terminate { nym } => (Verb::Terminate, json!({ "nym": nym })),
        Cmd::List => (Verb::List, json!({})),
        Cmd::Scrub { path, paranoia } => (Verb::Scrub, json!({ "path": absolute(path)?, "paranoia": paranoia })),
        Cmd::Transfer { nym, path, paranoia } => {
            (Verb::Transfer, json!({ "nym": nym, "path": absolute(path)?, "paranoia": paranoia }))
        }
        Cmd::Probe => (Verb::Probe, json!({})),
        Cmd::Report { kind } => (Verb::Report, json!({ "kind": kind })),
        Cmd::HostBoot { image, repair, transport } => {
            (Verb::HostBoot, json!({ "image": absolute(image)?, "repair": repair, "transport": transport }))
        }
        Cmd::Serve | Cmd::HostImage { .. } | Cmd::Watch | Cmd::Approve { .. } => return Ok(None),
    }))
}

fn build_shared(cli: &Cli) -> Result<Shared, Failure> {
    let config = match &cli.config {
        Some(p) => EngineConfig::from_toml(&std::fs::read_to_string(p)?).map_err(|e| Failure(format!("BadConfig: {e}")))?,
        None => EngineConfig::default(),
    };
    let engine = Engine::new(config).map_err(|e| Failure::from(CtlError::from(e)))?;
    let mut svc = CtlService::new(engine);
    let mut cloud = MockCloud::new("cloud.example").with_account("local", "local");
    cloud.login("local", "local").expect("fresh account");
    svc.add_backend("cloud", Box::new(cloud));
    let data = cli.data.clone().unwrap_or_else(|| PathBuf::from(".nymkit"));
    let local = LocalDir::open(data.join("objects")).map_err(|e| Failure(format!("Io: {e}")))?;
    svc.add_backend("local", Box::new(local));
    Ok(Shared::new(svc))
}

fn sock_path(cli: &Cli) -> PathBuf {
    cli.sock.clone().unwrap_or_else(|| std::env::temp_dir().join("nymkit.sock"))
}

fn render(verb: Verb, v: &Value) -> String {
    let s = |k: &str| v[k].as_str().map(str::to_owned).unwrap_or_else(|| v[k].to_string());
    match verb {
        Verb::Create | Verb::Load | Verb::HostBoot => s("id"),
        Verb::Store | Verb::Snapshot => format!("{} v{} {} bytes", s("object"), s("version"), s("archive_bytes")),
        Verb::Terminate => format!("{} terminated", s("nym")),
        Verb::List => v
            .as_array()
            .map(|rows| {
                rows.iter()
                    .map(|r| format!("{}\t{}\t{}\t{}", r["id"].as_str().unwrap_or(""), r["mode"].as_str().unwrap_or(""),
                        r["state"].as_str().unwrap_or(""), r["transport"].as_str().unwrap_or("")))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .unwrap_or_default(),
        Verb::Probe => {
            let violations = v["violations"].as_array().cloned().unwrap_or_default();
            let mut out = format!("attempted {} delivered {} violations {}", s("attempted"), s("delivered"), violations.len());
            for x in violations {
                out.push_str(&format!("\n  {} -> {} ({})", x["src"].as_str().unwrap_or(""), x["dst"].as_str().unwrap_or(""),
                    x["proto"].as_str().unwrap_or("")));
            }
            out
        }
        _ => serde_json::to_string_pretty(v).expect("json"),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.cmd {
        Cmd::Serve => {
            let path = sock_path(&cli);
            let server = serve(&path, Arc::new(build_shared(&cli)?))?;
            eprintln!("listening on {}", path.display());
            server.join();
            return Ok(());
        }
        Cmd::HostImage { out, os, profile, block_size, blocks } => {
            let os: OsLabel = os.parse().map_err(|e: String| Failure(format!("BadRequest: {e}")))?;
            let profile = match profile.as_str() {
                "bare-metal" => DriverProfile::BareMetal,
                "virtual" => DriverProfile::Virtual,
                other => return Err(Failure(format!("BadRequest: unknown driver profile {other:?}"))),
            };
            std::fs::write(out, HostDiskImage::synthetic(os, profile, *block_size, *blocks).encode())?;
            return Ok(());
        }
        Cmd::Watch => {
            let mut c = CtlClient::connect(&sock_path(&cli))?;
            c.subscribe()?;
            loop {
                if let Some(ev) = c.next_event(Duration::from_secs(3600))? {
                    println!("{}", serde_json::to_string(&ev).expect("json"));
                }
            }
        }
        Cmd::Approve { request, deny } => {
            let mut c = CtlClient::connect(&sock_path(&cli))?;
            c.call("approve", json!({ "request": request, "approve": !deny }))?;
            return Ok(());
        }
        _ => {}
    }
    let (verb, args) = request(&cli.cmd)?.expect("engine verb");
    let path = sock_path(&cli);
    let remote = if cli.in_process { None } else { CtlClient::connect(&path).ok() };
    let value = match remote {
        Some(mut c) => c.call(verb.name(), args)?,
        None => {
            if !cli.in_process {
                eprintln!("warning: no server at {}; using a one-shot engine, nothing outlives this command", path.display());
            }
            dispatch(&build_shared(&cli)?, verb.name(), args)?
        }
    };
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&value).expect("json"));
    } else {
        println!("{}", render(verb, &value));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}
