//! `st`: one subcommand per processing step.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 numerical failure.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Arg, ArgAction, ArgMatches, Command};
use pxst::io::{parse_config, read_header, CxiPaths, ParamKind, RunConfig};
use pxst::pipeline::{execute, find_command, CommandSpec, Context, Params, Progress, COMMANDS};
use pxst::{Error, ErrorClass, Roi};

const COMMON: [&str; 6] = ["file", "config", "roi", "threads", "seed", "output_group"];

fn value_name(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Float => "FLOAT",
        ParamKind::Int => "INT",
        ParamKind::Bool => "BOOL",
        ParamKind::Text => "TEXT",
        ParamKind::Floats => "FLOATS",
        ParamKind::Ints => "INTS",
        ParamKind::Bools => "BOOLS",
    }
}

fn subcommand(spec: &'static CommandSpec) -> Command {
    let file_help = match spec.name {
        "simulate" => "scan file (or fixture directory) to create",
        _ => "CXI scan file",
    };
    let mut cmd = Command::new(spec.name)
        .about(spec.help)
        .arg(Arg::new("file").value_name("FILE").required(true).value_parser(clap::value_parser!(PathBuf)).help(file_help))
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .value_parser(clap::value_parser!(PathBuf))
                .help("configuration file; falls back to $ST_CONFIG"),
        )
        .arg(Arg::new("roi").long("roi").value_name("SS0,SS1,FS0,FS1").help("region of interest, half-open pixel ranges"))
        .arg(
            Arg::new("threads")
                .long("threads")
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help("worker threads; 1 gives bit-identical results run to run"),
        )
        .arg(Arg::new("seed").long("seed").value_name("K").value_parser(clap::value_parser!(u64)).help("random seed"))
        .arg(Arg::new("output_group").long("output-group").value_name("NAME").help("HDF5 group for outputs"))
        .next_help_heading("Parameters")
        .after_help(format!(
            "Parameters may also be set in the [{}] section of the configuration file; flags take precedence.",
            spec.name
        ));
    for p in spec.params {
        let default = if p.default.is_empty() { "unset".to_string() } else { p.default.to_string() };
        cmd = cmd.arg(
            Arg::new(p.name)
                .long(p.name)
                .value_name(value_name(p.kind))
                .action(ArgAction::Set)
                .allow_negative_numbers(true)
                .help(format!("{} [default: {default}]", p.help)),
        );
    }
    cmd
}

fn cli() -> Command {
    Command::new("st")
        .about("Speckle-tracking reconstruction pipeline")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands(COMMANDS.iter().map(subcommand))
}

fn parse_roi(text: &str, file: &std::path::Path, paths: &CxiPaths) -> pxst::Result<Roi> {
    let v: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Usage(format!("--roi {text}: expected four non-negative integers ss0,ss1,fs0,fs1")))?;
    let [a, b, c, d] = v[..] else {
        return Err(Error::Usage(format!("--roi {text}: expected four values, found {}", v.len())));
    };
    let shape = read_header(file, paths)?.frame_shape;
    Roi::new(a, b, c, d, shape).map_err(|e| Error::Usage(format!("--roi {text}: {e}")))
}

fn load_config(path: Option<PathBuf>) -> pxst::Result<Option<RunConfig>> {
    let Some(path) = path.or_else(|| std::env::var_os("ST_CONFIG").filter(|v| !v.is_empty()).map(PathBuf::from)) else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.clone()),
        _ => Error::Io(e),
    })?;
    let cfg = parse_config(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    for k in &cfg.unknown {
        log::warn!("{}: unknown configuration entry {k} ignored", path.display());
    }
    Ok(Some(cfg))
}

fn run(spec: &'static CommandSpec, m: &ArgMatches) -> pxst::Result<()> {
    let file = m.get_one::<PathBuf>("file").expect("required").clone();
    if let Some(&n) = m.get_one::<usize>("threads") {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("--threads: {e}")))?;
    }
    let paths = match m.get_one::<String>("output_group") {
        Some(g) => {
            let g = if g.starts_with('/') { g.clone() } else { format!("/{g}") };
            CxiPaths::with_output_group(&g).map_err(|e| Error::Usage(format!("--output-group: {e}")))?
        }
        None => CxiPaths::default(),
    };
    let roi = m.get_one::<String>("roi").map(|r| parse_roi(r, &file, &paths)).transpose()?;
    let ctx = Context { path: file, paths, roi, seed: m.get_one::<u64>("seed").copied().unwrap_or(0) };

    let config = load_config(m.get_one::<PathBuf>("config").cloned())?;
    let overrides: BTreeMap<String, String> = m
        .ids()
        .map(|id| id.as_str())
        .filter(|id| !COMMON.contains(id))
        .filter_map(|id| m.get_one::<String>(id).map(|v| (id.to_string(), v.clone())))
        .collect();
    let params = Params::resolve(spec, config.as_ref(), &overrides)?;

    if spec.name == "serve" {
        let port = params.usize("port")?;
        let port = u16::try_from(port).map_err(|_| Error::Usage(format!("port {port} out of range")))?;
        let static_dir = params.get("static_dir").map(|v| PathBuf::from(v.to_string())).filter(|d| !d.as_os_str().is_empty());
        return pxst_inspector::serve(pxst_inspector::ServeOptions { ctx, config, port, static_dir });
    }

    let summary = execute(&ctx, &params, &mut |p| {
        if let Progress::Iteration(it) = p {
            if it.iteration == 0 {
                println!("initial: total error {:.6e}", it.total_error);
            } else {
                println!("iteration {}/{}: total error {:.6e}", it.iteration, it.max_iters, it.total_error);
            }
        }
    })?;
    println!("{summary}");
    Ok(())
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    ExitCode::from(1)
                }
                _ => {
                    // Clap's message, without its usage and tip blocks, on one line.
                    let text = e.render().to_string();
                    let head = text.split("\n\n").next().unwrap_or("invalid arguments");
                    eprintln!("st: {}", one_line(head.trim_start_matches("error: ")));
                    ExitCode::from(1)
                }
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let spec = find_command(name).expect("subcommands come from the registry");
    match run(spec, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("st {name}: {}", one_line(&e.to_string()));
            ExitCode::from(exit_code(e.class()))
        }
    }
}
