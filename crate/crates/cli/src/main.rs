use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thurston_core::config::{parse_config, Config};
use thurston_core::quotient::euler_characteristic;
use thurston_core::render::Renderer;
use thurston_core::{bench, bundled, Error, GeometryKind};

#[derive(Parser)]
#[command(name = "thurston", version, about = "Ray tracing inside Thurston-geometry manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a config to a PPM (or PNG) image.
    Render(RenderArgs),
    /// Check the gluing data of a config's manifold.
    Validate {
        /// Config file, or the name of a bundled config.
        #[arg(long)]
        config: String,
    },
    /// Time geodesic evaluation and report speed drift.
    Bench {
        #[arg(long, default_value = "E3")]
        geometry: GeometryKind,
        #[arg(long, default_value_t = 100)]
        rays: usize,
        #[arg(long, default_value_t = 10.0)]
        t: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Start the exploration service.
    Serve {
        #[arg(long, default_value_t = thurston_service::DEFAULT_PORT)]
        port: u16,
    },
}

#[derive(Args)]
struct RenderArgs {
    /// Config file, or the name of a bundled config.
    #[arg(long, required_unless_present = "print_defaults")]
    config: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    spp: Option<u32>,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<(usize, usize)>,
    #[arg(long)]
    max_crossings: Option<u32>,
    /// Add the one-bounce indirect term.
    #[arg(long)]
    indirect: bool,
    /// Print the default config and exit.
    #[arg(long)]
    print_defaults: bool,
}

fn parse_resolution(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    Ok((w, h))
}

/// Failures mapped to exit codes: 1 for config problems, 2 for I/O.
enum Failure {
    Config(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(args) => cmd_render(args),
        Command::Validate { config } => cmd_validate(&config),
        Command::Bench { geometry, rays, t, seed } => cmd_bench(geometry, rays, t, seed),
        Command::Serve { port } => thurston_service::serve_blocking(port)
            .map(|()| ExitCode::SUCCESS)
            .map_err(|e| Failure::Io(e.to_string())),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Reads a config file, falling back to a bundled config of that name.
fn load_text(arg: &str) -> Result<(String, String), Failure> {
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{arg}: {e}")))?;
        let stem = path.file_stem().map_or("render".into(), |s| s.to_string_lossy().into_owned());
        return Ok((stem, text));
    }
    match bundled::get(arg) {
        Some(text) => Ok((arg.to_string(), text.to_string())),
        None => Err(Failure::Io(format!("{arg}: no such file or bundled config"))),
    }
}

fn cmd_render(args: RenderArgs) -> Result<ExitCode, Failure> {
    if args.print_defaults {
        print!("{}", Config::defaults().to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let (stem, text) = load_text(args.config.as_deref().expect("required by clap"))?;
    let mut config = Config::from_toml(&text)?;
    if let Some(seed) = args.seed {
        config.render.seed = seed;
    }
    if let Some(spp) = args.spp {
        config.render.spp = spp;
    }
    if let Some((w, h)) = args.resolution {
        config.render.width = w;
        config.render.height = h;
    }
    if let Some(n) = args.max_crossings {
        config.render.max_crossings = n;
    }
    if args.indirect {
        config.render.indirect = true;
    }
    config.validate()?;
    let setup = config.build()?;
    let output = args
        .output
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("{stem}.ppm")));

    let clock = Instant::now();
    let renderer = Renderer::new(&setup.manifold, &setup.scene, setup.settings)?;
    let (image, stats) = renderer.render(&setup.camera);
    let seconds = clock.elapsed().as_secs_f64();

    let is_png = output.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { image.png_bytes() } else { image.ppm_bytes() };
    std::fs::write(&output, bytes).map_err(|e| Failure::Io(format!("{}: {e}", output.display())))?;

    let hist: Vec<String> = stats
        .crossings
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(k, n)| format!("{k}:{n}"))
        .collect();
    println!("output={}", output.display());
    println!("manifold={}", setup.manifold.name);
    println!("width={}", image.width);
    println!("height={}", image.height);
    println!("seconds={seconds:.3}");
    println!("numeric_failures={}", stats.numeric_failures);
    println!("outside_chart={}", stats.outside_chart);
    println!("crossings={}", hist.join(","));
    if stats.numeric_failures > 0 {
        eprintln!("warning: {} pixels failed numerically", stats.numeric_failures);
    }
    if stats.outside_chart > 0 {
        eprintln!("warning: {} pixels left the coordinate chart", stats.outside_chart);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(arg: &str) -> Result<ExitCode, Failure> {
    let (_, text) = load_text(arg)?;
    let config = Config::from_toml(&text)?;
    let manifold = config.manifold.build()?;
    let report = manifold.validate();
    let c = &report.complex;
    println!("manifold={}", manifold.name);
    println!("geometry={}", manifold.kind());
    println!("vertices={}", c.vertices);
    println!("edges={}", c.edges);
    println!("faces={}", c.faces);
    println!("cells={}", c.cells);
    println!("euler={}", euler_characteristic(c));
    println!("complex={}", if c.derived { "derived" } else { "declared" });
    let cycles: Vec<String> = c.edge_cycles.iter().map(usize::to_string).collect();
    println!("edge_cycles={}", cycles.join(","));
    if let Some((lo, hi)) = report.dihedral_range {
        println!("dihedral_min_deg={lo:.6}");
        println!("dihedral_max_deg={hi:.6}");
    }
    if let Some(r) = report.edge_angle_residual {
        println!("edge_angle_residual={r:e}");
    }
    println!("roundtrip_residual={:e}", report.roundtrip_residual);
    println!("face_map_residual={:e}", report.face_map_residual);
    let unpaired: Vec<String> = report.unpaired_faces.iter().map(usize::to_string).collect();
    println!("unpaired_faces={}", unpaired.join(","));
    println!("valid={}", report.ok());
    if report.ok() {
        // scene problems do not affect the gluing verdict, but are worth a note
        if let Err(e) = parse_config(&text) {
            eprintln!("note: {e}");
        }
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gluing data failed validation");
        Ok(ExitCode::from(1))
    }
}

fn cmd_bench(kind: GeometryKind, rays: usize, t: f64, seed: u64) -> Result<ExitCode, Failure> {
    let report = bench::run(kind, rays, t, seed)?;
    print!("{}", report.summary());
    Ok(ExitCode::SUCCESS)
}
