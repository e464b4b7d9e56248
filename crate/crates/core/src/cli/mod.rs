//! Command-line front end.
//!
//! Settings are layered: built-in defaults, then the named preset, then the
//! `--config` file, then explicit flags. Exit codes are 0 on success, 1 for
//! usage and configuration errors, 2 for runtime failures.

pub mod image_io;
pub mod metrics;
pub mod presets;
pub mod synth;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::restore::{restore, Method, RestoreConfig};
use crate::sampler::{run_chain, SamplerConfig};

use image_io::{load_image, save_image};
use metrics::{export_edge_map, psnr, write_metrics};
use presets::{build_forward, build_prior, default_gradient_step, BlurParams, ExperimentPreset, MethodKind, PriorKind};
use synth::{add_noise, synthetic_scene};

#[derive(Parser, Debug)]
#[command(name = "gsm-diffusion", version, about = "Scale-mixture diffusion restoration and sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// MAP or mean-field denoising.
    Denoise(RunArgs),
    /// MAP or mean-field deconvolution of a Gaussian blur.
    Deblur(RunArgs),
    /// Conditional-mean estimate and mean edge map by Gibbs sampling.
    Sample(RunArgs),
    /// Write a synthetic test image.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Mean edge map output; the scaling goes to `<path>.txt`.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// em, meanfield or gd.
    #[arg(long)]
    method: Option<String>,
    /// gamma, two-point or exp.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long = "C", allow_negative_numbers = true)]
    c: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mu: Option<f64>,
    /// Noise standard deviation assumed by the model.
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// Outer iterations, or Gibbs sweeps for `sample`.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Relative change tolerance, or CG tolerance for `sample`.
    #[arg(long, allow_negative_numbers = true)]
    tol: Option<f64>,
    #[arg(long)]
    preset: Option<String>,
    /// Degrade the input with seeded noise of this standard deviation first.
    #[arg(long, allow_negative_numbers = true)]
    add_noise: Option<f64>,
    /// PSNR and objective trace, one value per line.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Clean image for PSNR.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// `key = value` file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    blur_radius: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    blur_sigma: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, allow_negative_numbers = true)]
    add_noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Task {
    Denoise,
    Deblur,
    Sample,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

/// Fills the unset fields of `args` from a `key = value` file.
fn merge_config(args: &mut RunArgs, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for (number, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected `key = value`", path.display(), number + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let file = || Some(base.join(value));
        macro_rules! fill {
            ($field:ident, $v:expr) => {
                if args.$field.is_none() {
                    args.$field = $v;
                }
            };
        }
        match key.replace('_', "-").as_str() {
            "input" => fill!(input, file()),
            "output" => fill!(output, file()),
            "edges" => fill!(edges, file()),
            "metrics" => fill!(metrics, file()),
            "reference" => fill!(reference, file()),
            "method" => fill!(method, Some(value.to_string())),
            "prior" => fill!(prior, Some(value.to_string())),
            "preset" => fill!(preset, Some(value.to_string())),
            "lambda" => fill!(lambda, Some(parse_value(key, value)?)),
            "C" | "c" => fill!(c, Some(parse_value(key, value)?)),
            "mu" => fill!(mu, Some(parse_value(key, value)?)),
            "sigma" => fill!(sigma, Some(parse_value(key, value)?)),
            "iters" => fill!(iters, Some(parse_value(key, value)?)),
            "burn-in" => fill!(burn_in, Some(parse_value(key, value)?)),
            "seed" => fill!(seed, Some(parse_value(key, value)?)),
            "tol" => fill!(tol, Some(parse_value(key, value)?)),
            "add-noise" => fill!(add_noise, Some(parse_value(key, value)?)),
            "blur-radius" => fill!(blur_radius, Some(parse_value(key, value)?)),
            "blur-sigma" => fill!(blur_sigma, Some(parse_value(key, value)?)),
            "config" => return Err(Error::Config("config files cannot include other config files".into())),
            other => return Err(Error::Config(format!("{}: unknown key `{other}`", path.display()))),
        }
    }
    Ok(())
}

/// Defaults when neither a preset nor the user says otherwise.
const DEFAULTS: ExperimentPreset = ExperimentPreset {
    name: "default",
    blur: Some(BlurParams { radius: 1, sigma: 1.0 }),
    ..presets::FIG2_DENOISE
};

fn resolve(task: Task, args: &RunArgs) -> Result<ExperimentPreset> {
    if task == Task::Sample && args.method.is_some() {
        return Err(Error::Config("`method` does not apply to `sample`".into()));
    }
    if task != Task::Sample && args.burn_in.is_some() {
        return Err(Error::Config("`burn-in` only applies to `sample`".into()));
    }
    if task == Task::Denoise && (args.blur_radius.is_some() || args.blur_sigma.is_some()) {
        return Err(Error::Config("blur settings only apply to `deblur`".into()));
    }
    let base = match &args.preset {
        Some(name) => presets::preset(name)?,
        None => DEFAULTS,
    };
    let mut s = base;
    if let Some(m) = &args.method {
        s.method = MethodKind::parse(m)?;
    }
    if let Some(p) = &args.prior {
        s.prior = PriorKind::parse(p)?;
    }
    s.lambda = args.lambda.unwrap_or(s.lambda);
    s.c = args.c.unwrap_or(s.c);
    s.mu = args.mu.unwrap_or(s.mu);
    s.sigma = args.sigma.unwrap_or(s.sigma);
    s.iterations = args.iters.unwrap_or(s.iterations);
    s.tol = args.tol.unwrap_or(s.tol);
    s.seed = args.seed.unwrap_or(s.seed);
    s.burn_in = match args.burn_in {
        Some(b) => b,
        None if args.iters.is_some() || base.burn_in == 0 => s.iterations / 5,
        None => s.burn_in,
    };
    s.blur = match task {
        Task::Denoise => None,
        Task::Deblur => {
            let b = base.blur.unwrap_or(BlurParams { radius: 1, sigma: 1.0 });
            Some(BlurParams {
                radius: args.blur_radius.unwrap_or(b.radius),
                sigma: args.blur_sigma.unwrap_or(b.sigma),
            })
        }
        Task::Sample => base.blur,
    };
    if !(s.sigma > 0.0) || !s.sigma.is_finite() {
        return Err(Error::Config(format!("sigma must be positive, got {}", s.sigma)));
    }
    if let Some(n) = args.add_noise {
        if !(n >= 0.0) || !n.is_finite() {
            return Err(Error::Config(format!("add-noise must be nonnegative, got {n}")));
        }
    }
    Ok(s)
}

fn restore_config(s: &ExperimentPreset) -> Result<RestoreConfig<crate::priors::ScaleMixturePrior>> {
    let prior = build_prior(s.prior, s.lambda, s.c, s.mu)?;
    let method = match s.method {
        MethodKind::Em => Method::Em,
        MethodKind::MeanField => Method::mean_field(),
        MethodKind::GradientDescent => Method::GradientDescent {
            step: default_gradient_step(&prior, s.sigma),
        },
    };
    let mut config = RestoreConfig::new(prior, build_forward(s.blur)?, s.sigma, method);
    config.max_outer_iters = s.iterations;
    config.outer_tol = s.tol;
    config.validate()?;
    Ok(config)
}

fn sampler_config(s: &ExperimentPreset) -> Result<SamplerConfig<crate::priors::ScaleMixturePrior>> {
    let mut config = SamplerConfig::new(
        build_prior(s.prior, s.lambda, s.c, s.mu)?,
        build_forward(s.blur)?,
        s.sigma,
        s.iterations,
        s.seed,
    );
    config.burn_in = s.burn_in;
    config.cg.tol = s.tol;
    config.validate()?;
    Ok(config)
}

/// Noise gets its own stream so that it does not share draws with the sampler.
fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x6e6f_6973_6500_0000
}

fn run(task: Task, mut args: RunArgs) -> Result<()> {
    if let Some(path) = args.config.clone() {
        merge_config(&mut args, &path)?;
    }
    let settings = resolve(task, &args)?;
    let input = args.input.as_ref().ok_or_else(|| Error::Config("missing --input".into()))?;
    let output = args.output.as_ref().ok_or_else(|| Error::Config("missing --output".into()))?;

    // Validate before any expensive work or file output.
    enum Job {
        Restore(RestoreConfig<crate::priors::ScaleMixturePrior>),
        Sample(SamplerConfig<crate::priors::ScaleMixturePrior>),
    }
    let job = match task {
        Task::Sample => Job::Sample(sampler_config(&settings)?),
        _ => Job::Restore(restore_config(&settings)?),
    };
    let forward = build_forward(settings.blur)?;

    let loaded = load_image(input)?;
    let (observed, implicit_reference) = match args.add_noise {
        Some(noise) => {
            let degraded = add_noise(&forward.apply(&loaded), noise, noise_seed(settings.seed))?;
            (degraded, Some(loaded))
        }
        None => (loaded, None),
    };
    let reference = match &args.reference {
        Some(path) => Some(load_image(path)?),
        None => implicit_reference,
    };

    let (estimate, weights, trace) = match job {
        Job::Restore(config) => {
            let result = restore(&config, &observed)?;
            (result.u, result.xi0, result.objective_trace)
        }
        Job::Sample(config) => {
            let out = run_chain(&config, &observed)?;
            (out.mean_u, out.mean_z, Vec::new())
        }
    };
    save_image(&estimate, output)?;
    if let Some(path) = &args.edges {
        export_edge_map(&weights, path)?;
    }
    if let Some(path) = &args.metrics {
        let score = match &reference {
            Some(r) => Some(psnr(&estimate, r)?),
            None => None,
        };
        write_metrics(path, score, &trace)?;
    }
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let scene = synthetic_scene(args.size, args.channels)?;
    let image: ImageGrid = match args.add_noise {
        Some(s) => add_noise(&scene.clean, s, args.seed)?,
        None => scene.clean,
    };
    save_image(&image, &args.output)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::MissingCapability { .. } => 1,
        Error::OuterIteration { source, .. } => exit_code(source),
        _ => 2,
    }
}

/// Runs the tool on `args` (including the program name) and returns the exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Denoise(a) => run(Task::Denoise, a),
        Command::Deblur(a) => run(Task::Deblur, a),
        Command::Sample(a) => run(Task::Sample, a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let code = exit_code(&err);
            if code == 1 {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> RunArgs {
        let mut argv = vec!["gsm-diffusion", "denoise"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Denoise(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_config_which_overrides_preset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# comment\npreset = fig3-deblur\nsigma = 0.05  # inline\nlambda = 7\n").unwrap();
        let mut a = args(&["--config", cfg.to_str().unwrap(), "--lambda", "9"]);
        merge_config(&mut a, &cfg).unwrap();
        let s = resolve(Task::Deblur, &a).unwrap();
        assert_eq!((s.lambda, s.sigma, s.c), (9.0, 0.05, 4e3));
        assert_eq!(s.blur, Some(BlurParams { radius: 1, sigma: 1.0 }));
    }

    #[test]
    fn invalid_combinations_are_usage_errors() {
        assert!(resolve(Task::Denoise, &args(&["--sigma", "-1"])).is_err());
        assert!(resolve(Task::Denoise, &args(&["--burn-in", "3"])).is_err());
        assert!(resolve(Task::Sample, &args(&["--method", "em"])).is_err());
        assert!(resolve(Task::Denoise, &args(&["--blur-radius", "2"])).is_err());
        assert!(resolve(Task::Denoise, &args(&["--preset", "nope"])).is_err());
        assert!(resolve(Task::Denoise, &args(&["--method", "newton"])).is_err());
        assert_eq!(main(["gsm-diffusion", "denoise", "--bogus"]), 1);
        assert_eq!(main(["gsm-diffusion", "--help"]), 0);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        std::fs::write(&cfg, "sigma = 0.1\nfoo = 1\n").unwrap();
        assert!(merge_config(&mut RunArgs::default(), &cfg).is_err());
        std::fs::write(&cfg, "sigma 0.1\n").unwrap();
        assert!(merge_config(&mut RunArgs::default(), &cfg).is_err());
    }

    #[test]
    fn sample_defaults_follow_preset_burn_in() {
        let s = resolve(Task::Sample, &args(&["--preset", "fig4-msprior"])).unwrap();
        assert_eq!((s.iterations, s.burn_in), (100, 20));
        let s = resolve(Task::Sample, &args(&["--preset", "fig4-msprior", "--iters", "50"])).unwrap();
        assert_eq!(s.burn_in, 10);
    }
}
