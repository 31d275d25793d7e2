use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use advmri::attack::{
    fgsm_attack, lift_to_kspace_min_l2, random_perturbation, read_perturbation, write_perturbation, AttackConfig,
    AttackMetadata,
};
use advmri::cgsense::cgsense;
use advmri::coilmaps::{espirit, EspiritConfig};
use advmri::cs::{cs_reconstruct, write_trace_csv, CsConfig};
use advmri::datamodel::cfl::{read_coils, read_image, read_kspace, write_coils, write_image, write_kspace};
use advmri::datamodel::{
    make_random_mask, make_uniform_mask, random_phantom, shepp_logan, simulate_coils, synthesize_kspace, SamplingMask,
    SimulationConfig,
};
use advmri::grappa::{calibrate_kernel, grappa_reconstruct, write_weights, GrappaGeometry};
use advmri::harness::{emit_png, render_report, run_experiment, ExperimentConfig, Window};
use advmri::unrolled::{fgsm_unrolled, load_weights, save_weights, train_toy, unitwise_attack_response, unrolled_forward, TrainConfig};
use advmri::{ComplexImage, EncodingContext, MultiCoilKspace};

#[derive(Parser)]
#[command(name = "advmri", version, about = "Multi-coil MRI reconstruction and adversarial stability analysis")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with parameters for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for every random draw of the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a phantom and simulate coil maps and fully sampled k-space.
    Phantom(PhantomArgs),
    /// Build a ky sampling mask (`mask.json`).
    Mask(MaskArgs),
    /// Estimate ESPIRiT coil maps from the ACS block.
    Maps(DataArgs),
    /// Reconstruct undersampled data.
    Recon(ReconArgs),
    /// FGSM perturbation through unrolled CG, plus the matched random baseline.
    Attack(AttackArgs),
    /// Minimum-norm k-space lift of an image perturbation.
    Lift(LiftArgs),
    /// Train the toy unrolled network.
    Train,
    /// Run an experiment grid from a TOML config.
    Experiment,
    /// Print the metrics table of a finished experiment.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    SheppLogan,
    Random,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, value_enum, default_value = "shepp-logan")]
    kind: PhantomKind,
    #[arg(long, default_value_t = 128)]
    ny: usize,
    #[arg(long, default_value_t = 128)]
    nx: usize,
    #[arg(long, default_value_t = 8)]
    nc: usize,
    /// k-space noise standard deviation per real component.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Uniform,
    Random,
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long, value_enum, default_value = "uniform")]
    kind: MaskArg,
    #[arg(long, default_value_t = 128)]
    ny: usize,
    #[arg(long, short = 'r', default_value_t = 4)]
    acceleration: usize,
    #[arg(long, default_value_t = 24)]
    acs: usize,
}

#[derive(Args)]
struct DataArgs {
    /// Multi-coil k-space (CFL base path); unsampled lines are zeroed by the mask.
    #[arg(long)]
    kspace: PathBuf,
    /// Mask written by `advmri mask`.
    #[arg(long)]
    mask: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Cgsense,
    Grappa,
    Cs,
    Unrolled,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(value_enum)]
    method: Method,
    #[command(flatten)]
    data: DataArgs,
    /// Coil maps (CFL base path); not needed for GRAPPA.
    #[arg(long)]
    maps: Option<PathBuf>,
    /// Image-domain perturbation added to the zero-filled image (CFL base path).
    #[arg(long)]
    perturbation: Option<PathBuf>,
    /// k-space perturbation added to the data before GRAPPA (CFL base path).
    #[arg(long)]
    kspace_perturbation: Option<PathBuf>,
    /// CG iterations for CG-SENSE.
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Network directory for the unrolled method.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Ridge for GRAPPA calibration.
    #[arg(long, default_value_t = 1e-3)]
    ridge: f64,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    maps: PathBuf,
    /// Reference image; defaults to the coil-combined input k-space, which must then be fully sampled.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Attack the unrolled network in this directory instead of unrolled CG.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Also write minimum-norm k-space lifts.
    #[arg(long)]
    lift: bool,
}

#[derive(Args)]
struct LiftArgs {
    /// Image perturbation (CFL base path with JSON sidecar).
    #[arg(long)]
    perturbation: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    maps: PathBuf,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn read_mask(path: &Path) -> Result<SamplingMask> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading mask {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing mask {}", path.display()))
}

fn undersampled(kspace: &Path, mask: &SamplingMask) -> Result<MultiCoilKspace> {
    let y = read_kspace(kspace).with_context(|| format!("reading k-space {}", kspace.display()))?;
    if y.ny() != mask.ny() {
        bail!("mask has {} lines but k-space has {}", mask.ny(), y.ny());
    }
    let nx = y.nx();
    let mut out = y;
    for c in 0..out.nc() {
        for (ky, row) in out.coil_mut(c).chunks_mut(nx).enumerate() {
            if !mask.is_sampled(ky) {
                row.fill(advmri::Complex64::new(0.0, 0.0));
            }
        }
    }
    Ok(out)
}

fn context(maps: &Path, mask: &SamplingMask) -> Result<EncodingContext> {
    let coils = read_coils(maps).with_context(|| format!("reading coil maps {}", maps.display()))?;
    Ok(EncodingContext::new(coils, mask.clone())?)
}

fn save_image(out: &Path, name: &str, img: &ComplexImage) -> Result<()> {
    write_image(out.join(name), img)?;
    emit_png(img, out.join(format!("{name}.png")), Window::Auto)?;
    Ok(())
}

fn phantom(c: &Common, a: &PhantomArgs) -> Result<()> {
    let seed = c.seed.unwrap_or(0);
    let x = match a.kind {
        PhantomKind::SheppLogan => shepp_logan(a.ny, a.nx)?,
        PhantomKind::Random => random_phantom(a.ny, a.nx, seed)?,
    };
    let coils = simulate_coils(a.nc, a.ny, a.nx)?;
    let sim = SimulationConfig { nc: a.nc, ny: a.ny, nx: a.nx, noise_sigma: a.noise, seed };
    let y = synthesize_kspace(&x, &coils, &SamplingMask::full(a.ny), &sim)?;
    save_image(&c.out, "phantom", &x)?;
    write_coils(c.out.join("coils"), &coils)?;
    write_kspace(c.out.join("kspace"), &y)?;
    Ok(())
}

fn mask(c: &Common, a: &MaskArgs) -> Result<()> {
    let m = match a.kind {
        MaskArg::Uniform => make_uniform_mask(a.ny, a.acceleration, a.acs)?,
        MaskArg::Random => make_random_mask(a.ny, a.acceleration, a.acs, c.seed.unwrap_or(0))?,
    };
    std::fs::write(c.out.join("mask.json"), serde_json::to_string_pretty(&m)?)?;
    println!("{} of {} lines sampled", m.count(), m.ny());
    Ok(())
}

fn maps(c: &Common, a: &DataArgs) -> Result<()> {
    let cfg: EspiritConfig = load_toml(c.config.as_deref())?;
    let m = read_mask(&a.mask)?;
    let y = undersampled(&a.kspace, &m)?;
    let acs = y.extract_lines(m.acs_start(), m.acs_count())?;
    let res = espirit(&acs, y.ny(), y.nx(), &cfg)?;
    write_coils(c.out.join("maps"), &res.maps)?;
    println!("kept {} kernels", res.kept_kernels);
    Ok(())
}

fn recon(c: &Common, a: &ReconArgs) -> Result<()> {
    let m = read_mask(&a.data.mask)?;
    let mut y = undersampled(&a.data.kspace, &m)?;
    let need_maps = || a.maps.as_deref().context("--maps is required for this method");
    let image = match a.method {
        Method::Grappa => {
            if let Some(q) = &a.kspace_perturbation {
                y = y.add(&read_kspace(q)?)?;
            }
            let geometry: GrappaGeometry = load_toml(c.config.as_deref())?;
            let acs = y.extract_lines(m.acs_start(), m.acs_count())?;
            let w = calibrate_kernel(&acs, m.acs_start(), m.acceleration(), geometry, a.ridge)?;
            write_weights(c.out.join("grappa_weights"), &w)?;
            grappa_reconstruct(&y, &w, &m)?.1
        }
        method => {
            let ctx = context(need_maps()?, &m)?;
            let mut z = ctx.apply_eh(&y)?;
            if let Some(p) = &a.perturbation {
                z = z.add(&read_image(p)?);
            }
            match method {
                Method::Cgsense => {
                    if a.perturbation.is_none() {
                        cgsense(&y, &ctx, a.iters)?
                    } else {
                        advmri::cgsense::cgsense_from_zero_filled(&z, &ctx, a.iters)?
                    }
                }
                Method::Cs => {
                    let cfg: CsConfig = load_toml(c.config.as_deref())?;
                    let out = if a.perturbation.is_none() {
                        cs_reconstruct(&y, &ctx, &cfg)?
                    } else {
                        advmri::cs::cs_from_zero_filled(&z, &ctx, &cfg)?
                    };
                    write_trace_csv(c.out.join("cs_trace.csv"), &out.trace)?;
                    out.image
                }
                Method::Unrolled => {
                    let dir = a.weights.as_deref().context("--weights is required for the unrolled method")?;
                    unrolled_forward(&ctx, &z, &load_weights(dir)?)?
                }
                Method::Grappa => unreachable!(),
            }
        }
    };
    save_image(&c.out, "recon", &image)
}

fn attack(c: &Common, a: &AttackArgs) -> Result<()> {
    let mut cfg: AttackConfig = load_toml(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let m = read_mask(&a.data.mask)?;
    let ctx = context(&a.maps, &m)?;
    let x_ref = match &a.reference {
        Some(p) => read_image(p)?,
        None => ctx.coil_combine(&read_kspace(&a.data.kspace)?)?,
    };
    let y = undersampled(&a.data.kspace, &m)?;
    let z = ctx.apply_eh(&y)?;
    let eps = cfg.epsilon.resolve(&z)?;
    let fgsm = match &a.network {
        None => fgsm_attack(&ctx, &z, &x_ref, &cfg)?,
        Some(dir) => {
            let w = load_weights(dir)?;
            let p = fgsm_unrolled(&ctx, &z, &x_ref, &w, eps)?;
            let rep = unitwise_attack_response(&ctx, &z, &p, &w)?;
            std::fs::write(c.out.join("unitwise.json"), serde_json::to_string_pretty(&rep)?)?;
            println!("d_reg {:.4e}  d_dc {:.4e}  d_full {:.4e}", rep.d_reg, rep.d_dc, rep.d_full);
            p
        }
    };
    let baseline = random_perturbation(z.ny(), z.nx(), eps, cfg.seed)?;
    for (name, p) in [("fgsm", &fgsm), ("random", &baseline)] {
        let lift = if a.lift { Some(lift_to_kspace_min_l2(&ctx, &p.r, 500, 1e-6)?) } else { None };
        let meta = AttackMetadata {
            kind: name.into(),
            epsilon: p.epsilon_used,
            loss: None,
            grad_norm: p.grad_norm,
            lift_residual: lift.as_ref().map(|l| l.relative_residual),
            lift_converged: lift.as_ref().map(|l| l.converged),
        };
        write_perturbation(c.out.join(name), p, lift.as_ref(), &meta)?;
    }
    println!("epsilon {eps:.6e} ({:.6e} of max |z|)", eps / z.linf());
    Ok(())
}

fn lift(c: &Common, a: &LiftArgs) -> Result<()> {
    let m = read_mask(&a.mask)?;
    let ctx = context(&a.maps, &m)?;
    let (p, _) = read_perturbation(&a.perturbation)?;
    let l = lift_to_kspace_min_l2(&ctx, &p.r, a.iters, a.tol)?;
    write_kspace(c.out.join("lift"), &l.q)?;
    println!("relative residual {:.3e} after {} iterations", l.relative_residual, l.iterations);
    if !l.converged {
        log::warn!("lift did not reach tolerance {:.1e}", a.tol);
    }
    Ok(())
}

fn train(c: &Common) -> Result<()> {
    let mut cfg: TrainConfig = load_toml(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.dataset.seed = s;
    }
    let (w, rep) = train_toy(&cfg)?;
    save_weights(c.out.join("weights"), &w)?;
    std::fs::write(c.out.join("train.json"), serde_json::to_string_pretty(&rep)?)?;
    println!("loss {:.4e} -> {:.4e}", rep.initial_loss, rep.final_loss());
    Ok(())
}

fn experiment(c: &Common) -> Result<()> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.reseed(s);
    }
    let out = cfg.out_dir.clone().filter(|_| c.out == Path::new("out")).unwrap_or_else(|| c.out.clone());
    let rep = run_experiment(&cfg, &out)?;
    print!("{}", render_report(&rep.out_dir)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    std::fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    match &cli.command {
        Command::Phantom(a) => phantom(c, a).context("phantom"),
        Command::Mask(a) => mask(c, a).context("mask"),
        Command::Maps(a) => maps(c, a).context("maps"),
        Command::Recon(a) => recon(c, a).context("recon"),
        Command::Attack(a) => attack(c, a).context("attack"),
        Command::Lift(a) => lift(c, a).context("lift"),
        Command::Train => train(c).context("train"),
        Command::Experiment => experiment(c).context("experiment"),
        Command::Report => {
            print!("{}", render_report(&c.out).context("report")?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
