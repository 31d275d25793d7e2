//! One attack generation, many reconstructors: builds each mask scenario,
//! computes the FGSM perturbation through unrolled CG once, and feeds it (or
//! its k-space lift, for GRAPPA) to every configured method.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use super::config::{AttackKind, CoilSpec, ExperimentConfig, MaskSpec, ReconSpec, SourceSpec};
use super::metrics::{nrmse, psnr, MetricsRecord};
use super::png::{emit_png, Window};
use crate::attack::{fgsm_attack, lift_to_kspace_min_l2, random_perturbation, write_perturbation, AttackMetadata, KspaceLift, Perturbation};
use crate::cgsense::cgsense_from_zero_filled;
use crate::coilmaps::espirit_maps;
use crate::cs::{cs_from_zero_filled, CsConfig};
use crate::datamodel::{
    load_fastmri_slice, make_random_mask, make_uniform_mask, random_phantom, shepp_logan, simulate_coils, synthesize_kspace,
    ComplexImage, MaskKind, MultiCoilKspace, SamplingMask, SimulationConfig,
};
use crate::encoding::{rss_image, EncodingContext};
use crate::error::{Error, Result};
use crate::grappa::{calibrate_kernel, grappa_reconstruct};
use crate::unrolled::{
    dataset_for_context, fgsm_unrolled, init_weights, load_weights, save_weights, train_on, unitwise_attack_response,
    unrolled_forward, NetWeights, TrainReport, UnitwiseReport,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
const CSV_HEADER: &str = "scenario,method,condition,nrmse,psnr,linf_input_ratio,ratio_vs_baseline";

#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    pub method: String,
    pub condition: String,
    pub nrmse: f64,
    /// `null` when the output equals the reference.
    pub psnr: Option<f64>,
    pub linf_input_ratio: f64,
    pub ratio_vs_baseline: Option<f64>,
    pub wall_seconds: f64,
    pub png: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LiftSummary {
    pub condition: String,
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub mask: MaskSpec,
    pub sampled_lines: usize,
    pub zero_filled_linf: f64,
    pub epsilon: Option<f64>,
    pub attack_loss_gradient_norm: Option<f64>,
    pub lifts: Vec<LiftSummary>,
    /// End-to-end FGSM on the toy network, split by unit.
    pub unitwise: Option<UnitwiseReport>,
    pub training: Option<TrainReport>,
    /// Methods that do not apply to this mask, with the reason.
    pub skipped: Vec<(String, String)>,
    pub reference_png: Option<String>,
    pub cells: Vec<CellSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub config: ExperimentConfig,
    pub metrics_csv: String,
    pub scenarios: Vec<ScenarioSummary>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub records: Vec<MetricsRecord>,
    pub summary: ExperimentSummary,
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

/// Metrics table without wall times, so reruns compare byte for byte.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let ratio = r.ratio_vs_baseline.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.scenario,
            r.method,
            r.condition,
            fmt_f64(r.nrmse),
            fmt_f64(r.psnr),
            fmt_f64(r.linf_input_ratio),
            ratio
        );
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Config("metrics file has an unexpected header".into()));
    }
    let num = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|e| Error::Config(format!("bad number `{s}`: {e}"))) };
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Config(format!("malformed metrics row `{l}`")));
            }
            Ok(MetricsRecord {
                scenario: f[0].into(),
                method: f[1].into(),
                condition: f[2].into(),
                nrmse: num(f[3])?,
                psnr: num(f[4])?,
                linf_input_ratio: num(f[5])?,
                ratio_vs_baseline: if f[6].is_empty() { None } else { Some(num(f[6])?) },
                wall_seconds: 0.0,
            })
        })
        .collect()
}

fn stage<T>(r: Result<T>, scenario: &str, name: &str) -> Result<T> {
    r.map_err(|e| e.in_stage(format!("{scenario}: {name}")))
}

fn build_mask(spec: &MaskSpec, ny: usize) -> Result<SamplingMask> {
    match spec.kind {
        MaskKind::Uniform => make_uniform_mask(ny, spec.acceleration, spec.acs),
        MaskKind::Random => make_random_mask(ny, spec.acceleration, spec.acs, spec.seed),
        MaskKind::Full => Ok(SamplingMask::full(ny)),
    }
}

fn undersample(y_full: &MultiCoilKspace, mask: &SamplingMask) -> MultiCoilKspace {
    let mut y = y_full.clone();
    let nx = y.nx();
    for c in 0..y.nc() {
        for (ky, row) in y.coil_mut(c).chunks_mut(nx).enumerate() {
            if !mask.is_sampled(ky) {
                row.fill(num_complex::Complex64::new(0.0, 0.0));
            }
        }
    }
    y
}

/// Fully sampled data and, for phantom sources, the simulated coils.
fn acquire(cfg: &ExperimentConfig) -> Result<(MultiCoilKspace, Option<crate::datamodel::CoilSensitivities>)> {
    let nc = match cfg.coils {
        CoilSpec::Simulated { nc } | CoilSpec::Espirit { nc, .. } => nc,
    };
    let x = match &cfg.source {
        SourceSpec::SheppLogan { ny, nx } => shepp_logan(*ny, *nx)?,
        SourceSpec::Random { ny, nx, seed } => random_phantom(*ny, *nx, *seed)?,
        SourceSpec::Fastmri { path, slice } => {
            if matches!(cfg.coils, CoilSpec::Simulated { .. }) {
                return Err(Error::Config("measured data needs `coils.kind = \"espirit\"`".into()));
            }
            return Ok((load_fastmri_slice(path, *slice)?, None));
        }
    };
    let (ny, nx) = x.shape();
    let coils = simulate_coils(nc, ny, nx)?;
    let sim = SimulationConfig { nc, ny, nx, noise_sigma: cfg.noise_sigma, seed: cfg.noise_seed };
    let y_full = synthesize_kspace(&x, &coils, &SamplingMask::full(ny), &sim)?;
    Ok((y_full, Some(coils)))
}

struct Condition {
    name: &'static str,
    perturbation: Option<Perturbation>,
    lift: Option<KspaceLift>,
}

/// Runs the whole grid, writing `metrics.csv`, `summary.json`, perturbations
/// and PNG panels into `out_dir`. On failure the rows computed so far are
/// still written to `metrics.csv`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    let out_dir = out_dir.as_ref().to_path_buf();
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    fs::create_dir_all(&out_dir).map_err(|e| Error::from(e).in_stage("output"))?;
    let started = Instant::now();
    let mut records = Vec::new();
    let result = run_all(cfg, &out_dir, &mut records);
    let csv = metrics_csv(&records);
    fs::write(out_dir.join(METRICS_FILE), csv).map_err(|e| Error::from(e).in_stage("emit metrics"))?;
    let scenarios = result?;
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        config: cfg.clone(),
        metrics_csv: METRICS_FILE.into(),
        scenarios,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    fs::write(out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)
        .map_err(|e| Error::from(e).in_stage("emit summary"))?;
    Ok(ExperimentReport { out_dir, records, summary })
}

fn run_all(cfg: &ExperimentConfig, out_dir: &Path, records: &mut Vec<MetricsRecord>) -> Result<Vec<ScenarioSummary>> {
    let (y_full, sim_coils) = acquire(cfg).map_err(|e| e.in_stage("acquire"))?;
    if cfg.emit_png {
        fs::create_dir_all(out_dir.join("png")).map_err(|e| Error::from(e).in_stage("output"))?;
    }
    cfg.masks
        .iter()
        .map(|m| run_scenario(cfg, m, &y_full, sim_coils.as_ref(), out_dir, records))
        .collect()
}

fn run_scenario(
    cfg: &ExperimentConfig,
    spec: &MaskSpec,
    y_full: &MultiCoilKspace,
    sim_coils: Option<&crate::datamodel::CoilSensitivities>,
    out_dir: &Path,
    records: &mut Vec<MetricsRecord>,
) -> Result<ScenarioSummary> {
    let label = spec.label();
    let sc = label.as_str();
    let (_, ny, nx) = y_full.shape();
    info!("scenario {sc}");
    let mask = stage(build_mask(spec, ny), sc, "mask")?;
    let y = undersample(y_full, &mask);
    let coils = match (&cfg.coils, sim_coils) {
        (CoilSpec::Simulated { .. }, Some(c)) => c.clone(),
        (CoilSpec::Espirit { espirit, .. }, _) => {
            let acs = stage(y.extract_lines(mask.acs_start(), mask.acs_count()), sc, "coil maps")?;
            stage(espirit_maps(&acs, ny, nx, espirit), sc, "coil maps")?
        }
        _ => unreachable!("rejected while acquiring"),
    };
    let ctx = stage(EncodingContext::new(coils, mask.clone()), sc, "encoding")?;
    let x_ref = stage(ctx.coil_combine(y_full), sc, "reference")?;
    let rss_ref = rss_image(y_full);
    let z = stage(ctx.apply_eh(&y), sc, "zero-filled")?;
    let z_linf = z.linf();

    let png_name = |tag: &str| format!("png/{sc}__{tag}.png");
    let write_png = |img: &ComplexImage, tag: &str| -> Result<Option<String>> {
        if !cfg.emit_png {
            return Ok(None);
        }
        let rel = png_name(tag);
        stage(emit_png(img, out_dir.join(&rel), Window::Auto), sc, "emit png")?;
        Ok(Some(rel))
    };
    let reference_png = write_png(&x_ref, "reference")?;
    write_png(&z, "zero_filled")?;

    // Attack generation, once per scenario.
    let mut conditions = vec![Condition { name: "clean", perturbation: None, lift: None }];
    let mut epsilon = None;
    let mut grad_norm = None;
    if cfg.attack.kind != AttackKind::None {
        let eps = stage(cfg.attack.epsilon.resolve(&z), sc, "attack")?;
        epsilon = Some(eps);
        if cfg.attack.kind == AttackKind::Fgsm {
            let p = stage(fgsm_attack(&ctx, &z, &x_ref, &cfg.attack.attack_config()), sc, "attack")?;
            grad_norm = Some(p.grad_norm);
            conditions.push(Condition { name: "fgsm", perturbation: Some(p), lift: None });
        }
        let p = stage(random_perturbation(ny, nx, eps, cfg.attack.seed), sc, "attack baseline")?;
        conditions.push(Condition { name: "random", perturbation: Some(p), lift: None });
    }

    let grappa_applies = |m: &SamplingMask| -> std::result::Result<(), String> {
        if m.kind() != MaskKind::Uniform {
            return Err("GRAPPA needs a uniform (lattice) mask".into());
        }
        if ny % m.acceleration() != 0 {
            return Err(format!("ny = {ny} is not a multiple of R = {}", m.acceleration()));
        }
        Ok(())
    };
    let mut skipped = Vec::new();
    let methods: Vec<&ReconSpec> = cfg
        .recon
        .iter()
        .filter(|r| match r {
            ReconSpec::Grappa { .. } => match grappa_applies(&mask) {
                Ok(()) => true,
                Err(why) => {
                    warn!("{sc}: skipping grappa: {why}");
                    skipped.push(("grappa".to_string(), why));
                    false
                }
            },
            _ => true,
        })
        .collect();

    // k-space lifts, only when GRAPPA consumes them.
    let mut lifts = Vec::new();
    if methods.iter().any(|r| matches!(r, ReconSpec::Grappa { .. })) {
        for c in conditions.iter_mut() {
            if let Some(p) = &c.perturbation {
                let lift = stage(lift_to_kspace_min_l2(&ctx, &p.r, cfg.attack.lift_iters, cfg.attack.lift_tol), sc, "lift")?;
                lifts.push(LiftSummary {
                    condition: c.name.into(),
                    relative_residual: lift.relative_residual,
                    iterations: lift.iterations,
                    converged: lift.converged,
                });
                c.lift = Some(lift);
            }
        }
    }

    let pert_dir = out_dir.join(sc);
    for c in &conditions {
        if let Some(p) = &c.perturbation {
            stage(fs::create_dir_all(&pert_dir).map_err(Error::from), sc, "emit perturbation")?;
            let meta = AttackMetadata {
                kind: c.name.into(),
                epsilon: p.epsilon_used,
                loss: None,
                grad_norm: p.grad_norm,
                lift_residual: c.lift.as_ref().map(|l| l.relative_residual),
                lift_converged: c.lift.as_ref().map(|l| l.converged),
            };
            stage(write_perturbation(pert_dir.join(c.name), p, c.lift.as_ref(), &meta), sc, "emit perturbation")?;
        }
    }

    let mut cells = Vec::new();
    let mut unitwise = None;
    let mut training = None;
    for method in methods {
        let name = method.name();
        let net = match method {
            ReconSpec::Unrolled { weights, train, samples } => {
                let w = match weights {
                    Some(dir) => stage(load_weights(dir), sc, "unrolled weights")?,
                    None => {
                        let data = stage(dataset_for_context(&ctx, *samples, train.dataset.seed), sc, "train")?;
                        let (w, rep) = stage(train_on(&data, init_weights(train), train), sc, "train")?;
                        info!("{sc}: trained net, loss {:.3e} -> {:.3e}", rep.initial_loss, rep.final_loss());
                        training = Some(rep);
                        stage(save_weights(pert_dir.join("unrolled_weights"), &w), sc, "emit weights")?;
                        w
                    }
                };
                if let Some(eps) = epsilon {
                    let r = stage(fgsm_unrolled(&ctx, &z, &x_ref, &w, eps), sc, "unrolled attack")?;
                    unitwise = Some(stage(unitwise_attack_response(&ctx, &z, &r, &w), sc, "unrolled attack")?);
                }
                Some(w)
            }
            _ => None,
        };
        // λ is fixed from the clean input so every condition solves the same problem.
        let cs_cfg = match method {
            ReconSpec::Cs { cs } => Some(CsConfig {
                lambda: if cs.lambda_relative { cs.lambda * z_linf } else { cs.lambda },
                lambda_relative: false,
                ..cs.clone()
            }),
            _ => None,
        };
        let mut nrmse_by_cond: Vec<(&str, f64)> = Vec::new();
        for c in &conditions {
            let stage_name = format!("recon {name}/{}", c.name);
            let t0 = Instant::now();
            let (img, reference) = stage(
                reconstruct(method, &ctx, &mask, &y, &z, c, cs_cfg.as_ref(), net.as_ref(), &x_ref, &rss_ref),
                sc,
                &stage_name,
            )?;
            let wall = t0.elapsed().as_secs_f64();
            if !img.is_finite() {
                return Err(Error::Numerical("non-finite reconstruction".into()).in_stage(format!("{sc}: {stage_name}")));
            }
            let e = stage(nrmse(&img, reference), sc, &stage_name)?;
            let p = stage(psnr(&img, reference), sc, &stage_name)?;
            let ratio_in = c.perturbation.as_ref().map_or(0.0, |p| p.epsilon_used / z_linf);
            nrmse_by_cond.push((c.name, e));
            let png = write_png(&img, &format!("{name}__{}", c.name))?;
            records.push(MetricsRecord {
                scenario: sc.into(),
                method: name.into(),
                condition: c.name.into(),
                nrmse: e,
                psnr: p,
                linf_input_ratio: ratio_in,
                ratio_vs_baseline: None,
                wall_seconds: wall,
            });
            cells.push(CellSummary {
                method: name.into(),
                condition: c.name.into(),
                nrmse: e,
                psnr: p.is_finite().then_some(p),
                linf_input_ratio: ratio_in,
                ratio_vs_baseline: None,
                wall_seconds: wall,
                png,
            });
        }
        let base = nrmse_by_cond.iter().find(|(c, _)| *c == "random").map(|v| v.1);
        if let Some(base) = base {
            let n = conditions.len();
            for (rec, cell) in records.iter_mut().rev().take(n).zip(cells.iter_mut().rev().take(n)) {
                if rec.condition == "fgsm" {
                    let r = if base > 0.0 { rec.nrmse / base } else { f64::INFINITY };
                    rec.ratio_vs_baseline = Some(r);
                    cell.ratio_vs_baseline = Some(r);
                    info!("{sc}: {name} fgsm/random NRMSE ratio {r:.3}");
                }
            }
        }
    }

    Ok(ScenarioSummary {
        name: label.clone(),
        mask: spec.clone(),
        sampled_lines: mask.count(),
        zero_filled_linf: z_linf,
        epsilon,
        attack_loss_gradient_norm: grad_norm,
        lifts,
        unitwise,
        training,
        skipped,
        reference_png,
        cells,
    })
}

#[allow(clippy::too_many_arguments)]
fn reconstruct<'a>(
    method: &ReconSpec,
    ctx: &EncodingContext,
    mask: &SamplingMask,
    y: &MultiCoilKspace,
    z: &ComplexImage,
    cond: &Condition,
    cs_cfg: Option<&CsConfig>,
    net: Option<&NetWeights>,
    x_ref: &'a ComplexImage,
    rss_ref: &'a ComplexImage,
) -> Result<(ComplexImage, &'a ComplexImage)> {
    let zin = match &cond.perturbation {
        Some(p) => p.apply(z)?,
        None => z.clone(),
    };
    match method {
        ReconSpec::Cgsense { iters } => Ok((cgsense_from_zero_filled(&zin, ctx, *iters)?, x_ref)),
        ReconSpec::Cs { .. } => Ok((cs_from_zero_filled(&zin, ctx, cs_cfg.expect("cs config"))?.image, x_ref)),
        ReconSpec::Unrolled { .. } => Ok((unrolled_forward(ctx, &zin, net.expect("network"))?, x_ref)),
        ReconSpec::Grappa { geometry, ridge } => {
            let yin = match (&cond.perturbation, &cond.lift) {
                (None, _) => y.clone(),
                (Some(_), Some(l)) => y.add(&l.q)?,
                (Some(_), None) => return Err(Error::InvalidArgument("perturbation was not lifted".into())),
            };
            let acs = yin.extract_lines(mask.acs_start(), mask.acs_count())?;
            let w = calibrate_kernel(&acs, mask.acs_start(), mask.acceleration(), *geometry, *ridge)?;
            Ok((grappa_reconstruct(&yin, &w, mask)?.1, rss_ref))
        }
    }
}

/// Plain-text table of a finished run's `metrics.csv`.
pub fn render_report(dir: impl AsRef<Path>) -> Result<String> {
    let path = dir.as_ref().join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let records = parse_metrics_csv(&text)?;
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:<10} {:<8} {:>10} {:>9} {:>10}", "scenario", "method", "input", "NRMSE", "PSNR", "vs random");
    for r in &records {
        let ratio = r.ratio_vs_baseline.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<14} {:<10} {:<8} {:>10.5} {:>9.2} {:>10}",
            r.scenario, r.method, r.condition, r.nrmse, r.psnr, ratio
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::AttackSpec;

    fn small(attack: AttackKind, recon: Vec<ReconSpec>) -> ExperimentConfig {
        ExperimentConfig {
            name: "t".into(),
            source: SourceSpec::SheppLogan { ny: 48, nx: 48 },
            coils: CoilSpec::Simulated { nc: 4 },
            masks: vec![
                MaskSpec { acs: 24, ..MaskSpec::default() },
                MaskSpec { kind: MaskKind::Random, acs: 8, seed: 3, ..MaskSpec::default() },
            ],
            attack: AttackSpec { kind: attack, ..AttackSpec::default() },
            recon,
            ..ExperimentConfig::default()
        }
    }

    fn fast_recon() -> Vec<ReconSpec> {
        vec![
            ReconSpec::Cgsense { iters: 10 },
            ReconSpec::Grappa { geometry: Default::default(), ridge: 1e-3 },
            ReconSpec::Cs { cs: CsConfig { outer_iters: 5, levels: 2, ..CsConfig::default() } },
        ]
    }

    #[test]
    fn grid_shape_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let rep = run_experiment(&small(AttackKind::Fgsm, fast_recon()), dir.path()).unwrap();
        // uniform: 3 methods; random: GRAPPA skipped.
        assert_eq!(rep.records.len(), (3 + 2) * 3);
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 1 + rep.records.len());
        assert_eq!(rep.summary.scenarios[1].skipped.len(), 1);
        for s in &rep.summary.scenarios {
            for c in &s.cells {
                assert!(dir.path().join(c.png.as_ref().unwrap()).exists());
                assert_eq!(c.ratio_vs_baseline.is_some(), c.condition == "fgsm");
            }
        }
        let lifts = &rep.summary.scenarios[0].lifts;
        assert_eq!(lifts.len(), 2);
        assert!(lifts.iter().all(|l| l.relative_residual.is_finite() && l.iterations > 0));
        assert!(dir.path().join("uniform_r4/fgsm_kspace.cfl").exists());
        let parsed = parse_metrics_csv(&csv).unwrap();
        assert_eq!(parsed.len(), rep.records.len());
        assert!(render_report(dir.path()).unwrap().contains("cgsense"));
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
        assert!(json["wall_seconds"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn no_attack_gives_clean_rows_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(AttackKind::None, vec![ReconSpec::Cgsense { iters: 10 }]);
        cfg.emit_png = false;
        let rep = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(rep.records.len(), 2);
        assert!(rep.records.iter().all(|r| r.condition == "clean" && r.nrmse > 0.0));
        assert!(!dir.path().join("png").exists());
    }

    #[test]
    fn reruns_are_byte_identical_and_order_invariant() {
        let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut cfg = small(AttackKind::Fgsm, fast_recon());
        cfg.emit_png = false;
        run_experiment(&cfg, a.path()).unwrap();
        run_experiment(&cfg, b.path()).unwrap();
        let read = |d: &Path| fs::read(d.join(METRICS_FILE)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
        cfg.recon.reverse();
        run_experiment(&cfg, c.path()).unwrap();
        let key = |d: &Path| {
            let mut v: Vec<String> = String::from_utf8(read(d)).unwrap().lines().map(String::from).collect();
            v.sort();
            v
        };
        assert_eq!(key(a.path()), key(c.path()));
    }

    #[test]
    fn failures_name_the_stage_and_flush_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(AttackKind::Fgsm, vec![ReconSpec::Cgsense { iters: 10 }]);
        cfg.emit_png = false;
        // ACS wider than the grid fails when the second scenario builds its mask.
        cfg.masks[1].acs = 96;
        let err = run_experiment(&cfg, dir.path()).unwrap_err().to_string();
        assert!(err.contains("random_r4: mask"), "{err}");
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3);
    }
}
