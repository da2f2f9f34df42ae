//! `segreg` — batch CLI for joint segmentation and registration.
//!
//! Exit codes: 0 success, 2 validation error (bad arguments, files,
//! headers), 3 numerical failure (divergence, non-finite energies,
//! failed gradient check).

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{parse_grouping, RunConfig};
use segreg::convolve::convolve;
use segreg::energy::trace_to_csv;
use segreg::exec;
use segreg::field::{argmax_label, normalize_intensity, ScalarField, Shape, SoftSegmentation};
use segreg::joint::{run_ablation, SolveMode};
use segreg::kernel::Kernel;
use segreg::metrics::MetricReport;
use segreg::phantom::{make_pair, PhantomSpec, ShapeKind};
use segreg::reg::{
    joint_t_energy_grad, register, warp, ControlGrid, DisplacementField, TEnergyWeights,
};
use segreg::seg::{kmeans_init, lgmm_solve, BiasField};
use segreg::{io, viz, Error};

#[derive(Parser)]
#[command(name = "segreg", version, about = "Joint variational segmentation and registration")]
struct Cli {
    /// Worker thread count (0 = library default). Affects speed only;
    /// results are identical for any setting.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic moving/fixed pair with ground truth.
    Phantom {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// distinct | similar | grouped
        #[arg(long, default_value = "similar")]
        regime: String,
        /// Image side in pixels (square).
        #[arg(long, default_value_t = 96)]
        size: usize,
    },
    /// Mixture segmentation of a single image (no atlas).
    Segment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Pure registration of a moving image onto a fixed image.
    Register {
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write per-level deformed images, meshes and fields.
        #[arg(long)]
        dump_levels: bool,
    },
    /// Full joint pipeline (or an ablation mode).
    Joint {
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        /// Atlas: a probability stack, or a label map to one-hot encode.
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// joint | seg_only | reg_only
        #[arg(long, default_value = "joint")]
        mode: String,
        /// Class grouping, e.g. `1:0,1,2|0,2:3`.
        #[arg(long)]
        grouping: Option<String>,
    },
    /// Compare a predicted label file against a reference label file.
    Metrics {
        predicted: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the registration gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        instances: usize,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Numerical { .. } | Error::EnergyDivergence { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    setup_threads(cli.threads);
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn setup_threads(threads: usize) {
    if threads == 1 {
        exec::set_parallelism(false);
    }
    #[cfg(feature = "parallel")]
    if threads > 1 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if threads > 1 {
        log::warn!("built without the parallel feature; --threads ignored");
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::parse_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

/// Read an atlas: multi-channel stacks load as probability maps, and
/// single-channel integer files one-hot encode as label maps.
fn load_atlas(path: &Path) -> Result<SoftSegmentation, Error> {
    let raw = io::read_raw(path)?;
    if raw.channels.len() >= 2 {
        let shape = raw.shape;
        let channels = raw
            .channels
            .into_iter()
            .map(|d| ScalarField::from_vec(shape, d))
            .collect::<Result<Vec<_>, _>>()?;
        SoftSegmentation::from_unnormalized(channels)
    } else {
        let labels = io::read_labels(path)?;
        if labels.k() < 2 {
            return Err(Error::InvalidArgument(
                "atlas label map has a single class".into(),
            ));
        }
        Ok(labels.one_hot())
    }
}

fn write_displacement(path: &Path, t: &DisplacementField) -> Result<(), Error> {
    let channels: Vec<ScalarField> = t.channels().to_vec();
    let stack_refs: Vec<&[f64]> = channels.iter().map(|c| c.data()).collect();
    io::write_raw_channels(path, t.shape(), &stack_refs)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.cmd {
        Cmd::Phantom { seed, out, regime, size } => cmd_phantom(seed, &out, &regime, size),
        Cmd::Segment { image, out, config, k } => cmd_segment(&image, &out, &config, k),
        Cmd::Register { fixed, moving, out, config, dump_levels } => {
            cmd_register(&fixed, &moving, &out, &config, dump_levels)
        }
        Cmd::Joint { fixed, moving, atlas, out, config, mode, grouping } => {
            cmd_joint(&fixed, &moving, &atlas, &out, &config, &mode, &grouping)
        }
        Cmd::Metrics { predicted, reference, out } => cmd_metrics(&predicted, &reference, &out),
        Cmd::Gradcheck { seed, size, instances } => cmd_gradcheck(seed, size, instances),
    }
}

fn cmd_phantom(seed: u64, out: &Path, regime: &str, size: usize) -> Result<ExitCode, Error> {
    if !(16..=2048).contains(&size) {
        return Err(Error::InvalidArgument(format!("size={size} outside [16, 2048]")));
    }
    let shape = Shape::d2(size, size);
    let spec = match regime {
        "distinct" => PhantomSpec::distinct_pair(shape, seed),
        "similar" => PhantomSpec::similar_pair(shape, seed),
        "grouped" => PhantomSpec::grouped_pair(shape, seed),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown regime {other:?} (expected distinct|similar|grouped)"
            )))
        }
    };
    ensure_dir(out)?;
    let pair = make_pair(&spec)?;
    io::write_scalar(&out.join("moving"), &pair.moving)?;
    io::write_scalar(&out.join("fixed"), &pair.fixed)?;
    io::write_labels(&out.join("gt_moving"), &pair.gt_moving)?;
    io::write_labels(&out.join("gt_fixed"), &pair.gt_fixed)?;
    write_displacement(&out.join("true_T"), &pair.true_t)?;
    io::write_scalar(&out.join("true_beta"), &pair.true_beta)?;
    viz::write_pgm(&out.join("moving.pgm"), &pair.moving)?;
    viz::write_pgm(&out.join("fixed.pgm"), &pair.fixed)?;
    std::fs::write(out.join("spec.json"), spec_json(&spec)).map_err(|e| Error::Io {
        path: out.join("spec.json").display().to_string(),
        source: e,
    })?;
    println!("phantom written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn spec_json(spec: &PhantomSpec) -> String {
    let shapes: Vec<serde_json::Value> = spec
        .shapes
        .iter()
        .map(|s| {
            let kind = match s.kind {
                ShapeKind::Star { points, outer, inner } => serde_json::json!({
                    "star": {"points": points, "outer": outer, "inner": inner}
                }),
                ShapeKind::Heart { size } => serde_json::json!({"heart": {"size": size}}),
                ShapeKind::Disc { radius } => serde_json::json!({"disc": {"radius": radius}}),
            };
            serde_json::json!({
                "kind": kind,
                "center": [s.center.0, s.center.1],
                "intensity": s.intensity,
            })
        })
        .collect();
    let v = serde_json::json!({
        "shape": spec.shape.dims(),
        "seed": spec.seed,
        "background": spec.background,
        "shapes": shapes,
        "deform_amplitude": spec.deform_amplitude,
        "deform_sigma": spec.deform_sigma,
        "bias_amplitude": spec.bias_amplitude,
        "bias_sigma": spec.bias_sigma,
        "noise_std": spec.noise_std,
        "boundary_breaks": spec.boundary_breaks,
        "break_width": spec.break_width,
    });
    serde_json::to_string_pretty(&v).expect("json") + "\n"
}

fn cmd_segment(
    image: &Path,
    out: &Path,
    config: &Option<PathBuf>,
    k: Option<usize>,
) -> Result<ExitCode, Error> {
    let mut cfg = load_config(config)?;
    if let Some(k) = k {
        cfg.set("k", &k.to_string())?;
    }
    let img = normalize_intensity(&io::read_scalar(image)?);
    let u0 = kmeans_init(&img, cfg.joint.seg.k, cfg.joint.seed)?;
    let beta0 = BiasField::uniform(img.shape());
    let res = lgmm_solve(&img, &u0, &beta0, &cfg.joint.seg, None, None, 0.0)?;

    ensure_dir(out)?;
    let labels = argmax_label(&res.u);
    io::write_labels(&out.join("labels"), &labels)?;
    io::write_soft(&out.join("u"), &res.u)?;
    io::write_scalar(&out.join("beta"), res.beta.field())?;
    io::write_scalar(&out.join("corrected"), &res.beta.correct(&img))?;
    std::fs::write(out.join("trace.csv"), trace_to_csv(&res.trace)).map_err(|e| Error::Io {
        path: out.join("trace.csv").display().to_string(),
        source: e,
    })?;
    if img.shape().ndim() == 2 {
        viz::write_label_ppm(&out.join("labels.ppm"), &labels)?;
        viz::write_contour_ppm(&out.join("contour.ppm"), &img, &labels)?;
        viz::write_pgm(&out.join("beta.pgm"), res.beta.field())?;
    }
    std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::Io {
        path: out.join("config.txt").display().to_string(),
        source: e,
    })?;
    println!(
        "segmentation finished after {} inner iterations (converged: {})",
        res.trace.len(),
        res.converged
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_register(
    fixed: &Path,
    moving: &Path,
    out: &Path,
    config: &Option<PathBuf>,
    dump_levels: bool,
) -> Result<ExitCode, Error> {
    let cfg = load_config(config)?;
    let fixed_img = normalize_intensity(&io::read_scalar(fixed)?);
    let moving_img = normalize_intensity(&io::read_scalar(moving)?);
    let mut reg_cfg = cfg.joint.reg.clone();
    reg_cfg.xi = 0.0;
    reg_cfg.zeta = cfg.joint.seg.zeta.max(1e-12);
    let flat = SoftSegmentation::uniform(fixed_img.shape(), 2);
    let res = register(&fixed_img, &moving_img, &flat, &flat, &reg_cfg, None)?;

    ensure_dir(out)?;
    write_displacement(&out.join("T"), &res.displacement)?;
    let warped = warp(&moving_img, &res.displacement)?;
    io::write_scalar(&out.join("warped"), &warped)?;
    if fixed_img.shape().ndim() == 2 {
        viz::write_pgm(&out.join("warped.pgm"), &warped)?;
        viz::write_mesh_ppm(&out.join("mesh.ppm"), &res.displacement, 4)?;
        viz::write_quiver_ppm(&out.join("quiver.ppm"), &res.displacement, 6)?;
    }
    if dump_levels {
        for rep in &res.levels {
            let t = segreg::reg::control_to_field(&rep.grid);
            let suffix = format!("L{}", rep.level);
            write_displacement(&out.join(format!("T_{suffix}")), &t)?;
            if rep.shape.ndim() == 2 {
                let moving_lvl =
                    segreg::reg::resample_bilinear(&moving_img, rep.shape)?;
                let warped_lvl = warp(&moving_lvl, &t)?;
                viz::write_pgm(&out.join(format!("warped_{suffix}.pgm")), &warped_lvl)?;
                viz::write_mesh_ppm(&out.join(format!("mesh_{suffix}.ppm")), &t, 4)?;
            }
        }
    }
    let mut lines = String::from("level,shape,e_start,e_end,iterations\n");
    for rep in &res.levels {
        lines.push_str(&format!(
            "{},{},{:.9e},{:.9e},{}\n",
            rep.level, rep.shape, rep.initial_energy, rep.final_energy, rep.iterations
        ));
    }
    std::fs::write(out.join("levels.csv"), lines).map_err(|e| Error::Io {
        path: out.join("levels.csv").display().to_string(),
        source: e,
    })?;
    println!("registration finished; |T|_max = {:.3} px", res.displacement.max_abs());
    Ok(ExitCode::SUCCESS)
}

fn cmd_joint(
    fixed: &Path,
    moving: &Path,
    atlas: &Path,
    out: &Path,
    config: &Option<PathBuf>,
    mode: &str,
    grouping: &Option<String>,
) -> Result<ExitCode, Error> {
    let mut cfg = load_config(config)?;
    let fixed_img = normalize_intensity(&io::read_scalar(fixed)?);
    let moving_img = normalize_intensity(&io::read_scalar(moving)?);
    let atlas_stack = load_atlas(atlas)?;
    let grouping_spec = grouping.clone().or_else(|| cfg.pending_grouping.clone());
    if let Some(spec) = &grouping_spec {
        cfg.joint.grouping = Some(parse_grouping(spec, cfg.joint.seg.k, atlas_stack.k())?);
    } else if atlas_stack.k() != cfg.joint.seg.k {
        return Err(Error::InvalidArgument(format!(
            "atlas has {} channels but k={}; pass --grouping",
            atlas_stack.k(),
            cfg.joint.seg.k
        )));
    }
    let mode = match mode {
        "joint" => SolveMode::Joint,
        "seg_only" => SolveMode::SegOnly,
        "reg_only" => SolveMode::RegOnly,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected joint|seg_only|reg_only)"
            )))
        }
    };

    let res = run_ablation(&fixed_img, &moving_img, &atlas_stack, &cfg.joint, mode)?;

    ensure_dir(out)?;
    io::write_labels(&out.join("labels"), &res.labels_seg)?;
    io::write_labels(&out.join("labels_atlas"), &res.labels_atlas)?;
    io::write_soft(&out.join("u"), &res.u)?;
    io::write_scalar(&out.join("beta"), res.beta.field())?;
    write_displacement(&out.join("T"), &res.displacement)?;
    let warped = warp(&moving_img, &res.displacement)?;
    io::write_scalar(&out.join("warped"), &warped)?;
    std::fs::write(out.join("trace.csv"), trace_to_csv(&res.trace)).map_err(|e| Error::Io {
        path: out.join("trace.csv").display().to_string(),
        source: e,
    })?;
    if fixed_img.shape().ndim() == 2 {
        viz::write_label_ppm(&out.join("labels.ppm"), &res.labels_seg)?;
        viz::write_label_ppm(&out.join("labels_atlas.ppm"), &res.labels_atlas)?;
        viz::write_contour_ppm(&out.join("contour.ppm"), &fixed_img, res.final_labels())?;
        viz::write_pgm(&out.join("beta.pgm"), res.beta.field())?;
        viz::write_pgm(&out.join("warped.pgm"), &warped)?;
        viz::write_mesh_ppm(&out.join("mesh.ppm"), &res.displacement, 4)?;
        viz::write_quiver_ppm(&out.join("quiver.ppm"), &res.displacement, 6)?;
    }
    std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::Io {
        path: out.join("config.txt").display().to_string(),
        source: e,
    })?;
    println!("joint solve finished: {:?}, |T|_max = {:.3} px", res.status, res.displacement.max_abs());
    Ok(ExitCode::SUCCESS)
}

fn cmd_metrics(
    predicted: &Path,
    reference: &Path,
    out: &Option<PathBuf>,
) -> Result<ExitCode, Error> {
    let pred = io::read_labels(predicted)?;
    let reference = io::read_labels(reference)?;
    let report = MetricReport::compare(&pred, &reference)?;
    let csv = report.to_csv();
    match out {
        Some(p) => std::fs::write(p, &csv).map_err(|e| Error::Io {
            path: p.display().to_string(),
            source: e,
        })?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(seed: u64, size: usize, instances: usize) -> Result<ExitCode, Error> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let shape = Shape::d2(size, size);
    let smooth = |seed: u64, lo: f64, hi: f64| -> Result<ScalarField, Error> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = ScalarField::from_vec(
            shape,
            (0..shape.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )?;
        let sm = convolve(&raw, &Kernel::gaussian(2.0)?)?;
        let (mn, mx) = sm.min_max();
        Ok(sm.map(|v| lo + (v - mn) / (mx - mn) * (hi - lo)))
    };
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let base = seed.wrapping_mul(1000).wrapping_add(inst as u64 * 37);
        let fixed = smooth(base, 0.0, 1.0)?;
        let moving = smooth(base + 1, 0.0, 1.0)?;
        let atlas = SoftSegmentation::from_unnormalized(vec![
            smooth(base + 2, 0.05, 1.0)?,
            smooth(base + 3, 0.05, 1.0)?,
            smooth(base + 4, 0.05, 1.0)?,
        ])?;
        let u = SoftSegmentation::from_unnormalized(vec![
            smooth(base + 5, 0.05, 1.0)?,
            smooth(base + 6, 0.05, 1.0)?,
            smooth(base + 7, 0.05, 1.0)?,
        ])?;
        let mut grid = ControlGrid::zeros(shape, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(base + 8);
        for v in grid.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
        let w = TEnergyWeights { xi: 0.3, zeta: 1.0, eta: 0.2 };
        let (_, g) = joint_t_energy_grad(&grid, &fixed, &moving, &atlas, &u, &w)?;
        let gmax = g.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-12);
        let h = 1e-4;
        for i in 0..grid.data().len() {
            let mut gp = grid.clone();
            gp.data_mut()[i] += h;
            let (ep, _) = joint_t_energy_grad(&gp, &fixed, &moving, &atlas, &u, &w)?;
            let mut gm = grid.clone();
            gm.data_mut()[i] -= h;
            let (em, _) = joint_t_energy_grad(&gm, &fixed, &moving, &atlas, &u, &w)?;
            let fd = (ep.total() - em.total()) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3 * gmax);
            worst = worst.max(rel);
        }
    }
    println!("max relative gradient error: {worst:.3e}");
    if worst < 1e-4 {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::Numerical {
            term: "registration gradient",
            detail: format!("finite-difference mismatch {worst:.3e} >= 1e-4"),
        })
    }
}
