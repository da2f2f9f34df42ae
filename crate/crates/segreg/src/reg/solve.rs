//! Coarse-to-fine registration driver.

use crate::error::Result;
use crate::field::{ScalarField, Shape, SoftSegmentation};

use super::energy::{joint_t_energy_grad, TEnergyWeights};
use super::grid::{control_to_field, ControlGrid};
use super::lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsStatus};
use super::pyramid::{build_pyramid, build_stack_pyramid};
use super::{DisplacementField, RegConfig};

/// Outcome of one pyramid level.
#[derive(Clone, Debug)]
pub struct LevelReport {
    /// Pyramid index; 0 is the finest level.
    pub level: usize,
    pub shape: Shape,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: usize,
    pub status: LbfgsStatus,
    /// Solved control grid at this level.
    pub grid: ControlGrid,
}

#[derive(Clone, Debug)]
pub struct RegisterResult {
    /// Full-resolution dense displacement.
    pub displacement: DisplacementField,
    /// Full-resolution control grid.
    pub grid: ControlGrid,
    /// Per-level solve reports, coarsest first.
    pub levels: Vec<LevelReport>,
}

/// Sample a dense displacement onto a level's knot lattice, rescaling
/// the vectors into that level's pixel units.
fn grid_from_dense(
    t: &DisplacementField,
    level_shape: Shape,
    spacing: usize,
) -> ControlGrid {
    let full = t.shape();
    let ndim = full.ndim();
    let mut grid = ControlGrid::zeros(level_shape, spacing);
    let lat = grid.lattice();
    let nk = lat.len();
    let mut data = vec![0.0; nk * ndim];
    for axis in 0..ndim {
        let scale_in = full.dim(axis) as f64 / level_shape.dim(axis) as f64;
        for knot in 0..nk {
            let kc = lat.coords(knot);
            let mut p = [0.0f64; 3];
            for a in 0..ndim {
                let level_px = (kc[a] * spacing) as f64;
                p[a] = (level_px + 0.5) * (full.dim(a) as f64 / level_shape.dim(a) as f64) - 0.5;
            }
            let v = super::warp::sample_linear(t.channel(axis), &p);
            data[axis * nk + knot] = v / scale_in;
        }
    }
    grid.data_mut().copy_from_slice(&data);
    grid
}

/// Linearly upsample knot displacements onto the next finer level's
/// lattice, rescaling vectors by the per-axis resolution ratio.
fn upsample_grid(coarse: &ControlGrid, fine_shape: Shape, spacing: usize) -> ControlGrid {
    let dense = control_to_field(coarse);
    grid_from_dense(&dense, fine_shape, spacing)
}

/// Floor the atlas channels and renormalize so every channel is
/// strictly positive.
fn floored_stack(s: &SoftSegmentation, floor: f64) -> Result<SoftSegmentation> {
    SoftSegmentation::from_unnormalized(
        s.channels().iter().map(|c| c.map(|v| v.max(floor))).collect(),
    )
}

/// Coarse-to-fine solve of the T-subproblem.
///
/// `fixed_corrected` is the bias-corrected fixed image; `atlas` and
/// `memberships` feed the cross-entropy coupling (grouped stacks in
/// grouped mode) and are ignored when `cfg.xi == 0`. `init` warm-starts
/// the coarsest level from a previous full-resolution displacement.
pub fn register(
    fixed_corrected: &ScalarField,
    moving: &ScalarField,
    atlas: &SoftSegmentation,
    memberships: &SoftSegmentation,
    cfg: &RegConfig,
    init: Option<&DisplacementField>,
) -> Result<RegisterResult> {
    cfg.validate()?;
    fixed_corrected.check_finite("register fixed image")?;
    moving.check_finite("register moving image")?;
    let shape = fixed_corrected.shape();

    let pf = build_pyramid(fixed_corrected, cfg.levels, cfg.downscale)?;
    let pm = build_pyramid(moving, cfg.levels, cfg.downscale)?;
    let (pa, pu);
    if cfg.xi > 0.0 {
        pa = build_stack_pyramid(&floored_stack(atlas, cfg.prior_floor)?, cfg.levels, cfg.downscale, cfg.prior_floor)?;
        pu = build_stack_pyramid(memberships, cfg.levels, cfg.downscale, 0.0)?;
    } else {
        // placeholder stacks; never sampled with xi == 0
        let flat = SoftSegmentation::uniform(shape, 2);
        pa = build_stack_pyramid(&flat, cfg.levels, cfg.downscale, 0.0)?;
        pu = build_stack_pyramid(&flat, cfg.levels, cfg.downscale, 0.0)?;
    }
    let n_levels = pf.len();
    let weights = TEnergyWeights { xi: cfg.xi, zeta: cfg.zeta, eta: cfg.eta };
    let opts = LbfgsOptions {
        memory: cfg.lbfgs_memory,
        max_iters: cfg.m_lbfgs,
        tol: cfg.grad_tol,
    };

    let mut reports = Vec::with_capacity(n_levels);
    let mut grid: Option<ControlGrid> = None;
    for j in (0..n_levels).rev() {
        let lvl_shape = pf[j].shape();
        let mut current = match grid.take() {
            Some(g) => upsample_grid(&g, lvl_shape, cfg.knot_spacing),
            None => match init {
                Some(t) => grid_from_dense(t, lvl_shape, cfg.knot_spacing),
                None => ControlGrid::zeros(lvl_shape, cfg.knot_spacing),
            },
        };

        let (fixed_j, moving_j) = (&pf[j], &pm[j]);
        let (atlas_j, u_j) = (&pa[j], &pu[j]);
        let template = current.clone();
        let mut eval_err = None;
        let objective = |x: &[f64], g: &mut [f64]| -> f64 {
            let cand = match ControlGrid::from_data(
                template.image_shape(),
                template.spacing(),
                x.to_vec(),
            ) {
                Ok(c) => c,
                Err(e) => {
                    eval_err = Some(e);
                    return f64::INFINITY;
                }
            };
            match joint_t_energy_grad(&cand, fixed_j, moving_j, atlas_j, u_j, &weights) {
                Ok((e, grad)) => {
                    g.copy_from_slice(&grad);
                    e.total()
                }
                Err(e) => {
                    eval_err = Some(e);
                    f64::INFINITY
                }
            }
        };
        let x0 = current.data().to_vec();
        let res = lbfgs_minimize(objective, &x0, &opts);
        if let Some(e) = eval_err {
            return Err(e);
        }
        let initial_energy = {
            let (e, _) =
                joint_t_energy_grad(&current, fixed_j, moving_j, atlas_j, u_j, &weights)?;
            e.total()
        };
        current.data_mut().copy_from_slice(&res.x);
        reports.push(LevelReport {
            level: j,
            shape: lvl_shape,
            initial_energy,
            final_energy: res.energy,
            iterations: res.iterations,
            status: res.status,
            grid: current.clone(),
        });
        grid = Some(current);
    }

    let grid = grid.expect("at least one level");
    let displacement = control_to_field(&grid);
    Ok(RegisterResult { displacement, grid, levels: reports })
}
