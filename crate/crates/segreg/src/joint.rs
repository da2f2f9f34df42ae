//! Outer alternation of segmentation and registration, including the
//! grouped cross-entropy coupling for unequal class counts.
//!
//! One outer iteration runs the inner mixture loop with the atlas
//! warped by the current displacement as its spatial prior, then
//! re-solves the registration against the freshly bias-corrected image
//! and memberships. Class groupings let an intensity-driven K and an
//! anatomical atlas K differ: the coupling matches group sums instead
//! of individual channels.

use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::exec;
use crate::field::{argmax_label, LabelMap, ScalarField, SoftSegmentation};
use crate::reg::{
    register, tikhonov_energy, warp, warp_stack, ControlGrid, DisplacementField, RegConfig,
};
use crate::seg::{
    kmeans_init, lgmm_solve, segmentation_energy, update_mixture_params, BiasField,
    MixtureParams, SegConfig,
};

/// Pairing of segmentation-class groups with atlas-class groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassGrouping {
    seg_classes: usize,
    atlas_classes: usize,
    groups: Vec<(Vec<usize>, Vec<usize>)>,
}

impl ClassGrouping {
    /// Every class is its own group; coupling reduces to the plain
    /// per-class cross entropy.
    pub fn identity(k: usize) -> ClassGrouping {
        ClassGrouping {
            seg_classes: k,
            atlas_classes: k,
            groups: (0..k).map(|i| (vec![i], vec![i])).collect(),
        }
    }

    /// Validated grouping: the seg sides and atlas sides must each
    /// partition their id range, with at least two groups.
    pub fn new(
        seg_classes: usize,
        atlas_classes: usize,
        groups: Vec<(Vec<usize>, Vec<usize>)>,
    ) -> Result<ClassGrouping> {
        if groups.len() < 2 {
            return Err(Error::InvalidGrouping("need at least two groups".into()));
        }
        let mut seg_seen = vec![false; seg_classes];
        let mut atlas_seen = vec![false; atlas_classes];
        for (seg_ids, atlas_ids) in &groups {
            if atlas_ids.is_empty() {
                return Err(Error::InvalidGrouping("a group has no atlas classes".into()));
            }
            for &s in seg_ids {
                if s >= seg_classes || seg_seen[s] {
                    return Err(Error::InvalidGrouping(format!(
                        "seg class {s} out of range or repeated"
                    )));
                }
                seg_seen[s] = true;
            }
            for &a in atlas_ids {
                if a >= atlas_classes || atlas_seen[a] {
                    return Err(Error::InvalidGrouping(format!(
                        "atlas class {a} out of range or repeated"
                    )));
                }
                atlas_seen[a] = true;
            }
        }
        if !seg_seen.iter().all(|&b| b) || !atlas_seen.iter().all(|&b| b) {
            return Err(Error::InvalidGrouping(
                "groups must cover every seg and atlas class".into(),
            ));
        }
        Ok(ClassGrouping { seg_classes, atlas_classes, groups })
    }

    pub fn seg_classes(&self) -> usize {
        self.seg_classes
    }

    pub fn atlas_classes(&self) -> usize {
        self.atlas_classes
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[(Vec<usize>, Vec<usize>)] {
        &self.groups
    }

    fn group_of_seg(&self, class: usize) -> usize {
        self.groups
            .iter()
            .position(|(seg, _)| seg.contains(&class))
            .expect("validated partition")
    }

    /// Sum a stack's channels over this grouping's side.
    fn grouped_stack(&self, s: &SoftSegmentation, atlas_side: bool) -> Result<SoftSegmentation> {
        let shape = s.shape();
        let n = shape.len();
        let channels = self
            .groups
            .iter()
            .map(|(seg_ids, atlas_ids)| {
                let ids = if atlas_side { atlas_ids } else { seg_ids };
                let mut acc = vec![0.0; n];
                for &id in ids {
                    let d = s.channel(id).data();
                    for i in 0..n {
                        acc[i] += d[i];
                    }
                }
                ScalarField::from_vec(shape, acc)
            })
            .collect::<Result<Vec<_>>>()?;
        SoftSegmentation::from_unnormalized(channels)
    }
}

/// Grouped cross entropy `-xi * sum_x sum_g p_g(x) log q_g(x)` and the
/// per-seg-class prior map feeding the membership update.
///
/// `p_g` sums the membership channels of a group and `q_g` the
/// normalized warped-atlas channels; every seg class in a group
/// receives its group's `q` as prior. Channels are floored before the
/// logarithm.
pub fn grouped_cross_entropy(
    u: &SoftSegmentation,
    warped_atlas: &SoftSegmentation,
    grouping: &ClassGrouping,
    xi: f64,
    prior_floor: f64,
) -> Result<(f64, Vec<ScalarField>)> {
    if u.k() != grouping.seg_classes || warped_atlas.k() != grouping.atlas_classes {
        return Err(Error::InvalidGrouping(format!(
            "grouping is {}x{} but stacks have {} and {} channels",
            grouping.seg_classes,
            grouping.atlas_classes,
            u.k(),
            warped_atlas.k()
        )));
    }
    let shape = u.shape();
    let n = shape.len();

    // q_g = normalized grouped atlas mass, floored away from zero.
    let mut denom = vec![0.0f64; n];
    for ch in warped_atlas.channels() {
        let d = ch.data();
        for i in 0..n {
            denom[i] += d[i];
        }
    }
    let mut q_maps = Vec::with_capacity(grouping.groups.len());
    for (g, (_, atlas_ids)) in grouping.groups.iter().enumerate() {
        let mut q = vec![0.0f64; n];
        for &id in atlas_ids {
            let d = warped_atlas.channel(id).data();
            for i in 0..n {
                q[i] += d[i];
            }
        }
        let mass: f64 = q.iter().sum();
        if mass <= 0.0 {
            return Err(Error::InvalidGrouping(format!(
                "group {g} has zero atlas mass everywhere"
            )));
        }
        for i in 0..n {
            q[i] = (q[i] / denom[i].max(prior_floor)).max(prior_floor);
        }
        q_maps.push(ScalarField::from_vec(shape, q)?);
    }

    let mut ce = 0.0;
    for (g, (seg_ids, _)) in grouping.groups.iter().enumerate() {
        let q = q_maps[g].data();
        for &k in seg_ids {
            let uk = u.channel(k).data();
            ce += exec::sum(n, |i| uk[i] * q[i].ln());
        }
    }
    let prior: Vec<ScalarField> = (0..grouping.seg_classes)
        .map(|k| q_maps[grouping.group_of_seg(k)].clone())
        .collect();
    Ok((-xi * ce, prior))
}

/// Outer-loop configuration.
#[derive(Clone, Debug)]
pub struct JointConfig {
    pub seg: SegConfig,
    pub reg: RegConfig,
    /// Cross-entropy coupling weight.
    pub xi: f64,
    /// Maximum outer iterations.
    pub m_iter: usize,
    /// Outer stop: `(E_next - E)^2 / E^2 < tol`.
    pub tol: f64,
    /// Identity over the segmentation K when absent.
    pub grouping: Option<ClassGrouping>,
    /// Seed for the K-means initialization.
    pub seed: u64,
}

impl JointConfig {
    pub fn new(k: usize) -> JointConfig {
        JointConfig {
            seg: SegConfig::new(k),
            reg: RegConfig::default(),
            xi: 0.01,
            m_iter: 10,
            tol: 1e-5,
            grouping: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvergenceStatus {
    /// Stopped on the energy tolerance after this many outer iterations.
    Converged { outer_iters: usize },
    MaxIterations,
}

/// Full output of the joint pipeline.
#[derive(Clone, Debug)]
pub struct JointResult {
    pub u: SoftSegmentation,
    pub params: MixtureParams,
    pub beta: BiasField,
    pub displacement: DisplacementField,
    pub grid: Option<ControlGrid>,
    /// Argmax of the membership channels.
    pub labels_seg: LabelMap,
    /// Argmax of the warped atlas channels.
    pub labels_atlas: LabelMap,
    pub warped_atlas: SoftSegmentation,
    /// Energy after initialization and after each outer iteration.
    pub trace: Vec<EnergyBreakdown>,
    pub status: ConvergenceStatus,
}

impl JointResult {
    /// The label channel carrying the anatomical classes: the warped
    /// atlas when the class counts differ, the memberships otherwise.
    pub fn final_labels(&self) -> &LabelMap {
        if self.labels_seg.k() != self.labels_atlas.k() {
            &self.labels_atlas
        } else {
            &self.labels_seg
        }
    }
}

/// Ablation switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMode {
    Joint,
    /// No registration, no coupling: the inner mixture solver alone.
    SegOnly,
    /// Pure SSD registration; labels come from the warped atlas.
    RegOnly,
}

fn check_normalized(f: &ScalarField, name: &'static str) -> Result<()> {
    let (lo, hi) = f.min_max();
    if lo < -1e-9 || hi > 1.0 + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "{name} must be normalized to [0,1], found range [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn floored(s: &SoftSegmentation, floor: f64) -> Result<SoftSegmentation> {
    SoftSegmentation::from_unnormalized(
        s.channels().iter().map(|c| c.map(|v| v.max(floor))).collect(),
    )
}

/// Alternate segmentation and registration from a K-means start.
pub fn joint_solve(
    fixed: &ScalarField,
    moving: &ScalarField,
    atlas: &SoftSegmentation,
    cfg: &JointConfig,
) -> Result<JointResult> {
    solve_with_mode(fixed, moving, atlas, cfg, SolveMode::Joint)
}

/// Run the pipeline in one of its ablation modes with the same result
/// shape, for side-by-side comparison tables.
pub fn run_ablation(
    fixed: &ScalarField,
    moving: &ScalarField,
    atlas: &SoftSegmentation,
    cfg: &JointConfig,
    mode: SolveMode,
) -> Result<JointResult> {
    solve_with_mode(fixed, moving, atlas, cfg, mode)
}

fn solve_with_mode(
    fixed: &ScalarField,
    moving: &ScalarField,
    atlas: &SoftSegmentation,
    cfg: &JointConfig,
    mode: SolveMode,
) -> Result<JointResult> {
    cfg.seg.validate()?;
    cfg.reg.validate()?;
    check_normalized(fixed, "fixed image")?;
    check_normalized(moving, "moving image")?;
    if fixed.shape() != moving.shape() || fixed.shape() != atlas.shape() {
        return Err(Error::ShapeMismatch {
            expected: fixed.shape().to_string(),
            got: format!("moving {} / atlas {}", moving.shape(), atlas.shape()),
            context: "joint_solve",
        });
    }
    let grouping = match &cfg.grouping {
        Some(g) => {
            if g.seg_classes() != cfg.seg.k || g.atlas_classes() != atlas.k() {
                return Err(Error::InvalidGrouping(format!(
                    "grouping is {}x{} but K={} and atlas has {} channels",
                    g.seg_classes(),
                    g.atlas_classes(),
                    cfg.seg.k,
                    atlas.k()
                )));
            }
            g.clone()
        }
        None => {
            if atlas.k() != cfg.seg.k {
                return Err(Error::InvalidGrouping(format!(
                    "atlas has {} channels but K={}; supply a grouping",
                    atlas.k(),
                    cfg.seg.k
                )));
            }
            ClassGrouping::identity(cfg.seg.k)
        }
    };
    let atlas_f = floored(atlas, cfg.seg.prior_floor)?;

    if mode == SolveMode::RegOnly {
        return solve_reg_only(fixed, moving, &atlas_f, cfg, &grouping);
    }
    let xi = if mode == SolveMode::SegOnly { 0.0 } else { cfg.xi };

    let shape = fixed.shape();
    let mut u = kmeans_init(fixed, cfg.seg.k, cfg.seed)?;
    let mut beta = BiasField::uniform(shape);
    let mut t = DisplacementField::zeros(shape);
    let mut grid: Option<ControlGrid> = None;
    let mut params: Option<MixtureParams> = None;

    // Initial objective with k-means statistics and unit bias.
    let mut warped_atlas = warp_stack(&atlas_f, &t)?;
    let mut trace: Vec<EnergyBreakdown> = Vec::new();
    {
        let mut frozen = cfg.seg.clone();
        frozen.estimate_bias = false;
        let (p0, _) = update_mixture_params(fixed, &u, &beta, None, None, &frozen)?;
        let e = total_energy(
            fixed, moving, &u, &p0, &beta, &t, grid.as_ref(), &warped_atlas, &grouping, cfg, xi,
            mode,
        )?;
        trace.push(e);
    }

    let mut status = ConvergenceStatus::MaxIterations;
    for iter in 0..cfg.m_iter {
        // (i)+(ii): inner mixture loop with the atlas warped by T^t.
        let warped_moving = match mode {
            SolveMode::Joint if cfg.seg.zeta > 0.0 => Some(warp(moving, &t)?),
            _ => None,
        };
        let prior = if xi > 0.0 {
            let (_, prior) =
                grouped_cross_entropy(&u, &warped_atlas, &grouping, xi, cfg.seg.prior_floor)?;
            Some(prior)
        } else {
            None
        };
        let inner = lgmm_solve(
            fixed,
            &u,
            &beta,
            &cfg.seg,
            prior.as_deref(),
            warped_moving.as_ref(),
            xi,
        )?;
        u = inner.u;
        beta = inner.beta;
        params = Some(inner.params);

        // (iii): registration against the bias-corrected image.
        if mode == SolveMode::Joint {
            let fixed_corrected = beta.correct(fixed);
            let grouped_atlas = grouping.grouped_stack(&atlas_f, true)?;
            let grouped_u = grouping.grouped_stack(&u, false)?;
            let mut reg_cfg = cfg.reg.clone();
            reg_cfg.xi = cfg.xi;
            reg_cfg.zeta = cfg.seg.zeta;
            let res = register(
                &fixed_corrected,
                moving,
                &grouped_atlas,
                &grouped_u,
                &reg_cfg,
                Some(&t),
            )?;
            t = res.displacement;
            grid = Some(res.grid);
            warped_atlas = warp_stack(&atlas_f, &t)?;
        }

        let e = total_energy(
            fixed,
            moving,
            &u,
            params.as_ref().unwrap(),
            &beta,
            &t,
            grid.as_ref(),
            &warped_atlas,
            &grouping,
            cfg,
            xi,
            mode,
        )?;
        let (prev, cur) = (trace.last().unwrap().total(), e.total());
        trace.push(e);
        if cur > prev + 0.10 * prev.abs() {
            return Err(Error::EnergyDivergence { iter, from: prev, to: cur, trace });
        }
        let rel2 = (cur - prev) * (cur - prev) / (prev * prev).max(1e-300);
        if rel2 < cfg.tol {
            status = ConvergenceStatus::Converged { outer_iters: iter + 1 };
            break;
        }
    }

    let labels_seg = argmax_label(&u);
    let labels_atlas = argmax_label(&warped_atlas);
    Ok(JointResult {
        u,
        params: params.expect("m_iter >= 1"),
        beta,
        displacement: t,
        grid,
        labels_seg,
        labels_atlas,
        warped_atlas,
        trace,
        status,
    })
}

fn solve_reg_only(
    fixed: &ScalarField,
    moving: &ScalarField,
    atlas_f: &SoftSegmentation,
    cfg: &JointConfig,
    grouping: &ClassGrouping,
) -> Result<JointResult> {
    let shape = fixed.shape();
    let mut reg_cfg = cfg.reg.clone();
    reg_cfg.xi = 0.0;
    let flat = SoftSegmentation::uniform(shape, grouping.group_count().max(2));
    let res = register(fixed, moving, &flat, &flat, &reg_cfg, None)?;
    let t = res.displacement;
    let warped_atlas = warp_stack(atlas_f, &t)?;

    // Mixture statistics fitted once to the warped atlas, so the result
    // carries meaningful parameters for reporting.
    let beta = BiasField::uniform(shape);
    let stats_u = if warped_atlas.k() == cfg.seg.k {
        warped_atlas.clone()
    } else {
        SoftSegmentation::uniform(shape, cfg.seg.k)
    };
    let mut frozen = cfg.seg.clone();
    frozen.estimate_bias = false;
    let (params, _) = update_mixture_params(fixed, &stats_u, &beta, None, None, &frozen)?;

    let trace: Vec<EnergyBreakdown> = res
        .levels
        .iter()
        .map(|lvl| EnergyBreakdown {
            fidelity: lvl.final_energy,
            ..EnergyBreakdown::default()
        })
        .collect();
    let labels_atlas = argmax_label(&warped_atlas);
    Ok(JointResult {
        u: warped_atlas.clone(),
        params,
        beta,
        displacement: t,
        grid: Some(res.grid),
        labels_seg: labels_atlas.clone(),
        labels_atlas,
        warped_atlas,
        trace,
        status: ConvergenceStatus::Converged { outer_iters: 1 },
    })
}

#[allow(clippy::too_many_arguments)]
fn total_energy(
    fixed: &ScalarField,
    moving: &ScalarField,
    u: &SoftSegmentation,
    params: &MixtureParams,
    beta: &BiasField,
    t: &DisplacementField,
    grid: Option<&ControlGrid>,
    warped_atlas: &SoftSegmentation,
    grouping: &ClassGrouping,
    cfg: &JointConfig,
    xi: f64,
    mode: SolveMode,
) -> Result<EnergyBreakdown> {
    let prior = if xi > 0.0 {
        let (_, prior) = grouped_cross_entropy(u, warped_atlas, grouping, xi, cfg.seg.prior_floor)?;
        Some(prior)
    } else {
        None
    };
    let mut e = segmentation_energy(fixed, u, params, beta, &cfg.seg, prior.as_deref(), xi)?;
    if mode == SolveMode::Joint && cfg.seg.zeta > 0.0 {
        let warped = warp(moving, t)?;
        e.fidelity = crate::seg::energy::fidelity_energy(fixed, beta, &warped, cfg.seg.zeta);
    }
    if let Some(g) = grid {
        e.tikhonov = 0.5 * cfg.reg.eta * tikhonov_energy(g);
    }
    if !e.is_finite() {
        return Err(Error::Numerical {
            term: "joint energy",
            detail: "non-finite total".into(),
        });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Shape;
    use crate::phantom::{make_pair, PhantomSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_grouping_matches_plain_cross_entropy() {
        let shape = Shape::d2(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |rng: &mut ChaCha8Rng| {
            let channels: Vec<ScalarField> = (0..3)
                .map(|_| {
                    ScalarField::from_vec(
                        shape,
                        (0..shape.len()).map(|_| rng.gen_range(0.01..1.0)).collect(),
                    )
                    .unwrap()
                })
                .collect();
            SoftSegmentation::from_unnormalized(channels).unwrap()
        };
        let u = mk(&mut rng);
        let s = mk(&mut rng);
        let xi = 0.7;
        let floor = 1e-8;
        let (ce, prior) =
            grouped_cross_entropy(&u, &s, &ClassGrouping::identity(3), xi, floor).unwrap();

        // plain per-class cross entropy against the normalized stack
        let mut plain = 0.0;
        for i in 0..shape.len() {
            let denom: f64 = (0..3).map(|k| s.channel(k).at(i)).sum();
            for k in 0..3 {
                let q = (s.channel(k).at(i) / denom).max(floor);
                plain -= xi * u.channel(k).at(i) * q.ln();
            }
        }
        assert!((ce - plain).abs() < 1e-12, "{ce} vs {plain}");
        assert_eq!(prior.len(), 3);
    }

    #[test]
    fn grouped_ce_matches_brute_double_sum() {
        let shape = Shape::d2(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u_ch: Vec<ScalarField> = (0..3)
            .map(|_| {
                ScalarField::from_vec(
                    shape,
                    (0..shape.len()).map(|_| rng.gen_range(0.01..1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let u = SoftSegmentation::from_unnormalized(u_ch).unwrap();
        let s_ch: Vec<ScalarField> = (0..4)
            .map(|_| {
                ScalarField::from_vec(
                    shape,
                    (0..shape.len()).map(|_| rng.gen_range(0.01..1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let s = SoftSegmentation::from_unnormalized(s_ch).unwrap();
        let grouping =
            ClassGrouping::new(3, 4, vec![(vec![1], vec![0, 1, 2]), (vec![0, 2], vec![3])])
                .unwrap();
        let xi = 0.4;
        let floor = 1e-8;
        let (ce, prior) = grouped_cross_entropy(&u, &s, &grouping, xi, floor).unwrap();

        let mut brute = 0.0;
        for i in 0..shape.len() {
            let denom: f64 = (0..4).map(|k| s.channel(k).at(i)).sum();
            let q1 = ((s.channel(0).at(i) + s.channel(1).at(i) + s.channel(2).at(i)) / denom)
                .max(floor);
            let q2 = (s.channel(3).at(i) / denom).max(floor);
            let p1 = u.channel(1).at(i);
            let p2 = u.channel(0).at(i) + u.channel(2).at(i);
            brute -= xi * (p1 * q1.ln() + p2 * q2.ln());
        }
        assert!((ce - brute).abs() < 1e-10, "{ce} vs {brute}");
        // seg classes 0 and 2 share group 2's map; class 1 gets group 1's
        assert_eq!(prior[0].data(), prior[2].data());
        assert!(prior[0].data() != prior[1].data());
    }

    #[test]
    fn grouping_validation() {
        assert!(ClassGrouping::new(3, 4, vec![(vec![0, 1, 2], vec![0, 1, 2, 3])]).is_err());
        assert!(
            ClassGrouping::new(3, 4, vec![(vec![0], vec![0]), (vec![1], vec![1, 2, 3])]).is_err()
        );
        assert!(ClassGrouping::new(
            2,
            2,
            vec![(vec![0], vec![0]), (vec![1], vec![1])]
        )
        .is_ok());
    }

    #[test]
    fn self_registration_recovers_atlas() {
        let spec = {
            let mut s = PhantomSpec::distinct_pair(Shape::d2(48, 48), 9);
            s.deform_amplitude = 0.0;
            s.bias_amplitude = 0.0;
            s.noise_std = 0.0;
            s.boundary_breaks = 0;
            s
        };
        let p = make_pair(&spec).unwrap();
        let atlas = p.gt_moving.one_hot();
        let mut cfg = JointConfig::new(3);
        cfg.seg.sigma = 8.0;
        cfg.seg.lambda = 0.001;
        cfg.seg.m_lgmm = 30;
        cfg.reg.levels = 4;
        cfg.m_iter = 3;
        cfg.xi = 0.01;
        let res = joint_solve(&p.fixed, &p.moving, &atlas, &cfg).unwrap();
        assert!(res.displacement.max_abs() < 0.75, "|T| = {}", res.displacement.max_abs());
        let gt = p.gt_fixed.ids();
        let agree = res
            .labels_seg
            .ids()
            .iter()
            .zip(gt)
            .filter(|(a, b)| a == b)
            .count() as f64
            / gt.len() as f64;
        assert!(agree > 0.99, "label agreement {agree}");
    }

    #[test]
    fn decoupled_joint_equals_seg_only_bitwise() {
        let spec = PhantomSpec::distinct_pair(Shape::d2(40, 40), 21);
        let p = make_pair(&spec).unwrap();
        let atlas = p.gt_moving.one_hot();
        let mut cfg = JointConfig::new(3);
        cfg.seg.sigma = 8.0;
        cfg.seg.m_lgmm = 10;
        cfg.seg.zeta = 0.0;
        cfg.xi = 0.0;
        cfg.m_iter = 2;
        cfg.reg.levels = 3;
        let joint = joint_solve(&p.fixed, &p.moving, &atlas, &cfg).unwrap();
        let seg_only = run_ablation(&p.fixed, &p.moving, &atlas, &cfg, SolveMode::SegOnly).unwrap();
        assert_eq!(joint.displacement.max_abs(), 0.0);
        for k in 0..3 {
            assert_eq!(
                joint.u.channel(k).data(),
                seg_only.u.channel(k).data(),
                "channel {k} differs"
            );
        }
        assert_eq!(joint.labels_seg.ids(), seg_only.labels_seg.ids());
    }

    #[test]
    fn reg_only_with_identical_images_returns_atlas_argmax() {
        let spec = {
            let mut s = PhantomSpec::distinct_pair(Shape::d2(40, 40), 13);
            s.deform_amplitude = 0.0;
            s.bias_amplitude = 0.0;
            s.noise_std = 0.0;
            s
        };
        let p = make_pair(&spec).unwrap();
        let atlas = p.gt_moving.one_hot();
        let mut cfg = JointConfig::new(3);
        cfg.reg.levels = 3;
        let res = run_ablation(&p.fixed, &p.moving, &atlas, &cfg, SolveMode::RegOnly).unwrap();
        let agree = res
            .labels_atlas
            .ids()
            .iter()
            .zip(p.gt_moving.ids())
            .filter(|(a, b)| a == b)
            .count() as f64
            / (40.0 * 40.0);
        assert!(agree > 0.995, "agreement {agree}");
    }
}
