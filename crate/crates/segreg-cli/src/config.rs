//! Flat key-value run configuration.
//!
//! Every key has a default; unknown keys are rejected and numeric keys
//! are range-checked. Lines are `key = value`, with `#` comments.

use std::path::PathBuf;

use segreg::joint::{ClassGrouping, JointConfig};
use segreg::{Error, Kernel, Result};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub joint: JointConfig,
    pub omega_side: usize,
    pub threads: usize,
    /// Grouping spec text, resolved against the atlas channel count at load time.
    pub pending_grouping: Option<String>,
    pub fixed: Option<PathBuf>,
    pub moving: Option<PathBuf>,
    pub atlas: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            joint: JointConfig::new(3),
            omega_side: 7,
            threads: 0,
            pending_grouping: None,
            fixed: None,
            moving: None,
            atlas: None,
            out: None,
        }
    }
}

fn bad(msg: String) -> Error {
    Error::InvalidArgument(msg)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| bad(format!("config key {key}: cannot parse {value:?}")))
}

fn check_range(key: &str, v: f64, lo: f64, hi: f64) -> Result<f64> {
    if !v.is_finite() || v < lo || v > hi {
        return Err(bad(format!("config key {key}={v} outside [{lo}, {hi}]")));
    }
    Ok(v)
}

/// Grouping syntax: groups separated by `|`, each `segids:atlasids`
/// with comma-separated zero-based ids, e.g. `1:0,1,2|0,2:3`.
pub fn parse_grouping(spec: &str, seg_classes: usize, atlas_classes: usize) -> Result<ClassGrouping> {
    let mut groups = Vec::new();
    for part in spec.split('|') {
        let (seg, atlas) = part
            .split_once(':')
            .ok_or_else(|| bad(format!("grouping part {part:?} missing ':'")))?;
        let parse_ids = |s: &str| -> Result<Vec<usize>> {
            if s.trim().is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| bad(format!("bad class id {t:?} in grouping")))
                })
                .collect()
        };
        groups.push((parse_ids(seg)?, parse_ids(atlas)?));
    }
    ClassGrouping::new(seg_classes, atlas_classes, groups)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let j = &mut self.joint;
        match key {
            "k" => {
                let k: usize = parse_num(key, value)?;
                if !(2..=64).contains(&k) {
                    return Err(bad(format!("k={k} outside [2, 64]")));
                }
                let grouping = j.grouping.take();
                let mut nj = JointConfig::new(k);
                nj.seg = j.seg.clone();
                nj.seg.k = k;
                nj.reg = j.reg.clone();
                nj.xi = j.xi;
                nj.m_iter = j.m_iter;
                nj.tol = j.tol;
                nj.seed = j.seed;
                nj.grouping = grouping;
                *j = nj;
            }
            "sigma" => j.seg.sigma = check_range(key, parse_num(key, value)?, 1e-3, 1e3)?,
            "epsilon" => j.seg.epsilon = check_range(key, parse_num(key, value)?, 1e-6, 1e3)?,
            "lambda" => j.seg.lambda = check_range(key, parse_num(key, value)?, 0.0, 1e3)?,
            "omega_side" => {
                let side: usize = parse_num(key, value)?;
                j.seg.omega = Kernel::boxcar(side)?;
                self.omega_side = side;
            }
            "zeta" => j.seg.zeta = check_range(key, parse_num(key, value)?, 0.0, 1e6)?,
            "xi" => j.xi = check_range(key, parse_num(key, value)?, 0.0, 1e6)?,
            "eta" => j.reg.eta = check_range(key, parse_num(key, value)?, 0.0, 1e6)?,
            "levels" => {
                let l: usize = parse_num(key, value)?;
                if !(1..=16).contains(&l) {
                    return Err(bad(format!("levels={l} outside [1, 16]")));
                }
                j.reg.levels = l;
            }
            "downscale" => {
                j.reg.downscale = check_range(key, parse_num(key, value)?, 0.05, 0.99)?
            }
            "knot_spacing" => {
                let n: usize = parse_num(key, value)?;
                if !(1..=64).contains(&n) {
                    return Err(bad(format!("knot_spacing={n} outside [1, 64]")));
                }
                j.reg.knot_spacing = n;
            }
            "m_iter" => j.m_iter = parse_num(key, value)?,
            "m_lgmm" => j.seg.m_lgmm = parse_num(key, value)?,
            "m_lbfgs" => j.reg.m_lbfgs = parse_num(key, value)?,
            "lbfgs_memory" => j.reg.lbfgs_memory = parse_num(key, value)?,
            "grad_tol" => j.reg.grad_tol = check_range(key, parse_num(key, value)?, 0.0, 1.0)?,
            "tol" => {
                let t = check_range(key, parse_num(key, value)?, 0.0, 1.0)?;
                j.tol = t;
                j.seg.tol = t;
            }
            "variance_floor" => {
                j.seg.variance_floor = check_range(key, parse_num(key, value)?, 1e-300, 1.0)?
            }
            "weight_floor" => {
                j.seg.weight_floor = check_range(key, parse_num(key, value)?, 1e-300, 0.5)?
            }
            "beta_floor" => {
                j.seg.beta_floor = check_range(key, parse_num(key, value)?, 1e-300, 1.0)?
            }
            "prior_floor" => {
                let f = check_range(key, parse_num(key, value)?, 1e-300, 0.5)?;
                j.seg.prior_floor = f;
                j.reg.prior_floor = f;
            }
            "estimate_bias" => {
                j.seg.estimate_bias = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(bad(format!("estimate_bias must be true/false, got {value}"))),
                }
            }
            "seed" => j.seed = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            "grouping" => {
                // resolved later once the atlas channel count is known
                self.pending_grouping = Some(value.to_string());
            }
            "fixed" => self.fixed = Some(PathBuf::from(value)),
            "moving" => self.moving = Some(PathBuf::from(value)),
            "atlas" => self.atlas = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(bad(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse_file(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Text echo of the effective configuration.
    pub fn to_text(&self) -> String {
        let j = &self.joint;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("k", j.seg.k.to_string());
        kv("sigma", j.seg.sigma.to_string());
        kv("epsilon", j.seg.epsilon.to_string());
        kv("lambda", j.seg.lambda.to_string());
        kv("omega_side", self.omega_side.to_string());
        kv("zeta", j.seg.zeta.to_string());
        kv("xi", j.xi.to_string());
        kv("eta", j.reg.eta.to_string());
        kv("levels", j.reg.levels.to_string());
        kv("downscale", j.reg.downscale.to_string());
        kv("knot_spacing", j.reg.knot_spacing.to_string());
        kv("m_iter", j.m_iter.to_string());
        kv("m_lgmm", j.seg.m_lgmm.to_string());
        kv("m_lbfgs", j.reg.m_lbfgs.to_string());
        kv("lbfgs_memory", j.reg.lbfgs_memory.to_string());
        kv("grad_tol", j.reg.grad_tol.to_string());
        kv("tol", j.tol.to_string());
        kv("variance_floor", j.seg.variance_floor.to_string());
        kv("weight_floor", j.seg.weight_floor.to_string());
        kv("beta_floor", j.seg.beta_floor.to_string());
        kv("prior_floor", j.seg.prior_floor.to_string());
        kv("estimate_bias", j.seg.estimate_bias.to_string());
        kv("seed", j.seed.to_string());
        kv("threads", self.threads.to_string());
        if let Some(g) = &self.pending_grouping {
            kv("grouping", g.clone());
        }
        s
    }
}
