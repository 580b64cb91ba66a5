use std::fmt;

use crate::assign::{DEFAULT_EPSILON, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::costs::DEFAULT_GAMMA;
use crate::error::{Error, Result};
use crate::loss::{LossParams, TripletDistance};
use crate::metrics::DEFAULT_IOU_THRESH;
use crate::pseudo::PseudoParams;
use crate::tracker::{MatcherMode, TrackerConfig};

/// Every tunable threshold, read from a flat `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub sigma: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    pub max_age: u32,
    pub nms_iou: f64,
    pub min_conf: f64,
    pub min_area: f64,
    pub min_match_iou: f64,
    pub tau_occ: f64,
    pub occlusion_max_ratio: f64,
    pub margin: f64,
    pub alpha: f64,
    pub beta: f64,
    pub matcher: MatcherMode,
    pub iou_thresh_eval: f64,
}

impl Default for Config {
    fn default() -> Self {
        let pseudo = PseudoParams::default();
        let loss = LossParams::default();
        Self {
            sigma: 0.7,
            epsilon: DEFAULT_EPSILON,
            gamma: DEFAULT_GAMMA,
            sinkhorn_iters: DEFAULT_MAX_ITERS,
            sinkhorn_tol: DEFAULT_TOL,
            max_age: 10,
            nms_iou: pseudo.nms_iou,
            min_conf: pseudo.min_conf,
            min_area: pseudo.min_area,
            min_match_iou: pseudo.min_match_iou,
            tau_occ: pseudo.tau_occ,
            occlusion_max_ratio: pseudo.occlusion_max_ratio,
            margin: loss.margin,
            alpha: loss.alpha,
            beta: loss.beta,
            matcher: MatcherMode::Sinkhorn,
            iou_thresh_eval: DEFAULT_IOU_THRESH,
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid value '{value}' for {key}"),
    })
}

impl Config {
    /// Parses `key=value` lines over the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::default();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (key, value) = l.split_once('=').ok_or(Error::Parse {
                line,
                message: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "sigma" => c.sigma = parse_value(line, key, value)?,
                "epsilon" => c.epsilon = parse_value(line, key, value)?,
                "gamma" => c.gamma = parse_value(line, key, value)?,
                "sinkhorn_iters" => c.sinkhorn_iters = parse_value(line, key, value)?,
                "sinkhorn_tol" => c.sinkhorn_tol = parse_value(line, key, value)?,
                "max_age" => c.max_age = parse_value(line, key, value)?,
                "nms_iou" => c.nms_iou = parse_value(line, key, value)?,
                "min_conf" => c.min_conf = parse_value(line, key, value)?,
                "min_area" => c.min_area = parse_value(line, key, value)?,
                "min_match_iou" => c.min_match_iou = parse_value(line, key, value)?,
                "tau_occ" => c.tau_occ = parse_value(line, key, value)?,
                "occlusion_max_ratio" => c.occlusion_max_ratio = parse_value(line, key, value)?,
                "margin" => c.margin = parse_value(line, key, value)?,
                "alpha" => c.alpha = parse_value(line, key, value)?,
                "beta" => c.beta = parse_value(line, key, value)?,
                "matcher" => {
                    c.matcher = match value {
                        "sinkhorn" => MatcherMode::Sinkhorn,
                        "hungarian" => MatcherMode::Hungarian,
                        other => {
                            return Err(Error::Parse {
                                line,
                                message: format!("unknown matcher '{other}'"),
                            })
                        }
                    }
                }
                "iou_thresh_eval" => c.iou_thresh_eval = parse_value(line, key, value)?,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name}={v} outside [0, 1]")))
            }
        };
        unit("sigma", self.sigma)?;
        unit("nms_iou", self.nms_iou)?;
        unit("min_conf", self.min_conf)?;
        unit("min_match_iou", self.min_match_iou)?;
        unit("occlusion_max_ratio", self.occlusion_max_ratio)?;
        if !(self.iou_thresh_eval > 0.0 && self.iou_thresh_eval <= 1.0) {
            return Err(Error::InvalidArgument("iou_thresh_eval outside (0, 1]".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if !(self.tau_occ > 0.0) {
            return Err(Error::InvalidArgument("tau_occ must be positive".into()));
        }
        let finite = [self.gamma, self.sinkhorn_tol, self.min_area, self.margin, self.alpha, self.beta];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite config value".into()));
        }
        Ok(())
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            sigma: self.sigma,
            epsilon: self.epsilon,
            gamma: self.gamma,
            sinkhorn_iters: self.sinkhorn_iters,
            sinkhorn_tol: self.sinkhorn_tol,
            max_age: self.max_age,
            matcher: self.matcher,
        }
    }

    pub fn pseudo(&self) -> PseudoParams {
        PseudoParams {
            min_conf: self.min_conf,
            min_area: self.min_area,
            nms_iou: self.nms_iou,
            min_match_iou: self.min_match_iou,
            tau_occ: self.tau_occ,
            occlusion_max_ratio: self.occlusion_max_ratio,
        }
    }

    pub fn loss(&self) -> LossParams {
        LossParams {
            alpha: self.alpha,
            beta: self.beta,
            margin: self.margin,
            distance: TripletDistance::L1,
            epsilon: self.epsilon,
            iters: self.sinkhorn_iters,
        }
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sigma={}", self.sigma)?;
        writeln!(f, "epsilon={}", self.epsilon)?;
        writeln!(f, "gamma={}", self.gamma)?;
        writeln!(f, "sinkhorn_iters={}", self.sinkhorn_iters)?;
        writeln!(f, "sinkhorn_tol={}", self.sinkhorn_tol)?;
        writeln!(f, "max_age={}", self.max_age)?;
        writeln!(f, "nms_iou={}", self.nms_iou)?;
        writeln!(f, "min_conf={}", self.min_conf)?;
        writeln!(f, "min_area={}", self.min_area)?;
        writeln!(f, "min_match_iou={}", self.min_match_iou)?;
        writeln!(f, "tau_occ={}", self.tau_occ)?;
        writeln!(f, "occlusion_max_ratio={}", self.occlusion_max_ratio)?;
        writeln!(f, "margin={}", self.margin)?;
        writeln!(f, "alpha={}", self.alpha)?;
        writeln!(f, "beta={}", self.beta)?;
        let matcher = match self.matcher {
            MatcherMode::Sinkhorn => "sinkhorn",
            MatcherMode::Hungarian => "hungarian",
        };
        writeln!(f, "matcher={matcher}")?;
        writeln!(f, "iou_thresh_eval={}", self.iou_thresh_eval)
    }
}
