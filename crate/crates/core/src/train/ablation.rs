use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::ContrastKind;
use crate::stylecross::StylePlan;

/// One configuration change per cell.
pub type Overrides = Vec<(String, String)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Every style-cross flow, applied to both branches.
    ScFlow,
    /// Contrast term of the liveness branch.
    Contrast,
    /// Baseline, each component alone on top of it, and the full method.
    Components,
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sc_flow" => Ok(Self::ScFlow),
            "contrast" => Ok(Self::Contrast),
            "components" => Ok(Self::Components),
            _ => Err(Error::Config(format!("unknown ablation axis `{s}` (expected sc_flow, contrast or components)"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ScFlow => "sc_flow",
            Self::Contrast => "contrast",
            Self::Components => "components",
        })
    }
}

fn kv(pairs: &[(&str, &str)]) -> Overrides {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Overrides that turn the default configuration into the baseline.
pub fn baseline_overrides() -> Overrides {
    kv(&[("sc_levels", "none"), ("sc_levels_v", "none"), ("cwsa", "false"), ("contrast", "binary"), ("use_v", "false")])
}

/// Named cells of an ablation axis, each a set of overrides applied on top
/// of the caller's configuration.
pub fn ablation_cells(axis: Axis) -> Vec<(String, Overrides)> {
    match axis {
        Axis::ScFlow => StylePlan::all_flows()
            .into_iter()
            .map(|p| {
                let (levels, mode) = (p.levels_config(), p.mode().to_string());
                let o =
                    kv(&[("sc_levels", &levels), ("sc_mode", &mode), ("sc_levels_v", &levels), ("sc_mode_v", &mode)]);
                (p.to_string(), o)
            })
            .collect(),
        Axis::Contrast => {
            ContrastKind::ALL.iter().map(|c| (c.to_string(), kv(&[("contrast", &c.to_string())]))).collect()
        }
        Axis::Components => {
            let base = baseline_overrides();
            let without = |key: &str| -> Overrides { base.iter().filter(|(k, _)| k != key).cloned().collect() };
            let sc: Overrides =
                base.iter().filter(|(k, _)| !k.starts_with("sc_levels") && k != "contrast").cloned().collect();
            vec![
                ("baseline".into(), base.clone()),
                ("sc_aaic".into(), sc),
                ("cwsa".into(), without("cwsa")),
                ("identity_branch".into(), without("use_v")),
                ("full".into(), Vec::new()),
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::TrainConfig;

    #[test]
    fn flow_axis_names() {
        let names: Vec<String> = ablation_cells(Axis::ScFlow).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["L", "M", "H", "LxM", "LxH", "MxH", "LxMxH", "L+M", "L+H", "M+H", "L+M+H"]);
    }

    #[test]
    fn every_cell_is_a_valid_config() {
        for axis in [Axis::ScFlow, Axis::Contrast, Axis::Components] {
            for (name, o) in ablation_cells(axis) {
                let mut c = TrainConfig::default();
                c.apply(&o).unwrap_or_else(|e| panic!("{axis}/{name}: {e}"));
            }
        }
        let mut c = TrainConfig::default();
        c.apply(&baseline_overrides()).unwrap();
        assert!(c.plan_u.is_none() && !c.encoder.cwsa_enabled && !c.use_v);
        assert_eq!(c.contrast, ContrastKind::Binary);
    }
}
