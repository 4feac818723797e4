//! Experiment configuration: one TOML file, overridden by flags.

use std::fmt::Write as _;
use std::path::Path;

use room_layout::geometry::Intrinsics;
use room_layout::pipeline::PipelineConfig;
use room_layout::synth::{default_intrinsics, NoiseSpec, RoomSpec, TrajectorySpec};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Seed of the synthetic noise; `--seed` also sets the trajectory and
    /// pipeline seeds.
    pub seed: u64,
    pub intrinsics: Intrinsics,
    pub room: RoomSpec,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseSpec,
    pub pipeline: PipelineConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            intrinsics: default_intrinsics(),
            room: RoomSpec::default(),
            trajectory: TrajectorySpec::default(),
            noise: NoiseSpec::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Every configuration key with its unit and meaning, in help order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "-", "seed of the synthetic measurement noise"),
    ("intrinsics.fx", "px", "focal length along x"),
    ("intrinsics.fy", "px", "focal length along y"),
    ("intrinsics.cx", "px", "principal point x"),
    ("intrinsics.cy", "px", "principal point y"),
    ("intrinsics.width", "px", "image width"),
    ("intrinsics.height", "px", "image height"),
    ("room.footprint", "m", "counter-clockwise floor polygon [[x, y], ...]"),
    ("room.floor_z", "m", "floor height"),
    ("room.height", "m", "floor-to-ceiling distance"),
    ("trajectory.mode", "-", "orbit | random_walk"),
    ("trajectory.frames", "-", "number of frames"),
    ("trajectory.seed", "-", "seed of the random walk"),
    ("trajectory.eye_height", "m", "camera height above the floor"),
    ("trajectory.center", "m", "orbit centre [x, y]; footprint centroid when unset"),
    ("trajectory.radius", "m", "orbit radius"),
    ("trajectory.yaw_turns", "turns", "heading turns over the sequence"),
    ("trajectory.pitch_amplitude_deg", "deg", "pitch amplitude"),
    ("trajectory.pitch_cycles", "-", "pitch oscillations over the sequence"),
    ("trajectory.step_m", "m", "random-walk step length"),
    ("noise.sigma_normal_deg", "deg", "normal perturbation scale"),
    ("noise.sigma_d_m", "m", "offset perturbation scale"),
    ("noise.sigma_bbox_px", "px", "box corner jitter"),
    ("noise.p_dropout", "-", "probability of dropping a detection"),
    ("noise.p_spurious", "-", "per-frame probability of a spurious detection"),
    ("noise.heavy_tail", "-", "Student-t instead of normal perturbations"),
    ("noise.dof", "-", "Student-t degrees of freedom"),
    ("pipeline.min_angle_deg", "deg", "grazing filter: minimum angle to the image plane's perpendicular"),
    ("pipeline.w_min", "-", "minimum mixture weight of a room plane"),
    ("pipeline.k_max_walls", "-", "initial wall mixture components"),
    ("pipeline.k_max_fc", "-", "initial floor/ceiling mixture components"),
    ("pipeline.n_voters", "-", "voting patches per wall plane"),
    ("pipeline.gap_m", "m", "floor-to-ceiling distance when only one is observed"),
    ("pipeline.margin_m", "m", "padding of the scene bounds"),
    ("pipeline.seed", "-", "mixture seeding"),
    ("pipeline.s_n", "m", "weight of the normal against the offset in clustering"),
    ("pipeline.floor_z", "m", "fallback floor height; unset by default"),
    ("pipeline.room_height", "m", "fallback room height; unset by default"),
    ("pipeline.up", "-", "world up direction"),
    ("pipeline.record_timings", "-", "store stage timings in the report"),
    ("pipeline.voting.t_vc", "-", "minimum fraction of a voter on the candidate"),
    ("pipeline.voting.t_cv", "-", "minimum fraction of the candidate covered by a voter"),
    ("pipeline.voting.a", "-", "exponent of the inlier ratio"),
    ("pipeline.voting.e_min", "-", "acceptance threshold on the energy"),
    ("pipeline.voting.v_min", "-", "minimum voters of an accepted candidate"),
    ("pipeline.voting.ratio_mode", "-", "multiply_corrected | divide_paper_literal"),
    ("pipeline.mixture.alpha0", "-", "Dirichlet concentration of the weights"),
    ("pipeline.mixture.variance_floor", "-", "per-dimension variance floor"),
    ("pipeline.mixture.tolerance", "-", "EM convergence threshold on the objective"),
    ("pipeline.mixture.max_iterations", "-", "EM iteration cap per phase"),
    ("pipeline.mixture.merge", "-", "merge redundant components"),
    ("pipeline.mixture.coincident_angle_deg", "deg", "merge components closer than this angle ..."),
    ("pipeline.mixture.coincident_offset_m", "m", "... and this offset"),
];

/// `key = value` pairs of the defaults, flattened with dotted keys.
pub fn flatten(v: &Value, prefix: &str, out: &mut Vec<(String, String)>) {
    match v {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(v, &key, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

pub fn default_values() -> Vec<(String, String)> {
    let mut out = Vec::new();
    flatten(&Value::try_from(CliConfig::default()).expect("serializable defaults"), "", &mut out);
    out
}

/// Help section listing every key with default and unit.
pub fn keys_help() -> String {
    let defaults = default_values();
    let mut s = String::from("Configuration keys (TOML file sections or --set key=value):\n");
    for (key, unit, doc) in KEYS {
        let def = defaults.iter().find(|(k, _)| k == key).map_or("unset", |(_, v)| v.as_str());
        writeln!(s, "  {key:<40} [{unit}] default {def}\n      {doc}").unwrap();
    }
    s
}

/// Parses `text` as a TOML value; bare words fall back to strings.
fn parse_value(text: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

fn set_path(root: &mut toml::Table, key: &str, value: Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Usage(format!("empty key in '{key}'")))?;
    let mut table = root;
    for p in parts {
        let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| CliError::Usage(format!("'{p}' in '{key}' is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Recursively overlays `top` on `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Reads the optional config file over the defaults, applies `key=value`
/// overrides and the seed flag, and validates the result.
pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<CliConfig, CliError> {
    let user = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let mut root = toml::Table::try_from(CliConfig::default()).expect("serializable defaults");
    merge(&mut root, user);
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| CliError::Usage(format!("expected key=value, got '{o}'")))?;
        set_path(&mut root, k.trim(), parse_value(v.trim()))?;
    }
    let mut cfg: CliConfig =
        Value::Table(root).try_into().map_err(|e: toml::de::Error| CliError::Usage(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.trajectory.seed = s;
        cfg.pipeline.seed = s;
    }
    cfg.intrinsics.validate().map_err(|e| CliError::Usage(format!("intrinsics: {e}")))?;
    cfg.pipeline.validate().map_err(|e| CliError::Usage(format!("pipeline: {e}")))?;
    Ok(cfg)
}

impl CliConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }
}
