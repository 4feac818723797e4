//! End-to-end reconstruction: lift → filter → cluster → select → floor and
//! ceiling → candidates → vote → assemble.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{
    floor_ceiling_from_heights, generate_candidates, infer_floor_ceiling, scene_bounds, CandidateError, SceneBounds,
};
use crate::clustering::{
    fit_mixture, rank_voters, select_room_planes, split_by_class, ClusterError, MixtureConfig, MixtureModel,
    PlaneCluster, PlaneFeature,
};
use crate::geometry::{PlanarPolygon, Plane};
use crate::layout::{assemble, LayoutError, RoomLayout};
use crate::measurements::{filter_grazing, lift_to_world, DropReport, GlobalMeasurement, SequenceBundle};
use crate::voting::{vote_all, VotingParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Detections closer than this to perpendicular to the image are
    /// discarded, degrees.
    pub min_angle_deg: f64,
    /// Minimum mixture weight of a room plane.
    pub w_min: f64,
    pub k_max_walls: usize,
    pub k_max_fc: usize,
    /// Voting patches per wall plane.
    pub n_voters: usize,
    /// Floor-to-ceiling distance used when only one of them is observed, metres.
    pub gap_m: f64,
    /// Padding of the scene bounds around the observed patches, metres.
    pub margin_m: f64,
    pub seed: u64,
    /// Weight of the normal against the offset in the clustering features, metres.
    pub s_n: f64,
    /// Fallback floor height when no horizontal cluster exists, metres.
    pub floor_z: Option<f64>,
    /// Fallback room height paired with `floor_z`, metres.
    pub room_height: Option<f64>,
    /// World up direction.
    pub up: [f64; 3],
    /// Store wall-clock stage timings in the report (breaks byte-identical reruns).
    pub record_timings: bool,
    pub voting: VotingParams,
    pub mixture: MixtureConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_angle_deg: 30.0,
            w_min: 0.05,
            k_max_walls: 20,
            k_max_fc: 4,
            n_voters: 100,
            gap_m: 2.0,
            margin_m: 0.5,
            seed: 0,
            s_n: 1.0,
            floor_z: None,
            room_height: None,
            up: [0.0, 0.0, 1.0],
            record_timings: false,
            voting: VotingParams::default(),
            mixture: MixtureConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..90.0).contains(&self.min_angle_deg) {
            return Err("min_angle_deg must lie in [0, 90)".into());
        }
        if !(self.w_min > 0.0 && self.w_min < 1.0) {
            return Err("w_min must lie in (0, 1)".into());
        }
        if self.k_max_walls == 0 || self.k_max_fc == 0 {
            return Err("k_max_walls and k_max_fc must be at least 1".into());
        }
        if self.n_voters == 0 {
            return Err("n_voters must be at least 1".into());
        }
        if !(self.gap_m > 0.0) || !(self.margin_m >= 0.0) || !(self.s_n > 0.0) {
            return Err("gap_m and s_n must be positive, margin_m non-negative".into());
        }
        if self.floor_z.is_some() != self.room_height.is_some() {
            return Err("floor_z and room_height must be given together".into());
        }
        if self.room_height.is_some_and(|h| !(h > 0.0)) {
            return Err("room_height must be positive".into());
        }
        let up = Vector3::from(self.up);
        if !(up.norm() > 0.5) {
            return Err("up must be a non-zero vector".into());
        }
        self.voting.validate()
    }

    fn up(&self) -> Vector3<f64> {
        Vector3::from(self.up).normalize()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no room planes selected: {0}")]
    NoPlanesSelected(String),
    #[error("no horizontal cluster and no fallback floor: {0}")]
    NoHorizontalCluster(String),
    #[error("candidate generation failed: {0}")]
    Candidates(String),
    #[error("no candidate was accepted")]
    EmptyLayout,
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::NoPlanesSelected(_) => "NoPlanesSelected",
            Self::NoHorizontalCluster(_) => "NoHorizontalCluster",
            Self::Candidates(_) => "Candidates",
            Self::EmptyLayout => "EmptyLayout",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub loaded: usize,
    pub lifted: usize,
    pub filtered: usize,
    pub walls: usize,
    pub floor_ceiling: usize,
    pub wall_clusters: usize,
    pub selected_walls: usize,
    pub candidates: usize,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub weight: f64,
    pub members: usize,
    pub plane: Plane,
}

impl From<&PlaneCluster> for ClusterSummary {
    fn from(c: &PlaneCluster) -> Self {
        Self { id: c.id, weight: c.weight, members: c.members.len(), plane: c.plane }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    /// Index of the selected wall plane.
    pub plane: usize,
    pub cell: usize,
    pub area: f64,
    pub raw_energy: f64,
    pub energy: f64,
    pub inliers: usize,
    pub voters_total: usize,
    pub r_c: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub counts: StageCounts,
    pub drops: DropReport,
    pub wall_clusters: Vec<ClusterSummary>,
    pub selected_walls: Vec<ClusterSummary>,
    pub floor_ceiling_clusters: Vec<ClusterSummary>,
    pub floor: Option<Plane>,
    pub ceiling: Option<Plane>,
    /// `cluster` or `fallback`.
    pub floor_source: Option<String>,
    pub bounds: Option<SceneBounds>,
    pub votes: Vec<VoteRecord>,
    /// Seconds per stage, only with `record_timings`.
    pub timings: Option<BTreeMap<String, f64>>,
    pub failure: Option<Failure>,
}

impl RunReport {
    fn new(config: &PipelineConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
            counts: StageCounts::default(),
            drops: DropReport::default(),
            wall_clusters: vec![],
            selected_walls: vec![],
            floor_ceiling_clusters: vec![],
            floor: None,
            ceiling: None,
            floor_source: None,
            bounds: None,
            votes: vec![],
            timings: None,
            failure: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

struct Clock {
    enabled: bool,
    last: Instant,
    laps: BTreeMap<String, f64>,
}

impl Clock {
    fn lap(&mut self, stage: &str) {
        if self.enabled {
            let now = Instant::now();
            self.laps.insert(stage.into(), (now - self.last).as_secs_f64());
            self.last = now;
        }
    }
}

fn features(ms: &[GlobalMeasurement], s_n: f64) -> Vec<PlaneFeature> {
    ms.iter().map(|m| PlaneFeature::from_plane(&m.plane_world, s_n)).collect()
}

fn fit(ms: &[GlobalMeasurement], k_max: usize, seed: u64, cfg: &PipelineConfig) -> Result<MixtureModel, ClusterError> {
    fit_mixture(&features(ms, cfg.s_n), k_max, seed, &cfg.mixture)
}

/// Runs every stage. The report is filled as far as the run got, also on
/// failure.
pub fn reconstruct(bundle: &SequenceBundle, cfg: &PipelineConfig) -> (Result<RoomLayout, PipelineError>, RunReport) {
    let mut report = RunReport::new(cfg);
    let result = run(bundle, cfg, &mut report);
    if let Err(e) = &result {
        report.failure = Some(Failure { kind: e.kind().into(), message: e.to_string() });
    }
    (result, report)
}

fn run(bundle: &SequenceBundle, cfg: &PipelineConfig, report: &mut RunReport) -> Result<RoomLayout, PipelineError> {
    cfg.validate().map_err(PipelineError::InvalidConfig)?;
    let mut clock = Clock { enabled: cfg.record_timings, last: Instant::now(), laps: BTreeMap::new() };
    let up = cfg.up();

    let (lifted, drops) = lift_to_world(bundle);
    report.counts.loaded = bundle.measurements.len();
    report.counts.lifted = lifted.len();
    report.drops = drops;
    let kept = filter_grazing(&lifted, cfg.min_angle_deg);
    report.counts.filtered = kept.len();
    let (walls, fc) = split_by_class(&kept);
    report.counts.walls = walls.len();
    report.counts.floor_ceiling = fc.len();
    clock.lap("lift_filter");

    let wall_model =
        fit(&walls, cfg.k_max_walls, cfg.seed, cfg).map_err(|e| PipelineError::NoPlanesSelected(e.to_string()))?;
    report.wall_clusters = wall_model.clusters.iter().map(ClusterSummary::from).collect();
    report.counts.wall_clusters = wall_model.clusters.len();
    let selected =
        select_room_planes(&wall_model, cfg.w_min).map_err(|e| PipelineError::NoPlanesSelected(e.to_string()))?;
    report.selected_walls = selected.iter().map(ClusterSummary::from).collect();
    report.counts.selected_walls = selected.len();
    clock.lap("cluster_walls");

    let from_clusters =
        fit(&fc, cfg.k_max_fc, cfg.seed.wrapping_add(1), cfg).map_err(|e| e.to_string()).and_then(|model| {
            report.floor_ceiling_clusters = model.clusters.iter().map(ClusterSummary::from).collect();
            let sel = select_room_planes(&model, cfg.w_min).map_err(|e| e.to_string())?;
            infer_floor_ceiling(&sel, cfg.gap_m, &up).map_err(|e: CandidateError| e.to_string())
        });
    let (floor, ceiling) = match (from_clusters, cfg.floor_z, cfg.room_height) {
        (Ok(fc), _, _) => {
            report.floor_source = Some("cluster".into());
            fc
        }
        (Err(_), Some(z), Some(h)) => {
            report.floor_source = Some("fallback".into());
            floor_ceiling_from_heights(z, h)
        }
        (Err(e), _, _) => return Err(PipelineError::NoHorizontalCluster(e)),
    };
    report.floor = Some(floor);
    report.ceiling = Some(ceiling);
    clock.lap("floor_ceiling");

    let bounds = scene_bounds(&kept, cfg.margin_m).map_err(|e| PipelineError::Candidates(e.to_string()))?;
    report.bounds = Some(bounds);
    let planes: Vec<Plane> = selected.iter().map(|c| c.plane).collect();
    let candidates = generate_candidates(&planes, &floor, &ceiling, &bounds, &up)
        .map_err(|e| PipelineError::Candidates(e.to_string()))?;
    report.counts.candidates = candidates.len();
    clock.lap("candidates");

    let wall_features = features(&walls, cfg.s_n);
    let voter_sets: Vec<Vec<&PlanarPolygon>> = selected
        .iter()
        .map(|c| {
            let mut idx = rank_voters(c, &wall_features, cfg.n_voters);
            idx.sort_unstable();
            idx.into_iter().map(|i| &walls[i].patch_world).collect()
        })
        .collect();
    let voted = vote_all(candidates, &voter_sets, &cfg.voting);
    report.votes = voted
        .iter()
        .map(|v| VoteRecord {
            plane: v.candidate.cluster_id,
            cell: v.candidate.cell_index,
            area: v.candidate.polygon.area(),
            raw_energy: v.vote.raw_energy,
            energy: v.vote.energy,
            inliers: v.vote.inliers,
            voters_total: v.vote.voters_total,
            r_c: v.vote.r_c,
            accepted: v.vote.accepted,
        })
        .collect();
    report.counts.accepted = voted.iter().filter(|v| v.vote.accepted).count();
    clock.lap("vote");

    let cands: Vec<_> = voted.into_iter().map(|v| v.candidate).collect();
    let layout = assemble(&cands, floor, ceiling, bounds).map_err(|e| match e {
        LayoutError::EmptyLayout => PipelineError::EmptyLayout,
        other => PipelineError::Candidates(other.to_string()),
    })?;
    if cfg.record_timings {
        report.timings = Some(clock.laps);
    }
    Ok(layout)
}
