//! End-to-end run: frames → keyframes and poses → viewpoint clusters →
//! panoramas, plus `report.json` and `clusters.svg`.
//!
//! Everything is computed in memory first and written into a staging
//! directory next to the requested output directory, which is then renamed
//! into place. A failed run leaves no output behind.

mod plot;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domset::{
    build_affinity_graph, build_appearance_graph, extract_dominant_sets, AffinityGraph, AffinityParams, DomsetParams,
};
use crate::features::{match_features, FeatureParams};
use crate::media_io::{load_frame_sequence, load_intrinsics, write_image, Frame, Image, MediaError};
use crate::stitch::{estimate_homography_ransac, stitch_cluster, StitchConfig, StitchInput};
use crate::vo::{run_vo, KeyframePolicy, VoConfig, VoError, VoOutput};

pub use plot::{cluster_color, principal_projection, render_cluster_plot, PlotPoint, PALETTE, UNASSIGNED_COLOR};
pub use report::{
    canonical_json, round_significant, AffinityMode, ClusterRecord, Diagnostics, KeyframeRecord, PoseRecord,
    RunReport, REPORT_DIGITS,
};

pub const REPORT_FILE: &str = "report.json";
pub const PLOT_FILE: &str = "clusters.svg";

pub fn panorama_file_name(cluster: usize, component: usize) -> String {
    format!("panorama_{cluster}_{component}.png")
}

pub fn unassigned_file_name(keyframe: usize) -> String {
    format!("unassigned_{keyframe}.png")
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("visual odometry: {0}")]
    Vo(#[from] VoError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} exists and does not hold a previous run; refusing to replace it")]
    OutputOccupied(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Map-building thresholds of the visual odometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub essential_threshold_px: f64,
    pub pnp_threshold_px: f64,
    pub cull_threshold_px: f64,
    pub min_init_inliers: usize,
    pub min_pnp_inliers: usize,
    pub min_parallax_deg: f64,
    pub ransac_max_iters: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        let vo = VoConfig::default();
        Self {
            essential_threshold_px: vo.essential_threshold_px,
            pnp_threshold_px: vo.pnp_threshold_px,
            cull_threshold_px: vo.cull_threshold_px,
            min_init_inliers: vo.min_init_inliers,
            min_pnp_inliers: vo.min_pnp_inliers,
            min_parallax_deg: vo.min_parallax_deg,
            ransac_max_iters: vo.ransac_max_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub sigma_pos: f64,
    pub sigma_rot: f64,
    /// Replicator support threshold δ.
    pub support_threshold: f64,
    /// Cohesiveness floor c_min, relative to the largest affinity.
    pub min_cohesiveness: f64,
    pub min_cluster_size: usize,
    /// Appearance mode: keyframe pairs with fewer homography inliers get
    /// zero affinity.
    pub min_appearance_inliers: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let (a, d) = (AffinityParams::default(), DomsetParams::default());
        Self {
            sigma_pos: a.sigma_pos,
            sigma_rot: a.sigma_rot,
            support_threshold: d.support_threshold,
            min_cohesiveness: d.min_cohesiveness,
            min_cluster_size: d.min_cluster_size,
            min_appearance_inliers: StitchConfig::default().min_edge_inliers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StitchingConfig {
    pub cylindrical: bool,
    pub blend_levels: usize,
    pub ransac_threshold_px: f64,
    pub ransac_max_iters: usize,
    pub min_edge_inliers: usize,
}

impl Default for StitchingConfig {
    fn default() -> Self {
        let s = StitchConfig::default();
        Self {
            cylindrical: s.cylindrical,
            blend_levels: s.blend_levels,
            ransac_threshold_px: s.ransac_threshold_px,
            ransac_max_iters: s.ransac_max_iters,
            min_edge_inliers: s.min_edge_inliers,
        }
    }
}

/// Effective run configuration. The JSON form (config files and the
/// report's `config` echo) uses these field names; the output directory,
/// job count and timing switch are not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub frames_dir: PathBuf,
    pub intrinsics_path: PathBuf,
    #[serde(skip)]
    pub output_dir: PathBuf,
    /// Wildcard applied to file names in `frames_dir`.
    pub frame_pattern: String,
    pub seed: u64,
    pub features: FeatureParams,
    pub keyframes: KeyframePolicy,
    pub tracking: TrackingConfig,
    pub clustering: ClusteringConfig,
    pub stitching: StitchingConfig,
    /// Worker threads; `None` uses every logical CPU.
    #[serde(skip)]
    pub jobs: Option<usize>,
    /// Record per-phase wall-clock times in the report.
    #[serde(skip)]
    pub timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frames_dir: PathBuf::new(),
            intrinsics_path: PathBuf::new(),
            output_dir: PathBuf::new(),
            frame_pattern: "*".into(),
            seed: 0,
            features: FeatureParams::default(),
            keyframes: KeyframePolicy::default(),
            tracking: TrackingConfig::default(),
            clustering: ClusteringConfig::default(),
            stitching: StitchingConfig::default(),
            jobs: None,
            timings: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("keyframes.min_displacement_px", self.keyframes.min_displacement_px),
            ("keyframes.min_tracked_fraction", self.keyframes.min_tracked_fraction),
            ("tracking.essential_threshold_px", self.tracking.essential_threshold_px),
            ("tracking.pnp_threshold_px", self.tracking.pnp_threshold_px),
            ("tracking.cull_threshold_px", self.tracking.cull_threshold_px),
            ("tracking.min_parallax_deg", self.tracking.min_parallax_deg),
            ("clustering.sigma_pos", self.clustering.sigma_pos),
            ("clustering.sigma_rot", self.clustering.sigma_rot),
            ("clustering.support_threshold", self.clustering.support_threshold),
            ("clustering.min_cohesiveness", self.clustering.min_cohesiveness),
            ("stitching.ransac_threshold_px", self.stitching.ransac_threshold_px),
            ("features.ratio", self.features.ratio),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PipelineError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("keyframes.max_interval", self.keyframes.max_interval),
            ("tracking.min_init_inliers", self.tracking.min_init_inliers),
            ("tracking.min_pnp_inliers", self.tracking.min_pnp_inliers),
            ("tracking.ransac_max_iters", self.tracking.ransac_max_iters),
            ("clustering.min_cluster_size", self.clustering.min_cluster_size),
            ("stitching.blend_levels", self.stitching.blend_levels),
            ("stitching.ransac_max_iters", self.stitching.ransac_max_iters),
            ("features.max_keypoints", self.features.max_keypoints),
            ("features.fast_threshold", self.features.fast_threshold as usize),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(PipelineError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.keyframes.min_tracked_fraction > 1.0 || self.features.ratio > 1.0 {
            return Err(PipelineError::InvalidConfig(
                "keyframes.min_tracked_fraction and features.ratio must not exceed 1".into(),
            ));
        }
        if self.jobs == Some(0) {
            return Err(PipelineError::InvalidConfig("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn vo_config(&self) -> VoConfig {
        let t = &self.tracking;
        VoConfig {
            features: self.features,
            keyframes: self.keyframes,
            essential_threshold_px: t.essential_threshold_px,
            pnp_threshold_px: t.pnp_threshold_px,
            ransac_max_iters: t.ransac_max_iters,
            min_init_inliers: t.min_init_inliers,
            min_pnp_inliers: t.min_pnp_inliers,
            cull_threshold_px: t.cull_threshold_px,
            min_parallax_deg: t.min_parallax_deg,
            seed: self.seed,
        }
    }

    pub fn affinity_params(&self) -> AffinityParams {
        AffinityParams {
            sigma_pos: self.clustering.sigma_pos,
            sigma_rot: self.clustering.sigma_rot,
        }
    }

    pub fn domset_params(&self) -> DomsetParams {
        DomsetParams {
            support_threshold: self.clustering.support_threshold,
            min_cohesiveness: self.clustering.min_cohesiveness,
            min_cluster_size: self.clustering.min_cluster_size,
            ..DomsetParams::default()
        }
    }

    pub fn stitch_config(&self) -> StitchConfig {
        let s = &self.stitching;
        StitchConfig {
            cylindrical: s.cylindrical,
            blend_levels: s.blend_levels,
            ransac_threshold_px: s.ransac_threshold_px,
            ransac_max_iters: s.ransac_max_iters,
            min_edge_inliers: s.min_edge_inliers,
            features: self.features,
            seed: self.seed,
            ..StitchConfig::default()
        }
    }
}

/// Files produced by a run, before they are written.
struct Outputs {
    images: Vec<(String, Image)>,
    report: String,
    plot: String,
}

/// Runs every phase and atomically writes the outputs to
/// `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = config.jobs {
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| PipelineError::InvalidConfig(format!("thread pool: {e}")))?;
    let (report, outputs) = pool.install(|| compute(config))?;
    commit(&config.output_dir, &outputs)?;
    Ok(report)
}

struct Stopwatch {
    enabled: bool,
    laps: BTreeMap<String, f64>,
    last: Instant,
}

impl Stopwatch {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            laps: BTreeMap::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, phase: &str) {
        let now = Instant::now();
        if self.enabled {
            self.laps
                .insert(phase.to_string(), (now - self.last).as_secs_f64() * 1e3);
        }
        self.last = now;
    }
}

fn compute(config: &PipelineConfig) -> Result<(RunReport, Outputs), PipelineError> {
    let mut clock = Stopwatch::new(config.timings);
    let intrinsics = load_intrinsics(&config.intrinsics_path)?;
    let frames = load_frame_sequence(&config.frames_dir, &config.frame_pattern)?;
    info!("loaded {} frames", frames.len());
    clock.lap("load");

    let vo = run_vo(&frames, &intrinsics, &config.vo_config())?;
    if vo.diagnostics.initialization_failure {
        warn!("InitializationFailure: no keyframe pair bootstrapped the map; continuing without poses");
    }
    info!(
        "{} keyframes, {} map points",
        vo.keyframes.len(),
        vo.map_points.len()
    );
    clock.lap("vo");

    let (graph, mode) = affinity_graph(&vo, config);
    let sets = extract_dominant_sets(&graph, &config.domset_params());
    info!(
        "{} clusters, {} unassigned keyframes ({:?} affinity)",
        sets.clusters.len(),
        sets.unassigned.len(),
        mode
    );
    clock.lap("clustering");

    let by_index: BTreeMap<usize, &Frame> = frames.iter().map(|f| (f.index, f)).collect();
    let image_of = |kf: usize| &by_index[&vo.keyframes[kf].frame_index].image;
    let position: BTreeMap<usize, usize> = graph.node_ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let stitch_cfg = config.stitch_config();
    let stitched: Vec<_> = sets
        .clusters
        .par_iter()
        .map(|c| {
            let inputs: Vec<StitchInput> = c
                .members
                .iter()
                .map(|&id| StitchInput {
                    keyframe_id: id,
                    image: image_of(id),
                })
                .collect();
            let idx: Vec<usize> = c.members.iter().map(|id| position[id]).collect();
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| graph.weight(idx[i], idx[j]));
            stitch_cluster(c.id, &inputs, &intrinsics, Some(&sub), &stitch_cfg)
        })
        .collect();
    clock.lap("stitching");

    let mut images = Vec::new();
    let mut clusters = Vec::new();
    for (c, panoramas) in sets.clusters.iter().zip(stitched) {
        let mut names = Vec::new();
        for p in panoramas {
            let name = panorama_file_name(c.id, p.component);
            names.push(name.clone());
            images.push((name, p.canvas));
        }
        clusters.push(ClusterRecord {
            id: c.id,
            members: c.members.clone(),
            cohesiveness: c.cohesiveness,
            panoramas: names,
        });
    }
    for &id in &sets.unassigned {
        images.push((unassigned_file_name(id), image_of(id).clone()));
    }

    let membership: BTreeMap<usize, usize> = sets
        .clusters
        .iter()
        .flat_map(|c| c.members.iter().map(move |&m| (m, c.id)))
        .collect();
    let all_posed = vo.all_posed();
    let plot_points: Vec<PlotPoint> = vo
        .keyframes
        .iter()
        .map(|k| PlotPoint {
            keyframe_id: k.id,
            center: if all_posed { k.pose.map(|p| p.center()) } else { None },
            cluster: membership.get(&k.id).copied(),
        })
        .collect();
    let plot = render_cluster_plot(&plot_points);
    clock.lap("output");

    let report = RunReport {
        config: config.clone(),
        keyframes: vo
            .keyframes
            .iter()
            .map(|k| KeyframeRecord {
                id: k.id,
                frame_index: k.frame_index,
                pose: k.pose.as_ref().map(PoseRecord::from),
            })
            .collect(),
        clusters,
        unassigned: sets.unassigned.clone(),
        diagnostics: Diagnostics {
            timings_ms: clock.laps,
            map_points: vo.map_points.len(),
            vo_initialized: vo.diagnostics.initialized,
            initialization_failure: vo.diagnostics.initialization_failure,
            affinity: mode,
            replicator_converged: sets.clusters.iter().all(|c| c.converged),
        },
    };
    let outputs = Outputs {
        images,
        report: report.to_canonical_json(),
        plot,
    };
    Ok((report, outputs))
}

/// Pose affinity when every keyframe has a pose, otherwise appearance
/// affinity from homography-verified matches between keyframe pairs.
fn affinity_graph(vo: &VoOutput, config: &PipelineConfig) -> (AffinityGraph<f64>, AffinityMode) {
    let ids: Vec<usize> = vo.keyframes.iter().map(|k| k.id).collect();
    if vo.all_posed() {
        let posed: Vec<_> = vo.keyframes.iter().map(|k| (k.id, k.pose.unwrap())).collect();
        return (build_affinity_graph(&posed, &config.affinity_params()), AffinityMode::Pose);
    }
    let n = ids.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let verified: BTreeMap<(usize, usize), usize> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&vo.keyframes[i].features, &vo.keyframes[j].features);
            let matches = match_features(a, b, &config.features);
            let seed = config.seed ^ ((i as u64) << 32 | j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let inliers = estimate_homography_ransac(
                &matches,
                &a.keypoints,
                &b.keypoints,
                config.stitching.ransac_threshold_px,
                config.stitching.ransac_max_iters,
                seed,
            )
            .map_or(0, |(_, inl)| inl.len());
            let kept = if inliers >= config.clustering.min_appearance_inliers { inliers } else { 0 };
            ((i, j), kept)
        })
        .collect();
    let counts: Vec<usize> = vo.keyframes.iter().map(|k| k.features.len()).collect();
    log::debug!("keypoint counts {counts:?}; verified inliers {verified:?}");
    let graph = build_appearance_graph(ids, &counts, |i, j| verified[&(i, j)]);
    (graph, AffinityMode::Appearance)
}

fn staging_path(out: &Path, tag: &str) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!(".{name}.{tag}-{}", std::process::id()))
}

/// Writes the outputs into a staging directory, then swaps it into place.
fn commit(out: &Path, outputs: &Outputs) -> Result<(), PipelineError> {
    if out.exists() {
        let previous_run = out.join(REPORT_FILE).is_file();
        let empty = std::fs::read_dir(out).map_err(io_err(out))?.next().is_none();
        if !(out.is_dir() && (previous_run || empty)) {
            return Err(PipelineError::OutputOccupied(out.to_path_buf()));
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let stage = staging_path(out, "partial");
    if stage.exists() {
        std::fs::remove_dir_all(&stage).map_err(io_err(&stage))?;
    }
    let written = write_all(&stage, outputs);
    if let Err(e) = written {
        let _ = std::fs::remove_dir_all(&stage);
        return Err(e);
    }
    if out.exists() {
        let old = staging_path(out, "previous");
        std::fs::rename(out, &old).map_err(io_err(out))?;
        if let Err(e) = std::fs::rename(&stage, out) {
            let _ = std::fs::rename(&old, out);
            let _ = std::fs::remove_dir_all(&stage);
            return Err(io_err(out)(e));
        }
        std::fs::remove_dir_all(&old).map_err(io_err(&old))?;
    } else {
        std::fs::rename(&stage, out).map_err(io_err(out))?;
    }
    Ok(())
}

fn write_all(dir: &Path, outputs: &Outputs) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, image) in &outputs.images {
        write_image(&dir.join(name), image)?;
    }
    let report = dir.join(REPORT_FILE);
    std::fs::write(&report, &outputs.report).map_err(io_err(&report))?;
    let plot = dir.join(PLOT_FILE);
    std::fs::write(&plot, &outputs.plot).map_err(io_err(&plot))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_config_keeps_other_defaults() {
        let cfg = PipelineConfig::from_json(r#"{"seed": 5, "clustering": {"sigma_pos": 0.25}}"#).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.clustering.sigma_pos, 0.25);
        assert_eq!(cfg.clustering.sigma_rot, std::f64::consts::FRAC_PI_3);
        assert_eq!(cfg.keyframes, KeyframePolicy::default());
        assert_eq!(cfg.stitching.blend_levels, 4);
    }

    #[test]
    fn unknown_and_invalid_fields_are_rejected() {
        assert!(matches!(
            PipelineConfig::from_json(r#"{"clustering": {"sigma": 1}}"#),
            Err(PipelineError::InvalidConfig(_))
        ));
        let mut cfg = PipelineConfig::default();
        cfg.clustering.sigma_rot = -1.0;
        assert!(matches!(cfg.validate(), Err(PipelineError::InvalidConfig(_))));
        let mut cfg = PipelineConfig::default();
        cfg.stitching.blend_levels = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derived_module_configs_carry_the_seed() {
        let cfg = PipelineConfig { seed: 77, ..PipelineConfig::default() };
        assert_eq!(cfg.vo_config().seed, 77);
        assert_eq!(cfg.stitch_config().seed, 77);
        assert_eq!(cfg.vo_config().keyframes, KeyframePolicy::default());
        assert_eq!(cfg.stitch_config(), StitchConfig { seed: 77, ..StitchConfig::default() });
    }

    #[test]
    fn occupied_output_is_not_replaced() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        std::fs::create_dir(&out).unwrap();
        std::fs::write(out.join("keep.txt"), "x").unwrap();
        let outputs = Outputs { images: vec![], report: "{}\n".into(), plot: String::new() };
        assert!(matches!(commit(&out, &outputs), Err(PipelineError::OutputOccupied(_))));
        assert!(out.join("keep.txt").exists());
    }

    #[test]
    fn commit_replaces_a_previous_run() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested").join("out");
        let first = Outputs {
            images: vec![("panorama_0_0.png".into(), Image::filled(4, 3, 1, 9))],
            report: "{}\n".into(),
            plot: "<svg/>".into(),
        };
        commit(&out, &first).unwrap();
        assert!(out.join("panorama_0_0.png").exists());
        let second = Outputs { images: vec![], report: "{\"a\": 1}\n".into(), plot: "<svg/>".into() };
        commit(&out, &second).unwrap();
        assert!(!out.join("panorama_0_0.png").exists());
        assert_eq!(std::fs::read_to_string(out.join(REPORT_FILE)).unwrap(), "{\"a\": 1}\n");
        let leftovers: Vec<_> = std::fs::read_dir(out.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(leftovers, vec![std::ffi::OsString::from("out")]);
    }
}
