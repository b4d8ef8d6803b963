//! Panorama construction for one cluster of keyframes.
//!
//! Members are optionally pre-warped onto a cylinder, matched pairwise,
//! related by RANSAC homographies and chained along a maximum spanning tree
//! per connected component. Each component is composited onto a canvas in
//! the frame of its reference image, gain-compensated and multiband-blended.

mod blend;
mod homography;
mod tree;
mod warp;

pub use blend::{
    collapse, distance_to_border, gain_compensate, gaussian_pyramid, laplacian_pyramid, max_levels,
    multiband_blend, multiband_blend_planes, normalize_weights, solve_gains, Plane, GAIN_PRIOR, GAIN_RANGE,
};
pub use homography::{
    estimate_homography_dlt, estimate_homography_ransac, estimate_homography_ransac_points,
    preserves_orientation, transformed_corners, Homography,
};
pub use tree::{build_alignment_trees, AlignmentTree, PairwiseAlignment, TreeEdge};
pub use warp::{cylindrical_warp, CylindricalProjection};

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use nalgebra::{DMatrix, Point2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{extract_features, match_features, BinaryPattern, FeatureParams, FeatureSet, DESCRIBE_BORDER};
use crate::media_io::{to_grayscale, CameraIntrinsics, Image};

use blend::blend_with_gains;
use warp::{bilinear, mask_covers};

/// Bilinear sample of channel `c` at `(x, y)`; `None` outside the image.
pub fn sample_bilinear(img: &Image, x: f64, y: f64, c: usize) -> Option<f64> {
    bilinear(img, x, y, c)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StitchError {
    #[error("need at least {needed} matches, got {got}")]
    InsufficientMatches { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no homography reached consensus")]
    NoConsensus,
    #[error("blend inputs differ in size")]
    DimensionMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchConfig {
    pub cylindrical: bool,
    pub blend_levels: usize,
    /// Symmetric transfer error threshold for homography inliers.
    pub ransac_threshold_px: f64,
    pub ransac_max_iters: usize,
    /// Pairs with fewer homography inliers are not linked.
    pub min_edge_inliers: usize,
    /// Clusters up to this size match all pairs.
    pub all_pairs_limit: usize,
    /// Otherwise each image is matched to this many nearest neighbours.
    pub match_fanout: usize,
    pub features: FeatureParams,
    pub seed: u64,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            cylindrical: true,
            blend_levels: 4,
            ransac_threshold_px: 3.0,
            ransac_max_iters: 2000,
            min_edge_inliers: 15,
            all_pairs_limit: 8,
            match_fanout: 4,
            features: FeatureParams::default(),
            seed: 0,
        }
    }
}

/// Blended output of one connected component of a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    pub cluster_id: usize,
    /// Component index within the cluster.
    pub component: usize,
    pub canvas: Image,
    /// Canvas pixel `(0, 0)` in the reference image's (warped) frame.
    pub origin: (i64, i64),
    /// Contributing keyframe ids, ascending.
    pub members: Vec<usize>,
    pub reference: usize,
    /// Keyframe id to the transform into the reference frame.
    pub transforms: BTreeMap<usize, Homography<f64>>,
    pub gains: BTreeMap<usize, f64>,
}

/// One keyframe image handed to the stitcher.
#[derive(Debug, Clone, Copy)]
pub struct StitchInput<'a> {
    pub keyframe_id: usize,
    pub image: &'a Image,
}

struct Prepared {
    image: Image,
    mask: Vec<bool>,
    distance: Vec<f64>,
    features: FeatureSet,
}

fn prepare(img: &Image, intrinsics: &CameraIntrinsics<f64>, cfg: &StitchConfig, pattern: &BinaryPattern) -> Prepared {
    let (w, h) = (img.width(), img.height());
    let (image, mask) = if cfg.cylindrical {
        cylindrical_warp(img, intrinsics.fx, (intrinsics.cx, intrinsics.cy))
    } else {
        (img.clone(), vec![true; w * h])
    };
    let distance = distance_to_border(&mask, w, h);
    let mut features = extract_features(&to_grayscale(&image), &cfg.features, pattern);
    // corners along the warp boundary are artefacts of the mask
    features.retain(|kp| {
        let (x, y) = (kp.x.round() as usize, kp.y.round() as usize);
        distance[y.min(h - 1) * w + x.min(w - 1)] > DESCRIBE_BORDER as f64
    });
    Prepared {
        image,
        mask,
        distance,
        features,
    }
}

/// Pairs `(i, j)`, `i < j`, to match.
fn candidate_pairs(n: usize, cfg: &StitchConfig, affinity: Option<&DMatrix<f64>>) -> Vec<(usize, usize)> {
    if n <= cfg.all_pairs_limit {
        return (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    }
    let mut set = BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        match affinity {
            Some(a) => others.sort_by(|&x, &y| a[(i, y)].total_cmp(&a[(i, x)]).then(x.cmp(&y))),
            None => others.sort_by_key(|&j| (j.abs_diff(i), j)),
        }
        for &j in others.iter().take(cfg.match_fanout) {
            set.insert((i.min(j), i.max(j)));
        }
    }
    set.into_iter().collect()
}

fn pair_seed(seed: u64, a: usize, b: usize) -> u64 {
    let key = ((a as u64) << 32) | b as u64;
    seed ^ key.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Area scale of `h` on a `w × h` image, from its corner quadrilateral.
fn area_ratio(hm: &Homography<f64>, w: usize, h: usize) -> f64 {
    let c = transformed_corners(hm, w, h);
    let mut area = 0.0;
    for i in 0..4 {
        let (p, q) = (c[i], c[(i + 1) % 4]);
        area += p.x * q.y - q.x * p.y;
    }
    (area.abs() / 2.0) / (((w - 1) * (h - 1)) as f64).max(1.0)
}

fn align_pair(p: &[Prepared], a: usize, b: usize, cfg: &StitchConfig) -> Option<PairwiseAlignment<f64>> {
    let matches = match_features(&p[a].features, &p[b].features, &cfg.features);
    let (h, inliers) = estimate_homography_ransac(
        &matches,
        &p[a].features.keypoints,
        &p[b].features.keypoints,
        cfg.ransac_threshold_px,
        cfg.ransac_max_iters,
        pair_seed(cfg.seed, a, b),
    )
    .ok()?;
    let (w, ht) = (p[a].image.width(), p[a].image.height());
    let ratio = area_ratio(&h, w, ht);
    if !preserves_orientation(&h, w, ht) || !(0.25..=4.0).contains(&ratio) {
        debug!("pair ({a}, {b}): implausible homography rejected");
        return None;
    }
    Some(PairwiseAlignment {
        a,
        b,
        homography: h,
        inliers: inliers.len(),
    })
}

/// Largest canvas side accepted before a component is split into singles.
const MAX_CANVAS_SIDE: f64 = 16_384.0;
/// Largest canvas area, relative to the summed member areas.
const MAX_CANVAS_AREA_RATIO: f64 = 25.0;

/// Stitches one cluster. `affinity`, when given, is indexed like `members`
/// and picks match partners for large clusters.
///
/// Returns one panorama per connected component of the match graph;
/// single-image components yield the raw keyframe image.
pub fn stitch_cluster(
    cluster_id: usize,
    members: &[StitchInput<'_>],
    intrinsics: &CameraIntrinsics<f64>,
    affinity: Option<&DMatrix<f64>>,
    config: &StitchConfig,
) -> Vec<Panorama> {
    let pattern = BinaryPattern::new(config.features.pattern_seed);
    let prepared: Vec<Prepared> = members
        .par_iter()
        .map(|m| prepare(m.image, intrinsics, config, &pattern))
        .collect();
    let pairs = candidate_pairs(members.len(), config, affinity);
    let aligned: Vec<PairwiseAlignment<f64>> = pairs
        .par_iter()
        .filter_map(|&(a, b)| align_pair(&prepared, a, b, config))
        .collect();
    let trees = build_alignment_trees(members.len(), &aligned, config.min_edge_inliers);

    let mut out = Vec::new();
    for tree in trees {
        let component = out.len();
        if tree.nodes.len() == 1 {
            out.push(single(cluster_id, component, &members[tree.nodes[0]]));
            continue;
        }
        match composite(&tree, &prepared, config) {
            Some((canvas, origin, gains)) => out.push(Panorama {
                cluster_id,
                component,
                canvas,
                origin,
                members: tree.nodes.iter().map(|&i| members[i].keyframe_id).collect(),
                reference: members[tree.reference].keyframe_id,
                transforms: tree
                    .transforms
                    .iter()
                    .map(|(&i, h)| (members[i].keyframe_id, *h))
                    .collect(),
                gains: tree.nodes.iter().zip(gains).map(|(&i, g)| (members[i].keyframe_id, g)).collect(),
            }),
            None => {
                debug!("cluster {cluster_id}: canvas too large, emitting images separately");
                for &i in &tree.nodes {
                    let component = out.len();
                    out.push(single(cluster_id, component, &members[i]));
                }
            }
        }
    }
    out
}

fn single(cluster_id: usize, component: usize, m: &StitchInput<'_>) -> Panorama {
    Panorama {
        cluster_id,
        component,
        canvas: m.image.clone(),
        origin: (0, 0),
        members: vec![m.keyframe_id],
        reference: m.keyframe_id,
        transforms: BTreeMap::from([(m.keyframe_id, Homography::identity())]),
        gains: BTreeMap::from([(m.keyframe_id, 1.0)]),
    }
}

/// Warps the tree's images onto a common canvas and blends them.
fn composite(
    tree: &AlignmentTree<f64>,
    prepared: &[Prepared],
    cfg: &StitchConfig,
) -> Option<(Image, (i64, i64), Vec<f64>)> {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &k in &tree.nodes {
        let (w, h) = (prepared[k].image.width(), prepared[k].image.height());
        if !preserves_orientation(&tree.transforms[&k], w, h) {
            return None;
        }
        for c in transformed_corners(&tree.transforms[&k], w, h) {
            min_x = min_x.min(c.x);
            min_y = min_y.min(c.y);
            max_x = max_x.max(c.x);
            max_y = max_y.max(c.y);
        }
    }
    let (ox, oy) = (min_x.floor(), min_y.floor());
    let (cw, ch) = (max_x.ceil() - ox + 1.0, max_y.ceil() - oy + 1.0);
    let covered: f64 = tree
        .nodes
        .iter()
        .map(|&k| (prepared[k].image.width() * prepared[k].image.height()) as f64)
        .sum();
    if !(cw.is_finite() && ch.is_finite())
        || cw > MAX_CANVAS_SIDE
        || ch > MAX_CANVAS_SIDE
        || cw * ch > MAX_CANVAS_AREA_RATIO * covered
    {
        return None;
    }
    let (cw, chh) = (cw as usize, ch as usize);
    let channels = prepared[tree.nodes[0]].image.channels();

    let warped: Vec<(Image, Vec<bool>, Vec<f64>)> = tree
        .nodes
        .par_iter()
        .map(|&k| {
            let p = &prepared[k];
            let (w, h) = (p.image.width(), p.image.height());
            let inv = tree.transforms[&k].inverse();
            let mut img = Image::filled(cw, chh, channels, 0);
            let mut mask = vec![false; cw * chh];
            let mut weight = vec![0.0; cw * chh];
            let corners = transformed_corners(&tree.transforms[&k], w, h);
            let x0 = (corners.iter().map(|c| c.x).fold(f64::INFINITY, f64::min).floor() - ox).max(0.0) as usize;
            let x1 = ((corners.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max).ceil() - ox) as usize).min(cw - 1);
            let y0 = (corners.iter().map(|c| c.y).fold(f64::INFINITY, f64::min).floor() - oy).max(0.0) as usize;
            let y1 = ((corners.iter().map(|c| c.y).fold(f64::NEG_INFINITY, f64::max).ceil() - oy) as usize).min(chh - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let src = inv.apply(&Point2::new(x as f64 + ox, y as f64 + oy));
                    if !mask_covers(&p.mask, w, h, src.x, src.y) {
                        continue;
                    }
                    let i = y * cw + x;
                    mask[i] = true;
                    for c in 0..channels {
                        let v = bilinear(&p.image, src.x, src.y, c).unwrap();
                        img.set(x, y, c, v.round().clamp(0.0, 255.0) as u8);
                    }
                    weight[i] = sample_plane(&p.distance, w, h, src.x, src.y).max(1e-3);
                }
            }
            (img, mask, weight)
        })
        .collect();

    let images: Vec<Image> = warped.iter().map(|w| w.0.clone()).collect();
    let masks: Vec<Vec<bool>> = warped.iter().map(|w| w.1.clone()).collect();
    let mut weights: Vec<Vec<f64>> = warped.into_iter().map(|w| w.2).collect();
    let gains = gain_compensate(&images, &masks);
    normalize_weights(&mut weights);
    let canvas = blend_with_gains(&images, &weights, &gains, cfg.blend_levels).ok()?;
    Some((canvas, (ox as i64, oy as i64), gains))
}

fn sample_plane(d: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x0 = (x.floor().max(0.0) as usize).min(w - 1);
    let y0 = (y.floor().max(0.0) as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64).clamp(0.0, 1.0);
    let fy = (y - y0 as f64).clamp(0.0, 1.0);
    let top = d[y0 * w + x0] * (1.0 - fx) + d[y0 * w + x1] * fx;
    let bot = d[y1 * w + x0] * (1.0 - fx) + d[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{crop, test_pattern};

    fn k(w: usize, h: usize) -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(400.0, 400.0, w as f64 / 2.0, h as f64 / 2.0).unwrap()
    }

    fn planar() -> StitchConfig {
        StitchConfig {
            cylindrical: false,
            ..StitchConfig::default()
        }
    }

    #[test]
    fn single_member_is_returned_verbatim() {
        let img = test_pattern(160, 120, 1);
        let out = stitch_cluster(3, &[StitchInput { keyframe_id: 9, image: &img }], &k(160, 120), None, &StitchConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].canvas, img);
        assert_eq!(out[0].origin, (0, 0));
        assert_eq!(out[0].members, vec![9]);
        assert_eq!(out[0].cluster_id, 3);
    }

    #[test]
    fn unrelated_images_stay_apart() {
        let a = test_pattern(200, 150, 1);
        let b = test_pattern(200, 150, 2);
        let inputs = [StitchInput { keyframe_id: 0, image: &a }, StitchInput { keyframe_id: 1, image: &b }];
        let out = stitch_cluster(0, &inputs, &k(200, 150), None, &planar());
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].canvas, a);
        assert_eq!(out[1].canvas, b);
    }

    #[test]
    fn translated_crops_rebuild_the_source() {
        let src = test_pattern(420, 260, 7);
        let a = crop(&src, 0.0, 0.0, 0.0, 260, 200);
        let b = crop(&src, 140.0, 40.0, 0.0, 260, 200);
        let inputs = [StitchInput { keyframe_id: 0, image: &a }, StitchInput { keyframe_id: 1, image: &b }];
        let out = stitch_cluster(0, &inputs, &k(260, 200), None, &planar());
        assert_eq!(out.len(), 1);
        let p = &out[0];
        assert_eq!(p.members, vec![0, 1]);
        assert!(p.canvas.width() >= 260 && p.canvas.height() >= 200);
        // reference is image 0 (tie broken low), so canvas (x, y) = source (x + ox, y + oy)
        let mut se = 0.0;
        let mut n = 0.0;
        for y in 4..p.canvas.height() - 4 {
            for x in 4..p.canvas.width() - 4 {
                let (sx, sy) = (x as i64 + p.origin.0, y as i64 + p.origin.1);
                let inside_a = (4..256).contains(&sx) && (4..196).contains(&sy);
                let inside_b = (144..396).contains(&sx) && (44..236).contains(&sy);
                if !(inside_a || inside_b) {
                    continue;
                }
                for c in 0..3 {
                    let d = p.canvas.get(x, y, c) as f64 - src.get(sx as usize, sy as usize, c) as f64;
                    se += d * d;
                    n += 1.0;
                }
            }
        }
        let psnr = 10.0 * (255.0f64 * 255.0 / (se / n)).log10();
        assert!(psnr >= 30.0, "psnr {psnr}");
    }

    #[test]
    fn deterministic_output() {
        let src = test_pattern(360, 240, 5);
        let a = crop(&src, 0.0, 0.0, 0.0, 240, 200);
        let b = crop(&src, 100.0, 20.0, 0.03, 240, 200);
        let inputs = [StitchInput { keyframe_id: 4, image: &a }, StitchInput { keyframe_id: 6, image: &b }];
        let run = || stitch_cluster(1, &inputs, &k(240, 200), None, &StitchConfig::default());
        assert_eq!(run(), run());
    }

    #[test]
    fn pair_selection() {
        let cfg = StitchConfig::default();
        assert_eq!(candidate_pairs(3, &cfg, None), vec![(0, 1), (0, 2), (1, 2)]);
        let big = candidate_pairs(12, &cfg, None);
        assert!(big.iter().all(|&(a, b)| a < b && b - a <= 4));
        assert!(big.len() < 66);
    }
}
