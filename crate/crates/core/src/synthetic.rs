//! Synthetic scenes and sequences with known ground truth.
//!
//! [`SpriteScene`] renders a cloud of 3D points as screen-aligned sprites: a
//! bright Gaussian peak (which the corner detector fires on) over a faint,
//! per-sprite texture (which makes descriptors distinctive). Trajectory
//! helpers produce the camera paths used in tests and demos, and
//! [`test_pattern`] / [`crop`] generate stitching inputs with known
//! transforms.

use std::path::Path;

use nalgebra::{Matrix3, Point2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::features::{Descriptor, FeatureSet, Keypoint};
use crate::media_io::{write_image, CameraIntrinsics, Frame, Image, MediaError};
use crate::stitch::Homography;
use crate::vo::Pose;

#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub position: Vector3<f64>,
    /// Peak height above the sprite base, in gray levels.
    pub amplitude: f64,
    /// Plane waves `[kx, ky, phase, amplitude]` summed into the texture.
    pub waves: [[f64; 4]; 3],
    /// Linear brightness ramp `(gx, gy)` in gray levels per pixel.
    pub ramp: [f64; 2],
    pub tint: [f64; 3],
}

const SPRITE_BASE: f64 = 70.0;
const RAMP_SLOPE: f64 = 1.5;

impl Sprite {
    fn random(position: Vector3<f64>, rng: &mut ChaCha8Rng) -> Self {
        let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        Self {
            position,
            amplitude: rng.random_range(90.0..150.0),
            waves: std::array::from_fn(|_| {
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let freq: f64 = rng.random_range(0.25..0.7);
                [
                    freq * angle.cos(),
                    freq * angle.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(4.0..8.0),
                ]
            }),
            ramp: [RAMP_SLOPE * dir.cos(), RAMP_SLOPE * dir.sin()],
            tint: [
                rng.random_range(0.8..1.0),
                rng.random_range(0.8..1.0),
                rng.random_range(0.8..1.0),
            ],
        }
    }

    fn texture(&self, dx: f64, dy: f64) -> f64 {
        self.waves.iter().map(|w| w[3] * (w[0] * dx + w[1] * dy + w[2]).sin()).sum()
    }

    fn value(&self, dx: f64, dy: f64, sigma: f64) -> f64 {
        let r2 = dx * dx + dy * dy;
        SPRITE_BASE
            + self.texture(dx, dy)
            + self.ramp[0] * dx
            + self.ramp[1] * dy
            + self.amplitude * (-r2 / (2.0 * sigma * sigma)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpriteScene {
    pub sprites: Vec<Sprite>,
    pub background: f64,
    /// Screen-space sprite radius in pixels.
    pub radius: f64,
    /// Standard deviation of the central peak in pixels.
    pub peak_sigma: f64,
}

impl SpriteScene {
    pub fn new(sprites: Vec<Sprite>) -> Self {
        Self {
            sprites,
            background: 60.0,
            radius: 10.0,
            peak_sigma: 1.2,
        }
    }

    /// `n` sprites uniformly distributed in the axis-aligned box `[lo, hi]`.
    pub fn random_box(n: usize, lo: Vector3<f64>, hi: Vector3<f64>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sprites = (0..n)
            .map(|_| {
                let p = Vector3::new(
                    rng.random_range(lo.x..hi.x),
                    rng.random_range(lo.y..hi.y),
                    rng.random_range(lo.z..hi.z),
                );
                Sprite::random(p, &mut rng)
            })
            .collect();
        Self::new(sprites)
    }

    /// `n` sprites on a vertical cylinder wall around `center`, at azimuths
    /// (from +z towards +x) in `[yaw_lo, yaw_hi]` and heights within
    /// `±half_height`.
    pub fn random_wall(
        n: usize,
        center: Vector3<f64>,
        radius: f64,
        half_height: f64,
        (yaw_lo, yaw_hi): (f64, f64),
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sprites = (0..n)
            .map(|_| {
                let yaw: f64 = rng.random_range(yaw_lo..yaw_hi);
                let r = radius * rng.random_range(0.97..1.03);
                let p = center + Vector3::new(r * yaw.sin(), rng.random_range(-half_height..half_height), r * yaw.cos());
                Sprite::random(p, &mut rng)
            })
            .collect();
        Self::new(sprites)
    }

    pub fn merged(mut self, other: SpriteScene) -> Self {
        self.sprites.extend(other.sprites);
        self
    }

    /// Renders an RGB view. Sprites are composited far to near with a soft
    /// edge; points behind the camera or off screen are skipped.
    pub fn render(&self, pose: &Pose<f64>, k: &CameraIntrinsics<f64>, width: usize, height: usize) -> Image {
        let mut buf = vec![[self.background; 3]; width * height];
        let mut visible: Vec<(f64, usize, f64, f64)> = self
            .sprites
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                let c = pose.transform(&s.position);
                if c.z <= 1e-3 {
                    return None;
                }
                let u = k.fx * c.x / c.z + k.cx;
                let v = k.fy * c.y / c.z + k.cy;
                let m = self.radius + 1.0;
                let on_screen = u > -m && v > -m && u < width as f64 + m && v < height as f64 + m;
                on_screen.then_some((c.z, i, u, v))
            })
            .collect();
        visible.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let r = self.radius;
        for (_, i, u, v) in visible {
            let s = &self.sprites[i];
            let x0 = (u - r).floor().max(0.0) as usize;
            let y0 = (v - r).floor().max(0.0) as usize;
            let x1 = ((u + r).ceil().max(0.0) as usize).min(width - 1);
            let y1 = ((v + r).ceil().max(0.0) as usize).min(height - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dx, dy) = (x as f64 - u, y as f64 - v);
                    let alpha = ((r - (dx * dx + dy * dy).sqrt()) / 1.5).clamp(0.0, 1.0);
                    if alpha == 0.0 {
                        continue;
                    }
                    let val = s.value(dx, dy, self.peak_sigma);
                    let px = &mut buf[y * width + x];
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - alpha) + val * s.tint[c] * alpha;
                    }
                }
            }
        }
        let pixels = buf
            .iter()
            .flat_map(|p| p.map(|v| v.round().clamp(0.0, 255.0) as u8))
            .collect();
        Image::new(width, height, 3, pixels).expect("dimensions are consistent")
    }

    /// Renders one frame per pose, indexed from 0.
    pub fn render_sequence(&self, poses: &[Pose<f64>], k: &CameraIntrinsics<f64>, width: usize, height: usize) -> Vec<Frame> {
        poses
            .iter()
            .enumerate()
            .map(|(i, p)| Frame {
                index: i,
                image: self.render(p, k, width, height),
                source_name: format!("frame_{i:04}.png"),
            })
            .collect()
    }
}

/// Camera at `center` looking along `forward`, image rows pointing down (+y).
pub fn look_along(center: &Vector3<f64>, forward: &Vector3<f64>) -> Pose<f64> {
    let z = forward.normalize();
    let x = Vector3::y().cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Pose::from_center(r, center)
}

/// Lateral translation along +x, `step` per frame, looking down +z.
pub fn dolly(frames: usize, step: f64) -> Vec<Pose<f64>> {
    (0..frames)
        .map(|i| Pose::from_center(Matrix3::identity(), &Vector3::new(step * i as f64, 0.0, 0.0)))
        .collect()
}

/// Camera on a horizontal circle of `radius` around `target`, always facing
/// it, sweeping `angle` radians. The first pose sits at `target − radius·z`.
pub fn orbit(frames: usize, radius: f64, angle: f64, target: &Vector3<f64>) -> Vec<Pose<f64>> {
    (0..frames)
        .map(|i| {
            let phi = angle * i as f64 / (frames - 1).max(1) as f64;
            let c = target + radius * Vector3::new(phi.sin(), 0.0, -phi.cos());
            look_along(&c, &(target - c))
        })
        .collect()
}

/// Rotation in place about the vertical axis from `yaw_from` to `yaw_to`.
pub fn pan(frames: usize, center: &Vector3<f64>, yaw_from: f64, yaw_to: f64) -> Vec<Pose<f64>> {
    (0..frames)
        .map(|i| {
            let yaw = yaw_from + (yaw_to - yaw_from) * i as f64 / (frames - 1).max(1) as f64;
            look_along(center, &Vector3::new(yaw.sin(), 0.0, yaw.cos()))
        })
        .collect()
}

/// Rendered frames with their ground-truth poses.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<Frame>,
    pub poses: Vec<Pose<f64>>,
    pub intrinsics: CameraIntrinsics<f64>,
    /// World points behind the rendered sprites.
    pub points: Vec<Vector3<f64>>,
}

impl SyntheticSequence {
    fn from_scene(scene: &SpriteScene, poses: Vec<Pose<f64>>, k: CameraIntrinsics<f64>, width: usize, height: usize) -> Self {
        Self {
            frames: scene.render_sequence(&poses, &k, width, height),
            points: scene.sprites.iter().map(|s| s.position).collect(),
            poses,
            intrinsics: k,
        }
    }

    /// Writes the frames as `frame_NNNN.png` into `frames_dir` and the
    /// intrinsics as JSON to `intrinsics_path`.
    pub fn write_to(&self, frames_dir: &Path, intrinsics_path: &Path) -> Result<(), MediaError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| MediaError::Io { path, source }
        };
        std::fs::create_dir_all(frames_dir).map_err(io(frames_dir))?;
        for (i, frame) in self.frames.iter().enumerate() {
            write_image(&frames_dir.join(format!("frame_{i:04}.png")), &frame.image)?;
        }
        let k = &self.intrinsics;
        let text = format!(
            "{{\"fx\": {:?}, \"fy\": {:?}, \"cx\": {:?}, \"cy\": {:?}}}\n",
            k.fx, k.fy, k.cx, k.cy
        );
        std::fs::write(intrinsics_path, text).map_err(io(intrinsics_path))
    }

    /// Ideal per-frame features: every world point that projects at least
    /// `margin` pixels inside the frame becomes a keypoint, perturbed by
    /// Gaussian noise of `noise_px`, carrying a random descriptor unique to
    /// that point.
    pub fn ideal_features(&self, margin: f64, noise_px: f64, seed: u64) -> Vec<FeatureSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes: Vec<Descriptor> = self
            .points
            .iter()
            .map(|_| Descriptor([rng.random(), rng.random(), rng.random(), rng.random()]))
            .collect();
        let (w, h) = self.frames.first().map_or((0, 0), |f| (f.image.width(), f.image.height()));
        let noise = Normal::new(0.0, noise_px.max(0.0)).expect("finite noise");
        let k = &self.intrinsics;
        self.poses
            .iter()
            .map(|pose| {
                let mut set = FeatureSet::default();
                for (x, code) in self.points.iter().zip(&codes) {
                    let c = pose.transform(x);
                    if c.z <= 1e-3 {
                        continue;
                    }
                    let u = k.fx * c.x / c.z + k.cx + noise.sample(&mut rng);
                    let v = k.fy * c.y / c.z + k.cy + noise.sample(&mut rng);
                    if u >= margin && v >= margin && u < w as f64 - margin && v < h as f64 - margin {
                        set.keypoints.push(Keypoint { x: u, y: v, score: 1.0, orientation: 0.0 });
                        set.descriptors.push(*code);
                    }
                }
                set
            })
            .collect()
    }
}

fn vga() -> CameraIntrinsics<f64> {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).expect("valid intrinsics")
}

/// Lateral dolly of 80 frames over a random point field 4 to 8 units deep.
pub fn dolly_sequence(seed: u64) -> SyntheticSequence {
    let k = vga();
    let scene = SpriteScene::random_box(450, Vector3::new(-5.0, -3.0, 4.0), Vector3::new(7.0, 3.0, 8.0), seed);
    let poses = dolly(80, 0.02);
    SyntheticSequence::from_scene(&scene, poses, k, 640, 480)
}

/// Quarter orbit of radius 1 around `(0, 0, 5)`. The sprites sit on three
/// concentric walls 3.5 to 5.5 units beyond the orbit center, covering every
/// viewing direction of the sweep.
pub fn orbit_sequence(seed: u64) -> SyntheticSequence {
    let k = vga();
    let target = Vector3::new(0.0, 0.0, 5.0);
    let sector = (-std::f64::consts::FRAC_PI_2 - 0.7, 0.7);
    let scene = [3.5, 4.5, 5.5]
        .iter()
        .enumerate()
        .map(|(i, &r)| SpriteScene::random_wall(160, target, r, 2.2, sector, seed.wrapping_add(i as u64)))
        .reduce(SpriteScene::merged)
        .expect("three walls");
    let poses = orbit(91, 1.0, std::f64::consts::FRAC_PI_2, &target);
    SyntheticSequence::from_scene(&scene, poses, k, 640, 480)
}

/// `frames` identical views of a random point field.
pub fn static_sequence(frames: usize, seed: u64) -> SyntheticSequence {
    let k = vga();
    let scene = SpriteScene::random_box(500, Vector3::new(-5.0, -3.0, 4.0), Vector3::new(5.0, 3.0, 8.0), seed);
    let poses = vec![Pose::identity(); frames];
    SyntheticSequence::from_scene(&scene, poses, k, 640, 480)
}

/// Two 12° panning arcs at distant spots with a cut between them. Each arc
/// looks at its own textured wall, so the views share nothing across arcs.
pub fn two_arc_sequence(seed: u64) -> SyntheticSequence {
    let k = CameraIntrinsics::new(240.0, 240.0, 160.0, 120.0).expect("valid intrinsics");
    let (ca, cb) = (Vector3::zeros(), Vector3::new(100.0, 0.0, 0.0));
    let span = (-1.0, 1.0);
    let scene = SpriteScene::random_wall(420, ca, 6.0, 2.5, span, seed)
        .merged(SpriteScene::random_wall(420, cb, 6.0, 2.5, span, seed ^ 0x5EED));
    let arc = 14;
    let half = 6f64.to_radians();
    let mut poses = pan(arc, &ca, -half, half);
    poses.extend(pan(arc, &cb, -half, half));
    SyntheticSequence::from_scene(&scene, poses, k, 320, 240)
}

/// Procedural RGB image with smooth gradients and blurred rectangles and
/// disks, rich in corners.
pub fn test_pattern(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(40.0..200.0)));
    let mut buf: Vec<[f64; 3]> = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64 / width as f64, (i / width) as f64 / height as f64);
            std::array::from_fn(|c| base[0][c] * (1.0 - x) * (1.0 - y) + base[1][c] * x + base[2][c] * y * (1.0 - x))
        })
        .collect();
    let shapes = (width * height / 900).max(8);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let disk = rng.random_bool(0.4);
        let (rx, ry) = (rng.random_range(4.0..24.0), rng.random_range(4.0..24.0));
        let x0 = (cx - rx).max(0.0) as usize;
        let y0 = (cy - ry).max(0.0) as usize;
        let x1 = ((cx + rx) as usize).min(width - 1);
        let y1 = ((cy + ry) as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                if !disk || dx * dx + dy * dy <= 1.0 {
                    buf[y * width + x] = color;
                }
            }
        }
    }
    for _ in 0..2 {
        buf = binomial_blur(&buf, width, height);
    }
    let pixels = buf
        .iter()
        .flat_map(|p| p.map(|v| v.round().clamp(0.0, 255.0) as u8))
        .collect();
    Image::new(width, height, 3, pixels).expect("dimensions are consistent")
}

fn binomial_blur(src: &[[f64; 3]], w: usize, h: usize) -> Vec<[f64; 3]> {
    let pass = |src: &[[f64; 3]], dx: usize, dy: usize| -> Vec<[f64; 3]> {
        (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let prev = src[(y.saturating_sub(dy)) * w + x.saturating_sub(dx)];
                let next = src[(y + dy).min(h - 1) * w + (x + dx).min(w - 1)];
                std::array::from_fn(|c| 0.25 * prev[c] + 0.5 * src[i][c] + 0.25 * next[c])
            })
            .collect()
    };
    pass(&pass(src, 1, 0), 0, 1)
}

/// Maps crop pixel coordinates to source coordinates: the crop's origin sits
/// at `(x, y)` in the source and its axes are rotated by `angle`.
pub fn crop_transform(x: f64, y: f64, angle: f64) -> Homography<f64> {
    let (s, c) = angle.sin_cos();
    Homography::new(Matrix3::new(c, -s, x, s, c, y, 0.0, 0.0, 1.0)).expect("rigid transforms are invertible")
}

/// Resamples a `width × height` view of `src` placed by [`crop_transform`].
/// Pixels falling outside the source are black.
pub fn crop(src: &Image, x: f64, y: f64, angle: f64, width: usize, height: usize) -> Image {
    let t = crop_transform(x, y, angle);
    let ch = src.channels();
    let mut out = Image::filled(width, height, ch, 0);
    for v in 0..height {
        for u in 0..width {
            let p = t.apply(&Point2::new(u as f64, v as f64));
            for c in 0..ch {
                if let Some(val) = crate::stitch::sample_bilinear(src, p.x, p.y, c) {
                    out.set(u, v, c, val.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    out
}

/// Largest distance of a point to the least-squares line through `points`,
/// divided by the distance between the first and last point.
pub fn collinearity_error(points: &[Vector3<f64>]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| acc + (p - mean) * (p - mean).transpose());
    let eig = cov.symmetric_eigen();
    let dir = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    let span = (points[points.len() - 1] - points[0]).norm();
    let worst = points
        .iter()
        .map(|p| {
            let d = p - mean;
            (d - dir * dir.dot(&d)).norm()
        })
        .fold(0.0, f64::max);
    worst / span
}

/// Similarity `(s, R, t)` minimising `Σ ‖s R src_i + t − dst_i‖²`.
pub fn align_similarity(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (f64, Matrix3<f64>, Vector3<f64>) {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vector3<f64>>() / n;
    let md = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for (a, b) in src.iter().zip(dst) {
        cov += (b - md) * (a - ms).transpose();
        var += (a - ms).norm_squared();
    }
    cov /= n;
    var /= n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let s = if var > 0.0 { (svd.singular_values.component_mul(&d.diagonal())).sum() / var } else { 1.0 };
    (s, r, md - s * r * ms)
}

/// Std/mean of the distances from `center` of the recovered points after
/// aligning them to `truth` by a similarity.
pub fn circle_radius_spread(recovered: &[Vector3<f64>], truth: &[Vector3<f64>], center: &Vector3<f64>) -> f64 {
    let (s, r, t) = align_similarity(recovered, truth);
    let radii: Vec<f64> = recovered.iter().map(|p| (s * r * p + t - center).norm()).collect();
    let n = radii.len() as f64;
    let mean = radii.iter().sum::<f64>() / n;
    let var = radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}
