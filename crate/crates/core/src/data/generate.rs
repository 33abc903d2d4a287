//! Deterministic synthetic sample generation: parametric part unions,
//! nearest-part heatmaps, orbiting-silhouette clips with an approaching
//! hand disc, and the Seen/Unseen split protocol.

use super::io::canon9;
use super::{
    Affordance, Category, Manifest, ManifestEntry, Sample, SplitSpec, SplitTag, VideoClip,
};
use crate::error::Result;
use crate::geometry::{
    add3, dot3, icosphere_candidates, normalize3, project_points, scale3, select_viewpoint,
    sub3, CameraParams, PointCloud, Vec3,
};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const POINTS_PER_CLOUD: usize = 512;
pub const FRAMES: usize = 8;
pub const CLIP_SIZE: usize = 32;
pub const AZIMUTH_STEP_DEG: f64 = 10.0;

const ORBIT_AZIMUTH0_DEG: f64 = 35.0;
const ORBIT_ELEVATION_DEG: f64 = 20.0;
const CAMERA_DISTANCE: f64 = 2.5;
const FOCAL: f64 = 1.0;
const HEAT_SIGMA_FRAC: f64 = 0.15;
const HAND_RADIUS_PX: f64 = 2.6;
const SILHOUETTE_SCALE: f64 = 0.75;
const MIN_POINTS_PER_PART: usize = 24;

/// A parametric surface primitive.
#[derive(Debug, Clone)]
pub enum PartShape {
    Box { center: Vec3, half: Vec3 },
    Cylinder { base: Vec3, axis: Vec3, radius: f64, height: f64 },
    Sphere { center: Vec3, radius: f64 },
}

impl PartShape {
    fn area(&self) -> f64 {
        match self {
            PartShape::Box { half, .. } => {
                8.0 * (half[0] * half[1] + half[1] * half[2] + half[0] * half[2])
            }
            PartShape::Cylinder { radius, height, .. } => {
                2.0 * std::f64::consts::PI * radius * (height + radius)
            }
            PartShape::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        }
    }

    fn sample_surface(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        match self {
            PartShape::Box { center, half } => {
                let areas = [
                    half[1] * half[2], // x faces
                    half[0] * half[2], // y faces
                    half[0] * half[1], // z faces
                ];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen_range(0.0..total);
                let mut axis = 2usize;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = [
                    rng.gen_range(-half[0]..half[0]),
                    rng.gen_range(-half[1]..half[1]),
                    rng.gen_range(-half[2]..half[2]),
                ];
                p[axis] = side * half[axis];
                add3(*center, p)
            }
            PartShape::Cylinder { base, axis, radius, height } => {
                let ax = normalize3(*axis);
                // orthonormal frame around the axis
                let helper = if ax[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
                let u = normalize3(crate::geometry::cross3(ax, helper));
                let v = crate::geometry::cross3(ax, u);
                let lateral = 2.0 * std::f64::consts::PI * radius * height;
                let cap = std::f64::consts::PI * radius * radius;
                let pick = rng.gen_range(0.0..(lateral + 2.0 * cap));
                if pick < lateral {
                    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                    let h = rng.gen_range(0.0..*height);
                    let ring = add3(scale3(u, radius * theta.cos()), scale3(v, radius * theta.sin()));
                    add3(add3(*base, scale3(ax, h)), ring)
                } else {
                    let top = pick < lateral + cap;
                    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                    let r = radius * rng.gen_range(0.0f64..1.0).sqrt();
                    let disc = add3(scale3(u, r * theta.cos()), scale3(v, r * theta.sin()));
                    let h = if top { *height } else { 0.0 };
                    add3(add3(*base, scale3(ax, h)), disc)
                }
            }
            PartShape::Sphere { center, radius } => {
                // uniform direction by normalizing a trimmed gaussian-free
                // rejection sample from the cube
                loop {
                    let v: Vec3 = [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ];
                    let n2 = dot3(v, v);
                    if n2 > 1e-4 && n2 <= 1.0 {
                        return add3(*center, scale3(normalize3(v), *radius));
                    }
                }
            }
        }
    }
}

/// Part layout per category, in object-local coordinates. Parts are kept
/// separated so the ground-truth bump stays concentrated on its part.
pub fn object_parts(category: Category) -> Vec<(&'static str, PartShape)> {
    match category {
        Category::Mug => vec![
            (
                "body",
                PartShape::Cylinder {
                    base: [0.0, 0.0, 0.0],
                    axis: [0.0, 0.0, 1.0],
                    radius: 0.42,
                    height: 1.0,
                },
            ),
            (
                "handle",
                PartShape::Cylinder {
                    base: [1.25, 0.0, 0.15],
                    axis: [0.0, 0.0, 1.0],
                    radius: 0.16,
                    height: 0.8,
                },
            ),
            ("knob", PartShape::Sphere { center: [0.0, 0.0, 1.95], radius: 0.28 }),
        ],
        Category::Hammer => vec![
            (
                "handle",
                PartShape::Cylinder {
                    base: [0.0, 0.0, 0.0],
                    axis: [0.0, 0.0, 1.0],
                    radius: 0.13,
                    height: 1.2,
                },
            ),
            (
                "head",
                PartShape::Box {
                    center: [0.0, 0.0, 1.95],
                    half: [0.52, 0.18, 0.18],
                },
            ),
        ],
        Category::Kettle => vec![
            ("body", PartShape::Sphere { center: [0.0, 0.0, 0.0], radius: 0.5 }),
            (
                "spout",
                PartShape::Cylinder {
                    base: [1.05, 0.0, 0.25],
                    axis: [0.87, 0.0, 0.5],
                    radius: 0.1,
                    height: 0.55,
                },
            ),
            (
                "handle",
                PartShape::Cylinder {
                    base: [-0.55, 0.0, 1.2],
                    axis: [1.0, 0.0, 0.0],
                    radius: 0.1,
                    height: 1.1,
                },
            ),
        ],
        Category::Barbell => vec![
            (
                "bar",
                PartShape::Cylinder {
                    base: [-0.55, 0.0, 0.0],
                    axis: [1.0, 0.0, 0.0],
                    radius: 0.1,
                    height: 1.1,
                },
            ),
            ("left", PartShape::Sphere { center: [-1.7, 0.0, 0.0], radius: 0.24 }),
            ("right", PartShape::Sphere { center: [1.7, 0.0, 0.0], radius: 0.24 }),
        ],
        Category::Lamp => vec![
            (
                "base",
                PartShape::Box {
                    center: [0.0, 0.0, 0.0],
                    half: [0.5, 0.5, 0.12],
                },
            ),
            (
                "pole",
                PartShape::Cylinder {
                    base: [0.0, 0.0, 0.62],
                    axis: [0.0, 0.0, 1.0],
                    radius: 0.09,
                    height: 1.0,
                },
            ),
            ("shade", PartShape::Sphere { center: [0.0, 0.0, 2.3], radius: 0.34 }),
        ],
        Category::Cart => vec![
            (
                "body",
                PartShape::Box {
                    center: [0.0, 0.0, 0.0],
                    half: [0.6, 0.35, 0.18],
                },
            ),
            (
                "handle",
                PartShape::Cylinder {
                    base: [1.3, 0.0, 0.3],
                    axis: [0.42, 0.0, 0.91],
                    radius: 0.11,
                    height: 0.8,
                },
            ),
        ],
    }
}

/// A sampled object before clip rendering: canonicalized unit-scale
/// coordinates, heatmap, and the part bookkeeping tests rely on.
#[derive(Debug, Clone)]
pub struct BuiltObject {
    pub coords: Vec<Vec3>,
    pub heatmap: Vec<f64>,
    pub part_of: Vec<usize>,
    pub target_part: usize,
    pub part_centroids: Vec<Vec3>,
}

/// Deterministic object sampling: N surface points across the category's
/// parts (area-proportional with a floor), centered and scaled to unit
/// radius, with a nearest-part-distance Gaussian heatmap on the target
/// part (sigma = 0.15 of the object diameter).
pub fn build_object(category: Category, affordance: Affordance, seed: u64) -> Result<BuiltObject> {
    let target = super::target_part(category, affordance)?;
    let parts = object_parts(category);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // area-proportional counts with a per-part floor, padded/trimmed on the
    // largest part to hit the exact total
    let areas: Vec<f64> = parts.iter().map(|(_, p)| p.area()).collect();
    let total_area: f64 = areas.iter().sum();
    let mut counts: Vec<usize> = areas
        .iter()
        .map(|a| ((a / total_area) * POINTS_PER_CLOUD as f64).round() as usize)
        .map(|c| c.max(MIN_POINTS_PER_PART))
        .collect();
    let biggest = areas
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let assigned: usize = counts.iter().sum();
    counts[biggest] = counts[biggest] + POINTS_PER_CLOUD - assigned.min(POINTS_PER_CLOUD);
    if assigned > POINTS_PER_CLOUD {
        counts[biggest] -= assigned - POINTS_PER_CLOUD;
    }

    let mut coords: Vec<Vec3> = Vec::with_capacity(POINTS_PER_CLOUD);
    let mut part_of: Vec<usize> = Vec::with_capacity(POINTS_PER_CLOUD);
    for (pi, (_, shape)) in parts.iter().enumerate() {
        for _ in 0..counts[pi] {
            coords.push(shape.sample_surface(&mut rng));
            part_of.push(pi);
        }
    }

    // center on the centroid, scale the max radius to 1
    let mut centroid = [0.0; 3];
    for p in &coords {
        centroid = add3(centroid, *p);
    }
    centroid = scale3(centroid, 1.0 / coords.len() as f64);
    let mut max_r: f64 = 0.0;
    for p in coords.iter_mut() {
        *p = sub3(*p, centroid);
        max_r = max_r.max(dot3(*p, *p).sqrt());
    }
    for p in coords.iter_mut() {
        *p = scale3(*p, 1.0 / max_r);
        *p = [canon9(p[0]), canon9(p[1]), canon9(p[2])];
    }

    // nearest-part-distance Gaussian bump
    let mut diameter: f64 = 0.0;
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            let d = sub3(coords[i], coords[j]);
            diameter = diameter.max(dot3(d, d));
        }
    }
    let diameter = diameter.sqrt();
    let sigma = HEAT_SIGMA_FRAC * diameter;
    let target_points: Vec<Vec3> = coords
        .iter()
        .zip(&part_of)
        .filter(|(_, &p)| p == target)
        .map(|(c, _)| *c)
        .collect();
    let heatmap: Vec<f64> = coords
        .iter()
        .map(|c| {
            let mut d2 = f64::INFINITY;
            for t in &target_points {
                let d = sub3(*c, *t);
                d2 = d2.min(dot3(d, d));
            }
            canon9((-d2 / (2.0 * sigma * sigma)).exp())
        })
        .collect();

    let n_parts = parts.len();
    let mut part_centroids = vec![[0.0f64; 3]; n_parts];
    let mut part_counts = vec![0usize; n_parts];
    for (c, &p) in coords.iter().zip(&part_of) {
        part_centroids[p] = add3(part_centroids[p], *c);
        part_counts[p] += 1;
    }
    for (c, n) in part_centroids.iter_mut().zip(&part_counts) {
        *c = scale3(*c, 1.0 / *n as f64);
    }

    Ok(BuiltObject {
        coords,
        heatmap,
        part_of,
        target_part: target,
        part_centroids,
    })
}

/// The fixed orbit camera used for clip frame `t` (shared across all
/// samples so image positions map consistently to world positions).
pub fn orbit_camera(t: usize, image_size: (usize, usize)) -> CameraParams {
    let az = (ORBIT_AZIMUTH0_DEG + t as f64 * AZIMUTH_STEP_DEG).to_radians();
    let el = ORBIT_ELEVATION_DEG.to_radians();
    let dir = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
    CameraParams {
        eye: scale3(dir, CAMERA_DISTANCE),
        look_at: [0.0, 0.0, 0.0],
        up: [0.0, 0.0, 1.0],
        focal: FOCAL,
        image_size,
    }
}

/// Continuous pixel position of a world point under `cam`, or None when
/// behind the camera or outside the frustum.
fn project_continuous(p: Vec3, cam: &CameraParams) -> Option<(f64, f64)> {
    let fwd = normalize3(sub3(cam.look_at, cam.eye));
    let right = normalize3(crate::geometry::cross3(fwd, cam.up));
    let up = crate::geometry::cross3(right, fwd);
    let d = sub3(p, cam.eye);
    let z = dot3(d, fwd);
    if z <= 1e-9 {
        return None;
    }
    let u = cam.focal * dot3(d, right) / z;
    let v = cam.focal * dot3(d, up) / z;
    if !(-1.0..1.0).contains(&u) || !(-1.0..1.0).contains(&v) {
        return None;
    }
    let (h, w) = cam.image_size;
    Some((((1.0 - v) / 2.0) * h as f64, ((u + 1.0) / 2.0) * w as f64))
}

/// Frame index at which the hand disc reaches the target (start of the
/// final quarter of the clip).
fn contact_frame(t_total: usize) -> usize {
    ((0.75 * (t_total as f64 - 1.0)).ceil() as usize).max(1)
}

/// Renders the clip: orbiting depth-shaded silhouette (scaled to 0.75 so
/// the hand stays the brightest content) plus a bright disc moving from a
/// fixed start above the object to the target part's projected centroid,
/// touching it over the final quarter of frames.
fn render_clip(pc: &PointCloud, target_centroid: Vec3) -> Result<VideoClip> {
    let (h, w) = (CLIP_SIZE, CLIP_SIZE);
    let mut data = Vec::with_capacity(FRAMES * h * w);
    let start = (3.0, w as f64 / 2.0); // (row, col) above the object
    let t_contact = contact_frame(FRAMES);
    for t in 0..FRAMES {
        let cam = orbit_camera(t, (h, w));
        let img = project_points(pc, &cam)?;
        let mut frame: Vec<f64> = img.pixels.data.iter().map(|v| v * SILHOUETTE_SCALE).collect();
        let target_px = project_continuous(target_centroid, &cam)
            .unwrap_or((h as f64 / 2.0, w as f64 / 2.0));
        let progress = (t as f64 / t_contact as f64).min(1.0);
        let cy = start.0 + (target_px.0 - start.0) * progress;
        let cx = start.1 + (target_px.1 - start.1) * progress;
        for row in 0..h {
            for col in 0..w {
                let dy = row as f64 + 0.5 - cy;
                let dx = col as f64 + 0.5 - cx;
                if dy * dy + dx * dx <= HAND_RADIUS_PX * HAND_RADIUS_PX {
                    frame[row * w + col] = 1.0;
                }
            }
        }
        data.extend(frame.iter().map(|&v| v as f32));
    }
    Ok(VideoClip {
        t: FRAMES,
        c: 1,
        h,
        w,
        data,
    })
}

/// Deterministic sample generation from (category, affordance, seed).
pub fn generate_sample(category: Category, affordance: Affordance, seed: u64) -> Result<Sample> {
    let obj = build_object(category, affordance, seed)?;
    let pc = PointCloud::new(obj.coords.clone(), Some(obj.heatmap.clone()))?;
    let candidates = icosphere_candidates([0.0, 0.0, 0.0], CAMERA_DISTANCE, FOCAL, (CLIP_SIZE, CLIP_SIZE));
    let viewpoint = select_viewpoint(&pc, &candidates)?;
    let clip = render_clip(&pc, obj.part_centroids[obj.target_part])?;
    Ok(Sample {
        id: format!("{}_{}_{seed}", category.as_str(), affordance.as_str()),
        category,
        affordance,
        points: pc,
        clip,
        viewpoint,
        split_tag: SplitTag::SeenTrain,
    })
}

fn sample_seed(spec_seed: u64, pair_index: usize, split: SplitTag, k: usize) -> u64 {
    let split_off = match split {
        SplitTag::SeenTrain => 0,
        SplitTag::SeenEval => 5_000,
        SplitTag::UnseenEval => 5_000,
    };
    spec_seed
        .wrapping_mul(1_000_003)
        .wrapping_add(pair_index as u64 * 10_000)
        .wrapping_add(split_off + k as u64)
}

/// Builds the dataset for a split spec: `n_per_pair` training samples per
/// seen pair, and `max(1, n_per_pair / 4)` eval samples per seen pair
/// (seen-eval) and per unseen pair (unseen-eval), each from disjoint seeds.
pub fn make_splits(spec: &SplitSpec, n_per_pair: usize) -> Result<(Vec<Sample>, Manifest)> {
    spec.validate()?;
    if n_per_pair == 0 {
        return Err(crate::error::VagError::unsupported(
            "make_splits",
            "n_per_pair must be positive",
        ));
    }
    let n_eval = (n_per_pair / 4).max(1);
    let mut samples = Vec::new();
    let mut manifest = Manifest::default();
    let emit = |cat: Category,
                    aff: Affordance,
                    pair_index: usize,
                    tag: SplitTag,
                    count: usize,
                    samples: &mut Vec<Sample>,
                    manifest: &mut Manifest|
     -> Result<()> {
        for k in 0..count {
            let seed = sample_seed(spec.seed, pair_index, tag, k);
            let mut s = generate_sample(cat, aff, seed)?;
            s.split_tag = tag;
            s.id = format!("{}_{}_{}_{k:03}", cat.as_str(), aff.as_str(), tag.as_str());
            samples.push(s);
            manifest
                .entries
                .push(ManifestEntry::for_id(&samples.last().unwrap().id, tag));
        }
        Ok(())
    };
    for (pi, (cat, aff)) in spec.seen_pairs.iter().enumerate() {
        emit(*cat, *aff, pi, SplitTag::SeenTrain, n_per_pair, &mut samples, &mut manifest)?;
        emit(*cat, *aff, pi, SplitTag::SeenEval, n_eval, &mut samples, &mut manifest)?;
    }
    for (pi, (cat, aff)) in spec.unseen_pairs.iter().enumerate() {
        emit(
            *cat,
            *aff,
            spec.seen_pairs.len() + pi,
            SplitTag::UnseenEval,
            n_eval,
            &mut samples,
            &mut manifest,
        )?;
    }
    Ok((samples, manifest))
}

/// T identical frames from a single 1×H×W image (the image-only input mode).
pub fn replicate_image_to_clip(img: &Tensor, t: usize) -> Result<VideoClip> {
    if img.rank() != 3 || img.shape[0] != 1 {
        return Err(crate::error::VagError::contract(
            "replicate_image_to_clip",
            format!("expected 1×H×W image, got shape {:?}", img.shape),
        ));
    }
    let (h, w) = (img.shape[1], img.shape[2]);
    let frame: Vec<f32> = img.data.iter().map(|&v| v as f32).collect();
    let mut data = Vec::with_capacity(t * h * w);
    for _ in 0..t {
        data.extend_from_slice(&frame);
    }
    Ok(VideoClip { t, c: 1, h, w, data })
}
