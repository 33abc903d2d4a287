//! Point-cloud sampling/grouping/interpolation kernels and the pinhole
//! projection pipeline that renders the object view.

use crate::error::{Result, VagError};
use crate::tensor::{Tape, Tensor, TensorId};

pub type Vec3 = [f64; 3];

pub(crate) fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub(crate) fn normalize3(a: Vec3) -> Vec3 {
    let n = norm3(a);
    scale3(a, 1.0 / n)
}

fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub3(a, b);
    dot3(d, d)
}

/// Object point cloud with an optional per-point affordance heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub coords: Vec<Vec3>,
    pub heatmap: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(coords: Vec<Vec3>, heatmap: Option<Vec<f64>>) -> Result<Self> {
        if coords.len() < 4 {
            return Err(VagError::contract(
                "PointCloud",
                format!("need at least 4 points, got {}", coords.len()),
            ));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(VagError::contract("PointCloud", "non-finite coordinate"));
        }
        if let Some(h) = &heatmap {
            if h.len() != coords.len() {
                return Err(VagError::contract(
                    "PointCloud",
                    format!("heatmap length {} != point count {}", h.len(), coords.len()),
                ));
            }
            if h.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(VagError::contract("PointCloud", "heatmap value outside [0,1]"));
            }
        }
        Ok(PointCloud { coords, heatmap })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = [0.0; 3];
        for p in &self.coords {
            c = add3(c, *p);
        }
        scale3(c, 1.0 / self.coords.len() as f64)
    }
}

/// Pinhole camera: position, orientation, focal length and target raster.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    pub eye: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub focal: f64,
    pub image_size: (usize, usize),
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        if self.eye == self.look_at {
            return Err(VagError::contract("CameraParams", "eye equals look_at"));
        }
        if self.focal <= 0.0 {
            return Err(VagError::contract("CameraParams", "focal must be positive"));
        }
        let f = normalize3(sub3(self.look_at, self.eye));
        if norm3(cross3(f, self.up)) < 1e-9 {
            return Err(VagError::contract(
                "CameraParams",
                "up vector parallel to view direction",
            ));
        }
        Ok(())
    }
}

/// Z-buffered depth-shaded silhouette: brightest = nearest winning point,
/// empty pixels zero. `pixel_of_point[i]` is set only for points that won
/// their pixel.
#[derive(Debug, Clone)]
pub struct ProjectedImage {
    pub pixels: Tensor, // shape [1, H, W], values in [0, 1]
    pub pixel_of_point: Vec<Option<(usize, usize)>>,
    /// Set when every point was behind the camera.
    pub all_behind: bool,
}

/// Greedy max-min Euclidean selection of `k` point indices, starting at
/// `start`; distance ties resolve to the lowest index.
pub fn farthest_point_sample(pc: &PointCloud, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = pc.len();
    if k == 0 || k > n {
        return Err(VagError::bounds(
            "farthest_point_sample",
            format!("k={k} outside [1, {n}]"),
        ));
    }
    if start >= n {
        return Err(VagError::bounds(
            "farthest_point_sample",
            format!("start={start} outside [0, {n})"),
        ));
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start;
    selected.push(current);
    for _ in 1..k {
        let cur = pc.coords[current];
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            let d = dist2(pc.coords[i], cur);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
        selected.push(current);
    }
    Ok(selected)
}

/// Per-center neighbor lists: up to `max_neighbors` points within `radius`,
/// nearest first, the center itself always first; short lists are padded by
/// repeating the center index.
pub fn ball_query(
    pc: &PointCloud,
    centers: &[usize],
    radius: f64,
    max_neighbors: usize,
) -> Result<Vec<Vec<usize>>> {
    if radius <= 0.0 {
        return Err(VagError::contract("ball_query", "radius must be positive"));
    }
    let r2 = radius * radius;
    let mut out = Vec::with_capacity(centers.len());
    for &c in centers {
        let cp = pc.coords[c];
        let mut cands: Vec<(f64, usize)> = Vec::new();
        for (i, p) in pc.coords.iter().enumerate() {
            if i == c {
                continue;
            }
            let d = dist2(*p, cp);
            if d <= r2 {
                cands.push((d, i));
            }
        }
        cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut list = Vec::with_capacity(max_neighbors);
        list.push(c);
        for (_, i) in cands.into_iter().take(max_neighbors.saturating_sub(1)) {
            list.push(i);
        }
        while list.len() < max_neighbors {
            list.push(c);
        }
        out.push(list);
    }
    Ok(out)
}

/// Index/weight plan for inverse-distance k-NN interpolation from M source
/// points to N destination points.
#[derive(Debug, Clone)]
pub struct KnnPlan {
    pub idx: Vec<usize>, // N*k source indices
    pub w: Vec<f64>,     // N*k normalized weights
    pub k: usize,
}

pub fn knn_plan(src_coords: &[Vec3], dst_coords: &[Vec3], k: usize) -> Result<KnnPlan> {
    if src_coords.len() < k {
        return Err(VagError::unsupported(
            "knn_interpolate",
            format!("need at least k={k} sources, got {}", src_coords.len()),
        ));
    }
    let mut idx = Vec::with_capacity(dst_coords.len() * k);
    let mut w = Vec::with_capacity(dst_coords.len() * k);
    for d in dst_coords {
        let mut dists: Vec<(f64, usize)> = src_coords
            .iter()
            .enumerate()
            .map(|(i, s)| (dist2(*s, *d), i))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut weights = [0.0f64; 16];
        let mut total = 0.0;
        for t in 0..k {
            let wt = 1.0 / (dists[t].0.sqrt() + 1e-8);
            weights[t] = wt;
            total += wt;
        }
        for t in 0..k {
            idx.push(dists[t].1);
            w.push(weights[t] / total);
        }
    }
    Ok(KnnPlan { idx, w, k })
}

/// Inverse-distance-weighted interpolation of C×M source features onto N
/// destination points; differentiable w.r.t. the features.
pub fn knn_interpolate(
    tape: &mut Tape,
    src_coords: &[Vec3],
    src_feats: TensorId,
    dst_coords: &[Vec3],
    k: usize,
) -> Result<TensorId> {
    let plan = knn_plan(src_coords, dst_coords, k)?;
    tape.gather_mix(src_feats, &plan.idx, &plan.w, plan.k)
}

/// Camera-frame coordinates: (right, up, depth); depth > 0 in front.
fn camera_frame(cam: &CameraParams) -> (Vec3, Vec3, Vec3) {
    let fwd = normalize3(sub3(cam.look_at, cam.eye));
    let right = normalize3(cross3(fwd, cam.up));
    let up = cross3(right, fwd);
    (right, up, fwd)
}

/// Pinhole projection with a z-buffer; intensity 1 − normalized depth of
/// the winning point. Points behind the camera or outside the frustum are
/// dropped; an all-behind cloud yields an empty image with a warning flag.
pub fn project_points(pc: &PointCloud, cam: &CameraParams) -> Result<ProjectedImage> {
    cam.validate()?;
    let (h, w) = cam.image_size;
    let (right, up, fwd) = camera_frame(cam);
    let n = pc.len();
    let mut depth = vec![f64::INFINITY; h * w];
    let mut winner: Vec<Option<usize>> = vec![None; h * w];
    let mut pixel_of_point: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut any_in_front = false;

    for (i, p) in pc.coords.iter().enumerate() {
        let d = sub3(*p, cam.eye);
        let z = dot3(d, fwd);
        if z <= 1e-9 {
            continue;
        }
        any_in_front = true;
        let u = cam.focal * dot3(d, right) / z;
        let v = cam.focal * dot3(d, up) / z;
        if !(-1.0..1.0).contains(&u) || !(-1.0..1.0).contains(&v) {
            continue;
        }
        let col = (((u + 1.0) / 2.0) * w as f64).floor() as usize;
        let row = (((1.0 - v) / 2.0) * h as f64).floor() as usize;
        let col = col.min(w - 1);
        let row = row.min(h - 1);
        let slot = row * w + col;
        if z < depth[slot] {
            if let Some(prev) = winner[slot] {
                pixel_of_point[prev] = None;
            }
            depth[slot] = z;
            winner[slot] = Some(i);
            pixel_of_point[i] = Some((row, col));
        }
    }

    let mut pixels = vec![0.0; h * w];
    let winning: Vec<f64> = depth.iter().copied().filter(|z| z.is_finite()).collect();
    if !winning.is_empty() {
        let zmin = winning.iter().cloned().fold(f64::INFINITY, f64::min);
        let zmax = winning.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (zmax - zmin).max(1e-12);
        for (slot, z) in depth.iter().enumerate() {
            if z.is_finite() {
                pixels[slot] = 1.0 - (z - zmin) / span;
            }
        }
    }

    Ok(ProjectedImage {
        pixels: Tensor::new(pixels, &[1, h, w])?,
        pixel_of_point,
        all_behind: !any_in_front,
    })
}

/// Score of a candidate camera: total ground-truth heatmap mass over
/// points visible in its projection.
fn viewpoint_score(pc: &PointCloud, heat: &[f64], cam: &CameraParams) -> Result<f64> {
    let img = project_points(pc, cam)?;
    Ok(img
        .pixel_of_point
        .iter()
        .zip(heat)
        .filter_map(|(px, &h)| px.map(|_| h))
        .sum())
}

/// Picks the candidate camera that sees the most annotated affordance mass;
/// ties resolve to the earliest candidate.
pub fn select_viewpoint(pc: &PointCloud, candidates: &[CameraParams]) -> Result<CameraParams> {
    let heat = pc
        .heatmap
        .as_ref()
        .ok_or_else(|| VagError::contract("select_viewpoint", "heatmap required"))?;
    if candidates.is_empty() {
        return Err(VagError::unsupported("select_viewpoint", "empty candidate list"));
    }
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, cam) in candidates.iter().enumerate() {
        let score = viewpoint_score(pc, heat, cam)?;
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    Ok(candidates[best].clone())
}

/// 42 candidate cameras on a once-subdivided icosahedron around the
/// centroid, in a fixed deterministic order.
pub fn icosphere_candidates(
    centroid: Vec3,
    distance: f64,
    focal: f64,
    image_size: (usize, usize),
) -> Vec<CameraParams> {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize3)
    .collect();

    // Edge midpoints: vertices closer than the icosahedron edge length plus
    // slack are connected; each unique (i < j) pair appends one midpoint.
    let edge_len = 2.0 / (1.0 + phi * phi).sqrt() + 1e-6;
    let base = verts.clone();
    for i in 0..base.len() {
        for j in (i + 1)..base.len() {
            if norm3(sub3(base[i], base[j])) < edge_len {
                verts.push(normalize3(scale3(add3(base[i], base[j]), 0.5)));
            }
        }
    }
    debug_assert_eq!(verts.len(), 42);

    verts
        .into_iter()
        .map(|dir| {
            let up = if dir[2].abs() > 0.999 {
                [0.0, 1.0, 0.0]
            } else {
                [0.0, 0.0, 1.0]
            };
            CameraParams {
                eye: add3(centroid, scale3(dir, distance)),
                look_at: centroid,
                up,
                focal,
                image_size,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_check, project_to_scalar, rand_tensor};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line_cloud() -> PointCloud {
        PointCloud::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [2.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn fps_extremes_on_collinear_points() {
        let pc = line_cloud();
        assert_eq!(farthest_point_sample(&pc, 2, 0).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_tie_breaks_to_lowest_index() {
        let pc = line_cloud();
        // points 1 and 2 both sit at min-distance 1 from {0, 3}
        assert_eq!(farthest_point_sample(&pc, 3, 0).unwrap(), vec![0, 3, 1]);
    }

    #[test]
    fn fps_exhaustion_returns_all_in_selection_order() {
        let pc = line_cloud();
        let sel = farthest_point_sample(&pc, 4, 0).unwrap();
        assert_eq!(sel.len(), 4);
        let mut sorted = sel.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
        assert_eq!(sel, vec![0, 3, 1, 2]);
    }

    #[test]
    fn fps_rejects_oversized_k() {
        let pc = line_cloud();
        assert!(matches!(
            farthest_point_sample(&pc, 5, 0),
            Err(VagError::Bounds { .. })
        ));
    }

    #[test]
    fn fps_is_permutation_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let coords: Vec<Vec3> = (0..40)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let pc = PointCloud::new(coords.clone(), None).unwrap();
        let sel = farthest_point_sample(&pc, 8, 3).unwrap();
        let geo: Vec<Vec3> = sel.iter().map(|&i| coords[i]).collect();

        // reverse the point order and map the start index accordingly
        let perm_coords: Vec<Vec3> = coords.iter().rev().cloned().collect();
        let pc2 = PointCloud::new(perm_coords.clone(), None).unwrap();
        let sel2 = farthest_point_sample(&pc2, 8, 40 - 1 - 3).unwrap();
        let geo2: Vec<Vec3> = sel2.iter().map(|&i| perm_coords[i]).collect();
        assert_eq!(geo, geo2);
    }

    #[test]
    fn ball_query_isolated_centers_pad_with_self() {
        let pc = line_cloud();
        let lists = ball_query(&pc, &[1], 0.5, 3).unwrap();
        assert_eq!(lists[0], vec![1, 1, 1]);
    }

    #[test]
    fn ball_query_infinite_radius_sorts_by_distance() {
        let pc = line_cloud();
        let lists = ball_query(&pc, &[1], f64::INFINITY, 4).unwrap();
        assert_eq!(lists[0], vec![1, 0, 2, 3]);
    }

    #[test]
    fn ball_query_square_corner() {
        let pc = PointCloud::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [1.0, 1.0, 0.0],
            ],
            None,
        )
        .unwrap();
        let lists = ball_query(&pc, &[0], 1.0, 4).unwrap();
        // corner plus its two edge-adjacent neighbors; diagonal excluded
        assert_eq!(lists[0], vec![0, 1, 2, 0]);
    }

    #[test]
    fn knn_coincident_destination_reproduces_feature() {
        let src = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let mut tape = Tape::new();
        let feats = tape.constant(vec![5.0, -2.0, 9.0], &[1, 3]).unwrap();
        let out = knn_interpolate(&mut tape, &src, feats, &[[1.0, 0.0, 0.0]], 3).unwrap();
        assert!((tape.data(out)[0] - (-2.0)).abs() <= 1e-6);
    }

    #[test]
    fn knn_equidistant_sources_average() {
        // destination at the centroid of an equilateral triangle
        let r = 1.0;
        let src: Vec<Vec3> = (0..3)
            .map(|i| {
                let a = (i as f64) * 2.0 * std::f64::consts::PI / 3.0;
                [r * a.cos(), r * a.sin(), 0.0]
            })
            .collect();
        let mut tape = Tape::new();
        let feats = tape.constant(vec![0.0, 3.0, 6.0], &[1, 3]).unwrap();
        let out = knn_interpolate(&mut tape, &src, feats, &[[0.0, 0.0, 0.0]], 3).unwrap();
        assert!((tape.data(out)[0] - 3.0).abs() <= 1e-9);
    }

    #[test]
    fn knn_rejects_too_few_sources() {
        let mut tape = Tape::new();
        let feats = tape.constant(vec![0.0, 1.0], &[1, 2]).unwrap();
        let err = knn_interpolate(
            &mut tape,
            &[[0.0; 3], [1.0, 0.0, 0.0]],
            feats,
            &[[0.5, 0.0, 0.0]],
            3,
        );
        assert!(matches!(err, Err(VagError::UnsupportedConfig { .. })));
    }

    #[test]
    fn knn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let src: Vec<Vec3> = (0..6)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let dst: Vec<Vec3> = (0..5)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let feats = rand_tensor(&mut rng, &[4, 6]);
        let rep = fd_check(&[feats], 24, 3, &|t, ids| {
            let out = knn_interpolate(t, &src, ids[0], &dst, 3)?;
            project_to_scalar(t, out, 51)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-5, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn knn_is_linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let src: Vec<Vec3> = (0..6)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let dst: Vec<Vec3> = (0..4)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let x = rand_tensor(&mut rng, &[2, 6]);
        let y = rand_tensor(&mut rng, &[2, 6]);
        let (a, b) = (1.7, -0.4);

        let mut tape = Tape::new();
        let xi = tape.leaf(&x, false);
        let yi = tape.leaf(&y, false);
        let xa = tape.mul_scalar(xi, a);
        let yb = tape.mul_scalar(yi, b);
        let comb = tape.add(xa, yb).unwrap();
        let lhs = knn_interpolate(&mut tape, &src, comb, &dst, 3).unwrap();
        let ix = knn_interpolate(&mut tape, &src, xi, &dst, 3).unwrap();
        let iy = knn_interpolate(&mut tape, &src, yi, &dst, 3).unwrap();
        let ixa = tape.mul_scalar(ix, a);
        let iyb = tape.mul_scalar(iy, b);
        let rhs = tape.add(ixa, iyb).unwrap();
        for (l, r) in tape.data(lhs).iter().zip(tape.data(rhs)) {
            assert!((l - r).abs() <= 1e-9);
        }
    }

    fn basic_cam() -> CameraParams {
        CameraParams {
            eye: [0.0, 0.0, 0.0],
            look_at: [0.0, 0.0, 1.0],
            up: [0.0, 1.0, 0.0],
            focal: 1.0,
            image_size: (32, 32),
        }
    }

    #[test]
    fn project_axis_point_lands_on_center_pixel() {
        let pc = PointCloud::new(
            vec![
                [0.0, 0.0, 1.0],
                [9.0, 9.0, -5.0],
                [-9.0, 9.0, -5.0],
                [9.0, -9.0, -5.0],
            ],
            None,
        )
        .unwrap();
        let img = project_points(&pc, &basic_cam()).unwrap();
        assert_eq!(img.pixel_of_point[0], Some((16, 16)));
    }

    #[test]
    fn project_zbuffer_keeps_nearer_point_on_shared_ray() {
        let pc = PointCloud::new(
            vec![
                [0.1, 0.1, 2.0],
                [0.2, 0.2, 4.0], // same ray, farther
                [5.0, 5.0, 1.0],
                [-5.0, 5.0, 1.0],
            ],
            None,
        )
        .unwrap();
        let img = project_points(&pc, &basic_cam()).unwrap();
        assert!(img.pixel_of_point[0].is_some());
        assert!(img.pixel_of_point[1].is_none());
    }

    #[test]
    fn project_all_behind_sets_warning_not_error() {
        let pc = PointCloud::new(
            vec![
                [0.0, 0.0, -1.0],
                [0.1, 0.0, -2.0],
                [0.0, 0.1, -3.0],
                [0.1, 0.1, -4.0],
            ],
            None,
        )
        .unwrap();
        let img = project_points(&pc, &basic_cam()).unwrap();
        assert!(img.all_behind);
        assert!(img.pixels.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn project_sphere_visibility_and_zbuffer_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let coords: Vec<Vec3> = (0..200)
            .map(|_| {
                let v: Vec3 = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                normalize3(v)
            })
            .collect();
        let pc = PointCloud::new(coords.clone(), None).unwrap();
        let cam = CameraParams {
            eye: [3.0, 0.4, 0.7],
            look_at: [0.0, 0.0, 0.0],
            up: [0.0, 0.0, 1.0],
            focal: 1.0,
            image_size: (32, 32),
        };
        let img = project_points(&pc, &cam).unwrap();

        let visible = img.pixel_of_point.iter().filter(|p| p.is_some()).count();
        assert!(
            visible as f64 >= 0.3 * coords.len() as f64,
            "only {visible} visible"
        );

        // brute force: every reported pixel must hold the min-depth point
        let (right, up, fwd) = camera_frame(&cam);
        let mut per_pixel: std::collections::HashMap<(usize, usize), Vec<(f64, usize)>> =
            std::collections::HashMap::new();
        for (i, p) in coords.iter().enumerate() {
            let d = sub3(*p, cam.eye);
            let z = dot3(d, fwd);
            if z <= 1e-9 {
                continue;
            }
            let u = cam.focal * dot3(d, right) / z;
            let v = cam.focal * dot3(d, up) / z;
            if !(-1.0..1.0).contains(&u) || !(-1.0..1.0).contains(&v) {
                continue;
            }
            let col = ((((u + 1.0) / 2.0) * 32.0).floor() as usize).min(31);
            let row = ((((1.0 - v) / 2.0) * 32.0).floor() as usize).min(31);
            per_pixel.entry((row, col)).or_default().push((z, i));
        }
        for (i, px) in img.pixel_of_point.iter().enumerate() {
            if let Some(rc) = px {
                assert!((rc.0) < 32 && rc.1 < 32);
                let bucket = &per_pixel[rc];
                let zmin = bucket.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
                let d = sub3(coords[i], cam.eye);
                let z = dot3(d, fwd);
                assert!(z <= zmin + 1e-12, "point {i} is not the argmin of its pixel");
            }
        }
    }

    fn sphere_cloud_with_heat<F: Fn(Vec3) -> f64>(n: usize, seed: u64, heat: F) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<Vec3> = (0..n)
            .map(|_| {
                let v: Vec3 = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                normalize3(v)
            })
            .collect();
        let h: Vec<f64> = coords.iter().map(|&c| heat(c)).collect();
        PointCloud::new(coords, Some(h)).unwrap()
    }

    #[test]
    fn viewpoint_prefers_annotated_hemisphere() {
        let pc = sphere_cloud_with_heat(300, 37, |c| if c[0] > 0.0 { 1.0 } else { 0.0 });
        let cands = icosphere_candidates(pc.centroid(), 2.5, 1.0, (32, 32));
        let chosen = select_viewpoint(&pc, &cands).unwrap();
        // heatmap-weighted mean direction is +x
        let dir = sub3(chosen.eye, pc.centroid());
        assert!(dir[0] > 0.0, "chosen eye {:?}", chosen.eye);
    }

    #[test]
    fn viewpoint_uniform_heat_ties_to_first_candidate() {
        // small rotated icosahedron: every point visible from every
        // candidate, so all scores tie exactly and ordering decides
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        let rot = 0.21f64;
        let (s, c) = rot.sin_cos();
        let coords: Vec<Vec3> = vec![
            [-1.0, phi, 0.0],
            [1.0, phi, 0.0],
            [-1.0, -phi, 0.0],
            [1.0, -phi, 0.0],
            [0.0, -1.0, phi],
            [0.0, 1.0, phi],
            [0.0, -1.0, -phi],
            [0.0, 1.0, -phi],
            [phi, 0.0, -1.0],
            [phi, 0.0, 1.0],
            [-phi, 0.0, -1.0],
            [-phi, 0.0, 1.0],
        ]
        .into_iter()
        .map(|v| normalize3(v))
        .map(|v| scale3(v, 0.6))
        .map(|v| [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]])
        .collect();
        let n = coords.len();
        let pc = PointCloud::new(coords, Some(vec![1.0; n])).unwrap();
        let cands = icosphere_candidates(pc.centroid(), 2.5, 1.0, (32, 32));
        let chosen = select_viewpoint(&pc, &cands).unwrap();
        assert_eq!(chosen.eye, cands[0].eye);
    }

    #[test]
    fn viewpoint_single_annotated_point_is_visible() {
        let mut heat = vec![0.0; 300];
        heat[123] = 1.0;
        let mut pc = sphere_cloud_with_heat(300, 41, |_| 0.0);
        pc.heatmap = Some(heat);
        let cands = icosphere_candidates(pc.centroid(), 2.5, 1.0, (32, 32));
        let chosen = select_viewpoint(&pc, &cands).unwrap();
        let img = project_points(&pc, &chosen).unwrap();
        assert!(img.pixel_of_point[123].is_some());
    }

    #[test]
    fn viewpoint_rejects_empty_candidates() {
        let pc = sphere_cloud_with_heat(10, 43, |_| 1.0);
        assert!(matches!(
            select_viewpoint(&pc, &[]),
            Err(VagError::UnsupportedConfig { .. })
        ));
    }

    #[test]
    fn icosphere_has_42_distinct_directions() {
        let cands = icosphere_candidates([0.0; 3], 2.5, 1.0, (32, 32));
        assert_eq!(cands.len(), 42);
        for cam in &cands {
            assert!((norm3(cam.eye) - 2.5).abs() <= 1e-9);
            cam.validate().unwrap();
        }
        for i in 0..cands.len() {
            for j in (i + 1)..cands.len() {
                assert!(norm3(sub3(cands[i].eye, cands[j].eye)) > 1e-6);
            }
        }
    }
}
