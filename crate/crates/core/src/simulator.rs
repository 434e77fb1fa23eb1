//! Deterministic synthetic scenes with exact ground truth.
//!
//! A scene is a background plane plus fronto-parallel rectangular movers,
//! each carrying its own procedural texture parameterized by frame-`t` pixel
//! coordinates. Frame `t + 1` and the right stereo view are rendered by
//! casting a ray per pixel, finding the nearest surface and mapping the hit
//! back to frame `t`, so every image is exact rather than resampled.

use nalgebra::{Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rigid_flow, CameraPose, Intrinsics, MIN_DEPTH};
use crate::grid::{DepthMap, FlowField, Grid, Image, PixelMask};

/// Background plane `a·x̂ + b·ŷ + 1/depth = 1/Z`, with `(x̂, ŷ)` normalized
/// image coordinates. Zero slopes give a fronto-parallel wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundPlane {
    /// Depth on the optical axis.
    pub depth: f64,
    #[serde(default)]
    pub inv_depth_slope_x: f64,
    #[serde(default)]
    pub inv_depth_slope_y: f64,
}

/// A fronto-parallel rectangle at constant depth moving by its own
/// translation on top of the ego-motion: `X' = R·(X + m) + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mover {
    /// `[u_min, v_min, u_max, v_max]` in frame-`t` pixels (inclusive).
    pub rect: [f64; 4],
    pub depth: f64,
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureConfig {
    pub octaves: u32,
    /// Lattice spacing of the coarsest octave, in pixels.
    pub base_scale: f64,
    /// Peak deviation from mid-gray.
    pub contrast: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            octaves: 3,
            base_scale: 24.0,
            contrast: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub baseline: f64,
    /// Camera twist `[ρ; ω]` mapping frame `t` to `t + 1`.
    pub ego_motion: [f64; 6],
    pub background: BackgroundPlane,
    #[serde(default)]
    pub movers: Vec<Mover>,
    #[serde(default)]
    pub texture: TextureConfig,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width < 16 || self.height < 16 {
            return bad(format!("scene must be at least 16x16, got {}x{}", self.width, self.height));
        }
        if !(self.baseline > 0.0 && self.baseline.is_finite()) {
            return bad(format!("baseline must be > 0, got {}", self.baseline));
        }
        if self.ego_motion.iter().any(|x| !x.is_finite()) {
            return bad("ego_motion must be finite".into());
        }
        if !(self.background.depth > 0.0 && self.background.depth.is_finite()) {
            return bad(format!("background depth must be > 0, got {}", self.background.depth));
        }
        let (w, h) = ((self.width - 1) as f64, (self.height - 1) as f64);
        // inverse depth is affine in the pixel, so the corners bound it
        for u in [0, self.width - 1] {
            for v in [0, self.height - 1] {
                if self.background_inverse_depth(u as f64, v as f64) <= 0.0 {
                    return bad("background plane passes behind the camera inside the frame".into());
                }
            }
        }
        for (i, m) in self.movers.iter().enumerate() {
            let [u0, v0, u1, v1] = m.rect;
            if !(m.depth > 0.0 && m.depth.is_finite()) {
                return bad(format!("mover {i} depth must be > 0, got {}", m.depth));
            }
            if m.translation.iter().any(|x| !x.is_finite()) {
                return bad(format!("mover {i} translation must be finite"));
            }
            if !(u0 >= 0.0 && v0 >= 0.0 && u1 <= w && v1 <= h && u0 <= u1 && v0 <= v1) {
                return bad(format!("mover {i} rectangle {:?} outside the frame", m.rect));
            }
        }
        if self.texture.octaves == 0 || !(self.texture.base_scale > 0.0) {
            return bad("texture needs >= 1 octave and a positive scale".into());
        }
        if !(0.0..=1.0).contains(&self.texture.contrast) {
            return bad("texture contrast must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn ego_pose(&self) -> CameraPose {
        CameraPose::exp(&Vector6::from_row_slice(&self.ego_motion))
    }

    fn background_inverse_depth(&self, u: f64, v: f64) -> f64 {
        let k = &self.intrinsics;
        let bg = &self.background;
        bg.inv_depth_slope_x * (u - k.cx) / k.fx + bg.inv_depth_slope_y * (v - k.cy) / k.fy + 1.0 / bg.depth
    }
}

/// Ground-truth bundle for one frame pair plus the right stereo view of frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub intrinsics: Intrinsics,
    pub baseline: f64,
    pub image_t: Image,
    pub image_t1: Image,
    pub image_right: Image,
    pub depth: DepthMap,
    pub depth_right: DepthMap,
    pub pose: CameraPose,
    /// Full motion, ego plus object.
    pub optical_flow: FlowField,
    /// Flow from frame `t + 1` back to frame `t`.
    pub backward_flow: FlowField,
    /// Flow the scene would have if nothing moved independently.
    pub rigid_flow: FlowField,
    /// 1 on pixels of independently moving objects.
    pub moving_mask: PixelMask,
    /// 1 where the pixel leaves the frame or is hidden in frame `t + 1`.
    pub occluded: PixelMask,
}

impl SceneSample {
    pub fn width(&self) -> usize {
        self.image_t.width()
    }

    pub fn height(&self) -> usize {
        self.image_t.height()
    }

    /// Fraction of pixels that belong to the static scene.
    pub fn static_fraction(&self) -> f64 {
        1.0 - self.moving_mask.mean()
    }

    /// Ground-truth rigid map: 1 on static pixels, 0 on movers.
    pub fn rigid_map(&self) -> PixelMask {
        self.moving_mask.map(|m| 1.0 - m)
    }
}

/// Surface index: 0 is the background, `i + 1` is mover `i`.
type SurfaceId = usize;

struct Hit {
    surface: SurfaceId,
    /// Depth along the viewing camera's optical axis.
    depth: f64,
    /// The hit point projected into frame `t`.
    source: Vector2<f64>,
}

struct Scene<'a> {
    cfg: &'a SceneConfig,
    plane_normal: Vector3<f64>,
}

impl<'a> Scene<'a> {
    fn new(cfg: &'a SceneConfig) -> Self {
        let bg = &cfg.background;
        // n·X = 1 with X = Z·(x̂, ŷ, 1)
        let plane_normal = Vector3::new(bg.inv_depth_slope_x, bg.inv_depth_slope_y, 1.0 / bg.depth);
        Self { cfg, plane_normal }
    }

    fn project_t(&self, x: &Vector3<f64>) -> Vector2<f64> {
        let k = &self.cfg.intrinsics;
        Vector2::new(k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy)
    }

    fn in_rect(rect: &[f64; 4], p: &Vector2<f64>) -> bool {
        p.x >= rect[0] && p.x <= rect[2] && p.y >= rect[1] && p.y <= rect[3]
    }

    /// Nearest surface hit by the ray `origin + s·dir` expressed in frame-`t`
    /// coordinates; `dir` has unit z component in the viewing camera so `s`
    /// is the viewing depth. Movers are displaced by `mover_shift(m)`.
    fn cast(&self, origin: Vector3<f64>, dir: Vector3<f64>, mover_shift: impl Fn(&Mover) -> Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |surface: SurfaceId, s: f64, point: Vector3<f64>| {
            if s > MIN_DEPTH && point.z > MIN_DEPTH && best.as_ref().is_none_or(|b| s < b.depth) {
                best = Some(Hit {
                    surface,
                    depth: s,
                    source: self.project_t(&point),
                });
            }
        };
        let denom = self.plane_normal.dot(&dir);
        if denom.abs() > 1e-15 {
            let s = (1.0 - self.plane_normal.dot(&origin)) / denom;
            consider(0, s, origin + dir * s);
        }
        for (i, m) in self.cfg.movers.iter().enumerate() {
            let o = origin - mover_shift(m);
            if dir.z.abs() <= 1e-15 {
                continue;
            }
            let s = (m.depth - o.z) / dir.z;
            let point = o + dir * s;
            if point.z > MIN_DEPTH && Self::in_rect(&m.rect, &self.project_t(&point)) {
                consider(i + 1, s, point);
            }
        }
        best
    }

    fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let k = &self.cfg.intrinsics;
        Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
    }

    fn view_t(&self, u: f64, v: f64) -> Option<Hit> {
        self.cast(Vector3::zeros(), self.ray(u, v), |_| Vector3::zeros())
    }

    fn view_t1(&self, pose: &CameraPose, u: f64, v: f64) -> Option<Hit> {
        // X' = R·(X + m) + t  ⇒  X = Rᵀ(s·r − t) − m
        let rt = pose.rotation().transpose();
        let origin = -(rt * pose.translation());
        let dir = rt * self.ray(u, v);
        self.cast(origin, dir, |m| Vector3::from_row_slice(&m.translation))
    }

    fn view_right(&self, u: f64, v: f64) -> Option<Hit> {
        let origin = Vector3::new(self.cfg.baseline, 0.0, 0.0);
        self.cast(origin, self.ray(u, v), |_| Vector3::zeros())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seeded value-noise lattice with C² quintic interpolation.
#[derive(Debug, Clone, Copy)]
struct ValueNoise {
    seed: u64,
    spacing: f64,
}

impl ValueNoise {
    fn lattice(&self, i: i64, j: i64) -> f64 {
        let h = splitmix(self.seed ^ splitmix((i as u64).wrapping_mul(0x1000_0000_01B3) ^ splitmix(j as u64)));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Value in `[0, 1)`.
    fn eval(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.spacing, y / self.spacing);
        let (i, j) = (gx.floor(), gy.floor());
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (sx, sy) = (fade(gx - i), fade(gy - j));
        let (i, j) = (i as i64, j as i64);
        let top = self.lattice(i, j) * (1.0 - sx) + self.lattice(i + 1, j) * sx;
        let bottom = self.lattice(i, j + 1) * (1.0 - sx) + self.lattice(i + 1, j + 1) * sx;
        top * (1.0 - sy) + bottom * sy
    }

    /// Value in `[-1, 1)`.
    fn signed(&self, x: f64, y: f64) -> f64 {
        2.0 * self.eval(x, y) - 1.0
    }
}

struct Texture {
    layers: Vec<(ValueNoise, f64)>,
    contrast: f64,
}

impl Texture {
    fn new(cfg: &TextureConfig, seed: u64, surface: SurfaceId, channel: usize) -> Self {
        let mut layers = Vec::new();
        let mut total = 0.0;
        for o in 0..cfg.octaves {
            let weight = 0.5f64.powi(o as i32);
            let key = splitmix(seed ^ splitmix((surface as u64) << 32 | (channel as u64) << 8 | o as u64));
            layers.push((
                ValueNoise {
                    seed: key,
                    spacing: cfg.base_scale / 2f64.powi(o as i32),
                },
                weight,
            ));
            total += weight;
        }
        layers.iter_mut().for_each(|(_, w)| *w /= total);
        Self {
            layers,
            contrast: cfg.contrast,
        }
    }

    fn eval(&self, p: &Vector2<f64>) -> f64 {
        let n: f64 = self.layers.iter().map(|(l, w)| w * l.signed(p.x, p.y)).sum();
        (0.5 + 0.5 * self.contrast * n).clamp(0.0, 1.0)
    }
}

/// Renders the scene described by `cfg`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let k = cfg.intrinsics;
    let scene = Scene::new(cfg);
    let pose = cfg.ego_pose();
    let surfaces = cfg.movers.len() + 1;
    let textures: Vec<[Texture; 3]> = (0..surfaces)
        .map(|s| std::array::from_fn(|c| Texture::new(&cfg.texture, cfg.rng_seed, s, c)))
        .collect();
    let shade = |hit: &Option<Hit>, px: &mut [f64]| match hit {
        Some(hit) => {
            for (c, p) in px.iter_mut().enumerate() {
                *p = textures[hit.surface][c].eval(&hit.source);
            }
        }
        None => px.iter_mut().for_each(|p| *p = 0.5),
    };

    let hits_t: Grid<Option<Hit>> = Grid::from_fn(w, h, |u, v| scene.view_t(u as f64, v as f64));
    let hits_t1: Grid<Option<Hit>> = Grid::from_fn(w, h, |u, v| scene.view_t1(&pose, u as f64, v as f64));
    let hits_r: Grid<Option<Hit>> = Grid::from_fn(w, h, |u, v| scene.view_right(u as f64, v as f64));

    let image_t = Image::from_fn(w, h, 3, |u, v, px| shade(hits_t.get(u, v), px))?;
    let image_t1 = Image::from_fn(w, h, 3, |u, v, px| shade(hits_t1.get(u, v), px))?;
    let image_right = Image::from_fn(w, h, 3, |u, v, px| shade(hits_r.get(u, v), px))?;

    let depth_of = |hits: &Grid<Option<Hit>>| {
        DepthMap::new(hits.map(|hit| hit.as_ref().map_or(f64::NAN, |hit| hit.depth)))
    };
    let depth = depth_of(&hits_t);
    let depth_right = depth_of(&hits_r);
    if depth.valid().iter().any(|ok| !ok) {
        return Err(Error::InvalidConfig("scene leaves pixels without a surface in frame t".into()));
    }

    let (rigid, _) = rigid_flow(&depth, &k, &pose);
    let moving_mask = hits_t.map(|hit| match hit {
        Some(hit) if hit.surface > 0 => 1.0,
        _ => 0.0,
    });

    let kinv = k.inverse_matrix();
    let kmat = k.matrix();
    let optical_flow = Grid::from_fn(w, h, |u, v| {
        let hit = hits_t.get(u, v).as_ref().expect("depth checked valid");
        if hit.surface == 0 {
            return *rigid.get(u, v);
        }
        let m = Vector3::from_row_slice(&cfg.movers[hit.surface - 1].translation);
        let x = kinv * Vector3::new(u as f64, v as f64, 1.0) * hit.depth;
        let q = kmat * pose.transform(&(x + m));
        if q.z > MIN_DEPTH {
            Vector2::new(q.x / q.z - u as f64, q.y / q.z - v as f64)
        } else {
            Vector2::zeros()
        }
    });
    let backward_flow = Grid::from_fn(w, h, |u, v| match hits_t1.get(u, v) {
        Some(hit) => hit.source - Vector2::new(u as f64, v as f64),
        None => Vector2::zeros(),
    });

    let occluded = Grid::from_fn(w, h, |u, v| {
        let hit = hits_t.get(u, v).as_ref().expect("depth checked valid");
        let f = optical_flow.get(u, v);
        let (x, y) = (u as f64 + f.x, v as f64 + f.y);
        if !optical_flow.contains(x, y) {
            return 1.0;
        }
        match scene.view_t1(&pose, x, y) {
            Some(seen) if seen.surface == hit.surface => 0.0,
            _ => 1.0,
        }
    });

    Ok(SceneSample {
        intrinsics: k,
        baseline: cfg.baseline,
        image_t,
        image_t1,
        image_right,
        depth,
        depth_right,
        pose,
        optical_flow,
        backward_flow,
        rigid_flow: rigid,
        moving_mask,
        occluded,
    })
}

/// Ranges for [`random_scene_config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSceneSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub baseline: f64,
    pub movers: usize,
    /// Mover side lengths are drawn from this range, in pixels.
    pub mover_size: (f64, f64),
    /// Independent mover motion, in scene units per axis.
    pub mover_speed: (f64, f64),
    pub background_depth: (f64, f64),
    pub mover_depth: (f64, f64),
    pub max_translation: f64,
    pub max_rotation: f64,
    /// Largest background inverse-depth slope per unit of normalized image
    /// coordinate, relative to the on-axis inverse depth. Zero keeps the
    /// background fronto-parallel.
    pub background_tilt: f64,
    pub texture: TextureConfig,
}

impl Default for RandomSceneSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            focal: 100.0,
            baseline: 0.5,
            movers: 1,
            mover_size: (24.0, 40.0),
            mover_speed: (0.25, 0.5),
            background_depth: (15.0, 30.0),
            mover_depth: (5.0, 10.0),
            max_translation: 0.8,
            max_rotation: 0.02,
            background_tilt: 0.3,
            texture: TextureConfig {
                octaves: 2,
                base_scale: 8.0,
                contrast: 0.9,
            },
        }
    }
}

/// Draws a random scene configuration from `spec`, deterministic in `seed`.
pub fn random_scene_config(seed: u64, spec: &RandomSceneSpec) -> Result<SceneConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Intrinsics::centered(spec.focal, spec.width, spec.height)?;
    let mut sym = |r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let ego = [
        sym(spec.max_translation),
        sym(spec.max_translation),
        sym(spec.max_translation),
        sym(spec.max_rotation),
        sym(spec.max_rotation),
        sym(spec.max_rotation),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
    let mut range = |r: (f64, f64)| if r.1 > r.0 { rng.random_range(r.0..=r.1) } else { r.0 };
    let bg_depth = range(spec.background_depth);
    let s = spec.background_tilt / bg_depth;
    let (sx, sy) = (range((-s, s)), range((-s, s)));
    let (w, h) = ((spec.width - 1) as f64, (spec.height - 1) as f64);
    let mut movers = Vec::with_capacity(spec.movers);
    for _ in 0..spec.movers {
        let mw = range(spec.mover_size).min(w).round();
        let mh = range(spec.mover_size).min(h).round();
        let u0 = range((0.0, w - mw)).round();
        let v0 = range((0.0, h - mh)).round();
        let speed = range(spec.mover_speed);
        let angle = range((0.0, std::f64::consts::TAU));
        movers.push(Mover {
            rect: [u0, v0, u0 + mw, v0 + mh],
            depth: range(spec.mover_depth),
            translation: [speed * angle.cos(), speed * angle.sin(), range((-0.2, 0.2)) * speed],
        });
    }
    Ok(SceneConfig {
        width: spec.width,
        height: spec.height,
        intrinsics: k,
        baseline: spec.baseline,
        ego_motion: ego,
        background: BackgroundPlane {
            depth: bg_depth,
            inv_depth_slope_x: sx,
            inv_depth_slope_y: sy,
        },
        movers,
        texture: spec.texture,
        rng_seed: seed,
    })
}

fn smooth_noise_field(width: usize, height: usize, correlation_length: f64, seed: u64, channels: usize) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|c| {
            let octaves = [(1.0, 1.0), (0.5, 0.5)];
            let layers: Vec<_> = octaves
                .iter()
                .enumerate()
                .map(|(o, (scale, weight))| {
                    (
                        ValueNoise {
                            seed: splitmix(seed ^ splitmix(((c as u64) << 8) | o as u64)),
                            spacing: correlation_length * scale,
                        },
                        *weight,
                    )
                })
                .collect();
            let mut out = Vec::with_capacity(width * height);
            for v in 0..height {
                for u in 0..width {
                    out.push(layers.iter().map(|(l, w)| w * l.signed(u as f64, v as f64)).sum());
                }
            }
            out
        })
        .collect()
}

/// Adds seeded band-limited noise to a flow field, scaled so that the RMS of
/// the perturbation vector over the field equals `amplitude`.
pub fn perturb_flow(flow: &FlowField, amplitude: f64, correlation_length: f64, seed: u64) -> Result<FlowField> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidArgument(format!("perturbation amplitude must be >= 0, got {amplitude}")));
    }
    if !(correlation_length > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "correlation length must be > 0, got {correlation_length}"
        )));
    }
    if amplitude == 0.0 || flow.is_empty() {
        return Ok(flow.clone());
    }
    let noise = smooth_noise_field(flow.width(), flow.height(), correlation_length, seed, 2);
    let power: f64 = noise[0].iter().zip(&noise[1]).map(|(a, b)| a * a + b * b).sum::<f64>() / flow.len() as f64;
    if power <= 0.0 {
        return Ok(flow.clone());
    }
    let scale = amplitude / power.sqrt();
    let mut out = flow.clone();
    for (i, f) in out.data_mut().iter_mut().enumerate() {
        *f += Vector2::new(noise[0][i], noise[1][i]) * scale;
    }
    Ok(out)
}

/// Correlation length of the multiplicative depth noise, in pixels.
pub const DEPTH_NOISE_CORRELATION: f64 = 8.0;

/// Multiplies valid depths by `exp(rel_sigma · n)`, where `n` is seeded
/// smooth noise normalized to unit RMS.
pub fn perturb_depth(depth: &DepthMap, rel_sigma: f64, seed: u64) -> Result<DepthMap> {
    if !(rel_sigma >= 0.0 && rel_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("relative depth sigma must be >= 0, got {rel_sigma}")));
    }
    if rel_sigma == 0.0 || depth.values().is_empty() {
        return Ok(depth.clone());
    }
    let (w, h) = depth.dims();
    let noise = smooth_noise_field(w, h, DEPTH_NOISE_CORRELATION, seed, 1).remove(0);
    let rms = (noise.iter().map(|x| x * x).sum::<f64>() / noise.len() as f64).sqrt();
    if rms <= 0.0 {
        return Ok(depth.clone());
    }
    let mut values = depth.values().clone();
    for (d, n) in values.data_mut().iter_mut().zip(&noise) {
        *d *= (rel_sigma * n / rms).exp();
    }
    DepthMap::with_mask(values, depth.valid().clone())
}
