//! Procedural scenes: flat-shaded shapes over a gradient background, with
//! exact per-pixel depth. The shape-family OOD variant swaps in triangles and
//! elongated ellipses with striped surfaces.
//!
//! Depth cues available to a network: nearer shapes are larger and
//! brighter. Each shape's depth is drawn uniformly from
//! `(0.1, 0.9) * d_max`; the background sits at `d_max`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DepthMap, Image};
use crate::nn::Tensor;
use crate::rng::stream;

const PALETTE_SIZE: usize = 8;
const STRIPE_PERIOD: f32 = 4.0;
const STRIPE_DIM: f32 = 0.35;
/// Hue spacing of the in-distribution palette (degrees); hues 0..140.
const HUE_STEP: f32 = 20.0;
const NEAR: f32 = 0.1;
const FAR: f32 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Palette {
    /// Eight saturated warm-to-green hues.
    Id,
    /// Hue-rotated by 180°, with the background inverted.
    Complementary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundStyle {
    Gradient,
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub palette: Palette,
    pub d_max: f32,
    pub background: BackgroundStyle,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            k_min: 2,
            k_max: 5,
            palette: Palette::Id,
            d_max: 10.0,
            background: BackgroundStyle::Gradient,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::input("scene resolution must be positive"));
        }
        if self.k_min < 1 || self.k_max < self.k_min {
            return Err(Error::input(format!(
                "shape count range [{}, {}] is invalid",
                self.k_min, self.k_max
            )));
        }
        if !(self.d_max.is_finite() && self.d_max > 0.0) {
            return Err(Error::input("d_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodVariant {
    PaletteShift,
    TextureNoise,
    ShapeFamily,
}

impl OodVariant {
    pub const ALL: [OodVariant; 3] = [
        OodVariant::PaletteShift,
        OodVariant::TextureNoise,
        OodVariant::ShapeFamily,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OodVariant::PaletteShift => "palette-shift",
            OodVariant::TextureNoise => "texture-noise",
            OodVariant::ShapeFamily => "shape-family",
        }
    }
}

impl std::str::FromStr for OodVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "palette-shift" => Ok(OodVariant::PaletteShift),
            "texture-noise" => Ok(OodVariant::TextureNoise),
            "shape-family" => Ok(OodVariant::ShapeFamily),
            other => Err(Error::usage(format!("unknown OOD variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for OodVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Geometry {
    Rect { cy: f32, cx: f32, half_h: f32, half_w: f32 },
    Circle { cy: f32, cx: f32, r: f32 },
    Triangle { pts: [(f32, f32); 3] },
    Ellipse { cy: f32, cx: f32, a: f32, b: f32, theta: f32 },
}

impl Geometry {
    /// Coverage test at the centre of pixel `(y, x)`.
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
        match *self {
            Geometry::Rect { cy, cx, half_h, half_w } => (py - cy).abs() <= half_h && (px - cx).abs() <= half_w,
            Geometry::Circle { cy, cx, r } => (py - cy).powi(2) + (px - cx).powi(2) <= r * r,
            Geometry::Triangle { pts } => {
                let edge = |(ay, ax): (f32, f32), (by, bx): (f32, f32)| (bx - ax) * (py - ay) - (by - ay) * (px - ax);
                let d0 = edge(pts[0], pts[1]);
                let d1 = edge(pts[1], pts[2]);
                let d2 = edge(pts[2], pts[0]);
                let neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
                let pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
                !(neg && pos)
            }
            Geometry::Ellipse { cy, cx, a, b, theta } => {
                let (s, c) = theta.sin_cos();
                let (dy, dx) = (py - cy, px - cx);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
        }
    }
}

/// Surface appearance of a shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pattern {
    Solid,
    /// Alternating full and dimmed bands of width `period / 2` across direction `theta`.
    Stripes { theta: f32, period: f32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub geometry: Geometry,
    pub depth: f32,
    pub color: [f32; 3],
    pub pattern: Pattern,
}

impl Shape {
    pub fn color_at(&self, y: usize, x: usize) -> [f32; 3] {
        let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
        let k = match self.pattern {
            Pattern::Solid => 1.0,
            Pattern::Stripes { theta, period } => {
                let (s, c) = theta.sin_cos();
                if (px * c + py * s).rem_euclid(period) < period / 2.0 {
                    1.0
                } else {
                    STRIPE_DIM
                }
            }
        };
        self.color.map(|v| v * k)
    }
}

/// A rendered scene together with the shapes that produced it (nearest last).
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub depth: DepthMap,
    pub shapes: Vec<Shape>,
}

fn hsv_to_rgb(hue: f32) -> [f32; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

pub fn palette_colors(palette: Palette) -> [[f32; 3]; PALETTE_SIZE] {
    let offset = match palette {
        Palette::Id => 0.0,
        Palette::Complementary => 180.0,
    };
    std::array::from_fn(|i| hsv_to_rgb(i as f32 * HUE_STEP + offset))
}

fn background(rng: &mut ChaCha8Rng, p: &SceneParams) -> ([f32; 3], [f32; 3]) {
    let mut top = [0.88, 0.82, 0.66];
    let mut bottom = [0.50, 0.42, 0.32];
    for c in 0..3 {
        top[c] += rng.gen_range(-0.05..0.05);
        bottom[c] += rng.gen_range(-0.05..0.05);
    }
    if p.background == BackgroundStyle::Flat {
        bottom = top;
    }
    if p.palette == Palette::Complementary {
        top = top.map(|v| 1.0 - v);
        bottom = bottom.map(|v| 1.0 - v);
    }
    (top, bottom)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Family {
    /// Axis-aligned rectangles and circles.
    Primitive,
    /// Rotated triangles and ellipses with striped surfaces.
    Unseen,
}

fn sample_shapes(rng: &mut ChaCha8Rng, p: &SceneParams, family: Family) -> Vec<Shape> {
    let colors = palette_colors(p.palette);
    let k = rng.gen_range(p.k_min..=p.k_max);
    let (h, w) = (p.height as f32, p.width as f32);
    let mut shapes: Vec<Shape> = (0..k)
        .map(|_| {
            let rel = rng.gen_range(NEAR..FAR);
            let t = (rel - NEAR) / (FAR - NEAR);
            let size = w.min(h) * (0.10 + 0.16 * (1.0 - t)) * rng.gen_range(0.8..1.2);
            let base = colors[rng.gen_range(0..PALETTE_SIZE)];
            let shade = 1.0 - 0.6 * t;
            let cy = rng.gen_range(0.0..h);
            let cx = rng.gen_range(0.0..w);
            let aspect = rng.gen_range(0.6..1.4);
            let pick = rng.gen_bool(0.5);
            let theta = rng.gen_range(0.0..std::f32::consts::PI);
            let geometry = match (family, pick) {
                (Family::Primitive, true) => Geometry::Rect {
                    cy,
                    cx,
                    half_h: size * aspect,
                    half_w: size / aspect,
                },
                (Family::Primitive, false) => Geometry::Circle { cy, cx, r: size },
                (Family::Unseen, true) => {
                    let r = size * 1.4;
                    let pts = std::array::from_fn(|i| {
                        let a = theta + i as f32 * 2.0 * std::f32::consts::PI / 3.0;
                        (cy + r * a.sin() * aspect, cx + r * a.cos() / aspect)
                    });
                    Geometry::Triangle { pts }
                }
                (Family::Unseen, false) => Geometry::Ellipse {
                    cy,
                    cx,
                    a: size * 1.6 * aspect,
                    b: size * 0.5 / aspect,
                    theta,
                },
            };
            let pattern = match family {
                Family::Primitive => Pattern::Solid,
                Family::Unseen => Pattern::Stripes {
                    theta,
                    period: STRIPE_PERIOD,
                },
            };
            Shape {
                geometry,
                depth: rel * p.d_max,
                color: base.map(|c| c * shade),
                pattern,
            }
        })
        .collect();
    // Painter's order: far first, so nearer shapes overwrite.
    shapes.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    shapes
}

fn render(p: &SceneParams, top: [f32; 3], bottom: [f32; 3], shapes: Vec<Shape>) -> Scene {
    let (h, w) = (p.height, p.width);
    let mut depth = vec![p.d_max; h * w];
    let image = Image::from_fn(h, w, |y, x| {
        let mut rgb = {
            let t = if h > 1 { y as f32 / (h - 1) as f32 } else { 0.0 };
            std::array::from_fn(|c| top[c] * (1.0 - t) + bottom[c] * t)
        };
        for s in &shapes {
            if s.geometry.contains(y, x) {
                rgb = s.color_at(y, x);
                depth[y * w + x] = s.depth;
            }
        }
        rgb
    });
    Scene {
        image,
        depth: DepthMap::from_values(h, w, depth).expect("positive depths"),
        shapes,
    }
}

fn render_family(seed: u64, p: &SceneParams, family: Family) -> Scene {
    let mut rng = stream(seed, "scene");
    let (top, bottom) = background(&mut rng, p);
    let shapes = sample_shapes(&mut rng, p, family);
    render(p, top, bottom, shapes)
}

/// In-distribution scene (or its palette-shifted twin when
/// `p.palette == Complementary`: same seed, same geometry and depth).
pub fn render_scene(seed: u64, p: &SceneParams) -> Result<Scene> {
    p.validate()?;
    Ok(render_family(seed, p, Family::Primitive))
}

pub fn generate_id_scene(seed: u64, p: &SceneParams) -> Result<(Image, DepthMap)> {
    let scene = render_scene(seed, p)?;
    Ok((scene.image, scene.depth))
}

/// OOD scene; depth is returned where the variant defines it
/// (palette-shift and shape-family), `None` for texture-noise.
pub fn generate_ood_scene_with_depth(
    seed: u64,
    variant: OodVariant,
    p: &SceneParams,
) -> Result<(Image, Option<DepthMap>)> {
    p.validate()?;
    match variant {
        OodVariant::PaletteShift => {
            let shifted = SceneParams {
                palette: Palette::Complementary,
                ..p.clone()
            };
            let s = render_family(seed, &shifted, Family::Primitive);
            Ok((s.image, Some(s.depth)))
        }
        OodVariant::ShapeFamily => {
            let s = render_family(seed, p, Family::Unseen);
            Ok((s.image, Some(s.depth)))
        }
        OodVariant::TextureNoise => Ok((texture_noise(seed, p.height, p.width), None)),
    }
}

pub fn generate_ood_scene(seed: u64, variant: OodVariant, p: &SceneParams) -> Result<Image> {
    generate_ood_scene_with_depth(seed, variant, p).map(|(image, _)| image)
}

/// Two octaves of bilinearly interpolated value noise per channel.
fn texture_noise(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = stream(seed, "texture");
    let mut out = Tensor::zeros(3, h, w);
    for c in 0..3 {
        let mut field = vec![0.0f32; h * w];
        for (cells, amp) in [(4usize, 0.6f32), (16, 0.4)] {
            let grid: Vec<f32> = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen()).collect();
            for y in 0..h {
                let gy = y as f32 / h as f32 * cells as f32;
                let (y0, fy) = (gy.floor() as usize, gy.fract());
                for x in 0..w {
                    let gx = x as f32 / w as f32 * cells as f32;
                    let (x0, fx) = (gx.floor() as usize, gx.fract());
                    let at = |yy: usize, xx: usize| grid[yy * (cells + 1) + xx];
                    let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + at(y0, x0 + 1) * (1.0 - fy) * fx
                        + at(y0 + 1, x0) * fy * (1.0 - fx)
                        + at(y0 + 1, x0 + 1) * fy * fx;
                    field[y * w + x] += amp * v;
                }
            }
        }
        out.data[c * h * w..(c + 1) * h * w].copy_from_slice(&field);
    }
    Image::new(out.map(|v| v.clamp(0.0, 1.0))).expect("noise lies in [0, 1]")
}
