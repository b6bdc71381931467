//! Shape presets and the `.shape` file format.
//!
//! A shape file is TOML:
//!
//! ```toml
//! name = "allen_key_l"
//! density = 39.0          # kg/m², areal
//! vertices = [[x, y], ...] # meters, counter-clockwise
//! ```

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, PartShape, Vec2};
use crate::rng;

/// 5 mm of steel at 7800 kg/m³.
pub const ALLEN_KEY_DENSITY: f64 = 7800.0 * 0.005;
pub const ALLEN_KEY_LENGTH: f64 = 0.0775;
pub const ALLEN_KEY_HEIGHT: f64 = 0.0275;
pub const ALLEN_KEY_ARM_WIDTH: f64 = 0.010;
/// Seed for the procedural triangle family.
pub const TRIANGLE_SEED: u64 = 2019;
pub const TRIANGLE_COUNT: usize = 15;

#[derive(Debug, Error)]
pub enum ShapeFileError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing shape file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid shape: {0}")]
    Geometry(#[from] GeometryError),
    #[error("unknown shape preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeFile {
    name: String,
    density: f64,
    vertices: Vec<[f64; 2]>,
}

pub fn parse_shape(text: &str) -> Result<PartShape, ShapeFileError> {
    let file: ShapeFile = toml::from_str(text)?;
    let vertices = file.vertices.iter().map(|[x, y]| Vec2::new(*x, *y)).collect();
    Ok(PartShape::new(file.name, vertices, file.density)?)
}

pub fn load_shape(path: &Path) -> Result<PartShape, ShapeFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ShapeFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_shape(&text)
}

pub fn shape_to_toml(shape: &PartShape) -> String {
    let file = ShapeFile {
        name: shape.name().to_string(),
        density: shape.density(),
        vertices: shape.vertices().iter().map(|v| [v.x, v.y]).collect(),
    };
    toml::to_string(&file).expect("shape serializes")
}

/// The L-shaped allen key: a 77.5 x 10 mm long arm fused with a
/// 10 x 27.5 mm short arm, 5 mm steel.
pub fn allen_key_l() -> PartShape {
    let (l, h, w) = (ALLEN_KEY_LENGTH, ALLEN_KEY_HEIGHT, ALLEN_KEY_ARM_WIDTH);
    let vertices = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(l, 0.0),
        Vec2::new(l, w),
        Vec2::new(w, w),
        Vec2::new(w, h),
        Vec2::new(0.0, h),
    ];
    PartShape::new("allen_key_l", vertices, ALLEN_KEY_DENSITY).expect("preset is valid")
}

fn interior_angles(p: &[Vec2; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let a = p[(i + 1) % 3] - p[i];
        let b = p[(i + 2) % 3] - p[i];
        out[i] = a.cross(b).abs().atan2(a.dot(b));
    }
    out
}

/// Triangle `index` (1-based) of the procedural family.
///
/// Vertices are drawn uniformly in an 80 mm square and accepted when every
/// interior angle is at least 20°, the longest side is at most 80 mm and the
/// area lies between 400 and 1600 mm² (the allen key is 950 mm²). Density
/// matches the allen key.
pub fn triangle(index: usize) -> PartShape {
    assert!((1..=TRIANGLE_COUNT).contains(&index), "triangle index {index} out of range");
    let mut rng = rng::stream_rng(TRIANGLE_SEED, rng::stream::TRIANGLES, index as u64);
    loop {
        let mut p = [Vec2::ZERO; 3];
        for v in p.iter_mut() {
            *v = Vec2::new(rng.gen_range(0.0..0.08), rng.gen_range(0.0..0.08));
        }
        let area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]);
        if area < 0.0 {
            p.swap(1, 2);
        }
        let area = area.abs();
        let longest = (0..3).map(|i| (p[(i + 1) % 3] - p[i]).norm()).fold(0.0, f64::max);
        let min_angle = interior_angles(&p).into_iter().fold(f64::INFINITY, f64::min);
        if (4e-4..=1.6e-3).contains(&area) && longest <= 0.08 && min_angle >= 20f64.to_radians() {
            return PartShape::new(format!("tri_{index:02}"), p.to_vec(), ALLEN_KEY_DENSITY)
                .expect("accepted triangles are valid");
        }
    }
}

/// Resolves a preset name: `allen-key` (or `allen_key_l`) or `tri-01` .. `tri-15`.
pub fn preset(name: &str) -> Result<PartShape, ShapeFileError> {
    let key = name.replace('_', "-").to_ascii_lowercase();
    if key == "allen-key" || key == "allen-key-l" {
        return Ok(allen_key_l());
    }
    if let Some(n) = key.strip_prefix("tri-") {
        if let Ok(i) = n.parse::<usize>() {
            if (1..=TRIANGLE_COUNT).contains(&i) {
                return Ok(triangle(i));
            }
        }
    }
    Err(ShapeFileError::UnknownPreset(name.to_string()))
}

/// Every shipped preset as `(file stem, shape)`.
pub fn all_presets() -> Vec<(String, PartShape)> {
    let mut out = vec![("allen_key_l".to_string(), allen_key_l())];
    out.extend((1..=TRIANGLE_COUNT).map(|i| (format!("tri_{i:02}"), triangle(i))));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compute_mass_properties, point_in_polygon};

    /// Mass properties of an axis-aligned rectangle union by parallel axis.
    fn rect_union(rects: &[(f64, f64, f64, f64)], density: f64) -> (f64, Vec2, f64) {
        let mut mass = 0.0;
        let mut moment = Vec2::ZERO;
        for &(x0, y0, x1, y1) in rects {
            let m = density * (x1 - x0) * (y1 - y0);
            mass += m;
            moment += Vec2::new(0.5 * (x0 + x1), 0.5 * (y0 + y1)) * m;
        }
        let com = moment * (1.0 / mass);
        let inertia = rects
            .iter()
            .map(|&(x0, y0, x1, y1)| {
                let (w, h) = (x1 - x0, y1 - y0);
                let m = density * w * h;
                let c = Vec2::new(0.5 * (x0 + x1), 0.5 * (y0 + y1)) - com;
                m * (w * w + h * h) / 12.0 + m * c.dot(c)
            })
            .sum();
        (mass, com, inertia)
    }

    #[test]
    fn allen_key_matches_rectangle_decomposition() {
        let l = ALLEN_KEY_LENGTH;
        let h = ALLEN_KEY_HEIGHT;
        let w = ALLEN_KEY_ARM_WIDTH;
        let (mass, com, inertia) =
            rect_union(&[(0.0, 0.0, l, w), (0.0, w, w, h)], ALLEN_KEY_DENSITY);
        let raw = [
            Vec2::new(0.0, 0.0),
            Vec2::new(l, 0.0),
            Vec2::new(l, w),
            Vec2::new(w, w),
            Vec2::new(w, h),
            Vec2::new(0.0, h),
        ];
        let props = compute_mass_properties(&raw, ALLEN_KEY_DENSITY).unwrap();
        assert!((props.mass - mass).abs() <= 1e-10 * mass);
        assert!((props.com - com).norm() <= 1e-10 * l);
        assert!((props.inertia - inertia).abs() <= 1e-10 * inertia);
        // 950 mm² of 5 mm steel
        assert!((mass - 0.03705).abs() < 1e-12);

        let key = allen_key_l();
        let centered = key.mass_properties();
        assert!(centered.com.norm() < 1e-12);
        assert!((centered.inertia - inertia).abs() <= 1e-10 * inertia);
    }

    #[test]
    fn triangles_are_deterministic_and_valid() {
        for i in 1..=TRIANGLE_COUNT {
            let t = triangle(i);
            assert_eq!(t, triangle(i));
            assert_eq!(t.vertices().len(), 3);
            let area = t.mass_properties().area;
            assert!((4e-4..=1.6e-3).contains(&area));
            assert!(t.radius() < 0.08);
        }
        assert_ne!(triangle(1), triangle(2));
    }

    #[test]
    fn presets_resolve_by_name() {
        assert_eq!(preset("allen-key").unwrap(), allen_key_l());
        assert_eq!(preset("tri-07").unwrap(), triangle(7));
        assert_eq!(preset("tri_15").unwrap(), triangle(15));
        assert!(preset("tri-16").is_err());
        assert!(preset("hexagon").is_err());
    }

    #[test]
    fn shape_file_round_trip() {
        let key = allen_key_l();
        let back = parse_shape(&shape_to_toml(&key)).unwrap();
        assert_eq!(back.name(), key.name());
        for (a, b) in back.vertices().iter().zip(key.vertices()) {
            assert!((*a - *b).norm() < 1e-15);
        }
        assert!(parse_shape("name = \"x\"\ndensity = 1.0\nvertices = [[0.0, 0.0], [1.0, 0.0]]").is_err());
        assert!(parse_shape("name = 3").is_err());
    }

    #[test]
    fn notch_is_empty() {
        let key = allen_key_l();
        let v = key.vertices();
        // notch corner is vertex 3 (inner corner); a point diagonally into the notch is outside
        let inner = v[3];
        assert!(!point_in_polygon(inner + Vec2::new(0.005, 0.005), v));
        assert!(point_in_polygon(inner + Vec2::new(-0.005, -0.005), v));
    }
}
