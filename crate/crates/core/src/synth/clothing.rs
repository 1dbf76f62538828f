use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::error::{Error, Result};
use crate::geometry::{Bvh, TriMesh};

use super::rng_for;

/// Vertices whose hood weight reaches this value form the back-bump region.
pub const HOOD_REGION_WEIGHT: f64 = 0.5;

/// Wavelengths (metres) and relative weights of the noise octaves.
const OCTAVES: [(f64, f64); 3] = [(0.6, 1.0), (0.3, 0.35), (0.15, 0.12)];
const WAVES_PER_OCTAVE: usize = 6;
const HOOD_SIGMA: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClothingSpec {
    /// Range of the noise displacement.
    pub amplitude: f64,
    /// Peak displacement of the bump on the back.
    pub hood_height: f64,
}

#[derive(Debug, Clone)]
pub struct ClothedSurface {
    pub mesh: TriMesh,
    /// Outward displacement applied to each vertex.
    pub displacement: Vec<f64>,
    pub hood_weight: Vec<f64>,
}

struct Wave {
    direction: Vector3<f64>,
    frequency: f64,
    phase: f64,
    weight: f64,
}

fn noise_waves(seed: u64) -> Vec<Wave> {
    let mut rng = rng_for(seed, 2);
    let mut waves = Vec::new();
    for (wavelength, weight) in OCTAVES {
        for _ in 0..WAVES_PER_OCTAVE {
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            waves.push(Wave {
                direction: Vector3::from(d),
                frequency: std::f64::consts::TAU / wavelength,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                weight,
            });
        }
    }
    waves
}

/// Smooth seeded noise rescaled to exactly `[0, 1]` over `points`.
fn unit_noise(points: &[Point3<f64>], seed: u64) -> Vec<f64> {
    let waves = noise_waves(seed);
    let raw: Vec<f64> = points
        .iter()
        .map(|p| {
            waves
                .iter()
                .map(|w| w.weight * (w.frequency * w.direction.dot(&p.coords) + w.phase).sin())
                .sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.0; points.len()];
    }
    raw.iter().map(|r| ((r - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

/// Surface point on the upper back: the body is taken to face +z with y up.
fn hood_anchor(body: &TriMesh, bvh: &Bvh) -> Point3<f64> {
    let (lo, hi) = body.bounds().expect("non-empty mesh has bounds");
    let probe = Point3::new(0.5 * (lo.x + hi.x), lo.y + 0.76 * (hi.y - lo.y), lo.z - 0.3);
    bvh.closest_point(&probe).sample.position
}

/// Displaces every vertex of `body` outward along its area-weighted normal
/// by `max(amplitude·noise, hood_height·bump)`, so no vertex moves further
/// than the larger of the two.
pub fn make_clothed_with(body: &TriMesh, seed: u64, spec: &ClothingSpec) -> Result<ClothedSurface> {
    if !(spec.amplitude >= 0.0) || !(spec.hood_height >= 0.0) {
        return Err(Error::Config("clothing amplitudes must be nonnegative".into()));
    }
    if body.is_empty() {
        return Err(Error::EmptyInput("cannot clothe an empty mesh".into()));
    }
    let normals = body.area_weighted_normals();
    let noise = unit_noise(body.vertices(), seed);
    let bvh = Bvh::build(body)?;
    let anchor = hood_anchor(body, &bvh);
    let hood_weight: Vec<f64> = body
        .vertices()
        .iter()
        .zip(&normals)
        .map(|(p, n)| {
            let r2 = (p - anchor).norm_squared();
            let facing_back = (-n.z * 2.0).clamp(0.0, 1.0);
            (-r2 / (2.0 * HOOD_SIGMA * HOOD_SIGMA)).exp() * facing_back
        })
        .collect();
    let displacement: Vec<f64> = noise
        .iter()
        .zip(&hood_weight)
        .map(|(n, h)| (spec.amplitude * n).max(spec.hood_height * h))
        .collect();
    let vertices = body
        .vertices()
        .iter()
        .zip(&normals)
        .zip(&displacement)
        .map(|((p, n), d)| if *d > 0.0 { p + n * *d } else { *p })
        .collect();
    let mesh = TriMesh::new(vertices, body.triangles().to_vec())?;
    Ok(ClothedSurface {
        mesh,
        displacement,
        hood_weight,
    })
}

/// Clothing with noise range `amplitude` and a back bump of the same height.
pub fn make_clothed(body: &TriMesh, seed: u64, amplitude: f64) -> Result<TriMesh> {
    Ok(make_clothed_with(
        body,
        seed,
        &ClothingSpec {
            amplitude,
            hood_height: amplitude,
        },
    )?
    .mesh)
}
