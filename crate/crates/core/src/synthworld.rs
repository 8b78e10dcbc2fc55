//! Procedural worlds of analytically intersectable primitives and an exact
//! ray-tracer over them. This is the reference the reconstruction pipeline
//! is measured against.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::cuboids::Cuboid;
use crate::point::{PointCloud, SemanticPoint};
use crate::pose::PoseSE3;
use crate::range_image::{RangeCell, RangeImage};
use crate::sensor::SensorModel;

/// Joint class ids used by generated worlds.
pub mod class {
    pub const CAR: u32 = 1;
    pub const PEDESTRIAN: u32 = 5;
    pub const STRUCTURE: u32 = 7;
    pub const NATURE: u32 = 8;
    pub const ROAD: u32 = 9;
    pub const TERRAIN: u32 = 11;
}

pub const WORLD_RADIUS: f64 = 120.0;
/// Seconds between consecutive frames.
pub const FRAME_PERIOD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Small,
    Medium,
}

impl std::str::FromStr for Complexity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Complexity::Small),
            "medium" => Ok(Complexity::Medium),
            _ => Err(Error::invalid("complexity", format!("'{s}' (expected small or medium)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// Horizontal rectangle at height `z`.
    Plane { min: [f64; 2], max: [f64; 2], z: f64 },
    /// Axis-aligned box.
    Box { center: [f64; 3], half: [f64; 3] },
    /// Vertical cylinder standing on `base`.
    Cylinder { base: [f64; 3], radius: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub semantic_class: u32,
    pub instance_id: u32,
    pub intensity: f32,
    pub dynamic: bool,
    /// Linear velocity in m/s; the shape is displaced by `velocity · t`.
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWorld {
    pub seed: u64,
    pub complexity: Complexity,
    pub primitives: Vec<Primitive>,
}

/// Ray hit: distance along the unit direction and primitive index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub primitive: usize,
}

impl Primitive {
    fn offset(&self, time: f64) -> Vector3<f64> {
        Vector3::from(self.velocity) * time
    }

    /// Shape displaced to `time`.
    pub fn shape_at(&self, time: f64) -> Shape {
        let o = self.offset(time);
        match self.shape {
            Shape::Plane { min, max, z } => Shape::Plane {
                min: [min[0] + o.x, min[1] + o.y],
                max: [max[0] + o.x, max[1] + o.y],
                z: z + o.z,
            },
            Shape::Box { center, half } => Shape::Box {
                center: [center[0] + o.x, center[1] + o.y, center[2] + o.z],
                half,
            },
            Shape::Cylinder { base, radius, height } => Shape::Cylinder {
                base: [base[0] + o.x, base[1] + o.y, base[2] + o.z],
                radius,
                height,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.shape {
            Shape::Plane { min, max, .. } => min[0] < max[0] && min[1] < max[1],
            Shape::Box { half, .. } => half.iter().all(|h| *h > 0.0),
            Shape::Cylinder { radius, height, .. } => radius > 0.0 && height > 0.0,
        };
        if !ok {
            return Err(Error::invalid("primitive", format!("{self:?}")));
        }
        Ok(())
    }
}

impl Shape {
    /// Nearest intersection with `t > 1e-9` along a unit direction.
    pub fn intersect(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match *self {
            Shape::Plane { min, max, z } => {
                if d.z.abs() < 1e-15 {
                    return None;
                }
                let t = (z - o.z) / d.z;
                if t <= EPS {
                    return None;
                }
                let x = o.x + t * d.x;
                let y = o.y + t * d.y;
                (x >= min[0] && x <= max[0] && y >= min[1] && y <= max[1]).then_some(t)
            }
            Shape::Box { center, half } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..3 {
                    let lo = center[a] - half[a];
                    let hi = center[a] + half[a];
                    if d[a].abs() < 1e-15 {
                        if o[a] < lo || o[a] > hi {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / d[a];
                    let (mut ta, mut tb) = ((lo - o[a]) * inv, (hi - o[a]) * inv);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                    if t0 > t1 {
                        return None;
                    }
                }
                (t0 > EPS).then_some(t0)
            }
            Shape::Cylinder { base, radius, height } => {
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t > EPS && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let (ox, oy) = (o.x - base[0], o.y - base[1]);
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-15 {
                    let b = 2.0 * (ox * d.x + oy * d.y);
                    let c = ox * ox + oy * oy - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        // numerically stable roots
                        let q = -0.5 * (b + b.signum() * sq);
                        let mut roots = [q / a, if q != 0.0 { c / q } else { q / a }];
                        roots.sort_by(f64::total_cmp);
                        for t in roots {
                            let z = o.z + t * d.z;
                            if z >= base[2] && z <= base[2] + height {
                                consider(t);
                            }
                        }
                    }
                }
                if d.z.abs() > 1e-15 {
                    for zc in [base[2], base[2] + height] {
                        let t = (zc - o.z) / d.z;
                        let x = o.x + t * d.x - base[0];
                        let y = o.y + t * d.y - base[1];
                        if x * x + y * y <= radius * radius {
                            consider(t);
                        }
                    }
                }
                best
            }
        }
    }

    /// Euclidean distance from `p` to the shape's surface.
    pub fn surface_distance(&self, p: &Point3<f64>) -> f64 {
        match *self {
            Shape::Plane { min, max, z } => {
                let dx = (min[0] - p.x).max(0.0).max(p.x - max[0]);
                let dy = (min[1] - p.y).max(0.0).max(p.y - max[1]);
                (dx * dx + dy * dy + (p.z - z).powi(2)).sqrt()
            }
            Shape::Box { center, half } => {
                let q: Vector3<f64> = Vector3::new(
                    (p.x - center[0]).abs() - half[0],
                    (p.y - center[1]).abs() - half[1],
                    (p.z - center[2]).abs() - half[2],
                );
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside.abs()
            }
            Shape::Cylinder { base, radius, height } => {
                let r = ((p.x - base[0]).powi(2) + (p.y - base[1]).powi(2)).sqrt();
                let dr = r - radius;
                let dz = (base[2] - p.z).max(p.z - base[2] - height);
                if dr <= 0.0 && dz <= 0.0 {
                    (-dr).min(-dz)
                } else {
                    (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
                }
            }
        }
    }

    /// Residual of the surface equation at `p` (0 on the surface).
    pub fn residual(&self, p: &Point3<f64>) -> f64 {
        self.surface_distance(p)
    }

    fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Plane { min, max, z } => {
                let far_x = min[0].abs().max(max[0].abs());
                let far_y = min[1].abs().max(max[1].abs());
                (far_x * far_x + far_y * far_y + z * z).sqrt()
            }
            Shape::Box { center, half } => (Vector3::from(center).abs() + Vector3::from(half)).norm(),
            Shape::Cylinder { base, radius, height } => {
                let h = (base[0].powi(2) + base[1].powi(2)).sqrt() + radius;
                (h * h + (base[2].abs() + height).powi(2)).sqrt()
            }
        }
    }
}

impl SynthWorld {
    pub fn validate(&self) -> Result<()> {
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    pub fn dynamic_instance_ids(&self) -> Vec<u32> {
        self.primitives
            .iter()
            .filter(|p| p.dynamic)
            .map(|p| p.instance_id)
            .collect()
    }

    /// The same world without dynamic primitives.
    pub fn static_only(&self) -> SynthWorld {
        SynthWorld {
            seed: self.seed,
            complexity: self.complexity,
            primitives: self.primitives.iter().filter(|p| !p.dynamic).copied().collect(),
        }
    }

    /// Largest distance from the world origin reached by any primitive over
    /// `[0, duration]`.
    pub fn extent(&self, duration: f64) -> f64 {
        self.primitives
            .iter()
            .map(|p| p.shape_at(0.0).bounding_radius().max(p.shape_at(duration).bounding_radius()))
            .fold(0.0, f64::max)
    }

    /// Nearest hit over all primitives at `time`; equal distances go to the
    /// lower primitive index.
    pub fn cast(&self, o: &Point3<f64>, d: &Vector3<f64>, time: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(t) = p.shape_at(time).intersect(o, d) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit { t, primitive: i });
                }
            }
        }
        best
    }

    /// Distance from `p` to the nearest surface of a primitive whose class
    /// differs from `class`.
    pub fn class_boundary_distance(&self, p: &Point3<f64>, class: u32, time: f64) -> f64 {
        self.primitives
            .iter()
            .filter(|q| q.semantic_class != class)
            .map(|q| q.shape_at(time).surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether a hit of class `class` at range `range` along beam `d` from
    /// `o` lies within `margin` of a class change: either a surface of
    /// another class is within `margin` in 3D, or one of four rays passing
    /// `margin` to the side of the hit point meets a different class first.
    pub fn near_class_boundary(
        &self,
        o: &Point3<f64>,
        d: &Vector3<f64>,
        range: f64,
        class: u32,
        margin: f64,
        time: f64,
    ) -> bool {
        let hit = o + d * range;
        if self.class_boundary_distance(&hit, class, time) <= margin {
            return true;
        }
        let side = if d.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let u = d.cross(&side).normalize();
        let v = d.cross(&u).normalize();
        for off in [u, -u, v, -v] {
            let target = hit + off * margin;
            let dir = (target - o).normalize();
            if let Some(h) = self.cast(o, &dir, time) {
                if self.primitives[h.primitive].semantic_class != class {
                    return true;
                }
            }
        }
        false
    }

    /// Oracle cuboids of the dynamic primitives at `time`, in world
    /// coordinates.
    pub fn dynamic_cuboids(&self, time: f64) -> Vec<Cuboid> {
        self.primitives
            .iter()
            .filter(|p| p.dynamic)
            .filter_map(|p| match p.shape_at(time) {
                Shape::Box { center, half } => Some(Cuboid {
                    center: Vector3::from(center),
                    size: Vector3::from(half) * 2.0,
                    yaw: 0.0,
                    semantic_class: p.semantic_class,
                    instance_id: p.instance_id,
                    score: 1.0,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: SynthWorld = serde_json::from_str(text).map_err(|e| Error::Json {
            context: "synthetic world".into(),
            source: e,
        })?;
        w.validate()?;
        Ok(w)
    }
}

/// Half-width of the road strip along the x axis.
pub const ROAD_HALF_WIDTH: f64 = 4.0;
const X_RANGE: [f64; 2] = [-45.0, 105.0];
const Y_HALF: f64 = 45.0;

/// Builds a deterministic world: a road strip with terrain on both sides,
/// structures (boxes), vegetation (cylinders) and moving cars and
/// pedestrians.
///
/// Box heights avoid the band between 1.2 m and 2.4 m so that no roof is
/// visible from one sensor mount height but hidden from another.
pub fn generate_world(seed: u64, complexity: Complexity) -> SynthWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_box, n_cyl, n_dyn) = match complexity {
        Complexity::Small => (5, 5, rng.gen_range(0..=2)),
        Complexity::Medium => (
            rng.gen_range(20..=30),
            rng.gen_range(20..=30),
            rng.gen_range(5..=10),
        ),
    };
    let mut prims = Vec::new();
    let road = ROAD_HALF_WIDTH;
    prims.push(Primitive {
        shape: Shape::Plane {
            min: [X_RANGE[0], -road],
            max: [X_RANGE[1], road],
            z: 0.0,
        },
        semantic_class: class::ROAD,
        instance_id: 0,
        intensity: 0.15,
        dynamic: false,
        velocity: [0.0; 3],
    });
    for (lo, hi) in [(road, Y_HALF), (-Y_HALF, -road)] {
        prims.push(Primitive {
            shape: Shape::Plane {
                min: [X_RANGE[0], lo],
                max: [X_RANGE[1], hi],
                z: 0.0,
            },
            semantic_class: class::TERRAIN,
            instance_id: 0,
            intensity: 0.35,
            dynamic: false,
            velocity: [0.0; 3],
        });
    }

    // Footprints as (center xy, half xy) for overlap rejection.
    let mut taken: Vec<([f64; 2], [f64; 2])> = Vec::new();
    let free = |taken: &[([f64; 2], [f64; 2])], c: [f64; 2], h: [f64; 2]| {
        taken.iter().all(|(tc, th)| {
            (c[0] - tc[0]).abs() > h[0] + th[0] + 1.5 || (c[1] - tc[1]).abs() > h[1] + th[1] + 1.5
        })
    };
    let side_y = |rng: &mut ChaCha8Rng, half: f64| {
        let min = road + 4.0 + half;
        let y = rng.gen_range(min..min + 22.0);
        if rng.gen_bool(0.5) {
            y
        } else {
            -y
        }
    };
    let mut placed = 0;
    let mut attempts = 0;
    while placed < n_box && attempts < 10_000 {
        attempts += 1;
        let half = [rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0)];
        let h = if rng.gen_bool(0.4) {
            rng.gen_range(0.8..1.2)
        } else {
            rng.gen_range(2.4..3.5)
        };
        let c = [rng.gen_range(X_RANGE[0] + 10.0..X_RANGE[1] - 10.0), side_y(&mut rng, half[1])];
        if !free(&taken, c, half) {
            continue;
        }
        taken.push((c, half));
        prims.push(Primitive {
            shape: Shape::Box {
                center: [c[0], c[1], h / 2.0],
                half: [half[0], half[1], h / 2.0],
            },
            semantic_class: class::STRUCTURE,
            instance_id: 0,
            intensity: rng.gen_range(0.4..0.7),
            dynamic: false,
            velocity: [0.0; 3],
        });
        placed += 1;
    }
    let mut placed = 0;
    while placed < n_cyl && attempts < 20_000 {
        attempts += 1;
        let r = rng.gen_range(0.3..1.0);
        let c = [rng.gen_range(X_RANGE[0] + 10.0..X_RANGE[1] - 10.0), side_y(&mut rng, r)];
        if !free(&taken, c, [r, r]) {
            continue;
        }
        taken.push((c, [r, r]));
        prims.push(Primitive {
            shape: Shape::Cylinder {
                base: [c[0], c[1], 0.0],
                radius: r,
                height: rng.gen_range(2.4..4.0),
            },
            semantic_class: class::NATURE,
            instance_id: 0,
            intensity: rng.gen_range(0.2..0.4),
            dynamic: false,
            velocity: [0.0; 3],
        });
        placed += 1;
    }
    for i in 0..n_dyn {
        let id = 1 + i as u32;
        if rng.gen_bool(0.6) {
            // car in one of the two lanes, driving along x
            let lane: f64 = if rng.gen_bool(0.5) { 2.6 } else { -2.6 };
            let speed = rng.gen_range(3.0..8.0) * lane.signum();
            let x = rng.gen_range(10.0..50.0);
            prims.push(Primitive {
                shape: Shape::Box {
                    center: [x, lane, 0.75],
                    half: [2.25, 0.9, 0.75],
                },
                semantic_class: class::CAR,
                instance_id: id,
                intensity: rng.gen_range(0.5..0.9),
                dynamic: true,
                velocity: [speed, 0.0, 0.0],
            });
        } else {
            let y = (road + 1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let x = rng.gen_range(0.0..60.0);
            prims.push(Primitive {
                shape: Shape::Box {
                    center: [x, y, 0.875],
                    half: [0.3, 0.3, 0.875],
                },
                semantic_class: class::PEDESTRIAN,
                instance_id: id,
                intensity: rng.gen_range(0.3..0.6),
                dynamic: true,
                velocity: [rng.gen_range(-1.5..1.5), 0.0, 0.0],
            });
        }
    }
    SynthWorld {
        seed,
        complexity,
        primitives: prims,
    }
}

/// Vehicle poses along the road: `spacing` meters apart on a gentle
/// S-curve around y = 0, heading along the curve tangent.
pub fn trajectory(frames: usize, spacing: f64) -> Vec<PoseSE3> {
    (0..frames)
        .map(|i| {
            let x = i as f64 * spacing;
            let y = 0.5 * (x / 12.0).sin();
            let dy = 0.5 / 12.0 * (x / 12.0).cos();
            PoseSE3::from_yaw(dy.atan(), Vector3::new(x, y, 0.0))
        })
        .collect()
}

/// Exact per-beam returns of `sensor` placed at `sensor_pose` (world
/// frame) at time `time`. Cell `source_index` is the hit primitive.
pub fn raytrace_image(world: &SynthWorld, sensor: &SensorModel, sensor_pose: &PoseSE3, time: f64) -> RangeImage {
    let origin = Point3::from(*sensor_pose.translation());
    let rows = sensor.rows();
    let cols = sensor.columns();
    let cells: Vec<Option<RangeCell>> = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            let local = sensor.beam_direction(r, c).expect("valid cell");
            let d = sensor_pose.transform_vector(&local);
            let hit = world.cast(&origin, &d, time)?;
            if !sensor.in_range(hit.t) {
                return None;
            }
            let prim = &world.primitives[hit.primitive];
            let p = local * hit.t;
            Some(RangeCell {
                range: hit.t,
                point: SemanticPoint::new(p.x, p.y, p.z)
                    .with_labels(prim.semantic_class, prim.instance_id)
                    .with_intensity(prim.intensity),
                source_index: hit.primitive as u32,
            })
        })
        .collect();
    let mut image = RangeImage::for_sensor(sensor);
    for (k, cell) in cells.into_iter().enumerate() {
        if let Some(cell) = cell {
            image.set(k / cols, k % cols, cell);
        }
    }
    image
}

/// [`raytrace_image`] flattened to a sensor-frame cloud in row-major order.
pub fn raytrace_analytic(world: &SynthWorld, sensor: &SensorModel, sensor_pose: &PoseSE3, time: f64) -> PointCloud {
    let mut cloud = raytrace_image(world, sensor, sensor_pose, time).to_cloud();
    cloud.frame = crate::point::CloudFrame::SensorNamed(sensor.name().to_string());
    cloud
}
