//! Instance banks cut from real target frames, and class-balanced injection
//! of bank entries into generated frames with range-image occlusion.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::cuboids::{Cuboid, CuboidRecord};
use crate::ingest::kitti::{read_kitti_frame, write_kitti_frame};
use crate::point::{CloudFrame, PointCloud, SourceTag};
use crate::range_image::build_range_image;
use crate::sensor::SensorModel;

pub const DEFAULT_MIN_POINTS: usize = 5;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;
/// Slack on the containment invariant of stored entries.
pub const CONTAINMENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    /// Points in cuboid-local coordinates, labelled with the cuboid class.
    pub points: PointCloud,
    pub cuboid: Cuboid,
    pub source_frame: usize,
}

impl BankEntry {
    pub fn semantic_class(&self) -> u32 {
        self.cuboid.semantic_class
    }

    /// Points placed back at the cuboid's pose in its source sensor frame.
    pub fn to_sensor(&self) -> PointCloud {
        PointCloud::sensor(
            self.points
                .iter()
                .map(|p| {
                    let mut q = *p;
                    q.position = self.cuboid.to_sensor(&p.position.coords);
                    q
                })
                .collect(),
        )
    }

    pub fn validate(&self, min_points: usize) -> Result<()> {
        if self.points.len() < min_points {
            return Err(Error::invalid(
                "bank entry",
                format!("{} points, need at least {min_points}", self.points.len()),
            ));
        }
        let h = self.cuboid.size * 0.5;
        for p in self.points.iter() {
            let l = p.position.coords;
            if (0..3).any(|a| l[a].abs() > h[a] + CONTAINMENT_TOLERANCE) {
                return Err(Error::invalid(
                    "bank entry",
                    format!("point {l:?} outside cuboid half extents {h:?}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractParams {
    pub min_points: usize,
    pub score_threshold: f64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        ExtractParams {
            min_points: DEFAULT_MIN_POINTS,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractStats {
    pub kept: usize,
    pub below_score: usize,
    pub too_few_points: usize,
}

impl ExtractStats {
    fn add(&mut self, o: &ExtractStats) {
        self.kept += o.kept;
        self.below_score += o.below_score;
        self.too_few_points += o.too_few_points;
    }
}

/// Cuts the points inside each sufficiently confident cuboid out of a
/// sensor-frame cloud. Extracted points are expressed in cuboid-local
/// coordinates and relabelled with the cuboid class; their instance id is
/// the bank-wide id assigned later by [`InstanceBank::push`].
pub fn extract_instances(
    frame: &PointCloud,
    source_frame: usize,
    cuboids: &[Cuboid],
    params: &ExtractParams,
) -> (Vec<BankEntry>, ExtractStats) {
    let mut stats = ExtractStats::default();
    let mut out = Vec::new();
    for c in cuboids {
        if c.score < params.score_threshold {
            stats.below_score += 1;
            continue;
        }
        let pts: Vec<_> = frame
            .iter()
            .filter_map(|p| {
                let local = c.to_local(&p.position);
                c.contains_local(&local).then(|| {
                    let mut q = *p;
                    q.position = local.into();
                    q.semantic_class = c.semantic_class;
                    q
                })
            })
            .collect();
        if pts.is_empty() || pts.len() < params.min_points {
            stats.too_few_points += 1;
            continue;
        }
        stats.kept += 1;
        out.push(BankEntry {
            points: PointCloud::sensor(pts),
            cuboid: *c,
            source_frame,
        });
    }
    (out, stats)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceBank {
    entries: Vec<BankEntry>,
    by_class: BTreeMap<u32, Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankIndexEntry {
    points: String,
    labels: String,
    point_count: usize,
    source_frame: usize,
    cuboid: CuboidRecord,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankIndex {
    entries: Vec<BankIndexEntry>,
}

impl InstanceBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry; its points get instance id `len + 1`.
    pub fn push(&mut self, mut entry: BankEntry) {
        let id = self.entries.len() as u32 + 1;
        entry.cuboid.instance_id = id;
        for p in &mut entry.points.points {
            p.instance_id = id;
        }
        self.by_class
            .entry(entry.semantic_class())
            .or_default()
            .push(self.entries.len());
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices of one class.
    pub fn class_entries(&self, class: u32) -> &[usize] {
        self.by_class.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_class.keys().copied()
    }

    /// Builds a bank from `(frame id, sensor-frame cloud, cuboids)` triples,
    /// extracting frames in parallel and appending in input order.
    pub fn from_frames(frames: &[(usize, PointCloud, Vec<Cuboid>)], params: &ExtractParams) -> (Self, ExtractStats) {
        use rayon::prelude::*;
        let parts: Vec<_> = frames
            .par_iter()
            .map(|(id, cloud, cuboids)| extract_instances(cloud, *id, cuboids, params))
            .collect();
        let mut bank = InstanceBank::new();
        let mut stats = ExtractStats::default();
        for (entries, st) in parts {
            stats.add(&st);
            for e in entries {
                bank.push(e);
            }
        }
        (bank, stats)
    }

    /// Writes `index.json` plus one KITTI point/label pair per entry.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = BankIndex { entries: Vec::new() };
        for (i, e) in self.entries.iter().enumerate() {
            let points = format!("entries/{i:06}.bin");
            let labels = format!("entries/{i:06}.label");
            write_kitti_frame(&e.points, &dir.join(&points), &dir.join(&labels))?;
            index.entries.push(BankIndexEntry {
                points,
                labels,
                point_count: e.points.len(),
                source_frame: e.source_frame,
                cuboid: CuboidRecord::from_cuboid(e.source_frame, &e.cuboid),
            });
        }
        let path = dir.join("index.json");
        let text = serde_json::to_string_pretty(&index).expect("bank index serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: BankIndex = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        let mut bank = InstanceBank::new();
        for rec in index.entries {
            let points = read_kitti_frame(&dir.join(&rec.points), Some(&dir.join(&rec.labels)))?;
            if points.len() != rec.point_count {
                return Err(Error::format(
                    "instance bank",
                    format!("{}: {} points, index says {}", rec.points, points.len(), rec.point_count),
                ));
            }
            let cuboid = rec.cuboid.to_cuboid();
            cuboid.validate()?;
            let entry = BankEntry {
                points,
                cuboid,
                source_frame: rec.source_frame,
            };
            entry.validate(1)?;
            bank.push(entry);
        }
        Ok(bank)
    }
}

/// Per-class injection rates (expected entries per generated frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InjectionPolicy {
    pub rates: BTreeMap<u32, f64>,
    pub score_threshold: f64,
    pub min_points: usize,
    pub seed: u64,
}

impl Default for InjectionPolicy {
    fn default() -> Self {
        InjectionPolicy {
            rates: BTreeMap::new(),
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            min_points: DEFAULT_MIN_POINTS,
            seed: 0,
        }
    }
}

impl InjectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if let Some((c, r)) = self.rates.iter().find(|(_, r)| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::invalid("injection policy", format!("rate {r} for class {c}")));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::invalid(
                "injection policy",
                format!("score threshold {} outside [0, 1]", self.score_threshold),
            ));
        }
        Ok(())
    }

    pub fn extract_params(&self) -> ExtractParams {
        ExtractParams {
            min_points: self.min_points,
            score_threshold: self.score_threshold,
        }
    }

    /// Entries drawn for one frame, per class in ascending class order; a
    /// pure function of `(seed, frame_index)`. Classes without bank entries
    /// draw nothing.
    pub fn draw(&self, bank: &InstanceBank, frame_index: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(frame_index);
        let mut out = Vec::new();
        for (&class, &rate) in &self.rates {
            if rate <= 0.0 {
                continue;
            }
            let count = Poisson::new(rate).expect("positive finite rate").sample(&mut rng) as usize;
            let pool = bank.class_entries(class);
            if pool.is_empty() {
                continue;
            }
            for _ in 0..count {
                out.push(pool[rng.gen_range(0..pool.len())]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectStats {
    /// Entries drawn per class.
    pub drawn: BTreeMap<u32, usize>,
    /// Injected points that survived occlusion.
    pub visible_points: usize,
}

/// Inserts drawn bank entries at their original sensor-relative pose and
/// resolves occlusion by per-cell range competition. Each injected entry
/// gets a fresh instance id above the scene's largest.
pub fn inject_instances(
    scene_frame: &PointCloud,
    sensor: &SensorModel,
    bank: &InstanceBank,
    policy: &InjectionPolicy,
    frame_index: u64,
) -> Result<(PointCloud, InjectStats)> {
    policy.validate()?;
    if scene_frame.frame == CloudFrame::World {
        return Err(Error::invalid("injection", "scene frame must be in sensor coordinates"));
    }
    let mut stats = InjectStats::default();
    let mut union = scene_frame.clone();
    let mut next_id = scene_frame.max_instance_id() + 1;
    for idx in policy.draw(bank, frame_index) {
        let entry = &bank.entries()[idx];
        *stats.drawn.entry(entry.semantic_class()).or_default() += 1;
        let mut placed = entry.to_sensor();
        for p in &mut placed.points {
            p.instance_id = next_id;
            p.source = SourceTag::Injected;
        }
        next_id += 1;
        union.points.extend(placed.points);
    }
    let image = build_range_image(sensor, &union).image;
    let mut out = image.to_cloud();
    out.frame = scene_frame.frame.clone();
    stats.visible_points = out.iter().filter(|p| p.source == SourceTag::Injected).count();
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point::SemanticPoint;
    use crate::pose::PoseSE3;
    use nalgebra::Vector3;

    fn cuboid(center: [f64; 3], size: [f64; 3], yaw: f64, class: u32, score: f64) -> Cuboid {
        Cuboid {
            center: Vector3::from(center),
            size: Vector3::from(size),
            yaw,
            semantic_class: class,
            instance_id: 0,
            score,
        }
    }

    fn sensor() -> SensorModel {
        SensorModel::new(
            "t",
            SensorModel::uniform_elevations(10.0, -10.0, 41),
            [-180.0, 180.0],
            720,
            [0.5, 100.0],
            PoseSE3::identity(),
        )
        .unwrap()
    }

    #[test]
    fn half_extent_membership() {
        let frame = PointCloud::sensor(vec![
            SemanticPoint::new(11.0, 0.5, 0.0),
            SemanticPoint::new(12.5, 0.0, 0.0),
        ]);
        let c = cuboid([10.0, 0.0, 0.0], [4.0, 2.0, 2.0], 0.0, 5, 1.0);
        let (entries, stats) = extract_instances(&frame, 0, &[c], &ExtractParams { min_points: 1, ..Default::default() });
        assert_eq!(stats.kept, 1);
        assert_eq!(entries[0].points.len(), 1);
        let p = entries[0].points.points[0];
        assert_eq!((p.position.x, p.position.y), (1.0, 0.5));
        assert_eq!(p.semantic_class, 5);
    }

    #[test]
    fn empty_and_low_score_cuboids() {
        let frame = PointCloud::sensor(vec![SemanticPoint::new(1.0, 0.0, 0.0); 10]);
        let far = cuboid([50.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0, 1, 1.0);
        let weak = cuboid([1.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0, 1, 0.3);
        let (entries, stats) = extract_instances(&frame, 0, &[far, weak], &ExtractParams::default());
        assert!(entries.is_empty());
        assert_eq!(stats.too_few_points, 1);
        assert_eq!(stats.below_score, 1);
    }

    #[test]
    fn bank_round_trip_and_containment() {
        let frame: PointCloud = (0..50)
            .map(|i| SemanticPoint::new(8.0 + (i % 5) as f64 * 0.1, (i / 5) as f64 * 0.05, 0.2).with_intensity(0.5))
            .collect();
        let c = cuboid([8.2, 0.25, 0.5], [1.0, 1.0, 2.0], 0.4, 5, 0.9);
        let (bank, _) = InstanceBank::from_frames(&[(3, frame, vec![c])], &ExtractParams::default());
        assert_eq!(bank.len(), 1);
        bank.entries()[0].validate(5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        bank.save(dir.path()).unwrap();
        let back = InstanceBank::load(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.class_entries(5), &[0]);
        assert_eq!(back.entries()[0].source_frame, 3);
        back.entries()[0].validate(5).unwrap();
    }

    fn wall_and_person() -> (PointCloud, InstanceBank) {
        let s = sensor();
        // Wall at range 12 covering azimuth ±10°, elevation ±5°.
        let mut wall = Vec::new();
        for r in 0..s.rows() {
            for c in 0..s.columns() {
                let d = s.beam_direction(r, c).unwrap();
                let az = d.y.atan2(d.x).to_degrees();
                let el = d.z.asin().to_degrees();
                if az.abs() < 10.0 && el.abs() < 5.0 {
                    let p = d * 12.0;
                    wall.push(SemanticPoint::new(p.x, p.y, p.z).with_labels(7, 0));
                }
            }
        }
        // Pedestrian: dense points on a 0.6 m wide, 1.6 m tall sheet at range 8.
        let mut person = Vec::new();
        for i in 0..30 {
            for j in 0..80 {
                person.push(
                    SemanticPoint::new(8.0, -0.3 + i as f64 * 0.02, -0.8 + j as f64 * 0.02).with_labels(5, 0),
                );
            }
        }
        let c = cuboid([8.0, 0.0, 0.0], [0.4, 0.7, 1.7], 0.0, 5, 1.0);
        let (bank, _) = InstanceBank::from_frames(&[(0, PointCloud::sensor(person), vec![c])], &ExtractParams::default());
        (PointCloud::sensor(wall), bank)
    }

    #[test]
    fn injected_person_occludes_wall() {
        let s = sensor();
        let (wall, bank) = wall_and_person();
        let policy = InjectionPolicy {
            rates: [(5, 1.0)].into(),
            ..Default::default()
        };
        // Find a frame index that draws at least one pedestrian.
        let fi = (0..100).find(|&f| !policy.draw(&bank, f).is_empty()).unwrap();
        let (out, stats) = inject_instances(&wall, &s, &bank, &policy, fi).unwrap();
        assert!(stats.visible_points > 0);
        let img = build_range_image(&s, &out).image;
        let person_cells: Vec<_> = img
            .iter_valid()
            .filter(|(_, _, c)| c.point.source == SourceTag::Injected)
            .collect();
        assert_eq!(person_cells.len(), stats.visible_points);
        for (_, _, c) in &person_cells {
            assert!(c.range < 9.0);
            assert!(c.point.instance_id >= 1);
        }
        // Wall cells covered by the person are gone: total cells equal the
        // union of the two footprints.
        let wall_img = build_range_image(&s, &wall).image;
        let covered = person_cells
            .iter()
            .filter(|(r, c, _)| wall_img.get(*r, *c).is_some())
            .count();
        assert!(covered > 0);
        assert_eq!(out.len(), wall.len() + person_cells.len() - covered);
    }

    #[test]
    fn zero_rates_reproject_scene() {
        let s = sensor();
        let (wall, bank) = wall_and_person();
        let (out, stats) = inject_instances(&wall, &s, &bank, &InjectionPolicy::default(), 0).unwrap();
        assert!(stats.drawn.is_empty());
        assert_eq!(out, crate::range_image::reproject(&s, &wall));
    }

    #[test]
    fn nearer_entry_wins_overlap() {
        let s = sensor();
        let sheet = |x: f64, class: u32| -> PointCloud {
            (0..400)
                .map(|k| SemanticPoint::new(x, -0.5 + (k % 20) as f64 * 0.05, -0.5 + (k / 20) as f64 * 0.05).with_labels(class, 0))
                .collect()
        };
        let near = cuboid([6.0, 0.0, 0.0], [0.2, 1.2, 1.2], 0.0, 1, 1.0);
        let far = cuboid([9.0, 0.0, 0.0], [0.2, 1.2, 1.2], 0.0, 2, 1.0);
        let (bank, _) = InstanceBank::from_frames(
            &[(0, sheet(6.0, 1), vec![near]), (1, sheet(9.0, 2), vec![far])],
            &ExtractParams::default(),
        );
        let policy = InjectionPolicy {
            rates: [(1, 3.0), (2, 3.0)].into(),
            ..Default::default()
        };
        let fi = (0..100)
            .find(|&f| {
                let d = policy.draw(&bank, f);
                d.contains(&0) && d.contains(&1)
            })
            .unwrap();
        let (out, _) = inject_instances(&PointCloud::default(), &s, &bank, &policy, fi).unwrap();
        let img = build_range_image(&s, &out).image;
        let near_img = build_range_image(&s, &bank.entries()[0].to_sensor()).image;
        for (r, c, _) in near_img.iter_valid() {
            let cell = img.get(r, c).unwrap();
            assert_eq!(cell.point.semantic_class, 1);
            assert!(cell.range < 7.0);
        }
    }

    #[test]
    fn fresh_ids_exceed_scene_ids() {
        let s = sensor();
        let (mut wall, bank) = wall_and_person();
        for p in &mut wall.points {
            p.instance_id = 40;
        }
        let policy = InjectionPolicy {
            rates: [(5, 2.0)].into(),
            ..Default::default()
        };
        for f in 0..20 {
            let (out, _) = inject_instances(&wall, &s, &bank, &policy, f).unwrap();
            for p in out.iter().filter(|p| p.source == SourceTag::Injected) {
                assert!(p.instance_id > 40);
            }
        }
    }

    #[test]
    fn draws_are_deterministic_and_match_rates() {
        let (_, mut bank) = wall_and_person();
        let extra = bank.entries()[0].clone();
        let mut car = extra.clone();
        car.cuboid.semantic_class = 1;
        bank.push(car);
        let policy = InjectionPolicy {
            // The total over n frames is Poisson(rate·n); at rate 2 the 5% bound is 2.2σ.
            rates: [(5, 2.0), (1, 4.0)].into(),
            seed: 99,
            ..Default::default()
        };
        assert_eq!(policy.draw(&bank, 17), policy.draw(&bank, 17));
        let frames = 1000;
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for f in 0..frames {
            for i in policy.draw(&bank, f) {
                *counts.entry(bank.entries()[i].semantic_class()).or_default() += 1;
            }
        }
        for (class, rate) in &policy.rates {
            let expected = rate * frames as f64;
            let got = counts[class] as f64;
            assert!((got - expected).abs() / expected < 0.05, "class {class}: {got} vs {expected}");
        }
    }
}
