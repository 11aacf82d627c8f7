//! Convex-obstacle scenes: signed distances, clearance queries and ray casting.
//!
//! A [`Scene`] is a rectangular walkable floor (the bounds) containing convex
//! polygonal obstacles extruded to a fixed height. The four bound walls act as
//! implicit obstacles of unlimited height.

use std::fmt;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

/// Linear RGB triple with components in `[0, 1]`.
pub type Rgb = [f64; 3];

const DIRECTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("obstacle {obstacle}: polygon needs at least 3 vertices, got {count}")]
    TooFewVertices { obstacle: usize, count: usize },
    #[error("obstacle {obstacle}: polygon is not strictly convex (counter-clockwise) at vertex {vertex}")]
    NotConvex { obstacle: usize, vertex: usize },
    #[error("obstacle {obstacle}: height must be positive, got {height}")]
    NonPositiveHeight { obstacle: usize, height: f64 },
    #[error("obstacle {obstacle}: albedo component {value} outside [0, 1]")]
    BadAlbedo { obstacle: usize, value: f64 },
    #[error("obstacle {obstacle}: vertex {vertex} lies outside the scene bounds")]
    OutsideBounds { obstacle: usize, vertex: usize },
    #[error("scene bounds must have positive area")]
    EmptyBounds,
    #[error("max_range must be positive, got {0}")]
    BadRange(f64),
    #[error("non-finite coordinate in scene")]
    NonFinite,
    #[error("scene json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading scene: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            min: Vec2::new(xmin, ymin),
            max: Vec2::new(xmax, ymax),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Distance from `p` to the nearest wall, positive inside the rectangle.
    pub fn interior_distance(&self, p: &Vec2) -> f64 {
        (p.x - self.min.x)
            .min(self.max.x - p.x)
            .min(p.y - self.min.y)
            .min(self.max.y - p.y)
    }
}

/// Strictly convex, counter-clockwise polygon extruded to `height`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexObstacle {
    vertices: Vec<Vec2>,
    albedo: Rgb,
    height: f64,
}

impl ConvexObstacle {
    pub fn new(vertices: Vec<Vec2>, albedo: Rgb, height: f64) -> Result<Self, SceneError> {
        Self::validated(0, vertices, albedo, height)
    }

    fn validated(
        index: usize,
        vertices: Vec<Vec2>,
        albedo: Rgb,
        height: f64,
    ) -> Result<Self, SceneError> {
        let n = vertices.len();
        if n < 3 {
            return Err(SceneError::TooFewVertices { obstacle: index, count: n });
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) || !height.is_finite() {
            return Err(SceneError::NonFinite);
        }
        for i in 0..n {
            let prev = vertices[(i + n - 1) % n];
            let cur = vertices[i];
            let next = vertices[(i + 1) % n];
            if cross(&(cur - prev), &(next - cur)) <= 0.0 {
                return Err(SceneError::NotConvex { obstacle: index, vertex: i });
            }
        }
        // Positive turns at every vertex still admit star polygons; a convex
        // polygon turns through exactly one revolution.
        let turning: f64 = (0..n)
            .map(|i| {
                let e0 = vertices[i] - vertices[(i + n - 1) % n];
                let e1 = vertices[(i + 1) % n] - vertices[i];
                cross(&e0, &e1).atan2(e0.dot(&e1))
            })
            .sum();
        if (turning - std::f64::consts::TAU).abs() > 1e-6 {
            return Err(SceneError::NotConvex { obstacle: index, vertex: 0 });
        }
        if height <= 0.0 {
            return Err(SceneError::NonPositiveHeight { obstacle: index, height });
        }
        if let Some(&value) = albedo.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(SceneError::BadAlbedo { obstacle: index, value });
        }
        Ok(Self { vertices, albedo, height })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn albedo(&self) -> Rgb {
        self.albedo
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

/// Circular robot footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: Vec2,
    pub radius: f64,
}

impl Disc {
    pub fn new(center: Vec2, radius: f64) -> Self {
        debug_assert!(radius > 0.0);
        Self { center, radius }
    }
}

fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Signed distance from `point` to the boundary of `obstacle`: positive
/// outside, `-penetration` inside, zero on the boundary.
pub fn signed_distance(point: &Vec2, obstacle: &ConvexObstacle) -> f64 {
    // Largest signed offset from any edge's supporting line (outward normal).
    let mut max_offset = f64::NEG_INFINITY;
    for (a, b) in obstacle.edges() {
        let e = b - a;
        let normal = Vec2::new(e.y, -e.x) / e.norm();
        max_offset = max_offset.max(normal.dot(&(point - a)));
    }
    if max_offset <= 0.0 {
        return max_offset;
    }
    obstacle
        .edges()
        .map(|(a, b)| segment_distance(point, &a, &b))
        .fold(f64::INFINITY, f64::min)
}

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Obstacle(usize),
    Wall,
    None,
}

impl fmt::Display for Surface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Surface::Obstacle(id) => write!(f, "obstacle {id}"),
            Surface::Wall => f.write_str("wall"),
            Surface::None => f.write_str("none"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub surface: Surface,
}

/// Walkable rectangle with convex obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    obstacles: Vec<ConvexObstacle>,
    bounds: Aabb,
    wall_albedo: Rgb,
    floor_albedo: Rgb,
    max_range: f64,
}

impl Scene {
    pub fn new(
        bounds: Aabb,
        obstacles: Vec<ConvexObstacle>,
        wall_albedo: Rgb,
        floor_albedo: Rgb,
        max_range: f64,
    ) -> Result<Self, SceneError> {
        if !(bounds.width() > 0.0 && bounds.height() > 0.0) {
            return Err(SceneError::EmptyBounds);
        }
        if !(max_range > 0.0) || !max_range.is_finite() {
            return Err(SceneError::BadRange(max_range));
        }
        for (i, obstacle) in obstacles.iter().enumerate() {
            if let Some(v) = obstacle.vertices.iter().position(|v| !bounds.contains(v)) {
                return Err(SceneError::OutsideBounds { obstacle: i, vertex: v });
            }
        }
        Ok(Self {
            obstacles,
            bounds,
            wall_albedo,
            floor_albedo,
            max_range,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(text)?;
        file.into_scene()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            bounds: [self.bounds.min.x, self.bounds.min.y, self.bounds.max.x, self.bounds.max.y],
            max_range: self.max_range,
            wall_albedo: self.wall_albedo,
            floor_albedo: self.floor_albedo,
            obstacles: self
                .obstacles
                .iter()
                .map(|o| ObstacleFile {
                    vertices: o.vertices.iter().map(|v| [v.x, v.y]).collect(),
                    albedo: o.albedo,
                    height: o.height,
                })
                .collect(),
        }
    }

    pub fn obstacles(&self) -> &[ConvexObstacle] {
        &self.obstacles
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn wall_albedo(&self) -> Rgb {
        self.wall_albedo
    }

    pub fn floor_albedo(&self) -> Rgb {
        self.floor_albedo
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    /// Signed distance from `point` to the nearest obstacle or wall.
    pub fn point_clearance(&self, point: &Vec2) -> f64 {
        self.obstacles
            .iter()
            .map(|o| signed_distance(point, o))
            .fold(self.bounds.interior_distance(point), f64::min)
    }

    /// Smallest gap between the disc and any obstacle or wall; negative when
    /// the disc overlaps something.
    pub fn min_clearance(&self, footprint: &Disc) -> f64 {
        self.point_clearance(&footprint.center) - footprint.radius
    }

    /// Nearest intersection of the ray with an obstacle edge or a bound wall.
    pub fn raycast(&self, origin: &Vec2, direction: &Vec2) -> RayHit {
        debug_assert!((direction.norm() - 1.0).abs() <= DIRECTION_TOLERANCE * 10.0);
        let mut best = RayHit {
            distance: self.max_range,
            surface: Surface::None,
        };
        if let Some(t) = self.wall_hit(origin, direction) {
            if t < best.distance {
                best = RayHit { distance: t, surface: Surface::Wall };
            }
        }
        for (id, obstacle) in self.obstacles.iter().enumerate() {
            if let Some(t) = ray_polygon_hit(origin, direction, obstacle) {
                if t < best.distance {
                    best = RayHit { distance: t, surface: Surface::Obstacle(id) };
                }
            }
        }
        best
    }

    /// Every surface crossing along the ray closer than `max_range`, sorted by
    /// distance. Only the entry point into each obstacle is reported; the
    /// ray stops at the first wall.
    pub fn raycast_all(&self, origin: &Vec2, direction: &Vec2) -> Vec<RayHit> {
        let mut hits: Vec<RayHit> = self
            .obstacles
            .iter()
            .enumerate()
            .filter_map(|(id, o)| {
                ray_polygon_hit(origin, direction, o)
                    .filter(|&t| t < self.max_range)
                    .map(|t| RayHit { distance: t, surface: Surface::Obstacle(id) })
            })
            .collect();
        if let Some(t) = self.wall_hit(origin, direction).filter(|&t| t < self.max_range) {
            hits.push(RayHit { distance: t, surface: Surface::Wall });
        }
        hits.sort_by(|a, b| a.distance.total_cmp(&b.distance));
        if let Some(wall) = hits.iter().position(|h| h.surface == Surface::Wall) {
            hits.truncate(wall + 1);
        }
        hits
    }

    fn wall_hit(&self, origin: &Vec2, direction: &Vec2) -> Option<f64> {
        let b = &self.bounds;
        let mut t = f64::INFINITY;
        if direction.x > 0.0 {
            t = t.min((b.max.x - origin.x) / direction.x);
        } else if direction.x < 0.0 {
            t = t.min((b.min.x - origin.x) / direction.x);
        }
        if direction.y > 0.0 {
            t = t.min((b.max.y - origin.y) / direction.y);
        } else if direction.y < 0.0 {
            t = t.min((b.min.y - origin.y) / direction.y);
        }
        (t.is_finite() && t >= 0.0).then_some(t)
    }

    pub fn surface_albedo(&self, surface: Surface) -> Option<Rgb> {
        match surface {
            Surface::Obstacle(id) => self.obstacles.get(id).map(|o| o.albedo),
            Surface::Wall => Some(self.wall_albedo),
            Surface::None => None,
        }
    }

    pub fn surface_height(&self, surface: Surface) -> f64 {
        match surface {
            Surface::Obstacle(id) => self.obstacles[id].height,
            Surface::Wall => f64::INFINITY,
            Surface::None => 0.0,
        }
    }

    /// Monte Carlo estimate of the fraction of the bounds not covered by obstacles.
    pub fn free_space_fraction<R: rand::Rng>(&self, samples: usize, rng: &mut R) -> f64 {
        if samples == 0 {
            return 1.0;
        }
        let b = self.bounds;
        let free = (0..samples)
            .filter(|_| {
                let p = Vec2::new(
                    rng.gen_range(b.min.x..=b.max.x),
                    rng.gen_range(b.min.y..=b.max.y),
                );
                self.obstacles.iter().all(|o| signed_distance(&p, o) > 0.0)
            })
            .count();
        free as f64 / samples as f64
    }
}

/// Smallest non-negative ray parameter at which the ray meets the polygon
/// boundary.
fn ray_polygon_hit(origin: &Vec2, direction: &Vec2, obstacle: &ConvexObstacle) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (a, b) in obstacle.edges() {
        let e = b - a;
        let denom = cross(direction, &e);
        if denom.abs() < 1e-15 {
            continue;
        }
        let ao = a - origin;
        let t = cross(&ao, &e) / denom;
        let s = cross(&ao, direction) / denom;
        if t >= 0.0 && (0.0..=1.0).contains(&s) && best.map_or(true, |bt| t < bt) {
            best = Some(t);
        }
    }
    best
}

/// On-disk scene layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub bounds: [f64; 4],
    pub max_range: f64,
    pub wall_albedo: Rgb,
    pub floor_albedo: Rgb,
    #[serde(default)]
    pub obstacles: Vec<ObstacleFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObstacleFile {
    pub vertices: Vec<[f64; 2]>,
    pub albedo: Rgb,
    pub height: f64,
}

impl SceneFile {
    pub fn into_scene(self) -> Result<Scene, SceneError> {
        let [xmin, ymin, xmax, ymax] = self.bounds;
        let obstacles = self
            .obstacles
            .into_iter()
            .enumerate()
            .map(|(i, o)| {
                let vertices = o.vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect();
                ConvexObstacle::validated(i, vertices, o.albedo, o.height)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Scene::new(
            Aabb::new(xmin, ymin, xmax, ymax),
            obstacles,
            self.wall_albedo,
            self.floor_albedo,
            self.max_range,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(cx: f64, cy: f64, half: f64) -> ConvexObstacle {
        ConvexObstacle::new(
            vec![
                Vec2::new(cx - half, cy - half),
                Vec2::new(cx + half, cy - half),
                Vec2::new(cx + half, cy + half),
                Vec2::new(cx - half, cy + half),
            ],
            [0.5, 0.5, 0.5],
            1.0,
        )
        .unwrap()
    }

    fn room(obstacles: Vec<ConvexObstacle>, max_range: f64) -> Scene {
        Scene::new(
            Aabb::new(-5.0, -5.0, 5.0, 5.0),
            obstacles,
            [0.8, 0.8, 0.8],
            [0.3, 0.3, 0.3],
            max_range,
        )
        .unwrap()
    }

    #[test]
    fn signed_distance_outside_and_inside() {
        let sq = square(2.0, 0.0, 1.0);
        assert_eq!(signed_distance(&Vec2::new(0.0, 0.0), &sq), 1.0);
        assert_eq!(signed_distance(&Vec2::new(2.0, 0.0), &sq), -1.0);
        assert_eq!(signed_distance(&Vec2::new(1.0, 0.5), &sq), 0.0);
        // corner region: Euclidean distance to the vertex
        let d = signed_distance(&Vec2::new(4.0, 2.0), &sq);
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn clearance_of_empty_room() {
        let scene = room(vec![], 20.0);
        let c = scene.min_clearance(&Disc::new(Vec2::zeros(), 0.2));
        assert!((c - 4.8).abs() < 1e-12);
        let near_wall = Disc::new(Vec2::new(5.0 - 0.21, 0.0), 0.2);
        assert!((scene.min_clearance(&near_wall) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn raycast_hits_wall_and_misses() {
        let scene = Scene::new(
            Aabb::new(-5.0, -5.0, 3.0, 5.0),
            vec![],
            [1.0; 3],
            [0.0; 3],
            20.0,
        )
        .unwrap();
        let hit = scene.raycast(&Vec2::zeros(), &Vec2::new(1.0, 0.0));
        assert_eq!(hit.surface, Surface::Wall);
        assert!((hit.distance - 3.0).abs() < 1e-12);

        let big = Scene::new(Aabb::new(-50.0, -50.0, 50.0, 50.0), vec![], [1.0; 3], [0.0; 3], 20.0)
            .unwrap();
        let miss = big.raycast(&Vec2::zeros(), &Vec2::new(0.0, -1.0));
        assert_eq!(miss, RayHit { distance: 20.0, surface: Surface::None });
    }

    #[test]
    fn raycast_reports_nearest_obstacle() {
        let scene = room(vec![square(3.0, 0.0, 0.5), square(1.5, 0.0, 0.25)], 20.0);
        let hit = scene.raycast(&Vec2::zeros(), &Vec2::new(1.0, 0.0));
        assert_eq!(hit.surface, Surface::Obstacle(1));
        assert!((hit.distance - 1.25).abs() < 1e-12);
        let all = scene.raycast_all(&Vec2::zeros(), &Vec2::new(1.0, 0.0));
        let ids: Vec<_> = all.iter().map(|h| h.surface).collect();
        assert_eq!(ids, vec![Surface::Obstacle(1), Surface::Obstacle(0), Surface::Wall]);
    }

    #[test]
    fn loader_names_reflex_vertex() {
        let json = r#"{
            "bounds": [0, 0, 10, 10], "max_range": 10,
            "wall_albedo": [1, 1, 1], "floor_albedo": [0, 0, 0],
            "obstacles": [{"vertices": [[1,1],[4,1],[2,2],[4,4],[1,4]], "albedo": [1,0,0], "height": 1}]
        }"#;
        match Scene::from_json_str(json) {
            Err(SceneError::NotConvex { obstacle: 0, vertex: 2 }) => {}
            other => panic!("expected reflex vertex 2, got {other:?}"),
        }
    }

    #[test]
    fn loader_rejects_clockwise_and_out_of_bounds() {
        let cw = vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)];
        assert!(matches!(
            ConvexObstacle::new(cw, [0.0; 3], 1.0),
            Err(SceneError::NotConvex { .. })
        ));
        let far = square(9.0, 0.0, 1.0);
        assert!(matches!(
            Scene::new(Aabb::new(-5.0, -5.0, 5.0, 5.0), vec![far], [0.0; 3], [0.0; 3], 10.0),
            Err(SceneError::OutsideBounds { obstacle: 0, .. })
        ));
        assert!(matches!(
            ConvexObstacle::new(square(0.0, 0.0, 1.0).vertices().to_vec(), [0.0; 3], 0.0),
            Err(SceneError::NonPositiveHeight { .. })
        ));
    }

    #[test]
    fn scene_file_round_trip() {
        let scene = room(vec![square(1.0, 1.0, 0.5)], 12.0);
        let text = serde_json::to_string(&scene.to_file()).unwrap();
        assert_eq!(Scene::from_json_str(&text).unwrap(), scene);
    }

    #[test]
    fn free_space_fraction_of_empty_room_is_one() {
        let scene = room(vec![], 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(scene.free_space_fraction(1000, &mut rng), 1.0);
        let cluttered = room(vec![square(0.0, 0.0, 2.5)], 10.0);
        let f = cluttered.free_space_fraction(20_000, &mut rng);
        assert!((f - 0.75).abs() < 0.02, "{f}");
    }

    #[test]
    fn clearance_is_monotone_in_radius() {
        let scene = room(vec![square(1.0, 1.0, 0.5), square(-2.0, 1.0, 0.7)], 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let c = Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let r0 = rng.gen_range(0.01..1.0);
            let r1 = r0 + rng.gen_range(0.0..1.0);
            assert!(scene.min_clearance(&Disc::new(c, r1)) <= scene.min_clearance(&Disc::new(c, r0)));
        }
    }
}
