//! Polygon math and the ground-truth reachability oracle.
//!
//! Everything here works in workspace units: the workspace is the unit square,
//! `y` grows upward, and the robot sits in the half-plane `y <= boundary_y`.
//! Containment and intersection are closed: touching counts.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for on-boundary tests and degeneracy checks.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Counter-clockwise rotation about the origin.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn of(points: &[Vec2]) -> Aabb {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Aabb { min, max }
    }

    pub fn overlaps(&self, o: &Aabb, margin: f64) -> bool {
        self.min.x <= o.max.x + margin
            && o.min.x <= self.max.x + margin
            && self.min.y <= o.max.y + margin
            && o.min.y <= self.max.y + margin
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new((self.min.x + self.max.x) / 2.0, (self.min.y + self.max.y) / 2.0)
    }
}

/// Simple, counter-clockwise polygon with at least three vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

impl TryFrom<Vec<Vec2>> for Polygon {
    type Error = Error;

    fn try_from(v: Vec<Vec2>) -> Result<Self> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<Vec2> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "{} vertices, need at least 3",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        let area = signed_area(&vertices);
        if area <= EPS {
            return Err(Error::InvalidPolygon(format!(
                "signed area {area} must be positive (counter-clockwise)"
            )));
        }
        let poly = Polygon { vertices };
        if !poly.is_simple() {
            return Err(Error::InvalidPolygon("self-intersecting".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Polygon::new(vec![
            Vec2::new(x0, y0),
            Vec2::new(x1, y0),
            Vec2::new(x1, y1),
            Vec2::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::of(&self.vertices)
    }

    pub fn translate(&self, t: Vec2) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|v| v.add(t)).collect(),
        }
    }

    /// Reflection across the vertical line `x = 0`; vertex order is reversed
    /// to stay counter-clockwise.
    pub fn mirror_x(&self) -> Polygon {
        Polygon {
            vertices: self
                .vertices
                .iter()
                .rev()
                .map(|v| Vec2::new(-v.x, v.y))
                .collect(),
        }
    }

    fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // adjacent edges may only share their common vertex
                    let (a, b) = edges[i];
                    let (c, d) = edges[j];
                    let shared = if j == i + 1 { b } else { a };
                    let (other_i, other_j) = if j == i + 1 { (a, d) } else { (b, c) };
                    if collinear_overlap(edges[i], edges[j], shared)
                        || on_segment(other_j, edges[i].0, edges[i].1)
                        || on_segment(other_i, edges[j].0, edges[j].1)
                    {
                        return false;
                    }
                    continue;
                }
                if segments_intersect(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return false;
                }
            }
        }
        true
    }
}

fn collinear_overlap(e1: (Vec2, Vec2), e2: (Vec2, Vec2), shared: Vec2) -> bool {
    // Two adjacent edges fold back onto each other when they are collinear and
    // point in the same direction away from the shared vertex.
    let u = if e1.0 == shared { e1.1.sub(shared) } else { e1.0.sub(shared) };
    let v = if e2.0 == shared { e2.1.sub(shared) } else { e2.0.sub(shared) };
    u.cross(v).abs() <= EPS * (u.norm() * v.norm()).max(1.0) && u.dot(v) > 0.0
}

/// Shoelace formula; positive for counter-clockwise vertex order.
pub fn signed_area(v: &[Vec2]) -> f64 {
    let n = v.len();
    (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum::<f64>() / 2.0
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    b.sub(a).cross(c.sub(a))
}

/// `p` lies on the closed segment `ab` (within [`EPS`]).
pub fn on_segment(p: Vec2, a: Vec2, b: Vec2) -> bool {
    point_segment_distance(p, a, b) <= EPS
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.sub(a.add(ab.scale(t))).norm()
}

/// Closed segment intersection, including collinear overlap and touching
/// endpoints.
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS))
        && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS))
    {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

/// Closed containment: strictly inside or on the boundary.
pub fn point_in_polygon(p: Vec2, poly: &Polygon) -> bool {
    let mut inside = false;
    for (a, b) in poly.edges() {
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Distance from `p` to the closed polygon region (0 inside).
pub fn point_polygon_distance(p: Vec2, poly: &Polygon) -> f64 {
    if point_in_polygon(p, poly) {
        return 0.0;
    }
    poly.edges()
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// True iff the closed regions share a point: crossing edges, touching, or one
/// containing the other. Works for nonconvex polygons.
pub fn polygons_intersect(a: &Polygon, b: &Polygon) -> bool {
    if !a.bbox().overlaps(&b.bbox(), EPS) {
        return false;
    }
    for (p, q) in a.edges() {
        for (r, s) in b.edges() {
            if segments_intersect(p, q, r, s) {
                return true;
            }
        }
    }
    point_in_polygon(a.vertices[0], b) || point_in_polygon(b.vertices[0], a)
}

/// Rotate by `theta` (radians, counter-clockwise) about `pivot`, then
/// translate by `t`.
pub fn rigid_transform(poly: &Polygon, theta: f64, t: Vec2, pivot: Vec2) -> Polygon {
    let (s, c) = theta.sin_cos();
    Polygon {
        vertices: poly
            .vertices
            .iter()
            .map(|v| {
                let d = v.sub(pivot);
                Vec2::new(pivot.x + c * d.x - s * d.y + t.x, pivot.y + s * d.x + c * d.y + t.y)
            })
            .collect(),
    }
}

/// Uniform points inside `poly` by rejection sampling in its bounding box.
pub fn sample_interior_points<R: Rng + ?Sized>(poly: &Polygon, n: usize, rng: &mut R) -> Result<Vec<Vec2>> {
    let bb = poly.bbox();
    let (w, h) = (bb.max.x - bb.min.x, bb.max.y - bb.min.y);
    if poly.area() <= EPS || w <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidPolygon("cannot sample a zero-area polygon".into()));
    }
    // acceptance rate is area / bbox area; bound the work generously
    let budget = 1000 + (n as f64 * 200.0 * (w * h) / poly.area()) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..budget {
        if out.len() == n {
            break;
        }
        let p = Vec2::new(bb.min.x + rng.gen::<f64>() * w, bb.min.y + rng.gen::<f64>() * h);
        if point_in_polygon(p, poly) {
            out.push(p);
        }
    }
    if out.len() < n {
        return Err(Error::RetryBudget(format!(
            "only {} of {n} interior points after {budget} draws",
            out.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolKind {
    Stick,
    Hook,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HookSide {
    Left,
    Right,
    None,
}

/// Parametric stick or L-shaped hook.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub kind: ToolKind,
    pub handle_length: f64,
    pub handle_width: f64,
    pub hook_length: f64,
    pub hook_side: HookSide,
}

impl ToolSpec {
    pub fn stick(handle_length: f64, handle_width: f64) -> Self {
        Self {
            kind: ToolKind::Stick,
            handle_length,
            handle_width,
            hook_length: 0.0,
            hook_side: HookSide::None,
        }
    }

    pub fn hook(handle_length: f64, handle_width: f64, hook_length: f64, side: HookSide) -> Self {
        Self {
            kind: ToolKind::Hook,
            handle_length,
            handle_width,
            hook_length,
            hook_side: side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTool(m));
        if !(self.handle_width > 0.0 && self.handle_length > self.handle_width) {
            return bad(format!(
                "need handle_length > handle_width > 0, got {} / {}",
                self.handle_length, self.handle_width
            ));
        }
        match self.kind {
            ToolKind::Stick if self.hook_length != 0.0 || self.hook_side != HookSide::None => {
                bad("a stick has no hook".into())
            }
            ToolKind::Hook if self.hook_length < self.handle_width => bad(format!(
                "hook_length {} shorter than handle_width {}",
                self.hook_length, self.handle_width
            )),
            ToolKind::Hook if self.hook_side == HookSide::None => bad("a hook needs a side".into()),
            _ => Ok(()),
        }
    }
}

/// Tool outline in its canonical frame: handle along +y with the base centred
/// on the origin. A hook leaves the handle tip toward `hook_side`, sharing a
/// `width × width` corner square with the handle.
pub fn make_tool_polygon(spec: &ToolSpec) -> Result<Polygon> {
    spec.validate()?;
    let (l, w, hl) = (spec.handle_length, spec.handle_width, spec.hook_length);
    let half = w / 2.0;
    let right = match spec.kind {
        ToolKind::Stick => return Polygon::rect(-half, 0.0, half, l),
        // a hook no longer than the handle is wide is just the corner square
        ToolKind::Hook if hl - w <= 1e-9 => return Polygon::rect(-half, 0.0, half, l),
        ToolKind::Hook => Polygon::new(vec![
            Vec2::new(-half, 0.0),
            Vec2::new(half, 0.0),
            Vec2::new(half, l - w),
            Vec2::new(-half + hl, l - w),
            Vec2::new(-half + hl, l),
            Vec2::new(-half, l),
        ])?,
    };
    Ok(match spec.hook_side {
        HookSide::Left => right.mirror_x(),
        _ => right,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioType {
    A,
    B,
    C,
    D,
    E,
}

impl ScenarioType {
    pub const ALL: [ScenarioType; 5] = [
        ScenarioType::A,
        ScenarioType::B,
        ScenarioType::C,
        ScenarioType::D,
        ScenarioType::E,
    ];

    pub fn letter(self) -> char {
        match self {
            ScenarioType::A => 'A',
            ScenarioType::B => 'B',
            ScenarioType::C => 'C',
            ScenarioType::D => 'D',
            ScenarioType::E => 'E',
        }
    }
}

impl std::fmt::Display for ScenarioType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl std::str::FromStr for ScenarioType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioType::ALL
            .into_iter()
            .find(|t| s.eq_ignore_ascii_case(&t.letter().to_string()))
            .ok_or_else(|| Error::InvalidScenario(format!("unknown scenario type {s:?}")))
    }
}

/// One reaching task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scn_type: ScenarioType,
    pub boundary_y: f64,
    pub target: Vec2,
    pub obstacles: Vec<Polygon>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let inside = |p: Vec2| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y);
        let bad = |m: &str| Err(Error::InvalidScenario(m.into()));
        if self.target.y <= self.boundary_y {
            return bad("target must lie above the boundary");
        }
        if !inside(self.target) {
            return bad("target outside the workspace");
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.vertices().iter().all(|&v| inside(v)) {
                return bad("obstacle vertex outside the workspace");
            }
            if point_in_polygon(self.target, o) {
                return bad("target inside an obstacle");
            }
            if self.obstacles[i + 1..].iter().any(|p| polygons_intersect(o, p)) {
                return bad("obstacles overlap");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub n_interior_points: usize,
    pub rotation_min_deg: f64,
    pub rotation_max_deg: f64,
    pub rotation_steps: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_interior_points: 100,
            rotation_min_deg: -60.0,
            rotation_max_deg: 60.0,
            rotation_steps: 25,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_interior_points == 0 || self.rotation_steps == 0 {
            return Err(Error::Config("oracle needs at least one point and one rotation".into()));
        }
        if self.rotation_min_deg > self.rotation_max_deg {
            return Err(Error::Config("rotation_min_deg > rotation_max_deg".into()));
        }
        Ok(())
    }

    /// Rotation angles in radians, uniformly spaced over the closed range.
    /// A single step uses the middle of the range.
    pub fn rotations(&self) -> Vec<f64> {
        let (lo, hi) = (self.rotation_min_deg, self.rotation_max_deg);
        if self.rotation_steps == 1 {
            return vec![((lo + hi) / 2.0).to_radians()];
        }
        let step = (hi - lo) / (self.rotation_steps - 1) as f64;
        (0..self.rotation_steps)
            .map(|i| (lo + step * i as f64).to_radians())
            .collect()
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Whether some sampled interior point of the tool, overlaid on the target,
/// and some rotation about that point give a pose that reaches into
/// `y <= boundary_y` without touching an obstacle.
pub fn feasible(scenario: &Scenario, spec: &ToolSpec, cfg: &OracleConfig) -> Result<bool> {
    cfg.validate()?;
    let poly = make_tool_polygon(spec)?;
    let points = sample_interior_points(&poly, cfg.n_interior_points, &mut cfg.rng())?;
    let rotations = cfg.rotations();
    let obstacle_boxes: Vec<Aabb> = scenario.obstacles.iter().map(Polygon::bbox).collect();
    for p in points {
        let shift = scenario.target.sub(p);
        for &theta in &rotations {
            let posed = rigid_transform(&poly, theta, shift, p);
            let reaches = posed.vertices.iter().any(|v| v.y <= scenario.boundary_y);
            if !reaches {
                continue;
            }
            let bb = posed.bbox();
            let collides = scenario
                .obstacles
                .iter()
                .zip(&obstacle_boxes)
                .any(|(o, ob)| bb.overlaps(ob, EPS) && polygons_intersect(&posed, o));
            if !collides {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Outcome of the reachability check on a rasterized tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterVerdict {
    Feasible,
    Infeasible,
    /// No occupied pixel: there is no tool to pose.
    EmptyTool,
}

impl RasterVerdict {
    pub fn is_feasible(self) -> bool {
        self == RasterVerdict::Feasible
    }
}

/// Occupied pixels of a binary tool silhouette, in the tool's own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolPixels {
    /// Pixel centers in workspace units relative to the frame center.
    pub centers: Vec<Vec2>,
    /// Side length of one pixel in workspace units.
    pub pixel_size: f64,
}

/// The oracle's decision procedure run on pixels: occupied-pixel centers are
/// the candidate overlay points, and each posed pixel counts as a disk of
/// half a pixel's width for the boundary and collision tests.
pub fn raster_feasible(scenario: &Scenario, tool: &ToolPixels, cfg: &OracleConfig) -> Result<RasterVerdict> {
    cfg.validate()?;
    if tool.centers.is_empty() {
        log::warn!("raster feasibility: empty tool silhouette");
        return Ok(RasterVerdict::EmptyTool);
    }
    let mut rng = cfg.rng();
    let overlays: Vec<Vec2> = (0..cfg.n_interior_points)
        .map(|_| tool.centers[rng.gen_range(0..tool.centers.len())])
        .collect();
    let radius = tool.pixel_size / 2.0;
    let rotations: Vec<(f64, f64)> = cfg.rotations().iter().map(|t| t.sin_cos()).collect();
    let obstacle_boxes: Vec<Aabb> = scenario.obstacles.iter().map(Polygon::bbox).collect();
    let mut posed = Vec::with_capacity(tool.centers.len());
    for p in overlays {
        for &(s, c) in &rotations {
            posed.clear();
            let mut min_y = f64::INFINITY;
            for q in &tool.centers {
                let d = q.sub(p);
                let v = Vec2::new(scenario.target.x + c * d.x - s * d.y, scenario.target.y + s * d.x + c * d.y);
                min_y = min_y.min(v.y);
                posed.push(v);
            }
            if min_y - radius > scenario.boundary_y {
                continue;
            }
            let bb = Aabb::of(&posed);
            let collides = scenario.obstacles.iter().zip(&obstacle_boxes).any(|(o, ob)| {
                bb.overlaps(ob, radius)
                    && posed.iter().any(|&v| {
                        v.x >= ob.min.x - radius
                            && v.x <= ob.max.x + radius
                            && v.y >= ob.min.y - radius
                            && v.y <= ob.max.y + radius
                            && point_polygon_distance(v, o) <= radius
                    })
            });
            if !collides {
                return Ok(RasterVerdict::Feasible);
            }
        }
    }
    Ok(RasterVerdict::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l_polygon() -> Polygon {
        make_tool_polygon(&ToolSpec::hook(0.4, 0.05, 0.15, HookSide::Right)).unwrap()
    }

    fn open_scenario(boundary: f64, target_y: f64) -> Scenario {
        Scenario {
            scn_type: ScenarioType::A,
            boundary_y: boundary,
            target: Vec2::new(0.5, target_y),
            obstacles: vec![],
        }
    }

    #[test]
    fn stick_and_hook_areas() {
        let stick = make_tool_polygon(&ToolSpec::stick(0.4, 0.05)).unwrap();
        assert!((stick.area() - 0.020).abs() < 1e-12);
        let hook = l_polygon();
        // independent shoelace on the hand-listed L outline
        let v = [
            (-0.025, 0.0),
            (0.025, 0.0),
            (0.025, 0.35),
            (0.125, 0.35),
            (0.125, 0.4),
            (-0.025, 0.4),
        ];
        let mut twice: f64 = 0.0;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[(i + 1) % v.len()]);
            twice += a.0 * b.1 - b.0 * a.1;
        }
        assert!((twice / 2.0 - 0.025).abs() < 1e-12);
        assert!((hook.area() - 0.025).abs() < 1e-12);
    }

    #[test]
    fn hook_sides_mirror() {
        let r = make_tool_polygon(&ToolSpec::hook(0.4, 0.05, 0.15, HookSide::Right)).unwrap();
        let l = make_tool_polygon(&ToolSpec::hook(0.4, 0.05, 0.15, HookSide::Left)).unwrap();
        assert!((r.area() - l.area()).abs() < 1e-12);
        assert_eq!(r.mirror_x(), l);
        assert!(l.bbox().min.x < -0.1);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(make_tool_polygon(&ToolSpec::stick(0.04, 0.05)).is_err());
        assert!(make_tool_polygon(&ToolSpec::hook(0.4, 0.05, 0.02, HookSide::Left)).is_err());
        assert!(make_tool_polygon(&ToolSpec::hook(0.4, 0.05, 0.1, HookSide::None)).is_err());
        let mut s = ToolSpec::stick(0.4, 0.05);
        s.hook_length = 0.1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn polygon_validation() {
        assert!(Polygon::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)]).is_err());
        // clockwise
        assert!(Polygon::new(vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0)]).is_err());
        // bow tie
        let bow = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ];
        assert!(Polygon::new(bow).is_err());
        assert!(Polygon::rect(0.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn identity_transform_and_quarter_turn() {
        let sq = Polygon::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(rigid_transform(&sq, 0.0, Vec2::default(), Vec2::default()), sq);
        let turned = rigid_transform(&sq, std::f64::consts::FRAC_PI_2, Vec2::default(), Vec2::new(0.5, 0.5));
        for v in sq.vertices() {
            assert!(turned
                .vertices()
                .iter()
                .any(|w| (w.x - v.x).abs() < 1e-12 && (w.y - v.y).abs() < 1e-12));
        }
    }

    #[test]
    fn containment_cases() {
        let sq = Polygon::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(point_in_polygon(Vec2::new(0.5, 0.5), &sq));
        assert!(point_in_polygon(Vec2::new(1.0, 0.3), &sq));
        assert!(point_in_polygon(Vec2::new(0.0, 0.0), &sq));
        assert!(!point_in_polygon(Vec2::new(2.0, 0.5), &sq));
        // notch of the L: right of the handle, below the hook
        let l = l_polygon();
        assert!(!point_in_polygon(Vec2::new(0.08, 0.2), &l));
        assert!(point_in_polygon(Vec2::new(0.08, 0.37), &l));
        assert!(point_in_polygon(Vec2::new(0.0, 0.2), &l));
    }

    #[test]
    fn intersection_cases() {
        let a = Polygon::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        let far = Polygon::rect(3.0, 0.0, 4.0, 1.0).unwrap();
        let inner = Polygon::rect(0.25, 0.25, 0.5, 0.5).unwrap();
        let touching = Polygon::rect(1.0, 0.0, 2.0, 1.0).unwrap();
        assert!(!polygons_intersect(&a, &far));
        assert!(polygons_intersect(&a, &inner));
        assert!(polygons_intersect(&inner, &a));
        assert!(polygons_intersect(&a, &touching));
        // a block sitting in the L's notch does not touch it
        let notch = Polygon::rect(0.05, 0.1, 0.1, 0.3).unwrap();
        assert!(!polygons_intersect(&l_polygon(), &notch));
    }

    #[test]
    fn interior_sampling() {
        let poly = l_polygon();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = sample_interior_points(&poly, 100, &mut rng).unwrap();
        assert_eq!(pts.len(), 100);
        assert!(pts.iter().all(|&p| point_in_polygon(p, &poly)));
        let again = sample_interior_points(&poly, 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(pts, again);
    }

    #[test]
    fn interior_sampling_mean_on_rectangle() {
        let rect = Polygon::rect(0.0, 0.0, 2.0, 1.0).unwrap();
        let n = 4000;
        let pts = sample_interior_points(&rect, n, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mx = pts.iter().map(|p| p.x).sum::<f64>() / n as f64;
        let my = pts.iter().map(|p| p.y).sum::<f64>() / n as f64;
        // uniform on [0, a]: sd = a / sqrt(12)
        let sx = 2.0 / 12f64.sqrt() / (n as f64).sqrt();
        let sy = 1.0 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mx - 1.0).abs() < 3.0 * sx, "{mx}");
        assert!((my - 0.5).abs() < 3.0 * sy, "{my}");
    }

    #[test]
    fn degenerate_polygon_cannot_be_sampled() {
        // Polygon::new refuses zero area, so build one by squashing a valid one
        let flat = Polygon {
            vertices: vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)],
        };
        assert!(sample_interior_points(&flat, 5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn reach_in_open_space() {
        let cfg = OracleConfig::default();
        let sc = open_scenario(0.3, 0.6);
        assert!(feasible(&sc, &ToolSpec::stick(0.4, 0.05), &cfg).unwrap());
        assert!(!feasible(&sc, &ToolSpec::stick(0.2, 0.05), &cfg).unwrap());
    }

    /// Dense brute force over overlay points and angles for the short stick:
    /// the lowest reachable point is never below the boundary.
    #[test]
    fn short_stick_brute_force_confirms_no_reach() {
        let poly = make_tool_polygon(&ToolSpec::stick(0.2, 0.05)).unwrap();
        let target = Vec2::new(0.5, 0.6);
        let mut lowest = f64::INFINITY;
        for i in 0..=40 {
            for j in 0..=40 {
                let p = Vec2::new(-0.025 + 0.05 * i as f64 / 40.0, 0.2 * j as f64 / 40.0);
                for k in 0..=240 {
                    let theta = (-60.0 + 0.5 * k as f64).to_radians();
                    let posed = rigid_transform(&poly, theta, target.sub(p), p);
                    for v in posed.vertices() {
                        lowest = lowest.min(v.y);
                    }
                }
            }
        }
        assert!(lowest > 0.3, "lowest {lowest}");
    }

    fn corridor(gap: f64) -> Scenario {
        let (x0, x1) = (0.5 - gap / 2.0, 0.5 + gap / 2.0);
        Scenario {
            scn_type: ScenarioType::B,
            boundary_y: 0.2,
            target: Vec2::new(0.5, 0.55),
            obstacles: vec![
                Polygon::rect(0.0, 0.3, x0, 0.5).unwrap(),
                Polygon::rect(x1, 0.3, 1.0, 0.5).unwrap(),
            ],
        }
    }

    #[test]
    fn wide_tool_does_not_fit_a_narrow_corridor() {
        let cfg = OracleConfig::default();
        let sc = corridor(0.04);
        assert!(!feasible(&sc, &ToolSpec::stick(0.5, 0.06), &cfg).unwrap());
        assert!(feasible(&sc, &ToolSpec::stick(0.5, 0.02), &cfg).unwrap());
    }

    /// Brute force independent of the polygon predicates: fill the wide stick
    /// with a fine point lattice and sweep a dense grid of overlay points and
    /// angles. Every pose that reaches the boundary puts a lattice point
    /// inside a wall.
    #[test]
    fn corridor_brute_force_agrees() {
        let sc = corridor(0.04);
        let lattice: Vec<Vec2> = (0..=12)
            .flat_map(|i| (0..=100).map(move |j| Vec2::new(-0.03 + 0.005 * i as f64, 0.005 * j as f64)))
            .collect();
        let in_wall = |v: Vec2| {
            v.y >= 0.3 && v.y <= 0.5 && (v.x <= 0.48 || v.x >= 0.52)
        };
        for pi in 0..=6 {
            for pj in 0..=25 {
                let p = Vec2::new(-0.03 + 0.01 * pi as f64, 0.02 * pj as f64);
                for k in 0..=120 {
                    let theta = (-60.0 + k as f64).to_radians();
                    let posed: Vec<Vec2> = lattice
                        .iter()
                        .map(|q| q.sub(p).rotate(theta).add(sc.target))
                        .collect();
                    if posed.iter().any(|v| v.y <= sc.boundary_y) {
                        assert!(posed.iter().any(|&v| in_wall(v)), "pose p={p:?} theta={theta}");
                    }
                }
            }
        }
    }

    #[test]
    fn raster_oracle_on_empty_tool() {
        let sc = open_scenario(0.3, 0.6);
        let empty = ToolPixels {
            centers: vec![],
            pixel_size: 1.0 / 64.0,
        };
        assert_eq!(
            raster_feasible(&sc, &empty, &OracleConfig::default()).unwrap(),
            RasterVerdict::EmptyTool
        );
    }

    #[test]
    fn rotations_are_five_degree_steps() {
        let r = OracleConfig::default().rotations();
        assert_eq!(r.len(), 25);
        assert!((r[0] + 60f64.to_radians()).abs() < 1e-12);
        assert!((r[24] - 60f64.to_radians()).abs() < 1e-12);
        assert!((r[1] - r[0] - 5f64.to_radians()).abs() < 1e-12);
    }

    fn arb_polygon() -> impl Strategy<Value = Polygon> {
        (0.15f64..0.6, 0.02f64..0.1, 0.0f64..0.25, 0u8..3).prop_map(|(l, w, hl, side)| {
            let spec = match side {
                0 => ToolSpec::stick(l, w),
                1 => ToolSpec::hook(l, w, hl.max(w), HookSide::Left),
                _ => ToolSpec::hook(l, w, hl.max(w), HookSide::Right),
            };
            make_tool_polygon(&spec).unwrap()
        })
    }

    proptest! {
        #[test]
        fn rigid_motion_preserves_area(poly in arb_polygon(), theta in -7.0f64..7.0,
                                        tx in -2.0f64..2.0, ty in -2.0f64..2.0,
                                        px in -1.0f64..1.0, py in -1.0f64..1.0) {
            let moved = rigid_transform(&poly, theta, Vec2::new(tx, ty), Vec2::new(px, py));
            prop_assert!((moved.area() - poly.area()).abs() < 1e-9);
            prop_assert_eq!(moved.vertices().len(), poly.vertices().len());
        }

        #[test]
        fn intersection_is_symmetric(a in arb_polygon(), b in arb_polygon(),
                                     theta in -3.2f64..3.2, tx in -0.3f64..0.3, ty in -0.3f64..0.3) {
            let b = rigid_transform(&b, theta, Vec2::new(tx, ty), Vec2::default());
            prop_assert_eq!(polygons_intersect(&a, &b), polygons_intersect(&b, &a));
        }

        #[test]
        fn samples_are_contained(poly in arb_polygon(), seed in 0u64..10_000) {
            let pts = sample_interior_points(&poly, 50, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(pts.iter().all(|&p| point_in_polygon(p, &poly)));
        }

        /// A shorter stick nested inside a longer one at the same pose never
        /// collides when the longer one is clear.
        #[test]
        fn containment_monotonicity(scale in 0.3f64..1.0, theta in -1.0f64..1.0,
                                    ox in 0.0f64..1.0, oy in 0.0f64..1.0, gap in 0.03f64..0.12) {
            let big = make_tool_polygon(&ToolSpec::stick(0.5, 0.05)).unwrap();
            let small = make_tool_polygon(&ToolSpec::stick(0.5 * scale, 0.05 * scale)).unwrap()
                .translate(Vec2::new(0.0, 0.5 * (1.0 - scale) * 0.5));
            let sc = corridor(gap);
            let shift = Vec2::new(ox, oy);
            let pb = rigid_transform(&big, theta, shift, Vec2::default());
            let ps = rigid_transform(&small, theta, shift, Vec2::default());
            let clear_big = sc.obstacles.iter().all(|o| !polygons_intersect(&pb, o));
            if clear_big {
                prop_assert!(sc.obstacles.iter().all(|o| !polygons_intersect(&ps, o)));
            }
        }
    }
}
