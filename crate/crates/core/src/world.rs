//! Ground-truth arena: bricks, stacks, the wall footprint and the robot.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{axis_angle, axis_angle_diff, normalize_angle, optical_in_effector, RigidPose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("brick {0:?} was already picked")]
    AlreadyPicked(BrickId),
    #[error("brick {0:?} does not exist")]
    NoSuchBrick(BrickId),
    #[error("grasp failed: planar offset {offset:.3} m, yaw error {yaw_err:.3} rad")]
    GraspFailed { offset: f64, yaw_err: f64 },
    #[error("no contact with a brick")]
    NoContact,
    #[error("electromagnet is off")]
    MagnetOff,
    #[error("no brick attached")]
    NoBrickAttached,
    #[error("a brick is already attached")]
    AlreadyHolding,
    #[error("invalid stack layout: {0}")]
    InvalidStack(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrickColor {
    Red,
    Green,
    Blue,
    Orange,
}

impl BrickColor {
    pub const ALL: [BrickColor; 4] = [BrickColor::Red, BrickColor::Green, BrickColor::Blue, BrickColor::Orange];

    pub fn code(&self) -> char {
        match self {
            BrickColor::Red => 'R',
            BrickColor::Green => 'G',
            BrickColor::Blue => 'B',
            BrickColor::Orange => 'O',
        }
    }
}

impl fmt::Display for BrickColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BrickColor::Red => "red",
            BrickColor::Green => "green",
            BrickColor::Blue => "blue",
            BrickColor::Orange => "orange",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrickSpec {
    pub color: BrickColor,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub patch_length: f64,
    pub patch_width: f64,
    pub slot_cost: u32,
}

impl BrickSpec {
    pub fn default_for(color: BrickColor) -> Self {
        let (length, slot_cost) = match color {
            BrickColor::Red => (0.30, 1),
            BrickColor::Green => (0.60, 2),
            BrickColor::Blue => (1.20, 4),
            BrickColor::Orange => (1.80, 4),
        };
        Self {
            color,
            length,
            width: 0.20,
            height: 0.20,
            patch_length: length / 2.0,
            patch_width: 0.10,
            slot_cost,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.height > 0.0 && self.length > 0.0 && self.width > 0.0) {
            return Err(format!("{} brick dimensions must be positive", self.color));
        }
        if !(self.patch_length > 0.0 && self.patch_width > 0.0) {
            return Err(format!("{} patch dimensions must be positive", self.color));
        }
        if self.patch_length > self.length || self.patch_width > self.width {
            return Err(format!("{} patch does not fit on the brick top", self.color));
        }
        Ok(())
    }
}

/// Per-color brick dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrickCatalog {
    pub red: BrickSpec,
    pub green: BrickSpec,
    pub blue: BrickSpec,
    pub orange: BrickSpec,
}

impl Default for BrickCatalog {
    fn default() -> Self {
        Self {
            red: BrickSpec::default_for(BrickColor::Red),
            green: BrickSpec::default_for(BrickColor::Green),
            blue: BrickSpec::default_for(BrickColor::Blue),
            orange: BrickSpec::default_for(BrickColor::Orange),
        }
    }
}

impl BrickCatalog {
    pub fn get(&self, color: BrickColor) -> &BrickSpec {
        match color {
            BrickColor::Red => &self.red,
            BrickColor::Green => &self.green,
            BrickColor::Blue => &self.blue,
            BrickColor::Orange => &self.orange,
        }
    }

    /// Common brick height; all colors share it in a stacked wall.
    pub fn brick_height(&self) -> f64 {
        self.red.height
    }
}

/// An oriented box standing on a horizontal surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrickBox {
    pub color: BrickColor,
    pub center: Vector3<f64>,
    pub yaw: f64,
    /// Half extents along the brick's length, width and height.
    pub half: Vector3<f64>,
    pub patch_half: Vector2<f64>,
    /// Whether the magnetic patch is drawn on the top face.
    pub show_patch: bool,
}

impl BrickBox {
    pub fn top_z(&self) -> f64 {
        self.center.z + self.half.z
    }

    /// Point in the box's local frame (origin at the center, x along length).
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let l = self.to_local(&Vector3::new(x, y, self.center.z));
        l.x.abs() <= self.half.x && l.y.abs() <= self.half.y
    }

    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        rect_corners(Vector2::new(self.center.x, self.center.y), self.yaw, self.half.x, self.half.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BrickId {
    pub stack: usize,
    pub layer: usize,
    pub slot: usize,
}

/// A color-sorted stack: layers bottom-up, bricks side by side across their width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrickStack {
    pub color: BrickColor,
    /// Center of the bottom layer on the ground, in the map frame.
    pub x: f64,
    pub y: f64,
    /// Heading of the bricks' long axis.
    pub yaw: f64,
    pub layers: Vec<usize>,
    /// Gap between neighboring bricks of one layer.
    pub gap: f64,
    pub picked: Vec<Vec<bool>>,
}

impl BrickStack {
    pub fn new(color: BrickColor, x: f64, y: f64, yaw: f64, layers: Vec<usize>, gap: f64) -> Result<Self, WorldError> {
        if layers.is_empty() || layers[0] == 0 {
            return Err(WorldError::InvalidStack("stack needs at least one brick".into()));
        }
        if layers.windows(2).any(|w| w[1] > w[0]) {
            return Err(WorldError::InvalidStack("upper layers cannot be wider than lower ones".into()));
        }
        if layers.iter().any(|&n| n == 0) {
            return Err(WorldError::InvalidStack("empty layer".into()));
        }
        let picked = layers.iter().map(|&n| vec![false; n]).collect();
        Ok(Self { color, x, y, yaw: normalize_angle(yaw), layers, gap, picked })
    }

    pub fn brick_count(&self) -> usize {
        self.layers.iter().sum()
    }

    pub fn remaining(&self) -> usize {
        self.picked.iter().flatten().filter(|p| !**p).count()
    }

    fn slot_offset(&self, slot: usize, spec: &BrickSpec) -> f64 {
        let n = self.layers[0] as f64;
        (slot as f64 - (n - 1.0) / 2.0) * (spec.width + self.gap)
    }

    fn check(&self, layer: usize, slot: usize, stack: usize) -> Result<(), WorldError> {
        let id = BrickId { stack, layer, slot };
        match self.picked.get(layer).and_then(|l| l.get(slot)) {
            None => Err(WorldError::NoSuchBrick(id)),
            Some(true) => Err(WorldError::AlreadyPicked(id)),
            Some(false) => Ok(()),
        }
    }

    pub fn brick_box(&self, layer: usize, slot: usize, spec: &BrickSpec) -> BrickBox {
        let off = self.slot_offset(slot, spec);
        let (s, c) = self.yaw.sin_cos();
        BrickBox {
            color: self.color,
            center: Vector3::new(self.x - s * off, self.y + c * off, (layer as f64 + 0.5) * spec.height),
            yaw: self.yaw,
            half: Vector3::new(spec.length / 2.0, spec.width / 2.0, spec.height / 2.0),
            patch_half: Vector2::new(spec.patch_length / 2.0, spec.patch_width / 2.0),
            show_patch: true,
        }
    }

    /// Unpicked bricks as boxes, with their ids.
    pub fn boxes(&self, stack_index: usize, spec: &BrickSpec) -> Vec<(BrickId, BrickBox)> {
        let mut out = Vec::new();
        for (layer, row) in self.picked.iter().enumerate() {
            for (slot, picked) in row.iter().enumerate() {
                if !picked {
                    out.push((BrickId { stack: stack_index, layer, slot }, self.brick_box(layer, slot, spec)));
                }
            }
        }
        out
    }

    /// Highest unpicked brick of every slot.
    pub fn top_bricks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for slot in 0..self.layers[0] {
            let top = (0..self.layers.len()).rev().find(|&l| slot < self.layers[l] && !self.picked[l][slot]);
            if let Some(layer) = top {
                out.push((layer, slot));
            }
        }
        out
    }

    pub fn is_top(&self, layer: usize, slot: usize) -> bool {
        self.top_bricks().contains(&(layer, slot))
    }
}

/// Ground-truth pose of the magnetic patch on top of brick `(layer, slot)`.
pub fn ground_truth_patch_pose(stack: &BrickStack, stack_index: usize, layer: usize, slot: usize, spec: &BrickSpec) -> Result<RigidPose, WorldError> {
    stack.check(layer, slot, stack_index)?;
    let b = stack.brick_box(layer, slot, spec);
    Ok(RigidPose::new(b.center.x, b.center.y, b.top_z(), 0.0, 0.0, b.yaw))
}

/// Wall footprint. In the corner frame the pattern spans `x in [0, length]`
/// and `y in [-width, 0]`; the robot works from the `+y` side, so the origin
/// is the rightmost near corner as seen by the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallFootprint {
    pub corner: RigidPose,
    pub length: f64,
    pub width: f64,
    /// Rows bottom-up; each row is read starting at the corner.
    pub blueprint: Vec<Vec<BrickColor>>,
}

impl WallFootprint {
    pub fn axis(&self) -> Vector2<f64> {
        Vector2::new(self.corner.yaw.cos(), self.corner.yaw.sin())
    }

    /// Unit vector pointing from the pattern toward the robot's side.
    pub fn outward(&self) -> Vector2<f64> {
        let a = self.axis();
        Vector2::new(-a.y, a.x)
    }

    pub fn to_local(&self, p: Vector2<f64>) -> Vector2<f64> {
        let d = p - Vector2::new(self.corner.x, self.corner.y);
        Vector2::new(d.dot(&self.axis()), d.dot(&self.outward()))
    }

    pub fn from_local(&self, l: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.corner.x, self.corner.y) + self.axis() * l.x + self.outward() * l.y
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        let l = self.to_local(p);
        l.x >= 0.0 && l.x <= self.length && l.y <= 0.0 && l.y >= -self.width
    }

    pub fn polygon(&self) -> [Vector2<f64>; 4] {
        [
            self.from_local(Vector2::new(0.0, 0.0)),
            self.from_local(Vector2::new(self.length, 0.0)),
            self.from_local(Vector2::new(self.length, -self.width)),
            self.from_local(Vector2::new(0.0, -self.width)),
        ]
    }

    pub fn brick_count(&self) -> usize {
        self.blueprint.iter().map(|r| r.len()).sum()
    }
}

/// End-effector (gripper face center) pose in the base frame. The gripper
/// face normal is the effector `x` axis; `pitch = pi/2` points it at the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectorPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EffectorPose {
    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.x, self.y, self.z),
            UnitQuaternion::from_euler_angles(0.0, self.pitch, self.yaw),
        )
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Planar distance from the arm axis (base origin).
    pub fn planar_range(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Heading of the gripper's long axis (effector `y`) in the base frame.
    pub fn grip_axis(&self) -> f64 {
        normalize_angle(self.yaw + FRAC_PI_2)
    }
}

/// Mounting of the eye-in-hand camera relative to the gripper face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMount {
    /// Camera optical center in the effector frame.
    pub offset: [f64; 3],
}

impl Default for CameraMount {
    fn default() -> Self {
        // 5 cm behind the gripper face, 8 cm toward the effector z axis
        Self { offset: [-0.05, 0.0, 0.08] }
    }
}

impl CameraMount {
    /// Camera (optical) frame to base frame.
    pub fn camera_in_base(&self, e: &EffectorPose) -> Isometry3<f64> {
        let mount = Isometry3::from_parts(Translation3::new(self.offset[0], self.offset[1], self.offset[2]), optical_in_effector());
        e.isometry() * mount
    }
}

/// A brick held by the gripper or lying in a basket slot, with its pose
/// relative to the gripper captured at grasp time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarriedBrick {
    pub color: BrickColor,
    /// Brick long-axis heading minus gripper axis heading.
    pub yaw_offset: f64,
    /// Brick center minus gripper center, in gripper-axis coordinates.
    pub offset: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedBrick {
    pub color: BrickColor,
    pub x: f64,
    pub y: f64,
    /// Height of the brick's bottom face.
    pub z: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub color: BrickColor,
    /// Brick center in the footprint frame.
    pub along: f64,
    pub across: f64,
    pub z: f64,
    /// Brick axis minus wall axis, radians in (-pi/2, pi/2].
    pub yaw_error: f64,
    pub inside_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasketContents {
    pub capacity: u32,
    pub slots: Vec<Option<CarriedBrick>>,
}

impl BasketContents {
    pub fn new(capacity: u32) -> Self {
        Self { capacity, slots: vec![None; capacity as usize] }
    }

    pub fn count(&self) -> usize {
        self.slots.iter().flatten().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspConfig {
    pub grasp_radius: f64,
    pub yaw_tolerance: f64,
    pub contact_epsilon: f64,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self { grasp_radius: 0.05, yaw_tolerance: 10f64.to_radians(), contact_epsilon: 0.002 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub bricks: BrickCatalog,
    pub stacks: Vec<BrickStack>,
    pub footprint: WallFootprint,
    pub placed: Vec<PlacedBrick>,
    /// Robot base in the map frame (planar).
    pub base: RigidPose,
    pub effector: EffectorPose,
    pub camera: CameraMount,
    pub magnet_on: bool,
    pub attached: Option<CarriedBrick>,
    pub basket: BasketContents,
    pub grasp: GraspConfig,
    pub clock: f64,
    pub initial_bricks: usize,
}

impl WorldState {
    pub fn new(
        bricks: BrickCatalog,
        stacks: Vec<BrickStack>,
        footprint: WallFootprint,
        base: RigidPose,
        effector: EffectorPose,
        basket: BasketContents,
    ) -> Self {
        let initial = stacks.iter().map(|s| s.remaining()).sum::<usize>() + basket.count();
        Self {
            bricks,
            stacks,
            footprint,
            placed: Vec::new(),
            base,
            effector,
            camera: CameraMount::default(),
            magnet_on: false,
            attached: None,
            basket,
            grasp: GraspConfig::default(),
            clock: 0.0,
            initial_bricks: initial,
        }
    }

    pub fn base_isometry(&self) -> Isometry3<f64> {
        self.base.to_isometry()
    }

    pub fn camera_pitch(&self) -> f64 {
        self.effector.pitch
    }

    /// Camera (optical) frame to map frame.
    pub fn camera_in_map(&self) -> Isometry3<f64> {
        self.base_isometry() * self.camera.camera_in_base(&self.effector)
    }

    /// Gripper face center in the map frame.
    pub fn gripper_in_map(&self) -> Vector3<f64> {
        (self.base_isometry() * Point3::from(self.effector.position())).coords
    }

    /// Gripper long axis heading in the map frame.
    pub fn grip_axis_in_map(&self) -> f64 {
        normalize_angle(self.base.yaw + self.effector.grip_axis())
    }

    pub fn brick_count_total(&self) -> usize {
        let in_stacks: usize = self.stacks.iter().map(|s| s.remaining()).sum();
        in_stacks + self.basket.count() + self.attached.iter().count() + self.placed.len()
    }

    /// Every solid box currently on the ground: stack bricks and placed bricks.
    pub fn boxes(&self) -> Vec<BrickBox> {
        let mut out = Vec::new();
        for (i, s) in self.stacks.iter().enumerate() {
            let spec = self.bricks.get(s.color);
            out.extend(s.boxes(i, spec).into_iter().map(|(_, b)| b));
        }
        for p in &self.placed {
            out.push(self.placed_box(p));
        }
        out
    }

    pub fn placed_box(&self, p: &PlacedBrick) -> BrickBox {
        let spec = self.bricks.get(p.color);
        BrickBox {
            color: p.color,
            center: Vector3::new(p.x, p.y, p.z + spec.height / 2.0),
            yaw: p.yaw,
            half: Vector3::new(spec.length / 2.0, spec.width / 2.0, spec.height / 2.0),
            patch_half: Vector2::new(spec.patch_length / 2.0, spec.patch_width / 2.0),
            show_patch: true,
        }
    }

    /// Top height of whatever lies under `(x, y)`: the highest brick containing
    /// the point, or the ground.
    pub fn surface_height(&self, x: f64, y: f64) -> f64 {
        self.boxes().iter().filter(|b| b.contains_xy(x, y)).map(|b| b.top_z()).fold(0.0, f64::max)
    }

    /// Top stack brick whose footprint contains `(x, y)`, if its top is the
    /// highest surface there.
    fn stack_brick_under(&self, x: f64, y: f64) -> Option<(BrickId, BrickBox)> {
        let surface = self.surface_height(x, y);
        for (i, s) in self.stacks.iter().enumerate() {
            let spec = self.bricks.get(s.color);
            for (layer, slot) in s.top_bricks() {
                let b = s.brick_box(layer, slot, spec);
                if b.contains_xy(x, y) && (b.top_z() - surface).abs() < 1e-9 {
                    return Some((BrickId { stack: i, layer, slot }, b));
                }
            }
        }
        None
    }

    /// Lowest point of whatever the gripper carries (its face when empty).
    pub fn gripper_bottom(&self) -> f64 {
        let g = self.gripper_in_map();
        match &self.attached {
            Some(b) => g.z - self.bricks.get(b.color).height,
            None => g.z,
        }
    }
}

/// True when the gripper face (or the bottom of a held brick) is within the
/// contact tolerance of the surface beneath the gripper center.
pub fn contact_triggered(world: &WorldState) -> bool {
    let g = world.gripper_in_map();
    let surface = world.surface_height(g.x, g.y);
    world.gripper_bottom() - surface <= world.grasp.contact_epsilon
}

/// Engages the brick under the gripper if the misalignment is within the
/// gripper's passive compliance.
pub fn attach_brick(world: &mut WorldState) -> Result<BrickId, WorldError> {
    if world.attached.is_some() {
        return Err(WorldError::AlreadyHolding);
    }
    if !world.magnet_on {
        return Err(WorldError::MagnetOff);
    }
    if !contact_triggered(world) {
        return Err(WorldError::NoContact);
    }
    let g = world.gripper_in_map();
    let (id, b) = world.stack_brick_under(g.x, g.y).ok_or(WorldError::NoContact)?;
    let offset_v = Vector2::new(b.center.x - g.x, b.center.y - g.y);
    let offset = offset_v.norm();
    let grip = world.grip_axis_in_map();
    let yaw_err = axis_angle_diff(b.yaw, grip);
    if offset > world.grasp.grasp_radius || yaw_err.abs() > world.grasp.yaw_tolerance {
        return Err(WorldError::GraspFailed { offset, yaw_err });
    }
    let (s, c) = grip.sin_cos();
    let local = [c * offset_v.x + s * offset_v.y, -s * offset_v.x + c * offset_v.y];
    world.stacks[id.stack].picked[id.layer][id.slot] = true;
    world.attached = Some(CarriedBrick { color: b.color, yaw_offset: yaw_err, offset: local });
    Ok(id)
}

/// Releases the held brick onto the surface beneath it.
pub fn place_brick(world: &mut WorldState) -> Result<PlacementRecord, WorldError> {
    let carried = world.attached.ok_or(WorldError::NoBrickAttached)?;
    let g = world.gripper_in_map();
    let grip = world.grip_axis_in_map();
    let (s, c) = grip.sin_cos();
    let cx = g.x + c * carried.offset[0] - s * carried.offset[1];
    let cy = g.y + s * carried.offset[0] + c * carried.offset[1];
    let yaw = axis_angle(grip + carried.yaw_offset);
    let z = world.surface_height(cx, cy);
    let placed = PlacedBrick { color: carried.color, x: cx, y: cy, z, yaw };
    let spec = *world.bricks.get(carried.color);
    let brick_poly = rect_corners(Vector2::new(cx, cy), yaw, spec.length / 2.0, spec.width / 2.0);
    let inside = convex_intersection_area(&brick_poly, &world.footprint.polygon()) / (spec.length * spec.width);
    let local = world.footprint.to_local(Vector2::new(cx, cy));
    world.attached = None;
    world.magnet_on = false;
    world.placed.push(placed);
    Ok(PlacementRecord {
        color: carried.color,
        along: local.x,
        across: local.y,
        z,
        yaw_error: axis_angle_diff(yaw, world.footprint.corner.yaw),
        inside_fraction: inside.clamp(0.0, 1.0),
    })
}

/// Corners (counter-clockwise) of a rectangle centered at `c`.
pub fn rect_corners(c: Vector2<f64>, yaw: f64, half_len: f64, half_wid: f64) -> [Vector2<f64>; 4] {
    let (s, co) = yaw.sin_cos();
    let ax = Vector2::new(co, s) * half_len;
    let ay = Vector2::new(-s, co) * half_wid;
    [c - ax - ay, c + ax - ay, c + ax + ay, c - ax + ay]
}

pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    a.abs() / 2.0
}

/// Area of the intersection of two convex polygons (Sutherland-Hodgman).
pub fn convex_intersection_area(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> f64 {
    let ccw = |poly: &[Vector2<f64>]| -> Vec<Vector2<f64>> {
        let n = poly.len();
        let signed: f64 = (0..n).map(|i| poly[i].x * poly[(i + 1) % n].y - poly[(i + 1) % n].x * poly[i].y).sum();
        let mut v = poly.to_vec();
        if signed < 0.0 {
            v.reverse();
        }
        v
    };
    let clip = ccw(clip);
    let mut out = ccw(subject);
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: &Vector2<f64>| (b - a).perp(&(p - a));
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let sp = side(&p);
            let sq = side(&q);
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push(p + (q - p) * t);
            }
        }
    }
    polygon_area(&out)
}
