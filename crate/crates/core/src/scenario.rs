//! Scenario files: arena, stacks, wall footprint, robot start, noise and
//! simulation overrides. JSON, versioned by `"schema": 1`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidPose;
use crate::mission::{plan_sequence, Basket, BrickTask, Mission, TaskKind, WallCell};
use crate::sim::{LocalizationNoise, NoiseParams, Sim, SimConfig, Waypoints};
use crate::render::SensorNoise;
use crate::world::{BasketContents, BrickCatalog, BrickColor, BrickStack, CarriedBrick, WallFootprint, WorldState};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{line}:{column}: at `{field}`: {msg}")]
    Parse { field: String, line: usize, column: usize, msg: String },
    #[error("invalid `{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// Planar pose with the heading in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub yaw_deg: f64,
}

impl PoseSpec {
    pub fn pose(&self) -> RigidPose {
        RigidPose::planar(self.x, self.y, self.yaw_deg.to_radians())
    }

    pub fn from_pose(p: &RigidPose) -> Self {
        Self { x: p.x, y: p.y, yaw_deg: p.yaw.to_degrees() }
    }
}

fn default_gap() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSpec {
    pub color: BrickColor,
    pub x: f64,
    pub y: f64,
    /// Heading of the brick long axis.
    #[serde(default)]
    pub yaw_deg: f64,
    /// Bricks per layer, bottom first.
    pub layers: Vec<usize>,
    #[serde(default = "default_gap")]
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootprintSpec {
    /// Rightmost near corner (seen from the working side); the heading
    /// points along the wall.
    pub corner: PoseSpec,
    /// Defaults to the length of the bottom row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    pub width: f64,
    /// Rows bottom first, one color code per brick: "RRGGBB".
    pub blueprint: Vec<String>,
}

fn default_capacity() -> u32 {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasketSpec {
    #[serde(default = "default_capacity")]
    pub capacity: u32,
    /// Bricks already in the basket at start, in loading order.
    #[serde(default)]
    pub preload: Vec<BrickColor>,
}

impl Default for BasketSpec {
    fn default() -> Self {
        Self { capacity: default_capacity(), preload: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePreset {
    Off,
    /// Calibrated against field magnitudes.
    Field,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseFields {
    #[serde(default)]
    pub sigma_px: f64,
    #[serde(default)]
    pub depth_a: f64,
    #[serde(default)]
    pub sigma_xy: f64,
    #[serde(default)]
    pub sigma_yaw_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Preset(NoisePreset),
    Custom(NoiseFields),
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Preset(NoisePreset::Off)
    }
}

impl NoiseSpec {
    pub fn params(&self) -> NoiseParams {
        match self {
            NoiseSpec::Preset(NoisePreset::Off) => NoiseParams::off(),
            NoiseSpec::Preset(NoisePreset::Field) => NoiseParams::field_like(),
            NoiseSpec::Custom(f) => NoiseParams {
                sensor: SensorNoise { sigma_px: f.sigma_px, depth_a: f.depth_a },
                localization: LocalizationNoise { sigma_xy: f.sigma_xy, sigma_yaw: f.sigma_yaw_deg.to_radians() },
            },
        }
    }

    /// `off`, `field`, or a JSON object with the individual fields.
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let quoted = if s.trim_start().starts_with('{') { s.to_string() } else { format!("\"{s}\"") };
        serde_json::from_str(&quoted).map_err(|e| invalid("noise", format!("{e}: expected off, field or a field object")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSpec {
    #[serde(default)]
    pub stacks: BTreeMap<BrickColor, PoseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall: Option<PoseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub arena: Arena,
    #[serde(default)]
    pub bricks: BrickCatalog,
    pub stacks: Vec<StackSpec>,
    pub footprint: FootprintSpec,
    pub robot: PoseSpec,
    #[serde(default)]
    pub basket: BasketSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Explicit task list such as `["B_R@0.0"]`; planned from the blueprint
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<WaypointSpec>,
    #[serde(default)]
    pub sim: SimConfig,
}

fn color_of(c: char) -> Option<BrickColor> {
    BrickColor::ALL.into_iter().find(|b| b.code() == c)
}

/// Parses the `K_C@row.index` task notation.
pub fn parse_task(s: &str) -> Option<BrickTask> {
    let (head, cell) = s.split_once('@')?;
    let (kind, color) = head.split_once('_')?;
    let kind = match kind {
        "L" => TaskKind::Load,
        "B" => TaskKind::Build,
        _ => return None,
    };
    let mut cs = color.chars();
    let color = color_of(cs.next()?)?;
    if cs.next().is_some() {
        return None;
    }
    let (row, index) = cell.split_once('.')?;
    Some(BrickTask { kind, color, cell: WallCell { row: row.parse().ok()?, index: index.parse().ok()? } })
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse { field, line: inner.line(), column: inner.column(), msg: inner.to_string() }
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn blueprint(&self) -> Result<Vec<Vec<BrickColor>>, ConfigError> {
        self.footprint
            .blueprint
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| color_of(c).ok_or_else(|| invalid(format!("footprint.blueprint[{i}]"), format!("unknown color code {c:?}"))))
                    .collect()
            })
            .collect()
    }

    pub fn footprint_length(&self) -> Result<f64, ConfigError> {
        let bp = self.blueprint()?;
        Ok(self.footprint.length.unwrap_or_else(|| bp.first().map(|r| r.iter().map(|&c| self.bricks.get(c).length).sum()).unwrap_or(0.0)))
    }

    pub fn tasks(&self) -> Result<Vec<BrickTask>, ConfigError> {
        match &self.tasks {
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, s)| parse_task(s).ok_or_else(|| invalid(format!("tasks[{i}]"), format!("expected K_C@row.index, got {s:?}"))))
                .collect(),
            None => plan_sequence(&self.blueprint()?, |c| self.bricks.get(c).slot_cost, self.basket.capacity)
                .map_err(|e| invalid("footprint.blueprint", e.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("schema", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        let a = &self.arena;
        if !(a.x_max > a.x_min && a.y_max > a.y_min) {
            return Err(invalid("arena", "empty arena"));
        }
        for c in BrickColor::ALL {
            self.bricks.get(c).validate().map_err(|m| invalid(format!("bricks.{c}"), m))?;
        }
        for (i, s) in self.stacks.iter().enumerate() {
            BrickStack::new(s.color, s.x, s.y, 0.0, s.layers.clone(), s.gap).map_err(|e| invalid(format!("stacks[{i}]"), e.to_string()))?;
        }
        let bp = self.blueprint()?;
        if bp.is_empty() || bp.iter().any(|r| r.is_empty()) {
            return Err(invalid("footprint.blueprint", "rows must be non-empty"));
        }
        let length = self.footprint_length()?;
        for (i, row) in bp.iter().enumerate() {
            let l: f64 = row.iter().map(|&c| self.bricks.get(c).length).sum();
            if l > length + 1e-9 {
                return Err(invalid(format!("footprint.blueprint[{i}]"), format!("row is {l:.2} m long, footprint only {length:.2} m")));
            }
        }
        if !(self.footprint.width > 0.0) {
            return Err(invalid("footprint.width", "must be positive"));
        }
        if self.basket.preload.len() > self.basket.capacity as usize {
            return Err(invalid("basket.preload", "more bricks than slots"));
        }
        if self.basket.preload.iter().map(|&c| self.bricks.get(c).slot_cost).sum::<u32>() > self.basket.capacity {
            return Err(invalid("basket.preload", "exceeds basket capacity"));
        }
        if !self.basket.preload.is_empty() && self.tasks.is_none() {
            return Err(invalid("tasks", "a preloaded basket needs an explicit task list"));
        }
        let tasks = self.tasks()?;
        for t in &tasks {
            let row = bp.get(t.cell.row).ok_or_else(|| invalid("tasks", format!("{t}: row outside the blueprint")))?;
            if row.get(t.cell.index) != Some(&t.color) {
                return Err(invalid("tasks", format!("{t}: cell does not hold that color in the blueprint")));
            }
        }
        for c in BrickColor::ALL {
            let loads = tasks.iter().filter(|t| t.kind == TaskKind::Load && t.color == c).count();
            let available: usize = self.stacks.iter().filter(|s| s.color == c).map(|s| s.layers.iter().sum::<usize>()).sum();
            if loads > available {
                return Err(invalid("stacks", format!("{loads} {c} bricks needed, {available} in stacks")));
            }
            if loads > 0 && self.stacks.iter().all(|s| s.color != c) {
                return Err(invalid("stacks", format!("no {c} stack")));
            }
        }
        self.sim.validate().map_err(|m| invalid("sim", m))?;
        Ok(())
    }

    /// Default area-navigation goals: 2.6 m in front of each stack on the
    /// robot's side, and a point 2.5 m out from the wall near its corner.
    pub fn waypoints(&self) -> Waypoints {
        let start = Vector2::new(self.robot.x, self.robot.y);
        let spec = self.waypoints.clone().unwrap_or(WaypointSpec { stacks: BTreeMap::new(), wall: None });
        let mut stacks = BTreeMap::new();
        for s in &self.stacks {
            if stacks.contains_key(&s.color) {
                continue;
            }
            let p = match spec.stacks.get(&s.color) {
                Some(p) => p.pose(),
                None => {
                    let c = Vector2::new(s.x, s.y);
                    let d = (start - c).try_normalize(1e-9).unwrap_or(Vector2::new(-1.0, 0.0));
                    let g = c + d * 2.6;
                    RigidPose::planar(g.x, g.y, (-d.y).atan2(-d.x))
                }
            };
            stacks.insert(s.color, p);
        }
        let wall = spec.wall.map(|p| p.pose()).unwrap_or_else(|| {
            let c = self.footprint.corner.pose();
            let axis = Vector2::new(c.yaw.cos(), c.yaw.sin());
            let out = Vector2::new(-axis.y, axis.x);
            let g = Vector2::new(c.x, c.y) + axis * 0.6 + out * 2.5;
            RigidPose::planar(g.x, g.y, c.yaw - FRAC_PI_2)
        });
        Waypoints { stacks, wall }
    }

    pub fn world(&self) -> Result<WorldState, ConfigError> {
        let stacks = self
            .stacks
            .iter()
            .enumerate()
            .map(|(i, s)| {
                BrickStack::new(s.color, s.x, s.y, s.yaw_deg.to_radians(), s.layers.clone(), s.gap).map_err(|e| invalid(format!("stacks[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let fp = WallFootprint {
            corner: self.footprint.corner.pose(),
            length: self.footprint_length()?,
            width: self.footprint.width,
            blueprint: self.blueprint()?,
        };
        let mut basket = BasketContents::new(self.basket.capacity);
        for (i, &c) in self.basket.preload.iter().enumerate() {
            basket.slots[i] = Some(CarriedBrick { color: c, yaw_offset: 0.0, offset: [0.0, 0.0] });
        }
        Ok(WorldState::new(self.bricks.clone(), stacks, fp, self.robot.pose(), self.sim.observe_pose, basket))
    }

    pub fn mission(&self) -> Result<Mission, ConfigError> {
        let mut basket = Basket::new(self.basket.capacity);
        for &c in &self.basket.preload {
            basket.store(c, self.bricks.get(c).slot_cost).map_err(|e| invalid("basket.preload", e.to_string()))?;
        }
        Ok(Mission::new(self.sim.mission, self.tasks()?, basket, self.blueprint()?, self.footprint.width, self.bricks.clone()))
    }

    /// A ready-to-run simulation of this scenario.
    pub fn build(&self, seed: u64) -> Result<Sim, ConfigError> {
        self.validate()?;
        let a = &self.arena;
        Ok(Sim::new(
            self.sim.clone(),
            self.world()?,
            self.mission()?,
            self.noise.params(),
            seed,
            [a.x_min, a.y_min, a.x_max, a.y_max],
            self.waypoints(),
        ))
    }
}

/// Six-brick wall (two of each of red, green, blue) in a 10 x 7.5 m arena.
pub fn full_mission() -> Scenario {
    let stack = |color, x: f64, y: f64| StackSpec { color, x, y, yaw_deg: 90.0, layers: vec![2], gap: 0.05 };
    Scenario {
        schema: SCHEMA_VERSION,
        name: "full-mission".into(),
        arena: Arena { x_min: -1.0, y_min: -3.75, x_max: 9.0, y_max: 3.75 },
        bricks: BrickCatalog::default(),
        stacks: vec![stack(BrickColor::Red, 7.5, 2.5), stack(BrickColor::Green, 7.5, 0.8), stack(BrickColor::Blue, 7.5, -1.6)],
        footprint: FootprintSpec {
            corner: PoseSpec { x: 0.0, y: -2.2, yaw_deg: 0.0 },
            length: None,
            width: 0.3,
            blueprint: vec!["RRGGBB".into()],
        },
        robot: PoseSpec { x: 0.0, y: 0.0, yaw_deg: 0.0 },
        basket: BasketSpec::default(),
        noise: NoiseSpec::Preset(NoisePreset::Off),
        tasks: None,
        waypoints: None,
        sim: SimConfig::default(),
    }
}

/// Single pickup: a red stack seen from `distance` with its long axis at
/// `orientation` (radians) relative to the robot's line of sight.
pub fn loading(distance: f64, orientation: f64, bearing: f64, noise: NoiseSpec) -> Scenario {
    let (sx, sy) = (distance * bearing.cos(), distance * bearing.sin());
    Scenario {
        schema: SCHEMA_VERSION,
        name: "loading".into(),
        arena: Arena { x_min: -3.0, y_min: -4.0, x_max: distance + 3.0, y_max: 4.0 },
        bricks: BrickCatalog::default(),
        stacks: vec![StackSpec { color: BrickColor::Red, x: sx, y: sy, yaw_deg: (bearing + orientation).to_degrees(), layers: vec![2, 2], gap: 0.05 }],
        footprint: FootprintSpec { corner: PoseSpec { x: -2.0, y: -3.0, yaw_deg: 0.0 }, length: None, width: 0.3, blueprint: vec!["R".into()] },
        robot: PoseSpec { x: 0.0, y: 0.0, yaw_deg: 0.0 },
        basket: BasketSpec::default(),
        noise,
        tasks: Some(vec!["L_R@0.0".into()]),
        waypoints: None,
        sim: SimConfig { skip_area_navigation: true, max_sim_time: 300.0, ..SimConfig::default() },
    }
}

/// Single drop of a preloaded red brick onto the first cell of a pattern
/// seen from `distance` with its axis at `orientation` to the line of sight.
pub fn unloading(distance: f64, orientation: f64, bearing: f64, noise: NoiseSpec) -> Scenario {
    let (cx, cy) = (distance * bearing.cos(), distance * bearing.sin());
    // pattern runs to the robot's left from the sighted corner
    let yaw = bearing + FRAC_PI_2 + orientation;
    Scenario {
        schema: SCHEMA_VERSION,
        name: "unloading".into(),
        arena: Arena { x_min: -3.0, y_min: -4.0, x_max: distance + 4.0, y_max: 4.0 },
        bricks: BrickCatalog::default(),
        stacks: vec![],
        footprint: FootprintSpec { corner: PoseSpec { x: cx, y: cy, yaw_deg: yaw.to_degrees() }, length: Some(1.2), width: 0.3, blueprint: vec!["RRRR".into()] },
        robot: PoseSpec { x: 0.0, y: 0.0, yaw_deg: 0.0 },
        basket: BasketSpec { capacity: 4, preload: vec![BrickColor::Red] },
        noise,
        tasks: Some(vec!["B_R@0.0".into()]),
        waypoints: None,
        sim: SimConfig { skip_area_navigation: true, max_sim_time: 300.0, ..SimConfig::default() },
    }
}
