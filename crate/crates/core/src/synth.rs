//! Scripted driving scenarios: lane geometry, a hazard, an ego state, and the
//! expert path, speed profile and instruction that go with them.
//!
//! Everything is expressed in the ego frame: x forward, y to the left, meters.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{EgoState, SymbolVocab, EOS, N_SPEEDS, N_WAYPOINTS, RASTER_SIZE};

pub const GENERATOR_VERSION: u32 = 1;
pub const CRUISE_SPEED: f64 = 8.0;
pub const MAX_SPEED: f64 = 15.0;
/// m/s change allowed per 1 s profile step.
pub const MAX_SPEED_STEP: f64 = 2.0;
pub const CELL_SIZE: f64 = 2.0;
const RASTER_X_MIN: f64 = -4.0;
const RASTER_Y_MAX: f64 = 16.0;

pub const LANE_CELL: f64 = 0.5;
pub const HAZARD_CELL: f64 = 1.0;
pub const EGO_CELL: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    Follow,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Command {
    pub const ALL: [Command; 4] = [
        Command::Follow,
        Command::TurnLeft,
        Command::TurnRight,
        Command::Stop,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Command::Follow => "CMD_FOLLOW",
            Command::TurnLeft => "CMD_TURN_LEFT",
            Command::TurnRight => "CMD_TURN_RIGHT",
            Command::Stop => "CMD_STOP",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Follow => "follow",
            Command::TurnLeft => "turn_left",
            Command::TurnRight => "turn_right",
            Command::Stop => "stop",
        }
    }

    pub fn from_symbol_id(vocab: &SymbolVocab, id: usize) -> Option<Command> {
        Command::ALL
            .into_iter()
            .find(|c| vocab.id(c.symbol()) == Some(id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LaneGeometry {
    Straight,
    LeftArc { radius: f64 },
    RightArc { radius: f64 },
}

impl LaneGeometry {
    /// Signed curvature, positive to the left.
    pub fn curvature(&self) -> f64 {
        match *self {
            LaneGeometry::Straight => 0.0,
            LaneGeometry::LeftArc { radius } => 1.0 / radius,
            LaneGeometry::RightArc { radius } => -1.0 / radius,
        }
    }

    /// Centerline point at arc length `s` from the ego position.
    pub fn point(&self, s: f64) -> [f64; 2] {
        match *self {
            LaneGeometry::Straight => [s, 0.0],
            LaneGeometry::LeftArc { radius: r } => [r * (s / r).sin(), r * (1.0 - (s / r).cos())],
            LaneGeometry::RightArc { radius: r } => [r * (s / r).sin(), -r * (1.0 - (s / r).cos())],
        }
    }

    /// Unit left normal at arc length `s`.
    pub fn normal(&self, s: f64) -> [f64; 2] {
        let heading = s * self.curvature();
        [-heading.sin(), heading.cos()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Hazard {
    None,
    LeadVehicle { distance: f64, speed: f64 },
    StopLine { distance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub lane: LaneGeometry,
    /// Arc length of the target point along the lane.
    pub target_distance: f64,
    pub target_point: [f64; 2],
    pub command: Command,
    pub hazard: Hazard,
    pub ego: EgoState,
}

/// One training example; the on-disk record has exactly these fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingSample {
    pub raster: Vec<Vec<f64>>,
    pub goal: Vec<usize>,
    pub command: usize,
    pub target_point: [f64; 2],
    pub ego: EgoState,
    pub path: Vec<[f64; 2]>,
    pub speeds: Vec<f64>,
    pub instruction: Vec<usize>,
}

impl DrivingSample {
    pub fn validate(&self) -> std::result::Result<(), &'static str> {
        if self.raster.len() != RASTER_SIZE || self.raster.iter().any(|r| r.len() != RASTER_SIZE) {
            return Err("raster");
        }
        if self.path.len() != N_WAYPOINTS {
            return Err("path");
        }
        if self.speeds.len() != N_SPEEDS {
            return Err("speeds");
        }
        if self.instruction.is_empty() {
            return Err("instruction");
        }
        if self.ego.validate().is_err() {
            return Err("ego");
        }
        Ok(())
    }
}

pub fn sample_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.gen();
    let command = if u < 0.5 {
        Command::Follow
    } else if u < 0.7 {
        Command::TurnLeft
    } else if u < 0.9 {
        Command::TurnRight
    } else {
        Command::Stop
    };
    let lane = match command {
        Command::Follow | Command::Stop => LaneGeometry::Straight,
        Command::TurnLeft => LaneGeometry::LeftArc {
            radius: rng.gen_range(8.0..40.0),
        },
        Command::TurnRight => LaneGeometry::RightArc {
            radius: rng.gen_range(8.0..40.0),
        },
    };
    let target_distance = rng.gen_range(18.0..25.0);
    let hazard = if command == Command::Stop {
        Hazard::StopLine {
            distance: rng.gen_range(4.0..20.0),
        }
    } else if rng.gen_bool(0.4) {
        Hazard::LeadVehicle {
            distance: rng.gen_range(4.0..20.0),
            speed: rng.gen_range(2.0..6.0),
        }
    } else {
        Hazard::None
    };
    let v = rng.gen_range(6.0..10.0);
    let ego = EgoState {
        v,
        a: rng.gen_range(-1.0..1.0),
        yaw: rng.gen_range(-PI..PI),
        yaw_rate: v * lane.curvature(),
    };
    Scenario {
        seed,
        lane,
        target_distance,
        target_point: lane.point(target_distance),
        command,
        hazard,
        ego,
    }
}

/// Lane centerline sampled at 1 m arc-length steps, s = 1..=20.
pub fn expert_path(sc: &Scenario) -> Vec<[f64; 2]> {
    (1..=N_WAYPOINTS).map(|k| sc.lane.point(k as f64)).collect()
}

/// 1 Hz profile: move from the current speed toward the hazard-appropriate
/// speed, never changing by more than 2 m/s per step.
pub fn expert_speed(sc: &Scenario) -> Vec<f64> {
    let target = match sc.hazard {
        Hazard::None => CRUISE_SPEED,
        Hazard::LeadVehicle { speed, .. } => speed,
        Hazard::StopLine { .. } => 0.0,
    };
    let mut v = sc.ego.v;
    (0..N_SPEEDS)
        .map(|_| {
            v += (target - v).clamp(-MAX_SPEED_STEP, MAX_SPEED_STEP);
            v = v.clamp(0.0, MAX_SPEED);
            v
        })
        .collect()
}

/// `[hazard, maneuver, speed intent, EOS]`
pub fn expert_instruction(sc: &Scenario, vocab: &SymbolVocab) -> Vec<usize> {
    let (hazard, intent) = match sc.hazard {
        Hazard::None => ("SYM_CLEAR", "SYM_CRUISE"),
        Hazard::LeadVehicle { .. } => ("SYM_LEAD", "SYM_SLOW"),
        Hazard::StopLine { .. } => ("SYM_STOPLINE", "SYM_HALT"),
    };
    let maneuver = match sc.command {
        Command::Follow => "SYM_FOLLOW",
        Command::TurnLeft => "SYM_TURN_LEFT",
        Command::TurnRight => "SYM_TURN_RIGHT",
        Command::Stop => "SYM_STOP",
    };
    vec![
        vocab.sym(hazard),
        vocab.sym(maneuver),
        vocab.sym(intent),
        EOS,
    ]
}

pub fn goal_prompt(sc: &Scenario, vocab: &SymbolVocab) -> Vec<usize> {
    let [x, y] = sc.target_point;
    let bearing = y.atan2(x);
    let dir = if bearing > 0.3 {
        "GOAL_LEFT"
    } else if bearing < -0.3 {
        "GOAL_RIGHT"
    } else {
        "GOAL_AHEAD"
    };
    let dist = if sc.target_distance < 21.5 {
        "GOAL_NEAR"
    } else {
        "GOAL_FAR"
    };
    vec![vocab.sym("GOAL_REACH"), vocab.sym(dir), vocab.sym(dist)]
}

fn cell_of(p: [f64; 2]) -> Option<(usize, usize)> {
    let r = ((p[0] - RASTER_X_MIN) / CELL_SIZE).floor();
    let c = ((RASTER_Y_MAX - p[1]) / CELL_SIZE).floor();
    let n = RASTER_SIZE as f64;
    (r >= 0.0 && r < n && c >= 0.0 && c < n).then_some((r as usize, c as usize))
}

/// 16×16 occupancy grid of 2 m cells covering x ∈ [−4, 28), y ∈ (−16, 16].
pub fn rasterize(sc: &Scenario) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; RASTER_SIZE]; RASTER_SIZE];
    let mut s = -4.0;
    while s <= 32.0 {
        if let Some((r, c)) = cell_of(sc.lane.point(s)) {
            g[r][c] = LANE_CELL;
        }
        s += 0.25;
    }
    if let Some((r, c)) = cell_of([0.0, 0.0]) {
        g[r][c] = EGO_CELL;
    }
    match sc.hazard {
        Hazard::None => {}
        Hazard::LeadVehicle { distance, .. } => {
            if let Some((r, c)) = cell_of(sc.lane.point(distance)) {
                g[r][c] = HAZARD_CELL;
            }
        }
        Hazard::StopLine { distance } => {
            let p = sc.lane.point(distance);
            let n = sc.lane.normal(distance);
            for off in [-CELL_SIZE, 0.0, CELL_SIZE] {
                if let Some((r, c)) = cell_of([p[0] + off * n[0], p[1] + off * n[1]]) {
                    g[r][c] = HAZARD_CELL;
                }
            }
        }
    }
    g
}

pub fn make_sample(sc: &Scenario, vocab: &SymbolVocab) -> DrivingSample {
    DrivingSample {
        raster: rasterize(sc),
        goal: goal_prompt(sc, vocab),
        command: vocab.sym(sc.command.symbol()),
        target_point: sc.target_point,
        ego: sc.ego,
        path: expert_path(sc),
        speeds: expert_speed(sc),
        instruction: expert_instruction(sc, vocab),
    }
}

/// Samples for seeds `seed_start .. seed_start + count`.
pub fn generate(seed_start: u64, count: usize, vocab: &SymbolVocab) -> Vec<DrivingSample> {
    (0..count as u64)
        .map(|i| make_sample(&sample_scenario(seed_start + i), vocab))
        .collect()
}

pub fn write_dataset(samples: &[DrivingSample], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| Error::Internal(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_record(line: &str, line_no: usize) -> Result<DrivingSample> {
    use serde_json::error::Category;
    let mut de = serde_json::Deserializer::from_str(line);
    let sample: DrivingSample = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let inner = e.inner();
        match inner.classify() {
            Category::Data => {
                let path = e.path().to_string();
                let field = match path.split(['.', '[']).next() {
                    Some(f) if !f.is_empty() && f != "?" => f.to_string(),
                    // missing and unknown fields are reported at the record level
                    _ => {
                        let msg = inner.to_string();
                        msg.split('`').nth(1).unwrap_or("record").to_string()
                    }
                };
                Error::Schema {
                    line: line_no,
                    field,
                }
            }
            _ => Error::Parse {
                line: line_no,
                message: inner.to_string(),
            },
        }
    })?;
    de.end().map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    sample.validate().map_err(|field| Error::Schema {
        line: line_no,
        field: field.into(),
    })?;
    Ok(sample)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DrivingSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, i + 1)?);
    }
    Ok(out)
}
