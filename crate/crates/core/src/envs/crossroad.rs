//! CrossRoad: an 8x10 cell road rendered at 8 px/cell (64x80 RGB).
//!
//! The agent climbs from the bottom row across 6 lanes of moving cars.
//! Reaching the top scores +1 and teleports the agent back to the start;
//! a collision resets the agent to the bottom row. Episodes cap at 500 steps.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GameFrame, PixelEnv, SpriteBox, StepOutcome};
use crate::error::{CoreError, Result};

pub const CELL: usize = 8;
pub const ROWS: usize = 8;
pub const COLS: usize = 10;
pub const LANES: usize = 6;
pub const STEP_CAP: usize = 500;

const GOAL_ROW: [f32; 3] = [0.10, 0.55, 0.15];
const ROAD_EVEN: [f32; 3] = [0.07, 0.07, 0.08];
const ROAD_ODD: [f32; 3] = [0.10, 0.10, 0.11];
const START_ROW: [f32; 3] = [0.25, 0.25, 0.28];
const AGENT: [f32; 3] = [1.00, 0.85, 0.20];
const CAR_COLORS: [[f32; 3]; LANES] = [
    [0.85, 0.20, 0.20],
    [0.20, 0.60, 0.90],
    [0.90, 0.60, 0.15],
    [0.70, 0.30, 0.80],
    [0.30, 0.80, 0.40],
    [0.90, 0.90, 0.30],
];

pub struct CrossRoad {
    agent: (usize, usize),
    cars: [usize; LANES], // column of the single car per lane (rows 1..=6)
    crossings: u32,
    steps: usize,
    done: bool,
    start_col: usize,
}

impl CrossRoad {
    pub fn new() -> Self {
        Self {
            agent: (ROWS - 1, COLS / 2),
            cars: [0; LANES],
            crossings: 0,
            steps: 0,
            done: true,
            start_col: COLS / 2,
        }
    }

    /// Odd lanes drive right every step; even lanes drive left every 2nd step.
    fn advance_cars(&mut self) {
        for lane in 0..LANES {
            let every_other = lane % 2 == 0;
            if every_other && self.steps % 2 != 0 {
                continue;
            }
            let dir: isize = if lane % 2 == 0 { -1 } else { 1 };
            let col = self.cars[lane] as isize + dir;
            self.cars[lane] = col.rem_euclid(COLS as isize) as usize;
        }
    }

    fn car_hit(&self) -> bool {
        let (r, c) = self.agent;
        (1..=LANES).contains(&r) && self.cars[r - 1] == c
    }

    fn render(&self) -> GameFrame {
        let mut f = GameFrame::new(ROWS * CELL, COLS * CELL);
        for r in 0..ROWS {
            let color = if r == 0 {
                GOAL_ROW
            } else if r == ROWS - 1 {
                START_ROW
            } else if r % 2 == 0 {
                ROAD_EVEN
            } else {
                ROAD_ODD
            };
            f.fill_rect(r * CELL, 0, CELL, COLS * CELL, color);
        }
        for lane in 0..LANES {
            f.fill_rect(
                (lane + 1) * CELL,
                self.cars[lane] * CELL,
                CELL,
                CELL,
                CAR_COLORS[lane],
            );
        }
        let (ar, ac) = self.agent;
        f.fill_rect(ar * CELL, ac * CELL, CELL, CELL, AGENT);
        f
    }

    pub fn crossings(&self) -> u32 {
        self.crossings
    }
}

impl Default for CrossRoad {
    fn default() -> Self {
        Self::new()
    }
}

impl PixelEnv for CrossRoad {
    fn name(&self) -> &'static str {
        "cross_road"
    }

    fn frame_height(&self) -> usize {
        ROWS * CELL
    }

    fn frame_width(&self) -> usize {
        COLS * CELL
    }

    fn num_actions(&self) -> usize {
        3 // up, stay, down
    }

    fn reset(&mut self, seed: u64) -> GameFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.start_col = COLS / 2;
        self.agent = (ROWS - 1, self.start_col);
        for lane in 0..LANES {
            self.cars[lane] = rng.gen_range(0..COLS);
        }
        self.crossings = 0;
        self.steps = 0;
        self.done = false;
        self.render()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(CoreError::Usage("step on a terminal episode".into()));
        }
        if action >= self.num_actions() {
            return Err(CoreError::Usage(format!("action {action} out of range")));
        }
        self.steps += 1;
        let (r, c) = self.agent;
        let mut reward = 0.0f32;
        match action {
            0 => {
                if r == 1 {
                    // crossed; score and restart from the bottom
                    reward += 1.0;
                    self.crossings += 1;
                    self.agent = (ROWS - 1, self.start_col);
                } else {
                    self.agent = (r - 1, c);
                }
            }
            2 => {
                if r < ROWS - 1 {
                    self.agent = (r + 1, c);
                }
            }
            _ => {}
        }
        if self.car_hit() {
            self.agent = (ROWS - 1, self.agent.1);
        }
        self.advance_cars();
        if self.car_hit() {
            self.agent = (ROWS - 1, self.agent.1);
        }
        if self.steps >= STEP_CAP {
            self.done = true;
        }
        Ok(StepOutcome {
            frame: self.render(),
            reward,
            done: self.done,
        })
    }

    fn is_terminal(&self) -> bool {
        self.done
    }

    fn oracle_features(&self) -> Vec<f32> {
        let mut f = vec![self.agent.0 as f32, self.agent.1 as f32];
        f.extend(self.cars.iter().map(|&c| c as f32));
        f
    }

    fn feature_names(&self) -> Vec<&'static str> {
        vec![
            "agent_y", "agent_x", "car_x_0", "car_x_1", "car_x_2", "car_x_3", "car_x_4", "car_x_5",
        ]
    }

    fn feature_scales(&self) -> Vec<f32> {
        let mut s = vec![(ROWS - 1) as f32, (COLS - 1) as f32];
        s.extend(std::iter::repeat((COLS - 1) as f32).take(LANES));
        s
    }

    fn sprite_boxes(&self) -> Vec<SpriteBox> {
        let mut boxes = vec![SpriteBox {
            y: self.agent.0 * CELL,
            x: self.agent.1 * CELL,
            height: CELL,
            width: CELL,
        }];
        for lane in 0..LANES {
            boxes.push(SpriteBox {
                y: (lane + 1) * CELL,
                x: self.cars[lane] * CELL,
                height: CELL,
                width: CELL,
            });
        }
        boxes
    }
}
