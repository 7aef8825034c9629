//! Built-in pixel environments, the tabular chain MDP oracle, and the frame
//! preprocessing/stacking pipeline.

pub mod chain;
pub mod corpus;
pub mod crossroad;
pub mod pellet;

use std::sync::Arc;

use apfrl_nn::Tensor32;

use crate::error::{CoreError, Result};

pub use chain::{value_iteration, ChainMdp, QTable};
pub use crossroad::CrossRoad;
pub use pellet::PelletPursuit;

/// Raw RGB frame emitted by an environment: `[3, height, width]` row-major,
/// values in `[0, 1]`. Height and width are divisible by 16 so the encoder's
/// four stride-2 stages are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct GameFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl GameFrame {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let hw = self.height * self.width;
        let at = y * self.width + x;
        self.data[at] = rgb[0];
        self.data[hw + at] = rgb[1];
        self.data[2 * hw + at] = rgb[2];
    }

    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let hw = self.height * self.width;
        let at = y * self.width + x;
        [self.data[at], self.data[hw + at], self.data[2 * hw + at]]
    }

    pub fn fill_rect(&mut self, y: usize, x: usize, h: usize, w: usize, rgb: [f32; 3]) {
        for yy in y..(y + h).min(self.height) {
            for xx in x..(x + w).min(self.width) {
                self.set(yy, xx, rgb);
            }
        }
    }

    /// `[1, 3, H, W]` tensor view of this frame.
    pub fn to_tensor(&self) -> Tensor32 {
        Tensor32::from_vec(&[1, 3, self.height, self.width], self.data.clone())
            .expect("frame data matches dims")
    }
}

/// Single-channel preprocessed frame (grayscale, resized).
#[derive(Debug, Clone, PartialEq)]
pub struct PreFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Stack of the 4 most recent preprocessed frames, oldest first. Frames are
/// shared, so consecutive stacks reuse 3 of their 4 slots.
#[derive(Debug, Clone)]
pub struct FrameStack {
    frames: [Arc<PreFrame>; 4],
}

impl FrameStack {
    /// Builds a stack from the most recent frames, oldest first. Histories
    /// shorter than 4 repeat the oldest available frame into the missing
    /// slots; histories longer than 4 use the trailing window.
    pub fn from_history(history: &[Arc<PreFrame>]) -> Result<Self> {
        let Some(oldest) = history.first() else {
            return Err(CoreError::Usage("cannot stack an empty frame history".into()));
        };
        let tail = &history[history.len().saturating_sub(4)..];
        let mut frames: Vec<Arc<PreFrame>> = Vec::with_capacity(4);
        for _ in 0..4 - tail.len() {
            frames.push(Arc::clone(if history.len() >= 4 { &tail[0] } else { oldest }));
        }
        frames.extend(tail.iter().cloned());
        Ok(Self {
            frames: frames.try_into().expect("exactly 4 slots"),
        })
    }

    pub fn frames(&self) -> &[Arc<PreFrame>; 4] {
        &self.frames
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    /// `[1, 4, H, W]` tensor of the stack.
    pub fn to_tensor(&self) -> Tensor32 {
        let (h, w) = (self.height(), self.width());
        let mut data = Vec::with_capacity(4 * h * w);
        for f in &self.frames {
            data.extend_from_slice(&f.data);
        }
        Tensor32::from_vec(&[1, 4, h, w], data).expect("stack data matches dims")
    }

    /// Copies the stack into one batch slot of a `[N, 4, H, W]` buffer.
    pub fn write_into(&self, dst: &mut [f32]) {
        let hw = self.height() * self.width();
        for (i, f) in self.frames.iter().enumerate() {
            dst[i * hw..(i + 1) * hw].copy_from_slice(&f.data);
        }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub frame: GameFrame,
    pub reward: f32,
    pub done: bool,
}

/// Pixel rectangle occupied by a moving entity, for instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpriteBox {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

impl SpriteBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.height && x >= self.x && x < self.x + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// A built-in pixel game. Instances are single-owner; dynamics are
/// deterministic given the reset seed and action sequence.
pub trait PixelEnv: Send {
    fn name(&self) -> &'static str;
    fn frame_height(&self) -> usize;
    fn frame_width(&self) -> usize;
    fn num_actions(&self) -> usize;

    /// Puts the environment into its initial state and returns the first frame.
    fn reset(&mut self, seed: u64) -> GameFrame;

    /// Advances one step. Stepping a terminal environment is a usage error.
    fn step(&mut self, action: usize) -> Result<StepOutcome>;

    fn is_terminal(&self) -> bool;

    /// Ground-truth feature vector read from internal state.
    fn oracle_features(&self) -> Vec<f32>;
    fn feature_names(&self) -> Vec<&'static str>;
    /// Upper bound per feature, for normalizing embeddings to `[0, 1]`.
    fn feature_scales(&self) -> Vec<f32>;

    /// Current bounding boxes of moving entities (agent, ghost, cars).
    fn sprite_boxes(&self) -> Vec<SpriteBox>;
}

/// Instantiates a built-in environment by id.
pub fn make_env(name: &str) -> Result<Box<dyn PixelEnv>> {
    match name {
        "pellet_pursuit" => Ok(Box::new(PelletPursuit::new())),
        "cross_road" => Ok(Box::new(CrossRoad::new())),
        other => Err(CoreError::Config(format!(
            "unknown environment `{other}` (expected pellet_pursuit or cross_road)"
        ))),
    }
}

/// Luminance grayscale followed by area-averaged resize to `side x side`.
pub fn preprocess(frame: &GameFrame, side: usize) -> PreFrame {
    let hw = frame.height * frame.width;
    let gray: Vec<f32> = (0..hw)
        .map(|i| {
            0.299 * frame.data[i] + 0.587 * frame.data[hw + i] + 0.114 * frame.data[2 * hw + i]
        })
        .collect();
    PreFrame {
        height: side,
        width: side,
        data: resize_area(&gray, frame.height, frame.width, side, side),
    }
}

/// Exact box-filter downsampling/upsampling: each output pixel averages the
/// source pixels its back-projected box overlaps, weighted by overlap area.
fn resize_area(src: &[f32], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(dst_h * dst_w);
    let sy = src_h as f64 / dst_h as f64;
    let sx = src_w as f64 / dst_w as f64;
    for i in 0..dst_h {
        let y0 = i as f64 * sy;
        let y1 = (i + 1) as f64 * sy;
        for j in 0..dst_w {
            let x0 = j as f64 * sx;
            let x1 = (j + 1) as f64 * sx;
            let mut acc = 0.0f64;
            let mut yy = y0.floor() as usize;
            while (yy as f64) < y1 && yy < src_h {
                let wy = (y1.min((yy + 1) as f64) - y0.max(yy as f64)).max(0.0);
                let mut xx = x0.floor() as usize;
                while (xx as f64) < x1 && xx < src_w {
                    let wx = (x1.min((xx + 1) as f64) - x0.max(xx as f64)).max(0.0);
                    acc += wy * wx * src[yy * src_w + xx] as f64;
                    xx += 1;
                }
                yy += 1;
            }
            out.push((acc / (sy * sx)) as f32);
        }
    }
    out
}
