//! 32×32 RGB rendering over procedural background textures.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use diffnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Cell, GridLayout};
use crate::error::{Error, Result};

pub const IMAGE_SIZE: usize = 32;
const ARM_LENGTH: f64 = 13.0;
const ARM_HALF_WIDTH: f64 = 1.5;

const ARM_COLOR: [f64; 3] = [0.0, 0.0, 0.0];
const WALL_COLOR: [f64; 3] = [0.1, 0.1, 0.35];
const GOAL_COLOR: [f64; 3] = [0.0, 0.8, 0.0];
const AGENT_COLOR: [f64; 3] = [0.9, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureTag {
    Bricks,
    Sand,
    Cloth,
    Wood,
}

impl TextureTag {
    pub const ALL: [TextureTag; 4] = [TextureTag::Bricks, TextureTag::Sand, TextureTag::Cloth, TextureTag::Wood];

    pub fn name(self) -> &'static str {
        match self {
            TextureTag::Bricks => "bricks",
            TextureTag::Sand => "sand",
            TextureTag::Cloth => "cloth",
            TextureTag::Wood => "wood",
        }
    }
}

impl fmt::Display for TextureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TextureTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TextureTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown texture `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextureSpec {
    pub tag: TextureTag,
    pub seed: u64,
}

impl TextureSpec {
    pub fn new(tag: TextureTag, seed: u64) -> Self {
        Self { tag, seed }
    }

    /// Background pixels, row-major `[y][x][c]`, values in [0.3, 1].
    pub fn background(&self) -> Vec<f64> {
        let n = IMAGE_SIZE;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (self.tag as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut px = vec![0.0; n * n * 3];
        match self.tag {
            TextureTag::Bricks => {
                let brick = [rng.gen_range(0.55..0.75), rng.gen_range(0.3..0.4), rng.gen_range(0.3..0.35)];
                let mortar = rng.gen_range(0.8..0.9);
                let (bh, bw) = (rng.gen_range(5..8), rng.gen_range(9..14));
                let oy = rng.gen_range(0..bh);
                for y in 0..n {
                    let row = (y + oy) / bh;
                    let ox = if row % 2 == 0 { 0 } else { bw / 2 };
                    for x in 0..n {
                        let line = (y + oy) % bh == 0 || (x + ox) % bw == 0;
                        for c in 0..3 {
                            px[(y * n + x) * 3 + c] = if line { mortar } else { brick[c] };
                        }
                    }
                }
            }
            TextureTag::Sand => {
                let base = [0.85, 0.75, 0.5];
                for y in 0..n {
                    for x in 0..n {
                        let v: f64 = rng.gen_range(-0.15..0.15);
                        for c in 0..3 {
                            px[(y * n + x) * 3 + c] = (base[c] + v).clamp(0.3, 1.0);
                        }
                    }
                }
            }
            TextureTag::Cloth => {
                let (px_, py_) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
                let period = rng.gen_range(7.0..10.0);
                let base = [0.45, 0.55, 0.8];
                for y in 0..n {
                    for x in 0..n {
                        let w = (2.0 * PI * x as f64 / period + px_).sin() * (2.0 * PI * y as f64 / period + py_).sin();
                        for c in 0..3 {
                            px[(y * n + x) * 3 + c] = (base[c] + 0.15 * w).clamp(0.3, 1.0);
                        }
                    }
                }
            }
            TextureTag::Wood => {
                let phase = rng.gen_range(0.0..2.0 * PI);
                let period = rng.gen_range(4.0..7.0);
                let base = [0.7, 0.5, 0.33];
                for y in 0..n {
                    for x in 0..n {
                        let bend = 2.0 * (x as f64 / 9.0 + phase).sin();
                        let g = (2.0 * PI * (y as f64 + bend) / period).sin();
                        for c in 0..3 {
                            px[(y * n + x) * 3 + c] = (base[c] + 0.12 * g).clamp(0.3, 1.0);
                        }
                    }
                }
            }
        }
        px
    }
}

fn paint(px: &mut [f64], y: usize, x: usize, color: [f64; 3]) {
    let i = (y * IMAGE_SIZE + x) * 3;
    px[i..i + 3].copy_from_slice(&color);
}

fn to_tensor(px: Vec<f64>) -> Tensor {
    Tensor::new(vec![IMAGE_SIZE, IMAGE_SIZE, 3], px).expect("image shape")
}

/// Pixels covered by a pendulum arm at angle `theta` (0 = up), row-major.
pub fn arm_mask(theta: f64) -> Vec<bool> {
    let c = IMAGE_SIZE as f64 / 2.0;
    let (ex, ey) = (c + ARM_LENGTH * theta.sin(), c - ARM_LENGTH * theta.cos());
    let (dx, dy) = (ex - c, ey - c);
    let len2 = dx * dx + dy * dy;
    let mut mask = vec![false; IMAGE_SIZE * IMAGE_SIZE];
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = (((px - c) * dx + (py - c) * dy) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (c + t * dx, c + t * dy);
            mask[y * IMAGE_SIZE + x] = (px - qx).hypot(py - qy) <= ARM_HALF_WIDTH;
        }
    }
    mask
}

pub fn render_pendulum(theta: f64, texture: &TextureSpec) -> Tensor {
    let mut px = texture.background();
    for (i, on) in arm_mask(theta).into_iter().enumerate() {
        if on {
            paint(&mut px, i / IMAGE_SIZE, i % IMAGE_SIZE, ARM_COLOR);
        }
    }
    to_tensor(px)
}

/// Maze drawn by mapping each pixel to its nearest grid cell.
pub fn render_grid(layout: &GridLayout, agent: Cell, texture: &TextureSpec) -> Tensor {
    let mut px = texture.background();
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let cell = (y * layout.height() / IMAGE_SIZE, x * layout.width() / IMAGE_SIZE);
            let color = if cell == agent {
                AGENT_COLOR
            } else if cell == layout.goal() {
                GOAL_COLOR
            } else if layout.is_wall(cell) {
                WALL_COLOR
            } else {
                continue;
            };
            paint(&mut px, y, x, color);
        }
    }
    to_tensor(px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::LayoutTag;

    #[test]
    fn same_spec_same_pixels() {
        for tag in TextureTag::ALL {
            let t = TextureSpec::new(tag, 9);
            assert_eq!(render_pendulum(0.7, &t), render_pendulum(0.7, &t));
            assert!(t.background().iter().all(|v| (0.3..=1.0).contains(v)));
        }
        let a = TextureSpec::new(TextureTag::Sand, 1).background();
        let b = TextureSpec::new(TextureTag::Sand, 2).background();
        assert_ne!(a, b);
    }

    #[test]
    fn foreground_is_texture_invariant() {
        let theta = 2.1;
        let mask = arm_mask(theta);
        let a = render_pendulum(theta, &TextureSpec::new(TextureTag::Bricks, 0));
        let b = render_pendulum(theta, &TextureSpec::new(TextureTag::Wood, 0));
        let mut background_differs = false;
        for (i, &on) in mask.iter().enumerate() {
            let (pa, pb) = (&a.data()[i * 3..i * 3 + 3], &b.data()[i * 3..i * 3 + 3]);
            if on {
                assert_eq!(pa, pb);
            } else {
                background_differs |= pa != pb;
            }
        }
        assert!(background_differs);
    }

    #[test]
    fn upright_arm_is_in_top_half_column() {
        let mask = arm_mask(0.0);
        let n = IMAGE_SIZE;
        let on: Vec<(usize, usize)> = (0..n * n).filter(|&i| mask[i]).map(|i| (i / n, i % n)).collect();
        assert!(!on.is_empty());
        for &(y, x) in &on {
            assert!(y < n / 2 + 2, "row {y}");
            assert!((x as i64 - n as i64 / 2).abs() <= 2, "col {x}");
        }
        // reaches well into the top quarter
        assert!(on.iter().any(|&(y, _)| y < n / 4));
        // hanging arm is the mirror image
        let down = arm_mask(PI);
        assert!(down.iter().enumerate().filter(|(_, &m)| m).all(|(i, _)| i / n >= n / 2 - 2));
    }

    #[test]
    fn grid_render_marks_agent_and_goal() {
        let layout = GridLayout::builtin(LayoutTag::UMaze);
        let img = render_grid(&layout, (3, 3), &TextureSpec::new(TextureTag::Cloth, 0));
        let d = img.data();
        let count = |col: [f64; 3]| d.chunks_exact(3).filter(|p| *p == col).count();
        assert!(count(AGENT_COLOR) > 0);
        assert!(count(GOAL_COLOR) > 0);
        assert!(count(WALL_COLOR) > 0);
    }
}
