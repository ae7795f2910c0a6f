//! Turns trajectory frames into RGB rasters and PNG bytes.

mod png;

use thiserror::Error;

use crate::swarm::{AgentState, Trajectory};

pub use self::png::{encode_png, PNG_SIGNATURE};

/// Default raster side, matching the embedding model's input size.
pub const DEFAULT_IMAGE_SIZE: usize = 224;
/// Trail persistence between consecutive rendered frames.
pub const DEFAULT_TRAIL_DECAY: f32 = 0.85;
pub const MIN_IMAGE_SIZE: usize = 32;

/// 3×3 splat kernel: gaussian with sigma 0.8 px, sampled at integer offsets.
const SPLAT_KERNEL: [[f32; 3]; 3] = [
    [0.209_611_4, 0.457_833_4, 0.209_611_4],
    [0.457_833_4, 1.0, 0.457_833_4],
    [0.209_611_4, 0.457_833_4, 0.209_611_4],
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("trajectory has no frames")]
    EmptyTrajectory,
    #[error("image side {0} is below the minimum of {MIN_IMAGE_SIZE}")]
    ImageTooSmall(usize),
    #[error("frame count must be at least 1")]
    ZeroFrames,
    #[error("trail image is {got}x{got} but output is {want}x{want}")]
    TrailSizeMismatch { got: usize, want: usize },
}

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageRGB {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl ImageRGB {
    pub fn black(width: usize, height: usize) -> Self {
        ImageRGB {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }
}

/// Picks `k` frame indices evenly spaced over the second half of the
/// trajectory, always ending at the final frame.
pub fn select_frames(trajectory: &Trajectory, k: usize) -> Result<Vec<usize>, RenderError> {
    select_frame_indices(trajectory.len(), k)
}

pub fn select_frame_indices(n_frames: usize, k: usize) -> Result<Vec<usize>, RenderError> {
    if n_frames == 0 {
        return Err(RenderError::EmptyTrajectory);
    }
    if k == 0 {
        return Err(RenderError::ZeroFrames);
    }
    let end = n_frames - 1;
    let start = end / 2;
    let span = end - start;
    if k > span {
        return Ok((start..=end).collect());
    }
    if k == 1 {
        return Ok(vec![end]);
    }
    let denom = k - 1;
    Ok((0..k)
        .map(|i| start + (2 * i * span + denom) / (2 * denom))
        .collect())
}

/// Renders one frame: a white gaussian dot per agent on black, wrapping at
/// the edges. With a trail, each channel is `max(decay * trail, splat)`.
pub fn rasterize_frame(
    frame: &[AgentState],
    size: usize,
    trail: Option<&ImageRGB>,
    decay: f32,
) -> Result<ImageRGB, RenderError> {
    rasterize_points(frame.iter().map(|a| (a.position, [255u8; 3])), size, trail, decay)
}

/// Colored variant of [`rasterize_frame`]; each point carries its own color.
pub fn rasterize_points(
    points: impl IntoIterator<Item = ([f64; 2], [u8; 3])>,
    size: usize,
    trail: Option<&ImageRGB>,
    decay: f32,
) -> Result<ImageRGB, RenderError> {
    if size < MIN_IMAGE_SIZE {
        return Err(RenderError::ImageTooSmall(size));
    }
    if let Some(t) = trail {
        if t.width != size || t.height != size {
            return Err(RenderError::TrailSizeMismatch { got: t.width, want: size });
        }
    }
    let mut acc = vec![0f32; size * size * 3];
    for (p, color) in points {
        let cx = pixel_coord(p[0], size);
        let cy = pixel_coord(p[1], size);
        for (ky, row) in SPLAT_KERNEL.iter().enumerate() {
            let y = (cy + size + ky - 1) % size;
            for (kx, &w) in row.iter().enumerate() {
                let x = (cx + size + kx - 1) % size;
                let o = (y * size + x) * 3;
                for c in 0..3 {
                    acc[o + c] += w * color[c] as f32;
                }
            }
        }
    }
    let decay = decay.clamp(0.0, 1.0);
    let pixels = acc
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let fresh = v.min(255.0).round() as u8;
            match trail {
                Some(t) => fresh.max((decay * t.pixels[i] as f32).round() as u8),
                None => fresh,
            }
        })
        .collect();
    Ok(ImageRGB {
        width: size,
        height: size,
        pixels,
    })
}

#[inline]
fn pixel_coord(u: f64, size: usize) -> usize {
    ((u * size as f64).floor() as isize).rem_euclid(size as isize) as usize
}

/// Renders the selected frames with trails accumulated from the start of the
/// selection window. Returns one image per selected index, in order.
pub fn render_selected(
    trajectory: &Trajectory,
    selected: &[usize],
    size: usize,
    decay: f32,
) -> Result<Vec<ImageRGB>, RenderError> {
    let Some(&first) = selected.first() else {
        return Ok(Vec::new());
    };
    let last = *selected.last().unwrap_or(&first);
    let start = (trajectory.len().saturating_sub(1)) / 2;
    let start = start.min(first);
    let mut out = Vec::with_capacity(selected.len());
    let mut trail: Option<ImageRGB> = None;
    let mut next = 0;
    for idx in start..=last {
        let img = rasterize_frame(&trajectory.frames[idx], size, trail.as_ref(), decay)?;
        if next < selected.len() && selected[next] == idx {
            out.push(img.clone());
            next += 1;
        }
        trail = Some(img);
    }
    Ok(out)
}
