use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("runs cover {covered} pixels but the mask is {width}x{height}")]
    LengthMismatch {
        covered: u64,
        width: u32,
        height: u32,
    },
    #[error("mask has zero dimensions")]
    Empty,
}

/// Binary mask as row-major run lengths, alternating background and
/// foreground and always starting with background (possibly a zero run).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            counts: vec![width * height],
        }
    }

    /// Mask of the half-open rectangle `[x0, x1) x [y0, y1)`, clipped to the image.
    pub fn from_rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        let (x0, x1) = (x0.min(width), x1.min(width));
        let (y0, y1) = (y0.min(height), y1.min(height));
        if x0 >= x1 || y0 >= y1 {
            return Self::empty(width, height);
        }
        let mut counts = Vec::new();
        let mut run_bg = y0 * width + x0;
        for y in y0..y1 {
            counts.push(run_bg);
            counts.push(x1 - x0);
            run_bg = width - x1 + if y + 1 < y1 { x0 } else { 0 };
        }
        counts.push(run_bg + (height - y1) * width);
        let mut mask = Self { width, height, counts };
        mask.compact();
        mask
    }

    /// Merges runs separated by zero-length runs (full-width rectangles).
    fn compact(&mut self) {
        let mut out: Vec<u32> = Vec::with_capacity(self.counts.len());
        let mut i = 0;
        while i < self.counts.len() {
            let c = self.counts[i];
            if c == 0 && i > 0 && i + 1 < self.counts.len() {
                *out.last_mut().unwrap() += self.counts[i + 1];
                i += 2;
                continue;
            }
            out.push(c);
            i += 1;
        }
        if out.len() > 1 && *out.last().unwrap() == 0 {
            out.pop();
        }
        self.counts = out;
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        if self.width == 0 || self.height == 0 {
            return Err(MaskError::Empty);
        }
        let covered: u64 = self.counts.iter().map(|&c| u64::from(c)).sum();
        if covered != u64::from(self.width) * u64::from(self.height) {
            return Err(MaskError::LengthMismatch {
                covered,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        let mut pos = u64::from(y) * u64::from(self.width) + u64::from(x);
        for (i, &c) in self.counts.iter().enumerate() {
            if pos < u64::from(c) {
                return i % 2 == 1;
            }
            pos -= u64::from(c);
        }
        false
    }
}
