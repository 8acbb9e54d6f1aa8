//! Row-major tiling of an image into square patches.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat pixel indices of the patch in an image `stride` pixels wide.
    pub fn indices(&self, stride: usize) -> impl Iterator<Item = usize> + Clone + '_ {
        (self.y0..self.y0 + self.height).flat_map(move |y| (self.x0..self.x0 + self.width).map(move |x| y * stride + x))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub width: usize,
    pub height: usize,
    pub size: usize,
    pub patches: Vec<Patch>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn check(&self, width: usize, height: usize) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{width}x{height}"),
            ));
        }
        Ok(())
    }
}

/// Tiles a `width × height` image with `p × p` patches; the right and
/// bottom remainders become smaller patches.
pub fn partition(width: usize, height: usize, p: usize) -> Result<PatchGrid> {
    if p < 2 {
        return Err(Error::InvalidPatchSize(p));
    }
    let mut patches = Vec::with_capacity(width.div_ceil(p) * height.div_ceil(p));
    for y0 in (0..height).step_by(p) {
        for x0 in (0..width).step_by(p) {
            patches.push(Patch {
                x0,
                y0,
                width: p.min(width - x0),
                height: p.min(height - y0),
            });
        }
    }
    Ok(PatchGrid {
        width,
        height,
        size: p,
        patches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_tiling() {
        let g = partition(16, 16, 8).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.patches.iter().all(|p| p.len() == 64));
    }

    #[test]
    fn ragged_edge() {
        let g = partition(17, 16, 8).unwrap();
        assert_eq!(g.len(), 6);
        let ragged: Vec<_> = g.patches.iter().filter(|p| p.len() != 64).collect();
        assert_eq!(ragged.len(), 2);
        assert!(ragged.iter().all(|p| p.width == 1 && p.height == 8));
        assert_eq!(g.patches.iter().map(Patch::len).sum::<usize>(), 272);
    }

    #[test]
    fn small_patch_rejected() {
        assert!(matches!(partition(8, 8, 1), Err(Error::InvalidPatchSize(1))));
    }
}
