//! 4-connected component labeling (two-pass, union-find).

use crate::geometry::{CameraIntrinsics, ImagePoint};
use crate::render::{Image, Label, LabelImage};

/// A maximal 4-connected pixel set. Pixels are `(col, row)` in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub pixels: Vec<(u32, u32)>,
}

impl Region {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Mean pixel center in signed image coordinates.
    pub fn centroid(&self, k: &CameraIntrinsics) -> ImagePoint {
        let n = self.pixels.len() as f64;
        let (sx, sy) = self.pixels.iter().fold((0.0, 0.0), |(sx, sy), &(c, r)| {
            let p = k.pixel_center(c, r);
            (sx + p.x, sy + p.y)
        });
        ImagePoint::new(sx / n, sy / n)
    }

    /// (min col, min row, max col, max row)
    pub fn bbox(&self) -> (u32, u32, u32, u32) {
        self.pixels.iter().fold((u32::MAX, u32::MAX, 0, 0), |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)))
    }

    pub fn touches_border(&self, width: usize, height: usize) -> bool {
        let (x0, y0, x1, y1) = self.bbox();
        x0 == 0 || y0 == 0 || x1 as usize + 1 >= width || y1 as usize + 1 >= height
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[parent[x as usize] as usize];
        parent[x as usize] = p;
        x = p;
    }
    x
}

/// Regions of `true` pixels, ordered by their first pixel in raster order.
pub fn connected_components_mask(mask: &Image<bool>) -> Vec<Region> {
    let (w, h) = (mask.width, mask.height);
    let mut lab = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if !mask.data[i] {
                continue;
            }
            let left = if col > 0 { lab[i - 1] } else { 0 };
            let up = if row > 0 { lab[i - w] } else { 0 };
            lab[i] = match (left, up) {
                (0, 0) => {
                    let n = parent.len() as u32;
                    parent.push(n);
                    n
                }
                (l, 0) => l,
                (0, u) => u,
                (l, u) => {
                    let (a, b) = (find(&mut parent, l), find(&mut parent, u));
                    if a != b {
                        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                        parent[hi as usize] = lo;
                    }
                    l.min(u)
                }
            };
        }
    }
    let mut slot = vec![u32::MAX; parent.len()];
    let mut regions: Vec<Region> = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if lab[i] == 0 {
                continue;
            }
            let root = find(&mut parent, lab[i]) as usize;
            if slot[root] == u32::MAX {
                slot[root] = regions.len() as u32;
                regions.push(Region { pixels: Vec::new() });
            }
            regions[slot[root] as usize].pixels.push((col as u32, row as u32));
        }
    }
    regions
}

/// Regions whose label satisfies `pred`. Differently labeled neighbors that
/// both satisfy `pred` join the same region.
pub fn connected_components_where(labels: &LabelImage, pred: impl Fn(Label) -> bool) -> Vec<Region> {
    let mask = Image { width: labels.width, height: labels.height, data: labels.data.iter().map(|l| pred(*l)).collect() };
    connected_components_mask(&mask)
}

pub fn connected_components(labels: &LabelImage, color: Label) -> Vec<Region> {
    connected_components_where(labels, |l| l == color)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    /// Flood-fill oracle: partition of the mask's pixels.
    pub fn flood_fill(mask: &Image<bool>) -> BTreeSet<Vec<(u32, u32)>> {
        let (w, h) = (mask.width, mask.height);
        let mut seen = vec![false; w * h];
        let mut out = BTreeSet::new();
        for start in 0..w * h {
            if !mask.data[start] || seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut px = Vec::new();
            while let Some(i) = stack.pop() {
                let (c, r) = (i % w, i / w);
                px.push((c as u32, r as u32));
                let mut push = |j: usize| {
                    if mask.data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if c > 0 {
                    push(i - 1);
                }
                if c + 1 < w {
                    push(i + 1);
                }
                if r > 0 {
                    push(i - w);
                }
                if r + 1 < h {
                    push(i + w);
                }
            }
            px.sort_by_key(|&(c, r)| (r, c));
            out.insert(px);
        }
        out
    }

    pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image<bool> {
        let p: f64 = rng.random_range(0.2..0.7);
        Image { width: w, height: h, data: (0..w * h).map(|_| rng.random::<f64>() < p).collect() }
    }

    pub fn partition(regions: &[Region]) -> BTreeSet<Vec<(u32, u32)>> {
        regions.iter().map(|r| r.pixels.clone()).collect()
    }

    #[test]
    fn two_blobs() {
        let mut m = Image::filled(8, 8, false);
        for (c, r) in [(0, 0), (1, 0), (0, 1), (1, 1), (5, 5), (6, 5), (5, 6), (6, 6)] {
            m.set(c, r, true);
        }
        let regs = connected_components_mask(&m);
        assert_eq!(regs.len(), 2);
        assert!(regs.iter().all(|r| r.area() == 4));
    }

    #[test]
    fn empty_mask() {
        assert!(connected_components_mask(&Image::filled(5, 5, false)).is_empty());
    }

    #[test]
    fn diagonal_pixels_are_separate() {
        let mut m = Image::filled(3, 3, false);
        m.set(0, 0, true);
        m.set(1, 1, true);
        assert_eq!(connected_components_mask(&m).len(), 2);
    }

    #[test]
    fn matches_flood_fill_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = random_mask(&mut rng, 64, 64);
            assert_eq!(partition(&connected_components_mask(&m)), flood_fill(&m));
        }
    }
}
