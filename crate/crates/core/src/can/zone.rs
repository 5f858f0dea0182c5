use serde::{Deserialize, Serialize};

use crate::model::GridIndex;

/// Axis-aligned rectangle of whole grids: `[x, x+w) × [y, y+h)` in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Zone {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Zone {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains(&self, g: GridIndex) -> bool {
        g.ix >= self.x && g.ix < self.x + self.w && g.iy >= self.y && g.iy < self.y + self.h
    }

    pub fn centroid(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }

    /// Euclidean distance from a point (grid units) to this rectangle; zero inside.
    pub fn distance_to(&self, px: f64, py: f64) -> f64 {
        let dx = (self.x as f64 - px).max(0.0).max(px - (self.x + self.w) as f64);
        let dy = (self.y as f64 - py).max(0.0).max(py - (self.y + self.h) as f64);
        dx.hypot(dy)
    }

    pub fn grids(&self) -> impl Iterator<Item = GridIndex> + '_ {
        (self.y..self.y + self.h).flat_map(move |iy| (self.x..self.x + self.w).map(move |ix| GridIndex::new(ix, iy)))
    }

    /// Splits along the longer axis (width on ties). The first half keeps the
    /// extra grid on odd lengths and stays left/bottom.
    pub fn split(&self) -> Option<(Zone, Zone)> {
        if self.w == 1 && self.h == 1 {
            return None;
        }
        if self.w >= self.h {
            let keep = self.w.div_ceil(2);
            Some((
                Zone::new(self.x, self.y, keep, self.h),
                Zone::new(self.x + keep, self.y, self.w - keep, self.h),
            ))
        } else {
            let keep = self.h.div_ceil(2);
            Some((
                Zone::new(self.x, self.y, self.w, keep),
                Zone::new(self.x, self.y + keep, self.w, self.h - keep),
            ))
        }
    }

    /// The union of two zones, when that union is itself a rectangle.
    pub fn merge(&self, other: &Zone) -> Option<Zone> {
        if self.y == other.y && self.h == other.h {
            if self.x + self.w == other.x {
                return Some(Zone::new(self.x, self.y, self.w + other.w, self.h));
            }
            if other.x + other.w == self.x {
                return Some(Zone::new(other.x, self.y, self.w + other.w, self.h));
            }
        }
        if self.x == other.x && self.w == other.w {
            if self.y + self.h == other.y {
                return Some(Zone::new(self.x, self.y, self.w, self.h + other.h));
            }
            if other.y + other.h == self.y {
                return Some(Zone::new(self.x, other.y, self.w, self.h + other.h));
            }
        }
        None
    }

    /// `true` when the two zones share an edge segment of positive length.
    pub fn abuts(&self, other: &Zone) -> bool {
        let overlap = |a0: u32, a1: u32, b0: u32, b1: u32| a0.max(b0) < a1.min(b1);
        let vertical_edge = (self.x + self.w == other.x || other.x + other.w == self.x)
            && overlap(self.y, self.y + self.h, other.y, other.y + other.h);
        let horizontal_edge = (self.y + self.h == other.y || other.y + other.h == self.y)
            && overlap(self.x, self.x + self.w, other.x, other.x + other.w);
        vertical_edge || horizontal_edge
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_wide_splits_five_four() {
        let (left, right) = Zone::new(0, 0, 9, 4).split().unwrap();
        assert_eq!((left.w, right.w), (5, 4));
        assert_eq!(right.x, 5);
        let (bottom, top) = Zone::new(0, 0, 2, 5).split().unwrap();
        assert_eq!((bottom.h, top.h, top.y), (3, 2, 3));
        assert!(Zone::new(3, 3, 1, 1).split().is_none());
    }

    #[test]
    fn merge_and_abut() {
        let a = Zone::new(0, 0, 2, 3);
        let b = Zone::new(2, 0, 1, 3);
        assert_eq!(a.merge(&b), Some(Zone::new(0, 0, 3, 3)));
        assert_eq!(b.merge(&a), Some(Zone::new(0, 0, 3, 3)));
        assert_eq!(a.merge(&Zone::new(2, 0, 1, 2)), None);
        assert!(a.abuts(&Zone::new(2, 2, 4, 4)));
        assert!(!a.abuts(&Zone::new(2, 3, 1, 1)));
    }

    #[test]
    fn distance_to_rectangle() {
        let z = Zone::new(2, 2, 2, 2);
        assert_eq!(z.distance_to(3.0, 3.0), 0.0);
        assert_eq!(z.distance_to(0.5, 3.0), 1.5);
        assert_eq!(z.distance_to(7.0, 8.0), 5.0);
    }
}
