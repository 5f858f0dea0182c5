use serde::{Deserialize, Serialize};

use super::ModelError;

/// A point on the 2-D map, in world units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coord {
    pub x: f64,
    pub y: f64,
}

impl Coord {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Integer grid cell index; the grid's lower-left corner is `(ix·l, iy·l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridIndex {
    pub ix: u32,
    pub iy: u32,
}

impl GridIndex {
    pub const fn new(ix: u32, iy: u32) -> Self {
        Self { ix, iy }
    }
}

/// Integer region index; the region's lower-left corner is `(rx·s, ry·s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionIndex {
    pub rx: u32,
    pub ry: u32,
}

impl RegionIndex {
    pub const fn new(rx: u32, ry: u32) -> Self {
        Self { rx, ry }
    }
}

/// Lower-left corner of a grid, in world units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GridCoord {
    pub x: f64,
    pub y: f64,
}

impl GridCoord {
    pub fn corner(&self) -> Coord {
        Coord::new(self.x, self.y)
    }
}

/// Lower-left corner of a region, in world units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionCoord {
    pub x: f64,
    pub y: f64,
}

impl RegionCoord {
    pub fn corner(&self) -> Coord {
        Coord::new(self.x, self.y)
    }
}

pub fn distance(p: Coord, q: Coord) -> f64 {
    (p.x - q.x).hypot(p.y - q.y)
}

fn check_side(l: f64) -> Result<(), ModelError> {
    if l.is_finite() && l > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter(format!("grid side must be > 0, got {l}")))
    }
}

fn check_point(p: Coord) -> Result<(), ModelError> {
    if p.x.is_finite() && p.y.is_finite() && p.x >= 0.0 && p.y >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::OutsideMap { x: p.x, y: p.y })
    }
}

/// Integer square root of `m`, if `m` is a positive perfect square.
pub(crate) fn exact_sqrt(m: u32) -> Option<u32> {
    if m == 0 {
        return None;
    }
    let r = (m as f64).sqrt().round() as u32;
    (r * r == m).then_some(r)
}

/// Lower-left corner of the grid containing `p`. Grids are half-open.
pub fn grid_of(p: Coord, l: f64) -> Result<GridCoord, ModelError> {
    check_side(l)?;
    check_point(p)?;
    Ok(GridCoord { x: (p.x / l).floor() * l, y: (p.y / l).floor() * l })
}

/// Lower-left corner of the region containing `p`; the region side is `√m·l`.
pub fn region_of(p: Coord, l: f64, m: u32) -> Result<RegionCoord, ModelError> {
    check_side(l)?;
    check_point(p)?;
    let k = exact_sqrt(m)
        .ok_or_else(|| ModelError::InvalidParameter(format!("m must be a perfect square, got {m}")))?;
    let s = k as f64 * l;
    Ok(RegionCoord { x: (p.x / s).floor() * s, y: (p.y / s).floor() * s })
}

/// Half diagonal of a region: `(√2/2)·l·√m`.
pub fn search_radius(l: f64, m: u32) -> Result<f64, ModelError> {
    check_side(l)?;
    let k = exact_sqrt(m)
        .ok_or_else(|| ModelError::InvalidParameter(format!("m must be a perfect square, got {m}")))?;
    Ok(std::f64::consts::FRAC_1_SQRT_2 * l * k as f64)
}

/// Retrieval period `⌈√2·d_r / v⌉`, at least one cycle.
pub fn cycle_period(d_r: f64, v: f64) -> Result<u64, ModelError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(ModelError::InvalidParameter(format!("velocity must be > 0, got {v}")));
    }
    if !(d_r.is_finite() && d_r >= 0.0) {
        return Err(ModelError::InvalidParameter(format!("search radius must be >= 0, got {d_r}")));
    }
    let raw = std::f64::consts::SQRT_2 * d_r / v;
    // Absorb rounding noise such as 10.000000000000002.
    let snapped = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    Ok((snapped as u64).max(1))
}

/// Map geometry: `width × height` world units tiled by grids of side `l`,
/// with `m` grids per square region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: f64,
    pub height: f64,
    pub grid_side: f64,
    pub grids_per_region: u32,
}

impl Geometry {
    /// Builds a map of `regions_x × regions_y` regions.
    pub fn from_regions(
        regions_x: u32,
        regions_y: u32,
        grid_side: f64,
        grids_per_region: u32,
    ) -> Result<Self, ModelError> {
        let k = exact_sqrt(grids_per_region).ok_or_else(|| {
            ModelError::InvalidParameter(format!("m must be a perfect square, got {grids_per_region}"))
        })?;
        let s = k as f64 * grid_side;
        Self::new(regions_x as f64 * s, regions_y as f64 * s, grid_side, grids_per_region)
    }

    pub fn new(width: f64, height: f64, grid_side: f64, grids_per_region: u32) -> Result<Self, ModelError> {
        check_side(grid_side)?;
        let k = exact_sqrt(grids_per_region).ok_or_else(|| {
            ModelError::InvalidParameter(format!("m must be a perfect square, got {grids_per_region}"))
        })?;
        let s = k as f64 * grid_side;
        let tiles = |len: f64| len > 0.0 && ((len / s).round() * s - len).abs() < 1e-9 * len.max(1.0);
        if !tiles(width) || !tiles(height) {
            return Err(ModelError::InvalidParameter(format!(
                "map {width}x{height} is not tiled by regions of side {s}"
            )));
        }
        Ok(Self { width, height, grid_side, grids_per_region })
    }

    /// Grids along one region side, `√m`.
    pub fn region_side_grids(&self) -> u32 {
        exact_sqrt(self.grids_per_region).expect("validated at construction")
    }

    pub fn region_side(&self) -> f64 {
        self.region_side_grids() as f64 * self.grid_side
    }

    pub fn grids_x(&self) -> u32 {
        (self.width / self.grid_side).round() as u32
    }

    pub fn grids_y(&self) -> u32 {
        (self.height / self.grid_side).round() as u32
    }

    pub fn regions_x(&self) -> u32 {
        self.grids_x() / self.region_side_grids()
    }

    pub fn regions_y(&self) -> u32 {
        self.grids_y() / self.region_side_grids()
    }

    pub fn grid_count(&self) -> usize {
        self.grids_x() as usize * self.grids_y() as usize
    }

    pub fn search_radius(&self) -> f64 {
        search_radius(self.grid_side, self.grids_per_region).expect("validated at construction")
    }

    /// Half-open containment: `[0, width) × [0, height)`.
    pub fn contains(&self, p: Coord) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width && p.y < self.height
    }

    pub fn check(&self, p: Coord) -> Result<(), ModelError> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(ModelError::OutsideMap { x: p.x, y: p.y })
        }
    }

    pub fn grid_index(&self, p: Coord) -> Result<GridIndex, ModelError> {
        self.check(p)?;
        let ix = ((p.x / self.grid_side).floor() as u32).min(self.grids_x() - 1);
        let iy = ((p.y / self.grid_side).floor() as u32).min(self.grids_y() - 1);
        Ok(GridIndex::new(ix, iy))
    }

    pub fn grid_of(&self, p: Coord) -> Result<GridCoord, ModelError> {
        Ok(self.grid_coord(self.grid_index(p)?))
    }

    pub fn grid_coord(&self, g: GridIndex) -> GridCoord {
        GridCoord { x: g.ix as f64 * self.grid_side, y: g.iy as f64 * self.grid_side }
    }

    /// Index of the grid whose corner is `g`, if `g` is a corner on the map.
    pub fn grid_index_of_corner(&self, g: GridCoord) -> Option<GridIndex> {
        let ix = (g.x / self.grid_side).round();
        let iy = (g.y / self.grid_side).round();
        let exact = (ix * self.grid_side - g.x).abs() < 1e-6 && (iy * self.grid_side - g.y).abs() < 1e-6;
        (exact && ix >= 0.0 && iy >= 0.0 && (ix as u32) < self.grids_x() && (iy as u32) < self.grids_y())
            .then(|| GridIndex::new(ix as u32, iy as u32))
    }

    pub fn grid_center(&self, g: GridIndex) -> Coord {
        Coord::new((g.ix as f64 + 0.5) * self.grid_side, (g.iy as f64 + 0.5) * self.grid_side)
    }

    pub fn region_index(&self, p: Coord) -> Result<RegionIndex, ModelError> {
        let g = self.grid_index(p)?;
        Ok(self.region_of_grid(g))
    }

    pub fn region_of_grid(&self, g: GridIndex) -> RegionIndex {
        let k = self.region_side_grids();
        RegionIndex::new(g.ix / k, g.iy / k)
    }

    pub fn region_of(&self, p: Coord) -> Result<RegionCoord, ModelError> {
        Ok(self.region_coord(self.region_index(p)?))
    }

    pub fn region_coord(&self, r: RegionIndex) -> RegionCoord {
        let s = self.region_side();
        RegionCoord { x: r.rx as f64 * s, y: r.ry as f64 * s }
    }

    pub fn region_index_of_corner(&self, r: RegionCoord) -> Option<RegionIndex> {
        let s = self.region_side();
        let rx = (r.x / s).round();
        let ry = (r.y / s).round();
        let exact = (rx * s - r.x).abs() < 1e-6 && (ry * s - r.y).abs() < 1e-6;
        (exact && rx >= 0.0 && ry >= 0.0 && (rx as u32) < self.regions_x() && (ry as u32) < self.regions_y())
            .then(|| RegionIndex::new(rx as u32, ry as u32))
    }

    /// Lower-left grid of a region; inventories are stored by this grid's owner.
    pub fn region_anchor_grid(&self, r: RegionIndex) -> GridIndex {
        let k = self.region_side_grids();
        GridIndex::new(r.rx * k, r.ry * k)
    }

    pub fn region_center(&self, r: RegionIndex) -> Coord {
        let s = self.region_side();
        Coord::new((r.rx as f64 + 0.5) * s, (r.ry as f64 + 0.5) * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-9;

    #[test]
    fn grid_of_examples() {
        assert_eq!(grid_of(Coord::new(450.0, 750.0), 100.0).unwrap(), GridCoord { x: 400.0, y: 700.0 });
        assert_eq!(grid_of(Coord::new(0.0, 0.0), 100.0).unwrap(), GridCoord { x: 0.0, y: 0.0 });
        assert_eq!(grid_of(Coord::new(99.999, 100.0), 100.0).unwrap(), GridCoord { x: 0.0, y: 100.0 });
        assert!(grid_of(Coord::new(-1.0, 0.0), 100.0).is_err());
    }

    // Oracle: enumerate the region tiling and pick the tile containing p.
    fn region_by_enumeration(p: Coord, s: f64, tiles: u32) -> RegionCoord {
        for rx in 0..tiles {
            for ry in 0..tiles {
                let (x0, y0) = (rx as f64 * s, ry as f64 * s);
                if p.x >= x0 && p.x < x0 + s && p.y >= y0 && p.y < y0 + s {
                    return RegionCoord { x: x0, y: y0 };
                }
            }
        }
        panic!("point outside enumerated tiling");
    }

    #[test]
    fn region_of_examples() {
        assert_eq!(region_of(Coord::new(450.0, 750.0), 100.0, 9).unwrap(), RegionCoord { x: 300.0, y: 600.0 });
        assert_eq!(region_of(Coord::new(299.0, 299.0), 100.0, 9).unwrap(), RegionCoord { x: 0.0, y: 0.0 });
        assert_eq!(region_of(Coord::new(0.0, 0.0), 100.0, 9).unwrap(), RegionCoord { x: 0.0, y: 0.0 });
        for p in [Coord::new(450.0, 750.0), Coord::new(299.0, 299.0)] {
            assert_eq!(region_of(p, 100.0, 9).unwrap(), region_by_enumeration(p, 300.0, 10));
        }
        assert!(region_of(Coord::new(1.0, 1.0), 100.0, 8).is_err());
    }

    #[test]
    fn search_radius_examples() {
        assert!((search_radius(100.0, 9).unwrap() - 150.0 * 2f64.sqrt()).abs() < EPS);
        assert!((search_radius(100.0, 9).unwrap() - 212.132).abs() < 1e-3);
        assert!((search_radius(1.0, 1).unwrap() - 0.7071).abs() < 1e-4);
        assert!(search_radius(0.0, 9).is_err());
    }

    #[test]
    fn cycle_period_examples() {
        assert_eq!(cycle_period(150.0 * 2f64.sqrt(), 30.0).unwrap(), 10);
        assert_eq!(cycle_period(1.0, 2f64.sqrt()).unwrap(), 1);
        assert!(cycle_period(1.0, 0.0).is_err());
        assert_eq!(cycle_period(10.0, 3.0).unwrap(), 5);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance(Coord::new(0.0, 0.0), Coord::new(3.0, 4.0)), 5.0);
        assert_eq!(distance(Coord::new(7.0, 2.0), Coord::new(7.0, 2.0)), 0.0);
        let d = distance(Coord::new(300.0, 600.0), Coord::new(450.0, 750.0));
        assert!((d - 150.0 * 2f64.sqrt()).abs() < EPS);
    }

    #[test]
    fn geometry_defaults() {
        let g = Geometry::from_regions(5, 4, 100.0, 9).unwrap();
        assert_eq!((g.width, g.height), (1500.0, 1200.0));
        assert_eq!((g.grids_x(), g.grids_y()), (15, 12));
        assert_eq!((g.regions_x(), g.regions_y()), (5, 4));
        assert!(Geometry::new(1000.0, 900.0, 100.0, 9).is_err());
        assert!(!g.contains(Coord::new(1500.0, 0.0)));
    }

    proptest! {
        #[test]
        fn grid_and_region_properties(x in 0.0f64..1500.0, y in 0.0f64..1200.0) {
            let p = Coord::new(x, y);
            let l = 100.0;
            let g = grid_of(p, l).unwrap();
            let r = region_of(p, l, 9).unwrap();
            // idempotent on own outputs
            prop_assert_eq!(grid_of(g.corner(), l).unwrap(), g);
            prop_assert_eq!(region_of(r.corner(), l, 9).unwrap(), r);
            prop_assert!(distance(p, g.corner()) < l * 2f64.sqrt());
            prop_assert!(r.x <= g.x && r.y <= g.y);
            let center = Coord::new(r.x + 150.0, r.y + 150.0);
            prop_assert!(distance(p, center) <= search_radius(l, 9).unwrap() + EPS);
        }
    }
}
