//! Regions and dyadic tilings of Carleson cubes in exact rational arithmetic.
//!
//! A Carleson cube of radius `r` is `[-r, r] x [0, 2r]`. Three tilings are
//! provided: Whitney strips, Γ-shaped shells shrinking to the right corner
//! `(r, 0)`, and Π-shaped shells shrinking to the centre `(0, 0)`. Each keeps
//! the untiled remainder so that tiles plus remainder partition the cube.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::kernels::HalfPlanePoint;
use crate::lattice::{Interval, Rect, Region};

pub type Rat = Ratio<i128>;

/// Parses `"3/4"`, `"-2"` or a finite decimal such as `"0.375"` exactly.
pub fn parse_rat(s: &str) -> Result<Rat> {
    let s = s.trim();
    let bad = || Error::InvalidArgument(format!("not a rational number: {s:?}"));
    if s.contains('/') {
        return Rat::from_str(s).map_err(|_| bad());
    }
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if int.is_empty() && frac.is_empty()
        || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let den = 10i128.checked_pow(frac.len() as u32).ok_or_else(bad)?;
    let joined = format!("{int}{frac}");
    let num: i128 = if joined.is_empty() {
        0
    } else {
        joined.parse().map_err(|_| bad())?
    };
    let r = Rat::new(num, den);
    Ok(if neg { -r } else { r })
}

/// Exact rational value of a finite double with a dyadic denominator up to `2^100`.
pub fn rat_from_f64(x: f64) -> Result<Rat> {
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!("{x} is not finite")));
    }
    let mut v = x;
    let mut den: i128 = 1;
    while v.fract() != 0.0 {
        v *= 2.0;
        den *= 2;
        if den > 1i128 << 100 {
            return Err(Error::InvalidArgument(format!(
                "{x} has no short dyadic expansion"
            )));
        }
    }
    if v.abs() >= 2f64.powi(120) {
        return Err(Error::InvalidArgument(format!("{x} is too large")));
    }
    Ok(Rat::new(v as i128, den))
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn pow2(n: u32) -> Rat {
    Rat::from_integer(1i128 << n)
}

mod rat_serde {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rat, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Rat, D::Error> {
        let s = String::deserialize(d)?;
        parse_rat(&s).map_err(serde::de::Error::custom)
    }
}

/// Axis-aligned rectangle with exact rational corners.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatRect {
    #[serde(with = "rat_serde")]
    pub x0: Rat,
    #[serde(with = "rat_serde")]
    pub x1: Rat,
    #[serde(with = "rat_serde")]
    pub y0: Rat,
    #[serde(with = "rat_serde")]
    pub y1: Rat,
}

impl RatRect {
    pub fn new(x0: Rat, x1: Rat, y0: Rat, y1: Rat) -> Result<Self> {
        if !(x0 < x1 && y0 < y1 && y0 >= Rat::from_integer(0)) {
            return Err(Error::InvalidRegion(format!("[{x0}, {x1}] x [{y0}, {y1}]")));
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    fn raw(x0: Rat, x1: Rat, y0: Rat, y1: Rat) -> Self {
        Self { x0, x1, y0, y1 }
    }

    /// `[-r, r] x [0, 2r]`.
    pub fn carleson(r: Rat) -> Self {
        Self::raw(-r, r, Rat::from_integer(0), r * 2)
    }

    pub fn area(&self) -> Rat {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn to_rect(&self) -> Rect {
        Rect {
            x0: rat_to_f64(&self.x0),
            x1: rat_to_f64(&self.x1),
            y0: rat_to_f64(&self.y0),
            y1: rat_to_f64(&self.y1),
        }
    }

    /// Area of the intersection with `other`.
    pub fn overlap(&self, other: &RatRect) -> Rat {
        let zero = Rat::from_integer(0);
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w > zero && h > zero {
            w * h
        } else {
            zero
        }
    }

    pub fn contains_rect(&self, other: &RatRect) -> bool {
        self.x0 <= other.x0 && other.x1 <= self.x1 && self.y0 <= other.y0 && other.y1 <= self.y1
    }

    pub fn contains_point(&self, x: &Rat, y: &Rat) -> bool {
        &self.x0 <= x && x <= &self.x1 && &self.y0 <= y && y <= &self.y1
    }

    /// Image under `z -> c + s (z - c)` for a real centre `c`.
    pub fn scaled_about(&self, c: Rat, s: Rat) -> Self {
        Self::raw(
            c + (self.x0 - c) * s,
            c + (self.x1 - c) * s,
            self.y0 * s,
            self.y1 * s,
        )
    }
}

impl fmt::Display for RatRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}] x [{}, {}]", self.x0, self.x1, self.y0, self.y1)
    }
}

impl Region for RatRect {
    fn contains(&self, z: HalfPlanePoint) -> bool {
        self.to_rect().contains(z)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatInterval {
    #[serde(with = "rat_serde")]
    pub a: Rat,
    #[serde(with = "rat_serde")]
    pub b: Rat,
}

impl RatInterval {
    pub fn new(a: Rat, b: Rat) -> Self {
        Self { a, b }
    }

    pub fn to_interval(&self) -> Interval {
        Interval {
            a: rat_to_f64(&self.a),
            b: rat_to_f64(&self.b),
        }
    }
}

/// A region given as a finite union of interior-disjoint rational rectangles.
pub trait ExactRegion {
    fn parts(&self) -> Vec<RatRect>;
}

impl ExactRegion for RatRect {
    fn parts(&self) -> Vec<RatRect> {
        vec![self.clone()]
    }
}

/// Orthogonal projection onto the real line: `[min x, max x]`.
pub fn project_boundary(region: &dyn ExactRegion) -> Option<RatInterval> {
    let parts = region.parts();
    let a = parts.iter().map(|p| p.x0).min()?;
    let b = parts.iter().map(|p| p.x1).max()?;
    Some(RatInterval::new(a, b))
}

/// Where the region touches the real line, as sorted maximal intervals.
/// Empty when the region sits at positive distance from the boundary.
pub fn boundary_intersection(region: &dyn ExactRegion) -> Vec<RatInterval> {
    let zero = Rat::from_integer(0);
    let mut pieces: Vec<(Rat, Rat)> = region
        .parts()
        .iter()
        .filter(|p| p.y0 == zero)
        .map(|p| (p.x0, p.x1))
        .collect();
    pieces.sort();
    let mut out: Vec<RatInterval> = Vec::new();
    for (a, b) in pieces {
        match out.last_mut() {
            Some(last) if a <= last.b => last.b = last.b.max(b),
            _ => out.push(RatInterval::new(a, b)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileKind {
    Whitney,
    Gamma,
    Pi,
}

impl FromStr for TileKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitney" => Ok(TileKind::Whitney),
            "gamma" => Ok(TileKind::Gamma),
            "pi" => Ok(TileKind::Pi),
            _ => Err(Error::InvalidArgument(format!("unknown tiling kind {s:?}"))),
        }
    }
}

/// One tile: a level `n` and the rectangles making it up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub level: u32,
    pub parts: Vec<RatRect>,
}

impl Tile {
    pub fn area(&self) -> Rat {
        self.parts.iter().map(RatRect::area).sum()
    }

    pub fn contains_point(&self, x: &Rat, y: &Rat) -> bool {
        self.parts.iter().any(|p| p.contains_point(x, y))
    }

    pub fn scaled_about(&self, c: Rat, s: Rat) -> Tile {
        Tile {
            level: self.level,
            parts: self.parts.iter().map(|p| p.scaled_about(c, s)).collect(),
        }
    }
}

impl ExactRegion for Tile {
    fn parts(&self) -> Vec<RatRect> {
        self.parts.clone()
    }
}

impl Region for Tile {
    fn contains(&self, z: HalfPlanePoint) -> bool {
        self.parts.iter().any(|p| p.contains(z))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSet {
    pub kind: TileKind,
    pub levels: u32,
    pub base: RatRect,
    #[serde(with = "rat_serde")]
    pub anchor: Rat,
    pub tiles: Vec<Tile>,
    pub remainder: RatRect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionReport {
    pub disjoint: bool,
    pub contained: bool,
    #[serde(with = "rat_serde")]
    pub area_sum: Rat,
    #[serde(with = "rat_serde")]
    pub base_area: Rat,
}

impl PartitionReport {
    /// Disjoint pieces inside the base with full total area cover it.
    pub fn is_partition(&self) -> bool {
        self.disjoint && self.contained && self.area_sum == self.base_area
    }
}

/// Where a point falls in a tiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Tile(usize),
    Remainder,
    Outside,
}

impl TileSet {
    fn pieces(&self) -> Vec<&RatRect> {
        self.tiles
            .iter()
            .flat_map(|t| t.parts.iter())
            .chain(std::iter::once(&self.remainder))
            .collect()
    }

    pub fn areas(&self) -> Vec<Rat> {
        self.tiles.iter().map(Tile::area).collect()
    }

    pub fn verify_partition(&self) -> PartitionReport {
        let pieces = self.pieces();
        let zero = Rat::from_integer(0);
        let disjoint = pieces
            .iter()
            .enumerate()
            .all(|(i, a)| pieces[i + 1..].iter().all(|b| a.overlap(b) == zero));
        PartitionReport {
            disjoint,
            contained: pieces.iter().all(|p| self.base.contains_rect(p)),
            area_sum: pieces.iter().map(|p| p.area()).sum(),
            base_area: self.base.area(),
        }
    }

    /// First tile containing the point, scanning from the coarsest level,
    /// so shared edges belong to the tile with the smaller level.
    pub fn locate(&self, x: &Rat, y: &Rat) -> Location {
        if let Some(i) = self.tiles.iter().position(|t| t.contains_point(x, y)) {
            Location::Tile(i)
        } else if self.remainder.contains_point(x, y) {
            Location::Remainder
        } else {
            Location::Outside
        }
    }

    pub fn locate_f64(&self, z: HalfPlanePoint) -> Result<Location> {
        Ok(self.locate(&rat_from_f64(z.x)?, &rat_from_f64(z.y)?))
    }
}

fn check_radius(r: Rat) -> Result<()> {
    if r <= Rat::from_integer(0) {
        return Err(Error::InvalidArgument(format!(
            "radius {r} must be positive"
        )));
    }
    Ok(())
}

const MAX_LEVELS: u32 = 60;

fn check_levels(n_max: u32, min: u32) -> Result<()> {
    if n_max < min || n_max > MAX_LEVELS {
        return Err(Error::InvalidArgument(format!(
            "levels must lie in [{min}, {MAX_LEVELS}], got {n_max}"
        )));
    }
    Ok(())
}

/// Level `n` has `2^n` tiles of width `2^(1-n) r` filling the strip
/// `[-r, r] x [2^(-n) r, 2^(1-n) r]`; the remainder is `[-r, r] x [0, 2^(-n_max) r]`.
pub fn whitney_tiles(r: Rat, n_max: u32) -> Result<TileSet> {
    check_radius(r)?;
    check_levels(n_max, 0)?;
    let mut tiles = Vec::new();
    for n in 0..=n_max {
        let height = r / pow2(n);
        let width = r * 2 / pow2(n);
        for i in 0..(1i128 << n) {
            let x0 = -r + width * i;
            tiles.push(Tile {
                level: n,
                parts: vec![RatRect::raw(x0, x0 + width, height, height * 2)],
            });
        }
    }
    let zero = Rat::from_integer(0);
    Ok(TileSet {
        kind: TileKind::Whitney,
        levels: n_max,
        base: RatRect::carleson(r),
        anchor: zero,
        tiles,
        remainder: RatRect::raw(-r, r, zero, r / pow2(n_max)),
    })
}

/// `Q'_rho = [r - 2 rho, r] x [0, 2 rho]`.
pub fn q_prime(r: Rat, rho: Rat) -> RatRect {
    RatRect::raw(r - rho * 2, r, Rat::from_integer(0), rho * 2)
}

/// `Γ_rho = Q'_{2 rho} \ Q'_rho` as a left block and a top slab.
pub fn gamma_region(r: Rat, rho: Rat) -> Tile {
    let zero = Rat::from_integer(0);
    let left = RatRect::raw(r - rho * 4, r - rho * 2, zero, rho * 2);
    let top = RatRect::raw(r - rho * 4, r, rho * 2, rho * 4);
    Tile {
        level: 0,
        parts: vec![left, top],
    }
}

/// Tiles `Γ_{2^(-n) r}` for `1 <= n <= n_max`, remainder `Q'_{2^(-n_max) r}`.
pub fn gamma_tiles(r: Rat, n_max: u32) -> Result<TileSet> {
    check_radius(r)?;
    check_levels(n_max, 1)?;
    let tiles = (1..=n_max)
        .map(|n| Tile {
            level: n,
            ..gamma_region(r, r / pow2(n))
        })
        .collect();
    Ok(TileSet {
        kind: TileKind::Gamma,
        levels: n_max,
        base: RatRect::carleson(r),
        anchor: r,
        tiles,
        remainder: q_prime(r, r / pow2(n_max)),
    })
}

/// `Π_rho = Q_{2 rho} \ Q_rho` as a top slab and two side cubes.
pub fn pi_region(rho: Rat) -> Tile {
    let zero = Rat::from_integer(0);
    let top = RatRect::raw(-rho * 2, rho * 2, rho * 2, rho * 4);
    let left = RatRect::raw(-rho * 2, -rho, zero, rho * 2);
    let right = RatRect::raw(rho, rho * 2, zero, rho * 2);
    Tile {
        level: 0,
        parts: vec![top, left, right],
    }
}

/// Tiles `Π_{2^(-n) r}` for `1 <= n <= n_max`, remainder `Q_{2^(-n_max) r}`.
pub fn pi_tiles(r: Rat, n_max: u32) -> Result<TileSet> {
    check_radius(r)?;
    check_levels(n_max, 1)?;
    let tiles = (1..=n_max)
        .map(|n| Tile {
            level: n,
            ..pi_region(r / pow2(n))
        })
        .collect();
    Ok(TileSet {
        kind: TileKind::Pi,
        levels: n_max,
        base: RatRect::carleson(r),
        anchor: Rat::from_integer(0),
        tiles,
        remainder: RatRect::carleson(r / pow2(n_max)),
    })
}

pub fn tiles(kind: TileKind, r: Rat, n_max: u32) -> Result<TileSet> {
    match kind {
        TileKind::Whitney => whitney_tiles(r, n_max),
        TileKind::Gamma => gamma_tiles(r, n_max),
        TileKind::Pi => pi_tiles(r, n_max),
    }
}

/// Region between `y = 0`, `y = 2r`, and the side lines `x = a + k1 y`, `x = b + k2 y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trapezoid {
    pub a: f64,
    pub b: f64,
    pub k1: f64,
    pub k2: f64,
    pub r: f64,
}

/// Builds a trapezoid, rejecting side lines that meet inside the strip `0 <= y <= 2r`.
pub fn trapezoid_region(a: f64, b: f64, k1: f64, k2: f64, r: f64) -> Result<Trapezoid> {
    if ![a, b, k1, k2, r].iter().all(|v| v.is_finite()) || !(a < b) || !(r > 0.0) {
        return Err(Error::InvalidRegion(format!(
            "trapezoid a={a} b={b} k1={k1} k2={k2} r={r}"
        )));
    }
    if k1 != k2 {
        let y = (b - a) / (k1 - k2);
        if (0.0..=2.0 * r).contains(&y) {
            return Err(Error::TangentialIntersection { y, height: 2.0 * r });
        }
    }
    Ok(Trapezoid { a, b, k1, k2, r })
}

impl Trapezoid {
    pub fn left(&self, y: f64) -> f64 {
        self.a + self.k1 * y
    }

    pub fn right(&self, y: f64) -> f64 {
        self.b + self.k2 * y
    }

    pub fn height(&self) -> f64 {
        2.0 * self.r
    }

    pub fn area(&self) -> f64 {
        let h = self.height();
        0.5 * h * ((self.b - self.a) + (self.right(h) - self.left(h)))
    }

    /// `[min x, max x]` over the trapezoid.
    pub fn projection(&self) -> Interval {
        let h = self.height();
        Interval {
            a: self.a.min(self.left(h)),
            b: self.b.max(self.right(h)),
        }
    }

    /// The base `[a, b]`.
    pub fn boundary_interval(&self) -> Interval {
        Interval {
            a: self.a,
            b: self.b,
        }
    }

    /// Whether the whole trapezoid lies in the Carleson cube of radius `radius`.
    pub fn within(&self, radius: f64) -> bool {
        let p = self.projection();
        p.a >= -radius && p.b <= radius && self.height() <= 2.0 * radius
    }
}

impl Region for Trapezoid {
    fn contains(&self, z: HalfPlanePoint) -> bool {
        z.y >= 0.0 && z.y <= self.height() && z.x >= self.left(z.y) && z.x <= self.right(z.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(s: &str) -> Rat {
        parse_rat(s).unwrap()
    }

    #[test]
    fn parsing() {
        assert_eq!(q("3/4"), Rat::new(3, 4));
        assert_eq!(q("0.75"), Rat::new(3, 4));
        assert_eq!(q("-2"), Rat::from_integer(-2));
        assert_eq!(q("-.5"), Rat::new(-1, 2));
        assert!(parse_rat("abc").is_err());
        assert!(parse_rat("").is_err());
        assert_eq!(rat_from_f64(0.375).unwrap(), Rat::new(3, 8));
        assert!(rat_from_f64(0.1).is_err() || rat_from_f64(0.1).unwrap() != Rat::new(1, 10));
    }

    #[test]
    fn projections() {
        let cube = RatRect::carleson(q("1"));
        assert_eq!(
            project_boundary(&cube),
            Some(RatInterval::new(q("-1"), q("1")))
        );
        let lifted = RatRect::new(q("0"), q("1"), q("1"), q("2")).unwrap();
        assert_eq!(
            project_boundary(&lifted),
            Some(RatInterval::new(q("0"), q("1")))
        );
        let g = gamma_region(q("1"), q("1/4"));
        assert_eq!(project_boundary(&g), Some(RatInterval::new(q("0"), q("1"))));
    }

    #[test]
    fn boundary_intersections() {
        let g = gamma_region(q("1"), q("1/4"));
        assert_eq!(
            boundary_intersection(&g),
            vec![RatInterval::new(q("0"), q("1/2"))]
        );
        let upper = RatRect::new(q("-1"), q("1"), q("1"), q("2")).unwrap();
        assert!(boundary_intersection(&upper).is_empty());
        assert_eq!(
            boundary_intersection(&RatRect::carleson(q("1"))),
            vec![RatInterval::new(q("-1"), q("1"))]
        );
        let p = pi_region(q("1/4"));
        assert_eq!(
            boundary_intersection(&p),
            vec![
                RatInterval::new(q("-1/2"), q("-1/4")),
                RatInterval::new(q("1/4"), q("1/2"))
            ]
        );
    }

    #[test]
    fn whitney_examples() {
        let t = whitney_tiles(q("1"), 0).unwrap();
        assert_eq!(t.tiles.len(), 1);
        assert_eq!(
            t.tiles[0].parts[0],
            RatRect::new(q("-1"), q("1"), q("1"), q("2")).unwrap()
        );
        assert_eq!(
            t.remainder,
            RatRect::new(q("-1"), q("1"), q("0"), q("1")).unwrap()
        );
        assert!(t.verify_partition().is_partition());

        let t = whitney_tiles(q("1"), 2).unwrap();
        assert_eq!(t.tiles.len(), 7);
        let levels: Vec<Rat> = (0..3)
            .map(|n| {
                t.tiles
                    .iter()
                    .filter(|x| x.level == n)
                    .map(Tile::area)
                    .sum()
            })
            .collect();
        assert_eq!(levels, vec![q("2"), q("1"), q("1/2")]);
        assert_eq!(t.remainder.area(), q("1/2"));
        assert_eq!(t.verify_partition().area_sum, q("4"));
        assert!(t
            .tiles
            .iter()
            .filter(|x| x.level == 2)
            .all(|x| x.parts[0].y1 - x.parts[0].y0 == q("1/4")));
    }

    #[test]
    fn gamma_examples() {
        let t = gamma_tiles(q("1"), 1).unwrap();
        assert_eq!(t.tiles[0].area(), q("3"));
        assert_eq!(
            t.remainder,
            RatRect::new(q("0"), q("1"), q("0"), q("1")).unwrap()
        );
        assert!(t.verify_partition().is_partition());
        assert!(gamma_tiles(q("1"), 0).is_err());
        assert_eq!(
            gamma_tiles(q("1"), 3).unwrap().areas().iter().sum::<Rat>() + q("1/16"),
            q("4")
        );
    }

    #[test]
    fn pi_examples() {
        let t = pi_tiles(q("1"), 1).unwrap();
        assert_eq!(t.tiles[0].area(), q("3"));
        let t = pi_tiles(q("1"), 3).unwrap();
        assert_eq!(t.remainder, RatRect::carleson(q("1/8")));
        assert_eq!(t.remainder.area(), q("4/64"));
        assert!(t.verify_partition().is_partition());
    }

    #[test]
    fn shared_edges_go_to_coarser_tile() {
        let t = gamma_tiles(q("1"), 3).unwrap();
        // (0, 1/2) lies on the edge shared by the first two Γ tiles.
        assert_eq!(t.locate(&q("0"), &q("1/2")), Location::Tile(0));
        assert_eq!(t.locate(&q("15/16"), &q("1/32")), Location::Remainder);
        assert_eq!(t.locate(&q("2"), &q("0")), Location::Outside);
        let p = pi_tiles(q("1"), 2).unwrap();
        assert_eq!(p.locate(&q("1/2"), &q("1/4")), Location::Tile(0));
    }

    #[test]
    fn tileset_json_round_trip() {
        let t = gamma_tiles(q("3/4"), 2).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"kind\":\"gamma\""));
        assert!(s.contains("\"3/4\""));
        let back: TileSet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn trapezoid_examples() {
        let flat = trapezoid_region(-0.25, 0.25, 0.0, 0.0, 0.25).unwrap();
        let rect = Rect::new(-0.25, 0.25, 0.0, 0.5).unwrap();
        for (x, y) in [
            (0.0, 0.1),
            (0.24, 0.49),
            (0.26, 0.1),
            (0.0, 0.51),
            (-0.25, 0.0),
        ] {
            let z = HalfPlanePoint { x, y };
            assert_eq!(flat.contains(z), rect.contains(z));
        }
        assert!(trapezoid_region(-1.0, 1.0, -0.5, 0.5, 0.25).is_ok());
        assert!(trapezoid_region(-1.0, 1.0, -1.0, 1.0, 0.25).is_ok());
        assert_eq!(
            trapezoid_region(-0.25, 0.25, 1.0, -1.0, 0.25).unwrap_err(),
            Error::TangentialIntersection {
                y: 0.25,
                height: 0.5
            }
        );
        assert!(trapezoid_region(-0.25, 0.25, 0.1, -0.1, 0.25).is_ok());
        let t = trapezoid_region(-0.25, 0.25, -0.5, 0.5, 0.125).unwrap();
        assert!((t.area() - 0.25 * 0.5 * (0.5 + 0.75)).abs() < 1e-15);
        assert_eq!(t.boundary_interval(), Interval { a: -0.25, b: 0.25 });
        assert_eq!(
            t.projection(),
            Interval {
                a: -0.375,
                b: 0.375
            }
        );
        assert!(t.within(0.5));
    }

    fn radii() -> Vec<Rat> {
        vec![q("1"), q("1/2"), q("3/4")]
    }

    #[test]
    fn partitions_are_exact() {
        for r in radii() {
            for n in 0..=10 {
                let w = whitney_tiles(r, n).unwrap();
                assert!(w.verify_partition().is_partition(), "whitney r={r} n={n}");
                assert_eq!(w.verify_partition().area_sum, r * r * 4);
                if n >= 1 {
                    for t in [gamma_tiles(r, n).unwrap(), pi_tiles(r, n).unwrap()] {
                        let rep = t.verify_partition();
                        assert!(rep.is_partition(), "{:?} r={r} n={n}", t.kind);
                        assert_eq!(rep.area_sum, r * r * 4);
                    }
                }
            }
        }
    }

    #[test]
    fn gamma_areas_and_anchor_intervals() {
        for r in radii() {
            let t = gamma_tiles(r, 10).unwrap();
            for tile in &t.tiles {
                let n = tile.level;
                assert_eq!(tile.area(), r * r * 12 / (pow2(n) * pow2(n)));
                let rho = r / pow2(n);
                assert_eq!(
                    boundary_intersection(tile),
                    vec![RatInterval::new(r - rho * 4, r - rho * 2)]
                );
                assert_eq!(
                    boundary_intersection(tile),
                    vec![RatInterval::new(r - r * 4 / pow2(n), r - r * 2 / pow2(n))]
                );
            }
        }
    }

    #[test]
    fn tiles_are_self_similar() {
        let half = q("1/2");
        for r in radii() {
            let g = gamma_tiles(r, 6).unwrap();
            for w in g.tiles.windows(2) {
                let scaled = w[0].scaled_about(r, half);
                assert_eq!(scaled.parts, w[1].parts);
            }
            let p = pi_tiles(r, 6).unwrap();
            for w in p.tiles.windows(2) {
                assert_eq!(w[0].scaled_about(q("0"), half).parts, w[1].parts);
            }
        }
    }

    proptest! {
        #[test]
        fn random_dyadic_partitions(num in 1i128..64, shift in 0u32..6, n in 1u32..9) {
            let r = Rat::new(num, 1i128 << shift);
            for t in [whitney_tiles(r, n).unwrap(), gamma_tiles(r, n).unwrap(), pi_tiles(r, n).unwrap()] {
                prop_assert!(t.verify_partition().is_partition());
            }
        }

        #[test]
        fn every_lattice_point_is_located(i in 0i128..64, j in 0i128..64, n in 1u32..6) {
            let r = q("1");
            let x = Rat::new(2 * i + 1, 64) - r;
            let y = Rat::new(2 * j + 1, 64);
            for t in [whitney_tiles(r, n).unwrap(), gamma_tiles(r, n).unwrap(), pi_tiles(r, n).unwrap()] {
                prop_assert_ne!(t.locate(&x, &y), Location::Outside);
            }
        }
    }
}
