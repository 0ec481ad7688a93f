use serde::{Deserialize, Serialize};

/// An image-space location in pixels, `y` down and `x` right.
///
/// Serialized as a `[y, x]` array.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub y: f64,
    pub x: f64,
}

impl Point {
    pub const fn new(y: f64, x: f64) -> Self {
        Self { y, x }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.y - other.y).hypot(self.x - other.x)
    }

    pub fn is_finite(self) -> bool {
        self.y.is_finite() && self.x.is_finite()
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.y + rhs.y, self.x + rhs.x)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.y - rhs.y, self.x - rhs.x)
    }
}

impl From<[f64; 2]> for Point {
    fn from([y, x]: [f64; 2]) -> Self {
        Point::new(y, x)
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.y, p.x]
    }
}

/// Axis-aligned box, serialized as `[y, x, h, w]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub y: f64,
    pub x: f64,
    pub height: f64,
    pub width: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([y, x, height, width]: [f64; 4]) -> Self {
        BBox {
            y,
            x,
            height,
            width,
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.y, b.x, b.height, b.width]
    }
}

/// Image size in pixels, serialized as `[h, w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct ImageDims {
    pub height: u32,
    pub width: u32,
}

impl ImageDims {
    pub const fn new(height: u32, width: u32) -> Self {
        Self { height, width }
    }

    /// Closed-interval containment: `0 <= y <= height`, `0 <= x <= width`.
    pub fn contains(self, p: Point) -> bool {
        p.y >= 0.0 && p.x >= 0.0 && p.y <= self.height as f64 && p.x <= self.width as f64
    }
}

impl From<[u32; 2]> for ImageDims {
    fn from([height, width]: [u32; 2]) -> Self {
        ImageDims { height, width }
    }
}

impl From<ImageDims> for [u32; 2] {
    fn from(d: ImageDims) -> Self {
        [d.height, d.width]
    }
}
