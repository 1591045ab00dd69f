//! Facial regions of interest derived from 68-point landmarks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataio::{Point, LANDMARK_COUNT};
use crate::error::{Error, Result};

/// The seven facial regions used as spatial views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoiId {
    WholeFace,
    Forehead,
    LeftTopCheek,
    RightTopCheek,
    LeftBottomCheek,
    RightBottomCheek,
    Chin,
}

impl RoiId {
    pub const ALL: [RoiId; 7] = [
        RoiId::WholeFace,
        RoiId::Forehead,
        RoiId::LeftTopCheek,
        RoiId::RightTopCheek,
        RoiId::LeftBottomCheek,
        RoiId::RightBottomCheek,
        RoiId::Chin,
    ];

    /// One-based region number `m` in `1..=7`.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn from_number(m: usize) -> Option<RoiId> {
        m.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            RoiId::WholeFace => "whole face",
            RoiId::Forehead => "forehead",
            RoiId::LeftTopCheek => "left top cheek",
            RoiId::RightTopCheek => "right top cheek",
            RoiId::LeftBottomCheek => "left bottom cheek",
            RoiId::RightBottomCheek => "right bottom cheek",
            RoiId::Chin => "chin",
        }
    }
}

impl fmt::Display for RoiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{} ({})", self.number(), self.name())
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.x0 <= other.x0 && other.x1 <= self.x1 && self.y0 <= other.y0 && other.y1 <= self.y1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// Rectangle for every [`RoiId`], indexed by `roi as usize`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceLayout {
    pub rects: [Rect; 7],
}

impl FaceLayout {
    pub fn get(&self, roi: RoiId) -> Rect {
        self.rects[roi as usize]
    }

    /// R2..R7 inside R1 and R1 inside a `width x height` frame.
    pub fn is_nested(&self, width: usize, height: usize) -> bool {
        let face = self.get(RoiId::WholeFace);
        let frame = Rect {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        };
        frame.contains_rect(&face) && RoiId::ALL[1..].iter().all(|&r| face.contains_rect(&self.get(r)))
    }
}

/// Result of mapping landmarks to regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiLayout {
    pub layout: FaceLayout,
    /// Some region extended past the frame and was clipped to it.
    pub clamped: bool,
}

/// Horizontal margin around the landmark bounding box, as a fraction of its width.
pub const FACE_MARGIN: f64 = 0.05;
/// Extension above the landmark bounding box, as a fraction of its height.
/// Landmarks stop at the eyebrows, so the forehead lies above them.
pub const FOREHEAD_EXTENSION: f64 = 0.20;

// 1-based landmark numbers in the 68-point scheme.
const BROWS: std::ops::RangeInclusive<usize> = 18..=27;
const NOSE_BOTTOM: std::ops::RangeInclusive<usize> = 32..=36;

fn p(points: &[Point], n: usize) -> Point {
    points[n - 1]
}

/// Float box `[left, right] x [top, bottom]` that must have positive extent.
struct Span {
    left: f64,
    top: f64,
    right: f64,
    bottom: f64,
}

impl Span {
    fn to_rect(&self, roi: RoiId, width: usize, height: usize, clamped: &mut bool) -> Result<Rect> {
        if !(self.right > self.left && self.bottom > self.top) {
            return Err(Error::DegenerateRoi {
                roi: roi.to_string(),
                reason: format!(
                    "zero-area box x [{:.2}, {:.2}] y [{:.2}, {:.2}]",
                    self.left, self.right, self.top, self.bottom
                ),
            });
        }
        let clip = |lo: f64, hi: f64, limit: usize, clamped: &mut bool| {
            let (a, b) = (lo.floor(), hi.ceil());
            if a < 0.0 || b > limit as f64 {
                *clamped = true;
            }
            (a.clamp(0.0, limit as f64) as usize, b.clamp(0.0, limit as f64) as usize)
        };
        let (x0, x1) = clip(self.left, self.right, width, clamped);
        let (y0, y1) = clip(self.top, self.bottom, height, clamped);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::DegenerateRoi {
                roi: roi.to_string(),
                reason: "region lies outside the frame".into(),
            });
        }
        Ok(Rect { x0, y0, x1, y1 })
    }
}

fn spans(points: &[Point]) -> [Span; 7] {
    let xs = |range: std::ops::RangeInclusive<usize>| range.map(move |n| p(points, n)[0]);
    let ys = |range: std::ops::RangeInclusive<usize>| range.map(move |n| p(points, n)[1]);
    let min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);

    let (bx0, bx1) = (min(&mut xs(1..=68)), max(&mut xs(1..=68)));
    let (by0, by1) = (min(&mut ys(1..=68)), max(&mut ys(1..=68)));
    let (bw, bh) = (bx1 - bx0, by1 - by0);
    let face = Span {
        left: bx0 - FACE_MARGIN * bw,
        right: bx1 + FACE_MARGIN * bw,
        top: by0 - FOREHEAD_EXTENSION * bh,
        bottom: by1 + FACE_MARGIN * bh,
    };
    let nose_bottom = max(&mut ys(NOSE_BOTTOM));
    let forehead = Span {
        left: min(&mut xs(BROWS)),
        right: max(&mut xs(BROWS)),
        top: face.top,
        bottom: min(&mut ys(BROWS)),
    };
    let left_top = Span {
        left: p(points, 2)[0],
        right: p(points, 32)[0],
        top: p(points, 37)[1],
        bottom: p(points, 32)[1],
    };
    let right_top = Span {
        left: p(points, 36)[0],
        right: p(points, 16)[0],
        top: p(points, 46)[1],
        bottom: p(points, 36)[1],
    };
    let left_bottom = Span {
        left: p(points, 4)[0],
        right: p(points, 49)[0],
        top: nose_bottom,
        bottom: p(points, 49)[1],
    };
    let right_bottom = Span {
        left: p(points, 55)[0],
        right: p(points, 14)[0],
        top: nose_bottom,
        bottom: p(points, 55)[1],
    };
    let chin = Span {
        left: p(points, 49)[0],
        right: p(points, 55)[0],
        top: p(points, 58)[1],
        bottom: p(points, 9)[1],
    };
    [face, forehead, left_top, right_top, left_bottom, right_bottom, chin]
}

/// Maps one frame's 68 landmarks to the seven region rectangles inside a
/// `width x height` frame.
pub fn roi_layout(points: &[Point], width: usize, height: usize) -> Result<RoiLayout> {
    if points.len() != LANDMARK_COUNT {
        return Err(Error::InvalidLandmarks(format!(
            "expected {LANDMARK_COUNT} points, got {}",
            points.len()
        )));
    }
    let mut clamped = false;
    let spans = spans(points);
    let mut rects = [Rect {
        x0: 0,
        y0: 0,
        x1: 0,
        y1: 0,
    }; 7];
    for (roi, span) in RoiId::ALL.iter().zip(spans.iter()) {
        rects[*roi as usize] = span.to_rect(*roi, width, height, &mut clamped)?;
    }
    Ok(RoiLayout {
        layout: FaceLayout { rects },
        clamped,
    })
}

/// Human-readable landmark-to-region rules, exportable for audit.
#[derive(Debug, Clone, Serialize)]
pub struct RoiRule {
    pub number: usize,
    pub name: &'static str,
    pub horizontal: &'static str,
    pub vertical: &'static str,
}

pub fn roi_mapping_table() -> Vec<RoiRule> {
    let rule = |roi: RoiId, horizontal, vertical| RoiRule {
        number: roi.number(),
        name: roi.name(),
        horizontal,
        vertical,
    };
    vec![
        rule(
            RoiId::WholeFace,
            "bounding box of points 1-68 widened by 5% of its width on each side",
            "bounding box of points 1-68, raised by 20% of its height on top and 5% below",
        ),
        rule(RoiId::Forehead, "min..max x of points 18-27", "whole-face top .. min y of points 18-27"),
        rule(RoiId::LeftTopCheek, "x of point 2 .. x of point 32", "y of point 37 .. y of point 32"),
        rule(RoiId::RightTopCheek, "x of point 36 .. x of point 16", "y of point 46 .. y of point 36"),
        rule(RoiId::LeftBottomCheek, "x of point 4 .. x of point 49", "max y of points 32-36 .. y of point 49"),
        rule(RoiId::RightBottomCheek, "x of point 55 .. x of point 14", "max y of points 32-36 .. y of point 55"),
        rule(RoiId::Chin, "x of point 49 .. x of point 55", "y of point 58 .. y of point 9"),
    ]
}
