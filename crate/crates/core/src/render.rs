//! Skeleton drawings on the 256 × 256 canvas, as SVG text or PNG rasters.
//!
//! Both backends draw from the same [`Layout`], so joint centers agree
//! between formats. Joints below the visibility threshold are drawn as gray
//! markers, and any limb touching one is drawn gray and dashed.

use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::skeleton::{denormalize_coords, normalize_coords, Pose, SkeletonTopology, IMAGE_SIDE, NUM_JOINTS};

pub const CANVAS: u32 = 256;
pub const JOINT_RADIUS: f64 = 3.0;
pub const LIMB_WIDTH: f64 = 2.0;
/// Dash and gap length, in pixels, of limbs with a hidden endpoint.
pub const DASH: f64 = 4.0;
pub const VISIBLE_THRESHOLD: f64 = 0.5;

const BACKGROUND: [u8; 3] = [255, 255, 255];
const HIDDEN: [u8; 3] = [160, 160, 160];
const JOINT: [u8; 3] = [40, 40, 40];
const LIMBS: [[u8; 3]; 17] = [
    [230, 25, 75],
    [245, 130, 48],
    [255, 180, 0],
    [210, 200, 20],
    [60, 180, 75],
    [70, 200, 150],
    [0, 160, 190],
    [0, 130, 200],
    [60, 80, 220],
    [110, 60, 200],
    [145, 30, 180],
    [190, 40, 160],
    [240, 50, 230],
    [128, 0, 0],
    [170, 110, 40],
    [0, 0, 128],
    [0, 128, 128],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderFormat {
    Svg,
    Png,
}

impl RenderFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RenderFormat::Svg => "svg",
            RenderFormat::Png => "png",
        }
    }
}

impl FromStr for RenderFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svg" => Ok(RenderFormat::Svg),
            "png" => Ok(RenderFormat::Png),
            other => Err(Error::Validation(format!(
                "unknown render format {other:?}, expected svg or png"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Marker {
    pub joint: usize,
    pub center: (f64, f64),
    pub visible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub edge: usize,
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub solid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub markers: Vec<Marker>,
    pub segments: Vec<Segment>,
}

/// Places joints and limbs in canvas pixels. `visibility` holds labels or
/// probabilities; values at or above [`VISIBLE_THRESHOLD`] count as visible.
pub fn layout(pose: &Pose, visibility: &[f64], topo: &SkeletonTopology) -> Result<Layout> {
    if pose.len() != NUM_JOINTS || visibility.len() != NUM_JOINTS {
        return Err(Error::DimensionMismatch {
            expected: NUM_JOINTS,
            found: if pose.len() != NUM_JOINTS {
                pose.len()
            } else {
                visibility.len()
            },
        });
    }
    let side = CANVAS as f64;
    let visible: Vec<bool> = visibility.iter().map(|&v| v >= VISIBLE_THRESHOLD).collect();
    let center = |j: usize| denormalize_coords(pose[j], side, side);
    let markers = (0..NUM_JOINTS)
        .map(|j| Marker {
            joint: j,
            center: center(j),
            visible: visible[j],
        })
        .collect();
    let segments = topo
        .edges()
        .iter()
        .enumerate()
        .map(|(edge, &(i, j))| Segment {
            edge,
            from: center(i),
            to: center(j),
            solid: visible[i] && visible[j],
        })
        .collect();
    Ok(Layout { markers, segments })
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn limb_color(edge: usize) -> [u8; 3] {
    LIMBS[edge % LIMBS.len()]
}

pub fn render_svg(layout: &Layout) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{CANVAS}" height="{CANVAS}" fill="{}"/>"#,
        hex(BACKGROUND)
    );
    for seg in &layout.segments {
        let (color, dash) = if seg.solid {
            (limb_color(seg.edge), String::new())
        } else {
            (HIDDEN, format!(r#" stroke-dasharray="{DASH} {DASH}""#))
        };
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="{LIMB_WIDTH}"{dash}/>"#,
            seg.from.0,
            seg.from.1,
            seg.to.0,
            seg.to.1,
            hex(color)
        );
    }
    for m in &layout.markers {
        let color = if m.visible { JOINT } else { HIDDEN };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{JOINT_RADIUS}" fill="{}" data-joint="{}"/>"#,
            m.center.0,
            m.center.1,
            hex(color),
            m.joint
        );
    }
    s.push_str("</svg>\n");
    s
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).hypot(p.1 - cy), t * len2.sqrt())
}

fn pixel_span(lo: f64, hi: f64) -> std::ops::Range<u32> {
    let lo = lo.floor().max(0.0) as u32;
    let hi = (hi.ceil().max(0.0) as u32).min(CANVAS);
    lo..hi
}

/// Rasterizes the layout. A pixel is painted when its center lies inside
/// the shape, so a marker's pixels are symmetric about its center.
pub fn render_png(layout: &Layout) -> RgbImage {
    let mut img = RgbImage::from_pixel(CANVAS, CANVAS, Rgb(BACKGROUND));
    let half = LIMB_WIDTH / 2.0;
    for seg in &layout.segments {
        let color = if seg.solid { limb_color(seg.edge) } else { HIDDEN };
        let xs = pixel_span(seg.from.0.min(seg.to.0) - half, seg.from.0.max(seg.to.0) + half);
        let ys = pixel_span(seg.from.1.min(seg.to.1) - half, seg.from.1.max(seg.to.1) + half);
        for y in ys {
            for x in xs.clone() {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                let (d, along) = segment_distance(p, seg.from, seg.to);
                let on_dash = seg.solid || (along / DASH).floor() as i64 % 2 == 0;
                if d <= half && on_dash {
                    img.put_pixel(x, y, Rgb(color));
                }
            }
        }
    }
    for m in &layout.markers {
        let color = if m.visible { JOINT } else { HIDDEN };
        let (cx, cy) = m.center;
        for y in pixel_span(cy - JOINT_RADIUS, cy + JOINT_RADIUS) {
            for x in pixel_span(cx - JOINT_RADIUS, cx + JOINT_RADIUS) {
                if (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy) <= JOINT_RADIUS {
                    img.put_pixel(x, y, Rgb(color));
                }
            }
        }
    }
    img
}

/// Writes one drawing to `path` in the given format.
pub fn render_to_file(layout: &Layout, format: RenderFormat, path: &Path) -> Result<()> {
    match format {
        RenderFormat::Svg => fs::write(path, render_svg(layout)).map_err(|e| Error::io(path, e)),
        RenderFormat::Png => render_png(layout)
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display()))),
    }
}

/// A pose to draw, read from either a corpus file or inference output.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseEntry {
    pub id: String,
    pub pose: Pose,
    pub visibility: Vec<f64>,
}

#[derive(Deserialize)]
struct PoseLine {
    id: String,
    keypoints: Vec<[f64; 2]>,
    visibility: Vec<f64>,
    #[serde(default = "default_side")]
    width: u32,
    #[serde(default = "default_side")]
    height: u32,
}

fn default_side() -> u32 {
    IMAGE_SIDE as u32
}

/// Reads a JSONL pose file. Keypoints are pixels of a `width × height` frame
/// (256 × 256 when absent); other fields are ignored.
pub fn load_poses(path: &Path) -> Result<Vec<PoseEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseLine =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if rec.keypoints.len() != NUM_JOINTS || rec.visibility.len() != NUM_JOINTS {
            return Err(Error::Format(format!(
                "{}:{}: expected {NUM_JOINTS} keypoints and visibility values",
                path.display(),
                n + 1
            )));
        }
        let joints = rec
            .keypoints
            .iter()
            .map(|&[x, y]| normalize_coords((x, y), rec.width as f64, rec.height as f64))
            .collect::<Result<Vec<_>>>()?;
        out.push(PoseEntry {
            id: rec.id,
            pose: Pose::new(joints),
            visibility: rec.visibility,
        });
    }
    Ok(out)
}
