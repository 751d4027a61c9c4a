//! Stitching per-frame clouds into a row map from externally supplied poses.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::filters::box_grid_merge;
use crate::geometry::{apply_transform, AxisAlignedBox, ColoredPoint, ColoredPointCloud, RigidTransform};
use crate::par;

/// Frame label of stitched maps.
pub const MAP_FRAME: &str = "map";

/// Pose mapping frame coordinates into the map frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub frame_index: u64,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowMap {
    pub cloud: ColoredPointCloud,
    pub frame_count: usize,
    pub merge_cell: f64,
}

/// Left-folds frames into a map. For each new frame the overlap box between
/// the accumulated map and the transformed frame is merged with a box grid
/// filter; points outside it are kept verbatim.
///
/// Output order: map points outside the box, merged overlap points, new
/// points outside the box.
pub fn stitch_frames(frames: &[(ColoredPointCloud, FramePose)], merge_cell: f64) -> Result<RowMap> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames to stitch".into()));
    }
    if !(merge_cell > 0.0 && merge_cell.is_finite()) {
        return Err(Error::param(format!("merge cell must be positive, got {merge_cell}")));
    }
    validate_trajectory(frames.iter().map(|(_, p)| p))?;
    let transformed: Vec<Result<ColoredPointCloud>> =
        par::map_slice(frames, |(cloud, pose)| apply_transform(cloud, &pose.pose));
    let has_color = frames.iter().all(|(c, _)| c.has_color);
    let mut map = Vec::new();
    for cloud in transformed {
        let cloud = cloud?;
        map = merge_into(map, cloud.points(), merge_cell)?;
    }
    Ok(RowMap {
        cloud: ColoredPointCloud::from_trusted(map, MAP_FRAME, has_color),
        frame_count: frames.len(),
        merge_cell,
    })
}

fn merge_into(map: Vec<ColoredPoint>, incoming: &[ColoredPoint], cell: f64) -> Result<Vec<ColoredPoint>> {
    let bounds = |pts: &[ColoredPoint]| AxisAlignedBox::enclosing(pts.iter().map(|p| &p.position));
    let overlap = match (bounds(&map), bounds(incoming)) {
        (Some(a), Some(b)) => a.intersection(&b),
        _ => None,
    };
    let Some(overlap) = overlap else {
        let mut out = map;
        out.extend_from_slice(incoming);
        return Ok(out);
    };
    let (map_in, map_out): (Vec<_>, Vec<_>) = map.into_iter().partition(|p| overlap.contains(&p.position));
    let (new_in, new_out): (Vec<_>, Vec<_>) = incoming.iter().copied().partition(|p| overlap.contains(&p.position));
    let mut inside = map_in;
    inside.extend(new_in);
    let merged = box_grid_merge(&inside, cell)?;
    let mut out = map_out;
    out.extend(merged);
    out.extend(new_out);
    Ok(out)
}

fn validate_trajectory<'a>(poses: impl Iterator<Item = &'a FramePose>) -> Result<()> {
    let mut last: Option<u64> = None;
    for p in poses {
        if last.is_some_and(|l| p.frame_index <= l) {
            return Err(Error::Validation(format!(
                "frame indices must be strictly increasing ({} after {})",
                p.frame_index,
                last.unwrap_or(0)
            )));
        }
        p.pose.validate()?;
        last = Some(p.frame_index);
    }
    Ok(())
}

/// Parses a trajectory: one line per frame, `frame_index` followed by the 12
/// numbers of a row-major 3×4 pose. Blank lines and `#` comments are skipped.
pub fn parse_trajectory(text: &str) -> Result<Vec<FramePose>> {
    let mut poses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        if fields.len() != 13 {
            return Err(Error::Validation(format!(
                "trajectory line {}: expected 13 fields, got {}",
                i + 1,
                fields.len()
            )));
        }
        let frame_index = fields[0]
            .parse::<u64>()
            .map_err(|_| Error::Validation(format!("trajectory line {}: bad frame index `{}`", i + 1, fields[0])))?;
        let mut m = [0.0; 12];
        for (k, f) in fields[1..].iter().enumerate() {
            m[k] = f
                .parse()
                .map_err(|_| Error::Validation(format!("trajectory line {}: bad number `{f}`", i + 1)))?;
        }
        let pose = RigidTransform::from_row_major_3x4(&m);
        pose.validate()
            .map_err(|e| Error::Validation(format!("trajectory line {}: {e}", i + 1)))?;
        poses.push(FramePose { frame_index, pose });
    }
    validate_trajectory(poses.iter())?;
    Ok(poses)
}

pub fn load_trajectory(path: &Path) -> Result<Vec<FramePose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text)
}

pub fn format_trajectory(poses: &[FramePose]) -> String {
    let mut s = String::new();
    for p in poses {
        let _ = write!(s, "{}", p.frame_index);
        for v in p.pose.to_row_major_3x4() {
            let _ = write!(s, " {v:?}");
        }
        s.push('\n');
    }
    s
}

pub fn save_trajectory(poses: &[FramePose], path: &Path) -> Result<()> {
    std::fs::write(path, format_trajectory(poses)).map_err(|e| Error::io(path, e))
}
