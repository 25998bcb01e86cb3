//! Mixed background-foreground synthesis: convert background patches into
//! foreground-bearing ones by switching the condition input, geometrically
//! augment them, and paste the results back into full scenes with updated
//! annotations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::generator::{forward, ConditionLabel, GeneratorParams, LatentCode, Patch};
use crate::numerics::Tensor;
use crate::seeding::{derive_seed, rng_from};
use crate::trainer::{invert, InvertConfig};

/// Full-resolution scene with channels-first pixels in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneImage {
    pixels: Tensor,
    pub source_id: String,
}

impl SceneImage {
    pub fn new(pixels: Tensor, source_id: impl Into<String>) -> Result<SceneImage> {
        let shape = pixels.shape();
        if shape.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "scene",
                expected: "[C x H x W]".into(),
                got: pixels.shape_str(),
            });
        }
        if pixels.data().iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidConfig(
                "scene values must be finite and within [-1, 1]".into(),
            ));
        }
        Ok(SceneImage {
            pixels,
            source_id: source_id.into(),
        })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// Axis-aligned box in pixel coordinates, top-left origin.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub label: String,
}

impl BoundingBox {
    pub fn square(x: usize, y: usize, side: usize, label: impl Into<String>) -> BoundingBox {
        BoundingBox {
            x,
            y,
            w: side,
            h: side,
            label: label.into(),
        }
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }

    fn check_in_scene(&self, scene: &SceneImage) -> Result<()> {
        if !self.fits_in(scene.width(), scene.height()) {
            return Err(Error::BoxOutOfBounds {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                width: scene.width(),
                height: scene.height(),
            });
        }
        Ok(())
    }

    fn check_square(&self) -> Result<()> {
        if self.w != self.h {
            return Err(Error::BoxNotSquare { w: self.w, h: self.h });
        }
        Ok(())
    }
}

/// Intersection area over union area of two boxes, in [0, 1].
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x));
    let iy = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y));
    let inter = (ix * iy) as f64;
    let union = (a.w * a.h + b.w * b.h) as f64 - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Placement request for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    /// Desired foreground instances per scene (existing boxes count toward it).
    pub target_count: usize,
    /// Placement side range in pixels.
    pub min_side: usize,
    pub max_side: usize,
    /// IoU ceiling against existing and previously accepted boxes.
    pub max_overlap_iou: f64,
    pub seed: u64,
    /// Linear edge feathering width for pasting, in pixels; 0 disables it.
    pub feather: usize,
    /// Class tag for newly placed boxes.
    pub label: String,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        AugmentPlan {
            target_count: 4,
            min_side: 32,
            max_side: 64,
            max_overlap_iou: 0.05,
            seed: 0,
            feather: 0,
            label: "object".to_string(),
        }
    }
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.min_side == 0 || self.min_side > self.max_side {
            return Err(Error::InvalidConfig(format!(
                "placement sides must satisfy 0 < min_side <= max_side, got {}..{}",
                self.min_side, self.max_side
            )));
        }
        if !(0.0..1.0).contains(&self.max_overlap_iou) {
            return Err(Error::InvalidConfig(format!(
                "max_overlap_iou must be in [0, 1), got {}",
                self.max_overlap_iou
            )));
        }
        Ok(())
    }
}

/// Regenerate the patch a code identifies, under a different condition.
/// Neither the code nor the weights are touched; calling twice with equal
/// arguments produces bit-identical patches.
pub fn switch_condition(
    params: &GeneratorParams,
    z: &LatentCode,
    _current: ConditionLabel,
    target: ConditionLabel,
) -> Result<Patch> {
    forward(params, z, target)
}

/// Bilinear resize of a channels-first square image (half-pixel-center
/// sampling, so a 2x downscale of a 1-pixel checkerboard averages to its
/// mid-value).
fn bilinear_resize(src: &Tensor, dst_side: usize) -> Tensor {
    let channels = src.shape()[0];
    let src_side = src.shape()[1];
    if src_side == dst_side {
        return src.clone();
    }
    let scale = src_side as f64 / dst_side as f64;
    let mut out = Tensor::zeros(&[channels, dst_side, dst_side]);
    let data = src.data();
    for ch in 0..channels {
        for row in 0..dst_side {
            let sy = ((row as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_side - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(src_side - 1);
            let fy = sy - y0 as f64;
            for col in 0..dst_side {
                let sx = ((col as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_side - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(src_side - 1);
                let fx = sx - x0 as f64;
                let base = ch * src_side * src_side;
                let v00 = data[base + y0 * src_side + x0];
                let v01 = data[base + y0 * src_side + x1];
                let v10 = data[base + y1 * src_side + x0];
                let v11 = data[base + y1 * src_side + x1];
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                out.data_mut()[(ch * dst_side + row) * dst_side + col] =
                    top + (bottom - top) * fy;
            }
        }
    }
    out
}

/// Cut a square patch out of a scene. A box whose side equals `patch_size`
/// is copied pixel-exactly; any other side is bilinearly resized.
pub fn crop_patch(scene: &SceneImage, bbox: &BoundingBox, patch_size: usize) -> Result<Patch> {
    bbox.check_square()?;
    bbox.check_in_scene(scene)?;
    let channels = scene.channels();
    let side = bbox.w;
    let mut region = Tensor::zeros(&[channels, side, side]);
    let (h, w) = (scene.height(), scene.width());
    let src = scene.pixels().data();
    for ch in 0..channels {
        for row in 0..side {
            let src_base = ch * h * w + (bbox.y + row) * w + bbox.x;
            let dst_base = (ch * side + row) * side;
            region.data_mut()[dst_base..dst_base + side]
                .copy_from_slice(&src[src_base..src_base + side]);
        }
    }
    let resized = if side == patch_size {
        region
    } else {
        bilinear_resize(&region, patch_size)
    };
    Patch::from_tensor(resized)
}

/// Replace the scene pixels under `bbox` with the patch (resized to the box
/// side if needed). The input scene is not mutated; pixels outside the box
/// are copied bit-identically.
pub fn paste_patch(scene: &SceneImage, patch: &Patch, bbox: &BoundingBox) -> Result<SceneImage> {
    paste_patch_feathered(scene, patch, bbox, 0)
}

/// Like `paste_patch`, but blends the outermost `feather` pixel rings of the
/// box linearly from scene to patch. `feather == 0` is an exact replace.
pub fn paste_patch_feathered(
    scene: &SceneImage,
    patch: &Patch,
    bbox: &BoundingBox,
    feather: usize,
) -> Result<SceneImage> {
    bbox.check_square()?;
    bbox.check_in_scene(scene)?;
    if patch.channels() != scene.channels() {
        return Err(Error::ShapeMismatch {
            op: "paste_patch",
            expected: format!("{} channels", scene.channels()),
            got: patch.channels().to_string(),
        });
    }
    let side = bbox.w;
    let sized = if patch.size() == side {
        patch.tensor().clone()
    } else {
        bilinear_resize(patch.tensor(), side)
    };
    let mut out = scene.clone();
    let (h, w, channels) = (scene.height(), scene.width(), scene.channels());
    let src = sized.data();
    let pixels = out.pixels.data_mut();
    for ch in 0..channels {
        for row in 0..side {
            for col in 0..side {
                let dst = ch * h * w + (bbox.y + row) * w + (bbox.x + col);
                let v = src[(ch * side + row) * side + col];
                let edge_dist = row.min(col).min(side - 1 - row).min(side - 1 - col);
                if feather > 0 && edge_dist < feather {
                    let alpha = (edge_dist + 1) as f64 / (feather + 1) as f64;
                    pixels[dst] = pixels[dst] * (1.0 - alpha) + v * alpha;
                } else {
                    pixels[dst] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Exact 90-degree-multiple rotation and/or mirroring; a pure permutation of
/// the pixel grid.
pub fn geometric_augment(patch: &Patch, rot_quarter: u8, flip_h: bool, flip_v: bool) -> Patch {
    let side = patch.size();
    let channels = patch.channels();
    let mut out = Tensor::zeros(&[channels, side, side]);
    for ch in 0..channels {
        for row in 0..side {
            for col in 0..side {
                // Rotate counter-clockwise by rot_quarter quarter turns,
                // then apply the mirrors.
                let (mut r, mut c) = match rot_quarter % 4 {
                    0 => (row, col),
                    1 => (side - 1 - col, row),
                    2 => (side - 1 - row, side - 1 - col),
                    _ => (col, side - 1 - row),
                };
                if flip_h {
                    c = side - 1 - c;
                }
                if flip_v {
                    r = side - 1 - r;
                }
                out.data_mut()[(ch * side + r) * side + c] = patch.pixel(ch, row, col);
            }
        }
    }
    Patch::from_tensor(out).expect("permutation preserves the value range")
}

/// Boxes proposed for a scene; `rejection_limited` flags an early stop after
/// 1000 consecutive rejections.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementResult {
    pub boxes: Vec<BoundingBox>,
    pub rejection_limited: bool,
}

const MAX_CONSECUTIVE_REJECTIONS: usize = 1000;

/// Propose up to `target_count - existing` square boxes by rejection
/// sampling, each overlapping every prior box by at most `max_overlap_iou`.
pub fn plan_placements(
    scene: &SceneImage,
    existing: &[BoundingBox],
    plan: &AugmentPlan,
) -> Result<PlacementResult> {
    plan.validate()?;
    let extent = scene.width().min(scene.height());
    if plan.min_side > extent {
        return Err(Error::PlacementTooLarge {
            min_side: plan.min_side,
            extent,
        });
    }
    let max_side = plan.max_side.min(extent);
    let wanted = plan.target_count.saturating_sub(existing.len());
    let mut rng = rng_from(plan.seed);
    let mut accepted: Vec<BoundingBox> = Vec::with_capacity(wanted);
    let mut rejections = 0usize;
    let mut limited = false;
    while accepted.len() < wanted {
        let side = rng.random_range(plan.min_side..=max_side);
        let x = rng.random_range(0..=scene.width() - side);
        let y = rng.random_range(0..=scene.height() - side);
        let candidate = BoundingBox::square(x, y, side, plan.label.clone());
        let clear = existing
            .iter()
            .chain(accepted.iter())
            .all(|b| iou(&candidate, b) <= plan.max_overlap_iou);
        if clear {
            accepted.push(candidate);
            rejections = 0;
        } else {
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                limited = true;
                break;
            }
        }
    }
    Ok(PlacementResult {
        boxes: accepted,
        rejection_limited: limited,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlacementStatus {
    Placed,
    Skipped,
}

impl std::fmt::Display for PlacementStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlacementStatus::Placed => write!(f, "placed"),
            PlacementStatus::Skipped => write!(f, "skipped"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReportRow {
    pub scene_id: String,
    pub box_index: usize,
    pub x: usize,
    pub y: usize,
    pub side: usize,
    pub inversion_loss: f64,
    pub status: PlacementStatus,
}

/// Per-box log of one scene's augmentation.
#[derive(Clone, Debug, Default)]
pub struct AugmentReport {
    pub rows: Vec<ReportRow>,
    pub rejection_limited: bool,
}

impl AugmentReport {
    pub fn csv_header() -> &'static str {
        "scene_id,box_index,x,y,side,inversion_loss,status"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        self.append_csv_rows(&mut out);
        out
    }

    /// Append the data rows (no header) to an existing CSV buffer.
    pub fn append_csv_rows(&self, out: &mut String) {
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.scene_id, row.box_index, row.x, row.y, row.side, row.inversion_loss, row.status
            ));
        }
    }

    pub fn placed(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.status == PlacementStatus::Placed)
            .count()
    }
}

/// The full per-scene pipeline: plan placements, and for each planned box
/// crop the background, invert it under c=0, regenerate under c=1, randomly
/// rotate/flip, and paste it back. Returns the augmented scene, the combined
/// box list, and a per-box report. A non-finite inversion loss skips that box
/// and is recorded; it never aborts the scene.
pub fn augment_scene(
    params: &GeneratorParams,
    scene: &SceneImage,
    existing_boxes: &[BoundingBox],
    plan: &AugmentPlan,
    invert_cfg: &InvertConfig,
) -> Result<(SceneImage, Vec<BoundingBox>, AugmentReport)> {
    for b in existing_boxes {
        b.check_in_scene(scene)?;
    }
    let placements = plan_placements(scene, existing_boxes, plan)?;
    let patch_size = params.config().output_size;
    let mut out_scene = scene.clone();
    let mut boxes = existing_boxes.to_vec();
    let mut report = AugmentReport {
        rows: Vec::with_capacity(placements.boxes.len()),
        rejection_limited: placements.rejection_limited,
    };
    let mut augment_rng = rng_from(derive_seed(plan.seed, 0xA06));

    for (idx, bbox) in placements.boxes.iter().enumerate() {
        let background = crop_patch(&out_scene, bbox, patch_size)?;
        let (code, loss) = invert(
            params,
            &background,
            ConditionLabel::Background,
            invert_cfg,
            derive_seed(plan.seed, idx as u64),
        )?;
        // Drawn unconditionally to keep the stream aligned across skips.
        let rot = augment_rng.random_range(0..4u8);
        let flip_h = augment_rng.random_bool(0.5);
        let flip_v = augment_rng.random_bool(0.5);
        if !loss.is_finite() {
            report.rows.push(ReportRow {
                scene_id: scene.source_id.clone(),
                box_index: idx,
                x: bbox.x,
                y: bbox.y,
                side: bbox.w,
                inversion_loss: loss,
                status: PlacementStatus::Skipped,
            });
            continue;
        }
        let switched = switch_condition(
            params,
            &code,
            ConditionLabel::Background,
            ConditionLabel::Foreground,
        )?;
        let augmented = geometric_augment(&switched, rot, flip_h, flip_v);
        out_scene = paste_patch_feathered(&out_scene, &augmented, bbox, plan.feather)?;
        boxes.push(bbox.clone());
        report.rows.push(ReportRow {
            scene_id: scene.source_id.clone(),
            box_index: idx,
            x: bbox.x,
            y: bbox.y,
            side: bbox.w,
            inversion_loss: loss,
            status: PlacementStatus::Placed,
        });
    }
    Ok((out_scene, boxes, report))
}

/// Mean over the central square holding 25% of the patch area.
pub fn center_region_mean(patch: &Patch) -> f64 {
    let size = patch.size();
    let side = (size / 2).max(1);
    let start = (size - side) / 2;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..patch.channels() {
        for row in start..start + side {
            for col in start..start + side {
                total += patch.pixel(ch, row, col);
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Mean over the outermost frame of width 10% of the side (at least 1 px).
pub fn border_frame_mean(patch: &Patch) -> f64 {
    let size = patch.size();
    let width = ((size as f64 * 0.10).round() as usize).clamp(1, size / 2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..patch.channels() {
        for row in 0..size {
            for col in 0..size {
                let edge = row.min(col).min(size - 1 - row).min(size - 1 - col);
                if edge < width {
                    total += patch.pixel(ch, row, col);
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

/// Mean absolute per-pixel difference restricted to the central region.
pub fn center_region_change(a: &Patch, b: &Patch) -> f64 {
    region_change(a, b, true)
}

/// Mean absolute per-pixel difference restricted to the border frame.
pub fn border_frame_change(a: &Patch, b: &Patch) -> f64 {
    region_change(a, b, false)
}

fn region_change(a: &Patch, b: &Patch, center: bool) -> f64 {
    assert_eq!(a.tensor().shape(), b.tensor().shape());
    let size = a.size();
    let center_side = (size / 2).max(1);
    let center_start = (size - center_side) / 2;
    let border_width = ((size as f64 * 0.10).round() as usize).clamp(1, size / 2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..a.channels() {
        for row in 0..size {
            for col in 0..size {
                let in_center = row >= center_start
                    && row < center_start + center_side
                    && col >= center_start
                    && col < center_start + center_side;
                let edge = row.min(col).min(size - 1 - row).min(size - 1 - col);
                let in_border = edge < border_width;
                if (center && in_center) || (!center && in_border) {
                    total += (a.pixel(ch, row, col) - b.pixel(ch, row, col)).abs();
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}
