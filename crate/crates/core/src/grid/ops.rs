use super::{Geometry, VolumeGrid, VoxelData};
use crate::error::{Error, Result};

/// Voxelwise OR of binary masks sharing one lattice.
pub fn union(geometry: &Geometry, masks: &[&VolumeGrid]) -> Result<VolumeGrid> {
    let mut out = vec![0u8; geometry.voxel_count()];
    for m in masks {
        geometry.ensure_same(m.geometry(), "union")?;
        for (o, &v) in out.iter_mut().zip(m.binary()?) {
            *o |= v;
        }
    }
    VolumeGrid::new(*geometry, VoxelData::U8(out))
}

/// Spine voxels not covered by any vertebra mask.
pub fn residual(spine_mask: &VolumeGrid, vertebra_masks: &[&VolumeGrid]) -> Result<VolumeGrid> {
    let spine = spine_mask.binary()?;
    let covered = union(spine_mask.geometry(), vertebra_masks)?;
    let covered = covered.as_u8().expect("union is u8");
    let data = spine
        .iter()
        .zip(covered)
        .map(|(&s, &c)| s & (1 - c))
        .collect();
    VolumeGrid::new(*spine_mask.geometry(), VoxelData::U8(data))
}

pub fn mask_volume_mm3(mask: &VolumeGrid) -> Result<f64> {
    let fg = mask.binary()?;
    let count = fg.iter().filter(|&&v| v != 0).count();
    Ok(count as f64 * mask.geometry().voxel_volume())
}

/// Mean world coordinate of the foreground voxels.
pub fn centroid_mm(mask: &VolumeGrid) -> Result<[f64; 3]> {
    let fg = mask.binary()?;
    let g = mask.geometry();
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    let mut idx = 0usize;
    for k in 0..g.sizes[2] {
        for j in 0..g.sizes[1] {
            for i in 0..g.sizes[0] {
                if fg[idx] != 0 {
                    sum[0] += i as f64;
                    sum[1] += j as f64;
                    sum[2] += k as f64;
                    count += 1;
                }
                idx += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let c = count as f64;
    Ok(g.world([sum[0] / c, sum[1] / c, sum[2] / c]))
}

/// Cube of `side_voxels` at 1 mm spacing around `center`, zero-padded outside
/// the source field of view.
pub fn extract_crop(mask: &VolumeGrid, center: [f64; 3], side_voxels: usize) -> Result<VolumeGrid> {
    extract_crop_with_spacing(mask, center, side_voxels, 1.0)
}

/// Crop with explicit output spacing. The crop centre snaps to the nearest
/// source voxel, which lands at crop index `side / 2` on every axis. Sampling
/// is nearest-neighbour; with matching spacing it is an exact copy.
pub fn extract_crop_with_spacing(
    mask: &VolumeGrid,
    center: [f64; 3],
    side_voxels: usize,
    spacing_mm: f64,
) -> Result<VolumeGrid> {
    if side_voxels == 0 {
        return Err(Error::InvalidInput("crop side must be positive".into()));
    }
    let src = mask.as_u8().ok_or_else(|| {
        Error::InvalidInput(format!("crops need uint8 masks, got {}", mask.data().kind_name()))
    })?;
    let sg = mask.geometry();
    let ci = sg.continuous_index(center);
    let snapped: [f64; 3] = std::array::from_fn(|a| ci[a].round());
    let half = (side_voxels / 2) as f64;
    // Crop index step expressed in source index units per axis.
    let ratio: [f64; 3] = std::array::from_fn(|a| spacing_mm / sg.spacing[a]);
    let start: [f64; 3] = std::array::from_fn(|a| snapped[a] - half * ratio[a]);
    let geometry = Geometry::new(
        [side_voxels; 3],
        [spacing_mm; 3],
        sg.world(start),
        sg.orientation,
    )?;

    let lookup = |a: usize, c: usize| -> Option<usize> {
        let s = (start[a] + c as f64 * ratio[a]).round();
        (s >= 0.0 && s < sg.sizes[a] as f64).then_some(s as usize)
    };
    let xs: Vec<Option<usize>> = (0..side_voxels).map(|c| lookup(0, c)).collect();
    let ys: Vec<Option<usize>> = (0..side_voxels).map(|c| lookup(1, c)).collect();
    let zs: Vec<Option<usize>> = (0..side_voxels).map(|c| lookup(2, c)).collect();

    let mut out = vec![0u8; geometry.voxel_count()];
    let mut o = 0usize;
    for z in &zs {
        for y in &ys {
            match (z, y) {
                (Some(z), Some(y)) => {
                    for x in &xs {
                        if let Some(x) = x {
                            out[o] = src[sg.linear(*x, *y, *z)];
                        }
                        o += 1;
                    }
                }
                _ => o += side_voxels,
            }
        }
    }
    VolumeGrid::new(geometry, VoxelData::U8(out))
}

/// World coordinates of foreground voxels that touch the background through
/// a face, or that sit on the grid border.
pub fn boundary_voxels(mask: &VolumeGrid) -> Result<Vec<[f64; 3]>> {
    let fg = mask.binary()?;
    let g = mask.geometry();
    let [nx, ny, nz] = g.sizes;
    let mut out = Vec::new();
    let mut idx = 0usize;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if fg[idx] != 0 {
                    let on_edge = i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz;
                    let touches = on_edge
                        || fg[idx - 1] == 0
                        || fg[idx + 1] == 0
                        || fg[idx - nx] == 0
                        || fg[idx + nx] == 0
                        || fg[idx - nx * ny] == 0
                        || fg[idx + nx * ny] == 0;
                    if touches {
                        out.push(g.world_of([i, j, k]));
                    }
                }
                idx += 1;
            }
        }
    }
    Ok(out)
}
