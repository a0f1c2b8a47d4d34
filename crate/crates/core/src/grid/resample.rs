use super::{Geometry, Orientation, VolumeGrid, VoxelData};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Trilinear,
}

impl Interpolation {
    /// Nearest for masks and label maps (`uint8`, `int32`), trilinear for
    /// intensities (`int16`, `float32`).
    pub fn for_data(data: &VoxelData) -> Self {
        match data {
            VoxelData::U8(_) | VoxelData::I32(_) => Interpolation::Nearest,
            VoxelData::I16(_) | VoxelData::F32(_) => Interpolation::Trilinear,
        }
    }
}

/// Resamples to isotropic `target_mm` spacing, keeping the orientation and
/// the world-space extent covered by the voxels.
pub fn resample_isotropic(v: &VolumeGrid, target_mm: f64) -> Result<VolumeGrid> {
    resample_isotropic_with(v, target_mm, Interpolation::for_data(v.data()))
}

pub fn resample_isotropic_with(
    v: &VolumeGrid,
    target_mm: f64,
    interp: Interpolation,
) -> Result<VolumeGrid> {
    if !(target_mm.is_finite() && target_mm > 0.0) {
        return Err(Error::InvalidInput(format!(
            "target spacing {target_mm} must be positive"
        )));
    }
    let g = v.geometry();
    if g.sizes.contains(&0) {
        return Err(Error::InvalidInput("cannot resample an empty grid".into()));
    }
    if g.spacing.iter().all(|&s| s == target_mm) {
        return Ok(v.clone());
    }
    let mut sizes = [0usize; 3];
    let mut first_center = [0.0; 3];
    for k in 0..3 {
        let extent = g.sizes[k] as f64 * g.spacing[k];
        sizes[k] = ((extent / target_mm).round() as usize).max(1);
        // First new voxel centre sits half a new voxel inside the old edge.
        first_center[k] = (-0.5 * g.spacing[k] + 0.5 * target_mm) / g.spacing[k];
    }
    let target = Geometry::new(sizes, [target_mm; 3], g.world(first_center), g.orientation)?;
    resample_onto(v, &target, interp)
}

/// Samples `src` at every voxel centre of `target`. Positions outside the
/// source are clamped to its border.
pub fn resample_onto(src: &VolumeGrid, target: &Geometry, interp: Interpolation) -> Result<VolumeGrid> {
    let sg = src.geometry();
    let n = target.voxel_count();
    let [tx, ty, tz] = target.sizes;

    // Source continuous index is affine in the target index; precompute the
    // per-axis increments.
    let base = sg.continuous_index(target.world([0.0, 0.0, 0.0]));
    let step: [[f64; 3]; 3] = std::array::from_fn(|axis| {
        let mut unit = [0.0; 3];
        unit[axis] = 1.0;
        let p = sg.continuous_index(target.world(unit));
        [p[0] - base[0], p[1] - base[1], p[2] - base[2]]
    });

    let clamp = |x: f64, len: usize| x.max(0.0).min((len - 1) as f64);
    let sample_at = |f: &mut dyn FnMut(usize, [f64; 3])| {
        let mut out = 0usize;
        for k in 0..tz {
            for j in 0..ty {
                for i in 0..tx {
                    let (fi, fj, fk) = (i as f64, j as f64, k as f64);
                    let p: [f64; 3] = std::array::from_fn(|a| {
                        clamp(
                            base[a] + fi * step[0][a] + fj * step[1][a] + fk * step[2][a],
                            sg.sizes[a],
                        )
                    });
                    f(out, p);
                    out += 1;
                }
            }
        }
    };

    let data = match interp {
        Interpolation::Nearest => {
            let mut idx = vec![0usize; n];
            sample_at(&mut |o, p| {
                idx[o] = sg.linear(p[0].round() as usize, p[1].round() as usize, p[2].round() as usize);
            });
            match src.data() {
                VoxelData::U8(s) => VoxelData::U8(idx.iter().map(|&i| s[i]).collect()),
                VoxelData::I16(s) => VoxelData::I16(idx.iter().map(|&i| s[i]).collect()),
                VoxelData::I32(s) => VoxelData::I32(idx.iter().map(|&i| s[i]).collect()),
                VoxelData::F32(s) => VoxelData::F32(idx.iter().map(|&i| s[i]).collect()),
            }
        }
        Interpolation::Trilinear => {
            let mut vals = vec![0f64; n];
            let sd = src.data();
            sample_at(&mut |o, p| vals[o] = trilinear(sd, sg, p));
            match src.data() {
                VoxelData::U8(_) => VoxelData::U8(vals.iter().map(|&x| x.round().clamp(0.0, 255.0) as u8).collect()),
                VoxelData::I16(_) => VoxelData::I16(
                    vals.iter()
                        .map(|&x| x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
                        .collect(),
                ),
                VoxelData::I32(_) => VoxelData::I32(vals.iter().map(|&x| x.round() as i32).collect()),
                VoxelData::F32(_) => VoxelData::F32(vals.iter().map(|&x| x as f32).collect()),
            }
        }
    };
    VolumeGrid::new(*target, data)
}

fn trilinear(data: &VoxelData, g: &Geometry, p: [f64; 3]) -> f64 {
    let lo: [usize; 3] = std::array::from_fn(|a| p[a].floor() as usize);
    let hi: [usize; 3] = std::array::from_fn(|a| (lo[a] + 1).min(g.sizes[a] - 1));
    let t: [f64; 3] = std::array::from_fn(|a| p[a] - lo[a] as f64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let pick = |a: usize| corner >> a & 1 == 1;
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if pick(a) {
                w *= t[a];
                idx[a] = hi[a];
            } else {
                w *= 1.0 - t[a];
                idx[a] = lo[a];
            }
        }
        if w != 0.0 {
            acc += w * data.get_f64(g.linear(idx[0], idx[1], idx[2]));
        }
    }
    acc
}

/// Permutes and flips axes so the grid reads in `target` orientation. World
/// positions of every voxel are unchanged; spacing travels with its axis.
pub fn reorient(v: &VolumeGrid, target: Orientation) -> Result<VolumeGrid> {
    let target = Orientation::new(target.0)?;
    let g = v.geometry();
    if g.orientation == target {
        return Ok(v.clone());
    }
    // For each new axis: which old axis feeds it and whether it is flipped.
    let mut src_axis = [0usize; 3];
    let mut flip = [false; 3];
    for (k, code) in target.0.iter().enumerate() {
        let s = g.orientation.grid_axis_for(code.world_axis());
        src_axis[k] = s;
        flip[k] = g.orientation.0[s].sign() != code.sign();
    }
    let sizes: [usize; 3] = std::array::from_fn(|k| g.sizes[src_axis[k]]);
    let spacing: [f64; 3] = std::array::from_fn(|k| g.spacing[src_axis[k]]);
    let mut origin_idx = [0.0; 3];
    for k in 0..3 {
        if flip[k] {
            origin_idx[src_axis[k]] = (g.sizes[src_axis[k]] - 1) as f64;
        }
    }
    let geometry = Geometry::new(sizes, spacing, g.world(origin_idx), target)?;

    let n = geometry.voxel_count();
    let mut map = Vec::with_capacity(n);
    let mut old = [0usize; 3];
    for k in 0..sizes[2] {
        for j in 0..sizes[1] {
            for i in 0..sizes[0] {
                for (axis, &val) in [i, j, k].iter().enumerate() {
                    let s = src_axis[axis];
                    old[s] = if flip[axis] { g.sizes[s] - 1 - val } else { val };
                }
                map.push(g.linear(old[0], old[1], old[2]));
            }
        }
    }
    let data = match v.data() {
        VoxelData::U8(s) => VoxelData::U8(map.iter().map(|&i| s[i]).collect()),
        VoxelData::I16(s) => VoxelData::I16(map.iter().map(|&i| s[i]).collect()),
        VoxelData::I32(s) => VoxelData::I32(map.iter().map(|&i| s[i]).collect()),
        VoxelData::F32(s) => VoxelData::F32(map.iter().map(|&i| s[i]).collect()),
    };
    VolumeGrid::new(geometry, data)
}
