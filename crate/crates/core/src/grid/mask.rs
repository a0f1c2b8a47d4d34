use super::{Aabb, Geometry, VolumeGrid, VoxelData};
use crate::error::{Error, Result};

/// A binary mask stored as its bounding-box sub-block of a parent lattice.
///
/// Vertebra masks cover a small fraction of a CT; the cycle keeps one per
/// detection, so only the occupied block is retained.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactMask {
    parent: Geometry,
    offset: [usize; 3],
    sizes: [usize; 3],
    bits: Vec<u8>,
    count: usize,
}

impl CompactMask {
    pub fn from_grid(grid: &VolumeGrid) -> Result<Self> {
        let fg = grid.binary()?;
        let g = *grid.geometry();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut count = 0usize;
        for (idx, &v) in fg.iter().enumerate() {
            if v != 0 {
                let p = g.unravel(idx);
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
                count += 1;
            }
        }
        if count == 0 {
            return Ok(CompactMask {
                parent: g,
                offset: [0; 3],
                sizes: [0; 3],
                bits: Vec::new(),
                count: 0,
            });
        }
        let sizes: [usize; 3] = std::array::from_fn(|a| hi[a] - lo[a] + 1);
        let mut bits = Vec::with_capacity(sizes.iter().product());
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                let row = g.linear(lo[0], j, k);
                bits.extend_from_slice(&fg[row..row + sizes[0]]);
            }
        }
        Ok(CompactMask {
            parent: g,
            offset: lo,
            sizes,
            bits,
            count,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.parent
    }

    pub fn voxel_count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn volume_mm3(&self) -> f64 {
        self.count as f64 * self.parent.voxel_volume()
    }

    fn for_each_voxel(&self, mut f: impl FnMut([usize; 3])) {
        let mut b = 0usize;
        for k in 0..self.sizes[2] {
            for j in 0..self.sizes[1] {
                for i in 0..self.sizes[0] {
                    if self.bits[b] != 0 {
                        f([i + self.offset[0], j + self.offset[1], k + self.offset[2]]);
                    }
                    b += 1;
                }
            }
        }
    }

    pub fn centroid_mm(&self) -> Result<[f64; 3]> {
        if self.count == 0 {
            return Err(Error::EmptyMask);
        }
        let mut sum = [0.0; 3];
        self.for_each_voxel(|p| {
            for a in 0..3 {
                sum[a] += p[a] as f64;
            }
        });
        let c = self.count as f64;
        Ok(self.parent.world([sum[0] / c, sum[1] / c, sum[2] / c]))
    }

    /// World box over voxel centres; `None` when empty.
    pub fn bbox(&self) -> Option<Aabb> {
        if self.count == 0 {
            return None;
        }
        let hi: [usize; 3] = std::array::from_fn(|a| self.offset[a] + self.sizes[a] - 1);
        Some(self.parent.index_box_to_world(self.offset, hi))
    }

    /// Sets every voxel of this mask in `target` (which must share the lattice).
    pub fn paint_into(&self, target: &mut VolumeGrid, value: u8) -> Result<()> {
        self.parent.ensure_same(target.geometry(), "paint mask")?;
        let g = self.parent;
        let data = target
            .as_u8_mut()
            .ok_or_else(|| Error::InvalidInput("paint target must be uint8".into()))?;
        self.for_each_voxel(|p| data[g.linear(p[0], p[1], p[2])] = value);
        Ok(())
    }

    pub fn to_grid(&self) -> VolumeGrid {
        let mut out = VolumeGrid::empty_mask(self.parent);
        self.paint_into(&mut out, 1).expect("own lattice");
        out
    }

    pub fn contains_world(&self, p: [f64; 3]) -> bool {
        self.parent.nearest_voxel(p).is_some_and(|v| self.contains_index(v))
    }

    /// Whether a voxel of the parent lattice is set.
    pub fn contains_index(&self, v: [usize; 3]) -> bool {
        if (0..3).any(|a| v[a] < self.offset[a] || v[a] >= self.offset[a] + self.sizes[a]) {
            return false;
        }
        let [i, j, k] = std::array::from_fn(|a| v[a] - self.offset[a]);
        self.bits[i + self.sizes[0] * (j + self.sizes[1] * k)] != 0
    }

    /// Parent-lattice indices of all set voxels, x fastest.
    pub fn voxel_indices(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::with_capacity(self.count);
        self.for_each_voxel(|p| out.push(p));
        out
    }

    /// World positions of set voxels with at least one unset 6-neighbour (or
    /// lying on the parent lattice edge).
    pub fn boundary_mm(&self) -> Vec<[f64; 3]> {
        let n = self.parent.sizes;
        let mut out = Vec::new();
        self.for_each_voxel(|p| {
            let surface = (0..3).any(|a| {
                if p[a] == 0 || p[a] + 1 == n[a] {
                    return true;
                }
                let mut lo = p;
                let mut hi = p;
                lo[a] -= 1;
                hi[a] += 1;
                !self.contains_index(lo) || !self.contains_index(hi)
            });
            if surface {
                out.push(self.parent.world_of(p));
            }
        });
        out
    }

    /// Bits of the sub-block as a standalone grid (used for fingerprints/tests).
    pub fn block(&self) -> Option<VolumeGrid> {
        if self.count == 0 {
            return None;
        }
        let origin = self.parent.world_of(self.offset);
        let g = Geometry::new(self.sizes, self.parent.spacing, origin, self.parent.orientation).ok()?;
        VolumeGrid::new(g, VoxelData::U8(self.bits.clone())).ok()
    }
}
