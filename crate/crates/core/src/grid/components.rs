use serde::{Deserialize, Serialize};

use super::{Aabb, VolumeGrid, VoxelData};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::InvalidInput(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }

    /// Neighbour offsets that precede a voxel in raster order.
    fn backward_offsets(self) -> Vec<[i64; 3]> {
        match self {
            Connectivity::Six => vec![[-1, 0, 0], [0, -1, 0], [0, 0, -1]],
            Connectivity::TwentySix => {
                let mut v = Vec::with_capacity(13);
                for dz in -1..=1i64 {
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            if dz < 0 || (dz == 0 && dy < 0) || (dz == 0 && dy == 0 && dx < 0) {
                                v.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                v
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    /// 1-based; 0 is background in the label map.
    pub id: u32,
    pub voxel_count: usize,
    pub centroid_mm: [f64; 3],
    pub bbox: Aabb,
    /// Index-space bounding box (inclusive).
    pub index_min: [usize; 3],
    pub index_max: [usize; 3],
}

impl Component {
    pub fn volume_mm3(&self, voxel_volume: f64) -> f64 {
        self.voxel_count as f64 * voxel_volume
    }
}

#[derive(Clone, Debug)]
pub struct ComponentSet {
    /// `int32` grid aligned with the source mask.
    pub label_map: VolumeGrid,
    /// Sorted by voxel count, descending; ties by lowest linear index.
    pub components: Vec<Component>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Binary mask of a single component.
    pub fn component_mask(&self, id: u32) -> VolumeGrid {
        let VoxelData::I32(labels) = self.label_map.data() else {
            unreachable!("label map is always int32")
        };
        let data = labels.iter().map(|&l| (l == id as i32) as u8).collect();
        VolumeGrid::new(*self.label_map.geometry(), VoxelData::U8(data))
            .expect("same geometry as the label map")
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Two-pass union-find labelling of a binary mask.
pub fn connected_components(mask: &VolumeGrid, connectivity: Connectivity) -> Result<ComponentSet> {
    let fg = mask.binary()?;
    let g = *mask.geometry();
    let [nx, ny, nz] = g.sizes;
    let n = g.voxel_count();

    let offsets: Vec<([i64; 3], isize)> = connectivity
        .backward_offsets()
        .into_iter()
        .map(|o| (o, o[0] as isize + o[1] as isize * nx as isize + o[2] as isize * (nx * ny) as isize))
        .collect();

    let mut labels = vec![0u32; n];
    let mut parent: Vec<u32> = vec![0];
    let mut idx = 0usize;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if fg[idx] != 0 {
                    let mut current = 0u32;
                    for &(o, delta) in &offsets {
                        let (ii, jj, kk) = (i as i64 + o[0], j as i64 + o[1], k as i64 + o[2]);
                        if ii < 0 || jj < 0 || kk < 0 || ii >= nx as i64 || jj >= ny as i64 {
                            continue;
                        }
                        let nb = labels[(idx as isize + delta) as usize];
                        if nb == 0 {
                            continue;
                        }
                        if current == 0 {
                            current = find(&mut parent, nb);
                        } else {
                            let (ra, rb) = (find(&mut parent, current), find(&mut parent, nb));
                            if ra != rb {
                                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                                parent[hi as usize] = lo;
                                current = lo;
                            }
                        }
                    }
                    if current == 0 {
                        current = parent.len() as u32;
                        parent.push(current);
                    }
                    labels[idx] = current;
                }
                idx += 1;
            }
        }
    }

    // Resolve roots and gather statistics per root.
    struct Acc {
        first: usize,
        count: usize,
        sum: [f64; 3],
        lo: [usize; 3],
        hi: [usize; 3],
    }
    let mut root_slot = vec![u32::MAX; parent.len()];
    let mut accs: Vec<Acc> = Vec::new();
    let mut idx = 0usize;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let l = labels[idx];
                if l != 0 {
                    let r = find(&mut parent, l) as usize;
                    if root_slot[r] == u32::MAX {
                        root_slot[r] = accs.len() as u32;
                        accs.push(Acc {
                            first: idx,
                            count: 0,
                            sum: [0.0; 3],
                            lo: [i, j, k],
                            hi: [i, j, k],
                        });
                    }
                    let slot = root_slot[r];
                    let a = &mut accs[slot as usize];
                    a.count += 1;
                    a.sum[0] += i as f64;
                    a.sum[1] += j as f64;
                    a.sum[2] += k as f64;
                    for (ax, v) in [i, j, k].into_iter().enumerate() {
                        a.lo[ax] = a.lo[ax].min(v);
                        a.hi[ax] = a.hi[ax].max(v);
                    }
                    labels[idx] = slot + 1;
                }
                idx += 1;
            }
        }
    }

    let mut order: Vec<usize> = (0..accs.len()).collect();
    order.sort_by(|&a, &b| accs[b].count.cmp(&accs[a].count).then(accs[a].first.cmp(&accs[b].first)));
    let mut final_id = vec![0i32; accs.len() + 1];
    let components = order
        .iter()
        .enumerate()
        .map(|(rank, &slot)| {
            final_id[slot + 1] = rank as i32 + 1;
            let a = &accs[slot];
            let c = a.count as f64;
            Component {
                id: rank as u32 + 1,
                voxel_count: a.count,
                centroid_mm: g.world([a.sum[0] / c, a.sum[1] / c, a.sum[2] / c]),
                bbox: g.index_box_to_world(a.lo, a.hi),
                index_min: a.lo,
                index_max: a.hi,
            }
        })
        .collect();
    let label_data: Vec<i32> = labels.into_iter().map(|l| final_id[l as usize]).collect();

    Ok(ComponentSet {
        label_map: VolumeGrid::new(g, VoxelData::I32(label_data))?,
        components,
    })
}
