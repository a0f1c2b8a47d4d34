//! Dense 3D grids with anatomic orientation, plus the geometric and
//! morphological operations used by the consistency cycle.
//!
//! World coordinates are always millimetres in a right-anterior-superior
//! frame: +x is patient right, +y anterior, +z superior (cranial). Each grid
//! axis carries an [`AxisCode`] naming the anatomic direction in which its
//! index increases.

mod components;
mod mask;
mod ops;
mod resample;

pub use components::{connected_components, Component, ComponentSet, Connectivity};
pub use mask::CompactMask;
pub use ops::{
    boundary_voxels, centroid_mm, extract_crop, extract_crop_with_spacing, mask_volume_mm3,
    residual, union,
};
pub use resample::{reorient, resample_isotropic, resample_isotropic_with, resample_onto, Interpolation};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance (mm) used when comparing geometries of grids that are supposed
/// to share a voxel lattice.
pub const GEOMETRY_TOLERANCE_MM: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisCode {
    R,
    L,
    A,
    P,
    S,
    I,
}

impl AxisCode {
    /// Index of the world axis (0 = x, 1 = y, 2 = z) this code runs along.
    pub fn world_axis(self) -> usize {
        match self {
            AxisCode::R | AxisCode::L => 0,
            AxisCode::A | AxisCode::P => 1,
            AxisCode::S | AxisCode::I => 2,
        }
    }

    /// +1 when increasing index moves along the positive world axis.
    pub fn sign(self) -> f64 {
        match self {
            AxisCode::R | AxisCode::A | AxisCode::S => 1.0,
            AxisCode::L | AxisCode::P | AxisCode::I => -1.0,
        }
    }

    pub fn from_axis(world_axis: usize, positive: bool) -> AxisCode {
        match (world_axis, positive) {
            (0, true) => AxisCode::R,
            (0, false) => AxisCode::L,
            (1, true) => AxisCode::A,
            (1, false) => AxisCode::P,
            (2, true) => AxisCode::S,
            _ => AxisCode::I,
        }
    }

    fn from_char(c: char) -> Option<AxisCode> {
        match c.to_ascii_uppercase() {
            'R' => Some(AxisCode::R),
            'L' => Some(AxisCode::L),
            'A' => Some(AxisCode::A),
            'P' => Some(AxisCode::P),
            'S' => Some(AxisCode::S),
            'I' => Some(AxisCode::I),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            AxisCode::R => 'R',
            AxisCode::L => 'L',
            AxisCode::A => 'A',
            AxisCode::P => 'P',
            AxisCode::S => 'S',
            AxisCode::I => 'I',
        }
    }
}

/// Anatomic direction of each grid axis, e.g. `RAS` or `LPI`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Orientation(pub [AxisCode; 3]);

impl Orientation {
    pub const RAS: Orientation = Orientation([AxisCode::R, AxisCode::A, AxisCode::S]);
    pub const LPS: Orientation = Orientation([AxisCode::L, AxisCode::P, AxisCode::S]);

    /// Builds an orientation, rejecting triples that do not cover all three
    /// world axes exactly once.
    pub fn new(codes: [AxisCode; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for c in codes {
            let a = c.world_axis();
            if seen[a] {
                return Err(Error::InvalidInput(format!(
                    "orientation {} repeats a world axis",
                    Orientation(codes)
                )));
            }
            seen[a] = true;
        }
        Ok(Orientation(codes))
    }

    pub fn codes(&self) -> [AxisCode; 3] {
        self.0
    }

    /// Grid axis that runs along `world_axis`.
    pub fn grid_axis_for(&self, world_axis: usize) -> usize {
        self.0
            .iter()
            .position(|c| c.world_axis() == world_axis)
            .expect("validated orientation covers every world axis")
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.0 {
            write!(f, "{}", c.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.trim().chars().collect();
        if chars.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "orientation `{s}` must have three axis codes"
            )));
        }
        let mut codes = [AxisCode::R; 3];
        for (slot, c) in codes.iter_mut().zip(chars) {
            *slot = AxisCode::from_char(c)
                .ok_or_else(|| Error::InvalidInput(format!("unknown axis code `{c}` in `{s}`")))?;
        }
        Orientation::new(codes)
    }
}

impl Serialize for Orientation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Orientation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Axis-aligned box in world millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn from_point(p: [f64; 3]) -> Self {
        Aabb { min: p, max: p }
    }

    /// Smallest box containing all `points`; `None` for an empty iterator.
    pub fn from_points<I: IntoIterator<Item = [f64; 3]>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Aabb::from_point(first);
        for p in it {
            b.include(p);
        }
        Some(b)
    }

    pub fn include(&mut self, p: [f64; 3]) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn padded(&self, margin: f64) -> Self {
        Aabb {
            min: [self.min[0] - margin, self.min[1] - margin, self.min[2] - margin],
            max: [self.max[0] + margin, self.max[1] + margin, self.max[2] + margin],
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn strictly_contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] > self.min[a] && p[a] < self.max[a])
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }
}

/// Voxel lattice: sizes, spacing, world position of voxel (0,0,0), and the
/// anatomic direction of each axis. Data is stored x-fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub sizes: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub orientation: Orientation,
}

impl Geometry {
    pub fn new(
        sizes: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        orientation: Orientation,
    ) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("grid sizes {sizes:?} contain zero")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "grid spacing {spacing:?} must be positive and finite"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidInput(format!("grid origin {origin:?} is not finite")));
        }
        let orientation = Orientation::new(orientation.0)?;
        Ok(Geometry {
            sizes,
            spacing,
            origin,
            orientation,
        })
    }

    /// Isotropic RAS grid with the given spacing.
    pub fn ras(sizes: [usize; 3], spacing: f64, origin: [f64; 3]) -> Result<Self> {
        Geometry::new(sizes, [spacing; 3], origin, Orientation::RAS)
    }

    pub fn voxel_count(&self) -> usize {
        self.sizes[0] * self.sizes[1] * self.sizes[2]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.sizes[0] * (j + self.sizes[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.sizes[0];
        let rest = idx / self.sizes[0];
        [i, rest % self.sizes[1], rest / self.sizes[1]]
    }

    /// World position of a (possibly fractional) grid index.
    #[inline]
    pub fn world(&self, index: [f64; 3]) -> [f64; 3] {
        let mut w = self.origin;
        for (k, code) in self.orientation.0.iter().enumerate() {
            w[code.world_axis()] += code.sign() * index[k] * self.spacing[k];
        }
        w
    }

    #[inline]
    pub fn world_of(&self, index: [usize; 3]) -> [f64; 3] {
        self.world([index[0] as f64, index[1] as f64, index[2] as f64])
    }

    /// Continuous grid index of a world position (inverse of [`Geometry::world`]).
    #[inline]
    pub fn continuous_index(&self, world: [f64; 3]) -> [f64; 3] {
        let mut idx = [0.0; 3];
        for (k, code) in self.orientation.0.iter().enumerate() {
            let a = code.world_axis();
            idx[k] = code.sign() * (world[a] - self.origin[a]) / self.spacing[k];
        }
        idx
    }

    /// Nearest voxel to a world position, if it lies inside the grid.
    pub fn nearest_voxel(&self, world: [f64; 3]) -> Option<[usize; 3]> {
        let c = self.continuous_index(world);
        let mut out = [0usize; 3];
        for k in 0..3 {
            let r = c[k].round();
            if r < 0.0 || r >= self.sizes[k] as f64 {
                return None;
            }
            out[k] = r as usize;
        }
        Some(out)
    }

    /// Region covered by the voxels (voxel centres padded by half a voxel).
    pub fn field_of_view(&self) -> Aabb {
        let lo = self.world([-0.5, -0.5, -0.5]);
        let hi = self.world([
            self.sizes[0] as f64 - 0.5,
            self.sizes[1] as f64 - 0.5,
            self.sizes[2] as f64 - 0.5,
        ]);
        let mut b = Aabb::from_point(lo);
        b.include(hi);
        b
    }

    /// World-space box of an index-space box (voxel centres).
    pub fn index_box_to_world(&self, lo: [usize; 3], hi: [usize; 3]) -> Aabb {
        let mut b = Aabb::from_point(self.world_of(lo));
        b.include(self.world_of(hi));
        b
    }

    /// True when both geometries describe the same voxel lattice.
    pub fn same_lattice(&self, other: &Geometry) -> bool {
        self.sizes == other.sizes
            && self.orientation == other.orientation
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= GEOMETRY_TOLERANCE_MM
                    && (self.origin[a] - other.origin[a]).abs() <= GEOMETRY_TOLERANCE_MM
            })
    }

    pub(crate) fn ensure_same(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.same_lattice(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: {:?}/{:?}/{} vs {:?}/{:?}/{}",
                self.sizes, self.spacing, self.orientation, other.sizes, other.spacing, other.orientation
            )))
        }
    }
}

/// Element storage. `U8` holds binary masks and small label maps.
#[derive(Clone, Debug, PartialEq)]
pub enum VoxelData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::U8(v) => v.len(),
            VoxelData::I16(v) => v.len(),
            VoxelData::I32(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            VoxelData::U8(_) => "uint8",
            VoxelData::I16(_) => "int16",
            VoxelData::I32(_) => "int32",
            VoxelData::F32(_) => "float32",
        }
    }

    #[inline]
    pub fn get_f64(&self, idx: usize) -> f64 {
        match self {
            VoxelData::U8(v) => v[idx] as f64,
            VoxelData::I16(v) => v[idx] as f64,
            VoxelData::I32(v) => v[idx] as f64,
            VoxelData::F32(v) => v[idx] as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    geometry: Geometry,
    data: VoxelData,
}

impl VolumeGrid {
    pub fn new(geometry: Geometry, data: VoxelData) -> Result<Self> {
        let geometry = Geometry::new(
            geometry.sizes,
            geometry.spacing,
            geometry.origin,
            geometry.orientation,
        )?;
        if data.len() != geometry.voxel_count() {
            return Err(Error::InvalidInput(format!(
                "data has {} elements, geometry {:?} needs {}",
                data.len(),
                geometry.sizes,
                geometry.voxel_count()
            )));
        }
        Ok(VolumeGrid { geometry, data })
    }

    /// All-zero binary grid.
    pub fn empty_mask(geometry: Geometry) -> Self {
        let n = geometry.voxel_count();
        VolumeGrid {
            geometry,
            data: VoxelData::U8(vec![0; n]),
        }
    }

    /// Binary grid set where `f(i, j, k)` holds.
    pub fn mask_from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = geometry.sizes;
        let mut data = Vec::with_capacity(geometry.voxel_count());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k) as u8);
                }
            }
        }
        VolumeGrid {
            geometry,
            data: VoxelData::U8(data),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &VoxelData {
        &self.data
    }

    pub fn into_parts(self) -> (Geometry, VoxelData) {
        (self.geometry, self.data)
    }

    pub fn sizes(&self) -> [usize; 3] {
        self.geometry.sizes
    }

    /// Mask bytes, if this grid is `U8`.
    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            VoxelData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u8_mut(&mut self) -> Option<&mut [u8]> {
        match &mut self.data {
            VoxelData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_binary(&self) -> bool {
        self.as_u8().is_some_and(|v| v.iter().all(|&x| x <= 1))
    }

    /// Mask bytes, failing unless the grid is a `U8` grid of 0/1 values.
    pub fn binary(&self) -> Result<&[u8]> {
        match self.as_u8() {
            Some(v) if v.iter().all(|&x| x <= 1) => Ok(v),
            _ => Err(Error::InvalidInput(format!(
                "expected a binary uint8 mask, got {} data",
                self.data.kind_name()
            ))),
        }
    }

    pub fn foreground_count(&self) -> usize {
        match &self.data {
            VoxelData::U8(v) => v.iter().filter(|&&x| x != 0).count(),
            VoxelData::I16(v) => v.iter().filter(|&&x| x != 0).count(),
            VoxelData::I32(v) => v.iter().filter(|&&x| x != 0).count(),
            VoxelData::F32(v) => v.iter().filter(|&&x| x != 0.0).count(),
        }
    }

    /// Binary mask of voxels equal to `value` in an integer label map.
    pub fn select_label(&self, value: i64) -> Result<VolumeGrid> {
        let data: Vec<u8> = match &self.data {
            VoxelData::U8(v) => v.iter().map(|&x| (x as i64 == value) as u8).collect(),
            VoxelData::I16(v) => v.iter().map(|&x| (x as i64 == value) as u8).collect(),
            VoxelData::I32(v) => v.iter().map(|&x| (x as i64 == value) as u8).collect(),
            VoxelData::F32(_) => {
                return Err(Error::InvalidInput("label selection on float data".into()))
            }
        };
        Ok(VolumeGrid {
            geometry: self.geometry,
            data: VoxelData::U8(data),
        })
    }
}
