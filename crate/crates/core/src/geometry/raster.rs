use super::Vec3;
use crate::error::{Error, Result};

/// Depth value of a pixel whose ray hits nothing.
pub const NO_HIT: f32 = f32::INFINITY;

/// Row-major per-pixel depth along the camera z axis, in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self { width, height, data: vec![value; (width * height) as usize] }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::DimMismatch(format!("{} values for a {width}x{height} depth map", data.len())));
        }
        if data.iter().any(|d| !(*d >= 0.0 || *d == NO_HIT)) {
            return Err(Error::InvalidInput("depth values must be >= 0 or the no-hit sentinel".into()));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn get(&self, i: u32, j: u32) -> f32 {
        self.data[(j * self.width + i) as usize]
    }

    #[inline]
    pub fn set(&mut self, i: u32, j: u32, v: f32) {
        self.data[(j * self.width + i) as usize] = v;
    }

    pub fn is_hit(&self, i: u32, j: u32) -> bool {
        self.get(i, j).is_finite()
    }
}

/// Row-major per-pixel instance id, 0 for background.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask2D {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u32>,
}

impl Mask2D {
    pub fn filled(width: u32, height: u32, value: u32) -> Self {
        Self { width, height, data: vec![value; (width * height) as usize] }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<u32>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::DimMismatch(format!("{} values for a {width}x{height} mask", data.len())));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn get(&self, i: u32, j: u32) -> u32 {
        self.data[(j * self.width + i) as usize]
    }

    #[inline]
    pub fn set(&mut self, i: u32, j: u32, v: u32) {
        self.data[(j * self.width + i) as usize] = v;
    }

    pub fn count(&self, id: u32) -> usize {
        self.data.iter().filter(|&&v| v == id).count()
    }

    /// Pixel coordinates carrying `id`, row-major order.
    pub fn pixels_of(&self, id: u32) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(move |(_, &v)| v == id)
            .map(move |(k, _)| ((k as u32) % w, (k as u32) / w))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud3D {
    pub points: Vec<Vec3<f64>>,
}

impl PointCloud3D {
    pub fn new(points: Vec<Vec3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = Vec3<f64>>) {
        self.points.extend(other);
    }
}
