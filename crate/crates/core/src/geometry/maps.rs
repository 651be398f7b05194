use super::{GeometryError, OrthoFrame, Side, Vec3};

/// Row-major boolean foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|k| f(k / width, k % width)).collect();
        Self { height, width, data }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    /// Intersection over union; two empty masks count as identical.
    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Removes every pixel within `radius` (4-neighborhood steps) of the background or border.
    pub fn eroded(&self, radius: usize) -> Mask {
        let mut cur = self.clone();
        for _ in 0..radius {
            let prev = cur.clone();
            for i in 0..self.height {
                for j in 0..self.width {
                    if !prev.get(i, j) {
                        continue;
                    }
                    let interior = i > 0
                        && j > 0
                        && i + 1 < self.height
                        && j + 1 < self.width
                        && prev.get(i - 1, j)
                        && prev.get(i + 1, j)
                        && prev.get(i, j - 1)
                        && prev.get(i, j + 1);
                    cur.set(i, j, interior);
                }
            }
        }
        cur
    }
}

/// Row-major, channel-interleaved float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn filled(height: usize, width: usize, value: &[f32]) -> Self {
        let data = value.iter().copied().cycle().take(height * width * value.len()).collect();
        Self { height, width, channels: value.len(), data }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut img = Self::new(height, width, channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    img.data[(i * width + j) * channels + c] = f(i, j, c);
                }
            }
        }
        img
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let k = (row * self.width + col) * self.channels;
        &self.data[k..k + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let k = (row * self.width + col) * self.channels;
        &mut self.data[k..k + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Zeroes every pixel outside `mask`.
    pub fn masked(mut self, mask: &Mask) -> Self {
        for (k, &m) in mask.data.iter().enumerate() {
            if !m {
                self.data[k * self.channels..(k + 1) * self.channels].fill(0.0);
            }
        }
        self
    }
}

/// Orthographic depth map. Foreground values are world z mapped to `(0, 1)` over
/// `[near, far]`; background values are exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub side: Side,
    pub frame: OrthoFrame,
    pub near: f64,
    pub far: f64,
    pub values: Vec<f32>,
    pub mask: Mask,
}

impl DepthMap {
    /// Builds a map from world z values in meters; `None` marks background.
    pub fn from_meters(side: Side, frame: OrthoFrame, near: f64, far: f64, z: &[Option<f64>]) -> Self {
        let mut values = vec![0f32; frame.len()];
        let mut mask = Mask::new(frame.height, frame.width);
        for (k, zk) in z.iter().enumerate() {
            if let Some(zk) = zk {
                values[k] = normalize_depth(*zk, near, far);
                mask.data[k] = true;
            }
        }
        Self { side, frame, near, far, values, mask }
    }

    /// Builds a map from normalized values; the mask is every value above `threshold`
    /// and everything else is forced to 0.
    pub fn from_normalized(side: Side, frame: OrthoFrame, near: f64, far: f64, values: &[f32], threshold: f32) -> Self {
        let mut mask = Mask::new(frame.height, frame.width);
        let mut out = vec![0f32; frame.len()];
        for (k, &v) in values.iter().enumerate() {
            if v > threshold {
                out[k] = v;
                mask.data[k] = true;
            }
        }
        Self { side, frame, near, far, values: out, mask }
    }

    pub fn height(&self) -> usize {
        self.frame.height
    }

    pub fn width(&self) -> usize {
        self.frame.width
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.frame.width + col]
    }

    /// World z of a foreground pixel.
    pub fn meters(&self, row: usize, col: usize) -> Option<f64> {
        let k = row * self.frame.width + col;
        self.mask.data[k].then(|| self.near + self.values[k] as f64 * (self.far - self.near))
    }

    /// Restricts the foreground to `mask`, zeroing everything else.
    pub fn with_mask(mut self, mask: Mask) -> Self {
        for (k, &m) in mask.data.iter().enumerate() {
            if !m {
                self.values[k] = 0.0;
            }
        }
        self.mask = mask;
        self
    }
}

pub(crate) fn normalize_depth(z: f64, near: f64, far: f64) -> f32 {
    let t = ((z - near) / (far - near)) as f32;
    t.clamp(f32::EPSILON, 1.0 - f32::EPSILON)
}

/// Unit normals on the orthographic grid, expressed in the shared world frame.
/// Background vectors are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub side: Side,
    pub height: usize,
    pub width: usize,
    pub values: Vec<[f32; 3]>,
    pub mask: Mask,
}

impl NormalMap {
    pub fn new(side: Side, height: usize, width: usize) -> Self {
        Self { side, height, width, values: vec![[0.0; 3]; height * width], mask: Mask::new(height, width) }
    }

    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, n: Vec3) {
        let k = row * self.width + col;
        self.values[k] = [n.x as f32, n.y as f32, n.z as f32];
        self.mask.data[k] = true;
    }

    /// Builds a map from raw network output: vectors are renormalized and pixels outside
    /// `mask` are zeroed. Foreground pixels with a zero vector fall back to the camera-facing normal.
    pub fn from_raw(side: Side, height: usize, width: usize, raw: &[[f32; 3]], mask: &Mask) -> Self {
        let mut out = Self::new(side, height, width);
        for (k, v) in raw.iter().enumerate() {
            if mask.data[k] {
                let n = Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64);
                let n = if n.norm() > 1e-12 { n.normalize() } else { Vec3::z() * side.facing_sign() };
                out.set(k / width, k % width, n);
            }
        }
        out
    }

    /// RGB visualization `(n + 1) / 2` with black background.
    pub fn to_image(&self) -> Image {
        let mut img = Image::new(self.height, self.width, 3);
        for (k, n) in self.values.iter().enumerate() {
            if self.mask.data[k] {
                for c in 0..3 {
                    img.data[k * 3 + c] = 0.5 * (n[c] + 1.0);
                }
            }
        }
        img
    }
}

/// A front/back pair of pixel-aligned maps.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPair<T> {
    pub front: T,
    pub back: T,
}

impl<T> MapPair<T> {
    pub fn new(front: T, back: T) -> Self {
        Self { front, back }
    }

    pub fn get(&self, side: Side) -> &T {
        match side {
            Side::Front => &self.front,
            Side::Back => &self.back,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> MapPair<U> {
        MapPair { front: f(&self.front), back: f(&self.back) }
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(Side, &T) -> Result<U, E>) -> Result<MapPair<U>, E> {
        Ok(MapPair { front: f(Side::Front, &self.front)?, back: f(Side::Back, &self.back)? })
    }
}

pub(crate) fn check_same_mask(a: &Mask, b: &Mask) -> Result<(), GeometryError> {
    if a.height != b.height || a.width != b.width {
        return Err(GeometryError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    if a.data != b.data {
        return Err(GeometryError::MaskMismatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        let a = Mask::from_fn(4, 4, |i, _| i < 2);
        let b = Mask::from_fn(4, 4, |i, _| i < 1);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&b), 0.5);
        assert_eq!(Mask::new(2, 2).iou(&Mask::new(2, 2)), 1.0);
    }

    #[test]
    fn erosion_shrinks_square() {
        let m = Mask::from_fn(7, 7, |i, j| (1..6).contains(&i) && (1..6).contains(&j));
        let e = m.eroded(1);
        assert_eq!(e.count(), 9);
        assert_eq!(m.eroded(3).count(), 0);
    }

    #[test]
    fn depth_normalization_round_trip() {
        let frame = OrthoFrame { center: [0.0, 0.0], pixel_pitch: 0.1, height: 1, width: 2 };
        let d = DepthMap::from_meters(Side::Front, frame, -1.0, 1.0, &[Some(0.25), None]);
        assert_eq!(d.values[1], 0.0);
        assert!((d.meters(0, 0).unwrap() - 0.25).abs() < 1e-6);
        assert_eq!(d.meters(0, 1), None);
    }

    #[test]
    fn masked_image_zeroes_background() {
        let img = Image::filled(2, 2, &[1.0, 0.5, 0.25]).masked(&Mask::from_fn(2, 2, |i, j| i == j));
        assert_eq!(img.pixel(0, 1), &[0.0, 0.0, 0.0]);
        assert_eq!(img.pixel(1, 1), &[1.0, 0.5, 0.25]);
    }
}
