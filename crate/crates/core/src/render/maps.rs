use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::{Error, Result, Vec3};

pub(crate) const NO_FACE: u32 = u32::MAX;

/// Camera-space normal image with its depth and face-id buffers.
/// Background pixels hold a zero normal, `-inf` depth and no face.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
    pub depth: Vec<f64>,
    pub face: Vec<u32>,
}

/// Result of sampling a normal map at a continuous pixel position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapSample {
    pub value: Vec3,
    /// Every contributing neighbour was background.
    pub background: bool,
    /// Position fell outside the image and was clamped.
    pub clamped: bool,
}

impl NormalMap {
    pub fn blank(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            normals: vec![Vec3::zeros(); n],
            depth: vec![f64::NEG_INFINITY; n],
            face: vec![NO_FACE; n],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        self.normals[self.index(x, y)]
    }

    #[inline]
    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.face[self.index(x, y)] != NO_FACE
    }

    #[inline]
    pub fn is_foreground_at(&self, i: usize) -> bool {
        self.face[i] != NO_FACE
    }

    pub fn face_at(&self, x: usize, y: usize) -> Option<usize> {
        let f = self.face[self.index(x, y)];
        (f != NO_FACE).then_some(f as usize)
    }

    pub fn foreground_count(&self) -> usize {
        self.face.iter().filter(|&&f| f != NO_FACE).count()
    }

    pub fn is_blank(&self) -> bool {
        self.foreground_count() == 0
    }

    pub fn silhouette(&self) -> Silhouette {
        Silhouette {
            width: self.width,
            height: self.height,
            mask: self.face.iter().map(|&f| u8::from(f != NO_FACE)).collect(),
        }
    }

    pub fn same_size(&self, other: &NormalMap) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ResolutionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Horizontally mirrored copy.
    pub fn mirrored(&self) -> Self {
        let mut out = Self::blank(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let s = self.index(x, y);
                let d = self.index(self.width - 1 - x, y);
                out.normals[d] = self.normals[s];
                out.depth[d] = self.depth[s];
                out.face[d] = self.face[s];
            }
        }
        out
    }

    /// Bilinear sample at continuous pixel coordinates (pixel `i` is centred
    /// at `i + 0.5`). Background neighbours are dropped from the blend and the
    /// remaining weights renormalized.
    pub fn sample(&self, u: f64, v: f64) -> MapSample {
        let w = self.width as f64;
        let h = self.height as f64;
        let clamped = !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) || !u.is_finite() || !v.is_finite();
        let x = (if u.is_finite() { u } else { 0.0 }).clamp(0.5, w - 0.5) - 0.5;
        let y = (if v.is_finite() { v } else { 0.0 }).clamp(0.5, h - 0.5) - 0.5;
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut acc = Vec3::zeros();
        let mut wsum = 0.0;
        for (tx, ty, tw) in taps {
            let i = self.index(tx, ty);
            if self.face[i] != NO_FACE && tw > 0.0 {
                acc += self.normals[i] * tw;
                wsum += tw;
            }
        }
        if wsum <= 0.0 {
            // nearest-pixel fallback for a zero-weight foreground tap
            let i = self.index(
                if fx < 0.5 { x0 } else { x1 },
                if fy < 0.5 { y0 } else { y1 },
            );
            if self.face[i] != NO_FACE {
                return MapSample {
                    value: self.normals[i],
                    background: false,
                    clamped,
                };
            }
            return MapSample {
                value: Vec3::zeros(),
                background: true,
                clamped,
            };
        }
        MapSample {
            value: acc / wsum,
            background: false,
            clamped,
        }
    }

    /// PNG with the `(n + 1) / 2` channel encoding; background stays black.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = if self.is_foreground(x, y) {
                    let n = self.get(x, y);
                    let enc = |c: f64| (((c + 1.0) * 0.5).clamp(0.0, 1.0) * 255.0).round() as u8;
                    Rgb([enc(n.x), enc(n.y), enc(n.z)])
                } else {
                    Rgb([0, 0, 0])
                };
                img.put_pixel(x as u32, y as u32, px);
            }
        }
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Binary foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Silhouette {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<u8>,
}

impl Silhouette {
    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x] != 0
    }

    pub fn mirrored(&self) -> Self {
        let mut mask = vec![0; self.mask.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                mask[y * self.width + (self.width - 1 - x)] = self.mask[y * self.width + x];
            }
        }
        Self {
            width: self.width,
            height: self.height,
            mask,
        }
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for (i, &m) in self.mask.iter().enumerate() {
            img.put_pixel(
                (i % self.width) as u32,
                (i / self.width) as u32,
                Luma([if m != 0 { 255 } else { 0 }]),
            );
        }
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Front and back maps rendered by one camera pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPair {
    pub front: NormalMap,
    pub back: NormalMap,
}

impl MapPair {
    /// Set when neither view saw any geometry.
    pub fn is_blank(&self) -> bool {
        self.front.is_blank() && self.back.is_blank()
    }

    pub fn swapped(&self) -> Self {
        Self {
            front: self.back.clone(),
            back: self.front.clone(),
        }
    }
}

/// Per-face visibility from the front camera.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisBuffer {
    pub visible: Vec<bool>,
}

impl VisBuffer {
    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    pub fn is_visible(&self, face: usize) -> bool {
        self.visible.get(face).copied().unwrap_or(false)
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.visible.iter().map(|&v| u8::from(v)).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self {
            visible: bytes.iter().map(|&b| b != 0).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker() -> NormalMap {
        let mut m = NormalMap::blank(4, 4);
        for y in 0..4 {
            for x in 0..2 {
                let i = m.index(x, y);
                m.normals[i] = Vec3::z();
                m.depth[i] = 0.0;
                m.face[i] = 0;
            }
        }
        m
    }

    #[test]
    fn background_excluded_from_blend() {
        let m = checker();
        // halfway between foreground column 1 and background column 2
        let s = m.sample(2.0, 2.0);
        assert!(!s.background);
        assert_eq!(s.value, Vec3::z());
    }

    #[test]
    fn pure_background_sample() {
        let m = checker();
        let s = m.sample(3.5, 1.5);
        assert!(s.background);
        assert_eq!(s.value, Vec3::zeros());
    }

    #[test]
    fn outside_is_clamped_and_flagged() {
        let m = checker();
        let s = m.sample(-3.0, 1.5);
        assert!(s.clamped);
        assert_eq!(s.value, Vec3::z());
    }

    #[test]
    fn png_export() {
        let dir = tempfile::tempdir().unwrap();
        let m = checker();
        m.write_png(dir.path().join("n.png")).unwrap();
        m.silhouette().write_png(dir.path().join("s.png")).unwrap();
        let img = image::open(dir.path().join("n.png")).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0).0, [128, 128, 255]);
        assert_eq!(img.get_pixel(3, 0).0, [0, 0, 0]);
    }
}
