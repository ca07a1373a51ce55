use cafu_tensor::Tensor;
use rand::Rng;

use super::SampleRecord;

pub const MAX_ROTATION_DEG: f64 = 20.0;

/// One draw of the geometric augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub angle_deg: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        hflip: false,
        vflip: false,
        angle_deg: 0.0,
    };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
            angle_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
        }
    }
}

/// Applies `params` to image and mask alike: flips, then a rotation about the
/// centre (bilinear with zero fill for the image, nearest with background
/// fill for the mask).
pub fn augment(sample: &SampleRecord, params: AugmentParams) -> SampleRecord {
    let (c, h, w) = (sample.channels(), sample.height(), sample.width());
    let mut image = sample.image.data().to_vec();
    let mut mask = sample.mask.clone();
    if params.hflip {
        for ch in 0..c {
            flip_rows(&mut image[ch * h * w..(ch + 1) * h * w], w);
        }
        flip_rows(&mut mask, w);
    }
    if params.vflip {
        for ch in 0..c {
            flip_cols(&mut image[ch * h * w..(ch + 1) * h * w], h, w);
        }
        flip_cols(&mut mask, h, w);
    }
    if params.angle_deg != 0.0 {
        let rot = Rotation::new(params.angle_deg, h, w);
        image = (0..c)
            .flat_map(|ch| rot.bilinear(&image[ch * h * w..(ch + 1) * h * w]))
            .collect();
        mask = rot.nearest(&mask);
    }
    SampleRecord {
        image: Tensor::new(&[c, h, w], image).expect("same extent"),
        mask,
        ..sample.clone()
    }
}

fn flip_rows<T>(plane: &mut [T], w: usize) {
    for row in plane.chunks_mut(w) {
        row.reverse();
    }
}

fn flip_cols<T>(plane: &mut [T], h: usize, w: usize) {
    for r in 0..h / 2 {
        let (top, bottom) = plane.split_at_mut((h - 1 - r) * w);
        top[r * w..(r + 1) * w].swap_with_slice(&mut bottom[..w]);
    }
}

/// Inverse mapping from output pixels to source coordinates.
struct Rotation {
    cos: f64,
    sin: f64,
    h: usize,
    w: usize,
}

impl Rotation {
    fn new(angle_deg: f64, h: usize, w: usize) -> Self {
        let t = angle_deg.to_radians();
        Self {
            cos: t.cos(),
            sin: t.sin(),
            h,
            w,
        }
    }

    fn source(&self, r: usize, c: usize) -> (f64, f64) {
        let (cy, cx) = ((self.h as f64 - 1.0) / 2.0, (self.w as f64 - 1.0) / 2.0);
        let (y, x) = (r as f64 - cy, c as f64 - cx);
        (self.cos * y - self.sin * x + cy, self.sin * y + self.cos * x + cx)
    }

    fn bilinear(&self, plane: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h as isize, self.w as isize);
        let at = |r: isize, c: isize| {
            if r < 0 || c < 0 || r >= h || c >= w {
                0.0
            } else {
                plane[(r * w + c) as usize]
            }
        };
        let mut out = Vec::with_capacity(plane.len());
        for r in 0..self.h {
            for c in 0..self.w {
                let (sy, sx) = self.source(r, c);
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as isize, x0 as isize);
                out.push(
                    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                        + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1)),
                );
            }
        }
        out
    }

    fn nearest(&self, plane: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(plane.len());
        for r in 0..self.h {
            for c in 0..self.w {
                let (sy, sx) = self.source(r, c);
                let (y, x) = (sy.round(), sx.round());
                let inside = y >= 0.0 && x >= 0.0 && (y as usize) < self.h && (x as usize) < self.w;
                out.push(if inside { plane[y as usize * self.w + x as usize] } else { 0 });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SampleRecord {
        SampleRecord {
            id: "s".into(),
            image: Tensor::new(&[1, 3, 4], (0..12).map(f64::from).collect()).unwrap(),
            mask: (0..12).map(|v| (v % 3) as u8).collect(),
            case_id: "c".into(),
            spacing: None,
        }
    }

    #[test]
    fn identity_leaves_sample_unchanged() {
        let s = sample();
        assert_eq!(augment(&s, AugmentParams::IDENTITY), s);
    }

    #[test]
    fn flips_are_involutions() {
        let s = sample();
        for p in [
            AugmentParams { hflip: true, ..AugmentParams::IDENTITY },
            AugmentParams { vflip: true, ..AugmentParams::IDENTITY },
        ] {
            let once = augment(&s, p);
            assert_ne!(once, s);
            assert_eq!(augment(&once, p), s);
        }
    }

    #[test]
    fn horizontal_flip_reverses_rows() {
        let s = augment(&sample(), AugmentParams { hflip: true, ..AugmentParams::IDENTITY });
        assert_eq!(&s.image.data()[..4], &[3.0, 2.0, 1.0, 0.0]);
    }
}
