use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::mask::Mask;
use crate::tensor::Tensor;

/// Sampling ranges for augmentation. Rotation and shear are in degrees,
/// translation is a fraction of the image size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRanges {
    pub scale: (f64, f64),
    pub rotation_deg: (f64, f64),
    pub translate: (f64, f64),
    pub shear_deg: (f64, f64),
}

impl AffineRanges {
    pub fn identity() -> Self {
        Self {
            scale: (1.0, 1.0),
            rotation_deg: (0.0, 0.0),
            translate: (0.0, 0.0),
            shear_deg: (0.0, 0.0),
        }
    }
}

impl Default for AffineRanges {
    fn default() -> Self {
        Self {
            scale: (0.9, 1.1),
            rotation_deg: (-20.0, 20.0),
            translate: (-0.06, 0.06),
            shear_deg: (-8.0, 8.0),
        }
    }
}

/// 2×2 linear part plus translation (pixels), acting about the image
/// centre: `dst = A (src − c) + c + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub linear: [[f64; 2]; 2],
    pub shift: [f64; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            shift: [0.0, 0.0],
        }
    }

    pub fn rotation_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self {
            linear: [[c, -s], [s, c]],
            shift: [0.0, 0.0],
        }
    }

    /// Rotation · shear · isotropic scale, then translation.
    pub fn compose(scale: f64, rotation_deg: f64, shear_deg: f64, shift: [f64; 2]) -> Self {
        let (s, c) = rotation_deg.to_radians().sin_cos();
        let k = shear_deg.to_radians().tan();
        // R · [[1, k], [0, 1]] · scale
        let linear = [[c * scale, (c * k - s) * scale], [s * scale, (s * k + c) * scale]];
        Self { linear, shift }
    }

    fn inverse_linear(&self) -> [[f64; 2]; 2] {
        let [[a, b], [c, d]] = self.linear;
        let det = a * d - b * c;
        [[d / det, -b / det], [-c / det, a / det]]
    }

    /// Applies the map to a sample. The image is resampled bilinearly and
    /// both masks by nearest neighbour from the same source coordinate, with
    /// zero outside the frame.
    pub fn apply(&self, sample: &Sample) -> Sample {
        let (h, w) = sample.dims();
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let inv = self.inverse_linear();
        let src = sample.image.data();
        let mut image = vec![0.0f32; h * w];
        let mut myo = Mask::zeros(h, w);
        let mut scar = Mask::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - cx - self.shift[0];
                let dy = y as f64 - cy - self.shift[1];
                let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
                let sy = inv[1][0] * dx + inv[1][1] * dy + cy;

                let (nx, ny) = (sx.round(), sy.round());
                if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                    let (nx, ny) = (nx as usize, ny as usize);
                    myo.set(y, x, sample.myo.get(ny, nx));
                    scar.set(y, x, sample.scar.get(ny, nx));
                }

                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let at = |xi: f64, yi: f64| -> f64 {
                    if xi < 0.0 || yi < 0.0 || xi as usize >= w || yi as usize >= h {
                        0.0
                    } else {
                        src[yi as usize * w + xi as usize] as f64
                    }
                };
                let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + at(x0 + 1.0, y0) * fx * (1.0 - fy)
                    + at(x0, y0 + 1.0) * (1.0 - fx) * fy
                    + at(x0 + 1.0, y0 + 1.0) * fx * fy;
                image[y * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
        Sample {
            id: sample.id.clone(),
            image: Tensor::new(vec![1, h, w], image).expect("same dims"),
            myo,
            scar,
        }
    }
}

fn draw<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Samples one affine map from `ranges` and applies it to the sample.
pub fn random_affine(sample: &Sample, seed: u64, ranges: &AffineRanges) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = sample.dims();
    let scale = draw(&mut rng, ranges.scale);
    let rot = draw(&mut rng, ranges.rotation_deg);
    let shear = draw(&mut rng, ranges.shear_deg);
    let tx = draw(&mut rng, ranges.translate) * w as f64;
    let ty = draw(&mut rng, ranges.translate) * h as f64;
    Affine::compose(scale, rot, shear, [tx, ty]).apply(sample)
}
