use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Binary H×W mask stored as one byte (0 or 1) per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![0; height * width],
        }
    }

    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::InvalidShape {
                op: "mask",
                msg: format!("{height}x{width} mask needs {} values, got {}", height * width, bits.len()),
            });
        }
        if let Some((index, &v)) = bits.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinaryMask {
                index,
                value: v as f64,
            });
        }
        Ok(Self { height, width, bits })
    }

    /// Builds a mask from real values, rejecting anything other than exactly
    /// 0 or 1.
    pub fn from_values<T: Real>(height: usize, width: usize, values: &[T]) -> Result<Self> {
        let bits = values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                if v == T::zero() {
                    Ok(0)
                } else if v == T::one() {
                    Ok(1)
                } else {
                    Err(Error::NonBinaryMask {
                        index,
                        value: v.as_f64(),
                    })
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(height, width, bits)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x) as u8);
            }
        }
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Pixel-wise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a <= b)
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.bits.iter().map(|&b| if b == 1 { T::one() } else { T::zero() }).collect();
        Tensor::new(vec![self.height, self.width], data).expect("mask dims are positive")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary_values() {
        assert!(matches!(
            Mask::from_values(1, 3, &[0.0f32, 0.5, 1.0]),
            Err(Error::NonBinaryMask { index: 1, .. })
        ));
        assert!(Mask::new(1, 2, vec![0, 2]).is_err());
        assert!(Mask::from_values(1, 2, &[0.0f64, 1.0]).is_ok());
    }

    #[test]
    fn subset_relation() {
        let a = Mask::new(1, 3, vec![0, 1, 0]).unwrap();
        let b = Mask::new(1, 3, vec![1, 1, 0]).unwrap();
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
    }
}
