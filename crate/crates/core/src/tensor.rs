//! Dense feature maps and their frequency-domain counterparts.

use crate::error::{Error, Result};

fn check_dims(c: usize, h: usize, w: usize, len: usize) -> Result<()> {
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "tensor dimensions must be positive, got {c}x{h}x{w}"
        )));
    }
    let expected = c * h * w;
    if len != expected {
        return Err(Error::ShapeMismatch(format!(
            "data length {len} does not match {c}x{h}x{w} = {expected}"
        )));
    }
    Ok(())
}

fn check_finite(c: usize, h: usize, w: usize, data: &[f64]) -> Result<()> {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            let channel = i / (h * w);
            let rem = i % (h * w);
            let _ = c;
            return Err(Error::NonFinite {
                channel,
                row: rem / w,
                col: rem % w,
            });
        }
    }
    Ok(())
}

/// One sample's C x H x W real-valued feature map, row-major
/// (channel, row, column). All entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(c, h, w, data.len())?;
        check_finite(c, h, w, &data)?;
        Ok(Self { c, h, w, data })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn channels(&self) -> usize {
        self.c
    }
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.h + x) * self.w + y]
    }

    /// Row-major vectorization; D = C*H*W. Invertible given the shape.
    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// Inverse of [`flatten`](Self::flatten) for a known shape.
    pub fn unflatten(c: usize, h: usize, w: usize, v: Vec<f64>) -> Result<Self> {
        Self::new(c, h, w, v)
    }
}

/// DCT-II coefficients with the same layout as the source tensor,
/// indexed (channel, u, v).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Spectrum {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(c, h, w, data.len())?;
        check_finite(c, h, w, &data)?;
        Ok(Self { c, h, w, data })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn channels(&self) -> usize {
        self.c
    }
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, u: usize, v: usize) -> f64 {
        self.data[(c * self.h + u) * self.w + v]
    }

    /// Squared Frobenius norm of all coefficients.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let err = FeatureTensor::new(1, 2, 2, vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(FeatureTensor::new(0, 2, 2, vec![]).is_err());
    }

    #[test]
    fn reports_first_non_finite_index() {
        let mut data = vec![0.0; 2 * 3 * 4];
        data[(1 * 3 + 2) * 4 + 1] = f64::NAN;
        data[(1 * 3 + 2) * 4 + 3] = f64::INFINITY;
        match FeatureTensor::new(2, 3, 4, data).unwrap_err() {
            Error::NonFinite { channel, row, col } => {
                assert_eq!((channel, row, col), (1, 2, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn flatten_roundtrip_is_identity() {
        let t = FeatureTensor::new(1, 1, 2, vec![3.5, -2.0]).unwrap();
        assert_eq!(t.flatten(), vec![3.5, -2.0]);
        let back = FeatureTensor::unflatten(1, 1, 2, t.flatten()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.flatten().len(), 1 * 1 * 2);
    }
}
