use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};

/// A batch of image-shaped activations in NHWC order.
///
/// Rows of `data` enumerate `(n, y, x)` positions and columns enumerate
/// channels, so per-channel operations (batch norm, 1×1 convolutions) act on
/// `data` directly.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Array2<f64>,
}

impl FeatureMap {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        FeatureMap {
            n,
            h,
            w,
            data: Array2::zeros((n * h * w, c)),
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, values: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((n * h * w, c), values).map_err(|e| {
            Error::Dimension(format!("feature map {n}x{h}x{w}x{c}: {e}"))
        })?;
        Ok(FeatureMap { n, h, w, data })
    }

    /// Stacks per-image HWC tensors into one batch.
    pub fn stack(images: &[ImageTensor]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Empty("cannot stack an empty image list".into()))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        let mut values = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            if (img.height, img.width, img.channels) != (h, w, c) {
                return Err(Error::Dimension(format!(
                    "cannot stack {}x{}x{} with {h}x{w}x{c}",
                    img.height, img.width, img.channels
                )));
            }
            values.extend_from_slice(&img.data);
        }
        FeatureMap::from_vec(images.len(), h, w, c, values)
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.channels()]
    }

    /// Rows belonging to sample `i`.
    pub fn sample(&self, i: usize) -> ArrayView2<'_, f64> {
        let per = self.h * self.w;
        self.data.slice(s![i * per..(i + 1) * per, ..])
    }
}

/// A single normalized image in HWC order, ready to be batched.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}
