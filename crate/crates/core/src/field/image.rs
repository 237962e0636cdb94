use super::FieldError;

/// Row-major grayscale image with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, FieldError> {
        if width == 0 || height == 0 {
            return Err(FieldError::EmptyImage);
        }
        if data.len() != width * height {
            return Err(FieldError::ShapeMismatch { width, height, len: data.len() });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(FieldError::IntensityOutOfRange { index, value });
        }
        Ok(Self { width, height, data })
    }

    /// Constant image.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, FieldError> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self, FieldError> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self::new(width, height, data)
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intensities(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        (self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    /// Affine intensity change `gain * I + offset`, clamped to `[0, 1]`.
    pub fn adjust(&self, gain: f64, offset: f64) -> GrayImage {
        let data = self.data.iter().map(|v| (gain * v + offset).clamp(0.0, 1.0)).collect();
        Self::from_raw_unchecked(self.width, self.height, data)
    }
}
