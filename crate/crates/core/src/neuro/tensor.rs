use crate::error::{Error, Result};
use crate::imgio::Image;
use crate::scalar::Scalar;

/// Dense `(batch, channels, height, width)` array with an optional gradient
/// buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: [usize; 4],
    data: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Checked constructor: positive dimensions, matching length, finite
    /// values.
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("tensor dimensions must be positive, got {:?}", shape)));
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "{} values for tensor shape {:?}",
                data.len(),
                shape
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite tensor value {}", v)));
        }
        Ok(Self { shape, data, grad: None })
    }

    pub(crate) fn from_raw(shape: [usize; 4], data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { shape, data, grad: None }
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::from_raw(shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn filled(shape: [usize; 4], value: T) -> Self {
        Self::from_raw(shape, vec![value; shape.iter().product()])
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Values per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, b: usize) -> &[T] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.item_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut Vec<T> {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn ensure_shape(&self, shape: [usize; 4], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Shape(format!(
                "{}: expected shape {:?}, got {:?}",
                what, shape, self.shape
            )));
        }
        Ok(())
    }

    /// Stacks same-sized images into a batch.
    pub fn from_images(images: &[&Image<T>]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Argument("cannot build a tensor from zero images".into()))?;
        let shape = [images.len(), first.channels(), first.height(), first.width()];
        let mut data = Vec::with_capacity(shape.iter().product());
        for img in images {
            first.ensure_same_shape(img)?;
            data.extend_from_slice(img.data());
        }
        Ok(Self::from_raw(shape, data))
    }

    /// Batch item `b` as an image, clamped to `[0, 1]`.
    pub fn to_image(&self, b: usize) -> Result<Image<T>> {
        if b >= self.batch() {
            return Err(Error::Shape(format!("batch index {} of {}", b, self.batch())));
        }
        Image::clamped(self.width(), self.height(), self.channels(), self.item(b).to_vec())
    }

    /// Channel-wise concatenation `[a, b]`.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width() {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} and {:?} along channels",
                a.shape, b.shape
            )));
        }
        let shape = [a.batch(), a.channels() + b.channels(), a.height(), a.width()];
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..a.batch() {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        Ok(Self::from_raw(shape, data))
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `channels` channels
    /// and the rest.
    pub fn split_channels(&self, channels: usize) -> Result<(Self, Self)> {
        if channels == 0 || channels >= self.channels() {
            return Err(Error::Shape(format!(
                "cannot split {} channels at {}",
                self.channels(),
                channels
            )));
        }
        let plane = self.height() * self.width();
        let head = channels * plane;
        let mut a = Vec::with_capacity(self.batch() * head);
        let mut b = Vec::with_capacity(self.len() - self.batch() * head);
        for i in 0..self.batch() {
            let item = self.item(i);
            a.extend_from_slice(&item[..head]);
            b.extend_from_slice(&item[head..]);
        }
        let (n, h, w) = (self.batch(), self.height(), self.width());
        Ok((
            Self::from_raw([n, channels, h, w], a),
            Self::from_raw([n, self.channels() - channels, h, w], b),
        ))
    }
}
