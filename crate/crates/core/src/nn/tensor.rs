use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::scalar::Scalar;

/// Dense row-major tensor. Activations use `[batch, channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(n, c, h, w)`; panics on tensors that are not 4-D.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected a 4-D tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }

    /// Stacks equally sized images into an NCHW batch.
    pub fn from_images(images: &[&Image<T>]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
        let (h, w, c) = first.dims();
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            if img.dims() != (h, w, c) {
                return Err(Error::Shape(format!("batch mixes {:?} and {:?}", (h, w, c), img.dims())));
            }
            let px = img.as_slice();
            for k in 0..c {
                data.extend((0..h * w).map(|p| px[p * c + k]));
            }
        }
        Ok(Tensor { shape: vec![images.len(), c, h, w], data })
    }

    /// Splits an NCHW batch back into images, clamping into `[0, 1]`.
    pub fn to_images(&self) -> Result<Vec<Image<T>>> {
        let (n, c, h, w) = self.dims4();
        let plane = h * w;
        (0..n)
            .map(|b| {
                let src = &self.data[b * c * plane..(b + 1) * c * plane];
                let mut px = Vec::with_capacity(c * plane);
                for p in 0..plane {
                    px.extend((0..c).map(|k| src[k * plane + p]));
                }
                Image::from_clamped(h, w, c, px)
            })
            .collect()
    }

    /// Channel-wise concatenation of two NCHW tensors.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Result<Self> {
        let (n, ca, h, w) = a.dims4();
        let (nb, cb, hb, wb) = b.dims4();
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::Shape(format!("cannot concatenate {:?} with {:?}", a.shape, b.shape)));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(&a.data[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&b.data[i * cb * plane..(i + 1) * cb * plane]);
        }
        Ok(Tensor { shape: vec![n, ca + cb, h, w], data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_batch_round_trip() {
        let a = Image::<f32>::from_fn(3, 4, 3, |i, j, k| ((i + j * 2 + k * 5) % 9) as f32 / 9.0);
        let b = Image::<f32>::filled(3, 4, 3, 0.25);
        let t = Tensor::from_images(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 3, 4]);
        assert_eq!(t.data()[12], a.get(0, 0, 1));
        let back = t.to_images().unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn concat_stacks_channels_per_sample() {
        let a = Tensor::<f64>::new(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::new(vec![2, 1, 1, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }
}
