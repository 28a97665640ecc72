use std::fmt;

/// `[batch, channels, height, width]`.
pub type Shape = [usize; 4];

/// Dense NCHW `f32` tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: Shape, v: f32) -> Self {
        Self {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    /// Panics when `data` does not fill `shape`.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn scalar(v: f32) -> Self {
        Self::from_vec([1, 1, 1, 1], vec![v])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn item_slice(&self, i: usize) -> &[f32] {
        let l = self.item_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack single items along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Self {
        assert!(!items.is_empty());
        let s = items[0].shape;
        let mut data = Vec::with_capacity(items.len() * items[0].len());
        for t in items {
            assert_eq!([1, s[1], s[2], s[3]], t.shape, "stack needs equal single-item shapes");
            data.extend_from_slice(&t.data);
        }
        Self::from_vec([items.len(), s[1], s[2], s[3]], data)
    }

    /// Batch item `i` as a one-item tensor.
    pub fn select(&self, i: usize) -> Self {
        let s = self.shape;
        Self::from_vec([1, s[1], s[2], s[3]], self.item_slice(i).to_vec())
    }

    pub fn reshape(self, shape: Shape) -> Self {
        Self::from_vec(shape, self.data)
    }

    pub fn mean_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs() as f64).sum();
        (s / self.data.len() as f64) as f32
    }
}
