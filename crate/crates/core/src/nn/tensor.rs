use crate::error::{Error, Result};

/// Dense `[batch, channels, height, width]` array with an optional gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor4 { dims, data, grad: None })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    /// Values per `(batch, channel)` plane.
    pub fn plane(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel_plane(&self, b: usize, c: usize) -> &[f64] {
        let p = self.plane();
        let o = (b * self.dims[1] + c) * p;
        &self.data[o..o + p]
    }

    pub fn channel_plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let p = self.plane();
        let o = (b * self.dims[1] + c) * p;
        &mut self.data[o..o + p]
    }

    /// Contiguous block of all channels of sample `b`.
    pub fn sample(&self, b: usize) -> &[f64] {
        let s = self.dims[1] * self.plane();
        &self.data[b * s..(b + 1) * s]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let s = self.dims[1] * self.plane();
        &mut self.data[b * s..(b + 1) * s]
    }

    /// Samples at `rows`, in that order.
    pub fn select(&self, rows: &[usize]) -> Tensor4 {
        let mut data = Vec::with_capacity(rows.len() * self.dims[1] * self.plane());
        for &r in rows {
            data.extend_from_slice(self.sample(r));
        }
        Tensor4 {
            dims: [rows.len(), self.dims[1], self.dims[2], self.dims[3]],
            data,
            grad: None,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.data.len()]);
    }

    pub fn check_dims(&self, dims: [usize; 4], what: &str) -> Result<()> {
        if self.dims != dims {
            return Err(Error::ShapeMismatch(format!("{what}: expected {dims:?}, got {:?}", self.dims)));
        }
        Ok(())
    }
}
