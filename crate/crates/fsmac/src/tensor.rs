//! Dense joint-pmf tables over a handful of finite axes.
//!
//! Everything downstream (single-letter rates, directed information) reduces
//! to entropies of marginals of one flat table, so the representation is a
//! row-major `Vec<f64>` (last axis fastest) plus the axis sizes. Entropy
//! accumulation uses Kahan compensation and the convention 0·log 0 = 0.

pub(crate) const LN_2: f64 = std::f64::consts::LN_2;

/// Joint pmf over `dims.len()` finite axes, row-major with the last axis
/// contiguous.
#[derive(Debug, Clone)]
pub struct JointTable {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl JointTable {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        let len: usize = dims.iter().product();
        assert_eq!(len, data.len(), "table length must match axis sizes");
        Self { dims, data }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Stride of each axis in the flat layout.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    pub fn total(&self) -> f64 {
        kahan_sum(self.data.iter().copied())
    }

    /// Marginal over the axes with `keep[axis] == true`, laid out row-major
    /// over the kept axes in their original order.
    pub fn marginal(&self, keep: &[bool]) -> Vec<f64> {
        assert_eq!(keep.len(), self.dims.len());
        let mut out_len = 1usize;
        let mut out_stride = vec![0usize; self.dims.len()];
        for ax in (0..self.dims.len()).rev() {
            if keep[ax] {
                out_stride[ax] = out_len;
                out_len *= self.dims[ax];
            }
        }
        let mut out = vec![0.0; out_len];
        // Odometer walk; carries update the projected index incrementally.
        let mut coords = vec![0usize; self.dims.len()];
        let mut proj = 0usize;
        for (flat, &p) in self.data.iter().enumerate() {
            out[proj] += p;
            if flat + 1 == self.data.len() {
                break;
            }
            let mut ax = self.dims.len() - 1;
            loop {
                coords[ax] += 1;
                proj += out_stride[ax];
                if coords[ax] < self.dims[ax] {
                    break;
                }
                proj -= out_stride[ax] * self.dims[ax];
                coords[ax] = 0;
                ax -= 1;
            }
        }
        out
    }

    /// Entropy in bits of the marginal over the kept axes.
    pub fn marginal_entropy_bits(&self, keep: &[bool]) -> f64 {
        entropy_bits(&self.marginal(keep))
    }
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; dims.len()];
    for ax in (0..dims.len().saturating_sub(1)).rev() {
        strides[ax] = strides[ax + 1] * dims[ax + 1];
    }
    strides
}

/// Shannon entropy in bits, 0·log 0 = 0, Kahan-compensated in natural log.
pub fn entropy_bits(p: &[f64]) -> f64 {
    let nats = kahan_sum(p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()));
    nats / LN_2
}

pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}
