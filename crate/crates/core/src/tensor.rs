//! Dense row-major tensors and the scalar types they may hold.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{shape_err, Result};

/// Element type tag, also used as the on-disk dtype code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating point scalar usable as a tensor element.
pub trait Real: Float + Default + Debug + Display + Sum + Send + Sync + 'static {
    const DTYPE: DType;

    fn of(v: f64) -> Self;

    fn f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for an `m x k` by `k x n` product with
    /// arbitrary element strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

fn check_extent(len: usize, rows: usize, cols: usize, strides: (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * strides.0 + (cols - 1) as isize * strides.1;
    assert!(
        strides.0 >= 0 && strides.1 >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn of(v: f64) -> Self {
        v as f32
    }

    fn f64(self) -> f64 {
        self as f64
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        (rsa, csa): (isize, isize),
        b: &[Self],
        (rsb, csb): (isize, isize),
        beta: Self,
        c: &mut [Self],
        (rsc, csc): (isize, isize),
    ) {
        check_extent(a.len(), m, k, (rsa, csa));
        check_extent(b.len(), k, n, (rsb, csb));
        check_extent(c.len(), m, n, (rsc, csc));
        // SAFETY: every operand extent was bounds-checked above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn of(v: f64) -> Self {
        v
    }

    fn f64(self) -> f64 {
        self
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        (rsa, csa): (isize, isize),
        b: &[Self],
        (rsb, csb): (isize, isize),
        beta: Self,
        c: &mut [Self],
        (rsc, csc): (isize, isize),
    ) {
        check_extent(a.len(), m, k, (rsa, csa));
        check_extent(b.len(), k, n, (rsb, csb));
        check_extent(c.len(), m, n, (rsc, csc));
        // SAFETY: every operand extent was bounds-checked above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// An n-dimensional array with an optional gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient accumulator, creating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(shape_err(
                "accumulate_grad",
                format!("gradient has {} elements, tensor {}", g.len(), self.data.len()),
            ));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Extents of a 4-d `[n, c, h, w]` tensor.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(shape_err(
                "dims4",
                format!("expected [n, c, h, w], got {:?}", self.shape),
            )),
        }
    }

    /// Copies sample `index` of a batch as a new batch of one.
    pub fn sample(&self, index: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims4()?;
        if index >= n {
            return Err(shape_err("sample", format!("index {index} >= batch {n}")));
        }
        let len = c * h * w;
        Tensor::new(
            vec![1, c, h, w],
            self.data[index * len..(index + 1) * len].to_vec(),
        )
    }

    /// Stacks equally shaped `[1, c, h, w]` or `[c, h, w]` tensors along a new batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| shape_err("stack", "no tensors"))?;
        let inner: Vec<usize> = match first.shape.first() {
            Some(1) if first.ndim() == 4 => first.shape[1..].to_vec(),
            _ => first.shape.clone(),
        };
        let len: usize = inner.iter().product();
        let mut data = Vec::with_capacity(len * items.len());
        for t in items {
            if t.numel() != len {
                return Err(shape_err(
                    "stack",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Tensor::new(shape, data)
    }

    /// Crops a `[1, c, h, w]` (or `[c, h, w]`) image to the given window. The
    /// window must lie inside the image.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let (c, h, w) = match self.shape[..] {
            [1, c, h, w] | [c, h, w] => (c, h, w),
            _ => return Err(shape_err("crop", format!("unsupported shape {:?}", self.shape))),
        };
        if top + height > h || left + width > w {
            return Err(shape_err(
                "crop",
                format!("window {top}+{height} x {left}+{width} exceeds {h}x{w}"),
            ));
        }
        let mut data = Vec::with_capacity(c * height * width);
        for ch in 0..c {
            for y in top..top + height {
                let row = ch * h * w + y * w;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Tensor::new(vec![1, c, height, width], data)
    }
}

/// Zero-fills the gradient of every listed tensor.
pub fn zero_grad<T: Real>(params: &mut [&mut Tensor<T>]) {
    for p in params.iter_mut() {
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn zero_grad_clears_accumulators() {
        let mut a = Tensor::<f64>::zeros(&[3]);
        a.accumulate_grad(&[1.0, 2.0, 3.0]).unwrap();
        let mut b = Tensor::<f64>::zeros(&[1]);
        b.accumulate_grad(&[5.0]).unwrap();
        zero_grad(&mut [&mut a, &mut b]);
        assert_eq!(a.grad().unwrap(), &[0.0, 0.0, 0.0]);
        assert_eq!(b.grad().unwrap(), &[0.0]);
        zero_grad::<f64>(&mut []);
    }

    #[test]
    fn crop_extracts_window() {
        let t = Tensor::<f32>::from_fn(&[1, 1, 4, 4], |i| i as f32);
        let c = t.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(t.crop(3, 3, 2, 2).is_err());
    }
}
