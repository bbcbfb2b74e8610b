//! Dense 4-D tensors in batch-major, row-major, channel-minor order.

use num_traits::{Float, NumCast};

/// Scalar type the layer math runs in. Training uses `f32`; the
/// finite-difference gradient checks instantiate everything with `f64`.
pub trait Element:
    Float + NumCast + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    /// c := alpha * op(a) * op(b) + beta * c with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(x: f64) -> Self {
        NumCast::from(x).unwrap()
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Element for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
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
            )
        }
    }
}

impl Element for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
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
            )
        }
    }
}

/// c(m x n) += alpha * a(m x k) * b(k x n), all row-major slices.
/// `a_trans`/`b_trans` mean the slice stores the transpose of the
/// logical operand.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    T::gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

/// (batch, height, width, channels) tensor; vectors are (b, 1, 1, n).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: (usize, usize, usize, usize),
    data: Vec<T>,
}

impl<T: Element> Tensor4<T> {
    pub fn zeros(dims: (usize, usize, usize, usize)) -> Self {
        let numel = dims.0 * dims.1 * dims.2 * dims.3;
        Tensor4 {
            dims,
            data: vec![T::zero(); numel],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize, usize), data: Vec<T>) -> Self {
        assert_eq!(data.len(), dims.0 * dims.1 * dims.2 * dims.3);
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims.0
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

    #[inline]
    pub fn index(&self, b: usize, i: usize, j: usize, c: usize) -> usize {
        ((b * self.dims.1 + i) * self.dims.2 + j) * self.dims.3 + c
    }

    #[inline]
    pub fn get(&self, b: usize, i: usize, j: usize, c: usize) -> T {
        self.data[self.index(b, i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, i: usize, j: usize, c: usize, value: T) {
        let idx = self.index(b, i, j, c);
        self.data[idx] = value;
    }

    /// Reinterprets the buffer under new dims with the same element count.
    pub fn reshaped(self, dims: (usize, usize, usize, usize)) -> Self {
        assert_eq!(self.data.len(), dims.0 * dims.1 * dims.2 * dims.3);
        Tensor4 {
            dims,
            data: self.data,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
