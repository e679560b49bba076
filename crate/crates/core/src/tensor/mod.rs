//! Minimal reverse-mode autodiff over dense row-major tensors.
//!
//! Convolutions are cross-correlations (no kernel flip) with zero padding 1.
//! Max pooling floors odd sizes and routes gradients to the first maximum in
//! row-major window order.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, NamedTensor};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{dropout_mask, CustomOp, Gradients, Graph, Var};

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Floating-point element type usable in a graph.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    const DTYPE: &'static str;

    /// `c = a·b + beta·c` for row-major `a` (m×k, or k×m if `ta`) and `b`
    /// (k×n, or n×k if `tb`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    fn to_le(self, out: &mut Vec<u8>);
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // Logical (rows × cols) view of a row-major buffer.
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! real_impl {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Real for $t {
            const DTYPE: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[$t],
                ta: bool,
                b: &[$t],
                tb: bool,
                beta: $t,
                c: &mut [$t],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, ta);
                let (rsb, csb) = strides(k, n, tb);
                // SAFETY: the asserts above bound every index the kernel
                // touches for these strides.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn to_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
        }
    };
}

real_impl!(f32, "f32", matrixmultiply::sgemm);
real_impl!(f64, "f64", matrixmultiply::dgemm);

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// He-normal initialization for a weight whose fan-in is `fan_in`.
    pub fn he_normal(shape: &[usize], fan_in: usize, s: &mut crate::rng::Stream) -> Self {
        let sd = (2.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| T::of(s.normal(0.0, sd))).collect(),
        }
    }
}
