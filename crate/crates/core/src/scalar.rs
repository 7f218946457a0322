//! Floating-point scalar abstraction.
//!
//! All DSP and network kernels are generic over [`Scalar`] so the shipped
//! pipeline can run in `f32` for throughput while oracle and gradient tests
//! instantiate the very same code at `f64`. Randomness is always drawn in
//! `f64` and converted, so parameter initialization is identical (up to
//! rounding) across scalar types.
//!
//! The trait also hands out FFT plans from a per-thread memoizing planner:
//! planning costs far more than a small transform, so per-call planning
//! would dominate short-clip analysis.

use std::cell::RefCell;
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, NumAssignOps};
use rustfft::{Fft, FftPlanner};

pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + rustfft::FftNum + std::iter::Sum + Default + std::fmt::Display
{
    /// Dtype tag recorded in serialized containers.
    const DTYPE: &'static str;

    fn from_f(v: f64) -> Self;
    fn to_f(self) -> f64;

    fn from_n(v: usize) -> Self {
        Self::from_f(v as f64)
    }

    /// Forward FFT plan of `len`, memoized per thread and length.
    fn fft_forward(len: usize) -> Arc<dyn Fft<Self>>;

    /// Unnormalized inverse FFT plan of `len`, memoized like
    /// [`Scalar::fft_forward`].
    fn fft_inverse(len: usize) -> Arc<dyn Fft<Self>>;
}

thread_local! {
    static PLANNER_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
    static PLANNER_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn from_f(v: f64) -> Self {
        v as f32
    }

    fn to_f(self) -> f64 {
        self as f64
    }

    fn fft_forward(len: usize) -> Arc<dyn Fft<Self>> {
        PLANNER_F32.with(|p| p.borrow_mut().plan_fft_forward(len))
    }

    fn fft_inverse(len: usize) -> Arc<dyn Fft<Self>> {
        PLANNER_F32.with(|p| p.borrow_mut().plan_fft_inverse(len))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn from_f(v: f64) -> Self {
        v
    }

    fn to_f(self) -> f64 {
        self
    }

    fn fft_forward(len: usize) -> Arc<dyn Fft<Self>> {
        PLANNER_F64.with(|p| p.borrow_mut().plan_fft_forward(len))
    }

    fn fft_inverse(len: usize) -> Arc<dyn Fft<Self>> {
        PLANNER_F64.with(|p| p.borrow_mut().plan_fft_inverse(len))
    }
}
