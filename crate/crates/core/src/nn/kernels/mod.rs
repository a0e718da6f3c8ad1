//! Forward and backward kernels for the heavier operators.

pub mod attention;
pub mod conv;
pub mod resize;
pub mod roi_align;
