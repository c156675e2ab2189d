//! Dense complex matrices, Householder QR and seeded complex Gaussian sampling.

mod matrix;
mod qr;
mod random;

pub use matrix::ComplexMatrix;
pub use qr::{qr_decompose, QrFactors};
pub use random::{sample_complex_gaussian, RngHandle};

pub use num_complex::Complex64;
