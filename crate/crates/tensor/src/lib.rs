//! Dense `f64` tensors with a tape-based reverse-mode autodiff, an Adam
//! optimizer and fully connected layers.
//!
//! ```
//! use wisdom_tensor::{Tape, Tensor};
//!
//! let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap().requires_grad();
//! let mut tape = Tape::new();
//! let xv = tape.param(&x);
//! let sq = tape.square(xv).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.for_param(&x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

pub mod check;
mod error;
pub mod nn;
pub mod optim;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use nn::{Activation, Linear, Mlp, Params};
pub use optim::{soft_update, zero_grad, Adam, AdamConfig};
pub use tape::{matmul_raw, Gradients, Tape, Unary, Var};
pub use tensor::{ParamKey, Tensor};
