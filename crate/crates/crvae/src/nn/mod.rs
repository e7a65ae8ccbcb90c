pub mod activation;
pub mod conv;
pub mod init;
pub mod linear;
pub mod norm;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod tensor;

pub use param::{Mode, Module, Param};
pub use scalar::Element;
