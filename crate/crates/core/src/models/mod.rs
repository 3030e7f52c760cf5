//! Built-in target models.

pub mod gaussian;
pub mod gp;
pub mod mixed;
