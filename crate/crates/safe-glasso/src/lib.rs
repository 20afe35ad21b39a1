pub mod basis;
pub mod design;
pub mod error;
pub mod linalg;
pub mod par;
pub mod penalty;
pub mod quadrature;
pub mod selection;
pub mod solver;
