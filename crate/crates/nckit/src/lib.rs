pub mod cdclass;
pub mod error;
pub mod fock;
pub mod gleason;
pub mod linalg;
pub mod ncdiff;
pub mod ncpoly;
pub mod ncrkhs;
pub mod report;
pub mod solver;
