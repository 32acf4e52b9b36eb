pub mod linalg;
pub mod model;
pub mod bp;
pub mod adbn;
pub mod ff;
pub mod sim;
pub mod harness;
