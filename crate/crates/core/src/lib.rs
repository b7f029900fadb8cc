pub mod arrays;
pub mod bench;
pub mod calculus;
pub mod corpus;
pub mod digest;
pub mod explorer;
pub mod monitor;
pub mod par;
pub mod runtime;
pub mod semantics;
