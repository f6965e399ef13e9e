pub mod corpus;
pub mod graphs;
pub mod grsa;
pub mod lexer;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod pls;
