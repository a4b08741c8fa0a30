pub mod candidates;
pub mod eval;
pub mod ident;
pub mod io;
pub mod miner;
pub mod reranker;
pub mod schedule;
