pub mod bm25_index;
pub mod catalog;
pub mod commit_store;
pub mod eval;
pub mod fid_map;
pub mod pipeline;
pub mod rerank;
pub mod training;
pub mod synth;
