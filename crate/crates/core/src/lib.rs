pub mod augmentation;
pub mod corpus;
pub mod demo_store;
pub mod evaluation;
pub mod io;
pub mod judge_engine;
pub mod llm_gateway;
pub mod protocol;
pub mod retrieval;
