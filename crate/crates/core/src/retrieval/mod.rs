//! Tokenization and BM25 ranking.

mod bm25;
mod tokenize;

pub use bm25::{rank_order, round_sig12, Bm25Index, Bm25Params, IndexError};
pub use tokenize::{
    cjk_bigram_tokens, is_cjk, whitespace_tokens, ExternalTokenizerError, TokenStream, Tokenizer,
    TokenizerMode,
};

/// Ranks `index` for `query`: descending score, ties by ascending doc id,
/// at most `k` entries.
pub fn top_k_rank(index: &Bm25Index, query: &TokenStream, k: usize) -> Vec<(String, f64)> {
    index.top_k(query, k)
}

pub fn bm25_score(index: &Bm25Index, query: &TokenStream, doc_id: &str) -> Result<f64, IndexError> {
    index.score(query, doc_id)
}
