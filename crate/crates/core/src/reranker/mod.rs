//! Learned dual-encoder reranker over generator candidates.

mod context;
mod loss;
mod model;
mod persist;
mod train;

pub use context::{
    code_tokens, extract_context_window, ContextWindow, CHAR_TOKEN, MASK_TOKEN,
    MAX_HINT_OCCURRENCES, OTHER_SLOT_TOKEN, SEP_TOKEN, STRING_TOKEN,
};
pub use loss::{infonce_loss_ids, PairIds};
pub use model::{
    adjusted_score, name_tokens, rerank_with_context, DualEncoderModel, Params, ScoringConfig,
    SubtokenVocab, INIT_RANGE, INIT_TAU, PAD, PAD_TOKEN, UNK, UNK_TOKEN,
};
pub use persist::{
    load_model, load_model_expecting, model_from_json, model_to_json, save_model, PersistError,
    MODEL_FORMAT_VERSION,
};
pub use train::{
    build_vocab, infonce_loss, init_model, lr_at_step, mine_training_pairs, train_model,
    train_reranker, ModelConfig, PairMiningReport, TrainConfig, TrainError, TrainStep,
    TrainingPair, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};

use crate::ident::Candidate;
use crate::miner::{in_scope_names, MaskedExample};

/// Reorders candidates for one example by adjusted model score. Examples
/// without a `<ID_1>` placeholder keep their order and get no scores.
pub fn rerank(
    model: &DualEncoderModel,
    example: &MaskedExample,
    candidates: Vec<Candidate>,
) -> Vec<Candidate> {
    match extract_context_window(example, model.scoring.context_window) {
        Some(window) => {
            rerank_with_context(model, &window.tokens(), &in_scope_names(example), candidates)
        }
        None => candidates,
    }
}
