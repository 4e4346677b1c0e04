//! CTC fine-tuning with a convolutional head, greedy decoding, token
//! error rate and the paired t-test.

pub mod ctc;
pub mod data;
pub mod finetune;
pub mod head;
pub mod ttest;

pub use ctc::{ctc_loss, ctc_loss_from_logits, edit_distance, greedy_ctc_decode, log_softmax, wer, CtcOutput, BLANK};
pub use data::{group_documents, load_asr_dataset, AsrItem, Document, Vocab, MAX_DOCUMENT_SECONDS};
pub use finetune::{
    check_memory, evaluation_units, finetune, init_model, AsrModel, FinetuneConfig, FinetuneMode, FinetuneResult,
    TranscriptPair, WerReport,
};
pub use head::{AsrHead, HEAD_KERNEL, HEAD_LAYERS};
pub use ttest::{paired_t_test, TTest};
