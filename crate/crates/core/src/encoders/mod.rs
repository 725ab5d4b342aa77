//! Modality feature extractors and the embedding record container.

mod conv;
pub mod nbemb;
mod text;

pub use conv::{conv_encode, init_conv_weights, init_dense_weights, ConvEncoderConfig, ToyConvEncoder};
pub use nbemb::{load_embeddings, save_embeddings, EmbeddingDims};
pub use text::{text_encode, TextEncoderConfig, ToyTextEncoder};

/// Class labels: undifferentiated, poorly differentiated, differentiated.
pub const CLASS_NAMES: [&str; 3] = ["UD", "PD", "D"];
pub const NUM_CLASSES: usize = 3;

/// One sample's image and text feature vectors with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub label: usize,
    pub image: Vec<f32>,
    pub text: Vec<f32>,
    /// Set when the text vector was synthetically corrupted.
    pub noisy: bool,
}
