//! BiLSTM-CRF temporal tagger with a shared feature extractor and an
//! adversarial language discriminator.

pub mod checkpoint;
pub mod crf;
mod labels;
pub mod lstm;
mod model;

pub use labels::{Label, LabelScheme, TimexType};
pub use model::{EncodedSentence, LstmIds, ModelConfig, ParamIds, TaggerModel};
