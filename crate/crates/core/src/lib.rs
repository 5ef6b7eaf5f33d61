//! Character-level BiGRU-CRF tagger for word and morpheme segmentation.
//!
//! Segmentation is cast as sequence labelling: every base unit (a character,
//! or a space-delimited syllable in unit mode) receives a position tag, B, I,
//! E or S for words, plus X for word boundaries when segmenting morphs at the
//! sentence level. Units are represented by concatenated unigram, bigram and
//! trigram embeddings, encoded by a bidirectional GRU and scored by a
//! linear-chain CRF. Several independently trained models can be decoded as
//! an ensemble by averaging their emission and transition scores.

pub mod checkpoint;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod features;
pub mod metrics;
pub mod recurrent;
pub mod tagger;
pub mod training;

pub use checkpoint::Checkpoint;
pub use corpus::{Sentence, Span, Tag, TagScheme, TagSequence};
pub use error::{Error, Result};
pub use metrics::{Level, PrfResult};
pub use tagger::Segmenter;
pub use training::TrainConfig;
