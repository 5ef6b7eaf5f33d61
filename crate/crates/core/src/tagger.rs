//! Decoding with one model or an ensemble of independently trained models.

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::corpus::{chop, decode_tags, stitch, stream_units, Sentence, TagScheme, TagSequence};
use crate::crf::{average_lattices, ScoreLattice};
use crate::error::{Error, Result};
use crate::features::Vocabulary;
use crate::recurrent::Params;

/// Tags unit streams with the averaged scores of one or more models.
/// Streams longer than the length limit are chopped, tagged per fragment
/// and stitched back together.
pub struct Segmenter<'a> {
    models: Vec<(&'a Params, &'a Vocabulary)>,
    scheme: TagScheme,
    length_limit: usize,
}

impl<'a> Segmenter<'a> {
    pub fn single(
        params: &'a Params,
        vocab: &'a Vocabulary,
        scheme: TagScheme,
        length_limit: usize,
    ) -> Self {
        Segmenter {
            models: vec![(params, vocab)],
            scheme,
            length_limit,
        }
    }

    /// All checkpoints must share the tag scheme and unit mode; the length
    /// limit of the first one is used.
    pub fn from_checkpoints(checkpoints: &'a [Checkpoint]) -> Result<Self> {
        let first = checkpoints.first().ok_or(Error::EmptyInput)?;
        for c in &checkpoints[1..] {
            if c.config.scheme != first.config.scheme {
                return Err(Error::SchemeMismatch(format!(
                    "ensemble mixes {} and {} models",
                    first.config.scheme, c.config.scheme
                )));
            }
            if c.config.unit_mode != first.config.unit_mode {
                return Err(Error::Config("ensemble mixes unit modes".into()));
            }
        }
        Ok(Segmenter {
            models: checkpoints.iter().map(|c| (&c.params, &c.vocab)).collect(),
            scheme: first.config.scheme,
            length_limit: first.config.length_limit,
        })
    }

    pub fn scheme(&self) -> TagScheme {
        self.scheme
    }

    fn fragment_lattice(&self, units: &[String]) -> Result<ScoreLattice> {
        let lattices = self
            .models
            .iter()
            .map(|(p, v)| p.lattice(&v.sentence_ids(units)))
            .collect::<Result<Vec<_>>>()?;
        if lattices.len() == 1 {
            Ok(lattices.into_iter().next().expect("one lattice"))
        } else {
            average_lattices(&lattices)
        }
    }

    /// Score lattices of every fragment of `stream`.
    pub fn lattices(&self, stream: &[String]) -> Result<Vec<ScoreLattice>> {
        chop(stream, self.length_limit)?
            .into_iter()
            .map(|f| self.fragment_lattice(f))
            .collect()
    }

    pub fn tag_stream(&self, stream: &[String]) -> Result<TagSequence> {
        let fragments = self
            .lattices(stream)?
            .iter()
            .map(|l| TagSequence::from_indices(self.scheme, &l.viterbi()?.tags))
            .collect::<Result<Vec<_>>>()?;
        stitch(&fragments)
    }

    /// Segments the units of `s`. For BIESX the word boundaries of `s`
    /// determine the boundary slots of the stream.
    pub fn segment(&self, s: &Sentence) -> Result<Sentence> {
        let stream = stream_units(s, self.scheme);
        if stream.is_empty() {
            return Ok(Sentence {
                units: vec![],
                words: vec![],
                morphs: (self.scheme == TagScheme::Biesx).then(Vec::new),
            });
        }
        let tags = self.tag_stream(&stream)?;
        decode_tags(&stream, &tags)
    }

    /// Segments sentences in parallel; output order follows input order.
    pub fn segment_all(&self, sentences: &[Sentence]) -> Result<Vec<Sentence>> {
        sentences.par_iter().map(|s| self.segment(s)).collect()
    }
}
