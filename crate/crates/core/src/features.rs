//! N-gram vocabularies and concatenated unigram/bigram/trigram input vectors.
//!
//! Every position is described by its unit, the bigram ending at it and the
//! trigram centred on it. Out-of-range neighbours are the pad symbol. N-grams
//! seen fewer than twice in training share the per-order unknown id, which is
//! also what unseen n-grams map to at decoding time.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// Unit used for neighbours outside the sentence.
pub const PAD_SYMBOL: &str = "\u{0}";
const KEY_SEPARATOR: char = '\u{1f}';
const UNK_KEY: &str = "<unk>";

/// Id shared by singleton and unseen n-grams of every order.
pub const UNK_ID: usize = 0;

/// Dense id map for one n-gram order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramTable {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl NGramTable {
    fn with_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.first().map(String::as_str) != Some(UNK_KEY) {
            return Err(Error::CorruptFile(
                "n-gram table lacks the unknown entry".into(),
            ));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate().skip(1) {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::CorruptFile(format!("duplicate n-gram {s:?}")));
            }
        }
        Ok(NGramTable { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, key: &str) -> usize {
        self.index.get(key).copied().unwrap_or(UNK_ID)
    }

    /// N-gram keys in id order; entry 0 is the unknown placeholder.
    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub uni: NGramTable,
    pub bi: NGramTable,
    pub tri: NGramTable,
}

/// Embedding-table row ids of one position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NGramIds {
    pub uni: usize,
    pub bi: usize,
    pub tri: usize,
}

fn key(parts: &[&str]) -> String {
    let mut k = String::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            k.push(KEY_SEPARATOR);
        }
        k.push_str(p);
    }
    k
}

fn window(units: &[String], i: usize) -> [String; 3] {
    let at = |j: Option<usize>| -> &str {
        match j {
            Some(j) if j < units.len() => &units[j],
            _ => PAD_SYMBOL,
        }
    };
    let prev = at(i.checked_sub(1));
    let cur = at(Some(i));
    let next = at(Some(i + 1));
    [key(&[cur]), key(&[prev, cur]), key(&[prev, cur, next])]
}

#[derive(Default)]
struct Counter {
    order: Vec<String>,
    counts: HashMap<String, usize>,
}

impl Counter {
    fn add(&mut self, k: String) {
        match self.counts.get_mut(&k) {
            Some(c) => *c += 1,
            None => {
                self.counts.insert(k.clone(), 1);
                self.order.push(k);
            }
        }
    }

    fn into_table(self) -> NGramTable {
        let mut symbols = vec![UNK_KEY.to_string()];
        symbols.extend(self.order.into_iter().filter(|k| self.counts[k] >= 2));
        NGramTable::with_symbols(symbols).expect("keys are unique")
    }
}

impl Vocabulary {
    /// Counts every n-gram over the training unit streams; ids follow first
    /// occurrence so construction is reproducible.
    pub fn build<'a, I>(streams: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counters: [Counter; 3] = Default::default();
        let mut seen = 0;
        for units in streams {
            for i in 0..units.len() {
                for (c, k) in counters.iter_mut().zip(window(units, i)) {
                    c.add(k);
                }
                seen += 1;
            }
        }
        if seen == 0 {
            return Err(Error::EmptyCorpus);
        }
        let [uni, bi, tri] = counters;
        Ok(Vocabulary {
            uni: uni.into_table(),
            bi: bi.into_table(),
            tri: tri.into_table(),
        })
    }

    pub fn from_symbols(uni: Vec<String>, bi: Vec<String>, tri: Vec<String>) -> Result<Self> {
        Ok(Vocabulary {
            uni: NGramTable::with_symbols(uni)?,
            bi: NGramTable::with_symbols(bi)?,
            tri: NGramTable::with_symbols(tri)?,
        })
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.uni.len(), self.bi.len(), self.tri.len())
    }

    pub fn context_ids(&self, units: &[String], i: usize) -> Result<NGramIds> {
        if i >= units.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: units.len(),
            });
        }
        let [u, b, t] = window(units, i);
        Ok(NGramIds {
            uni: self.uni.id(&u),
            bi: self.bi.id(&b),
            tri: self.tri.id(&t),
        })
    }

    pub fn sentence_ids(&self, units: &[String]) -> Vec<NGramIds> {
        (0..units.len())
            .map(|i| self.context_ids(units, i).expect("index in range"))
            .collect()
    }
}

pub fn build_vocabulary<'a, I>(streams: I) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    Vocabulary::build(streams)
}

pub fn context_ids(units: &[String], i: usize, v: &Vocabulary) -> Result<NGramIds> {
    v.context_ids(units, i)
}

/// Uniform Glorot initialisation of a `rows x cols` matrix.
pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..limit))
}

/// The three trainable n-gram embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub uni: Array2<f64>,
    pub bi: Array2<f64>,
    pub tri: Array2<f64>,
}

impl EmbeddingTables {
    pub fn zeros(rows: (usize, usize, usize), dims: (usize, usize, usize)) -> Self {
        EmbeddingTables {
            uni: Array2::zeros((rows.0, dims.0)),
            bi: Array2::zeros((rows.1, dims.1)),
            tri: Array2::zeros((rows.2, dims.2)),
        }
    }

    pub fn random<R: Rng>(
        rows: (usize, usize, usize),
        dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Self {
        EmbeddingTables {
            uni: glorot_uniform(rows.0, dims.0, rng),
            bi: glorot_uniform(rows.1, dims.1, rng),
            tri: glorot_uniform(rows.2, dims.2, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.uni.ncols() + self.bi.ncols() + self.tri.ncols()
    }

    fn check(&self, ids: NGramIds) -> Result<()> {
        for (id, t) in [
            (ids.uni, &self.uni),
            (ids.bi, &self.bi),
            (ids.tri, &self.tri),
        ] {
            if id >= t.nrows() {
                return Err(Error::IdOutOfRange {
                    id,
                    rows: t.nrows(),
                });
            }
        }
        Ok(())
    }

    /// Concatenated unigram, bigram and trigram rows.
    pub fn embed(&self, ids: NGramIds) -> Result<Array1<f64>> {
        self.check(ids)?;
        let mut out = Array1::zeros(self.output_dim());
        self.write_row(ids, out.as_slice_mut().unwrap());
        Ok(out)
    }

    /// Embeds a whole sentence into an `L x D` matrix.
    pub fn embed_sentence(&self, ids: &[NGramIds]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((ids.len(), self.output_dim()));
        for (i, &id) in ids.iter().enumerate() {
            self.check(id)?;
            self.write_row(id, out.row_mut(i).into_slice().unwrap());
        }
        Ok(out)
    }

    fn write_row(&self, ids: NGramIds, out: &mut [f64]) {
        let (du, db) = (self.uni.ncols(), self.bi.ncols());
        out[..du].copy_from_slice(self.uni.row(ids.uni).as_slice().unwrap());
        out[du..du + db].copy_from_slice(self.bi.row(ids.bi).as_slice().unwrap());
        out[du + db..].copy_from_slice(self.tri.row(ids.tri).as_slice().unwrap());
    }

    /// Adds the per-position input gradients `d_inputs` (`L x D`) into the
    /// rows they were looked up from.
    pub fn scatter_add(&mut self, ids: &[NGramIds], d_inputs: &Array2<f64>) {
        let (du, db) = (self.uni.ncols(), self.bi.ncols());
        for (i, id) in ids.iter().enumerate() {
            let row = d_inputs.row(i);
            let mut u = self.uni.row_mut(id.uni);
            u += &row.slice(s![..du]);
            let mut b = self.bi.row_mut(id.bi);
            b += &row.slice(s![du..du + db]);
            let mut t = self.tri.row_mut(id.tri);
            t += &row.slice(s![du + db..]);
        }
    }
}

pub fn embed(ids: NGramIds, tables: &EmbeddingTables) -> Result<Array1<f64>> {
    tables.embed(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn units(s: &str) -> Vec<String> {
        s.chars().map(String::from).collect()
    }

    #[test]
    fn singletons_map_to_unknown() {
        let a = units("aab");
        let b = units("a");
        let v = build_vocabulary([a.as_slice(), b.as_slice()]).unwrap();
        // a occurs 3 times, b once
        assert_ne!(v.uni.id("a"), UNK_ID);
        assert_eq!(v.uni.id("b"), UNK_ID);
        // bigram a|b occurs once
        let ids = v.context_ids(&a, 2).unwrap();
        assert_eq!(ids.bi, UNK_ID);
        // never-seen character
        let z = units("z");
        assert_eq!(v.context_ids(&z, 0).unwrap().uni, UNK_ID);
    }

    #[test]
    fn windows() {
        let u = units("abc");
        let [x, y, z] = window(&u, 1);
        assert_eq!(
            (x.as_str(), y.as_str(), z.as_str()),
            ("b", "a\u{1f}b", "a\u{1f}b\u{1f}c")
        );
        let [x, y, z] = window(&u, 0);
        assert_eq!(x, "a");
        assert_eq!(y, format!("{PAD_SYMBOL}\u{1f}a"));
        assert_eq!(z, format!("{PAD_SYMBOL}\u{1f}a\u{1f}b"));
        let [_, _, z] = window(&u, 2);
        assert_eq!(z, format!("b\u{1f}c\u{1f}{PAD_SYMBOL}"));
    }

    #[test]
    fn padded_ngrams_get_ids() {
        let u = units("abc");
        let v = build_vocabulary([u.as_slice(), u.as_slice()]).unwrap();
        let ids: Vec<_> = v.sentence_ids(&u);
        assert!(ids
            .iter()
            .all(|i| i.uni != UNK_ID && i.bi != UNK_ID && i.tri != UNK_ID));
        assert_eq!(v.uni.id("b"), ids[1].uni);
        assert!(matches!(
            v.context_ids(&u, 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn deterministic_ids() {
        let a = units("abcabcab");
        let v1 = build_vocabulary([a.as_slice()]).unwrap();
        let v2 = build_vocabulary([a.as_slice()]).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1.uni.symbols(), ["<unk>", "a", "b", "c"]);
    }

    #[test]
    fn empty_corpus() {
        let none: Vec<&[String]> = vec![];
        assert!(matches!(build_vocabulary(none), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn embedding_lookup() {
        let t = EmbeddingTables::zeros((3, 4, 5), (50, 50, 50));
        let ids = NGramIds {
            uni: 2,
            bi: 3,
            tri: 4,
        };
        let e = embed(ids, &t).unwrap();
        assert_eq!(e.len(), 150);
        assert!(e.iter().all(|&x| x == 0.0));
        assert!(matches!(
            embed(
                NGramIds {
                    uni: 3,
                    bi: 0,
                    tri: 0
                },
                &t
            ),
            Err(Error::IdOutOfRange { id: 3, rows: 3 })
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = EmbeddingTables::random((3, 4, 5), (2, 3, 4), &mut rng);
        let e = t.embed(ids).unwrap();
        assert_eq!(e.len(), 9);
        assert_eq!(e.as_slice().unwrap()[..2], t.uni.row(2).to_vec()[..]);
        assert_eq!(e.as_slice().unwrap()[5..], t.tri.row(4).to_vec()[..]);
        assert_eq!(t.embed(ids).unwrap(), e);
    }

    #[test]
    fn same_unit_different_context() {
        let a = units("xaybxaybxayb");
        let v = build_vocabulary([a.as_slice()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTables::random(v.sizes(), (4, 4, 4), &mut rng);
        let first = v.context_ids(&a, 1).unwrap();
        let x = v.context_ids(&a, 2).unwrap();
        assert_ne!(first.uni, x.uni);
        let s = units("xa");
        let other = v.context_ids(&s, 1).unwrap(); // "a" after "x" at sentence end
        assert_eq!(first.uni, other.uni);
        assert_ne!(first.tri, other.tri);
        assert_ne!(t.embed(first).unwrap(), t.embed(other).unwrap());
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = glorot_uniform(150, 200, &mut rng);
        let limit = (6.0f64 / 350.0).sqrt();
        assert!(m.iter().all(|x| x.abs() < limit));
    }
}
