//! Mini-batch Adagrad training with a per-epoch decaying learning rate,
//! global-norm clipping, length bucketing and dev-F1 model selection.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{chop, encode_tags, stream_units, Sentence, TagScheme};
use crate::error::{Error, Result};
use crate::features::Vocabulary;
use crate::metrics::{segment_prf, Level};
use crate::recurrent::{compute_gradients, Dropout, Instance, ModelDims, Params};
use crate::tagger::Segmenter;

pub use crate::checkpoint::{load, save, Checkpoint, EpochRecord, FORMAT_VERSION};

/// Width, in units, of the length buckets batches are drawn from.
pub const BUCKET_WIDTH: usize = 10;
pub const ADAGRAD_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub char_vec: usize,
    pub ngram_vecs: usize,
    pub state: usize,
    pub lr0: f64,
    pub decay: f64,
    pub clip: f64,
    pub dropout: f64,
    pub batch: usize,
    pub length_limit: usize,
    pub epochs: usize,
    pub min_best_epoch: usize,
    pub seed: u64,
    pub scheme: TagScheme,
    pub unit_mode: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            char_vec: 50,
            ngram_vecs: 50,
            state: 200,
            lr0: 0.1,
            decay: 0.05,
            clip: 5.0,
            dropout: 0.5,
            batch: 10,
            length_limit: 300,
            epochs: 30,
            min_best_epoch: 5,
            seed: 1,
            scheme: TagScheme::Bies,
            unit_mode: false,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 14] = [
        "char_vec",
        "ngram_vecs",
        "state",
        "lr0",
        "decay",
        "clip",
        "dropout",
        "batch",
        "length_limit",
        "epochs",
        "min_best_epoch",
        "seed",
        "scheme",
        "unit_mode",
    ];

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("char_vec", self.char_vec),
            ("ngram_vecs", self.ngram_vecs),
            ("state", self.state),
            ("batch", self.batch),
            ("length_limit", self.length_limit),
            ("epochs", self.epochs),
            ("min_best_epoch", self.min_best_epoch),
        ];
        if let Some((k, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        let reals = [
            ("lr0", self.lr0),
            ("decay", self.decay),
            ("clip", self.clip),
        ];
        if let Some((k, _)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        let v = value.trim();
        match key.trim() {
            "char_vec" => self.char_vec = num(key, v)?,
            "ngram_vecs" => self.ngram_vecs = num(key, v)?,
            "state" => self.state = num(key, v)?,
            "lr0" => self.lr0 = num(key, v)?,
            "decay" => self.decay = num(key, v)?,
            "clip" => self.clip = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "length_limit" => self.length_limit = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "min_best_epoch" => self.min_best_epoch = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "scheme" => self.scheme = TagScheme::parse(v)?,
            "unit_mode" => self.unit_mode = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies flat `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn model_dims(&self, vocab: &Vocabulary) -> ModelDims {
        ModelDims {
            vocab: vocab.sizes(),
            embed: (self.char_vec, self.ngram_vecs, self.ngram_vecs),
            state: self.state,
            tags: self.scheme.num_tags(),
        }
    }

    pub fn level(&self) -> Level {
        match self.scheme {
            TagScheme::Bies => Level::Word,
            TagScheme::Biesx => Level::Morph,
        }
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "char_vec={}", self.char_vec)?;
        writeln!(f, "ngram_vecs={}", self.ngram_vecs)?;
        writeln!(f, "state={}", self.state)?;
        writeln!(f, "lr0={}", self.lr0)?;
        writeln!(f, "decay={}", self.decay)?;
        writeln!(f, "clip={}", self.clip)?;
        writeln!(f, "dropout={}", self.dropout)?;
        writeln!(f, "batch={}", self.batch)?;
        writeln!(f, "length_limit={}", self.length_limit)?;
        writeln!(f, "epochs={}", self.epochs)?;
        writeln!(f, "min_best_epoch={}", self.min_best_epoch)?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "scheme={}", self.scheme)?;
        writeln!(f, "unit_mode={}", self.unit_mode)
    }
}

/// `lr0 / (decay * (t - 1) + 1)` for epochs numbered from 1.
pub fn learning_rate(t: usize, lr0: f64, decay: f64) -> Result<f64> {
    if t < 1 {
        return Err(Error::InvalidEpoch(t));
    }
    Ok(lr0 / (decay * (t - 1) as f64 + 1.0))
}

/// Global L2 norm over every gradient value.
pub fn global_norm(grads: &Params) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `threshold / norm` when the global norm exceeds
/// `threshold`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Params, threshold: f64) -> Result<f64> {
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    if norm > threshold {
        let scale = threshold / norm;
        for t in grads.tensors_mut() {
            t.mapv_inplace(|g| g * scale);
        }
    }
    Ok(norm)
}

/// Adagrad squared-gradient accumulators, one per parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub accumulators: Params,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &Params) -> Self {
        OptimizerState {
            accumulators: params.zeros_like(),
            epsilon: ADAGRAD_EPSILON,
        }
    }
}

/// `acc += g^2; theta -= lr * g / (sqrt(acc) + eps)`, element-wise.
pub fn adagrad_step(
    params: &mut Params,
    grads: &Params,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.dims() != grads.dims() || params.dims() != state.accumulators.dims() {
        return Err(Error::ShapeMismatch(
            "parameters, gradients and accumulators differ in shape".into(),
        ));
    }
    let eps = state.epsilon;
    for ((theta, g), acc) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.accumulators.tensors_mut())
    {
        let theta = theta.as_slice_mut().expect("standard layout");
        let g = g.as_slice().expect("standard layout");
        let acc = acc.as_slice_mut().expect("standard layout");
        for ((p, &g), a) in theta.iter_mut().zip(g).zip(acc.iter_mut()) {
            if g == 0.0 {
                continue;
            }
            *a += g * g;
            *p -= lr * g / (a.sqrt() + eps);
        }
    }
    Ok(())
}

/// Groups instance indices into length buckets, shuffles each bucket,
/// cuts it into batches and shuffles the batch order. Every index appears
/// exactly once.
pub fn make_batches<R: rand::Rng>(lengths: &[usize], batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let n_buckets = lengths
        .iter()
        .map(|l| l.saturating_sub(1) / BUCKET_WIDTH + 1)
        .max()
        .unwrap_or(0);
    let mut buckets = vec![Vec::new(); n_buckets];
    for (i, &l) in lengths.iter().enumerate() {
        buckets[l.saturating_sub(1) / BUCKET_WIDTH].push(i);
    }
    let mut batches = Vec::new();
    for mut b in buckets {
        b.shuffle(rng);
        batches.extend(b.chunks(batch.max(1)).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Training instances from sentences: the tag stream of every sentence,
/// chopped into fragments of at most `limit` units with the matching slices
/// of the gold tags.
pub fn make_instances(
    sentences: &[Sentence],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for s in sentences {
        let stream = stream_units(s, config.scheme);
        let gold = encode_tags(s, config.scheme)?.indices();
        for (units, tags) in chop(&stream, config.length_limit)?
            .into_iter()
            .zip(chop(&gold, config.length_limit)?)
        {
            out.push(Instance {
                ids: vocab.sentence_ids(units),
                gold: tags.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Segment F1 of `params` on `dev` at the level matching the tag scheme.
pub fn evaluate(
    params: &Params,
    vocab: &Vocabulary,
    config: &TrainConfig,
    dev: &[Sentence],
) -> Result<f64> {
    let seg = Segmenter::single(params, vocab, config.scheme, config.length_limit);
    let pred = seg.segment_all(dev)?;
    Ok(segment_prf(dev, &pred, config.level())?.f1)
}

pub fn train(config: &TrainConfig, train: &[Sentence], dev: &[Sentence]) -> Result<Checkpoint> {
    train_with_log(config, train, dev, |_| {})
}

/// Trains for `config.epochs` epochs and returns the parameters of the best
/// dev epoch among those numbered at least `min_best_epoch` (earlier epoch
/// on ties). `on_epoch` sees every epoch record as it is produced.
pub fn train_with_log(
    config: &TrainConfig,
    train: &[Sentence],
    dev: &[Sentence],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let streams: Vec<Vec<String>> = train
        .iter()
        .map(|s| stream_units(s, config.scheme))
        .collect();
    let vocab = Vocabulary::build(streams.iter().map(Vec::as_slice))?;
    let instances = make_instances(train, &vocab, config)?;
    let lengths: Vec<usize> = instances.iter().map(|i| i.ids.len()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Params::random(config.model_dims(&vocab), &mut rng);
    let mut opt = OptimizerState::new(&params);
    let first_selectable = config.min_best_epoch.min(config.epochs);

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Params)> = None;
    let snapshot = |params: &Params, log: &[EpochRecord], best: &Option<(usize, f64, Params)>| {
        let (best_epoch, best_dev_f1, p) = match best {
            Some((e, f, p)) => (*e, *f, p.clone()),
            None => {
                let last = log.last()?;
                (last.epoch, last.dev_f1, params.clone())
            }
        };
        Some(Box::new(Checkpoint {
            config: config.clone(),
            vocab: vocab.clone(),
            params: p,
            best_epoch,
            best_dev_f1,
            log: log.to_vec(),
        }))
    };

    for epoch in 1..=config.epochs {
        let lr = learning_rate(epoch, config.lr0, config.decay)?;
        let batches = make_batches(&lengths, config.batch, &mut rng);
        let mut total = 0.0;
        let mut last_good = params.clone();
        for batch in &batches {
            let items: Vec<Instance> = batch.iter().map(|&i| instances[i].clone()).collect();
            let mut dropout = Dropout {
                rate: config.dropout,
                rng: &mut rng,
            };
            let step = compute_gradients(&items, &params, Some(&mut dropout)).and_then(
                |(loss, mut grads)| {
                    clip_gradients(&mut grads, config.clip)?;
                    Ok((loss, grads))
                },
            );
            let (loss, grads) = match step {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { .. } | Error::NonFiniteGradient) => {
                    return Err(Error::NonFiniteLoss {
                        last_good: snapshot(&last_good, &log, &best),
                    })
                }
                Err(e) => return Err(e),
            };
            adagrad_step(&mut params, &grads, &mut opt, lr)?;
            if !params.is_finite() {
                return Err(Error::NonFiniteLoss {
                    last_good: snapshot(&last_good, &log, &best),
                });
            }
            last_good.clone_from(&params);
            total += loss * items.len() as f64;
        }
        let loss = total / instances.len() as f64;
        let dev_f1 = evaluate(&params, &vocab, config, dev)?;
        let record = EpochRecord {
            epoch,
            lr,
            loss,
            dev_f1,
        };
        on_epoch(&record);
        log.push(record);
        if epoch >= first_selectable && best.as_ref().is_none_or(|(_, f, _)| dev_f1 > *f) {
            best = Some((epoch, dev_f1, params.clone()));
        }
    }
    let (best_epoch, best_dev_f1, params) = best.expect("at least one selectable epoch");
    Ok(Checkpoint {
        config: config.clone(),
        vocab,
        params,
        best_epoch,
        best_dev_f1,
        log,
    })
}

/// Independent training runs that differ only in their seed.
pub fn train_ensemble(
    config: &TrainConfig,
    train_set: &[Sentence],
    dev: &[Sentence],
    seeds: &[u64],
) -> Result<Vec<Checkpoint>> {
    if seeds.is_empty() {
        return Err(Error::Config("no ensemble seeds".into()));
    }
    let distinct: HashSet<_> = seeds.iter().collect();
    if distinct.len() != seeds.len() {
        return Err(Error::DuplicateSeeds);
    }
    seeds
        .par_iter()
        .map(|&seed| {
            let c = TrainConfig {
                seed,
                ..config.clone()
            };
            train(&c, train_set, dev)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_word_line;
    use rand::Rng;

    #[test]
    fn schedule() {
        assert_eq!(learning_rate(1, 0.1, 0.05).unwrap(), 0.1);
        assert!((learning_rate(2, 0.1, 0.05).unwrap() - 0.095_238_095_238_095_24).abs() < 1e-16);
        assert!((learning_rate(11, 0.1, 0.05).unwrap() - 0.1 / 1.5).abs() < 1e-16);
        assert!(matches!(
            learning_rate(0, 0.1, 0.05),
            Err(Error::InvalidEpoch(0))
        ));
        let rates: Vec<f64> = (1..=30)
            .map(|t| learning_rate(t, 0.1, 0.05).unwrap())
            .collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]));
    }

    fn tiny_params(seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Params::random(
            ModelDims {
                vocab: (3, 3, 3),
                embed: (2, 2, 2),
                state: 2,
                tags: 4,
            },
            &mut rng,
        )
    }

    #[test]
    fn clipping() {
        let mut g = tiny_params(0).zeros_like();
        g.transitions[[0, 0]] = 6.0;
        g.transitions[[1, 1]] = 8.0;
        assert_eq!(clip_gradients(&mut g, 5.0).unwrap(), 10.0);
        assert_eq!(g.transitions[[0, 0]], 3.0);
        assert_eq!(g.transitions[[1, 1]], 4.0);

        let mut g = tiny_params(0).zeros_like();
        g.projection.b[[0, 1]] = 3.0;
        let before = g.clone();
        clip_gradients(&mut g, 5.0).unwrap();
        assert_eq!(g, before);

        let mut z = tiny_params(0).zeros_like();
        let before = z.clone();
        assert_eq!(clip_gradients(&mut z, 5.0).unwrap(), 0.0);
        assert_eq!(z, before);

        z.transitions[[0, 0]] = f64::NAN;
        assert!(matches!(
            clip_gradients(&mut z, 5.0),
            Err(Error::NonFiniteGradient)
        ));
    }

    #[test]
    fn adagrad() {
        let mut p = tiny_params(1);
        let start = p.clone();
        let mut state = OptimizerState::new(&p);
        let mut g = p.zeros_like();
        g.transitions[[0, 1]] = 1.0;
        adagrad_step(&mut p, &g, &mut state, 0.1).unwrap();
        let d1 = p.transitions[[0, 1]] - start.transitions[[0, 1]];
        assert!((d1 + 0.1).abs() < 1e-6);
        // untouched entries stay put, accumulators too
        assert_eq!(p.transitions[[0, 0]], start.transitions[[0, 0]]);
        assert_eq!(state.accumulators.transitions[[0, 0]], 0.0);
        let mid = p.transitions[[0, 1]];
        adagrad_step(&mut p, &g, &mut state, 0.1).unwrap();
        let d2 = p.transitions[[0, 1]] - mid;
        assert!(d2.abs() < d1.abs());
        assert_eq!(state.accumulators.transitions[[0, 1]], 2.0);

        let other = tiny_params(1).zeros_like();
        let mut wrong = Params::zeros(ModelDims {
            vocab: (4, 3, 3),
            ..other.dims()
        });
        assert!(adagrad_step(&mut wrong, &other, &mut state, 0.1).is_err());
    }

    #[test]
    fn batches_cover_every_instance_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lengths: Vec<usize> = (0..137).map(|_| rng.gen_range(1..60)).collect();
        let batches = make_batches(&lengths, 10, &mut rng);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..137).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.len() <= 10);
            let bucket = (lengths[b[0]] - 1) / BUCKET_WIDTH;
            assert!(b.iter().all(|&i| (lengths[i] - 1) / BUCKET_WIDTH == bucket));
        }
    }

    #[test]
    fn config_text() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_text(&c.to_string()).unwrap(), c);
        let c = TrainConfig::from_text("# override\nstate = 8\nscheme=biesx\nunit_mode=true\n")
            .unwrap();
        assert_eq!(c.state, 8);
        assert_eq!(c.scheme, TagScheme::Biesx);
        assert!(c.unit_mode);
        assert!(TrainConfig::from_text("nope=1").is_err());
        assert!(TrainConfig::from_text("state").is_err());
        let bad = TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn chopped_instances_slice_gold() {
        let s = parse_word_line("abc de f", false).unwrap();
        let v = Vocabulary::build([s.units.as_slice()]).unwrap();
        let c = TrainConfig {
            length_limit: 4,
            ..TrainConfig::default()
        };
        let inst = make_instances(std::slice::from_ref(&s), &v, &c).unwrap();
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[0].gold, vec![0, 1, 2, 0]); // B I E B
        assert_eq!(inst[1].gold, vec![2, 3]); // E S
    }

    #[test]
    fn duplicate_seeds() {
        let s = vec![parse_word_line("ab c", false).unwrap()];
        assert!(matches!(
            train_ensemble(&TrainConfig::default(), &s, &s, &[1, 2, 1, 4]),
            Err(Error::DuplicateSeeds)
        ));
    }

    #[test]
    fn empty_corpora() {
        let s = vec![parse_word_line("ab c", false).unwrap()];
        assert!(matches!(
            train(&TrainConfig::default(), &[], &s),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            train(&TrainConfig::default(), &s, &[]),
            Err(Error::EmptyCorpus)
        ));
    }
}
