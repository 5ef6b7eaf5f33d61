//! Bidirectional GRU encoder, emission projection and hand-written
//! reverse-mode gradients for the whole network.
//!
//! The GRU follows `h = z * h_prev + (1 - z) * h~` with
//! `z = sigmoid(W_z x + U_z h_prev + b_z)`, `r = sigmoid(W_r x + U_r h_prev + b_r)`
//! and `h~ = tanh(W_h x + U_h (r * h_prev) + b_h)`. The three input matrices
//! are stored side by side in one `D x 3H` matrix (column blocks z, r, h~),
//! the z and r recurrent matrices in one `H x 2H` matrix.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;

use crate::crf::{column_sums, ScoreLattice};
use crate::error::{Error, Result};
use crate::features::{glorot_uniform, EmbeddingTables, NGramIds};

/// Sizes of every parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Rows of the unigram, bigram and trigram tables.
    pub vocab: (usize, usize, usize),
    /// Widths of the unigram, bigram and trigram vectors.
    pub embed: (usize, usize, usize),
    pub state: usize,
    pub tags: usize,
}

impl ModelDims {
    pub fn input(&self) -> usize {
        self.embed.0 + self.embed.1 + self.embed.2
    }
}

/// One direction of the GRU.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    /// `D x 3H` input weights for z, r and h~.
    pub w: Array2<f64>,
    /// `H x 2H` recurrent weights for z and r.
    pub u_zr: Array2<f64>,
    /// `H x H` recurrent weights for h~, applied to `r * h_prev`.
    pub u_h: Array2<f64>,
    /// `1 x 3H` biases.
    pub b: Array2<f64>,
}

impl GruWeights {
    pub fn zeros(input: usize, state: usize) -> Self {
        GruWeights {
            w: Array2::zeros((input, 3 * state)),
            u_zr: Array2::zeros((state, 2 * state)),
            u_h: Array2::zeros((state, state)),
            b: Array2::zeros((1, 3 * state)),
        }
    }

    /// Glorot-uniform matrices, initialised per gate; zero biases.
    pub fn random<R: Rng>(input: usize, state: usize, rng: &mut R) -> Self {
        let gates: Vec<_> = (0..3).map(|_| glorot_uniform(input, state, rng)).collect();
        let rec: Vec<_> = (0..3).map(|_| glorot_uniform(state, state, rng)).collect();
        GruWeights {
            w: concatenate(
                Axis(1),
                &[gates[0].view(), gates[1].view(), gates[2].view()],
            )
            .expect("equal heights")
            .as_standard_layout()
            .into_owned(),
            u_zr: concatenate(Axis(1), &[rec[0].view(), rec[1].view()])
                .expect("equal heights")
                .as_standard_layout()
                .into_owned(),
            u_h: rec[2].clone(),
            b: Array2::zeros((1, 3 * state)),
        }
    }

    pub fn state(&self) -> usize {
        self.u_h.nrows()
    }

    pub fn input(&self) -> usize {
        self.w.nrows()
    }

    fn check(&self) -> Result<()> {
        let (d, h) = (self.input(), self.state());
        if self.w.dim() != (d, 3 * h)
            || self.u_zr.dim() != (h, 2 * h)
            || self.u_h.dim() != (h, h)
            || self.b.dim() != (1, 3 * h)
        {
            return Err(Error::ShapeMismatch(
                "inconsistent GRU weight shapes".into(),
            ));
        }
        Ok(())
    }
}

/// Output layer mapping `2H` features to `K` emission scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

/// Every trainable parameter of the tagger. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embeddings: EmbeddingTables,
    pub forward: GruWeights,
    pub backward: GruWeights,
    pub projection: ProjectionWeights,
    pub transitions: Array2<f64>,
}

pub const PARAM_NAMES: [&str; 14] = [
    "emb.uni",
    "emb.bi",
    "emb.tri",
    "fwd.w",
    "fwd.u_zr",
    "fwd.u_h",
    "fwd.b",
    "bwd.w",
    "bwd.u_zr",
    "bwd.u_h",
    "bwd.b",
    "proj.w",
    "proj.b",
    "crf.transitions",
];

impl Params {
    pub fn zeros(dims: ModelDims) -> Self {
        let d = dims.input();
        Params {
            embeddings: EmbeddingTables::zeros(dims.vocab, dims.embed),
            forward: GruWeights::zeros(d, dims.state),
            backward: GruWeights::zeros(d, dims.state),
            projection: ProjectionWeights {
                w: Array2::zeros((2 * dims.state, dims.tags)),
                b: Array2::zeros((1, dims.tags)),
            },
            transitions: Array2::zeros((dims.tags, dims.tags)),
        }
    }

    /// Glorot-uniform initialisation for every matrix, embedding tables and
    /// transitions included; biases start at zero.
    pub fn random<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        let d = dims.input();
        let embeddings = EmbeddingTables::random(dims.vocab, dims.embed, rng);
        let forward = GruWeights::random(d, dims.state, rng);
        let backward = GruWeights::random(d, dims.state, rng);
        let projection = ProjectionWeights {
            w: glorot_uniform(2 * dims.state, dims.tags, rng),
            b: Array2::zeros((1, dims.tags)),
        };
        let transitions = glorot_uniform(dims.tags, dims.tags, rng);
        Params {
            embeddings,
            forward,
            backward,
            projection,
            transitions,
        }
    }

    pub fn dims(&self) -> ModelDims {
        let e = &self.embeddings;
        ModelDims {
            vocab: (e.uni.nrows(), e.bi.nrows(), e.tri.nrows()),
            embed: (e.uni.ncols(), e.bi.ncols(), e.tri.ncols()),
            state: self.forward.state(),
            tags: self.transitions.nrows(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params::zeros(self.dims())
    }

    /// Parameter groups in [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> [&Array2<f64>; 14] {
        [
            &self.embeddings.uni,
            &self.embeddings.bi,
            &self.embeddings.tri,
            &self.forward.w,
            &self.forward.u_zr,
            &self.forward.u_h,
            &self.forward.b,
            &self.backward.w,
            &self.backward.u_zr,
            &self.backward.u_h,
            &self.backward.b,
            &self.projection.w,
            &self.projection.b,
            &self.transitions,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 14] {
        [
            &mut self.embeddings.uni,
            &mut self.embeddings.bi,
            &mut self.embeddings.tri,
            &mut self.forward.w,
            &mut self.forward.u_zr,
            &mut self.forward.u_h,
            &mut self.forward.b,
            &mut self.backward.w,
            &mut self.backward.u_zr,
            &mut self.backward.u_h,
            &mut self.backward.b,
            &mut self.projection.w,
            &mut self.projection.b,
            &mut self.transitions,
        ]
    }

    /// Reassembles parameters from named arrays, checking every shape.
    pub fn from_named(mut named: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let mut take = |name: &str| -> Result<Array2<f64>> {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::CorruptFile(format!("missing parameter {name}")))?;
            Ok(named.swap_remove(pos).1)
        };
        let mut groups = PARAM_NAMES
            .iter()
            .map(|n| take(n))
            .collect::<Result<Vec<_>>>()?;
        groups.reverse();
        let mut next = || groups.pop().expect("one array per name");
        let embeddings = EmbeddingTables {
            uni: next(),
            bi: next(),
            tri: next(),
        };
        let mut gru = || GruWeights {
            w: next(),
            u_zr: next(),
            u_h: next(),
            b: next(),
        };
        let forward = gru();
        let backward = gru();
        let projection = ProjectionWeights {
            w: next(),
            b: next(),
        };
        let params = Params {
            embeddings,
            forward,
            backward,
            projection,
            transitions: next(),
        };
        let expected = Params::zeros(params.dims());
        for ((name, a), b) in PARAM_NAMES
            .iter()
            .zip(params.tensors())
            .zip(expected.tensors())
        {
            if a.dim() != b.dim() {
                return Err(Error::CorruptFile(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    a.dim(),
                    b.dim()
                )));
            }
        }
        Ok(params)
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += a * m` where `a` has few rows. Each row of `m` is streamed once
/// for the whole batch.
fn rows_matmul_acc(a: ArrayView2<f64>, m: &Array2<f64>, mut out: ArrayViewMut2<f64>) {
    let n = m.ncols();
    let md = m.as_slice().expect("standard layout");
    let a_rows: Vec<&[f64]> = a
        .outer_iter()
        .map(|r| r.to_slice().expect("contiguous rows"))
        .collect();
    let mut o_rows: Vec<&mut [f64]> = out
        .outer_iter_mut()
        .map(|r| r.into_slice().expect("contiguous rows"))
        .collect();
    for i in 0..m.nrows() {
        let row = &md[i * n..(i + 1) * n];
        for (ar, o) in a_rows.iter().zip(o_rows.iter_mut()) {
            let ai = ar[i];
            if ai == 0.0 {
                continue;
            }
            for (o, &r) in o.iter_mut().zip(row) {
                *o += ai * r;
            }
        }
    }
}

/// `out += a * m^T` where `a` has few rows.
fn rows_matmul_t_acc(a: ArrayView2<f64>, m: &Array2<f64>, mut out: ArrayViewMut2<f64>) {
    let n = m.ncols();
    let md = m.as_slice().expect("standard layout");
    let a_rows: Vec<&[f64]> = a
        .outer_iter()
        .map(|r| r.to_slice().expect("contiguous rows"))
        .collect();
    let mut o_rows: Vec<&mut [f64]> = out
        .outer_iter_mut()
        .map(|r| r.into_slice().expect("contiguous rows"))
        .collect();
    for i in 0..m.nrows() {
        let row = &md[i * n..(i + 1) * n];
        for (ar, o) in a_rows.iter().zip(o_rows.iter_mut()) {
            o[i] += ar.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// Activations of one GRU pass over a time-major batch (`T x B x .`),
/// kept for the backward pass.
struct GruTrace {
    x: Array3<f64>,
    h_prev: Array3<f64>,
    z: Array3<f64>,
    r: Array3<f64>,
    c: Array3<f64>,
    rh: Array3<f64>,
    h: Array3<f64>,
}

/// Runs the GRU over `x` (`T x B x D`) from the initial states `h0` (`B x H`).
/// Sequences shorter than `T` are padded at the end; padded steps never
/// influence earlier outputs.
fn gru_forward(w: &GruWeights, x: Array3<f64>, h0: ArrayView2<f64>) -> GruTrace {
    let (steps, batch, d) = x.dim();
    let h = w.state();
    let flat = x
        .view()
        .into_shape_with_order((steps * batch, d))
        .expect("standard layout");
    let xw = (flat.dot(&w.w) + &w.b)
        .into_shape_with_order((steps, batch, 3 * h))
        .expect("standard layout");
    let shape = (steps, batch, h);
    let mut tr = GruTrace {
        x,
        h_prev: Array3::zeros(shape),
        z: Array3::zeros(shape),
        r: Array3::zeros(shape),
        c: Array3::zeros(shape),
        rh: Array3::zeros(shape),
        h: Array3::zeros(shape),
    };
    let mut prev = h0.to_owned();
    for t in 0..steps {
        let mut zr = xw.slice(s![t, .., ..2 * h]).to_owned();
        rows_matmul_acc(prev.view(), &w.u_zr, zr.view_mut());
        zr.mapv_inplace(sigmoid);
        let z = zr.slice(s![.., ..h]);
        let r = zr.slice(s![.., h..]);
        let rh = &r * &prev;
        let mut cand = xw.slice(s![t, .., 2 * h..]).to_owned();
        rows_matmul_acc(rh.view(), &w.u_h, cand.view_mut());
        cand.mapv_inplace(f64::tanh);
        tr.h_prev.slice_mut(s![t, .., ..]).assign(&prev);
        Zip::from(&mut prev)
            .and(&z)
            .and(&cand)
            .for_each(|p, &z, &c| *p = z * *p + (1.0 - z) * c);
        tr.z.slice_mut(s![t, .., ..]).assign(&z);
        tr.r.slice_mut(s![t, .., ..]).assign(&r);
        tr.c.slice_mut(s![t, .., ..]).assign(&cand);
        tr.rh.slice_mut(s![t, .., ..]).assign(&rh);
        tr.h.slice_mut(s![t, .., ..]).assign(&prev);
    }
    tr
}

/// Backpropagates `d_out` (`T x B x H`, gradient w.r.t. every output state)
/// through one GRU pass. Weight gradients are accumulated into `g`; returns
/// the gradient w.r.t. the inputs (`T x B x D`). Padded steps must carry a
/// zero output gradient.
fn flat(a: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (t, b, n) = a.dim();
    a.view()
        .into_shape_with_order((t * b, n))
        .expect("standard layout")
}

fn gru_backward(
    w: &GruWeights,
    tr: &GruTrace,
    d_out: &Array3<f64>,
    g: &mut GruWeights,
) -> Array3<f64> {
    let (steps, batch, d) = tr.x.dim();
    let h = w.state();
    let mut dg = Array3::<f64>::zeros((steps, batch, 3 * h));
    let mut carry = Array2::<f64>::zeros((batch, h));
    for t in (0..steps).rev() {
        let z = tr.z.slice(s![t, .., ..]);
        let r = tr.r.slice(s![t, .., ..]);
        let c = tr.c.slice(s![t, .., ..]);
        let hp = tr.h_prev.slice(s![t, .., ..]);
        let dh = &d_out.slice(s![t, .., ..]) + &carry;
        let mut dgt = dg.slice_mut(s![t, .., ..]);
        for b in 0..batch {
            for j in 0..h {
                let (zv, cv, dhv) = (z[[b, j]], c[[b, j]], dh[[b, j]]);
                dgt[[b, j]] = dhv * (hp[[b, j]] - cv) * zv * (1.0 - zv);
                dgt[[b, 2 * h + j]] = dhv * (1.0 - zv) * (1.0 - cv * cv);
            }
        }
        carry = &dh * &z;
        let mut d_rh = Array2::<f64>::zeros((batch, h));
        rows_matmul_t_acc(dgt.slice(s![.., 2 * h..]), &w.u_h, d_rh.view_mut());
        for b in 0..batch {
            for j in 0..h {
                let rv = r[[b, j]];
                dgt[[b, h + j]] = d_rh[[b, j]] * hp[[b, j]] * rv * (1.0 - rv);
                carry[[b, j]] += d_rh[[b, j]] * rv;
            }
        }
        rows_matmul_t_acc(dgt.slice(s![.., ..2 * h]), &w.u_zr, carry.view_mut());
    }
    let dg2 = flat(&dg);
    general_mat_mul(1.0, &flat(&tr.x).t(), &dg2, 1.0, &mut g.w);
    g.b += &column_sums(&dg2.to_owned());
    general_mat_mul(
        1.0,
        &flat(&tr.h_prev).t(),
        &dg2.slice(s![.., ..2 * h]),
        1.0,
        &mut g.u_zr,
    );
    general_mat_mul(
        1.0,
        &flat(&tr.rh).t(),
        &dg2.slice(s![.., 2 * h..]),
        1.0,
        &mut g.u_h,
    );
    dg2.dot(&w.w.t())
        .into_shape_with_order((steps, batch, d))
        .expect("standard layout")
}

/// One GRU transition.
pub fn gru_step(x: &Array1<f64>, h_prev: &Array1<f64>, w: &GruWeights) -> Result<Array1<f64>> {
    w.check()?;
    let h = w.state();
    if x.len() != w.input() || h_prev.len() != h {
        return Err(Error::ShapeMismatch(format!(
            "gru_step with input {} and state {} for weights {}x{}",
            x.len(),
            h_prev.len(),
            w.input(),
            h
        )));
    }
    let x = x
        .clone()
        .into_shape_with_order((1, 1, w.input()))
        .expect("vector");
    let trace = gru_forward(w, x, h_prev.view().insert_axis(Axis(0)));
    Ok(trace.h.slice(s![0, 0, ..]).to_owned())
}

/// Inverted dropout mask: kept entries are scaled by `1 / (1 - rate)`.
fn dropout_mask<R: Rng>(shape: (usize, usize), rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < keep { scale } else { 0.0 })
}

/// Dropout applied during training.
pub struct Dropout<'r, R> {
    pub rate: f64,
    pub rng: &'r mut R,
}

/// Packs sequences (`L_b x D` each) into a zero-padded time-major tensor.
/// With `reverse`, every sequence is reversed within its own length.
fn pack(seqs: &[Array2<f64>], width: usize, reverse: bool) -> Array3<f64> {
    let steps = seqs.iter().map(|s| s.nrows()).max().unwrap_or(0);
    let mut out = Array3::zeros((steps, seqs.len(), width));
    for (b, s) in seqs.iter().enumerate() {
        let src = if reverse {
            s.slice(s![..;-1, ..])
        } else {
            s.view()
        };
        out.slice_mut(s![..s.nrows(), b, ..]).assign(&src);
    }
    out
}

/// Inverse of [`pack`] for sequence `b` of length `len`.
fn unpack(t: &Array3<f64>, b: usize, len: usize, reverse: bool) -> ArrayView2<'_, f64> {
    let v = t.slice(s![..len, b, ..]);
    if reverse {
        v.slice_move(s![..;-1, ..])
    } else {
        v
    }
}

struct EncoderTrace {
    lengths: Vec<usize>,
    in_masks: Option<Vec<Array2<f64>>>,
    out_masks: Option<Vec<Array2<f64>>>,
    fwd: GruTrace,
    bwd: GruTrace,
    features: Vec<Array2<f64>>,
}

fn encode_batch<R: Rng>(
    inputs: &[Array2<f64>],
    fwd: &GruWeights,
    bwd: &GruWeights,
    dropout: Option<&mut Dropout<'_, R>>,
) -> Result<EncoderTrace> {
    fwd.check()?;
    bwd.check()?;
    let d = fwd.input();
    if inputs.iter().any(|x| x.ncols() != d) || bwd.input() != d || fwd.state() != bwd.state() {
        return Err(Error::ShapeMismatch(format!(
            "inputs for GRUs over {}/{} inputs",
            fwd.input(),
            bwd.input()
        )));
    }
    let h = fwd.state();
    let lengths: Vec<usize> = inputs.iter().map(|x| x.nrows()).collect();
    let (in_masks, out_masks) = match dropout {
        Some(drop) if drop.rate > 0.0 => {
            let mut ins = Vec::with_capacity(inputs.len());
            let mut outs = Vec::with_capacity(inputs.len());
            for x in inputs {
                ins.push(dropout_mask(x.dim(), drop.rate, drop.rng));
                outs.push(dropout_mask((x.nrows(), 2 * h), drop.rate, drop.rng));
            }
            (Some(ins), Some(outs))
        }
        _ => (None, None),
    };
    let dropped: Vec<Array2<f64>>;
    let xs = match &in_masks {
        Some(m) => {
            dropped = inputs.iter().zip(m).map(|(x, m)| x * m).collect();
            &dropped[..]
        }
        None => inputs,
    };
    let h0 = Array2::zeros((inputs.len(), h));
    let f = gru_forward(fwd, pack(xs, d, false), h0.view());
    let b = gru_forward(bwd, pack(xs, d, true), h0.view());
    let mut features = Vec::with_capacity(inputs.len());
    for (i, &len) in lengths.iter().enumerate() {
        let mut feat = concatenate(
            Axis(1),
            &[unpack(&f.h, i, len, false), unpack(&b.h, i, len, true)],
        )
        .expect("equal lengths")
        .as_standard_layout()
        .into_owned();
        if let Some(m) = &out_masks {
            feat *= &m[i];
        }
        features.push(feat);
    }
    Ok(EncoderTrace {
        lengths,
        in_masks,
        out_masks,
        fwd: f,
        bwd: b,
        features,
    })
}

/// Runs both GRU directions from zero states and concatenates their states
/// per position (`L x 2H`). With dropout, inverted dropout is applied to the
/// inputs and to the concatenated outputs.
pub fn encode_bidirectional<R: Rng>(
    inputs: &Array2<f64>,
    fwd: &GruWeights,
    bwd: &GruWeights,
    dropout: Option<&mut Dropout<'_, R>>,
) -> Result<Array2<f64>> {
    let mut enc = encode_batch(std::slice::from_ref(inputs), fwd, bwd, dropout)?;
    Ok(enc.features.pop().expect("one sequence"))
}

/// `S = features * W + b`.
pub fn emission_scores(features: &Array2<f64>, p: &ProjectionWeights) -> Result<Array2<f64>> {
    if features.ncols() != p.w.nrows() || p.b.dim() != (1, p.w.ncols()) {
        return Err(Error::ShapeMismatch(format!(
            "features of width {} for projection {:?}",
            features.ncols(),
            p.w.dim()
        )));
    }
    Ok(features.dot(&p.w) + &p.b)
}

/// One training example: n-gram ids of every stream position and gold tag indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub ids: Vec<NGramIds>,
    pub gold: Vec<usize>,
}

type NoRng = rand_chacha::ChaCha8Rng;

impl Params {
    /// Emission scores of one sentence without dropout.
    pub fn emissions(&self, ids: &[NGramIds]) -> Result<Array2<f64>> {
        let inputs = self.embeddings.embed_sentence(ids)?;
        let feat = encode_bidirectional::<NoRng>(&inputs, &self.forward, &self.backward, None)?;
        emission_scores(&feat, &self.projection)
    }

    pub fn lattice(&self, ids: &[NGramIds]) -> Result<ScoreLattice> {
        ScoreLattice::new(self.emissions(ids)?, self.transitions.clone())
    }

    /// Adds `scale * d NLL / d params`, summed over `batch`, into `grads` and
    /// returns the unscaled NLL of every instance. The batch is encoded as
    /// one padded tensor.
    pub fn accumulate_gradients<R: Rng>(
        &self,
        batch: &[Instance],
        dropout: Option<&mut Dropout<'_, R>>,
        scale: f64,
        grads: &mut Params,
    ) -> Result<Vec<f64>> {
        let inputs = batch
            .iter()
            .map(|inst| self.embeddings.embed_sentence(&inst.ids))
            .collect::<Result<Vec<_>>>()?;
        let enc = encode_batch(&inputs, &self.forward, &self.backward, dropout)?;
        let h = self.forward.state();
        let steps = enc.lengths.iter().copied().max().unwrap_or(0);
        let mut d_fwd = Array3::zeros((steps, batch.len(), h));
        let mut d_bwd = Array3::zeros((steps, batch.len(), h));
        let mut losses = Vec::with_capacity(batch.len());
        for (b, inst) in batch.iter().enumerate() {
            let features = &enc.features[b];
            let scores = emission_scores(features, &self.projection)?;
            let lattice = ScoreLattice::new(scores, self.transitions.clone())?;
            let crf = lattice.nll_with_gradients(&inst.gold)?;
            if !crf.nll.is_finite() {
                return Err(Error::NonFiniteLoss { last_good: None });
            }
            losses.push(crf.nll);
            let d_s = crf.d_emissions * scale;
            grads.transitions.scaled_add(scale, &crf.d_transitions);
            general_mat_mul(1.0, &features.t(), &d_s, 1.0, &mut grads.projection.w);
            grads.projection.b += &column_sums(&d_s);
            let mut d_feat = d_s.dot(&self.projection.w.t());
            if let Some(m) = &enc.out_masks {
                d_feat *= &m[b];
            }
            let len = enc.lengths[b];
            d_fwd
                .slice_mut(s![..len, b, ..])
                .assign(&d_feat.slice(s![.., ..h]));
            d_bwd
                .slice_mut(s![..len, b, ..])
                .assign(&d_feat.slice(s![..;-1, h..]));
        }
        let d_xf = gru_backward(&self.forward, &enc.fwd, &d_fwd, &mut grads.forward);
        let d_xb = gru_backward(&self.backward, &enc.bwd, &d_bwd, &mut grads.backward);
        for (b, inst) in batch.iter().enumerate() {
            let len = enc.lengths[b];
            let mut d_x = unpack(&d_xf, b, len, false).to_owned();
            d_x += &unpack(&d_xb, b, len, true);
            if let Some(m) = &enc.in_masks {
                d_x *= &m[b];
            }
            grads.embeddings.scatter_add(&inst.ids, &d_x);
        }
        Ok(losses)
    }

    /// Mean NLL over `batch` without dropout.
    pub fn batch_loss(&self, batch: &[Instance]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut total = 0.0;
        for inst in batch {
            total += self.lattice(&inst.ids)?.nll(&inst.gold)?;
        }
        Ok(total / batch.len() as f64)
    }
}

/// Mean batch NLL and its gradient with respect to every parameter.
pub fn compute_gradients<R: Rng>(
    batch: &[Instance],
    params: &Params,
    dropout: Option<&mut Dropout<'_, R>>,
) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let losses = params.accumulate_gradients(batch, dropout, scale, &mut grads)?;
    let loss = losses.iter().sum::<f64>() * scale;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFiniteLoss { last_good: None });
    }
    Ok((loss, grads))
}
