//! The fusion network.
//!
//! A sample flows through four modality projections into a common width,
//! stage-1 fusion (each modality's tokens multiplied element-wise by the other
//! modality's global vector), external-attribute embeddings, and a
//! Transformer encoder over `[CLS, image, text, external]`. Classification
//! heads read the CLS state; an auxiliary caption decoder cross-attends to the
//! encoded image tokens only.

mod checkpoint;
mod config;
mod layers;
mod loss;

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::dataset::{EmbeddedSample, BOS, EOS};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use config::{Ablations, HeadKind, HeadSpec, ModelConfig, DECODER_PRESETS, ENCODER_PRESETS};
pub use layers::ParamSpec;
pub use loss::{combined_loss, LossParts};

use layers::{DecoderLayerIds, EncoderLayerIds, LayoutBuilder, LinearIds};

/// Which part of the fused sequence a token came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Cls = 0,
    Image = 1,
    Text = 2,
    External = 3,
}

const NUM_SEGMENTS: usize = 4;

/// The encoder input `[CLS, image tokens, text tokens, external tokens]`,
/// optionally followed by masked padding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedSequence<T> {
    pub tokens: Matrix<T>,
    pub segments: Vec<Segment>,
    /// `true` marks a padding row.
    pub pad_mask: Vec<bool>,
}

impl<T: Scalar> FusedSequence<T> {
    pub fn assemble(
        cls: &[T],
        fused_image: &Matrix<T>,
        fused_text: &Matrix<T>,
        external: &Matrix<T>,
    ) -> Result<Self> {
        let cls = Matrix::row_vector(cls);
        let tokens = Matrix::concat_rows(&[&cls, fused_image, fused_text, external])?;
        let segments = segment_layout(fused_image.rows(), fused_text.rows(), external.rows());
        let pad_mask = vec![false; segments.len()];
        Ok(Self {
            tokens,
            segments,
            pad_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn count(&self, segment: Segment) -> usize {
        self.segments
            .iter()
            .zip(&self.pad_mask)
            .filter(|&(&s, &pad)| s == segment && !pad)
            .count()
    }

    /// Appends `extra` zero rows flagged as padding.
    pub fn padded(&self, extra: usize) -> Self {
        let zeros = Matrix::zeros(extra, self.tokens.cols());
        let tokens = Matrix::concat_rows(&[&self.tokens, &zeros]).expect("same width");
        let mut segments = self.segments.clone();
        segments.extend(std::iter::repeat_n(Segment::Cls, extra));
        let mut pad_mask = self.pad_mask.clone();
        pad_mask.extend(std::iter::repeat_n(true, extra));
        Self {
            tokens,
            segments,
            pad_mask,
        }
    }
}

fn segment_layout(n_img: usize, n_txt: usize, n_ext: usize) -> Vec<Segment> {
    std::iter::once(Segment::Cls)
        .chain(std::iter::repeat_n(Segment::Image, n_img))
        .chain(std::iter::repeat_n(Segment::Text, n_txt))
        .chain(std::iter::repeat_n(Segment::External, n_ext))
        .collect()
}

/// Positions of the encoder output the caption decoder may attend to:
/// exactly the image tokens.
pub fn cross_attention_mask(segments: &[Segment]) -> Vec<bool> {
    segments.iter().map(|&s| s == Segment::Image).collect()
}

/// Per-modality projections into `d_model`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projections<T> {
    pub image_tokens: Matrix<T>,
    pub image_global: Vec<T>,
    pub text_tokens: Matrix<T>,
    pub text_global: Vec<T>,
}

/// Stage-1 fusion: every image token times the text global vector, every
/// text token times the image global vector, element-wise.
pub fn fuse_stage1<T: Scalar>(p: &Projections<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let d = p.image_global.len();
    if p.text_global.len() != d || p.image_tokens.cols() != d || p.text_tokens.cols() != d {
        return Err(Error::Shape(format!(
            "stage-1 operands disagree on width: image tokens {}, image global {d}, text tokens {}, text global {}",
            p.image_tokens.cols(),
            p.text_tokens.cols(),
            p.text_global.len()
        )));
    }
    Ok((
        p.image_tokens.mul_row_broadcast(&p.text_global),
        p.text_tokens.mul_row_broadcast(&p.image_global),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadScore<T> {
    pub name: String,
    pub kind: HeadKind,
    pub logits: Vec<T>,
    /// Sigmoid per unit for binary and multi-label heads, softmax for
    /// multi-class heads.
    pub probs: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadScores<T>(pub Vec<HeadScore<T>>);

impl<T> HeadScores<T> {
    pub fn get(&self, name: &str) -> Option<&HeadScore<T>> {
        self.0.iter().find(|h| h.name == name)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, HeadScore<T>> {
        self.0.iter()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<T> {
    pub head_scores: HeadScores<T>,
    /// Teacher-forced logits, one row per target position.
    pub caption_logits: Option<Matrix<T>>,
    /// Encoded image tokens (`n_g x d_model`).
    pub fused_image_features: Matrix<T>,
    pub r_cls: Vec<T>,
    /// Encoder input before positional/segment embeddings.
    pub sequence: FusedSequence<T>,
    pub encoder_output: Matrix<T>,
}

/// Output of [`MemeFier::encode`] with the attention maps of every layer.
#[derive(Clone, Debug)]
pub struct Encoded<T> {
    pub tokens: Matrix<T>,
    /// `[layer][head]`, each `len x len`.
    pub attention: Vec<Vec<Matrix<T>>>,
}

/// Output of [`MemeFier::decode_caption`].
#[derive(Clone, Debug)]
pub struct DecodedCaption<T> {
    pub logits: Matrix<T>,
    /// `[layer][head]`, each `prefix_len x n_memory`.
    pub cross_attention: Vec<Vec<Matrix<T>>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterCount {
    pub total: usize,
    pub per_module: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
struct DecoderIds {
    memory: LinearIds,
    token: usize,
    position: usize,
    layers: Vec<DecoderLayerIds>,
    out: LinearIds,
}

#[derive(Clone, Debug)]
struct ModelIds {
    image_token: LinearIds,
    image_global: LinearIds,
    text_token: LinearIds,
    text_global: LinearIds,
    cls: usize,
    external: Option<usize>,
    position: Option<usize>,
    segment: Option<usize>,
    encoder: Vec<EncoderLayerIds>,
    heads: Vec<LinearIds>,
    decoder: Option<DecoderIds>,
}

#[derive(Clone, Debug)]
struct Layout {
    specs: Vec<ParamSpec>,
    ids: ModelIds,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let d = c.d_model;
        let mut b = LayoutBuilder::default();
        let image_token = b.linear("projection.image_token", c.d_img, d);
        let image_global = b.linear("projection.image_global", c.d_img, d);
        let text_token = b.linear("projection.text_token", c.d_txt, d);
        let text_global = b.linear("projection.text_global", c.d_txt, d);
        let cls = b.embedding("cls".into(), 1, d);
        let external = (!c.ablations.no_external).then(|| {
            let rows = c.attribute_vocab_sizes.iter().sum();
            b.embedding("external.table".into(), rows, d)
        });
        let stage2 = !c.ablations.no_stage2;
        let position = stage2.then(|| b.embedding("position.table".into(), c.max_positions, d));
        let segment = stage2.then(|| b.embedding("segment.table".into(), NUM_SEGMENTS, d));
        let encoder = if stage2 {
            (0..c.n_layers)
                .map(|i| b.encoder_layer(&format!("encoder.{i}"), d, c.ff_dim))
                .collect()
        } else {
            Vec::new()
        };
        let heads = c
            .heads
            .iter()
            .map(|h| b.linear(&format!("head.{}", h.name), d, h.kind.units()))
            .collect();
        let decoder = (!c.ablations.no_caption).then(|| {
            let dd = c.decoder_dim;
            DecoderIds {
                memory: b.linear("decoder.memory", d, dd),
                token: b.embedding("decoder.token".into(), c.caption_vocab_size, dd),
                position: b.embedding("decoder.position".into(), c.caption_max_len, dd),
                layers: (0..c.decoder_layers)
                    .map(|i| b.decoder_layer(&format!("decoder.layer{i}"), dd, c.decoder_ff))
                    .collect(),
                out: b.linear("decoder.out", dd, c.caption_vocab_size),
            }
        });
        Layout {
            specs: b.specs,
            ids: ModelIds {
                image_token,
                image_global,
                text_token,
                text_global,
                cls,
                external,
                position,
                segment,
                encoder,
                heads,
                decoder,
            },
        }
    }
}

/// Exact trainable scalar count for a configuration, with a per-module
/// breakdown keyed by the first segment of each parameter name.
pub fn count_parameters(config: &ModelConfig) -> Result<ParameterCount> {
    config.validate()?;
    Ok(tally(&Layout::new(config).specs))
}

fn tally(specs: &[ParamSpec]) -> ParameterCount {
    let mut per_module = BTreeMap::new();
    for s in specs {
        *per_module.entry(s.module().to_string()).or_insert(0) += s.numel();
    }
    ParameterCount {
        total: per_module.values().sum(),
        per_module,
    }
}

/// Dense per-parameter gradients; `None` where a parameter was unused.
pub type Gradients<T> = Vec<Option<Matrix<T>>>;

struct Trace {
    sequence: Var,
    segments: Vec<Segment>,
    encoder_output: Var,
    r_cls: Var,
    image_features: Var,
    head_logits: Vec<Var>,
    caption_logits: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct MemeFier<T> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<Matrix<T>>,
}

impl<T: Scalar> MemeFier<T> {
    /// Builds a model with freshly initialized parameters drawn from
    /// `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = crate::rng::seeded(config.seed, &[0x1417]);
        let params = layout.specs.iter().map(|s| s.sample(&mut rng)).collect();
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    /// Reassembles a model from named tensors in layout order.
    pub fn from_parts(config: ModelConfig, params: Vec<(String, Matrix<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.specs.len() {
            return Err(Error::Input(format!(
                "{} tensors supplied, configuration needs {}",
                params.len(),
                layout.specs.len()
            )));
        }
        let mut values = Vec::with_capacity(params.len());
        for (spec, (name, m)) in layout.specs.iter().zip(params) {
            if spec.name != name || m.shape() != (spec.rows, spec.cols) {
                return Err(Error::Input(format!(
                    "tensor `{name}` {:?} does not match expected `{}` {:?}",
                    m.shape(),
                    spec.name,
                    (spec.rows, spec.cols)
                )));
            }
            values.push(m);
        }
        Ok(Self {
            config,
            layout,
            params: values,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Matrix<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.params
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.layout.specs.iter().position(|s| s.name == name)
    }

    pub fn count_parameters(&self) -> ParameterCount {
        tally(&self.layout.specs)
    }

    pub fn cast<U: Scalar>(&self) -> MemeFier<U> {
        MemeFier {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(Matrix::cast).collect(),
        }
    }

    fn check_sample(&self, s: &EmbeddedSample) -> Result<()> {
        let c = &self.config;
        s.validate(c.d_img, c.d_txt, &c.attribute_vocab_sizes, c.caption_vocab_size.max(1))
            .or_else(|e| match e {
                // Caption ids are irrelevant without a decoder.
                Error::Record { ref reason, .. }
                    if c.ablations.no_caption && reason.starts_with("caption id") =>
                {
                    Ok(())
                }
                other => Err(other),
            })
    }

    fn input_leaves(&self, tape: &mut Tape<'_, T>, s: &EmbeddedSample) -> Result<[Var; 4]> {
        let c = &self.config;
        let to_t = |v: &[f32]| v.iter().map(|&x| T::lit(x as f64)).collect::<Vec<_>>();
        let rows = |r: &[Vec<f32>], d: usize| {
            let flat: Vec<T> = r.iter().flat_map(|row| to_t(row)).collect();
            Matrix::from_vec(r.len(), d, flat)
        };
        Ok([
            tape.leaf(rows(&s.image_patches, c.d_img)?),
            tape.leaf(Matrix::row_vector(&to_t(&s.image_global))),
            tape.leaf(rows(&s.text_tokens, c.d_txt)?),
            tape.leaf(Matrix::row_vector(&to_t(&s.text_global))),
        ])
    }

    fn project_graph(&self, tape: &mut Tape<'_, T>, inputs: [Var; 4]) -> [Var; 4] {
        let ids = &self.layout.ids;
        [
            layers::linear(tape, ids.image_token, inputs[0]),
            layers::linear(tape, ids.image_global, inputs[1]),
            layers::linear(tape, ids.text_token, inputs[2]),
            layers::linear(tape, ids.text_global, inputs[3]),
        ]
    }

    fn external_graph(&self, tape: &mut Tape<'_, T>, codes: &[u32]) -> Result<Option<Var>> {
        let Some(table) = self.layout.ids.external else {
            return Ok(None);
        };
        let sizes = self.config.attribute_vocab_sizes;
        let offsets = [0, sizes[0], sizes[0] + sizes[1]];
        if !codes.len().is_multiple_of(3) {
            return Err(Error::Input(format!(
                "{} external codes is not a multiple of 3",
                codes.len()
            )));
        }
        let mut rows = Vec::with_capacity(codes.len());
        for (i, &code) in codes.iter().enumerate() {
            let slot = i % 3;
            if code as usize >= sizes[slot] {
                return Err(Error::Input(format!(
                    "external code {code} out of range for attribute {slot} (size {})",
                    sizes[slot]
                )));
            }
            rows.push(offsets[slot] + code as usize);
        }
        if rows.is_empty() {
            return Ok(None);
        }
        let t = tape.param(table);
        Ok(Some(tape.gather(t, &rows)))
    }

    /// Adds positional and segment embeddings to the non-padding prefix and
    /// runs the encoder stack.
    fn encoder_graph(
        &self,
        tape: &mut Tape<'_, T>,
        tokens: Var,
        segments: &[Segment],
        pad: &[bool],
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let ids = &self.layout.ids;
        let (Some(position), Some(segment)) = (ids.position, ids.segment) else {
            return Err(Error::Config("encoder is ablated in this configuration".into()));
        };
        let len = segments.len();
        if len > self.config.max_positions {
            return Err(Error::Input(format!(
                "sequence length {len} exceeds max_positions {}",
                self.config.max_positions
            )));
        }
        let n_real = pad.iter().take_while(|&&p| !p).count();
        if pad[n_real..].iter().any(|&p| !p) {
            return Err(Error::Input("padding rows must trail the sequence".into()));
        }
        let pos_table = tape.param(position);
        let seg_table = tape.param(segment);
        let positions: Vec<usize> = (0..n_real).collect();
        let seg_ids: Vec<usize> = segments[..n_real].iter().map(|&s| s as usize).collect();
        let pos = tape.gather(pos_table, &positions);
        let seg = tape.gather(seg_table, &seg_ids);
        let emb = tape.add(pos, seg);
        let mut x = if n_real == len {
            tape.add(tokens, emb)
        } else {
            let real = tape.slice_rows(tokens, 0, n_real);
            let real = tape.add(real, emb);
            let rest = tape.slice_rows(tokens, n_real, len - n_real);
            tape.concat_rows(&[real, rest])
        };
        x = tape.dropout(x);
        let mut maps = Vec::with_capacity(ids.encoder.len());
        for layer in &ids.encoder {
            let (y, probs) = layers::encoder_layer(tape, layer, x, self.config.n_heads, pad);
            x = y;
            maps.push(probs);
        }
        Ok((x, maps))
    }

    fn decoder_graph(
        &self,
        tape: &mut Tape<'_, T>,
        image_features: Var,
        prefix: &[u32],
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let Some(dec) = &self.layout.ids.decoder else {
            return Err(Error::Config("caption decoder is ablated in this configuration".into()));
        };
        let c = &self.config;
        if prefix.is_empty() || prefix[0] != BOS {
            return Err(Error::Input("caption prefix must start with BOS".into()));
        }
        if prefix.len() > c.caption_max_len {
            return Err(Error::Input(format!(
                "caption prefix of {} tokens exceeds max_len {}",
                prefix.len(),
                c.caption_max_len
            )));
        }
        if let Some(&id) = prefix.iter().find(|&&id| id as usize >= c.caption_vocab_size) {
            return Err(Error::Input(format!("caption id {id} outside vocabulary")));
        }
        let memory = layers::linear(tape, dec.memory, image_features);
        let tok = tape.param(dec.token);
        let pos = tape.param(dec.position);
        let ids: Vec<usize> = prefix.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..prefix.len()).collect();
        let te = tape.gather(tok, &ids);
        let pe = tape.gather(pos, &positions);
        let mut x = tape.add(te, pe);
        x = tape.dropout(x);
        let mut cross = Vec::with_capacity(dec.layers.len());
        for layer in &dec.layers {
            let (y, maps) = layers::decoder_layer(tape, layer, x, memory, c.decoder_heads);
            x = y;
            cross.push(maps);
        }
        Ok((layers::linear(tape, dec.out, x), cross))
    }

    fn heads_graph(&self, tape: &mut Tape<'_, T>, r_cls: Var) -> Vec<Var> {
        self.layout
            .ids
            .heads
            .iter()
            .map(|&h| layers::linear(tape, h, r_cls))
            .collect()
    }

    fn trace(&self, tape: &mut Tape<'_, T>, s: &EmbeddedSample) -> Result<Trace> {
        self.check_sample(s)?;
        let ab = self.config.ablations;
        let inputs = self.input_leaves(tape, s)?;
        let [img, img_g, txt, txt_g] = self.project_graph(tape, inputs);
        let (f_img, f_txt) = if ab.no_stage1 {
            (img, txt)
        } else {
            (tape.mul_row(img, txt_g), tape.mul_row(txt, img_g))
        };
        let ext = self.external_graph(tape, &s.external_codes)?;
        let cls = tape.param(self.layout.ids.cls);
        let mut parts = vec![cls, f_img, f_txt];
        parts.extend(ext);
        let n_ext = ext.map_or(0, |e| tape.value(e).rows());
        let segments = segment_layout(s.num_patches(), s.num_text_tokens(), n_ext);
        let sequence = tape.concat_rows(&parts);
        let pad = vec![false; segments.len()];

        let (encoder_output, r_cls, image_features) = if ab.no_stage2 {
            let include: Vec<bool> = pad.iter().map(|p| !p).collect();
            let pooled = tape.masked_mean_rows(sequence, &include);
            (sequence, pooled, f_img)
        } else {
            let (out, _) = self.encoder_graph(tape, sequence, &segments, &pad)?;
            let r_cls = tape.slice_rows(out, 0, 1);
            let mask = cross_attention_mask(&segments);
            let start = mask.iter().position(|&m| m).unwrap_or(1);
            let count = mask.iter().filter(|&&m| m).count();
            let image = tape.slice_rows(out, start, count);
            (out, r_cls, image)
        };
        let head_logits = self.heads_graph(tape, r_cls);
        let caption_logits = if ab.no_caption {
            None
        } else {
            if s.caption_ids.len() < 2 {
                return Err(Error::Record {
                    id: s.id.clone(),
                    reason: "caption needs at least BOS and EOS".into(),
                });
            }
            let prefix = &s.caption_ids[..s.caption_ids.len() - 1];
            Some(self.decoder_graph(tape, image_features, prefix)?.0)
        };
        Ok(Trace {
            sequence,
            segments,
            encoder_output,
            r_cls,
            image_features,
            head_logits,
            caption_logits,
        })
    }

    fn head_scores(&self, logits: &[Vec<T>]) -> HeadScores<T> {
        HeadScores(
            self.config
                .heads
                .iter()
                .zip(logits)
                .map(|(h, z)| HeadScore {
                    name: h.name.clone(),
                    kind: h.kind.clone(),
                    logits: z.clone(),
                    probs: activate(&h.kind, z),
                })
                .collect(),
        )
    }

    pub fn project_modalities(&self, s: &EmbeddedSample) -> Result<Projections<T>> {
        self.check_sample(s)?;
        let mut tape = Tape::new(&self.params);
        let inputs = self.input_leaves(&mut tape, s)?;
        let [a, b, c, d] = self.project_graph(&mut tape, inputs);
        Ok(Projections {
            image_tokens: tape.value(a).clone(),
            image_global: tape.value(b).data().to_vec(),
            text_tokens: tape.value(c).clone(),
            text_global: tape.value(d).data().to_vec(),
        })
    }

    /// Embedding rows for `(gender, race, age)` code triples; `0 x d_model`
    /// without persons.
    pub fn embed_external(&self, codes: &[u32]) -> Result<Matrix<T>> {
        if self.layout.ids.external.is_none() {
            return Err(Error::Config("external knowledge is ablated in this configuration".into()));
        }
        let mut tape = Tape::new(&self.params);
        Ok(match self.external_graph(&mut tape, codes)? {
            Some(v) => tape.value(v).clone(),
            None => Matrix::zeros(0, self.config.d_model),
        })
    }

    pub fn cls_token(&self) -> &[T] {
        self.params[self.layout.ids.cls].data()
    }

    /// Runs the encoder stack over an assembled sequence.
    pub fn encode(&self, seq: &FusedSequence<T>) -> Result<Encoded<T>> {
        if seq.tokens.cols() != self.config.d_model {
            return Err(Error::Shape(format!(
                "sequence width {} vs d_model {}",
                seq.tokens.cols(),
                self.config.d_model
            )));
        }
        let mut tape = Tape::new(&self.params);
        let x = tape.leaf(seq.tokens.clone());
        let (out, maps) = self.encoder_graph(&mut tape, x, &seq.segments, &seq.pad_mask)?;
        Ok(Encoded {
            tokens: tape.value(out).clone(),
            attention: maps
                .into_iter()
                .map(|layer| layer.into_iter().map(|p| tape.value(p).clone()).collect())
                .collect(),
        })
    }

    pub fn classify(&self, r_cls: &[T]) -> Result<HeadScores<T>> {
        if r_cls.len() != self.config.d_model {
            return Err(Error::Shape(format!(
                "r_cls has {} values, d_model is {}",
                r_cls.len(),
                self.config.d_model
            )));
        }
        let mut tape = Tape::new(&self.params);
        let x = tape.leaf(Matrix::row_vector(r_cls));
        let logits: Vec<Vec<T>> = self
            .heads_graph(&mut tape, x)
            .into_iter()
            .map(|v| tape.value(v).data().to_vec())
            .collect();
        Ok(self.head_scores(&logits))
    }

    /// Teacher-forced decoder logits for `prefix` (which starts with BOS),
    /// one row per prefix position.
    pub fn decode_caption(&self, image_features: &Matrix<T>, prefix: &[u32]) -> Result<DecodedCaption<T>> {
        if image_features.cols() != self.config.d_model || image_features.rows() == 0 {
            return Err(Error::Shape(format!(
                "image features {:?} vs d_model {}",
                image_features.shape(),
                self.config.d_model
            )));
        }
        let mut tape = Tape::new(&self.params);
        let mem = tape.leaf(image_features.clone());
        let (logits, cross) = self.decoder_graph(&mut tape, mem, prefix)?;
        Ok(DecodedCaption {
            logits: tape.value(logits).clone(),
            cross_attention: cross
                .into_iter()
                .map(|layer| layer.into_iter().map(|p| tape.value(p).clone()).collect())
                .collect(),
        })
    }

    /// Greedy caption for a sample, `BOS ... EOS` (EOS omitted if the length
    /// limit is reached first).
    pub fn greedy_caption(&self, s: &EmbeddedSample) -> Result<Vec<u32>> {
        let features = self.forward(s)?.fused_image_features;
        let mut ids = vec![BOS];
        while ids.len() < self.config.caption_max_len {
            let logits = self.decode_caption(&features, &ids)?.logits;
            let last = logits.row(logits.rows() - 1);
            let next = last
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map_or(EOS, |(i, _)| i as u32);
            ids.push(next);
            if next == EOS {
                break;
            }
        }
        Ok(ids)
    }

    /// Inference pass without dropout.
    pub fn forward(&self, s: &EmbeddedSample) -> Result<ModelOutput<T>> {
        let mut tape = Tape::new(&self.params);
        let t = self.trace(&mut tape, s)?;
        let logits: Vec<Vec<T>> = t
            .head_logits
            .iter()
            .map(|&v| tape.value(v).data().to_vec())
            .collect();
        let pad_mask = vec![false; t.segments.len()];
        Ok(ModelOutput {
            head_scores: self.head_scores(&logits),
            caption_logits: t.caption_logits.map(|v| tape.value(v).clone()),
            fused_image_features: tape.value(t.image_features).clone(),
            r_cls: tape.value(t.r_cls).data().to_vec(),
            sequence: FusedSequence {
                tokens: tape.value(t.sequence).clone(),
                segments: t.segments,
                pad_mask,
            },
            encoder_output: tape.value(t.encoder_output).clone(),
        })
    }

    /// Head scores and loss of one sample in a single inference pass.
    pub fn score(&self, s: &EmbeddedSample) -> Result<(HeadScores<T>, LossParts)> {
        let mut tape = Tape::new(&self.params);
        let t = self.trace(&mut tape, s)?;
        let logits: Vec<Vec<T>> = t
            .head_logits
            .iter()
            .map(|&v| tape.value(v).data().to_vec())
            .collect();
        let vars = loss::loss_graph(&mut tape, &self.config, &t.head_logits, t.caption_logits, s)?;
        Ok((self.head_scores(&logits), vars.parts(&tape)))
    }

    /// Loss of one sample without dropout.
    pub fn loss(&self, s: &EmbeddedSample) -> Result<LossParts> {
        let mut tape = Tape::new(&self.params);
        let t = self.trace(&mut tape, s)?;
        let vars = loss::loss_graph(&mut tape, &self.config, &t.head_logits, t.caption_logits, s)?;
        Ok(vars.parts(&tape))
    }

    /// Loss and parameter gradients of one sample. Dropout is active when a
    /// generator is supplied.
    pub fn loss_and_gradients(
        &self,
        s: &EmbeddedSample,
        dropout_rng: Option<ChaCha8Rng>,
    ) -> Result<(LossParts, Gradients<T>)> {
        let mut tape = Tape::new(&self.params);
        if let Some(rng) = dropout_rng {
            tape = tape.with_dropout(self.config.dropout, rng);
        }
        let t = self.trace(&mut tape, s)?;
        let vars = loss::loss_graph(&mut tape, &self.config, &t.head_logits, t.caption_logits, s)?;
        let parts = vars.parts(&tape);
        Ok((parts, tape.backward(vars.total)))
    }
}

pub(crate) fn activate<T: Scalar>(kind: &HeadKind, z: &[T]) -> Vec<T> {
    match kind {
        HeadKind::Binary | HeadKind::Multilabel { .. } => {
            z.iter().map(|&v| crate::autodiff::sigmoid(v)).collect()
        }
        HeadKind::Multiclass { .. } => {
            let max = z.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
            let sum: T = e.iter().copied().sum();
            e.into_iter().map(|v| v / sum).collect()
        }
    }
}
