//! Multi-label activity classifiers over a shared BiGRU extractor:
//! binary relevance (BN) and Query2Label (Q2L), plus the two-stage adapter
//! that feeds separation probabilities through the embedding table.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BiGru, Embedding, LayerNorm, Linear, TransformerDecoderLayer, MASK_NEG};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::seq2res::Seq2ResModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Bn,
    Q2l,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Bn => "BiGRU+BN",
            HeadKind::Q2l => "BiGRU+Q2L",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            HeadKind::Bn => "bn",
            HeadKind::Q2l => "q2l",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub embed: usize,
    pub hidden: usize,
    /// Decoder layers in the Q2L head.
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of the model width.
    pub ff_mult: usize,
    pub dropout: f64,
    pub threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            embed: 128,
            hidden: 128,
            layers: 2,
            heads: 4,
            ff_mult: 4,
            dropout: 0.3,
            threshold: 0.7,
        }
    }
}

impl ClassifierConfig {
    /// Width of the extracted features and of the Q2L label embeddings.
    pub fn model_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed == 0 || self.hidden == 0 || self.ff_mult == 0 {
            return Err(Error::Config("classifier widths must be positive".into()));
        }
        if self.heads == 0 || !self.model_dim().is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} attention heads do not divide model dimension {}",
                self.heads,
                self.model_dim()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// A classifier input sequence: hard token ids or per-step distributions
/// over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub enum SeqInput {
    Tokens(Vec<usize>),
    Probs(Vec<Vec<f64>>),
}

impl SeqInput {
    pub fn len(&self) -> usize {
        match self {
            SeqInput::Tokens(t) => t.len(),
            SeqInput::Probs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelPrediction {
    pub probs: Vec<f64>,
    pub predicted: Vec<usize>,
}

impl LabelPrediction {
    /// Labels strictly above `threshold`.
    pub fn from_probs(probs: Vec<f64>, threshold: f64) -> Self {
        let predicted = (0..probs.len()).filter(|&l| probs[l] > threshold).collect();
        Self { probs, predicted }
    }
}

/// Time-major BiGRU features of a padded batch.
#[derive(Clone, Debug)]
pub struct Features {
    /// `(K*B) x 2H`
    pub outputs: Var,
    pub steps: usize,
    pub batch: usize,
    pub lengths: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Q2lHead {
    pub labels: ParamId,
    pub layers: Vec<TransformerDecoderLayer>,
    pub norm: LayerNorm,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Clone, Debug)]
pub enum Head {
    Bn(Linear),
    Q2l(Q2lHead),
}

#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub cfg: ClassifierConfig,
    pub kind: HeadKind,
    pub vocab_size: usize,
    pub num_labels: usize,
    pub store: ParamStore,
    pub embedding: Embedding,
    pub extractor: BiGru,
    pub head: Head,
}

/// Expected embedding under each row distribution.
pub fn soft_embed(g: &mut Graph, probs: Var, embedding: &Embedding) -> Result<Var> {
    embedding.soft_forward(g, probs)
}

/// Mean binary cross entropy of probabilities in `[0, 1]`, clamped away
/// from the endpoints before the logarithm.
pub fn bce_loss(probs: &[f64], targets: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("bce_loss"));
    }
    let mut g = Graph::detached(false);
    let p = g.constant(Tensor::row(probs.to_vec()));
    let l = g.bce(p, targets, 1.0 / probs.len() as f64)?;
    Ok(g.value(l).item())
}

impl ClassifierModel {
    /// The extractor is drawn from `rng` before the head, so BN and Q2L
    /// models built from equal seeds share identical extractor weights.
    pub fn new<R: Rng>(
        cfg: ClassifierConfig,
        kind: HeadKind,
        vocab_size: usize,
        num_labels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if num_labels == 0 {
            return Err(Error::Config(
                "at least one activity class is required".into(),
            ));
        }
        let mut store = ParamStore::new();
        let embedding = Embedding::new(
            &mut store,
            "extractor.embedding",
            vocab_size,
            cfg.embed,
            rng,
        );
        let extractor = BiGru::new(&mut store, "extractor", cfg.embed, cfg.hidden, rng);
        let d = cfg.model_dim();
        let head = match kind {
            HeadKind::Bn => Head::Bn(Linear::new(&mut store, "head.bn", d, num_labels, true, rng)),
            HeadKind::Q2l => {
                let labels = store.add_uniform("head.labels", num_labels, d, 1, rng);
                let layers = (0..cfg.layers)
                    .map(|i| {
                        TransformerDecoderLayer::new(
                            &mut store,
                            &format!("head.decoder.{i}"),
                            d,
                            cfg.heads,
                            cfg.ff_mult * d,
                            rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                let norm = LayerNorm::new(&mut store, "head.norm", d);
                let out_w = store.add_uniform("head.out.W", num_labels, d, d, rng);
                let out_b = store.add_zeros("head.out.b", 1, num_labels);
                Head::Q2l(Q2lHead {
                    labels,
                    layers,
                    norm,
                    out_w,
                    out_b,
                })
            }
        };
        Ok(Self {
            cfg,
            kind,
            vocab_size,
            num_labels,
            store,
            embedding,
            extractor,
            head,
        })
    }

    /// Embeds and encodes a batch. Hard-token batches use a table lookup;
    /// any probability input routes the whole batch through the soft
    /// embedding with token rows as point masses.
    pub fn features<R: Rng>(
        &self,
        g: &mut Graph,
        inputs: &[&SeqInput],
        rng: &mut R,
    ) -> Result<Features> {
        let batch = inputs.len();
        if batch == 0 || inputs.iter().any(|s| s.is_empty()) {
            return Err(Error::EmptyInput("classifier input"));
        }
        let lengths: Vec<usize> = inputs.iter().map(|s| s.len()).collect();
        let steps = *lengths.iter().max().expect("nonempty");
        let v = self.vocab_size;
        let all_tokens = inputs.iter().all(|s| matches!(s, SeqInput::Tokens(_)));
        let x = if all_tokens {
            let mut ids = Vec::with_capacity(steps * batch);
            for k in 0..steps {
                for s in inputs {
                    if let SeqInput::Tokens(t) = s {
                        ids.push(t.get(k).copied().unwrap_or(crate::data::PAD));
                    }
                }
            }
            self.embedding.forward(g, &ids)?
        } else {
            let mut data = vec![0.0; steps * batch * v];
            for (b, s) in inputs.iter().enumerate() {
                for k in 0..s.len() {
                    let row = &mut data[(k * batch + b) * v..(k * batch + b + 1) * v];
                    match s {
                        SeqInput::Tokens(t) => {
                            let id = t[k];
                            if id >= v {
                                return Err(Error::OutOfVocabulary { id, vocab: v });
                            }
                            row[id] = 1.0;
                        }
                        SeqInput::Probs(p) => {
                            if p[k].len() != v {
                                return Err(Error::VocabMisalignment {
                                    expected: v,
                                    got: p[k].len(),
                                });
                            }
                            row.copy_from_slice(&p[k]);
                        }
                    }
                }
            }
            let probs = g.constant(Tensor::matrix(steps * batch, v, data));
            soft_embed(g, probs, &self.embedding)?
        };
        let x = g.dropout(x, self.cfg.dropout, rng)?;
        let ragged = lengths.iter().any(|&l| l != steps);
        let valid: Option<Vec<Vec<bool>>> = ragged.then(|| {
            (0..steps)
                .map(|k| lengths.iter().map(|&l| k < l).collect())
                .collect()
        });
        let enc = self
            .extractor
            .encode(g, x, steps, batch, valid.as_deref())?;
        Ok(Features {
            outputs: enc.outputs,
            steps,
            batch,
            lengths,
        })
    }

    /// `B x L` logits.
    pub fn logits<R: Rng>(&self, g: &mut Graph, inputs: &[&SeqInput], rng: &mut R) -> Result<Var> {
        let f = self.features(g, inputs, rng)?;
        match &self.head {
            Head::Bn(lin) => {
                let pooled = masked_mean(g, &f)?;
                let pooled = g.dropout(pooled, self.cfg.dropout, rng)?;
                lin.forward(g, pooled)
            }
            Head::Q2l(h) => self.q2l_logits(g, h, &f, rng),
        }
    }

    fn q2l_logits<R: Rng>(
        &self,
        g: &mut Graph,
        h: &Q2lHead,
        f: &Features,
        rng: &mut R,
    ) -> Result<Var> {
        let (b, k, l) = (f.batch, f.steps, self.num_labels);
        // batch-major features: row b*K + k
        let perm: Vec<usize> = (0..b)
            .flat_map(|bi| (0..k).map(move |ki| ki * b + bi))
            .collect();
        let feats = if b == 1 {
            f.outputs
        } else {
            g.gather_rows(f.outputs, &perm)?
        };
        let mask = f.lengths.iter().any(|&n| n != k).then(|| {
            let data = f
                .lengths
                .iter()
                .flat_map(|&n| {
                    (0..l).flat_map(move |_| {
                        (0..k).map(move |ki| if ki < n { 0.0 } else { MASK_NEG })
                    })
                })
                .collect();
            g.constant(Tensor::matrix(b * l, k, data))
        });
        let table = g.param(h.labels);
        let rep: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
        let mut x = if b == 1 {
            table
        } else {
            g.gather_rows(table, &rep)?
        };
        for layer in &h.layers {
            x = layer.forward(g, x, feats, b, mask, self.cfg.dropout, rng)?;
        }
        let x = h.norm.forward(g, x)?;
        let w = g.param(h.out_w);
        let y = g.mul_tiled(x, w)?;
        let y = g.row_sum(y);
        let y = g.reshape(y, b, l)?;
        let bias = g.param(h.out_b);
        g.add_tiled(y, bias)
    }

    /// Mean BCE over the batch and labels, computed from logits.
    pub fn loss<R: Rng>(
        &self,
        g: &mut Graph,
        inputs: &[&SeqInput],
        targets: &[&[f64]],
        rng: &mut R,
    ) -> Result<Var> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        if let Some(t) = targets.iter().find(|t| t.len() != self.num_labels) {
            return Err(Error::LengthMismatch {
                left: t.len(),
                right: self.num_labels,
            });
        }
        let logits = self.logits(g, inputs, rng)?;
        let flat: Vec<f64> = targets.iter().flat_map(|t| t.iter().copied()).collect();
        let scale = 1.0 / flat.len() as f64;
        g.bce_with_logits(logits, &flat, scale)
    }

    pub fn predict(&self, inputs: &[&SeqInput]) -> Result<Vec<LabelPrediction>> {
        let mut g = Graph::new(&self.store, false);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let logits = self.logits(&mut g, inputs, &mut rng)?;
        let p = g.sigmoid(logits);
        let t = g.value(p);
        Ok((0..t.rows())
            .map(|r| LabelPrediction::from_probs(t.row_slice(r).to_vec(), self.cfg.threshold))
            .collect())
    }
}

/// Per-sequence mean of the valid time steps: `B x 2H`.
pub fn masked_mean(g: &mut Graph, f: &Features) -> Result<Var> {
    let data = f
        .lengths
        .iter()
        .flat_map(|&n| (0..f.steps).map(move |k| if k < n { 1.0 / n as f64 } else { 0.0 }))
        .collect();
    let w = g.constant(Tensor::matrix(f.batch, f.steps, data));
    g.weighted_time_sum(w, f.outputs)
}

/// Separates with the frozen `sep` model, then classifies its probability
/// rows (final EOS excluded).
pub fn run_two_stage(
    sep: &Seq2ResModel,
    cls: &ClassifierModel,
    token_ids: &[usize],
    max_len: usize,
) -> Result<LabelPrediction> {
    if sep.vocab_size != cls.vocab_size {
        return Err(Error::VocabMisalignment {
            expected: cls.vocab_size,
            got: sep.vocab_size,
        });
    }
    let generated = sep.generate(&[token_ids], max_len)?;
    let input = SeqInput::Probs(generated[0].classifier_rows().to_vec());
    Ok(cls.predict(&[&input])?.remove(0))
}

/// One line per instance: id, probabilities to six decimals, predicted
/// label names (`-` when none).
pub fn export_predictions(
    ids: &[String],
    preds: &[LabelPrediction],
    label_names: &[String],
) -> Result<String> {
    if ids.len() != preds.len() {
        return Err(Error::LengthMismatch {
            left: ids.len(),
            right: preds.len(),
        });
    }
    let mut out = String::new();
    for (id, p) in ids.iter().zip(preds) {
        let probs: Vec<String> = p.probs.iter().map(|v| format!("{v:.6}")).collect();
        let names: Vec<&str> = p
            .predicted
            .iter()
            .map(|&l| {
                label_names
                    .get(l)
                    .map(String::as_str)
                    .ok_or(Error::LabelOutOfRange {
                        index: l,
                        classes: label_names.len(),
                    })
            })
            .collect::<Result<_>>()?;
        let names = if names.is_empty() {
            "-".to_string()
        } else {
            names.join(",")
        };
        out.push_str(&format!("{id}\t{}\t{names}\n", probs.join(" ")));
    }
    Ok(out)
}
