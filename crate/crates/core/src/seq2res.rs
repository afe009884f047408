//! Generative resident separation: a BiGRU encoder and an attentive GRU
//! decoder that rewrites a mixed window as
//! `{resident 1 events} EOS SOS {resident 2 events} EOS`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::vocab::{Vocabulary, EOS, PAD, SOS};
use crate::error::{Error, Result};
use crate::layers::{Bahdanau, BiGru, Embedding, GruCell, Linear, MASK_NEG};
use crate::numerics::{softmax_in_place, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seq2ResConfig {
    pub enc_embed: usize,
    pub enc_hidden: usize,
    pub dec_embed: usize,
    pub dec_hidden: usize,
    pub enc_dropout: f64,
    pub dec_dropout: f64,
}

impl Default for Seq2ResConfig {
    fn default() -> Self {
        Self {
            enc_embed: 128,
            enc_hidden: 128,
            dec_embed: 256,
            dec_hidden: 256,
            enc_dropout: 0.1,
            dec_dropout: 0.4,
        }
    }
}

impl Seq2ResConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dec_hidden != 2 * self.enc_hidden {
            return Err(Error::Config(format!(
                "decoder hidden size {} must equal the encoder output width {}",
                self.dec_hidden,
                2 * self.enc_hidden
            )));
        }
        for (name, v) in [
            ("enc_embed", self.enc_embed),
            ("enc_hidden", self.enc_hidden),
            ("dec_embed", self.dec_embed),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, p) in [
            ("enc_dropout", self.enc_dropout),
            ("dec_dropout", self.dec_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

/// The two per-resident segments of a separated window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeparationTarget<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
}

impl<T: Clone> SeparationTarget<T> {
    /// `first EOS SOS second EOS`.
    pub fn serialize(&self, eos: T, sos: T) -> Vec<T> {
        let mut out = Vec::with_capacity(self.first.len() + self.second.len() + 3);
        out.extend(self.first.iter().cloned());
        out.push(eos.clone());
        out.push(sos);
        out.extend(self.second.iter().cloned());
        out.push(eos);
        out
    }

    /// `first EOS SOS second`: the separated classifier input.
    pub fn serialize_open(&self, eos: T, sos: T) -> Vec<T> {
        let mut out = self.serialize(eos, sos);
        out.pop();
        out
    }
}

impl<T: Clone + PartialEq + std::fmt::Debug> SeparationTarget<T> {
    /// Inverse of [`SeparationTarget::serialize`].
    pub fn parse(tokens: &[T], eos: &T, sos: &T) -> Result<Self> {
        let bad = |msg: &str| Error::MalformedTarget(format!("{msg}: {tokens:?}"));
        let eos_at: Vec<usize> = (0..tokens.len()).filter(|&i| &tokens[i] == eos).collect();
        let sos_at: Vec<usize> = (0..tokens.len()).filter(|&i| &tokens[i] == sos).collect();
        if eos_at.len() != 2 {
            return Err(bad("expected exactly two EOS"));
        }
        if sos_at.len() != 1 {
            return Err(bad("expected exactly one SOS"));
        }
        let (e1, e2, s) = (eos_at[0], eos_at[1], sos_at[0]);
        if e1 == 0 {
            return Err(bad("first segment is empty"));
        }
        if s != e1 + 1 || e2 != tokens.len() - 1 {
            return Err(bad("expected `... EOS SOS ... EOS`"));
        }
        Ok(Self {
            first: tokens[..e1].to_vec(),
            second: tokens[s + 1..e2].to_vec(),
        })
    }
}

/// Stable partition of an annotated window by resident. The resident of
/// the first event becomes resident 1.
pub fn make_separation_target<T: Clone, R: PartialEq + Clone>(
    tokens: &[T],
    residents: &[Option<R>],
) -> Result<SeparationTarget<T>> {
    if tokens.len() != residents.len() {
        return Err(Error::LengthMismatch {
            left: tokens.len(),
            right: residents.len(),
        });
    }
    if tokens.is_empty() {
        return Err(Error::EmptyInput("separation window"));
    }
    let mut seen: Vec<R> = Vec::with_capacity(2);
    let mut out = SeparationTarget {
        first: Vec::new(),
        second: Vec::new(),
    };
    for (i, (tok, who)) in tokens.iter().zip(residents).enumerate() {
        let who = who.as_ref().ok_or(Error::MissingAnnotation(i))?;
        let slot = match seen.iter().position(|r| r == who) {
            Some(s) => s,
            None if seen.len() < 2 => {
                seen.push(who.clone());
                seen.len() - 1
            }
            None => return Err(Error::TooManyResidents),
        };
        if slot == 0 {
            out.first.push(tok.clone());
        } else {
            out.second.push(tok.clone());
        }
    }
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Encoder state shared by every decoder step of one batch.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub outputs: Var,
    pub context: Var,
    pub keys_proj: Var,
    pub steps: usize,
    pub batch: usize,
    pub score_mask: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct TeacherOutput {
    /// `(T*B) x vocab`, time-major.
    pub logits: Var,
    /// Mean token cross entropy over non-padding positions.
    pub loss: Var,
    pub steps: usize,
    pub tokens: usize,
}

/// One greedy decoding result.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub tokens: Vec<usize>,
    /// One softmax row per emitted token.
    pub probs: Vec<Vec<f64>>,
    /// Set when `max_len` was hit before the second EOS.
    pub truncated: bool,
}

impl Generated {
    pub fn prob_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.probs)
    }

    /// Rows fed to a downstream classifier: everything before the
    /// terminating EOS.
    pub fn classifier_rows(&self) -> &[Vec<f64>] {
        if self.truncated {
            &self.probs
        } else {
            &self.probs[..self.probs.len() - 1]
        }
    }
}

#[derive(Clone, Debug)]
pub struct Seq2ResModel {
    pub cfg: Seq2ResConfig,
    pub vocab_size: usize,
    pub store: ParamStore,
    pub enc_embedding: Embedding,
    pub encoder: BiGru,
    pub dec_embedding: Embedding,
    pub attention: Bahdanau,
    pub decoder: GruCell,
    pub output: Linear,
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    First,
    ForceSos,
    Second,
    Done,
}

impl Seq2ResModel {
    pub fn new<R: Rng>(cfg: Seq2ResConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if vocab_size <= EOS {
            return Err(Error::Config(format!(
                "vocabulary of {vocab_size} lacks specials"
            )));
        }
        let mut store = ParamStore::new();
        let enc_embedding = Embedding::new(
            &mut store,
            "encoder.embedding",
            vocab_size,
            cfg.enc_embed,
            rng,
        );
        let encoder = BiGru::new(&mut store, "encoder", cfg.enc_embed, cfg.enc_hidden, rng);
        let dec_embedding = Embedding::new(
            &mut store,
            "decoder.embedding",
            vocab_size,
            cfg.dec_embed,
            rng,
        );
        let enc_out = 2 * cfg.enc_hidden;
        let attention = Bahdanau::new(
            &mut store,
            "decoder.attention",
            cfg.dec_hidden,
            enc_out,
            cfg.dec_hidden,
            rng,
        );
        let decoder = GruCell::new(
            &mut store,
            "decoder.gru",
            cfg.dec_embed + enc_out,
            cfg.dec_hidden,
            rng,
        );
        let output = Linear::new(
            &mut store,
            "decoder.out",
            cfg.dec_hidden,
            vocab_size,
            true,
            rng,
        );
        Ok(Self {
            cfg,
            vocab_size,
            store,
            enc_embedding,
            encoder,
            dec_embedding,
            attention,
            decoder,
            output,
        })
    }

    /// Pads `inputs` to a common length and runs the encoder.
    pub fn encode<R: Rng>(
        &self,
        g: &mut Graph,
        inputs: &[&[usize]],
        rng: &mut R,
    ) -> Result<Encoded> {
        let batch = inputs.len();
        if batch == 0 || inputs.iter().any(|s| s.is_empty()) {
            return Err(Error::EmptyInput("seq2res input"));
        }
        let steps = inputs.iter().map(|s| s.len()).max().unwrap_or(0);
        let ragged = inputs.iter().any(|s| s.len() != steps);
        let mut ids = Vec::with_capacity(steps * batch);
        for k in 0..steps {
            for s in inputs {
                ids.push(s.get(k).copied().unwrap_or(PAD));
            }
        }
        let x = self.enc_embedding.forward(g, &ids)?;
        let x = g.dropout(x, self.cfg.enc_dropout, rng)?;
        let valid: Option<Vec<Vec<bool>>> = ragged.then(|| {
            (0..steps)
                .map(|k| inputs.iter().map(|s| k < s.len()).collect())
                .collect()
        });
        let enc = self.encoder.encode(g, x, steps, batch, valid.as_deref())?;
        let keys_proj = self.attention.project_keys(g, enc.outputs)?;
        let score_mask = ragged.then(|| {
            let data = inputs
                .iter()
                .flat_map(|s| (0..steps).map(move |k| if k < s.len() { 0.0 } else { MASK_NEG }))
                .collect();
            g.constant(Tensor::matrix(batch, steps, data))
        });
        Ok(Encoded {
            outputs: enc.outputs,
            context: enc.context,
            keys_proj,
            steps,
            batch,
            score_mask,
        })
    }

    /// One decoder step: attend with the previous state, then feed
    /// `[embedded input, context]` to the GRU.
    pub fn decode_step(&self, g: &mut Graph, enc: &Encoded, input_emb: Var, h: Var) -> Result<Var> {
        let att =
            self.attention
                .attend(g, h, enc.keys_proj, enc.outputs, enc.steps, enc.score_mask)?;
        let x = g.concat_cols(&[input_emb, att.context])?;
        self.decoder.step(g, x, h)
    }

    /// Teacher-forced pass: the decoder reads `SOS` followed by the target
    /// shifted right. Targets may differ in length; padding is ignored by
    /// the loss.
    pub fn forward_teacher<R: Rng>(
        &self,
        g: &mut Graph,
        inputs: &[&[usize]],
        targets: &[&[usize]],
        rng: &mut R,
    ) -> Result<TeacherOutput> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        for t in targets {
            SeparationTarget::parse(t, &EOS, &SOS)?;
            if let Some(&bad) = t.iter().find(|&&id| id >= self.vocab_size) {
                return Err(Error::OutOfVocabulary {
                    id: bad,
                    vocab: self.vocab_size,
                });
            }
        }
        let enc = self.encode(g, inputs, rng)?;
        let batch = enc.batch;
        let steps = targets.iter().map(|t| t.len()).max().unwrap_or(0);
        let mut dec_in = Vec::with_capacity(steps * batch);
        let mut gold = Vec::with_capacity(steps * batch);
        for k in 0..steps {
            for t in targets {
                dec_in.push(match k {
                    0 => SOS,
                    _ => t.get(k - 1).copied().unwrap_or(PAD),
                });
                gold.push(t.get(k).copied());
            }
        }
        let emb = self.dec_embedding.forward(g, &dec_in)?;
        let emb = g.dropout(emb, self.cfg.dec_dropout, rng)?;
        let mut h = enc.context;
        let mut states = Vec::with_capacity(steps);
        for k in 0..steps {
            let e = g.slice_rows(emb, k * batch, batch)?;
            h = self.decode_step(g, &enc, e, h)?;
            states.push(h);
        }
        let states = g.concat_rows(&states)?;
        let logits = self.output.forward(g, states)?;
        let tokens = gold.iter().flatten().count();
        let loss = g.cross_entropy(logits, &gold, 1.0 / tokens as f64)?;
        Ok(TeacherOutput {
            logits,
            loss,
            steps,
            tokens,
        })
    }

    /// Teacher-forced argmax accuracy: `(correct, total)` target tokens.
    pub fn teacher_accuracy(
        &self,
        inputs: &[&[usize]],
        targets: &[&[usize]],
    ) -> Result<(usize, usize)> {
        let mut g = Graph::new(&self.store, false);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = self.forward_teacher(&mut g, inputs, targets, &mut rng)?;
        let logits = g.value(out.logits);
        let batch = inputs.len();
        let mut correct = 0;
        for k in 0..out.steps {
            for (b, t) in targets.iter().enumerate() {
                if let Some(&want) = t.get(k) {
                    if argmax(logits.row_slice(k * batch + b)) == want {
                        correct += 1;
                    }
                }
            }
        }
        Ok((correct, out.tokens))
    }

    /// Greedy decoding. After the first EOS the next emitted token is forced
    /// to SOS (its probability row becomes one-hot); decoding ends at the
    /// second EOS or after `max_len` tokens.
    pub fn generate(&self, inputs: &[&[usize]], max_len: usize) -> Result<Vec<Generated>> {
        if max_len < 3 {
            return Err(Error::Config(format!(
                "max_len must be at least 3, got {max_len}"
            )));
        }
        let mut g = Graph::new(&self.store, false);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let enc = self.encode(&mut g, inputs, &mut rng)?;
        let batch = enc.batch;
        let mut out: Vec<Generated> = (0..batch)
            .map(|_| Generated {
                tokens: Vec::new(),
                probs: Vec::new(),
                truncated: false,
            })
            .collect();
        let mut phase = vec![Phase::First; batch];
        let mut prev = vec![SOS; batch];
        let mut h = enc.context;
        for _ in 0..max_len {
            if phase.iter().all(|p| *p == Phase::Done) {
                break;
            }
            let e = self.dec_embedding.forward(&mut g, &prev)?;
            h = self.decode_step(&mut g, &enc, e, h)?;
            let logits = self.output.forward(&mut g, h)?;
            let logits = g.value(logits).clone();
            for b in 0..batch {
                if phase[b] == Phase::Done {
                    continue;
                }
                let mut row = logits.row_slice(b).to_vec();
                softmax_in_place(&mut row);
                let mut tok = argmax(&row);
                match phase[b] {
                    Phase::ForceSos => {
                        tok = SOS;
                        row.iter_mut().for_each(|v| *v = 0.0);
                        row[SOS] = 1.0;
                        phase[b] = Phase::Second;
                    }
                    Phase::First if tok == EOS => phase[b] = Phase::ForceSos,
                    Phase::Second if tok == EOS => phase[b] = Phase::Done,
                    _ => {}
                }
                out[b].tokens.push(tok);
                out[b].probs.push(row);
                prev[b] = tok;
            }
        }
        for (o, p) in out.iter_mut().zip(&phase) {
            o.truncated = *p != Phase::Done;
        }
        Ok(out)
    }
}

/// Decoded event names, one instance per line; segment boundaries appear as
/// the literal `EOS SOS`.
pub fn export_decoded(results: &[Generated], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out.push_str(&vocab.decode(&r.tokens)?.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Token ids, one instance per line.
pub fn export_ids(results: &[Generated]) -> String {
    let mut out = String::new();
    for r in results {
        let ids: Vec<String> = r.tokens.iter().map(usize::to_string).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    out
}
