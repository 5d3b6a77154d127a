//! Forward pass and reverse-mode gradients for a batch of pairs.
//!
//! The encoder has no positional state, so each batch first evaluates
//! `tanh(embedding[t] . projection)` once per distinct token `t` and pools
//! rows of that table. Backward mirrors this: pooled gradients are scattered
//! into a per-token buffer and pushed through the table in one pass.

use std::borrow::Borrow;

use crate::data::{Example, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::feature::{feature_dim, fill_feature, jacobian_slices, FeatureConfig};

use super::params::{axpy, dot, EncoderParams, Gradients, Model, Pooling};

const UNUSED: u32 = u32::MAX;

/// Reusable buffers for batched forward/backward passes.
#[derive(Debug, Default)]
pub struct Workspace {
    slot_of: Vec<u32>,
    tokens: Vec<u32>,
    table: Vec<f64>,
    d_table: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    argmax_u: Vec<u32>,
    argmax_v: Vec<u32>,
    features: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    probs: Vec<f64>,
    losses: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Class probabilities of the last forward batch, `3` per example.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Per-example cross-entropy of the last forward batch.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// Matching features of the last forward batch, `4d` per example.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Fills the token table for every distinct token of `seqs`.
    fn build_table<'a>(
        &mut self,
        enc: &EncoderParams,
        seqs: impl Iterator<Item = &'a [u32]>,
    ) -> Result<()> {
        for &t in &self.tokens {
            self.slot_of[t as usize] = UNUSED;
        }
        self.tokens.clear();
        self.slot_of.resize(enc.vocab_size, UNUSED);
        for seq in seqs {
            if seq.is_empty() {
                return Err(Error::invalid("token sequence is empty"));
            }
            for &t in seq {
                let slot = self.slot_of.get_mut(t as usize).ok_or_else(|| {
                    Error::invalid(format!(
                        "token {t} outside vocabulary of {}",
                        enc.vocab_size
                    ))
                })?;
                if *slot == UNUSED {
                    *slot = self.tokens.len() as u32;
                    self.tokens.push(t);
                }
            }
        }

        let d = enc.dim;
        self.table.clear();
        self.table.resize(self.tokens.len() * d, 0.0);
        for (&t, row) in self.tokens.iter().zip(self.table.chunks_exact_mut(d)) {
            for (&e, proj_row) in enc
                .embedding_row(t)
                .iter()
                .zip(enc.projection.chunks_exact(d))
            {
                axpy(e, proj_row, row);
            }
            row.iter_mut().for_each(|x| *x = x.tanh());
        }
        Ok(())
    }

    fn pool(&self, enc: &EncoderParams, seq: &[u32], out: &mut [f64], argmax: &mut [u32]) {
        let d = enc.dim;
        let row = |t: u32| {
            let s = self.slot_of[t as usize] as usize;
            &self.table[s * d..(s + 1) * d]
        };
        match enc.pooling {
            Pooling::Mean => {
                out.fill(0.0);
                for &t in seq {
                    axpy(1.0, row(t), out);
                }
                let n = seq.len() as f64;
                out.iter_mut().for_each(|x| *x /= n);
            }
            Pooling::Max => {
                out.copy_from_slice(row(seq[0]));
                argmax.fill(self.slot_of[seq[0] as usize]);
                for &t in &seq[1..] {
                    let slot = self.slot_of[t as usize];
                    for ((o, a), &x) in out.iter_mut().zip(argmax.iter_mut()).zip(row(t)) {
                        if x > *o {
                            *o = x;
                            *a = slot;
                        }
                    }
                }
            }
        }
    }

    /// Adds the pooled gradient `g` of one sequence into `d_table`.
    fn scatter(
        d_table: &mut [f64],
        slot_of: &[u32],
        pooling: Pooling,
        seq: &[u32],
        argmax: &[u32],
        g: &[f64],
    ) {
        let d = g.len();
        match pooling {
            Pooling::Mean => {
                let inv = 1.0 / seq.len() as f64;
                for &t in seq {
                    let s = slot_of[t as usize] as usize;
                    axpy(inv, g, &mut d_table[s * d..(s + 1) * d]);
                }
            }
            Pooling::Max => {
                for (j, (&s, &gj)) in argmax.iter().zip(g).enumerate() {
                    d_table[s as usize * d + j] += gj;
                }
            }
        }
    }
}

/// Pooled representation of one token sequence.
pub fn encode(tokens: &[u32], params: &EncoderParams) -> Result<Vec<f64>> {
    let mut ws = Workspace::new();
    ws.build_table(params, std::iter::once(tokens))?;
    let mut out = vec![0.0; params.dim];
    let mut argmax = vec![0; params.dim];
    ws.pool(params, tokens, &mut out, &mut argmax);
    Ok(out)
}

/// Class probabilities for one (premise, hypothesis) pair.
pub fn forward(premise: &[u32], hypothesis: &[u32], model: &Model) -> Result<[f64; NUM_CLASSES]> {
    model.forward_pair(premise, hypothesis)
}

fn log_softmax_into(logits: &[f64], probs: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - max).exp();
        sum += *p;
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    max + sum.ln()
}

impl Model {
    pub fn forward_pair(&self, premise: &[u32], hypothesis: &[u32]) -> Result<[f64; NUM_CLASSES]> {
        let mut ws = Workspace::new();
        self.forward_sequences(&[(premise, hypothesis)], None, &mut ws)?;
        let mut out = [0.0; NUM_CLASSES];
        out.copy_from_slice(&ws.probs);
        Ok(out)
    }

    /// Runs the batch forward, leaving activations in `ws`. Returns the mean
    /// cross-entropy.
    pub fn forward_batch<E: Borrow<Example>>(
        &self,
        batch: &[E],
        ws: &mut Workspace,
    ) -> Result<f64> {
        let pairs: Vec<(&[u32], &[u32])> = batch
            .iter()
            .map(|ex| (&ex.borrow().premise[..], &ex.borrow().hypothesis[..]))
            .collect();
        let labels: Vec<usize> = batch.iter().map(|ex| ex.borrow().label.index()).collect();
        self.forward_sequences(&pairs, Some(&labels), ws)?;
        Ok(ws.losses.iter().sum::<f64>() / batch.len() as f64)
    }

    fn forward_sequences(
        &self,
        pairs: &[(&[u32], &[u32])],
        labels: Option<&[usize]>,
        ws: &mut Workspace,
    ) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::invalid("batch is empty"));
        }
        let enc = &self.encoder;
        let head = &self.head;
        let d = enc.dim;
        let f = feature_dim(d);
        let hidden = head.layer1.out_dim;
        let n = pairs.len();
        let cfg = self.effective_feature();

        ws.build_table(enc, pairs.iter().flat_map(|(p, h)| [*p, *h]))?;
        for buf in [&mut ws.u, &mut ws.v] {
            buf.resize(n * d, 0.0);
        }
        for buf in [&mut ws.argmax_u, &mut ws.argmax_v] {
            buf.resize(n * d, 0);
        }
        ws.features.resize(n * f, 0.0);
        ws.h1.resize(n * hidden, 0.0);
        ws.h2.resize(n * hidden, 0.0);
        ws.probs.resize(n * NUM_CLASSES, 0.0);
        ws.losses.resize(n, 0.0);

        let mut u = std::mem::take(&mut ws.u);
        let mut v = std::mem::take(&mut ws.v);
        let mut au = std::mem::take(&mut ws.argmax_u);
        let mut av = std::mem::take(&mut ws.argmax_v);
        for (i, (p, h)) in pairs.iter().enumerate() {
            let r = i * d..(i + 1) * d;
            ws.pool(enc, p, &mut u[r.clone()], &mut au[r.clone()]);
            ws.pool(enc, h, &mut v[r.clone()], &mut av[r]);
        }
        ws.u = u;
        ws.v = v;
        ws.argmax_u = au;
        ws.argmax_v = av;

        let act = head.activation;
        let mut logits = [0.0; NUM_CLASSES];
        for i in 0..n {
            let feat = &mut ws.features[i * f..(i + 1) * f];
            fill_feature(
                &ws.u[i * d..(i + 1) * d],
                &ws.v[i * d..(i + 1) * d],
                cfg.degree,
                cfg.eta,
                feat,
            );
            let h1 = &mut ws.h1[i * hidden..(i + 1) * hidden];
            head.layer1.forward(feat, h1);
            h1.iter_mut().for_each(|x| *x = act.apply(*x));
            let h2 = &mut ws.h2[i * hidden..(i + 1) * hidden];
            head.layer2.forward(h1, h2);
            h2.iter_mut().for_each(|x| *x = act.apply(*x));
            head.classifier.forward(h2, &mut logits);
            let probs = &mut ws.probs[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
            let lse = log_softmax_into(&logits, probs);
            ws.losses[i] = labels.map_or(0.0, |l| lse - logits[l[i]]);
        }
        Ok(())
    }

    /// Mean cross-entropy over `batch`.
    pub fn loss<E: Borrow<Example>>(&self, batch: &[E]) -> Result<f64> {
        self.forward_batch(batch, &mut Workspace::new())
    }

    /// Mean loss and its gradient with respect to every parameter.
    pub fn backward<E: Borrow<Example>>(&self, batch: &[E]) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.backward_into(batch, &mut Workspace::new(), &mut grads)?;
        Ok((loss, grads))
    }

    /// Like [`Model::backward`] with caller-owned buffers; `grads` is overwritten.
    pub fn backward_into<E: Borrow<Example>>(
        &self,
        batch: &[E],
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let loss = self.forward_batch(batch, ws)?;
        grads.fill(0.0);

        let enc = &self.encoder;
        let head = &self.head;
        let d = enc.dim;
        let f = feature_dim(d);
        let hidden = head.layer1.out_dim;
        let act = head.activation;
        let eta = self.eta();
        let cfg = FeatureConfig {
            eta_learnable: self.log_eta.is_some(),
            ..self.effective_feature()
        };
        let inv_n = 1.0 / batch.len() as f64;

        ws.d_table.clear();
        ws.d_table.resize(ws.table.len(), 0.0);
        ws.scratch.resize(2 * hidden + f, 0.0);
        let mut scratch = std::mem::take(&mut ws.scratch);
        let (dh, rest) = scratch.split_at_mut(hidden);
        let (dh_prev, dfeat) = rest.split_at_mut(hidden);
        let mut g_log_eta = 0.0;

        for (i, ex) in batch.iter().enumerate() {
            let ex = ex.borrow();
            let h1 = &ws.h1[i * hidden..(i + 1) * hidden];
            let h2 = &ws.h2[i * hidden..(i + 1) * hidden];
            let feat = &ws.features[i * f..(i + 1) * f];
            let mut dlogits = [0.0; NUM_CLASSES];
            for (c, g) in dlogits.iter_mut().enumerate() {
                *g = ws.probs[i * NUM_CLASSES + c] * inv_n;
            }
            dlogits[ex.label.index()] -= inv_n;

            head.classifier.backward(
                h2,
                &dlogits,
                &mut grads.classifier_weight,
                &mut grads.classifier_bias,
                Some(dh),
            );
            for (g, &y) in dh.iter_mut().zip(h2) {
                *g *= act.grad_from_output(y);
            }
            head.layer2.backward(
                h1,
                dh,
                &mut grads.layer2_weight,
                &mut grads.layer2_bias,
                Some(dh_prev),
            );
            for (g, &y) in dh_prev.iter_mut().zip(h1) {
                *g *= act.grad_from_output(y);
            }
            head.layer1.backward(
                feat,
                dh_prev,
                &mut grads.layer1_weight,
                &mut grads.layer1_bias,
                Some(dfeat),
            );

            let u = &ws.u[i * d..(i + 1) * d];
            let v = &ws.v[i * d..(i + 1) * d];
            let jac = jacobian_slices(u, v, &cfg);
            let du = jac.d_u.vjp(dfeat);
            let dv = jac.d_v.vjp(dfeat);
            if let Some(d_eta) = &jac.d_eta {
                // d/d(log eta) = eta * d/d(eta)
                g_log_eta += eta * dot(d_eta, dfeat);
            }
            Workspace::scatter(
                &mut ws.d_table,
                &ws.slot_of,
                enc.pooling,
                &ex.premise,
                &ws.argmax_u[i * d..(i + 1) * d],
                &du,
            );
            Workspace::scatter(
                &mut ws.d_table,
                &ws.slot_of,
                enc.pooling,
                &ex.hypothesis,
                &ws.argmax_v[i * d..(i + 1) * d],
                &dv,
            );
        }
        ws.scratch = scratch;

        // Through tanh(embedding[t] . projection) for each distinct token.
        let e = enc.embed_dim;
        for (s, &t) in ws.tokens.iter().enumerate() {
            let y = &ws.table[s * d..(s + 1) * d];
            let da = &mut ws.d_table[s * d..(s + 1) * d];
            for (g, &yj) in da.iter_mut().zip(y) {
                *g *= 1.0 - yj * yj;
            }
            let emb = enc.embedding_row(t);
            let g_emb = &mut grads.embedding[t as usize * e..(t as usize + 1) * e];
            for (k, (proj_row, g_proj_row)) in enc
                .projection
                .chunks_exact(d)
                .zip(grads.projection.chunks_exact_mut(d))
                .enumerate()
            {
                axpy(emb[k], da, g_proj_row);
                g_emb[k] += dot(proj_row, da);
            }
        }

        if let Some(g) = grads.log_eta.as_mut() {
            *g = g_log_eta;
        }
        Ok(loss)
    }

    /// Predicted class per example (first maximum; NaN scores resolve to 0).
    pub fn predict<E: Borrow<Example>>(
        &self,
        batch: &[E],
        ws: &mut Workspace,
    ) -> Result<Vec<usize>> {
        self.forward_batch(batch, ws)?;
        Ok(ws
            .probs
            .chunks_exact(NUM_CLASSES)
            .map(|p| {
                let mut best = 0;
                for c in 1..NUM_CLASSES {
                    if p[c] > p[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use crate::feature::{Degree, FeatureConfig};
    use crate::nn::{Activation, ModelArch};

    fn arch(pooling: Pooling) -> ModelArch {
        ModelArch {
            vocab_size: 20,
            embed_dim: 5,
            dim: 4,
            hidden: 6,
            pooling,
            activation: Activation::Tanh,
        }
    }

    fn model(pooling: Pooling, seed: u64) -> Model {
        Model::init(
            &arch(pooling),
            &FeatureConfig::new(Degree::Three, 2.0).unwrap(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn single_token_encoding_is_projected_embedding() {
        for pooling in [Pooling::Max, Pooling::Mean] {
            let m = model(pooling, 1);
            let enc = &m.encoder;
            let out = encode(&[7], enc).unwrap();
            for (j, o) in out.iter().enumerate() {
                let pre: f64 = (0..enc.embed_dim)
                    .map(|k| enc.embedding[7 * enc.embed_dim + k] * enc.projection[k * enc.dim + j])
                    .sum();
                assert!((o - pre.tanh()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn max_pooling_ignores_order() {
        let m = model(Pooling::Max, 2);
        let a = encode(&[3, 9, 1, 14], &m.encoder).unwrap();
        let b = encode(&[14, 1, 3, 9], &m.encoder).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_pooling_ignores_uniform_duplication() {
        let m = model(Pooling::Mean, 3);
        let a = encode(&[3, 9, 1], &m.encoder).unwrap();
        let b = encode(&[3, 3, 9, 9, 1, 1], &m.encoder).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_rejects_empty_and_out_of_vocab() {
        let m = model(Pooling::Max, 0);
        assert!(encode(&[], &m.encoder).is_err());
        assert!(encode(&[20], &m.encoder).is_err());
        // A failed call must not poison a reused workspace.
        let mut ws = Workspace::new();
        let bad = Example {
            premise: vec![1, 25],
            hypothesis: vec![2],
            label: Label::Neutral,
        };
        assert!(m.forward_batch(&[bad], &mut ws).is_err());
        let good = Example {
            premise: vec![1],
            hypothesis: vec![2],
            label: Label::Neutral,
        };
        let loss = m
            .forward_batch(std::slice::from_ref(&good), &mut ws)
            .unwrap();
        assert_eq!(loss, m.loss(&[good]).unwrap());
    }

    #[test]
    fn zero_model_is_uniform_with_ln3_loss() {
        let m = Model::zeros(&arch(Pooling::Max), &FeatureConfig::default()).unwrap();
        let p = m.forward_pair(&[1, 2], &[3]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        for label in Label::ALL {
            let ex = Example {
                premise: vec![4],
                hypothesis: vec![5, 6],
                label,
            };
            assert!((m.loss(&[ex]).unwrap() - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_are_normalized() {
        let m = model(Pooling::Max, 5);
        let p = forward(&[1, 2, 3], &[4, 5], &m).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn batch_forward_matches_single_pairs() {
        let m = model(Pooling::Max, 6);
        let batch: Vec<Example> = (0..5u32)
            .map(|i| Example {
                premise: vec![i, i + 3, 11],
                hypothesis: vec![19 - i, 2],
                label: Label::ALL[i as usize % 3],
            })
            .collect();
        let mut ws = Workspace::new();
        m.forward_batch(&batch, &mut ws).unwrap();
        for (i, ex) in batch.iter().enumerate() {
            let single = m.forward_pair(&ex.premise, &ex.hypothesis).unwrap();
            assert_eq!(&ws.probabilities()[3 * i..3 * i + 3], &single);
        }
    }
}
