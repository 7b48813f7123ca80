//! Decoder-only transformer (pre-norm GPT-2 layout).
//!
//! Each position's input is its token embedding plus its position
//! embedding; `layers` blocks of masked multi-head self-attention and a
//! GELU MLP follow, each wrapped in a residual connection with a leading
//! layer norm; a final layer norm and a projection onto the vocabulary
//! (tied to the token embedding by default) give the next-token logits.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{LmConfig, ModelRole};
use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::{gelu, gemm, layer_norm_rows, softmax_rows, Scalar, Tensor};

pub(crate) const WTE: usize = 0;
pub(crate) const WPE: usize = 1;
const PER_BLOCK: usize = 12;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const W_QKV: usize = 2;
const B_QKV: usize = 3;
const W_O: usize = 4;
const B_O: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const W_FC: usize = 8;
const B_FC: usize = 9;
const W_PROJ: usize = 10;
const B_PROJ: usize = 11;

fn blk(layer: usize, k: usize) -> usize {
    2 + layer * PER_BLOCK + k
}

/// Parameter names and shapes in storage order.
pub fn param_layout(cfg: &LmConfig) -> Vec<(String, Vec<usize>)> {
    let (h, v) = (cfg.hidden, cfg.vocab);
    let mut out = vec![
        ("wte".to_string(), vec![v, h]),
        ("wpe".to_string(), vec![cfg.max_positions, h]),
    ];
    for l in 0..cfg.layers {
        let p = |n: &str| format!("h.{l}.{n}");
        out.extend([
            (p("ln1.g"), vec![h]),
            (p("ln1.b"), vec![h]),
            (p("attn.w_qkv"), vec![h, 3 * h]),
            (p("attn.b_qkv"), vec![3 * h]),
            (p("attn.w_o"), vec![h, h]),
            (p("attn.b_o"), vec![h]),
            (p("ln2.g"), vec![h]),
            (p("ln2.b"), vec![h]),
            (p("mlp.w_fc"), vec![h, 4 * h]),
            (p("mlp.b_fc"), vec![4 * h]),
            (p("mlp.w_proj"), vec![4 * h, h]),
            (p("mlp.b_proj"), vec![h]),
        ]);
    }
    out.push(("ln_f.g".to_string(), vec![h]));
    out.push(("ln_f.b".to_string(), vec![h]));
    if !cfg.tie_output_to_embedding {
        out.push(("w_out".to_string(), vec![v, h]));
    }
    out
}

/// Parameter tensors in [`param_layout`] order. Also used for gradients
/// and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct LmWeights<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> LmWeights<T> {
    pub fn zeros_like(other: &LmWeights<T>) -> Self {
        Self {
            tensors: other
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &LmWeights<T>) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v.f64() * v.f64())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel<T> {
    pub config: LmConfig,
    pub weights: LmWeights<T>,
}

/// Leaves of one model's parameters on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients accumulated on the tape, zero where none arrived.
    pub fn grads<T: Scalar>(&self, tape: &Tape<T>) -> LmWeights<T> {
        LmWeights {
            tensors: self
                .vars
                .iter()
                .map(|&v| {
                    tape.grad(v)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape().to_vec()))
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `[T, vocab]`.
    pub logits: Var,
    /// Final hidden states after the last layer norm, `[T, hidden]`.
    pub hidden: Var,
}

/// Per-layer key/value rows of the positions processed so far.
#[derive(Clone, Debug)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T> KvCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub struct StepOutput<T> {
    pub logits: Vec<T>,
    pub hidden: Vec<T>,
}

impl<T: Scalar> LanguageModel<T> {
    /// Normal(0, 0.02) weights, residual projections scaled by
    /// `1/sqrt(2·layers)`, zero biases and unit layer-norm gains.
    pub fn new_random(config: LmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let resid = 1.0 / (2.0 * config.layers as f64).sqrt();
        let tensors = param_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".g") {
                    Tensor::full(shape, T::one())
                } else if shape.len() == 1 {
                    Tensor::zeros(shape)
                } else {
                    let scale = if name.ends_with("w_o") || name.ends_with("w_proj") {
                        resid
                    } else {
                        1.0
                    };
                    Tensor::from_fn(shape, |_| T::c(normal.sample(&mut rng) * scale))
                }
            })
            .collect();
        Ok(Self {
            config,
            weights: LmWeights { tensors },
        })
    }

    /// All-zero weights with unit layer-norm gains: every next-token
    /// distribution is exactly uniform.
    pub fn uniform(config: LmConfig) -> Result<Self> {
        config.validate()?;
        let tensors = param_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".g") {
                    Tensor::full(shape, T::one())
                } else {
                    Tensor::zeros(shape)
                }
            })
            .collect();
        Ok(Self {
            config,
            weights: LmWeights { tensors },
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        param_layout(&self.config).into_iter().map(|(n, _)| n).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> LanguageModel<U> {
        LanguageModel {
            config: self.config.clone(),
            weights: LmWeights {
                tensors: self.weights.tensors.iter().map(Tensor::cast).collect(),
            },
        }
    }

    fn w(&self, i: usize) -> &Tensor<T> {
        &self.weights.tensors[i]
    }

    fn out_index(&self) -> usize {
        if self.config.tie_output_to_embedding {
            WTE
        } else {
            self.weights.tensors.len() - 1
        }
    }

    fn lnf(&self) -> usize {
        2 + self.config.layers * PER_BLOCK
    }

    pub fn check_length(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::Contract("empty token sequence".into()));
        }
        if len > self.config.max_positions {
            return Err(Error::Length {
                len,
                max: self.config.max_positions,
            });
        }
        Ok(())
    }

    /// Trainable leaves for every parameter.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.weights.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Constant leaves, for evaluation without gradients.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.weights.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        ids: &[u32],
        train: bool,
        rng: &mut R,
    ) -> Result<ForwardVars> {
        self.check_length(ids.len())?;
        let cfg = &self.config;
        let p = &params.vars;
        let t = ids.len();
        let (h, d) = (cfg.hidden, cfg.head_dim());
        let drop = if train { cfg.dropout } else { 0.0 };
        let eps = T::c(cfg.layer_norm_eps);
        let inv_sqrt_d = T::c(1.0 / (d as f64).sqrt());

        let tok = tape.embedding(p[WTE], ids)?;
        let pos = tape.slice(p[WPE], 0, 0, t)?;
        let mut x = tape.add(tok, pos)?;
        x = tape.dropout(x, drop, rng)?;

        for l in 0..cfg.layers {
            let a = tape.layer_norm(x, p[blk(l, LN1_G)], p[blk(l, LN1_B)], eps)?;
            let qkv = tape.matmul(a, p[blk(l, W_QKV)])?;
            let qkv = tape.add(qkv, p[blk(l, B_QKV)])?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let q = tape.slice(qkv, 1, hd * d, d)?;
                let k = tape.slice(qkv, 1, h + hd * d, d)?;
                let v = tape.slice(qkv, 1, 2 * h + hd * d, d)?;
                let kt = tape.transpose(k)?;
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, inv_sqrt_d);
                let scores = tape.causal_mask(scores)?;
                let att = tape.softmax(scores, 1)?;
                let att = tape.dropout(att, drop, rng)?;
                heads.push(tape.matmul(att, v)?);
            }
            let y = if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat(&heads, 1)?
            };
            let y = tape.matmul(y, p[blk(l, W_O)])?;
            let y = tape.add(y, p[blk(l, B_O)])?;
            let y = tape.dropout(y, drop, rng)?;
            x = tape.add(x, y)?;

            let m = tape.layer_norm(x, p[blk(l, LN2_G)], p[blk(l, LN2_B)], eps)?;
            let m = tape.matmul(m, p[blk(l, W_FC)])?;
            let m = tape.add(m, p[blk(l, B_FC)])?;
            let m = tape.gelu(m);
            let m = tape.matmul(m, p[blk(l, W_PROJ)])?;
            let m = tape.add(m, p[blk(l, B_PROJ)])?;
            let m = tape.dropout(m, drop, rng)?;
            x = tape.add(x, m)?;
        }
        let lnf = self.lnf();
        let hidden = tape.layer_norm(x, p[lnf], p[lnf + 1], eps)?;
        let wt = tape.transpose(p[self.out_index()])?;
        let logits = tape.matmul(hidden, wt)?;
        Ok(ForwardVars { logits, hidden })
    }

    /// Logits `[T, vocab]` and final hidden states `[T, hidden]` with
    /// dropout disabled.
    pub fn forward_eval(&self, ids: &[u32]) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &params, ids, false, &mut rng)?;
        Ok((tape.value(out.logits).clone(), tape.value(out.hidden).clone()))
    }

    pub fn new_cache(&self) -> KvCache<T> {
        KvCache {
            keys: vec![Vec::new(); self.config.layers],
            values: vec![Vec::new(); self.config.layers],
            len: 0,
        }
    }

    /// Processes one more token, reusing cached keys and values of the
    /// earlier positions. Dropout is off.
    pub fn step(&self, cache: &mut KvCache<T>, token: u32) -> Result<StepOutput<T>> {
        let cfg = &self.config;
        let pos = cache.len;
        self.check_length(pos + 1)?;
        if token as usize >= cfg.vocab {
            return Err(Error::Range {
                what: "token id",
                value: token as i64,
                min: 0,
                max: cfg.vocab as i64 - 1,
            });
        }
        let (h, d) = (cfg.hidden, cfg.head_dim());
        let eps = T::c(cfg.layer_norm_eps);
        let inv_sqrt_d = T::c(1.0 / (d as f64).sqrt());
        let (mut xh, mut rs) = (Vec::new(), Vec::new());

        let mut x: Vec<T> = self
            .w(WTE)
            .row(token as usize)
            .iter()
            .zip(self.w(WPE).row(pos))
            .map(|(&a, &b)| a + b)
            .collect();

        for l in 0..cfg.layers {
            let a = layer_norm_rows(
                &x,
                h,
                self.w(blk(l, LN1_G)).data(),
                self.w(blk(l, LN1_B)).data(),
                eps,
                &mut xh,
                &mut rs,
            );
            let mut qkv = self.w(blk(l, B_QKV)).data().to_vec();
            gemm(
                1,
                h,
                3 * h,
                &a,
                false,
                self.w(blk(l, W_QKV)).data(),
                false,
                &mut qkv,
                true,
            );
            cache.keys[l].extend_from_slice(&qkv[h..2 * h]);
            cache.values[l].extend_from_slice(&qkv[2 * h..]);
            let keys = &cache.keys[l];
            let values = &cache.values[l];
            let mut y = vec![T::zero(); h];
            let mut scores = vec![T::zero(); pos + 1];
            for hd in 0..cfg.heads {
                let q = &qkv[hd * d..(hd + 1) * d];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &keys[j * h + hd * d..j * h + (hd + 1) * d];
                    *s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * inv_sqrt_d;
                }
                softmax_rows(&mut scores, pos + 1);
                let out = &mut y[hd * d..(hd + 1) * d];
                for (j, &w) in scores.iter().enumerate() {
                    let v = &values[j * h + hd * d..j * h + (hd + 1) * d];
                    for (o, &vv) in out.iter_mut().zip(v) {
                        *o += w * vv;
                    }
                }
            }
            let mut o = self.w(blk(l, B_O)).data().to_vec();
            gemm(1, h, h, &y, false, self.w(blk(l, W_O)).data(), false, &mut o, true);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += *oi;
            }

            let m = layer_norm_rows(
                &x,
                h,
                self.w(blk(l, LN2_G)).data(),
                self.w(blk(l, LN2_B)).data(),
                eps,
                &mut xh,
                &mut rs,
            );
            let mut f = self.w(blk(l, B_FC)).data().to_vec();
            gemm(1, h, 4 * h, &m, false, self.w(blk(l, W_FC)).data(), false, &mut f, true);
            for v in f.iter_mut() {
                *v = gelu(*v);
            }
            let mut pr = self.w(blk(l, B_PROJ)).data().to_vec();
            gemm(
                1,
                4 * h,
                h,
                &f,
                false,
                self.w(blk(l, W_PROJ)).data(),
                false,
                &mut pr,
                true,
            );
            for (xi, pi) in x.iter_mut().zip(&pr) {
                *xi += *pi;
            }
        }
        cache.len += 1;
        let lnf = self.lnf();
        let hidden = layer_norm_rows(&x, h, self.w(lnf).data(), self.w(lnf + 1).data(), eps, &mut xh, &mut rs);
        let mut logits = vec![T::zero(); cfg.vocab];
        gemm(
            1,
            h,
            cfg.vocab,
            &hidden,
            false,
            self.w(self.out_index()).data(),
            true,
            &mut logits,
            false,
        );
        Ok(StepOutput { logits, hidden })
    }

    /// Runs `ids` through a fresh cache; returns the cache and the output of
    /// the last position.
    pub fn prefill(&self, ids: &[u32]) -> Result<(KvCache<T>, StepOutput<T>)> {
        self.check_length(ids.len())?;
        let mut cache = self.new_cache();
        let mut last = None;
        for &id in ids {
            last = Some(self.step(&mut cache, id)?);
        }
        Ok((cache, last.expect("non-empty")))
    }

    pub fn to_checkpoint(&self, role: ModelRole) -> Checkpoint<T> {
        Checkpoint {
            tensors: self
                .param_names()
                .into_iter()
                .zip(self.weights.tensors.iter().cloned())
                .collect(),
            meta: serde_json::json!({ "model_role": role, "config": self.config }),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<(Self, ModelRole)> {
        let meta: CheckpointMeta =
            serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Schema(format!("checkpoint metadata: {e}")))?;
        meta.config.validate()?;
        let layout = param_layout(&meta.config);
        if layout.len() != ck.tensors.len() {
            return Err(Error::Schema(format!(
                "checkpoint holds {} tensors, config needs {}",
                ck.tensors.len(),
                layout.len()
            )));
        }
        for ((name, shape), (cname, t)) in layout.iter().zip(&ck.tensors) {
            if name != cname || shape.as_slice() != t.shape() {
                return Err(Error::Schema(format!(
                    "checkpoint tensor {cname} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let model = Self {
            config: meta.config,
            weights: LmWeights {
                tensors: ck.tensors.iter().map(|(_, t)| t.clone()).collect(),
            },
        };
        Ok((model, meta.model_role))
    }

    /// Writes `<path>` (checkpoint) and `<path>.json` (config sidecar).
    pub fn save(&self, path: &Path, role: ModelRole) -> Result<()> {
        self.to_checkpoint(role).save(path)?;
        let sidecar = CheckpointMeta {
            model_role: role,
            config: self.config.clone(),
        };
        let side = sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<(Self, ModelRole)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model_role: ModelRole,
    config: LmConfig,
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LmConfig {
        LmConfig {
            layers: 2,
            hidden: 8,
            heads: 2,
            vocab: 11,
            max_positions: 16,
            dropout: 0.0,
            tie_output_to_embedding: true,
            layer_norm_eps: 1e-5,
        }
    }

    #[test]
    fn output_shape_and_length_limit() {
        let m = LanguageModel::<f32>::new_random(tiny(), 1).unwrap();
        let (logits, hidden) = m.forward_eval(&[1, 2, 3]).unwrap();
        assert_eq!(logits.shape(), &[3, 11]);
        assert_eq!(hidden.shape(), &[3, 8]);
        let long = vec![1; 17];
        assert!(matches!(m.forward_eval(&long), Err(Error::Length { len: 17, max: 16 })));
    }

    #[test]
    fn incremental_steps_match_full_forward() {
        let m = LanguageModel::<f64>::new_random(tiny(), 3).unwrap();
        let ids = [4, 1, 9, 9, 0, 7];
        let (logits, hidden) = m.forward_eval(&ids).unwrap();
        let mut cache = m.new_cache();
        for (p, &id) in ids.iter().enumerate() {
            let out = m.step(&mut cache, id).unwrap();
            for (a, b) in out.logits.iter().zip(logits.row(p)) {
                assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in out.hidden.iter().zip(hidden.row(p)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn untied_output_has_its_own_matrix() {
        let mut cfg = tiny();
        cfg.tie_output_to_embedding = false;
        let m = LanguageModel::<f32>::new_random(cfg, 0).unwrap();
        assert_eq!(m.param_names().last().unwrap(), "w_out");
        m.forward_eval(&[1, 2]).unwrap();
    }

    #[test]
    fn uniform_model_gives_uniform_logits() {
        let m = LanguageModel::<f64>::uniform(tiny()).unwrap();
        let (logits, _) = m.forward_eval(&[1, 5, 2]).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = LanguageModel::<f32>::new_random(tiny(), 5).unwrap();
        m.save(&path, ModelRole::Sentence).unwrap();
        let (back, role) = LanguageModel::<f32>::load(&path).unwrap();
        assert_eq!(role, ModelRole::Sentence);
        assert_eq!(back, m);
        assert!(sidecar_path(&path).exists());
    }
}
