//! Layers built from graph primitives: affine maps, two-layer MLPs and
//! multi-head attention.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{ParamSpec, ParamStore};
use crate::numerics::tensor::Tensor;

/// `x W + b` on plain tensors.
pub fn linear_fwd(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 || x.cols() != w.shape()[0] || b.len() != w.shape()[1] {
        return Err(Error::Shape(format!(
            "linear: x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    x.matmul(w)?.add_row(b)
}

/// Softmax along the last axis.
pub fn softmax_fwd(x: &Tensor) -> Tensor {
    x.softmax_rows()
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn specs(prefix: &str, fan_in: usize, fan_out: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::weight(format!("{prefix}.w"), &[fan_in, fan_out]),
            ParamSpec::bias(format!("{prefix}.b"), &[fan_out]),
        ]
    }

    pub fn load(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Linear {
            w: g.param(store, &format!("{prefix}.w"))?,
            b: g.param(store, &format!("{prefix}.b"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let xw = g.matmul(x, self.w)?;
        g.add_row(xw, self.b)
    }
}

/// `Linear -> tanh -> Linear`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn specs(prefix: &str, fan_in: usize, hidden: usize, fan_out: usize) -> Vec<ParamSpec> {
        let mut v = Linear::specs(&format!("{prefix}.fc1"), fan_in, hidden);
        v.extend(Linear::specs(&format!("{prefix}.fc2"), hidden, fan_out));
        v
    }

    pub fn load(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Mlp {
            hidden: Linear::load(g, store, &format!("{prefix}.fc1"))?,
            out: Linear::load(g, store, &format!("{prefix}.fc2"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        let h = g.tanh(h);
        self.out.forward(g, h)
    }
}

/// Multi-head attention with query/key/value/output projections.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn specs(prefix: &str, dim: usize) -> Vec<ParamSpec> {
        ["q", "k", "v", "o"]
            .iter()
            .flat_map(|p| Linear::specs(&format!("{prefix}.{p}"), dim, dim))
            .collect()
    }

    pub fn load(g: &mut Graph, store: &ParamStore, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Attention {
            q: Linear::load(g, store, &format!("{prefix}.q"))?,
            k: Linear::load(g, store, &format!("{prefix}.k"))?,
            v: Linear::load(g, store, &format!("{prefix}.v"))?,
            out: Linear::load(g, store, &format!("{prefix}.o"))?,
            heads,
        })
    }

    /// Per head `softmax(Q K^T / sqrt(d_head)) V`, heads concatenated and
    /// projected. A `prior` over key tokens reweights the softmax
    /// multiplicatively (see [`Graph::softmax_with_prior`]).
    pub fn forward(
        &self,
        g: &mut Graph,
        queries: Var,
        keys: Var,
        values: Var,
        prior: Option<Var>,
    ) -> Result<Var> {
        let dim = g.value(self.q.w).cols();
        if self.heads == 0 || !dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dim {dim} is not divisible by {} heads",
                self.heads
            )));
        }
        if g.value(keys).rows() != g.value(values).rows() {
            return Err(Error::Shape("keys and values differ in token count".into()));
        }
        let head_dim = dim / self.heads;
        let q = self.q.forward(g, queries)?;
        let k = self.k.forward(g, keys)?;
        let v = self.v.forward(g, values)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim)?;
            let kh = g.slice_cols(k, h * head_dim, head_dim)?;
            let vh = g.slice_cols(v, h * head_dim, head_dim)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let weights = match prior {
                Some(p) => g.softmax_with_prior(scores, p)?,
                None => g.softmax(scores),
            };
            outs.push(g.matmul(weights, vh)?);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.out.forward(g, joined)
    }
}

/// Runs attention on plain tensors with the given parameter prefix.
pub fn attention_fwd(
    store: &ParamStore,
    prefix: &str,
    queries: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    heads: usize,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let attn = Attention::load(&mut g, store, prefix, heads)?;
    let q = g.input(queries.clone());
    let k = g.input(keys.clone());
    let v = g.input(values.clone());
    let out = attn.forward(&mut g, q, k, v, None)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::seeded_init;

    fn identity_attention(dim: usize) -> ParamStore {
        let mut s = seeded_init(&Attention::specs("att", dim), 0).unwrap();
        for p in ["q", "k", "v", "o"] {
            s.set(&format!("att.{p}.w"), Tensor::identity(dim)).unwrap();
        }
        s
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        let w = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]).unwrap();
        let b = Tensor::vector(vec![3.0, -1.0]);
        assert_eq!(linear_fwd(&x, &w, &b).unwrap().data(), &[4.0, 3.0]);
        let id = linear_fwd(&x, &Tensor::identity(2), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(id, x);
        let zero = linear_fwd(&Tensor::zeros(&[3, 2]), &w, &b).unwrap();
        assert_eq!(zero.data(), &[3.0, -1.0, 3.0, -1.0, 3.0, -1.0]);
        assert!(linear_fwd(&x, &Tensor::identity(3), &b).is_err());
    }

    #[test]
    fn softmax_examples() {
        let eq = softmax_fwd(&Tensor::vector(vec![0.5, 0.5, 0.5]));
        assert!(eq.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let sat = softmax_fwd(&Tensor::vector(vec![0.0, 1000.0, 1.0]));
        assert!(sat.data()[1] > 1.0 - 1e-9);
    }

    #[test]
    fn single_token_returns_its_value() {
        let s = identity_attention(4);
        let q = Tensor::from_rows(&[&[0.3, -1.0, 2.0, 0.1], &[5.0, 1.0, 0.0, -2.0]]).unwrap();
        let kv = Tensor::from_rows(&[&[0.7, 0.2, -0.4, 1.5]]).unwrap();
        let out = attention_fwd(&s, "att", &q, &kv, &kv, 2).unwrap();
        for r in 0..2 {
            assert_eq!(out.row(r), kv.row(0));
        }
    }

    #[test]
    fn identical_keys_split_evenly() {
        let s = identity_attention(2);
        let q = Tensor::from_rows(&[&[3.0, -7.0]]).unwrap();
        let k = Tensor::from_rows(&[&[1.0, 2.0], &[1.0, 2.0]]).unwrap();
        let v = Tensor::from_rows(&[&[4.0, 0.0], &[0.0, 2.0]]).unwrap();
        let out = attention_fwd(&s, "att", &q, &k, &v, 1).unwrap();
        assert!((out.at(0, 0) - 2.0).abs() < 1e-15);
        assert!((out.at(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_token_hand_computed() {
        // d = 2, one head; W_q = [[1,0],[0,1]], W_k = [[2,0],[0,1]], W_v = I, W_o = I
        let mut s = identity_attention(2);
        s.set(
            "att.k.w",
            Tensor::from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let q = Tensor::from_rows(&[&[1.0, 1.0]]).unwrap();
        let kv = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        // keys (2,0) and (0,1): scores 2/sqrt2 and 1/sqrt2
        let s0 = 2.0 / 2f64.sqrt();
        let s1 = 1.0 / 2f64.sqrt();
        let w0 = s0.exp() / (s0.exp() + s1.exp());
        let out = attention_fwd(&s, "att", &q, &kv, &kv, 1).unwrap();
        assert!((out.at(0, 0) - w0).abs() < 1e-15);
        assert!((out.at(0, 1) - (1.0 - w0)).abs() < 1e-15);
        assert!((w0 - 0.669_761_549_326_656_9).abs() < 1e-12);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let s = identity_attention(4);
        let t = Tensor::zeros(&[1, 4]);
        assert!(matches!(
            attention_fwd(&s, "att", &t, &t, &t, 3),
            Err(Error::Config(_))
        ));
    }
}
