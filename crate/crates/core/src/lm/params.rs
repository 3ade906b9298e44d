//! Flat parameter storage for the decoder.
//!
//! All weights live in one contiguous buffer; [`Layout`] maps tensor names
//! to ranges. The order below is also the checkpoint order:
//!
//! ```text
//! wte [V, d]   wpe [C, d]
//! per layer: ln1.g [d]  ln1.b [d]  attn.w_qkv [d, 3d]  attn.b_qkv [3d]
//!            attn.w_o [d, d]  attn.b_o [d]  ln2.g [d]  ln2.b [d]
//!            mlp.w_fc [d, 4d]  mlp.b_fc [4d]  mlp.w_proj [4d, d]  mlp.b_proj [d]
//! lnf.g [d]    lnf.b [d]    head.w [d, V]    head.b [V]
//! ```
//!
//! Matrices are row-major with the input dimension first (`x · W`).

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, Range, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{LmError, Result};
use crate::rng::Rng;

/// Element type the model can run in.
pub trait Scalar:
    LinalgScalar
    + ScalarOperand
    + Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Architecture fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context: usize,
}

impl Arch {
    /// Desk-scale default: d = 64, two layers, two heads, 256 positions.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            context: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LmError::Arch(m));
        if self.vocab_size < 6 {
            return bad(format!("vocab_size {} < 6", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 || self.context < 2 {
            return bad("need at least one layer and a context of 2".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "V={} d={} L={} H={} C={}",
            self.vocab_size, self.d_model, self.n_layers, self.n_heads, self.context
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_proj: Range<usize>,
    pub b_proj: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl Layout {
    pub fn new(arch: &Arch) -> Self {
        let (v, d, c) = (arch.vocab_size, arch.d_model, arch.context);
        let mut cur = Cursor(0);
        let wte = cur.take(v * d);
        let wpe = cur.take(c * d);
        let layers = (0..arch.n_layers)
            .map(|_| LayerLayout {
                ln1_g: cur.take(d),
                ln1_b: cur.take(d),
                w_qkv: cur.take(d * 3 * d),
                b_qkv: cur.take(3 * d),
                w_o: cur.take(d * d),
                b_o: cur.take(d),
                ln2_g: cur.take(d),
                ln2_b: cur.take(d),
                w_fc: cur.take(d * 4 * d),
                b_fc: cur.take(4 * d),
                w_proj: cur.take(4 * d * d),
                b_proj: cur.take(d),
            })
            .collect();
        let lnf_g = cur.take(d);
        let lnf_b = cur.take(d);
        let head_w = cur.take(d * v);
        let head_b = cur.take(v);
        Self {
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            total: cur.0,
        }
    }

    /// `(name, range)` for every tensor, in storage order.
    pub fn named(&self) -> Vec<(String, Range<usize>)> {
        let mut out = vec![
            ("wte".to_string(), self.wte.clone()),
            ("wpe".to_string(), self.wpe.clone()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, r) in [
                ("ln1.g", &l.ln1_g),
                ("ln1.b", &l.ln1_b),
                ("attn.w_qkv", &l.w_qkv),
                ("attn.b_qkv", &l.b_qkv),
                ("attn.w_o", &l.w_o),
                ("attn.b_o", &l.b_o),
                ("ln2.g", &l.ln2_g),
                ("ln2.b", &l.ln2_b),
                ("mlp.w_fc", &l.w_fc),
                ("mlp.b_fc", &l.b_fc),
                ("mlp.w_proj", &l.w_proj),
                ("mlp.b_proj", &l.b_proj),
            ] {
                out.push((format!("h{i}.{name}"), r.clone()));
            }
        }
        out.push(("lnf.g".into(), self.lnf_g.clone()));
        out.push(("lnf.b".into(), self.lnf_b.clone()));
        out.push(("head.w".into(), self.head_w.clone()));
        out.push(("head.b".into(), self.head_b.clone()));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Scalar = f32> {
    pub arch: Arch,
    pub data: Vec<F>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            data: vec![F::zero(); Layout::new(&arch).total],
        })
    }

    /// GPT-2 style init: N(0, 0.02) weights, residual projections scaled by
    /// `1/sqrt(2L)`, unit layer-norm gains, zero biases.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        Self::init_scaled(arch, seed, 0.02)
    }

    pub fn init_scaled(arch: Arch, seed: u64, std: f64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let layout = p.layout();
        let mut rng = Rng::derive(seed, "init");
        let resid_std = std / (2.0 * arch.n_layers as f64).sqrt();
        let mut fill = |data: &mut [F], r: &Range<usize>, s: f64| {
            for x in &mut data[r.clone()] {
                *x = F::from_f64(rng.normal() * s);
            }
        };
        fill(&mut p.data, &layout.wte, std);
        fill(&mut p.data, &layout.wpe, std);
        for l in &layout.layers {
            fill(&mut p.data, &l.w_qkv, std);
            fill(&mut p.data, &l.w_o, resid_std);
            fill(&mut p.data, &l.w_fc, std);
            fill(&mut p.data, &l.w_proj, resid_std);
        }
        fill(&mut p.data, &layout.head_w, std);
        for r in layout
            .layers
            .iter()
            .flat_map(|l| [&l.ln1_g, &l.ln2_g])
            .chain([&layout.lnf_g])
        {
            p.data[r.clone()].fill(F::one());
        }
        Ok(p)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.arch)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            arch: self.arch,
            data: self.data.iter().map(|x| G::from_f64(x.as_f64())).collect(),
        }
    }
}
