//! Probe heads. Both run in `f64`; features arrive already standardized.

use crate::nn::{gelu, gelu_backward, trunc_normal, Grads, Linear, ParamId, ParamStore};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

/// Cross-attention from one learnable query onto the input tokens, then an
/// output projection back to the token width and a linear task head.
///
/// Per head `h` the scores are `x_i · (W_k,h q_h) / sqrt(d_h)`, and the pooled
/// value is `(Σ_i a_i x_i) W_v,h + b_v,h`. Folding the key projection into
/// the query keeps the cost linear in the token count.
#[derive(Debug, Clone)]
pub struct AttentivePooler {
    pub dim: usize,
    pub heads: usize,
    pub query: ParamId,
    pub key: ParamId,
    pub value: Linear,
    pub proj: Linear,
    pub head: Linear,
}

#[derive(Debug)]
pub struct PoolerCache {
    attn: Vec<Vec<Array1<f64>>>,
    xbar: Vec<Vec<Array1<f64>>>,
    z: Array2<f64>,
    o: Array2<f64>,
}

impl AttentivePooler {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f64>,
        dim: usize,
        heads: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let query = store.push("pooler.query", trunc_normal(&[dim], 0.02, rng), true, false);
        let key = store.push("pooler.key", trunc_normal(&[dim, dim], 0.02, rng), true, true);
        let value = Linear::new(store, "pooler.value", dim, dim, rng);
        let proj = Linear::new(store, "pooler.proj", dim, dim, rng);
        let head = Linear::new(store, "pooler.head", dim, outputs, rng);
        AttentivePooler {
            dim,
            heads,
            query,
            key,
            value,
            proj,
            head,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Attention weights per head and the concatenated pooled values.
    fn attend(&self, store: &ParamStore<f64>, x: ArrayView2<f64>) -> (Vec<Array1<f64>>, Vec<Array1<f64>>, Array1<f64>) {
        let dh = self.head_dim();
        let q = store.vector(self.query);
        let wk = store.mat(self.key);
        let wv = store.mat(self.value.w);
        let bv = store.vector(self.value.b);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn = Vec::with_capacity(self.heads);
        let mut xbar = Vec::with_capacity(self.heads);
        let mut z = Array1::zeros(self.dim);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let kq = wk.slice(cols).dot(&q.slice(s![h * dh..(h + 1) * dh]));
            let mut a = x.dot(&kq) * scale;
            let max = a.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            a.mapv_inplace(|v| (v - max).exp());
            let sum = a.sum();
            a /= sum;
            let xb = x.t().dot(&a);
            let v = xb.dot(&wv.slice(cols)) + bv.slice(s![h * dh..(h + 1) * dh]);
            z.slice_mut(s![h * dh..(h + 1) * dh]).assign(&v);
            attn.push(a);
            xbar.push(xb);
        }
        (attn, xbar, z)
    }

    /// The pooled vector (token width) for one sample.
    pub fn pool(&self, store: &ParamStore<f64>, tokens: ArrayView2<f64>) -> Array1<f64> {
        let (_, _, z) = self.attend(store, tokens);
        let z = z.insert_axis(Axis(0));
        self.proj.forward(store, z.view()).row(0).to_owned()
    }

    pub fn forward(&self, store: &ParamStore<f64>, xs: &[Array2<f64>]) -> (Array2<f64>, PoolerCache) {
        let mut z = Array2::zeros((xs.len(), self.dim));
        let mut attn = Vec::with_capacity(xs.len());
        let mut xbar = Vec::with_capacity(xs.len());
        for (i, x) in xs.iter().enumerate() {
            let (a, xb, zi) = self.attend(store, x.view());
            z.row_mut(i).assign(&zi);
            attn.push(a);
            xbar.push(xb);
        }
        let o = self.proj.forward(store, z.view());
        let y = self.head.forward(store, o.view());
        (y, PoolerCache { attn, xbar, z, o })
    }

    pub fn backward(
        &self,
        store: &ParamStore<f64>,
        grads: &mut Grads<f64>,
        xs: &[Array2<f64>],
        cache: &PoolerCache,
        dy: ArrayView2<f64>,
    ) {
        let d_o = self
            .head
            .backward(store, grads, cache.o.view(), dy, true)
            .expect("dx");
        let dz = self
            .proj
            .backward(store, grads, cache.z.view(), d_o.view(), true)
            .expect("dx");
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = store.vector(self.query).to_owned();
        let wk = store.mat(self.key).to_owned();
        let wv = store.mat(self.value.w).to_owned();
        for (i, x) in xs.iter().enumerate() {
            for h in 0..self.heads {
                let hs = s![h * dh..(h + 1) * dh];
                let cols = s![.., h * dh..(h + 1) * dh];
                let dv = dz.slice(s![i, h * dh..(h + 1) * dh]);
                let xb = &cache.xbar[i][h];
                let a = &cache.attn[i][h];
                {
                    let mut gw = grads.mat_mut(self.value.w);
                    let mut gcols = gw.slice_mut(cols);
                    for (r, &xv) in xb.iter().enumerate() {
                        gcols.row_mut(r).scaled_add(xv, &dv);
                    }
                }
                {
                    let mut gb = grads.vector_mut(self.value.b);
                    let mut gbs = gb.slice_mut(hs);
                    gbs += &dv;
                }
                let dxb = wv.slice(cols).dot(&dv);
                let da = x.dot(&dxb);
                let dot = a.dot(&da);
                let ds = a * &(da - dot);
                let dkq = x.t().dot(&ds) * scale;
                let qh = q.slice(hs);
                {
                    let mut gk = grads.mat_mut(self.key);
                    let mut gcols = gk.slice_mut(cols);
                    for (r, &kv) in dkq.iter().enumerate() {
                        gcols.row_mut(r).scaled_add(kv, &qh);
                    }
                }
                let dq = wk.slice(cols).t().dot(&dkq);
                let mut gq = grads.vector_mut(self.query);
                let mut gqs = gq.slice_mut(hs);
                gqs += &dq;
            }
        }
    }
}

/// One hidden layer with GELU.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug)]
pub struct MlpCache {
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl MlpHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f64>,
        dim: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        MlpHead {
            hidden: Linear::new(store, "mlp.hidden", dim, hidden, rng),
            out: Linear::new(store, "mlp.out", hidden, outputs, rng),
        }
    }

    pub fn forward(&self, store: &ParamStore<f64>, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let pre = self.hidden.forward(store, x);
        let act = gelu(&pre);
        let y = self.out.forward(store, act.view());
        (y, MlpCache { pre, act })
    }

    pub fn backward(
        &self,
        store: &ParamStore<f64>,
        grads: &mut Grads<f64>,
        x: ArrayView2<f64>,
        cache: &MlpCache,
        dy: ArrayView2<f64>,
    ) {
        let d_act = self
            .out
            .backward(store, grads, cache.act.view(), dy, true)
            .expect("dx");
        let d_pre = gelu_backward(&cache.pre, d_act.view());
        self.hidden.backward(store, grads, x, d_pre.view(), false);
    }
}
