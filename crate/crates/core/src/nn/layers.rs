use super::{trunc_normal, Grads, ParamId, ParamStore, Scalar};
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayD, ArrayView2, Axis, IxDyn, Zip};
use rand::Rng;

const INIT_STD: f64 = 0.02;

/// Affine map `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.push(
            format!("{name}.weight"),
            trunc_normal(&[input, output], INIT_STD, rng),
            true,
            true,
        );
        let b = store.push(
            format!("{name}.bias"),
            ArrayD::zeros(IxDyn(&[output])),
            true,
            false,
        );
        Linear {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward<F: Scalar>(&self, s: &ParamStore<F>, x: ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(&s.mat(self.w));
        y += &s.vector(self.b);
        y
    }

    /// Accumulates parameter gradients; returns `dL/dx` when asked.
    pub fn backward<F: Scalar>(
        &self,
        s: &ParamStore<F>,
        g: &mut Grads<F>,
        x: ArrayView2<F>,
        dy: ArrayView2<F>,
        need_dx: bool,
    ) -> Option<Array2<F>> {
        general_mat_mul(F::one(), &x.t(), &dy, F::one(), &mut g.mat_mut(self.w));
        let mut gb = g.vector_mut(self.b);
        gb += &dy.sum_axis(Axis(0));
        need_dx.then(|| dy.dot(&s.mat(self.w).t()))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

impl LayerNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, dim: usize) -> Self {
        let gamma = store.push(
            format!("{name}.weight"),
            ArrayD::ones(IxDyn(&[dim])),
            true,
            false,
        );
        let beta = store.push(
            format!("{name}.bias"),
            ArrayD::zeros(IxDyn(&[dim])),
            true,
            false,
        );
        LayerNorm {
            gamma,
            beta,
            dim,
            eps: 1e-6,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        s: &ParamStore<F>,
        x: ArrayView2<F>,
    ) -> (Array2<F>, LayerNormCache<F>) {
        let n = F::lit(self.dim as f64);
        let eps = F::lit(self.eps);
        let mut xhat = x.to_owned();
        let mut rstd = Array1::zeros(x.nrows());
        Zip::from(xhat.rows_mut())
            .and(&mut rstd)
            .for_each(|mut row, r| {
                let mean = row.sum() / n;
                row.mapv_inplace(|v| v - mean);
                let var = row.iter().map(|&v| v * v).sum::<F>() / n;
                *r = F::one() / (var + eps).sqrt();
                let k = *r;
                row.mapv_inplace(|v| v * k);
            });
        let mut y = &xhat * &s.vector(self.gamma);
        y += &s.vector(self.beta);
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward<F: Scalar>(
        &self,
        s: &ParamStore<F>,
        g: &mut Grads<F>,
        cache: &LayerNormCache<F>,
        dy: ArrayView2<F>,
    ) -> Array2<F> {
        {
            let mut gg = g.vector_mut(self.gamma);
            gg += &(&dy * &cache.xhat).sum_axis(Axis(0));
        }
        {
            let mut gb = g.vector_mut(self.beta);
            gb += &dy.sum_axis(Axis(0));
        }
        let n = F::lit(self.dim as f64);
        let mut dx = &dy * &s.vector(self.gamma);
        Zip::from(dx.rows_mut())
            .and(cache.xhat.rows())
            .and(&cache.rstd)
            .for_each(|mut d, xh, &r| {
                let m1 = d.sum() / n;
                let m2 = d.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>() / n;
                Zip::from(&mut d).and(&xh).for_each(|dv, &xv| {
                    *dv = r * (*dv - m1 - xv * m2);
                });
            });
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU, evaluated as `v * sigmoid(2u)` since
/// `(1 + tanh u) / 2 = sigmoid(2u)`; one `exp` is much cheaper than `tanh`.
pub fn gelu<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    let c2 = F::lit(2.0 * GELU_C);
    let a = F::lit(GELU_A);
    x.mapv(|v| v / (F::one() + (-c2 * (v + a * v * v * v)).exp()))
}

pub fn gelu_backward<F: Scalar>(x: &Array2<F>, dy: ArrayView2<F>) -> Array2<F> {
    let c2 = F::lit(2.0 * GELU_C);
    let a = F::lit(GELU_A);
    let a3 = F::lit(3.0 * GELU_A);
    let mut out = Array2::zeros(x.raw_dim());
    Zip::from(&mut out).and(x).and(dy).for_each(|o, &v, &d| {
        let s = F::one() / (F::one() + (-c2 * (v + a * v * v * v)).exp());
        *o = d * (s + v * s * (F::one() - s) * c2 * (F::one() + a3 * v * v));
    });
    out
}

/// Row-wise softmax in place.
pub fn softmax_rows<F: Scalar>(x: &mut Array2<F>) {
    for mut row in x.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Multi-head self-attention over `batch` independent sequences stacked
/// row-wise: input has shape `(batch * seq, dim)`.
#[derive(Debug, Clone)]
pub struct Attention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    input: Array2<F>,
    qkv: Array2<F>,
    probs: Vec<Array2<F>>,
    context: Array2<F>,
    seq: usize,
}

impl Attention {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Attention {
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, rng),
            proj: Linear::new(store, &format!("{name}.proj"), dim, dim, rng),
            heads,
            dim,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        s: &ParamStore<F>,
        input: Array2<F>,
        seq: usize,
    ) -> (Array2<F>, AttentionCache<F>) {
        let rows = input.nrows();
        assert_eq!(rows % seq, 0);
        let batch = rows / seq;
        let d = self.dim;
        let dh = d / self.heads;
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let qkv = self.qkv.forward(s, input.view());
        let mut context = Array2::zeros((rows, d));
        let mut probs = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            let r = b * seq..(b + 1) * seq;
            for h in 0..self.heads {
                let c = h * dh..(h + 1) * dh;
                let q = qkv.slice(s![r.clone(), c.clone()]);
                let k = qkv.slice(s![r.clone(), d + c.start..d + c.end]);
                let v = qkv.slice(s![r.clone(), 2 * d + c.start..2 * d + c.end]);
                let mut p = q.dot(&k.t());
                p.mapv_inplace(|x| x * scale);
                softmax_rows(&mut p);
                let o = p.dot(&v);
                context.slice_mut(s![r.clone(), c]).assign(&o);
                probs.push(p);
            }
        }
        let out = self.proj.forward(s, context.view());
        (
            out,
            AttentionCache {
                input,
                qkv,
                probs,
                context,
                seq,
            },
        )
    }

    pub fn backward<F: Scalar>(
        &self,
        s: &ParamStore<F>,
        g: &mut Grads<F>,
        cache: &AttentionCache<F>,
        dy: ArrayView2<F>,
    ) -> Array2<F> {
        let seq = cache.seq;
        let rows = cache.input.nrows();
        let batch = rows / seq;
        let d = self.dim;
        let dh = d / self.heads;
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let dctx = self
            .proj
            .backward(s, g, cache.context.view(), dy, true)
            .expect("dx requested");
        let mut dqkv = Array2::zeros((rows, 3 * d));
        let qkv = &cache.qkv;
        for b in 0..batch {
            let r = b * seq..(b + 1) * seq;
            for h in 0..self.heads {
                let c = h * dh..(h + 1) * dh;
                let kc = d + c.start..d + c.end;
                let vc = 2 * d + c.start..2 * d + c.end;
                let p = &cache.probs[b * self.heads + h];
                let q = qkv.slice(s![r.clone(), c.clone()]);
                let k = qkv.slice(s![r.clone(), kc.clone()]);
                let v = qkv.slice(s![r.clone(), vc.clone()]);
                let dout = dctx.slice(s![r.clone(), c.clone()]);
                let dv = p.t().dot(&dout);
                let mut dp = dout.dot(&v.t());
                Zip::from(dp.rows_mut()).and(p.rows()).for_each(|mut dr, pr| {
                    let dot = dr.iter().zip(pr.iter()).map(|(&a, &b)| a * b).sum::<F>();
                    Zip::from(&mut dr).and(&pr).for_each(|x, &pv| {
                        *x = pv * (*x - dot) * scale;
                    });
                });
                let dq = dp.dot(&k);
                let dk = dp.t().dot(&q);
                dqkv.slice_mut(s![r.clone(), c]).assign(&dq);
                dqkv.slice_mut(s![r.clone(), kc]).assign(&dk);
                dqkv.slice_mut(s![r.clone(), vc]).assign(&dv);
            }
        }
        self.qkv
            .backward(s, g, cache.input.view(), dqkv.view(), true)
            .expect("dx requested")
    }
}

/// Pre-norm transformer block: attention and MLP, each behind a residual.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    ln1: LayerNormCache<F>,
    attn: AttentionCache<F>,
    ln2: LayerNormCache<F>,
    h2: Array2<F>,
    pre: Array2<F>,
    act: Array2<F>,
}

impl Block {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: f64,
        rng: &mut R,
    ) -> Self {
        let hidden = ((dim as f64) * mlp_ratio).round() as usize;
        Block {
            ln1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), dim, hidden, rng),
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), hidden, dim, rng),
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        s: &ParamStore<F>,
        x: Array2<F>,
        seq: usize,
    ) -> (Array2<F>, BlockCache<F>) {
        let (h1, ln1) = self.ln1.forward(s, x.view());
        let (a, attn) = self.attn.forward(s, h1, seq);
        let x2 = x + a;
        let (h2, ln2) = self.ln2.forward(s, x2.view());
        let pre = self.fc1.forward(s, h2.view());
        let act = gelu(&pre);
        let m = self.fc2.forward(s, act.view());
        let y = x2 + m;
        (
            y,
            BlockCache {
                ln1,
                attn,
                ln2,
                h2,
                pre,
                act,
            },
        )
    }

    pub fn backward<F: Scalar>(
        &self,
        s: &ParamStore<F>,
        g: &mut Grads<F>,
        cache: &BlockCache<F>,
        dy: Array2<F>,
    ) -> Array2<F> {
        let dact = self
            .fc2
            .backward(s, g, cache.act.view(), dy.view(), true)
            .expect("dx requested");
        let dpre = gelu_backward(&cache.pre, dact.view());
        let dh2 = self
            .fc1
            .backward(s, g, cache.h2.view(), dpre.view(), true)
            .expect("dx requested");
        let dx2 = dy + self.ln2.backward(s, g, &cache.ln2, dh2.view());
        let dh1 = self.attn.backward(s, g, &cache.attn, dx2.view());
        dx2 + self.ln1.backward(s, g, &cache.ln1, dh1.view())
    }
}

/// Stack of blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct TransformerCache<F> {
    blocks: Vec<BlockCache<F>>,
    norm: LayerNormCache<F>,
}

impl Transformer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        dim: usize,
        depth: usize,
        heads: usize,
        mlp_ratio: f64,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..depth)
            .map(|i| Block::new(store, &format!("{name}.blocks.{i}"), dim, heads, mlp_ratio, rng))
            .collect();
        Transformer {
            blocks,
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        s: &ParamStore<F>,
        mut x: Array2<F>,
        seq: usize,
    ) -> (Array2<F>, TransformerCache<F>) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(s, x, seq);
            caches.push(c);
            x = y;
        }
        let (y, norm) = self.norm.forward(s, x.view());
        (
            y,
            TransformerCache {
                blocks: caches,
                norm,
            },
        )
    }

    pub fn backward<F: Scalar>(
        &self,
        s: &ParamStore<F>,
        g: &mut Grads<F>,
        cache: &TransformerCache<F>,
        dy: ArrayView2<F>,
    ) -> Array2<F> {
        let mut dx = self.norm.backward(s, g, &cache.norm, dy);
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dx = b.backward(s, g, c, dx);
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    /// Sum of `out * probe` is a scalar whose gradient wrt `x` is checked
    /// against central differences.
    fn check_input_grad<M>(x: &Array2<f64>, probe: &Array2<f64>, mut f: M, analytic: &Array2<f64>)
    where
        M: FnMut(&Array2<f64>) -> Array2<f64>,
    {
        let h = 1e-6;
        for idx in [(0, 0), (1, 2), (x.nrows() - 1, x.ncols() - 1), (2, 1)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = ((&f(&xp) * probe).sum() - (&f(&xm) * probe).sum()) / (2.0 * h);
            let a = analytic[idx];
            assert!(
                (fd - a).abs() <= 1e-6 * (1.0 + a.abs()),
                "at {idx:?}: fd {fd} vs analytic {a}"
            );
        }
    }

    fn random(shape: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn layernorm_gradient() {
        let mut s = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut s, "ln", 6);
        s.params_mut()[0].value = trunc_normal(&[6], 1.0, &mut seeded(9));
        let x = random((4, 6), 1);
        let probe = random((4, 6), 2);
        let mut g = s.zeros_like();
        let (_, c) = ln.forward(&s, x.view());
        let dx = ln.backward(&s, &mut g, &c, probe.view());
        check_input_grad(&x, &probe, |x| ln.forward(&s, x.view()).0, &dx);
    }

    #[test]
    fn gelu_gradient() {
        let x = random((3, 5), 3) * 3.0;
        let probe = random((3, 5), 4);
        let dx = gelu_backward(&x, probe.view());
        check_input_grad(&x, &probe, gelu, &dx);
    }

    #[test]
    fn gelu_matches_tanh_form() {
        let x = Array2::from_shape_fn((1, 81), |(_, j)| j as f64 / 4.0 - 10.0);
        let y = gelu(&x);
        for (&v, &g) in x.iter().zip(&y) {
            let want = 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh());
            assert!((g - want).abs() <= 1e-12, "{v}: {g} vs {want}");
        }
    }

    #[test]
    fn attention_gradient() {
        let mut rng = seeded(5);
        let mut s = ParamStore::<f64>::new();
        let attn = Attention::new(&mut s, "a", 6, 2, &mut rng);
        for p in s.params_mut() {
            p.value = trunc_normal(p.value.shape(), 0.5, &mut rng);
        }
        let x = random((8, 6), 6);
        let probe = random((8, 6), 7);
        let mut g = s.zeros_like();
        let (_, c) = attn.forward(&s, x.clone(), 4);
        let dx = attn.backward(&s, &mut g, &c, probe.view());
        check_input_grad(&x, &probe, |x| attn.forward(&s, x.clone(), 4).0, &dx);
    }

    #[test]
    fn attention_sequences_are_independent() {
        let mut rng = seeded(5);
        let mut s = ParamStore::<f64>::new();
        let attn = Attention::new(&mut s, "a", 4, 2, &mut rng);
        let x = random((6, 4), 8);
        let (joint, _) = attn.forward(&s, x.clone(), 3);
        let (first, _) = attn.forward(&s, x.slice(s![0..3, ..]).to_owned(), 3);
        assert!((&joint.slice(s![0..3, ..]) - &first).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn block_parameter_gradient() {
        let mut rng = seeded(10);
        let mut s = ParamStore::<f64>::new();
        let t = Transformer::new(&mut s, "t", 4, 2, 2, 2.0, &mut rng);
        for p in s.params_mut() {
            p.value = trunc_normal(p.value.shape(), 0.4, &mut rng);
        }
        let x = random((6, 4), 11);
        let probe = random((6, 4), 12);
        let mut g = s.zeros_like();
        let (_, c) = t.forward(&s, x.clone(), 3);
        t.backward(&s, &mut g, &c, probe.view());
        let h = 1e-6;
        for pi in 0..s.len() {
            let n = s.params()[pi].value.len();
            for j in [0, n / 2, n - 1] {
                let mut sp = s.clone();
                sp.params_mut()[pi].value.as_slice_mut().unwrap()[j] += h;
                let mut sm = s.clone();
                sm.params_mut()[pi].value.as_slice_mut().unwrap()[j] -= h;
                let fp = (&t.forward(&sp, x.clone(), 3).0 * &probe).sum();
                let fm = (&t.forward(&sm, x.clone(), 3).0 * &probe).sum();
                let fd = (fp - fm) / (2.0 * h);
                let a = g.tensors()[pi].as_slice().unwrap()[j];
                assert!(
                    (fd - a).abs() <= 1e-6 * (1.0 + a.abs()),
                    "{}[{j}]: fd {fd} vs {a}",
                    s.params()[pi].name
                );
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = random((3, 7), 13) * 50.0;
        softmax_rows(&mut x);
        for r in x.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }
}
