use super::encoder::{EncoderConfig, PosEmbedKind};
use super::sincos_table;
use crate::error::{Error, Result};
use crate::nn::{trunc_normal, Grads, Linear, ParamId, ParamStore, Scalar, Transformer, TransformerCache};
use ndarray::{Array2, ArrayView2};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub width: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
}

impl PredictorConfig {
    /// Depth 4 at half the encoder width.
    pub fn for_encoder(enc: &EncoderConfig) -> Self {
        PredictorConfig {
            width: enc.embed_dim / 2,
            depth: 4,
            num_heads: enc.num_heads,
            mlp_ratio: enc.mlp_ratio,
        }
    }

    pub fn validate(&self, enc: &EncoderConfig) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.num_heads == 0 {
            return Err(Error::Config("predictor sizes must be positive".into()));
        }
        if self.width > enc.embed_dim {
            return Err(Error::Config(format!(
                "predictor width {} exceeds encoder width {}",
                self.width, enc.embed_dim
            )));
        }
        if self.width % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "predictor width {} is not divisible by {} heads",
                self.width, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Maps source latents to latents at requested target positions.
///
/// The sequence fed to the predictor trunk is `[sources..., queries...]`
/// where each query is a shared mask token plus the positional row of the
/// position to predict; the CLS query (when requested) comes first among the
/// queries. Only query outputs are returned, projected back to the encoder
/// width.
#[derive(Debug, Clone)]
pub struct Predictor {
    config: PredictorConfig,
    encoder_dim: usize,
    cls_position: usize,
    input: Linear,
    pos: ParamId,
    mask_token: ParamId,
    cls_query: ParamId,
    trunk: Transformer,
    output: Linear,
}

#[derive(Debug)]
pub struct PredictorCache<F> {
    source: Array2<F>,
    positions: Vec<usize>,
    batch: usize,
    n_source: usize,
    n_query: usize,
    predict_cls: bool,
    trunk: TransformerCache<F>,
    query_out: Array2<F>,
}

impl Predictor {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        config: &PredictorConfig,
        encoder: &EncoderConfig,
        rng: &mut R,
    ) -> Result<(Predictor, ParamStore<F>)> {
        config.validate(encoder)?;
        let w = config.width;
        let rows = encoder.grid.num_patches() + 1;
        let mut store = ParamStore::new();
        let input = Linear::new(&mut store, "predictor.embed", encoder.embed_dim, w, rng);
        let pos = match encoder.pos_embed {
            PosEmbedKind::Learnable => store.push(
                "predictor.pos_embed",
                trunc_normal(&[rows, w], 0.02, rng),
                true,
                false,
            ),
            PosEmbedKind::Sinusoidal => store.push(
                "predictor.pos_embed",
                sincos_table(encoder.grid.side(), w)?.mapv(F::lit),
                false,
                false,
            ),
        };
        let mask_token = store.push("predictor.mask_token", trunc_normal(&[w], 0.02, rng), true, false);
        let cls_query = store.push("predictor.cls_query", trunc_normal(&[w], 0.02, rng), true, false);
        let trunk = Transformer::new(
            &mut store,
            "predictor",
            w,
            config.depth,
            config.num_heads,
            config.mlp_ratio,
            rng,
        );
        let output = Linear::new(&mut store, "predictor.proj", w, encoder.embed_dim, rng);
        Ok((
            Predictor {
                config: config.clone(),
                encoder_dim: encoder.embed_dim,
                cls_position: encoder.grid.num_patches(),
                input,
                pos,
                mask_token,
                cls_query,
                trunk,
                output,
            },
            store,
        ))
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    /// Single-sample prediction. `source_positions` gives the positional row
    /// of every source latent (`L²` for CLS).
    pub fn predict<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        source: ArrayView2<F>,
        source_positions: &[usize],
        target_positions: &[usize],
        predict_cls: bool,
    ) -> Result<Array2<F>> {
        Ok(self
            .forward_batch(
                store,
                source.to_owned(),
                &[source_positions],
                &[target_positions],
                predict_cls,
            )?
            .0)
    }

    /// Batched prediction; every sample must share source and target counts.
    pub fn forward_batch<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        source: Array2<F>,
        source_positions: &[&[usize]],
        target_positions: &[&[usize]],
        predict_cls: bool,
    ) -> Result<(Array2<F>, PredictorCache<F>)> {
        let batch = source_positions.len();
        if batch == 0 || target_positions.len() != batch {
            return Err(Error::Shape("predictor batch lists disagree".into()));
        }
        if source.ncols() != self.encoder_dim {
            return Err(Error::Shape(format!(
                "source latents have width {}, predictor expects {}",
                source.ncols(),
                self.encoder_dim
            )));
        }
        let n_source = source_positions[0].len();
        let n_targets = target_positions[0].len();
        if source_positions.iter().any(|p| p.len() != n_source)
            || target_positions.iter().any(|p| p.len() != n_targets)
        {
            return Err(Error::Shape("batched samples must share token counts".into()));
        }
        if source.nrows() != batch * n_source {
            return Err(Error::Shape(format!(
                "{} source rows for {batch} samples of {n_source} tokens",
                source.nrows()
            )));
        }
        if n_targets == 0 && !predict_cls {
            return Err(Error::InvalidArgument("nothing to predict".into()));
        }
        let limit = self.cls_position;
        if source_positions.iter().flat_map(|p| p.iter()).any(|&p| p > limit)
            || target_positions.iter().flat_map(|p| p.iter()).any(|&p| p >= limit)
        {
            return Err(Error::InvalidArgument("position out of range".into()));
        }

        let n_query = n_targets + predict_cls as usize;
        let seq = n_source + n_query;
        let w = self.config.width;
        let projected = self.input.forward(store, source.view());
        let pos = store.mat(self.pos);
        let mask = store.vector(self.mask_token);
        let clsq = store.vector(self.cls_query);
        let mut x = Array2::<F>::zeros((batch * seq, w));
        let mut positions = Vec::with_capacity(batch * seq);
        for b in 0..batch {
            for (j, &p) in source_positions[b].iter().enumerate() {
                let mut r = x.row_mut(b * seq + j);
                r.assign(&projected.row(b * n_source + j));
                r += &pos.row(p);
                positions.push(p);
            }
            let q0 = b * seq + n_source;
            if predict_cls {
                let mut r = x.row_mut(q0);
                r.assign(&clsq);
                r += &pos.row(self.cls_position);
                positions.push(self.cls_position);
            }
            for (j, &p) in target_positions[b].iter().enumerate() {
                let mut r = x.row_mut(q0 + predict_cls as usize + j);
                r.assign(&mask);
                r += &pos.row(p);
                positions.push(p);
            }
        }
        let (h, trunk) = self.trunk.forward(store, x, seq);
        let mut query_out = Array2::<F>::zeros((batch * n_query, w));
        for b in 0..batch {
            for j in 0..n_query {
                query_out
                    .row_mut(b * n_query + j)
                    .assign(&h.row(b * seq + n_source + j));
            }
        }
        let out = self.output.forward(store, query_out.view());
        Ok((
            out,
            PredictorCache {
                source,
                positions,
                batch,
                n_source,
                n_query,
                predict_cls,
                trunk,
                query_out,
            },
        ))
    }

    /// Accumulates parameter gradients and returns `dL/d(source latents)`.
    pub fn backward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        grads: &mut Grads<F>,
        cache: &PredictorCache<F>,
        d_out: ArrayView2<F>,
    ) -> Array2<F> {
        let (ns, nq) = (cache.n_source, cache.n_query);
        let seq = ns + nq;
        let batch = cache.batch;
        let w = self.config.width;
        let d_query = self
            .output
            .backward(store, grads, cache.query_out.view(), d_out, true)
            .expect("dx requested");
        let mut d_seq = Array2::<F>::zeros((batch * seq, w));
        for b in 0..batch {
            for j in 0..nq {
                d_seq
                    .row_mut(b * seq + ns + j)
                    .assign(&d_query.row(b * nq + j));
            }
        }
        let dx = self.trunk.backward(store, grads, &cache.trunk, d_seq.view());
        {
            let mut gpos = grads.mat_mut(self.pos);
            for (row, &p) in cache.positions.iter().enumerate() {
                let mut g = gpos.row_mut(p);
                g += &dx.row(row);
            }
        }
        let mut d_proj = Array2::<F>::zeros((batch * ns, w));
        {
            let mut gmask = grads.vector_mut(self.mask_token);
            for b in 0..batch {
                for j in 0..ns {
                    d_proj.row_mut(b * ns + j).assign(&dx.row(b * seq + j));
                }
                let first_target = b * seq + ns + cache.predict_cls as usize;
                for r in first_target..(b + 1) * seq {
                    gmask += &dx.row(r);
                }
            }
        }
        if cache.predict_cls {
            let mut gcls = grads.vector_mut(self.cls_query);
            for b in 0..batch {
                gcls += &dx.row(b * seq + ns);
            }
        }
        if ns == 0 {
            return Array2::zeros((0, self.encoder_dim));
        }
        self.input
            .backward(store, grads, cache.source.view(), d_proj.view(), true)
            .expect("dx requested")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::rng::seeded;

    fn setup() -> (Predictor, ParamStore<f64>, EncoderConfig) {
        let enc = EncoderConfig::micro(GridSpec::new(4, 2).unwrap());
        let cfg = PredictorConfig::for_encoder(&enc);
        let (p, s) = Predictor::new::<f64, _>(&cfg, &enc, &mut seeded(3)).unwrap();
        (p, s, enc)
    }

    fn latents(rows: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_simple_fn((rows, 32), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn cls_only_prediction() {
        let (p, s, _) = setup();
        let out = p.predict(&s, latents(3, 0).view(), &[16, 0, 1], &[], true).unwrap();
        assert_eq!(out.dim(), (1, 32));
    }

    #[test]
    fn target_count_and_finiteness() {
        let (p, s, _) = setup();
        let targets: Vec<usize> = (4..16).collect();
        let out = p
            .predict(&s, latents(4, 1).view(), &[0, 1, 2, 3], &targets, false)
            .unwrap();
        assert_eq!(out.nrows(), 12);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!(out.rows().into_iter().all(|r| r.dot(&r) > 0.0));
    }

    #[test]
    fn rejects_mismatches() {
        let (p, s, _) = setup();
        let wrong = Array2::<f64>::zeros((2, 16));
        assert!(p.predict(&s, wrong.view(), &[0, 1], &[2], false).is_err());
        assert!(p.predict(&s, latents(2, 0).view(), &[0, 1], &[], false).is_err());
        assert!(p.predict(&s, latents(2, 0).view(), &[0, 1], &[16], false).is_err());
    }

    #[test]
    fn width_cannot_exceed_encoder() {
        let enc = EncoderConfig::micro(GridSpec::new(4, 2).unwrap());
        let cfg = PredictorConfig {
            width: 64,
            ..PredictorConfig::for_encoder(&enc)
        };
        assert!(Predictor::new::<f32, _>(&cfg, &enc, &mut seeded(0)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (p, s, _) = setup();
        let src = latents(3, 5);
        let sp = [16usize, 2, 7];
        let tp = [0usize, 9, 15];
        let mut rng = seeded(6);
        let probe = Array2::from_shape_simple_fn((4, 32), || rng.random_range(-1.0..1.0));
        let f = |st: &ParamStore<f64>, x: &Array2<f64>| {
            (&p.predict(st, x.view(), &sp, &tp, true).unwrap() * &probe).sum()
        };
        let (_, cache) = p.forward_batch(&s, src.clone(), &[&sp], &[&tp], true).unwrap();
        let mut g = s.zeros_like();
        let dsrc = p.backward(&s, &mut g, &cache, probe.view());
        let h = 1e-6;
        for (pi, prm) in s.params().iter().enumerate() {
            let n = prm.value.len();
            for j in [0, n / 2, n - 1] {
                let mut a = s.clone();
                a.params_mut()[pi].value.as_slice_mut().unwrap()[j] += h;
                let mut b = s.clone();
                b.params_mut()[pi].value.as_slice_mut().unwrap()[j] -= h;
                let fd = (f(&a, &src) - f(&b, &src)) / (2.0 * h);
                let an = g.tensors()[pi].as_slice().unwrap()[j];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "{}[{j}] {fd} vs {an}", prm.name);
            }
        }
        for idx in [(0, 0), (1, 5), (2, 31)] {
            let mut a = src.clone();
            a[idx] += h;
            let mut b = src.clone();
            b[idx] -= h;
            let fd = (f(&s, &a) - f(&s, &b)) / (2.0 * h);
            assert!((fd - dsrc[idx]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }
}
