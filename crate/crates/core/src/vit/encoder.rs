use super::sincos_table;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::image::Image;
use crate::nn::{trunc_normal, Grads, Linear, ParamId, ParamStore, Scalar, Transformer, TransformerCache};
use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PosEmbedKind {
    #[default]
    Learnable,
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub grid: GridSpec,
    pub channels: usize,
    pub pos_embed: PosEmbedKind,
}

impl EncoderConfig {
    /// ViT-Tiny: width 192, 6 blocks, 3 heads.
    pub fn tiny(grid: GridSpec) -> Self {
        EncoderConfig {
            embed_dim: 192,
            depth: 6,
            num_heads: 3,
            mlp_ratio: 4.0,
            grid,
            channels: 3,
            pos_embed: PosEmbedKind::Learnable,
        }
    }

    /// ViT-Small: width 384, 12 blocks, 6 heads.
    pub fn small(grid: GridSpec) -> Self {
        EncoderConfig {
            embed_dim: 384,
            depth: 12,
            num_heads: 6,
            ..Self::tiny(grid)
        }
    }

    /// Width 32, 2 blocks: fast enough for unit tests and smoke runs.
    pub fn micro(grid: GridSpec) -> Self {
        EncoderConfig {
            embed_dim: 32,
            depth: 2,
            num_heads: 2,
            mlp_ratio: 2.0,
            ..Self::tiny(grid)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.depth == 0 || self.num_heads == 0 || self.channels == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.grid.patch_size() * self.grid.patch_size()
    }
}

/// Encoder layout. Parameter values live in a separate [`ParamStore`], so the
/// student and the EMA teacher share one layout.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    patch_embed: Linear,
    pos: ParamId,
    cls: ParamId,
    trunk: Transformer,
}

#[derive(Debug)]
pub struct EncoderCache<F> {
    patches: Array2<F>,
    /// Positional row of every token in sequence order, for every sample.
    positions: Vec<usize>,
    /// Sequence-row of every patch token (rows without a patch are CLS).
    patch_rows: Vec<usize>,
    trunk: TransformerCache<F>,
}

impl Encoder {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        config: &EncoderConfig,
        rng: &mut R,
    ) -> Result<(Encoder, ParamStore<F>)> {
        config.validate()?;
        let d = config.embed_dim;
        let rows = config.grid.num_patches() + 1;
        let mut store = ParamStore::new();
        let patch_embed = Linear::new(&mut store, "patch_embed", config.patch_dim(), d, rng);
        let pos = match config.pos_embed {
            PosEmbedKind::Learnable => {
                store.push("pos_embed", trunc_normal(&[rows, d], 0.02, rng), true, false)
            }
            PosEmbedKind::Sinusoidal => store.push(
                "pos_embed",
                sincos_table(config.grid.side(), d)?.mapv(F::lit),
                false,
                false,
            ),
        };
        let cls = store.push("cls_token", trunc_normal(&[d], 0.02, rng), true, false);
        let trunk = Transformer::new(
            &mut store,
            "encoder",
            d,
            config.depth,
            config.num_heads,
            config.mlp_ratio,
            rng,
        );
        Ok((
            Encoder {
                config: config.clone(),
                patch_embed,
                pos,
                cls,
                trunk,
            },
            store,
        ))
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Positional-table row reserved for the CLS token.
    pub fn cls_position(&self) -> usize {
        self.config.grid.num_patches()
    }

    pub fn pos_param(&self) -> ParamId {
        self.pos
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let n = self.config.grid.image_size();
        if image.channels != self.config.channels || image.height != n || image.width != n {
            return Err(Error::Shape(format!(
                "image is {}x{}x{}, encoder expects {}x{n}x{n}",
                image.channels, image.height, image.width, self.config.channels
            )));
        }
        image.check_normalized()
    }

    fn check_indices(&self, indices: &[usize]) -> Result<()> {
        let n = self.config.grid.num_patches();
        let mut seen = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "patch index {i} out of range for {n} patches"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!("patch index {i} listed twice")));
            }
        }
        Ok(())
    }

    fn write_patch<F: Scalar>(&self, image: &Image, index: usize, out: &mut [F]) {
        let p = self.config.grid.patch_size();
        let (r, c) = self.config.grid.row_col(index);
        let mut k = 0;
        for ch in 0..image.channels {
            for py in 0..p {
                let base = (ch * image.height + r * p + py) * image.width + c * p;
                for v in &image.data[base..base + p] {
                    out[k] = F::lit(*v as f64);
                    k += 1;
                }
            }
        }
    }

    /// Encodes one image's token subset. Output rows follow the input order,
    /// with CLS first when requested.
    pub fn encode<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        image: &Image,
        indices: &[usize],
        include_cls: bool,
    ) -> Result<Array2<F>> {
        Ok(self.forward_batch(store, &[image], &[indices], include_cls)?.0)
    }

    /// Encodes a batch whose samples all carry the same number of patches.
    /// Output has `batch * seq` rows, sample-major.
    pub fn forward_batch<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        images: &[&Image],
        indices: &[&[usize]],
        include_cls: bool,
    ) -> Result<(Array2<F>, EncoderCache<F>)> {
        if images.len() != indices.len() || images.is_empty() {
            return Err(Error::Shape(format!(
                "{} images for {} index lists",
                images.len(),
                indices.len()
            )));
        }
        let n_patches = indices[0].len();
        if indices.iter().any(|ix| ix.len() != n_patches) {
            return Err(Error::Shape("batched samples must share a patch count".into()));
        }
        if n_patches == 0 && !include_cls {
            return Err(Error::InvalidArgument("nothing to encode".into()));
        }
        for (img, ix) in images.iter().zip(indices) {
            self.check_image(img)?;
            self.check_indices(ix)?;
        }
        let batch = images.len();
        let d = self.config.embed_dim;
        let seq = n_patches + include_cls as usize;
        let pd = self.config.patch_dim();

        let mut patches = Array2::<F>::zeros((batch * n_patches, pd));
        let mut positions = Vec::with_capacity(batch * seq);
        let mut patch_rows = Vec::with_capacity(batch * n_patches);
        for (b, (img, ix)) in images.iter().zip(indices).enumerate() {
            if include_cls {
                positions.push(self.cls_position());
            }
            for (j, &i) in ix.iter().enumerate() {
                let mut row = patches.row_mut(b * n_patches + j);
                self.write_patch(img, i, row.as_slice_mut().expect("contiguous row"));
                positions.push(i);
                patch_rows.push(b * seq + include_cls as usize + j);
            }
        }
        let projected = self.patch_embed.forward(store, patches.view());
        let pos = store.mat(self.pos);
        let cls = store.vector(self.cls);
        let mut x = Array2::<F>::zeros((batch * seq, d));
        let mut next_patch = 0;
        for (row, &p) in positions.iter().enumerate() {
            let mut xr = x.row_mut(row);
            xr.assign(&pos.row(p));
            if p == self.cls_position() {
                xr += &cls;
            } else {
                xr += &projected.row(next_patch);
                next_patch += 1;
            }
        }
        let (out, trunk) = self.trunk.forward(store, x, seq);
        Ok((
            out,
            EncoderCache {
                patches,
                positions,
                patch_rows,
                trunk,
            },
        ))
    }

    /// Accumulates parameter gradients for `d_out` (same shape as the
    /// forward output).
    pub fn backward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        grads: &mut Grads<F>,
        cache: &EncoderCache<F>,
        d_out: ArrayView2<F>,
    ) {
        let dx = self.trunk.backward(store, grads, &cache.trunk, d_out);
        {
            let mut gpos = grads.mat_mut(self.pos);
            for (row, &p) in cache.positions.iter().enumerate() {
                let mut gr = gpos.row_mut(p);
                gr += &dx.row(row);
            }
        }
        {
            let mut gcls = grads.vector_mut(self.cls);
            for (row, &p) in cache.positions.iter().enumerate() {
                if p == self.cls_position() {
                    gcls += &dx.row(row);
                }
            }
        }
        let mut d_proj = Array2::<F>::zeros((cache.patch_rows.len(), self.config.embed_dim));
        for (j, &row) in cache.patch_rows.iter().enumerate() {
            d_proj.row_mut(j).assign(&dx.row(row));
        }
        if !cache.patch_rows.is_empty() {
            self.patch_embed
                .backward(store, grads, cache.patches.view(), d_proj.view(), false);
        }
    }

    /// All patches plus CLS, split into `(cls, patches)`.
    pub fn encode_full<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        image: &Image,
    ) -> Result<(ndarray::Array1<F>, Array2<F>)> {
        let all: Vec<usize> = (0..self.config.grid.num_patches()).collect();
        let out = self.encode(store, image, &all, true)?;
        let cls = out.row(0).to_owned();
        let patches = out.slice(s![1.., ..]).to_owned();
        Ok((cls, patches))
    }
}
