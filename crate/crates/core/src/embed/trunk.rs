use ndarray::{s, Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};

use super::layers::{gelu, layer_norm, softmax_rows};
use super::{patchify, EncoderConfig, Input, Modality};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

#[derive(Debug, Clone, PartialEq)]
pub enum InputMap {
    /// Patch vectors (`patch_dim`) to hidden size through `x·w + b`.
    Patch { w: Array2<f64>, b: Array1<f64> },
    /// Token embedding table, `vocab_size × c`.
    Table { table: Array2<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Block {
    /// Every parameter in serialization order.
    pub fn params(&self) -> [&[f64]; 16] {
        [
            self.ln1_g.as_slice().unwrap(),
            self.ln1_b.as_slice().unwrap(),
            self.wq.as_slice().unwrap(),
            self.bq.as_slice().unwrap(),
            self.wk.as_slice().unwrap(),
            self.bk.as_slice().unwrap(),
            self.wv.as_slice().unwrap(),
            self.bv.as_slice().unwrap(),
            self.wo.as_slice().unwrap(),
            self.bo.as_slice().unwrap(),
            self.ln2_g.as_slice().unwrap(),
            self.ln2_b.as_slice().unwrap(),
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 16] {
        [
            self.ln1_g.as_slice_mut().unwrap(),
            self.ln1_b.as_slice_mut().unwrap(),
            self.wq.as_slice_mut().unwrap(),
            self.bq.as_slice_mut().unwrap(),
            self.wk.as_slice_mut().unwrap(),
            self.bk.as_slice_mut().unwrap(),
            self.wv.as_slice_mut().unwrap(),
            self.bv.as_slice_mut().unwrap(),
            self.wo.as_slice_mut().unwrap(),
            self.bo.as_slice_mut().unwrap(),
            self.ln2_g.as_slice_mut().unwrap(),
            self.ln2_b.as_slice_mut().unwrap(),
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }

    fn normed(&self, h: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>, cfg: &EncoderConfig) -> Array2<f64> {
        if cfg.layer_norm {
            layer_norm(h, g, b, cfg.ln_epsilon)
        } else {
            h.clone()
        }
    }

    /// Per-head attention weights (`n × n`, rows sum to one).
    pub fn attention_weights(&self, h: &Array2<f64>, cfg: &EncoderConfig) -> Vec<Array2<f64>> {
        let x = self.normed(h, &self.ln1_g, &self.ln1_b, cfg);
        let q = x.dot(&self.wq) + &self.bq;
        let k = x.dot(&self.wk) + &self.bk;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        (0..cfg.heads)
            .map(|hd| {
                let cols = s![.., hd * dh..(hd + 1) * dh];
                let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut a);
                a
            })
            .collect()
    }

    /// Pre-norm attention and MLP sublayers, each with a residual connection.
    pub fn forward(&self, h: &Array2<f64>, cfg: &EncoderConfig) -> Array2<f64> {
        let dh = cfg.head_dim();
        let x = self.normed(h, &self.ln1_g, &self.ln1_b, cfg);
        let v = x.dot(&self.wv) + &self.bv;
        let mut heads_out = Array2::<f64>::zeros(h.raw_dim());
        for (hd, a) in self.attention_weights(h, cfg).iter().enumerate() {
            let cols = s![.., hd * dh..(hd + 1) * dh];
            heads_out.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        }
        let h1 = h + &(heads_out.dot(&self.wo) + &self.bo);
        let x2 = self.normed(&h1, &self.ln2_g, &self.ln2_b, cfg);
        let m = (x2.dot(&self.w1) + &self.b1).mapv(gelu);
        h1 + &(m.dot(&self.w2) + &self.b2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    pub cfg: EncoderConfig,
    pub modality: Modality,
    pub input: InputMap,
    /// Learned position vectors, `max_seq_len × c`.
    pub pos: Array2<f64>,
    pub blocks: Vec<Block>,
}

fn gaussian(rows: usize, cols: usize, normal: &Normal<f64>, r: &mut impl rand::Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(r))
}

impl Trunk {
    /// Seeded init: matrices `N(0, init_scale²)`, biases zero, norm gains one.
    /// Draw order is input map, positions, then each block's `wq wk wv wo w1 w2`.
    pub fn init(cfg: &EncoderConfig, modality: Modality) -> Trunk {
        let stream = match modality {
            Modality::Image => 1,
            Modality::Text => 2,
        };
        let mut r = rng(derive_seed(cfg.seed, stream));
        let normal = Normal::new(0.0, cfg.init_scale).expect("finite init scale");
        let c = cfg.embed_dim;
        let hidden = cfg.hidden_dim();
        let input = match modality {
            Modality::Image => InputMap::Patch {
                w: gaussian(cfg.patch_dim(), c, &normal, &mut r),
                b: Array1::zeros(c),
            },
            Modality::Text => InputMap::Table {
                table: gaussian(cfg.vocab_size, c, &normal, &mut r),
            },
        };
        let pos = gaussian(cfg.max_seq_len, c, &normal, &mut r);
        let blocks = (0..cfg.depth)
            .map(|_| Block {
                ln1_g: Array1::ones(c),
                ln1_b: Array1::zeros(c),
                wq: gaussian(c, c, &normal, &mut r),
                bq: Array1::zeros(c),
                wk: gaussian(c, c, &normal, &mut r),
                bk: Array1::zeros(c),
                wv: gaussian(c, c, &normal, &mut r),
                bv: Array1::zeros(c),
                wo: gaussian(c, c, &normal, &mut r),
                bo: Array1::zeros(c),
                ln2_g: Array1::ones(c),
                ln2_b: Array1::zeros(c),
                w1: gaussian(c, hidden, &normal, &mut r),
                b1: Array1::zeros(hidden),
                w2: gaussian(hidden, c, &normal, &mut r),
                b2: Array1::zeros(c),
            })
            .collect();
        Trunk {
            cfg: cfg.clone(),
            modality,
            input,
            pos,
            blocks,
        }
    }

    /// Every weight array in checkpoint order: input map, positions, blocks.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = match &self.input {
            InputMap::Patch { w, b } => vec![w.as_slice().unwrap(), b.as_slice().unwrap()],
            InputMap::Table { table } => vec![table.as_slice().unwrap()],
        };
        out.push(self.pos.as_slice().unwrap());
        for b in &self.blocks {
            out.extend(b.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = match &mut self.input {
            InputMap::Patch { w, b } => vec![w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()],
            InputMap::Table { table } => vec![table.as_slice_mut().unwrap()],
        };
        out.push(self.pos.as_slice_mut().unwrap());
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out
    }

    /// `h0 = Lin(e) + PE`, one row per sequence element.
    pub fn embed_input(&self, input: Input<'_>) -> Result<Array2<f64>> {
        if input.modality() != self.modality {
            return Err(Error::Dimension(format!(
                "{:?} input given to {:?} trunk",
                input.modality(),
                self.modality
            )));
        }
        let lin = match (&self.input, input) {
            (InputMap::Patch { w, b }, Input::Image(img)) => patchify(img, self.cfg.patch_size)?.dot(w) + b,
            (InputMap::Table { table }, Input::Text(seq)) => {
                let mut out = Array2::zeros((seq.len(), self.cfg.embed_dim));
                for (row, &id) in seq.ids().iter().enumerate() {
                    if id >= self.cfg.vocab_size {
                        return Err(Error::Dimension(format!("token id {id} outside vocabulary")));
                    }
                    out.row_mut(row).assign(&table.row(id));
                }
                out
            }
            _ => unreachable!("modality checked above"),
        };
        let n = lin.nrows();
        if n > self.cfg.max_seq_len {
            return Err(Error::Dimension(format!(
                "sequence of {n} elements exceeds max_seq_len {}",
                self.cfg.max_seq_len
            )));
        }
        Ok(lin + &self.pos.slice(s![..n, ..]))
    }

    /// Final hidden states, `n × c`.
    pub fn hidden(&self, input: Input<'_>) -> Result<Array2<f64>> {
        let mut h = self.embed_input(input)?;
        for block in &self.blocks {
            h = block.forward(&h, &self.cfg);
        }
        Ok(h)
    }

    /// Global average pool of the final hidden states.
    pub fn features(&self, input: Input<'_>) -> Result<Vec<f64>> {
        let h = self.hidden(input)?;
        Ok(h.mean_axis(Axis(0)).expect("non-empty sequence").to_vec())
    }
}

/// Linear projection `E = W·g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w: Array2<f64>,
}

impl Head {
    pub fn identity(c: usize) -> Head {
        Head { w: Array2::eye(c) }
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.w.dot(&ndarray::ArrayView1::from(g)).to_vec()
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub image: Head,
    pub text: Head,
}

impl Heads {
    pub fn identity(c: usize) -> Heads {
        Heads {
            image: Head::identity(c),
            text: Head::identity(c),
        }
    }

    pub fn get(&self, modality: Modality) -> &Head {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Encoders, ImageSample, TokenSequence};
    use rand::Rng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            patch_size: 4,
            embed_dim: 16,
            depth: 2,
            heads: 4,
            max_seq_len: 16,
            vocab_size: 64,
            seed: 11,
            ..Default::default()
        }
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ImageSample {
        let mut r = rng(seed);
        ImageSample::new(h, w, (0..h * w).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    fn zero_outputs(trunk: &mut Trunk) {
        for b in &mut trunk.blocks {
            b.wo.fill(0.0);
            b.w2.fill(0.0);
        }
    }

    #[test]
    fn zero_input_map_and_positions() {
        let cfg = small_cfg();
        let mut trunk = Trunk::init(&cfg, Modality::Image);
        if let InputMap::Patch { w, .. } = &mut trunk.input {
            w.fill(0.0);
        }
        trunk.pos.fill(0.0);
        let h0 = trunk.embed_input(Input::Image(&random_image(8, 8, 1))).unwrap();
        assert!(h0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_input_map_passes_patch_through() {
        let cfg = EncoderConfig {
            patch_size: 4,
            embed_dim: 16,
            heads: 4,
            ..small_cfg()
        };
        let mut trunk = Trunk::init(&cfg, Modality::Image);
        trunk.input = InputMap::Patch {
            w: Array2::eye(16),
            b: Array1::zeros(16),
        };
        trunk.pos.fill(0.0);
        let img = random_image(4, 4, 2);
        let h0 = trunk.embed_input(Input::Image(&img)).unwrap();
        assert_eq!(h0.row(0).to_vec(), img.pixels());
    }

    #[test]
    fn zeroed_output_weights_make_blocks_identity() {
        let cfg = small_cfg();
        let mut trunk = Trunk::init(&cfg, Modality::Image);
        zero_outputs(&mut trunk);
        let img = random_image(8, 8, 3);
        let h0 = trunk.embed_input(Input::Image(&img)).unwrap();
        let h = trunk.hidden(Input::Image(&img)).unwrap();
        assert_eq!(h, h0);

        // without layer norm the pooled features are the mean of h0
        let cfg = EncoderConfig {
            layer_norm: false,
            ..small_cfg()
        };
        let mut trunk = Trunk::init(&cfg, Modality::Image);
        zero_outputs(&mut trunk);
        let h0 = trunk.embed_input(Input::Image(&img)).unwrap();
        let g = trunk.features(Input::Image(&img)).unwrap();
        let mean = h0.mean_axis(Axis(0)).unwrap().to_vec();
        assert_eq!(g, mean);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = small_cfg();
        let trunk = Trunk::init(&cfg, Modality::Text);
        let seq = TokenSequence::from_ids(vec![3, 7, 9, 1, 60]).unwrap();
        let h = trunk.embed_input(Input::Text(&seq)).unwrap();
        for a in trunk.blocks[0].attention_weights(&h, &cfg) {
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_position_attention_is_value_path() {
        let cfg = small_cfg();
        let trunk = Trunk::init(&cfg, Modality::Text);
        let seq = TokenSequence::from_ids(vec![5]).unwrap();
        let h = trunk.embed_input(Input::Text(&seq)).unwrap();
        let b = &trunk.blocks[0];
        for a in b.attention_weights(&h, &cfg) {
            assert_eq!(a.dim(), (1, 1));
            assert_eq!(a[[0, 0]], 1.0);
        }
        let x = layer_norm(&h, &b.ln1_g, &b.ln1_b, cfg.ln_epsilon);
        let v = x.dot(&b.wv) + &b.bv;
        let h1 = &h + &(v.dot(&b.wo) + &b.bo);
        let x2 = layer_norm(&h1, &b.ln2_g, &b.ln2_b, cfg.ln_epsilon);
        let expected = &h1 + &((x2.dot(&b.w1) + &b.b1).mapv(gelu).dot(&b.w2) + &b.b2);
        let got = b.forward(&h, &cfg);
        for (g, e) in got.iter().zip(expected.iter()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn blocks_are_permutation_equivariant() {
        let cfg = small_cfg();
        let trunk = Trunk::init(&cfg, Modality::Text);
        let mut r = rng(99);
        let n = 6;
        let h = Array2::from_shape_simple_fn((n, cfg.embed_dim), || r.random::<f64>() - 0.5);
        let perm = [3, 0, 5, 1, 4, 2];
        let hp = h.select(Axis(0), &perm);
        for block in &trunk.blocks {
            let out = block.forward(&h, &cfg);
            let out_p = block.forward(&hp, &cfg);
            let expected = out.select(Axis(0), &perm);
            for (a, b) in out_p.iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_init_and_forward() {
        let cfg = small_cfg();
        let a = Encoders::init(&cfg).unwrap();
        let b = Encoders::init(&cfg).unwrap();
        assert_eq!(a, b);
        let img = random_image(8, 8, 4);
        assert_eq!(
            a.encode(Input::Image(&img)).unwrap().vector,
            b.encode(Input::Image(&img)).unwrap().vector
        );
        let other = Encoders::init(&EncoderConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.image, other.image);
        assert_ne!(a.image.pos, a.text.pos);
    }

    #[test]
    fn encode_shapes_and_head_linearity() {
        let cfg = small_cfg();
        let mut enc = Encoders::init(&cfg).unwrap();
        let img = random_image(8, 12, 5);
        let e1 = enc.encode(Input::Image(&img)).unwrap();
        assert_eq!(e1.vector.len(), cfg.embed_dim);
        assert_eq!(e1.modality, Modality::Image);
        assert_eq!(e1.vector, enc.encode(Input::Image(&img.clone())).unwrap().vector);
        enc.heads.image.w = Array2::eye(cfg.embed_dim) * 2.0;
        let e2 = enc.encode(Input::Image(&img)).unwrap();
        for (a, b) in e1.vector.iter().zip(&e2.vector) {
            assert_eq!(2.0 * a, *b);
        }
        let seq = TokenSequence::from_text("mild left effusion", &cfg);
        let t = enc.encode(Input::Text(&seq)).unwrap();
        assert_eq!(t.vector.len(), cfg.embed_dim);
        assert!(t.vector.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn overlong_and_mismatched_inputs() {
        let cfg = small_cfg();
        let enc = Encoders::init(&cfg).unwrap();
        // 20x20 image with patch 4 -> 25 patches > 16
        let img = random_image(20, 20, 6);
        assert!(matches!(enc.features(Input::Image(&img)), Err(Error::Dimension(_))));
        let seq = TokenSequence::from_ids(vec![1; 17]).unwrap();
        assert!(enc.features(Input::Text(&seq)).is_err());
        let seq = TokenSequence::from_ids(vec![64]).unwrap();
        assert!(enc.features(Input::Text(&seq)).is_err());
        assert!(enc.image.embed_input(Input::Text(&TokenSequence::from_ids(vec![1]).unwrap())).is_err());
    }
}
