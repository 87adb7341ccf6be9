//! Model parameters: embeddings, per-head attention projections, output
//! projections, two-stage feed-forward blocks, and the vocabulary readout.
//!
//! Parameters are immutable after construction and safe to share across
//! threads. The weights file starts with the magic string `MINIVLM1`,
//! followed by the dims (layers, heads, d_model, vocab, max_seq) as
//! little-endian u64, then every weight array row-major as little-endian
//! f64 in declaration order. The feed-forward width is structural:
//! `d_ff = d_model / 2`; the per-head width is `d_head = d_model / heads`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"MINIVLM1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("forward pass needs at least one token")]
    EmptySequence,
    #[error("token id {id} out of vocabulary range {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("ablation plan targets head L{layer}H{head} outside model dims {layers}x{heads}")]
    PlanTargetsOutOfRange {
        layer: usize,
        head: usize,
        layers: usize,
        heads: usize,
    },
    #[error("planted construction infeasible: {0}")]
    ConstructionInfeasible(String),
    #[error("weights io: {0}")]
    WeightsIo(#[from] std::io::Error),
    #[error("weights format: {0}")]
    WeightsFormat(String),
}

#[derive(Debug, Clone)]
pub struct HeadWeights {
    /// d_model × d_head
    pub w_q: Array2<f64>,
    /// d_model × d_head
    pub w_k: Array2<f64>,
    /// d_model × d_head
    pub w_v: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub heads: Vec<HeadWeights>,
    /// d_model × d_model, applied to the concatenated head outputs
    pub w_o: Array2<f64>,
    /// d_model × d_ff
    pub ff_w1: Array2<f64>,
    pub ff_b1: Array1<f64>,
    /// d_ff × d_model
    pub ff_w2: Array2<f64>,
    pub ff_b2: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab: usize,
    pub max_seq: usize,
}

impl ModelDims {
    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn d_ff(&self) -> usize {
        self.d_model / 2
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    dims: ModelDims,
    /// vocab × d_model
    pub(crate) token_embed: Array2<f64>,
    /// max_seq × d_model, learned-constant absolute positions
    pub(crate) pos_embed: Array2<f64>,
    pub(crate) blocks: Vec<LayerWeights>,
    /// d_model × vocab
    pub(crate) w_out: Array2<f64>,
}

impl ModelParams {
    pub fn new(
        dims: ModelDims,
        token_embed: Array2<f64>,
        pos_embed: Array2<f64>,
        blocks: Vec<LayerWeights>,
        w_out: Array2<f64>,
    ) -> Result<Self, ModelError> {
        let params = Self {
            dims,
            token_embed,
            pos_embed,
            blocks,
            w_out,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn layers(&self) -> usize {
        self.dims.layers
    }

    pub fn heads(&self) -> usize {
        self.dims.heads
    }

    pub fn d_model(&self) -> usize {
        self.dims.d_model
    }

    pub fn d_head(&self) -> usize {
        self.dims.d_head()
    }

    pub fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    pub fn max_seq(&self) -> usize {
        self.dims.max_seq
    }

    fn validate(&self) -> Result<(), ModelError> {
        let d = &self.dims;
        if d.heads == 0 || d.d_model % d.heads != 0 {
            return Err(ModelError::WeightsFormat(format!(
                "d_model {} not divisible by heads {}",
                d.d_model, d.heads
            )));
        }
        if d.d_model % 2 != 0 {
            return Err(ModelError::WeightsFormat(
                "d_model must be even for the structural d_ff = d_model/2".to_string(),
            ));
        }
        let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(ModelError::WeightsFormat(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )))
            }
        };
        expect(
            "token_embed",
            self.token_embed.dim(),
            (d.vocab, d.d_model),
        )?;
        expect("pos_embed", self.pos_embed.dim(), (d.max_seq, d.d_model))?;
        if self.blocks.len() != d.layers {
            return Err(ModelError::WeightsFormat(format!(
                "expected {} layers, found {}",
                d.layers,
                self.blocks.len()
            )));
        }
        for (l, block) in self.blocks.iter().enumerate() {
            if block.heads.len() != d.heads {
                return Err(ModelError::WeightsFormat(format!(
                    "layer {l} has {} heads, expected {}",
                    block.heads.len(),
                    d.heads
                )));
            }
            for (h, head) in block.heads.iter().enumerate() {
                let name = format!("L{l}H{h}");
                expect(&format!("{name}.w_q"), head.w_q.dim(), (d.d_model, d.d_head()))?;
                expect(&format!("{name}.w_k"), head.w_k.dim(), (d.d_model, d.d_head()))?;
                expect(&format!("{name}.w_v"), head.w_v.dim(), (d.d_model, d.d_head()))?;
            }
            expect(
                &format!("layer {l}.w_o"),
                block.w_o.dim(),
                (d.d_model, d.d_model),
            )?;
            expect(
                &format!("layer {l}.ff_w1"),
                block.ff_w1.dim(),
                (d.d_model, d.d_ff()),
            )?;
            expect(
                &format!("layer {l}.ff_w2"),
                block.ff_w2.dim(),
                (d.d_ff(), d.d_model),
            )?;
            if block.ff_b1.len() != d.d_ff() || block.ff_b2.len() != d.d_model {
                return Err(ModelError::WeightsFormat(format!(
                    "layer {l} feed-forward bias lengths are wrong"
                )));
            }
        }
        expect("w_out", self.w_out.dim(), (d.d_model, d.vocab))?;
        let finite = self.iter_arrays().all(|a| a.iter().all(|x| x.is_finite()))
            && self
                .iter_biases()
                .all(|b| b.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(ModelError::WeightsFormat(
                "weights contain non-finite entries".to_string(),
            ));
        }
        Ok(())
    }

    fn iter_arrays(&self) -> impl Iterator<Item = &Array2<f64>> {
        let per_block = self.blocks.iter().flat_map(|b| {
            b.heads
                .iter()
                .flat_map(|h| [&h.w_q, &h.w_k, &h.w_v])
                .chain([&b.w_o, &b.ff_w1, &b.ff_w2])
        });
        [&self.token_embed, &self.pos_embed]
            .into_iter()
            .chain(per_block)
            .chain([&self.w_out])
    }

    fn iter_biases(&self) -> impl Iterator<Item = &Array1<f64>> {
        self.blocks.iter().flat_map(|b| [&b.ff_b1, &b.ff_b2])
    }

    /// All-zero parameters; the forward pass of this model produces uniform
    /// next-token distributions.
    pub fn zeros(dims: ModelDims) -> Self {
        let blocks = (0..dims.layers)
            .map(|_| LayerWeights {
                heads: (0..dims.heads)
                    .map(|_| HeadWeights {
                        w_q: Array2::zeros((dims.d_model, dims.d_head())),
                        w_k: Array2::zeros((dims.d_model, dims.d_head())),
                        w_v: Array2::zeros((dims.d_model, dims.d_head())),
                    })
                    .collect(),
                w_o: Array2::zeros((dims.d_model, dims.d_model)),
                ff_w1: Array2::zeros((dims.d_model, dims.d_ff())),
                ff_b1: Array1::zeros(dims.d_ff()),
                ff_w2: Array2::zeros((dims.d_ff(), dims.d_model)),
                ff_b2: Array1::zeros(dims.d_model),
            })
            .collect();
        Self {
            dims,
            token_embed: Array2::zeros((dims.vocab, dims.d_model)),
            pos_embed: Array2::zeros((dims.max_seq, dims.d_model)),
            blocks,
            w_out: Array2::zeros((dims.d_model, dims.vocab)),
        }
    }

    /// Small random parameters for property tests.
    pub fn random(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |a: &mut Array2<f64>| {
            for x in a.iter_mut() {
                *x = rng.random_range(-0.08..0.08);
            }
        };
        let mut params = Self::zeros(dims);
        fill(&mut params.token_embed);
        fill(&mut params.pos_embed);
        for block in &mut params.blocks {
            for head in &mut block.heads {
                fill(&mut head.w_q);
                fill(&mut head.w_k);
                fill(&mut head.w_v);
            }
            fill(&mut block.w_o);
            fill(&mut block.ff_w1);
            fill(&mut block.ff_w2);
        }
        fill(&mut params.w_out);
        params
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(WEIGHTS_MAGIC)?;
        for dim in [
            self.dims.layers,
            self.dims.heads,
            self.dims.d_model,
            self.dims.vocab,
            self.dims.max_seq,
        ] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        let write_arr = |w: &mut dyn Write, a: &Array2<f64>| -> std::io::Result<()> {
            for x in a.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        };
        write_arr(&mut w, &self.token_embed)?;
        write_arr(&mut w, &self.pos_embed)?;
        for block in &self.blocks {
            for head in &block.heads {
                write_arr(&mut w, &head.w_q)?;
                write_arr(&mut w, &head.w_k)?;
                write_arr(&mut w, &head.w_v)?;
            }
            write_arr(&mut w, &block.w_o)?;
            write_arr(&mut w, &block.ff_w1)?;
            for x in block.ff_b1.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
            write_arr(&mut w, &block.ff_w2)?;
            for x in block.ff_b2.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        write_arr(&mut w, &self.w_out)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(ModelError::WeightsFormat(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let read_u64 = |r: &mut dyn Read| -> Result<usize, ModelError> {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            Ok(u64::from_le_bytes(buf) as usize)
        };
        let layers = read_u64(&mut r)?;
        let heads = read_u64(&mut r)?;
        let d_model = read_u64(&mut r)?;
        let vocab = read_u64(&mut r)?;
        let max_seq = read_u64(&mut r)?;
        let dims = ModelDims {
            layers,
            heads,
            d_model,
            vocab,
            max_seq,
        };
        if heads == 0 || d_model % heads != 0 || d_model % 2 != 0 {
            return Err(ModelError::WeightsFormat(format!(
                "inconsistent dims in header: layers={layers} heads={heads} d_model={d_model}"
            )));
        }
        let read_arr = |r: &mut dyn Read, rows: usize, cols: usize| -> Result<Array2<f64>, ModelError> {
            let mut data = vec![0f64; rows * cols];
            let mut buf = [0u8; 8];
            for x in data.iter_mut() {
                r.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
            Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| ModelError::WeightsFormat(e.to_string()))
        };
        let read_vec = |r: &mut dyn Read, len: usize| -> Result<Array1<f64>, ModelError> {
            let mut data = vec![0f64; len];
            let mut buf = [0u8; 8];
            for x in data.iter_mut() {
                r.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
            Ok(Array1::from_vec(data))
        };
        let token_embed = read_arr(&mut r, vocab, d_model)?;
        let pos_embed = read_arr(&mut r, max_seq, d_model)?;
        let mut blocks = Vec::with_capacity(layers);
        for _ in 0..layers {
            let mut head_ws = Vec::with_capacity(heads);
            for _ in 0..heads {
                head_ws.push(HeadWeights {
                    w_q: read_arr(&mut r, d_model, dims.d_head())?,
                    w_k: read_arr(&mut r, d_model, dims.d_head())?,
                    w_v: read_arr(&mut r, d_model, dims.d_head())?,
                });
            }
            blocks.push(LayerWeights {
                heads: head_ws,
                w_o: read_arr(&mut r, d_model, d_model)?,
                ff_w1: read_arr(&mut r, d_model, dims.d_ff())?,
                ff_b1: read_vec(&mut r, dims.d_ff())?,
                ff_w2: read_arr(&mut r, dims.d_ff(), d_model)?,
                ff_b2: read_vec(&mut r, d_model)?,
            });
        }
        let w_out = read_arr(&mut r, d_model, vocab)?;
        let mut tail = [0u8; 1];
        if r.read(&mut tail)? != 0 {
            return Err(ModelError::WeightsFormat(
                "trailing bytes after weight arrays".to_string(),
            ));
        }
        Self::new(dims, token_embed, pos_embed, blocks, w_out)
    }
}
