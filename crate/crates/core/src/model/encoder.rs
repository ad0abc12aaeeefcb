use rand::Rng;
use ratlab_grad::{Axis, ParamId, ParamStore, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{RatError, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Bidirectional GRU; states are forward and backward concatenated.
    #[default]
    BiGru,
    /// Embeddings used directly as per-token states.
    MeanPool,
}

/// One GRU direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_n: ParamId,
}

impl GruParams {
    fn build(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let wi = 1.0 / (input as f64).sqrt();
        let wh = 1.0 / (hidden as f64).sqrt();
        let mut m = |name: &str, rows: usize, cols: usize, scale: f64| {
            store.add(format!("{prefix}.{name}"), uniform(rng, rows, cols, scale))
        };
        Self {
            w_z: m("w_z", input, hidden, wi),
            u_z: m("u_z", hidden, hidden, wh),
            b_z: m("b_z", 1, hidden, 0.0),
            w_r: m("w_r", input, hidden, wi),
            u_r: m("u_r", hidden, hidden, wh),
            b_r: m("b_r", 1, hidden, 0.0),
            w_n: m("w_n", input, hidden, wi),
            u_n: m("u_n", hidden, hidden, wh),
            b_n: m("b_n", 1, hidden, 0.0),
        }
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_n, self.u_n,
            self.b_n,
        ]
    }

    /// States for `x` (`L x input`) in the given order, returned aligned with
    /// the input positions.
    fn run(&self, tape: &mut Tape<'_>, x: Var, reverse: bool) -> Result<Var> {
        let len = tape.value(x).rows();
        let proj = |tape: &mut Tape<'_>, w: ParamId, b: ParamId| -> Result<Var> {
            let w = tape.param(w);
            let b = tape.param(b);
            let xw = tape.matmul(x, w)?;
            Ok(tape.add(xw, b)?)
        };
        let xz = proj(tape, self.w_z, self.b_z)?;
        let xr = proj(tape, self.w_r, self.b_r)?;
        let xn = proj(tape, self.w_n, self.b_n)?;
        let u_z = tape.param(self.u_z);
        let u_r = tape.param(self.u_r);
        let u_n = tape.param(self.u_n);
        let hidden = tape.value(u_z).rows();
        let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
        let mut states = vec![h; len];
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in order {
            let z_in = tape.row(xz, t)?;
            let hz = tape.matmul(h, u_z)?;
            let z = tape.add(z_in, hz)?;
            let z = tape.sigmoid(z);
            let r_in = tape.row(xr, t)?;
            let hr = tape.matmul(h, u_r)?;
            let r = tape.add(r_in, hr)?;
            let r = tape.sigmoid(r);
            let rh = tape.mul(r, h)?;
            let n_in = tape.row(xn, t)?;
            let hn = tape.matmul(rh, u_n)?;
            let n = tape.add(n_in, hn)?;
            let n = tape.tanh(n);
            let delta = tape.sub(n, h)?;
            let step = tape.mul(z, delta)?;
            h = tape.add(h, step)?;
            states[t] = h;
        }
        Ok(tape.concat(&states, Axis::Rows)?)
    }
}

/// Token embedding plus optional recurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub embedding: ParamId,
    pub forward: Option<GruParams>,
    pub backward: Option<GruParams>,
    out_dim: usize,
}

impl Encoder {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        kind: EncoderKind,
        config: &ModelConfig,
        vocab_size: usize,
    ) -> Self {
        let (emb_dim, hidden) = (config.emb_dim, config.hidden);
        let embedding = store.add(
            format!("{prefix}.embedding"),
            uniform(rng, vocab_size, emb_dim, config.embedding_scale),
        );
        match kind {
            EncoderKind::BiGru => Self {
                kind,
                embedding,
                forward: Some(GruParams::build(
                    store,
                    rng,
                    &format!("{prefix}.fwd"),
                    emb_dim,
                    hidden,
                )),
                backward: Some(GruParams::build(
                    store,
                    rng,
                    &format!("{prefix}.bwd"),
                    emb_dim,
                    hidden,
                )),
                out_dim: 2 * hidden,
            },
            EncoderKind::MeanPool => Self {
                kind,
                embedding,
                forward: None,
                backward: None,
                out_dim: emb_dim,
            },
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embedding];
        for g in self.forward.iter().chain(&self.backward) {
            ids.extend(g.ids());
        }
        ids
    }

    /// Per-token states, `L x out_dim`.
    pub fn encode(&self, tape: &mut Tape<'_>, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(RatError::Example("cannot encode an empty sequence".into()));
        }
        let table = tape.param(self.embedding);
        let x = tape.embedding(table, tokens)?;
        match (&self.forward, &self.backward) {
            (Some(f), Some(b)) => {
                let fs = f.run(tape, x, false)?;
                let bs = b.run(tape, x, true)?;
                Ok(tape.concat(&[fs, bs], Axis::Cols)?)
            }
            _ => Ok(x),
        }
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            if scale == 0.0 {
                0.0
            } else {
                rng.gen_range(-scale..scale)
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("dimensions match")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(kind: EncoderKind) -> (ParamStore, Encoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let config = ModelConfig {
            encoder: kind,
            emb_dim: 4,
            hidden: 3,
            ..ModelConfig::default()
        };
        let e = Encoder::build(&mut store, &mut rng, "enc", config.encoder, &config, 6);
        (store, e)
    }

    #[test]
    fn zero_gru_keeps_zero_state() {
        let (mut store, e) = encoder(EncoderKind::BiGru);
        for id in e.param_ids().into_iter().skip(1) {
            store.get_mut(id).fill(0.0);
        }
        let mut tape = Tape::new(&store);
        let h = e.encode(&mut tape, &[3, 4, 5]).unwrap();
        assert_eq!(tape.value(h).shape(), &[3, 6]);
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_directions_agree_with_symmetric_params() {
        let (mut store, e) = encoder(EncoderKind::BiGru);
        let (f, b) = (e.forward.unwrap(), e.backward.unwrap());
        for (src, dst) in f.ids().into_iter().zip(b.ids()) {
            let t = store.get(src).clone();
            *store.get_mut(dst) = t;
        }
        let mut tape = Tape::new(&store);
        let h = e.encode(&mut tape, &[4]).unwrap();
        let row = tape.value(h).row_slice(0).to_vec();
        assert_eq!(row[..3], row[3..]);
        assert!(row.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn mean_pool_encoder_returns_embeddings() {
        let (store, e) = encoder(EncoderKind::MeanPool);
        let mut tape = Tape::new(&store);
        let h = e.encode(&mut tape, &[3, 5]).unwrap();
        let table = store.get(e.embedding);
        assert_eq!(tape.value(h).row_slice(0), table.row_slice(3));
        assert_eq!(tape.value(h).row_slice(1), table.row_slice(5));
        assert!(e.encode(&mut tape, &[]).is_err());
    }
}
