//! Flat binary checkpoints for the decoder and critics.
//!
//! Layout: an 8-byte magic, the decoder block, then an optional pair of
//! critic blocks. Every tensor is written as `rows, cols` (little-endian
//! u64) followed by its `f64` data, so shapes reconstruct exactly.

use std::fs;
use std::io;
use std::path::Path;

use super::{CriticRole, InputMode, RewardDecoder, Selected, TrainError, VariationalCritic};
use crate::tensor::{Activation, Mlp, Tensor};

const MAGIC: &[u8; 8] = b"IGLCKPT1";

/// Everything a resumed evaluation needs.
pub struct Checkpoint {
    pub decoder: Selected<RewardDecoder>,
    pub critics: Option<(VariationalCritic, VariationalCritic)>,
}

pub fn save_checkpoint(
    path: &Path,
    decoder: &Selected<RewardDecoder>,
    critics: Option<(&VariationalCritic, &VariationalCritic)>,
) -> Result<(), TrainError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(decoder.flipped as u8);
    buf.push(match decoder.decoder.input_mode() {
        InputMode::Y => 0,
        InputMode::Xay => 1,
    });
    write_f64(&mut buf, decoder.decoder.clamp_c());
    let d = &decoder.decoder;
    write_u64(&mut buf, d.num_actions() as u64);
    write_u64(&mut buf, d.context_dim() as u64);
    write_u64(&mut buf, d.feedback_dim() as u64);
    write_mlp(&mut buf, d.net());
    match critics {
        None => buf.push(0),
        Some((g, t)) => {
            buf.push(1);
            for critic in [g, t] {
                buf.push(match critic.role() {
                    CriticRole::ConditionalMi => 0,
                    CriticRole::MarginalMi => 1,
                });
                write_f64(&mut buf, critic.bound());
                write_u64(&mut buf, critic.context_dim() as u64);
                write_u64(&mut buf, critic.feedback_dim() as u64);
                write_mlp(&mut buf, critic.net());
            }
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(TrainError::Config(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let flipped = r.u8()? != 0;
    let input_mode = match r.u8()? {
        0 => InputMode::Y,
        1 => InputMode::Xay,
        other => return Err(TrainError::Config(format!("bad input mode tag {other}"))),
    };
    let clamp_c = r.f64()?;
    let num_actions = r.u64()? as usize;
    let context_dim = r.u64()? as usize;
    let feedback_dim = r.u64()? as usize;
    let net = read_mlp(&mut r)?;
    let decoder = RewardDecoder::from_parts(
        net,
        input_mode,
        clamp_c,
        context_dim,
        num_actions,
        feedback_dim,
    );
    let critics = if r.u8()? == 1 {
        let mut pair = Vec::with_capacity(2);
        for _ in 0..2 {
            let role = match r.u8()? {
                0 => CriticRole::ConditionalMi,
                1 => CriticRole::MarginalMi,
                other => return Err(TrainError::Config(format!("bad critic role tag {other}"))),
            };
            let bound = r.f64()?;
            let c_dim = r.u64()? as usize;
            let f_dim = r.u64()? as usize;
            let net = read_mlp(&mut r)?;
            pair.push(VariationalCritic::from_parts(net, role, bound, c_dim, num_actions, f_dim));
        }
        let t = pair.pop().unwrap();
        let g = pair.pop().unwrap();
        Some((g, t))
    } else {
        None
    };
    Ok(Checkpoint { decoder: Selected { decoder, flipped }, critics })
}

fn write_mlp(buf: &mut Vec<u8>, net: &Mlp) {
    write_u64(buf, net.layers().len() as u64);
    for layer in net.layers() {
        buf.push(match layer.activation {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        });
        write_u64(buf, layer.weight.rows() as u64);
        write_u64(buf, layer.weight.cols() as u64);
        for &v in layer.weight.data() {
            write_f64(buf, v);
        }
        for &v in layer.bias.data() {
            write_f64(buf, v);
        }
    }
}

fn read_mlp(r: &mut Reader) -> Result<Mlp, TrainError> {
    let n_layers = r.u64()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let activation = match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            2 => Activation::Identity,
            other => return Err(TrainError::Config(format!("bad activation tag {other}"))),
        };
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let mut wdata = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            wdata.push(r.f64()?);
        }
        let mut bdata = Vec::with_capacity(cols);
        for _ in 0..cols {
            bdata.push(r.f64()?);
        }
        layers.push(crate::tensor::Layer {
            weight: Tensor::matrix(rows, cols, wdata).map_err(TrainError::Tensor)?,
            bias: Tensor::matrix(1, cols, bdata).map_err(TrainError::Tensor)?,
            activation,
        });
    }
    Mlp::from_layers(layers).map_err(TrainError::Tensor)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.bytes.len() {
            return Err(TrainError::Config(format!(
                "truncated checkpoint at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        let mut b = [0u8; 8];
        b.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64, TrainError> {
        let mut b = [0u8; 8];
        b.copy_from_slice(self.take(8)?);
        Ok(f64::from_le_bytes(b))
    }
}

fn write_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn io_err(path: &Path, e: io::Error) -> TrainError {
    TrainError::Config(format!("checkpoint io on {}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn checkpoint_round_trips_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let decoder = RewardDecoder::new(InputMode::Xay, 3, 4, 2, 8, 0.01, &mut rng).unwrap();
        let g = VariationalCritic::new(CriticRole::ConditionalMi, 3, 4, 2, 8, 10.0, &mut rng)
            .unwrap();
        let t =
            VariationalCritic::new(CriticRole::MarginalMi, 3, 4, 2, 8, 10.0, &mut rng).unwrap();
        let selected = Selected { decoder, flipped: true };

        let dir = tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&path, &selected, Some((&g, &t))).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        assert!(loaded.decoder.flipped);
        assert_eq!(loaded.decoder.decoder.input_mode(), InputMode::Xay);
        for (a, b) in selected
            .decoder
            .net()
            .params()
            .iter()
            .zip(loaded.decoder.decoder.net().params())
        {
            assert_eq!(a.data(), b.data());
        }
        let (lg, lt) = loaded.critics.unwrap();
        assert_eq!(lg.role(), CriticRole::ConditionalMi);
        assert_eq!(lt.role(), CriticRole::MarginalMi);
        for (a, b) in g.net().params().iter().zip(lg.net().params()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn garbage_file_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk");
        fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
