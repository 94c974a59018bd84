//! Binary parameter files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "LOOPNET\0"
//! version    u32      1
//! recall     u8       0 autonomous, 1 external, 2 internal
//! norm       u8       0 none, 1 pre, 2 post, 3 peri, 4 gru
//! mix_kind   u8       0 banded, 1 full
//! has_head   u8       0 or 1
//! d, seq_len, mlp_hidden, bandwidth, mix_heads   u64 each
//! norm_eps   f64
//! tensors    f64[]    row-major, in `NetParams::tensor_names` order
//! if has_head:
//!   vocab, classes    u64 each
//!   embed (vocab×d), readout_w (classes×d), readout_b (classes×1)   f64[]
//! ```
//!
//! Tensor shapes are implied by the header, so no per-tensor metadata is stored.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::linalg::{DenseMatrix, Rng};

use super::config::{MixBandwidth, NetConfig};
use super::net::LoopedNet;
use super::params::{InitScales, IoHead, NetParams};
use super::NetError;

pub const MAGIC: &[u8; 8] = b"LOOPNET\0";
pub const VERSION: u32 = 1;

fn put_u64(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    w.write_all(&(v as u64).to_le_bytes())
}

fn put_tensor(w: &mut impl Write, m: &DenseMatrix) -> std::io::Result<()> {
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], NetError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => NetError::Format("truncated file".into()),
        _ => NetError::Io(e),
    })?;
    Ok(buf)
}

fn get_u64(r: &mut impl Read) -> Result<usize, NetError> {
    let v = u64::from_le_bytes(get_array(r)?);
    usize::try_from(v).map_err(|_| NetError::Format(format!("field value {v} too large")))
}

fn get_f64(r: &mut impl Read) -> Result<f64, NetError> {
    Ok(f64::from_le_bytes(get_array(r)?))
}

fn fill_tensor(r: &mut impl Read, m: &mut DenseMatrix) -> Result<(), NetError> {
    for v in m.as_mut_slice() {
        *v = get_f64(r)?;
    }
    Ok(())
}

/// Writes a network and optional trainer head.
pub fn write_net(
    w: &mut impl Write,
    net: &LoopedNet,
    head: Option<&IoHead>,
) -> Result<(), NetError> {
    let cfg = net.config();
    let (recall, norm) = cfg.header_codes();
    let (kind, band) = match cfg.mix_bandwidth {
        MixBandwidth::Banded(b) => (0u8, b),
        MixBandwidth::Full => (1u8, 0),
    };
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[recall, norm, kind, head.is_some() as u8])?;
    for v in [cfg.d, cfg.seq_len, cfg.mlp_hidden, band, cfg.mix_heads] {
        put_u64(w, v)?;
    }
    w.write_all(&cfg.norm_eps.to_le_bytes())?;
    for t in net.params().tensors() {
        put_tensor(w, t)?;
    }
    if let Some(h) = head {
        if h.embed.cols() != cfg.d || h.readout_w.cols() != cfg.d {
            return Err(NetError::Shape("head width does not match network".into()));
        }
        put_u64(w, h.embed.rows())?;
        put_u64(w, h.readout_w.rows())?;
        for t in h.tensors() {
            put_tensor(w, t)?;
        }
    }
    Ok(())
}

/// Reads a file produced by [`write_net`].
pub fn read_net(r: &mut impl Read) -> Result<(LoopedNet, Option<IoHead>), NetError> {
    if &get_array::<8>(r)? != MAGIC {
        return Err(NetError::Format("missing magic bytes".into()));
    }
    let version = u32::from_le_bytes(get_array(r)?);
    if version != VERSION {
        return Err(NetError::Format(format!("unsupported version {version}")));
    }
    let [recall, norm, kind, has_head] = get_array::<4>(r)?;
    let (recall, norm) = NetConfig::modes_from_codes(recall, norm)?;
    let d = get_u64(r)?;
    let seq_len = get_u64(r)?;
    let mlp_hidden = get_u64(r)?;
    let band = get_u64(r)?;
    let mix_heads = get_u64(r)?;
    let norm_eps = get_f64(r)?;
    let mix_bandwidth = match kind {
        0 => MixBandwidth::Banded(band),
        1 => MixBandwidth::Full,
        k => return Err(NetError::Format(format!("bad mix kind {k}"))),
    };
    let cfg = NetConfig {
        d,
        seq_len,
        recall,
        norm,
        mlp_hidden,
        mix_bandwidth,
        mix_heads,
        norm_eps,
    };
    cfg.validate()?;
    const LIMIT: usize = 1 << 28;
    if d.saturating_mul(d).saturating_mul(mix_heads + 8) > LIMIT
        || d.saturating_mul(mlp_hidden) > LIMIT
    {
        return Err(NetError::Format("implausibly large network".into()));
    }
    let mut params = NetParams::init(&cfg, &mut Rng::new(0), InitScales::default());
    for t in params.tensors_mut() {
        fill_tensor(r, t)?;
    }
    let head = match has_head {
        0 => None,
        1 => {
            let vocab = get_u64(r)?;
            let classes = get_u64(r)?;
            if vocab.saturating_mul(d) > LIMIT || classes.saturating_mul(d) > LIMIT {
                return Err(NetError::Format("implausibly large head".into()));
            }
            let mut h = IoHead {
                embed: DenseMatrix::zeros(vocab, d),
                readout_w: DenseMatrix::zeros(classes, d),
                readout_b: DenseMatrix::zeros(classes, 1),
            };
            for t in h.tensors_mut() {
                fill_tensor(r, t)?;
            }
            Some(h)
        }
        b => return Err(NetError::Format(format!("bad head flag {b}"))),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NetError::Format("trailing bytes".into()));
    }
    Ok((LoopedNet::new(cfg, params)?, head))
}

pub fn save(
    path: impl AsRef<Path>,
    net: &LoopedNet,
    head: Option<&IoHead>,
) -> Result<(), NetError> {
    let mut buf = Vec::new();
    write_net(&mut buf, net, head)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(LoopedNet, Option<IoHead>), NetError> {
    let bytes = fs::read(path)?;
    read_net(&mut bytes.as_slice())
}
