//! Model checkpoints: configuration echo plus named f64 parameter blocks.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "TSVC" | version u16 (1) | config_len u32 | config text (UTF-8)
//! block_count u32 | block_count × { name_len u16 | name | rows u32 | cols u32 | rows·cols f64 }
//! ```
//!
//! TCN blocks are named `tcn.<block>`, head blocks `agg.<block>`. Either
//! group may be absent; a present group must be complete.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::Config;
use super::{read_bytes, write_bytes, Reader};
use crate::aggregation::AggregationParams;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, ParamRng, RngSeed};
use crate::params::ParamBlocks;
use crate::tcn::TcnParams;

pub const MAGIC: &[u8; 4] = b"TSVC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub tcn: Option<TcnParams>,
    pub aggregation: Option<AggregationParams>,
}

impl Checkpoint {
    pub fn tcn(&self) -> Result<&TcnParams> {
        self.tcn
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint holds no TCN parameters".into()))
    }

    pub fn aggregation(&self) -> Result<&AggregationParams> {
        self.aggregation
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint holds no aggregation parameters".into()))
    }
}

fn push_block(out: &mut Vec<u8>, name: &str, m: &Matrix) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Config(format!("block name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut blocks: Vec<(String, &Matrix)> = Vec::new();
    if let Some(t) = &ck.tcn {
        blocks.extend(t.blocks().into_iter().map(|(n, m)| (format!("tcn.{n}"), m)));
    }
    if let Some(a) = &ck.aggregation {
        blocks.extend(a.blocks().into_iter().map(|(n, m)| (format!("agg.{n}"), m)));
    }
    let config = ck.config.to_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, m) in blocks {
        push_block(&mut out, &name, m)?;
    }
    Ok(out)
}

/// Moves every `prefix.*` block into `target`, which fixes the expected shapes.
fn fill<P: ParamBlocks>(
    mut target: P,
    prefix: &str,
    stored: &mut BTreeMap<String, Matrix>,
    path: &Path,
) -> Result<P> {
    for (name, m) in target.blocks_mut() {
        let key = format!("{prefix}.{name}");
        let block = stored
            .remove(&key)
            .ok_or_else(|| Error::format(path, format!("missing block {key}")))?;
        if block.shape() != m.shape() {
            return Err(Error::format(
                path,
                format!("block {key} is {:?}, configuration implies {:?}", block.shape(), m.shape()),
            ));
        }
        *m = block;
    }
    Ok(target)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, path);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let config_len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(config_len, "config")?)
        .map_err(|_| Error::format(path, "configuration is not UTF-8"))?;
    let config = Config::parse_text(text)?;
    let count = r.u32("block count")?;
    let mut stored = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16("block name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "block name")?)
            .map_err(|_| Error::format(path, "block name is not UTF-8"))?
            .to_string();
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let data = r
            .take(rows * cols * 8, &name)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if stored.insert(name.clone(), Matrix::from_vec(rows, cols, data)?).is_some() {
            return Err(Error::format(path, format!("duplicate block {name}")));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::format(path, format!("{} trailing bytes", r.remaining())));
    }

    // Shapes come from init; the values are overwritten block by block.
    let mut rng = ParamRng::new(RngSeed(0));
    let tcn = if stored.keys().any(|k| k.starts_with("tcn.")) {
        Some(fill(TcnParams::init(config.tcn, &mut rng)?, "tcn", &mut stored, path)?)
    } else {
        None
    };
    let aggregation = if stored.keys().any(|k| k.starts_with("agg.")) {
        Some(fill(AggregationParams::init(config.model, &mut rng)?, "agg", &mut stored, path)?)
    } else {
        None
    };
    if let Some(extra) = stored.keys().next() {
        return Err(Error::format(path, format!("unexpected block {extra}")));
    }
    Ok(Checkpoint {
        config,
        tcn,
        aggregation,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_bytes(path, &encode(ck)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&read_bytes(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> Config {
        let mut c = Config::default();
        for kv in [
            "phases=3",
            "spatial_dim=5",
            "window=2",
            "heads=2",
            "d_k=2",
            "d_ff=4",
            "tcn.layers_per_stage=2",
            "tcn.hidden_channels=4",
            "tcn.reduced_dim=3",
        ] {
            c.apply_override(kv).unwrap();
        }
        c
    }

    fn full() -> Checkpoint {
        let config = small_config();
        let mut rng = ParamRng::new(RngSeed(9));
        let mut tcn = TcnParams::init(config.tcn, &mut rng).unwrap();
        tcn.reduce_b.set(0, 1, std::f64::consts::PI);
        tcn.reduce_b.set(0, 2, -0.0);
        tcn.reduce_b.set(0, 0, f64::MIN_POSITIVE / 4.0);
        Checkpoint {
            config,
            tcn: Some(tcn),
            aggregation: Some(AggregationParams::init(config.model, &mut rng).unwrap()),
        }
    }

    fn bits<P: ParamBlocks>(p: &P) -> Vec<u64> {
        p.flatten().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = full();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &ck).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(bits(back.tcn().unwrap()), bits(ck.tcn().unwrap()));
        assert_eq!(bits(back.aggregation().unwrap()), bits(ck.aggregation().unwrap()));
        assert_eq!(encode(&back).unwrap(), encode(&ck).unwrap());
    }

    #[test]
    fn partial_checkpoints() {
        let mut ck = full();
        ck.aggregation = None;
        let back = decode(&encode(&ck).unwrap(), Path::new("c")).unwrap();
        assert!(back.tcn.is_some());
        assert!(back.aggregation().is_err());
    }

    #[test]
    fn rejects_damage() {
        let p = Path::new("c");
        let bytes = encode(&full()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra, p).is_err());
        let mut magic = bytes.clone();
        magic[3] = b'E';
        assert!(decode(&magic, p).is_err());

        // Same blocks, but a config whose shapes disagree.
        let mut ck = full();
        let good = encode(&ck).unwrap();
        ck.config.apply_override("d_ff=5").unwrap();
        let cfg_text = ck.config.to_text();
        let old_len = u32::from_le_bytes(good[6..10].try_into().unwrap()) as usize;
        let mut swapped = good[..6].to_vec();
        swapped.extend_from_slice(&(cfg_text.len() as u32).to_le_bytes());
        swapped.extend_from_slice(cfg_text.as_bytes());
        swapped.extend_from_slice(&good[10 + old_len..]);
        let err = decode(&swapped, p).unwrap_err().to_string();
        assert!(err.contains("agg.layer1.ff.w1"), "{err}");
    }
}
