//! Bit-exact binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic               b"FMOE"
//! version             u32 (currently 1)
//! site_count          u32
//! per site:
//!   M, N, Z, k        u32 × 4
//!   per expert:
//!     kind            u32 (0 spectral, 1 unsymmetric, 2 lowrank)
//!     spectral:       mode u32 (0 complex, 1 real, 2 imag),
//!                     pair_count u32, self_count u32,
//!                     pair indices (u, v) as u32 pairs, self indices likewise
//!     unsymmetric:    bin_count u32, bin indices as u32 pairs
//!     lowrank:        rank u32
//! head_rows, head_cols u32 × 2 (0, 0 when headless)
//! param_count         u64
//! parameters          f64 × param_count, canonical storage order
//! config_len          u32
//! config echo         UTF-8 JSON
//! crc32               u32 over every preceding byte
//! ```
//!
//! Loading rebuilds the model from the config echo (bases and supports are
//! deterministic functions of it), cross-checks the persisted topology
//! against the rebuilt one, and restores every trainable scalar bit-exactly.

use crate::config::{build_model, RunConfig};
use crate::error::{Error, Result};
use crate::experts::CoeffMode;
use crate::model::Model;
use crate::moe::ExpertParams;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"FMOE";
pub const FORMAT_VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.buf.len() {
            return Err(Error::Corrupt("unexpected end of checkpoint".into()));
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn mode_tag(mode: CoeffMode) -> u32 {
    match mode {
        CoeffMode::Complex => 0,
        CoeffMode::RealOnly => 1,
        CoeffMode::ImagOnly => 2,
    }
}

fn write_topology(w: &mut Writer, model: &Model) {
    w.u32(model.sites().len() as u32);
    for site in model.sites() {
        let (m, n) = site.dims();
        w.u32(m as u32);
        w.u32(n as u32);
        w.u32(site.num_experts() as u32);
        w.u32(site.router().k() as u32);
        for e in site.experts() {
            match e {
                ExpertParams::Spectral(se) => {
                    w.u32(0);
                    w.u32(mode_tag(se.mode()));
                    w.u32(se.coeffs().pairs().len() as u32);
                    w.u32(se.coeffs().self_conjugate().len() as u32);
                    for (idx, _) in se.coeffs().pairs() {
                        w.u32(idx.u as u32);
                        w.u32(idx.v as u32);
                    }
                    for (idx, _) in se.coeffs().self_conjugate() {
                        w.u32(idx.u as u32);
                        w.u32(idx.v as u32);
                    }
                }
                ExpertParams::Unsymmetric(ue) => {
                    w.u32(1);
                    w.u32(ue.bins().len() as u32);
                    for (idx, _) in ue.bins() {
                        w.u32(idx.u as u32);
                        w.u32(idx.v as u32);
                    }
                }
                ExpertParams::LowRank(le) => {
                    w.u32(2);
                    w.u32(le.rank() as u32);
                }
            }
        }
    }
    match model.head() {
        Some(h) => {
            w.u32(h.classes() as u32);
            w.u32(h.hidden() as u32);
        }
        None => {
            w.u32(0);
            w.u32(0);
        }
    }
}

/// Serializes the model parameters plus the config echo.
pub fn encode(model: &Model, config: &RunConfig) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(FORMAT_VERSION);
    write_topology(&mut w, model);
    let params = model.flatten_params();
    w.u64(params.len() as u64);
    for p in &params {
        w.f64(*p);
    }
    let echo = config.to_json();
    w.u32(echo.len() as u32);
    w.bytes(echo.as_bytes());
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub fn save_checkpoint(model: &Model, config: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model, config))?;
    Ok(())
}

fn skip_topology(r: &mut Reader) -> Result<()> {
    let sites = r.u32()?;
    for _ in 0..sites {
        let _m = r.u32()?;
        let _n = r.u32()?;
        let z = r.u32()?;
        let _k = r.u32()?;
        for _ in 0..z {
            match r.u32()? {
                0 => {
                    let _mode = r.u32()?;
                    let pairs = r.u32()?;
                    let selfs = r.u32()?;
                    r.take(8 * pairs as usize)?;
                    r.take(8 * selfs as usize)?;
                }
                1 => {
                    let bins = r.u32()?;
                    r.take(8 * bins as usize)?;
                }
                2 => {
                    let _rank = r.u32()?;
                }
                other => {
                    return Err(Error::Corrupt(format!("unknown expert kind tag {other}")));
                }
            }
        }
    }
    let _head = r.take(8)?;
    Ok(())
}

/// Decodes a checkpoint byte buffer into the rebuilt model and config echo.
pub fn decode(bytes: &[u8]) -> Result<(Model, RunConfig)> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Corrupt("checkpoint shorter than its framing".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored_crc != computed {
        return Err(Error::Corrupt(format!(
            "crc mismatch: stored {stored_crc:#010x}, computed {computed:#010x}"
        )));
    }

    let mut r = Reader::new(body);
    if r.take(4)? != MAGIC {
        return Err(Error::Corrupt("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let topo_start = r.pos;
    skip_topology(&mut r)?;
    let topo_end = r.pos;
    let persisted_topology = &body[topo_start..topo_end];

    let param_count = r.u64()? as usize;
    let mut params = Vec::with_capacity(param_count);
    for _ in 0..param_count {
        params.push(r.f64()?);
    }
    let config_len = r.u32()? as usize;
    let config_text = std::str::from_utf8(r.take(config_len)?)
        .map_err(|_| Error::Corrupt("config echo is not valid UTF-8".into()))?;
    if r.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes after config echo".into()));
    }
    let config = RunConfig::from_json(config_text)?;

    let mut model = build_model(&config)?;
    if model.num_params() != param_count {
        return Err(Error::Corrupt(format!(
            "parameter block holds {param_count} scalars, config implies {}",
            model.num_params()
        )));
    }
    // The rebuilt topology must byte-match the persisted one; a mismatch
    // means the config echo and the index lists drifted apart.
    let mut check = Writer::new();
    write_topology(&mut check, &model);
    if check.buf != persisted_topology {
        return Err(Error::Corrupt(
            "persisted topology does not match the config echo".into(),
        ));
    }
    model.set_params(&params)?;
    Ok((model, config))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, RunConfig)> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AdapterVariant;
    use crate::experts::InitPolicy;

    fn config() -> RunConfig {
        let mut cfg = RunConfig::from_json(
            r#"{ "dims": [8, 8], "task": { "kind": "toy_classify", "classes": 3 } }"#,
        )
        .unwrap();
        cfg.z = 3;
        cfg.k = 2;
        cfg.n = 8;
        cfg.init = InitPolicy::Gaussian { sigma: 0.2 };
        cfg
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = config();
        let model = build_model(&cfg).unwrap();
        let bytes = encode(&model, &cfg);
        let (loaded, echo) = decode(&bytes).unwrap();
        let a = model.flatten_params();
        let b = loaded.flatten_params();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(echo.z, cfg.z);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let cfg = config();
        let model = build_model(&cfg).unwrap();
        let bytes = encode(&model, &cfg);
        for cut in [1usize, 4, bytes.len() / 2, bytes.len() - 1] {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "cut at {cut}: {err}");
        }
    }

    #[test]
    fn flipped_byte_is_a_crc_error() {
        let cfg = config();
        let model = build_model(&cfg).unwrap();
        let mut bytes = encode(&model, &cfg);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::Corrupt(_)), "{err}");
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let cfg = config();
        let model = build_model(&cfg).unwrap();
        let mut bytes = encode(&model, &cfg);
        // Overwrite version field (bytes 4..8) and re-seal the CRC.
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 99, .. }), "{err}");
    }

    #[test]
    fn variants_round_trip_too() {
        for variant in [
            AdapterVariant::Unsymmetric,
            AdapterVariant::LowRank { rank: 2 },
            AdapterVariant::RealOnly,
        ] {
            let mut cfg = config();
            cfg.variant = variant;
            let model = build_model(&cfg).unwrap();
            let bytes = encode(&model, &cfg);
            let (loaded, _) = decode(&bytes).unwrap();
            assert_eq!(model.flatten_params(), loaded.flatten_params());
        }
    }
}
