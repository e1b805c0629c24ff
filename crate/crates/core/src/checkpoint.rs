//! Weight checkpoints: a JSON header line with the network configuration,
//! then one line holding the flat weight vector. Floats use the same
//! shortest round-trip form as trace files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rnn::{NetConfig, WeightVector};

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u64,
    kind: String,
    net: NetConfig,
}

#[derive(Serialize, Deserialize)]
struct Body {
    weights: WeightVector,
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &NetConfig, weights: &WeightVector) -> Result<()> {
    if weights.len() != net.param_count() {
        return Err(Error::dim("checkpoint weights", net.param_count(), weights.len()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        kind: "checkpoint".into(),
        net: net.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    serde_json::to_writer(&mut w, &Body { weights: weights.clone() }).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NetConfig, WeightVector)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let parse_err = |line, message: String| Error::Parse { line, message };
    let header_line = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))??;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if header.kind != "checkpoint" {
        return Err(parse_err(1, format!("unexpected kind `{}`", header.kind)));
    }
    header.net.validate()?;
    let body_line = lines.next().ok_or_else(|| parse_err(2, "missing weights".into()))??;
    let body: Body = serde_json::from_str(&body_line).map_err(|e| parse_err(2, e.to_string()))?;
    let weights = WeightVector::new(body.weights.into_vec())?;
    if weights.len() != header.net.param_count() {
        return Err(Error::dim("checkpoint weights", header.net.param_count(), weights.len()));
    }
    Ok((header.net, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::init_network;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = NetConfig::new(4, 2, 1, 4, 5).with_seed(12).with_init_range(0.7);
        let (_, w) = init_network(cfg.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        save_checkpoint(&path, &cfg, &w).unwrap();
        let (cfg2, w2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg2, cfg);
        for (a, b) in w.as_slice().iter().zip(w2.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn wrong_length_rejected() {
        let cfg = NetConfig::new(1, 1, 1, 1, 1);
        let dir = tempfile::tempdir().unwrap();
        assert!(save_checkpoint(dir.path().join("x"), &cfg, &WeightVector::zeros(3)).is_err());
    }
}
