//! Bundle archive: the training config as text, the networks in the
//! network archive format, then the training log.
//!
//! ```text
//! bundle := "HGBUNDLE" version:u32 config:str proposer_tag:u8
//!           conditioner simulator discriminator [decoder] [proposer]
//!           n_epochs:u64 { epoch:u64 critic:f64 generator:f64 ap:f64 proposer_mse:f64 }*
//! ```
//!
//! Proposer tags: 0 none, 1 network, 2 copy of the historical mean.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EpochLog, GanNets, MeanProposer, ModelBundle, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::archive::{get_bytes, get_f64, get_str, get_u32, get_usize, put_f64, put_str, put_u32, put_u64};
use crate::nn::archive::{read_network, write_network, FORMAT_VERSION};

pub const BUNDLE_MAGIC: &[u8; 8] = b"HGBUNDLE";

pub fn write_bundle<W: Write>(w: &mut W, bundle: &ModelBundle) -> Result<()> {
    w.write_all(BUNDLE_MAGIC).map_err(|e| Error::Archive(e.to_string()))?;
    put_u32(w, FORMAT_VERSION)?;
    put_str(w, &bundle.config.to_text())?;
    let tag: u8 = match &bundle.proposer {
        None => 0,
        Some(MeanProposer::Network(_)) => 1,
        Some(MeanProposer::CopyHistoricalMean) => 2,
    };
    w.write_all(&[tag]).map_err(|e| Error::Archive(e.to_string()))?;
    let nets = &bundle.nets;
    write_network(w, &nets.conditioner)?;
    write_network(w, &nets.simulator)?;
    write_network(w, &nets.discriminator)?;
    if let Some(d) = &nets.decoder {
        write_network(w, d)?;
    }
    if let Some(MeanProposer::Network(p)) = &bundle.proposer {
        write_network(w, p)?;
    }
    put_u64(w, bundle.training_log.len() as u64)?;
    for r in &bundle.training_log {
        put_u64(w, r.epoch as u64)?;
        for v in [r.critic_loss, r.generator_loss, r.ap_loss, r.proposer_mse] {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

pub fn read_bundle<R: Read>(r: &mut R) -> Result<ModelBundle> {
    let magic: [u8; 8] = get_bytes(r)?;
    if &magic != BUNDLE_MAGIC {
        return Err(Error::Archive("not a model bundle (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Archive(format!("unsupported bundle format version {version}")));
    }
    let config = TrainConfig::from_text(&get_str(r)?)?;
    let [tag]: [u8; 1] = get_bytes(r)?;
    let conditioner = read_network(r)?;
    let simulator = read_network(r)?;
    let discriminator = read_network(r)?;
    let decoder = if config.model_kind.uses_autoencoder() {
        Some(read_network(r)?)
    } else {
        None
    };
    let proposer = match tag {
        0 => None,
        1 => Some(MeanProposer::Network(read_network(r)?)),
        2 => Some(MeanProposer::CopyHistoricalMean),
        other => return Err(Error::Archive(format!("unknown proposer tag {other}"))),
    };
    let n = get_usize(r)?;
    let mut training_log = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        training_log.push(EpochLog {
            epoch: get_usize(r)?,
            critic_loss: get_f64(r)?,
            generator_loss: get_f64(r)?,
            ap_loss: get_f64(r)?,
            proposer_mse: get_f64(r)?,
        });
    }
    let nets = GanNets {
        conditioner,
        decoder,
        simulator,
        discriminator,
    };
    ModelBundle::from_parts(config, nets, proposer, training_log)
}

pub fn save_bundle(path: impl AsRef<Path>, bundle: &ModelBundle) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_bundle(&mut w, bundle)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_bundle(&mut BufReader::new(file))
}
