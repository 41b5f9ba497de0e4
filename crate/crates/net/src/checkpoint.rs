//! Binary checkpoint: magic `IUZC`, version, a named config block and the
//! named parameter tensors, all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use iuzawa_autodiff::Tensor;
use iuzawa_core::grf::ExperimentKind;

use crate::config::{NetConfig, Tying};
use crate::error::{Error, Result};
use crate::params::NetParams;

const MAGIC: &[u8; 4] = b"IUZC";
const VERSION: u16 = 1;

fn config_entries(c: &NetConfig) -> Vec<(&'static str, f64)> {
    vec![
        ("kind", c.kind.code() as f64),
        ("layers", c.layers as f64),
        ("tying", matches!(c.tying, Tying::Shared) as u8 as f64),
        ("tau", c.tau),
        ("m_p", c.m_p as f64),
        ("k_max", c.k_max as f64),
        ("fourier_layers", c.fourier_layers as f64),
        ("qa_width", c.qa_width as f64),
        ("qa_depth", c.qa_depth as f64),
        ("gamma", c.gamma),
        ("train_m", c.train_m as f64),
        ("pad_to", c.pad_to as f64),
        ("seed_lo", (c.seed & 0xffff_ffff) as f64),
        ("seed_hi", (c.seed >> 32) as f64),
    ]
}

fn config_from(entries: &[(String, f64)]) -> Result<NetConfig> {
    let get = |name: &str| {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::Format(format!("missing config entry {name}")))
    };
    let int = |name: &str| -> Result<usize> {
        let v = get(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Format(format!("{name} = {v} is not a count")));
        }
        Ok(v as usize)
    };
    let kind = ExperimentKind::from_code(int("kind")? as u8)?;
    let c = NetConfig {
        kind,
        layers: int("layers")?,
        tying: if int("tying")? == 1 { Tying::Shared } else { Tying::Free },
        tau: get("tau")?,
        m_p: int("m_p")?,
        k_max: int("k_max")?,
        fourier_layers: int("fourier_layers")?,
        qa_width: int("qa_width")?,
        qa_depth: int("qa_depth")?,
        gamma: get("gamma")?,
        train_m: int("train_m")?,
        pad_to: int("pad_to")?,
        seed: (int("seed_hi")? as u64) << 32 | int("seed_lo")? as u64,
    };
    c.validate()?;
    Ok(c)
}

fn put_name(w: &mut impl Write, name: &str) -> std::io::Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())
}

pub fn write_checkpoint_to(net: &NetParams, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let entries = config_entries(&net.config);
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, v) in entries {
        put_name(w, name)?;
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(net.store.len() as u32).to_le_bytes())?;
    for id in net.store.ids() {
        let t = net.store.get(id);
        put_name(w, net.store.name(id))?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_checkpoint(net: &NetParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint_to(net, &mut w)?;
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn u32_of(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(take(r)?) as usize)
}

fn f64_of(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(take(r)?))
}

fn name_of(r: &mut impl Read) -> Result<String> {
    let n = u16::from_le_bytes(take(r)?) as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Format("name is not UTF-8".into()))
}

pub fn read_checkpoint_from(r: &mut impl Read) -> Result<NetParams> {
    if &take::<4>(r)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u32_of(r)?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let name = name_of(r)?;
        entries.push((name, f64_of(r)?));
    }
    let config = config_from(&entries)?;
    let count = u32_of(r)?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = name_of(r)?;
        let nd = take::<1>(r)?[0] as usize;
        let shape = (0..nd).map(|_| u32_of(r)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(shape, data)));
    }
    let mut net = NetParams::init(&config)?;
    net.load_values(&tensors)?;
    Ok(net)
}

pub fn read_checkpoint(path: &Path) -> Result<NetParams> {
    read_checkpoint_from(&mut BufReader::new(File::open(path)?))
}
