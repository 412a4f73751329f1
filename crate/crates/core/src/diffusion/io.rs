//! `R4TD` denoiser checkpoint.
//!
//! Little-endian: magic `R4TD`, version `u32 = 1`, the configuration block
//! (`L u32, d u32, sigma_data f64, sigma_min f64, sigma_max f64,
//! cond_drop f64, cfg_strength f64, sample_steps u32, ema_decay f64,
//! width u32, depth u32, learning_rate f64, warmup_steps u32,
//! total_steps u32, batch_size u32, churn f64`), a table count `u32`, then
//! every parameter table followed by every EMA table, each as
//! `[len u64, len × f32]`.

use std::fs;
use std::path::Path;

use super::net::Mlp;
use super::train::DenoiserState;
use super::DiffusionConfig;
use crate::error::{Error, Result};
use crate::format::{Reader, Writer};
use crate::numerics::Rng;

const MAGIC: &[u8; 4] = b"R4TD";
const VERSION: u32 = 1;

pub fn write_state(state: &DenoiserState) -> Vec<u8> {
    let c = &state.config;
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(c.l as u32);
    w.u32(c.d as u32);
    w.f64(c.sigma_data);
    w.f64(c.sigma_min);
    w.f64(c.sigma_max);
    w.f64(c.cond_drop);
    w.f64(c.cfg_strength);
    w.u32(c.sample_steps as u32);
    w.f64(c.ema_decay);
    w.u32(c.width as u32);
    w.u32(c.depth as u32);
    w.f64(c.learning_rate);
    w.u32(c.warmup_steps as u32);
    w.u32(c.total_steps as u32);
    w.u32(c.batch_size as u32);
    w.f64(c.churn);
    let tables: Vec<&[f64]> = state.net.tables().into_iter().chain(state.ema.tables()).collect();
    w.u32(tables.len() as u32);
    for t in tables {
        w.u64(t.len() as u64);
        w.f32_slice(t);
    }
    w.into_bytes()
}

pub fn read_state(bytes: &[u8]) -> Result<DenoiserState> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let config_at = r.offset();
    let config = DiffusionConfig {
        l: r.u32("L")? as usize,
        d: r.u32("d")? as usize,
        sigma_data: r.f64("sigma_data")?,
        sigma_min: r.f64("sigma_min")?,
        sigma_max: r.f64("sigma_max")?,
        cond_drop: r.f64("cond_drop")?,
        cfg_strength: r.f64("cfg_strength")?,
        sample_steps: r.u32("sample_steps")? as usize,
        ema_decay: r.f64("ema_decay")?,
        width: r.u32("width")? as usize,
        depth: r.u32("depth")? as usize,
        learning_rate: r.f64("learning_rate")?,
        warmup_steps: r.u32("warmup_steps")? as usize,
        total_steps: r.u32("total_steps")? as usize,
        batch_size: r.u32("batch_size")? as usize,
        churn: r.f64("churn")?,
    };
    config
        .validate()
        .map_err(|e| Error::format(config_at, format!("config block: {e}")))?;

    let mut net = Mlp::new(config.input_len(), config.width, config.depth, config.d, &mut Rng::new(0));
    let mut ema = net.clone();
    let lens = net.table_lens();
    let count_at = r.offset();
    let count = r.u32("table count")? as usize;
    if count != 2 * lens.len() {
        return Err(Error::format(
            count_at,
            format!("expected {} tables, found {count}", 2 * lens.len()),
        ));
    }
    let read_into = |dest: Vec<&mut [f64]>, r: &mut Reader| -> Result<()> {
        for (i, t) in dest.into_iter().enumerate() {
            let at = r.offset();
            let len = r.u64("table length")? as usize;
            if len != t.len() {
                return Err(Error::format(at, format!("table {i}: length {len}, expected {}", t.len())));
            }
            let values = r.f32_vec(len, &format!("table {i}"))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(at, format!("table {i}: non-finite value")));
            }
            t.copy_from_slice(&values);
        }
        Ok(())
    };
    read_into(net.tables_mut(), &mut r)?;
    read_into(ema.tables_mut(), &mut r)?;
    r.finish()?;
    Ok(DenoiserState { config, net, ema })
}

pub fn save_state(state: &DenoiserState, path: &Path) -> Result<()> {
    fs::write(path, write_state(state))?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<DenoiserState> {
    read_state(&fs::read(path)?)
}
