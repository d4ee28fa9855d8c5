//! On-disk formats.
//!
//! CIR file (`CIR1`): one UTF-8 JSON header line terminated by `\n`, then the
//! payload as little-endian `f32` pairs `(re, im)`, row-major bin by bin
//! (all chirps of bin 0, then bin 1, ...). Range bins are 0-based.
//!
//! Feature file (`FTR1`): same layout with a real-valued payload ordered
//! `[bin][step][channel]`.
//!
//! Recording bundle: a directory with `cir.bin`, `rpeaks.csv` (one time in
//! seconds per line), `meta.json`, and optionally `dominant.csv` (ground-truth
//! dominant bin per frame).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::bundle::{Label, RecordingBundle};
use crate::error::{Error, Result};
use crate::radar::{CirMatrix, RadarConfig};
use crate::sigproc::{FeatureBlock, NUM_CHANNELS};
use crate::synth::SubjectProfile;

pub const CIR_MAGIC: &str = "CIR1";
pub const FEATURE_MAGIC: &str = "FTR1";
const MAX_HEADER: usize = 1 << 16;

#[derive(Debug, Serialize, Deserialize)]
struct CirHeader {
    magic: String,
    num_samples: u64,
    num_chirps: u64,
    carrier_freq: f64,
    chirp_period: f64,
    idle_time: f64,
    processing_rate: f64,
    #[serde(default = "default_adc_rate")]
    adc_rate: f64,
}

fn default_adc_rate() -> f64 {
    RadarConfig::default().adc_rate
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHeader {
    magic: String,
    num_bins: u64,
    num_steps: u64,
    num_channels: u64,
    rate: f64,
    bin_offsets: Vec<i64>,
}

fn format_err<T>(offset: u64, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format { offset, msg: msg.into() })
}

/// Read the header line; returns the raw line (without `\n`) and its length
/// including the terminator.
fn read_header_line<R: BufRead>(r: &mut R) -> Result<(Vec<u8>, u64)> {
    let mut line = Vec::new();
    let n = r.by_ref().take(MAX_HEADER as u64).read_until(b'\n', &mut line)?;
    if n == 0 {
        return format_err(0, "empty file");
    }
    if line.last() != Some(&b'\n') {
        return format_err(n as u64, "header line not terminated by newline");
    }
    line.pop();
    Ok((line, n as u64))
}

/// Read exactly `count` f32 values, reporting truncation at the byte offset
/// where the payload ran out.
fn read_f32s<R: Read>(r: &mut R, count: usize, base_offset: u64) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; count * 4];
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => {
                return format_err(
                    base_offset + filled as u64,
                    format!("payload truncated: expected {} bytes, found {filled}", buf.len()),
                )
            }
            k => filled += k,
        }
    }
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn write_cir<W: Write>(cir: &CirMatrix, w: &mut W) -> Result<()> {
    let c = cir.config;
    let header = CirHeader {
        magic: CIR_MAGIC.into(),
        num_samples: cir.num_samples() as u64,
        num_chirps: cir.num_chirps() as u64,
        carrier_freq: c.carrier_freq,
        chirp_period: c.chirp_period,
        idle_time: c.idle_time,
        processing_rate: c.processing_rate,
        adc_rate: c.adc_rate,
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(cir.data().len() * 8);
    for s in cir.data() {
        buf.extend_from_slice(&s.re.to_le_bytes());
        buf.extend_from_slice(&s.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_cir<R: BufRead>(r: &mut R) -> Result<CirMatrix> {
    let (line, header_len) = read_header_line(r)?;
    let header: CirHeader = serde_json::from_slice(&line)
        .or_else(|e| format_err(0, format!("malformed CIR header: {e}")))?;
    if header.magic != CIR_MAGIC {
        return format_err(0, format!("bad magic {:?}", header.magic));
    }
    if header.num_samples == 0 || header.num_chirps == 0 {
        return format_err(
            0,
            format!("invalid dimensions {}x{}", header.num_samples, header.num_chirps),
        );
    }
    let count = header
        .num_samples
        .checked_mul(header.num_chirps)
        .and_then(|n| n.checked_mul(2))
        .filter(|n| n.checked_mul(4).is_some_and(|b| b <= isize::MAX as u64))
        .ok_or_else(|| Error::Format {
            offset: 0,
            msg: format!("dimensions {}x{} overflow", header.num_samples, header.num_chirps),
        })?;
    let config = RadarConfig {
        carrier_freq: header.carrier_freq,
        chirp_period: header.chirp_period,
        idle_time: header.idle_time,
        samples_per_chirp: header.num_samples as usize,
        adc_rate: header.adc_rate,
        processing_rate: header.processing_rate,
    };
    config
        .validate()
        .or_else(|e| format_err(0, format!("header config rejected: {e}")))?;
    let raw = read_f32s(r, count as usize, header_len)?;
    let data = raw.chunks_exact(2).map(|p| Complex32::new(p[0], p[1])).collect();
    CirMatrix::new(data, header.num_chirps as usize, config)
        .or_else(|e| format_err(header_len, e.to_string()))
}

pub fn save_cir(cir: &CirMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cir(cir, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_cir(path: impl AsRef<Path>) -> Result<CirMatrix> {
    read_cir(&mut BufReader::new(File::open(path)?))
}

pub fn write_features<W: Write>(block: &FeatureBlock, w: &mut W) -> Result<()> {
    let header = FeatureHeader {
        magic: FEATURE_MAGIC.into(),
        num_bins: block.num_bins() as u64,
        num_steps: block.num_steps() as u64,
        num_channels: NUM_CHANNELS as u64,
        rate: block.rate,
        bin_offsets: block.bin_offsets.clone(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(block.data.len() * 4);
    for b in 0..block.num_bins() {
        for t in 0..block.num_steps() {
            for c in 0..NUM_CHANNELS {
                buf.extend_from_slice(&(block.channel(b, c)[t] as f32).to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_features<R: BufRead>(r: &mut R) -> Result<FeatureBlock> {
    let (line, header_len) = read_header_line(r)?;
    let header: FeatureHeader = serde_json::from_slice(&line)
        .or_else(|e| format_err(0, format!("malformed feature header: {e}")))?;
    if header.magic != FEATURE_MAGIC {
        return format_err(0, format!("bad magic {:?}", header.magic));
    }
    if header.num_channels != NUM_CHANNELS as u64 {
        return format_err(0, format!("expected {NUM_CHANNELS} channels"));
    }
    if header.num_bins == 0 || header.num_steps == 0 || header.bin_offsets.len() as u64 != header.num_bins {
        return format_err(0, "invalid feature dimensions");
    }
    let count = header
        .num_bins
        .checked_mul(header.num_steps)
        .and_then(|n| n.checked_mul(NUM_CHANNELS as u64))
        .filter(|n| n.checked_mul(4).is_some_and(|b| b <= isize::MAX as u64))
        .ok_or_else(|| Error::Format { offset: 0, msg: "feature dimensions overflow".into() })?;
    let raw = read_f32s(r, count as usize, header_len)?;
    let (bins, steps) = (header.num_bins as usize, header.num_steps as usize);
    let mut block = FeatureBlock::zeros(bins, steps, header.rate, header.bin_offsets);
    for b in 0..bins {
        for t in 0..steps {
            for c in 0..NUM_CHANNELS {
                block.channel_mut(b, c)[t] = f64::from(raw[(b * steps + t) * NUM_CHANNELS + c]);
            }
        }
    }
    Ok(block)
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleMeta {
    label: Label,
    seed: u64,
    duration: f64,
    profile: SubjectProfile,
}

pub fn save_bundle(bundle: &RecordingBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    save_cir(&bundle.cir, dir.join("cir.bin"))?;
    let mut rp = BufWriter::new(File::create(dir.join("rpeaks.csv"))?);
    for t in &bundle.r_peaks {
        writeln!(rp, "{t}")?;
    }
    rp.flush()?;
    let meta = BundleMeta {
        label: bundle.label,
        seed: bundle.subject_profile.seed,
        duration: bundle.duration,
        profile: bundle.subject_profile.clone(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    if !bundle.dominant_bins.is_empty() {
        let mut d = BufWriter::new(File::create(dir.join("dominant.csv"))?);
        for b in &bundle.dominant_bins {
            writeln!(d, "{b}")?;
        }
        d.flush()?;
    }
    Ok(())
}

fn read_lines<T: std::str::FromStr>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            out.push(trimmed.parse().map_err(|_| Error::Format {
                offset,
                msg: format!("{}: cannot parse {trimmed:?}", path.display()),
            })?);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<RecordingBundle> {
    let dir = dir.as_ref();
    let cir = load_cir(dir.join("cir.bin"))?;
    let r_peaks = read_lines::<f64>(&dir.join("rpeaks.csv"))?;
    let meta: BundleMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    let dom_path = dir.join("dominant.csv");
    let dominant_bins = if dom_path.exists() { read_lines(&dom_path)? } else { Vec::new() };
    let bundle = RecordingBundle {
        cir,
        r_peaks,
        label: meta.label,
        subject_profile: meta.profile,
        duration: meta.duration,
        dominant_bins,
    };
    bundle.validate()?;
    Ok(bundle)
}
