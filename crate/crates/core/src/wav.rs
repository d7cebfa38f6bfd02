//! WAV input/output. Writes are 32-bit float PCM; reads accept float or
//! integer PCM scaled to [-1, 1).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    /// `channels[c][t]`.
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn interleaved(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * self.channels.len());
        for t in 0..n {
            for ch in &self.channels {
                out.push(ch[t]);
            }
        }
        out
    }

    pub fn from_interleaved(sample_rate: u32, channels: usize, data: &[f64]) -> Self {
        let mut chans = vec![Vec::with_capacity(data.len() / channels.max(1)); channels];
        for frame in data.chunks_exact(channels) {
            for (c, v) in chans.iter_mut().zip(frame) {
                c.push(*v);
            }
        }
        Self {
            sample_rate,
            channels: chans,
        }
    }
}

pub fn read(path: &Path) -> Result<Audio> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    if nch == 0 {
        return Err(Error::invalid(format!("{} has no channels", path.display())));
    }
    Ok(Audio::from_interleaved(spec.sample_rate, nch, &samples))
}

pub fn write(path: &Path, audio: &Audio) -> Result<()> {
    let nch = audio.channels.len();
    if nch == 0 || audio.channels.iter().any(|c| c.len() != audio.len()) {
        return Err(Error::invalid("channels must be non-empty and equally long"));
    }
    let spec = WavSpec {
        channels: nch as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for t in 0..audio.len() {
        for ch in &audio.channels {
            w.write_sample(ch[t] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

pub fn write_mono(path: &Path, sample_rate: u32, samples: &[f64]) -> Result<()> {
    write(
        path,
        &Audio {
            sample_rate,
            channels: vec![samples.to_vec()],
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_roundtrip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let a = Audio {
            sample_rate: 16000,
            channels: vec![vec![0.25, -0.5, 0.125], vec![1.0, 0.0, -1.0]],
        };
        let (p, q) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
        write(&p, &a).unwrap();
        write(&q, &a).unwrap();
        assert_eq!(read(&p).unwrap(), a);
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
        assert_eq!(a.interleaved(), vec![0.25, 1.0, -0.5, 0.0, 0.125, -1.0]);
        assert!(write(&p, &Audio { sample_rate: 16000, channels: vec![vec![0.0], vec![]] }).is_err());
    }

    #[test]
    fn integer_pcm_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [16384i16, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let a = read(&p).unwrap();
        assert_eq!(a.channels[0], vec![0.5, -1.0]);
    }
}
