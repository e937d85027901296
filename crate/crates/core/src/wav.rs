//! WAV reading and writing (mono or multichannel).

use std::io::{Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleEncoding {
    #[default]
    Float32,
    Pcm16,
}

/// Deinterleaved audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Self {
        Audio {
            sample_rate,
            channels: vec![samples],
        }
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_wav_from<R: Read>(reader: R) -> Result<Audio> {
    let mut reader = WavReader::new(reader)?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if n_ch == 0 {
        return Err(invalid("WAV file declares zero channels"));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
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
    let frames = interleaved.len() / n_ch;
    let channels = (0..n_ch)
        .map(|c| (0..frames).map(|i| interleaved[i * n_ch + c]).collect())
        .collect();
    Ok(Audio {
        sample_rate: spec.sample_rate,
        channels,
    })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_wav_from(file)
}

pub fn write_wav_to<W: Write + Seek>(writer: W, audio: &Audio, encoding: SampleEncoding) -> Result<()> {
    let n_ch = audio.channels.len();
    if n_ch == 0 || n_ch > u16::MAX as usize {
        return Err(invalid("audio must have between 1 and 65535 channels"));
    }
    let len = audio.len();
    if audio.channels.iter().any(|c| c.len() != len) {
        return Err(invalid("all channels must have the same length"));
    }
    let spec = WavSpec {
        channels: n_ch as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: match encoding {
            SampleEncoding::Float32 => 32,
            SampleEncoding::Pcm16 => 16,
        },
        sample_format: match encoding {
            SampleEncoding::Float32 => SampleFormat::Float,
            SampleEncoding::Pcm16 => SampleFormat::Int,
        },
    };
    let mut w = WavWriter::new(writer, spec)?;
    for i in 0..len {
        for ch in &audio.channels {
            match encoding {
                SampleEncoding::Float32 => w.write_sample(ch[i] as f32)?,
                SampleEncoding::Pcm16 => {
                    let v = (ch[i].clamp(-1.0, 1.0) * 32767.0).round() as i16;
                    w.write_sample(v)?
                }
            }
        }
    }
    w.finalize()?;
    Ok(())
}

pub fn write_wav(path: impl AsRef<Path>, audio: &Audio, encoding: SampleEncoding) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_wav_to(file, audio, encoding)
}

/// Encodes to an in-memory RIFF buffer.
pub fn wav_bytes(audio: &Audio, encoding: SampleEncoding) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::new());
    write_wav_to(&mut cursor, audio, encoding)?;
    Ok(cursor.into_inner())
}
