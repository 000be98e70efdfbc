use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

fn u16_at(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::MalformedWav(format!("truncated at byte {at}")))
}

fn u32_at(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::MalformedWav(format!("truncated at byte {at}")))
}

/// Decodes a RIFF/WAVE PCM16 mono byte buffer.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedWav("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::MalformedWav("fmt chunk too small".into()));
                }
                fmt = Some((
                    u16_at(bytes, body)?,
                    u16_at(bytes, body + 2)?,
                    u32_at(bytes, body + 4)?,
                    u16_at(bytes, body + 14)?,
                ));
            }
            b"data" => {
                let (format, channels, rate, bits) =
                    fmt.ok_or_else(|| Error::MalformedWav("data chunk before fmt chunk".into()))?;
                if format != 1 || bits != 16 {
                    return Err(Error::UnsupportedEncoding { format, bits });
                }
                if channels != 1 {
                    return Err(Error::Multichannel(channels));
                }
                let data = bytes.get(body..body + size).ok_or_else(|| {
                    Error::MalformedWav("data chunk runs past end of file".into())
                })?;
                let samples = data
                    .chunks_exact(2)
                    .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                    .collect();
                return Waveform::new(samples, rate);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(Error::MalformedWav("no data chunk".into()))
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    parse_wav(&std::fs::read(path)?)
}

/// Encodes as PCM16 mono, clamping to `[-1, 1)`.
pub fn wav_bytes(wave: &Waveform) -> Vec<u8> {
    let data_len = (wave.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wave.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn save_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    std::fs::write(path, wav_bytes(wave))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(format: u16, channels: u16, rate: u32, bits: u16, data: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&format.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * u32::from(channels) * u32::from(bits) / 8).to_le_bytes());
        b.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(data);
        b
    }

    #[test]
    fn single_sample_is_scaled() {
        let w = parse_wav(&header(1, 1, 16000, 16, &16384i16.to_le_bytes())).unwrap();
        assert_eq!(w.samples, vec![0.5]);
        assert_eq!(w.sample_rate, 16000);
    }

    #[test]
    fn error_paths_are_distinct() {
        let good = header(1, 1, 16000, 16, &[0, 0]);
        assert!(matches!(
            parse_wav(&good[..20]),
            Err(Error::MalformedWav(_))
        ));
        assert!(matches!(
            parse_wav(b"RIFX0000WAVE"),
            Err(Error::MalformedWav(_))
        ));
        assert!(matches!(
            parse_wav(&header(3, 1, 16000, 32, &[0; 4])),
            Err(Error::UnsupportedEncoding {
                format: 3,
                bits: 32
            })
        ));
        assert!(matches!(
            parse_wav(&header(1, 2, 16000, 16, &[0; 4])),
            Err(Error::Multichannel(2))
        ));
    }

    #[test]
    fn encode_decode_round_trip() {
        let w = Waveform::new(vec![0.0, 0.25, -0.5, -1.0], 8000).unwrap();
        assert_eq!(parse_wav(&wav_bytes(&w)).unwrap(), w);
    }
}
