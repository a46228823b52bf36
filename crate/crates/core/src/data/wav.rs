//! RIFF/WAVE PCM16 reading and writing.

use std::fs;
use std::path::Path;

use super::DataError;
use crate::dsp::Waveform;

const PCM: u16 = 1;
const EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], at: usize) -> Option<u16> {
    b.get(at..at + 2).map(|s| u16::from_le_bytes([s[0], s[1]]))
}

fn u32_at(b: &[u8], at: usize) -> Option<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

struct Format {
    channels: u16,
    sample_rate: u32,
}

fn parse_fmt(body: &[u8]) -> Result<Format, DataError> {
    let short = || DataError::Malformed("fmt chunk too short".into());
    let mut tag = u16_at(body, 0).ok_or_else(short)?;
    let channels = u16_at(body, 2).ok_or_else(short)?;
    let sample_rate = u32_at(body, 4).ok_or_else(short)?;
    let bits = u16_at(body, 14).ok_or_else(short)?;
    if tag == EXTENSIBLE {
        // The sub-format GUID starts with the actual format tag.
        tag = u16_at(body, 24).ok_or_else(short)?;
    }
    if tag != PCM {
        return Err(DataError::UnsupportedCodec(tag));
    }
    if bits != 16 {
        return Err(DataError::BitDepth(bits));
    }
    if channels == 0 {
        return Err(DataError::Malformed("zero channels".into()));
    }
    if sample_rate == 0 {
        return Err(DataError::Malformed("zero sample rate".into()));
    }
    Ok(Format {
        channels,
        sample_rate,
    })
}

/// Decodes a PCM16 WAV image. Multichannel audio is averaged to mono and
/// samples are scaled by 1/32768.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform, DataError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(DataError::Malformed("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut format = None;
    let mut data = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4).unwrap() as usize;
        let body_start = pos + 8;
        let body = bytes
            .get(body_start..body_start.saturating_add(size))
            .ok_or_else(|| {
                DataError::Malformed(format!(
                    "chunk {:?} overruns file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        match id {
            b"fmt " => format = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
    let format = format.ok_or_else(|| DataError::Malformed("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| DataError::Malformed("no data chunk".into()))?;
    let ch = format.channels as usize;
    let frame = 2 * ch;
    if data.len() % frame != 0 {
        return Err(DataError::Malformed(
            "data chunk is not a whole number of frames".into(),
        ));
    }
    let samples = data
        .chunks_exact(frame)
        .map(|f| {
            let sum: f64 = f
                .chunks_exact(2)
                .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64)
                .sum();
            sum / ch as f64 / 32768.0
        })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: format.sample_rate as f64,
    })
}

/// Encodes a mono PCM16 WAV image with saturating rounding.
pub fn encode_wav(clip: &Waveform) -> Vec<u8> {
    let rate = clip.sample_rate.round() as u32;
    let data_len = (clip.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32768.0)
            .round()
            .clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::Io(path.display().to_string(), e))?;
    parse_wav(&bytes)
}

pub fn write_wav(path: impl AsRef<Path>, clip: &Waveform) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(|e| DataError::Io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(format: u16, channels: u16, bits: u16, data: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&format.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&8000u32.to_le_bytes());
        b.extend_from_slice(&(8000u32 * channels as u32 * bits as u32 / 8).to_le_bytes());
        b.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(data);
        b
    }

    #[test]
    fn hand_built_fixture() {
        let values: [i16; 8] = [0, 1, -1, 16384, -16384, 32767, -32768, 100];
        let data: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let clip = parse_wav(&header(1, 1, 16, &data)).unwrap();
        assert_eq!(clip.sample_rate, 8000.0);
        let want: Vec<f64> = values.iter().map(|&v| v as f64 / 32768.0).collect();
        assert_eq!(clip.samples, want);
        assert_eq!(clip.samples[3], 0.5);
        assert_eq!(clip.samples[6], -1.0);
    }

    #[test]
    fn stereo_is_averaged() {
        let frames: [(i16, i16); 2] = [(1000, 3000), (-200, 200)];
        let data: Vec<u8> = frames
            .iter()
            .flat_map(|(l, r)| [l.to_le_bytes(), r.to_le_bytes()].concat())
            .collect();
        let clip = parse_wav(&header(1, 2, 16, &data)).unwrap();
        assert_eq!(clip.samples, vec![2000.0 / 32768.0, 0.0]);
    }

    #[test]
    fn rejections() {
        assert!(matches!(
            parse_wav(b"RIFX0000WAVE"),
            Err(DataError::Malformed(_))
        ));
        assert!(matches!(
            parse_wav(&header(3, 1, 16, &[0, 0])),
            Err(DataError::UnsupportedCodec(3))
        ));
        assert!(matches!(
            parse_wav(&header(1, 1, 24, &[0, 0, 0])),
            Err(DataError::BitDepth(24))
        ));
        let mut truncated = header(1, 1, 16, &[0, 0, 1, 0]);
        truncated.truncate(truncated.len() - 2);
        assert!(matches!(
            parse_wav(&truncated),
            Err(DataError::Malformed(_))
        ));
    }

    #[test]
    fn round_trip_within_one_lsb() {
        let samples: Vec<f64> = (0..500).map(|i| ((i as f64) * 0.123).sin() * 1.2).collect();
        let clip = Waveform::new(samples, 22050.0).unwrap();
        let back = parse_wav(&encode_wav(&clip)).unwrap();
        assert_eq!(back.sample_rate, 22050.0);
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            let expect = a.clamp(-1.0, 32767.0 / 32768.0);
            assert!((expect - b).abs() <= 1.0 / 32768.0);
        }
        let zeros = Waveform::new(vec![0.0; 64], 8000.0).unwrap();
        assert_eq!(parse_wav(&encode_wav(&zeros)).unwrap(), zeros);
    }
}
