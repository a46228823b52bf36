//! Log-power spectrogram rendered as a plain (P2) grayscale PGM.

use mugan_core::dsp::Spectrogram;

const FLOOR: f64 = 1e-10;

/// One column per STFT window, one row per frequency bin with the highest
/// bin on top. Pixels are `10·log10(|X|² + 1e-10)` scaled to 0..=255 over
/// the image's own range.
pub fn render(spec: &Spectrogram) -> String {
    let bins = spec.bins();
    let db: Vec<Vec<f64>> = (0..spec.windows)
        .map(|w| {
            spec.window(w)
                .iter()
                .map(|&p| 10.0 * (p + FLOOR).log10())
                .collect()
        })
        .collect();
    let (lo, hi) = db
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let mut out = format!("P2\n{} {}\n255\n", spec.windows, bins);
    for k in (0..bins).rev() {
        let row: Vec<String> = db
            .iter()
            .map(|col| {
                let v = if span > 0.0 {
                    (col[k] - lo) / span * 255.0
                } else {
                    0.0
                };
                format!("{}", v.round() as u8)
            })
            .collect();
        out += &row.join(" ");
        out.push('\n');
    }
    out
}
