use crate::tensor::{Segments, Tensor};

/// Standard sinusoidal code of position `pos`: even channels `sin`, odd
/// channels `cos`, wavelengths geometric from `2*pi` to `10000 * 2*pi`.
pub fn sinusoid(pos: f64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|c| {
            let i = (c / 2) as f64;
            let angle = pos / 10000f64.powf(2.0 * i / d as f64);
            if c % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Absolute encodings for every frame; positions restart at each segment.
pub fn absolute_encoding(segments: &Segments, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(segments.total() * d);
    for seg in segments.iter() {
        for t in 0..seg.len() {
            data.extend(sinusoid(t as f64, d));
        }
    }
    Tensor::new(vec![segments.total(), d], data).expect("non-empty segments")
}

/// Encodings of relative offsets `i - j` for `|i - j| < max_len`. Row `r`
/// holds offset `r - (max_len - 1)`.
pub fn relative_table(max_len: usize, d: usize) -> Tensor {
    let rows = 2 * max_len - 1;
    let data = (0..rows)
        .flat_map(|r| sinusoid(r as f64 - (max_len as f64 - 1.0), d))
        .collect();
    Tensor::new(vec![rows, d], data).expect("max_len >= 1")
}
