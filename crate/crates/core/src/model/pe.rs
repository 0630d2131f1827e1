use crate::tensor::Tensor;

/// Sinusoidal position table `[len, d]`: channel `2i` holds
/// `sin(p / 10000^(2i/d))` and channel `2i + 1` the matching cosine.
pub fn sinusoidal_pe(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for p in 0..len {
        for c in 0..d {
            let i = (c / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * i / d as f64);
            data[p * d + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("shape matches")
}
