use std::f64::consts::PI;

/// Encoded length of a `dim`-vector with `bands` frequency bands.
pub fn encoded_len(dim: usize, bands: usize) -> usize {
    dim * (1 + 2 * bands)
}

/// Appends `(x, sin(2⁰πx), cos(2⁰πx), …, sin(2^{L-1}πx), cos(2^{L-1}πx))`
/// for each component of `x`, component blocks contiguous.
pub fn encode_into(x: &[f64], bands: usize, out: &mut Vec<f64>) {
    for &v in x {
        out.push(v);
        let mut freq = PI;
        for _ in 0..bands {
            let (s, c) = (freq * v).sin_cos();
            out.push(s);
            out.push(c);
            freq *= 2.0;
        }
    }
}

pub fn positional_encode(x: &[f64], bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(x.len(), bands));
    encode_into(x, bands, &mut out);
    out
}

/// Derivative of one component's encoding block with respect to that component.
pub fn encode_derivative(v: f64, bands: usize, out: &mut Vec<f64>) {
    out.push(1.0);
    let mut freq = PI;
    for _ in 0..bands {
        let (s, c) = (freq * v).sin_cos();
        out.push(freq * c);
        out.push(-freq * s);
        freq *= 2.0;
    }
}

/// Second derivative of one component's encoding block.
pub fn encode_second_derivative(v: f64, bands: usize, out: &mut Vec<f64>) {
    out.push(0.0);
    let mut freq = PI;
    for _ in 0..bands {
        let (s, c) = (freq * v).sin_cos();
        let f2 = freq * freq;
        out.push(-f2 * s);
        out.push(-f2 * c);
        freq *= 2.0;
    }
}
