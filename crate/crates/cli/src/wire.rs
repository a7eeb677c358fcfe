//! JSON bodies of the embedding service. Floats carry 17 significant
//! digits, enough to round-trip any f64 exactly.

use serde::Deserialize;

/// `v` in scientific notation with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn embedding_body(values: &[f64]) -> String {
    let mut out = String::with_capacity(16 + values.len() * 25);
    out.push_str("{\"embedding\":[");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format_f64(*v));
    }
    out.push_str("]}");
    out
}

#[derive(Debug, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
}

pub fn parse_embedding_body(body: &str) -> serde_json::Result<Vec<f64>> {
    serde_json::from_str::<EmbedResponse>(body).map(|r| r.embedding)
}

#[derive(Debug, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

pub fn request_body(text: &str) -> String {
    serde_json::json!({ "text": text }).to_string()
}

/// Field order as documented: status first.
pub fn health_body(dim: usize) -> String {
    format!("{{\"status\":\"ok\",\"dim\":{dim}}}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bit_exactly() {
        let mut x = 0x9e37_79b9_7f4a_7c15_u64;
        let mut values = vec![0.0, -0.0, 1.0, -1.0, f64::MIN_POSITIVE, 5e-324, f64::MAX, 0.1, 1.0 / 3.0];
        for _ in 0..2000 {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            let v = f64::from_bits(x);
            if v.is_finite() {
                values.push(v);
            }
        }
        let back = parse_embedding_body(&embedding_body(&values)).unwrap();
        assert_eq!(back.len(), values.len());
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a:e}");
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(format_f64(-2.5), "-2.5000000000000000e0");
    }
}
