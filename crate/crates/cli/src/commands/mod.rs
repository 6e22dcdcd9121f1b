pub mod eval;
pub mod finetune;
pub mod gradcheck;
pub mod interpret;
pub mod pretrain;
pub mod synth;

mod run_dir;

use serde_json::Value;

/// Serializes a flag for the configuration layer.
pub(crate) fn val<S: serde::Serialize>(v: S) -> Value {
    serde_json::to_value(v).expect("flag values serialize")
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_of_known_values() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert_eq!(s, 2.0);
        assert!(mean_std(&[]).0.is_nan());
    }
}
