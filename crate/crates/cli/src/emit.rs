//! Deterministic serialization helpers: every floating-point number is
//! emitted with 17 significant digits so outputs are byte-identical across
//! runs and diffable across machines.

use nalgebra::DVector;

pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn json_vec(v: &DVector<f64>) -> String {
    let cells: Vec<String> = v.iter().map(|&x| fmt17(x)).collect();
    format!("[{}]", cells.join(", "))
}

pub fn json_matrix(m: &nalgebra::DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|r| {
            let cells: Vec<String> = (0..m.ncols()).map(|c| fmt17(m[(r, c)])).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

pub fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

pub fn csv_vec(v: &DVector<f64>) -> String {
    let cells: Vec<String> = v.iter().map(|&x| fmt17(x)).collect();
    cells.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_roundtrip() {
        for &x in &[0.1, 1.0 / 3.0, std::f64::consts::PI, -2.5e-9, 0.0] {
            let s = fmt17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }
}
