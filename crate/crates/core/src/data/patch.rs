use crate::error::{Error, Result};

/// Number of patches covering `len` points.
pub fn patch_count(len: usize, patch: usize) -> usize {
    len.div_ceil(patch)
}

/// Splits `series` into `⌈L/P⌉` non-overlapping patches; a short final patch
/// is right-padded by repeating the last value.
pub fn patchify(series: &[f64], patch: usize) -> Result<Vec<Vec<f64>>> {
    if patch == 0 {
        return Err(Error::config("patch length must be at least 1"));
    }
    if patch > series.len() {
        return Err(Error::config(format!(
            "patch length {patch} exceeds series length {}",
            series.len()
        )));
    }
    let last = *series.last().unwrap();
    Ok(series
        .chunks(patch)
        .map(|c| {
            let mut p = c.to_vec();
            p.resize(patch, last);
            p
        })
        .collect())
}

/// Flat `[S·P]` buffer with the same padding rule.
pub fn pad_to_patches(series: &[f64], patch: usize) -> Vec<f64> {
    let mut out = series.to_vec();
    if let Some(&last) = series.last() {
        out.resize(patch_count(series.len(), patch) * patch, last);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(patch_count(672, 8), 84);
        assert_eq!(patch_count(672, 16), 42);
    }

    #[test]
    fn pads_with_last_value() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let p = patchify(&x, 4).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[2], vec![9.0, 10.0, 10.0, 10.0]);
        assert_eq!(pad_to_patches(&x, 4), p.concat());
    }

    #[test]
    fn oversized_patch_fails() {
        assert!(patchify(&[1.0, 2.0], 3).is_err());
    }
}
