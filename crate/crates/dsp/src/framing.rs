/// Number of analysis frames for `len` samples: `ceil(len / hop)`, rounded up to even.
pub fn frame_count(len: usize, hop: usize) -> usize {
    let t = len.div_ceil(hop);
    t + t % 2
}

/// Reflect an out-of-range index back into `0..len` (edge sample not repeated).
pub(crate) fn reflect(i: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Copy `out.len()` samples starting at `start`, reflecting at both edges.
pub(crate) fn padded_segment(x: &[f64], start: isize, out: &mut [f64]) {
    let len = x.len();
    if start >= 0 && start as usize + out.len() <= len {
        out.copy_from_slice(&x[start as usize..start as usize + out.len()]);
        return;
    }
    for (k, o) in out.iter_mut().enumerate() {
        *o = x[reflect(start + k as isize, len)];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_is_even_ceiling() {
        assert_eq!(frame_count(16_000, 160), 100);
        assert_eq!(frame_count(16_001, 160), 102);
        assert_eq!(frame_count(160 * 3, 160), 4);
        assert_eq!(frame_count(1, 160), 2);
    }

    #[test]
    fn reflection_mirrors_without_repeating_edges() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }
}
