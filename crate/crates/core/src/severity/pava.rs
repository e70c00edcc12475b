/// Weighted least-squares projection of `values` onto nonincreasing
/// sequences (pool adjacent violators).
pub fn pava_nonincreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len(), "values and weights differ in length");
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        assert!(w > 0.0, "weights must be positive");
        let mut cur = (v, w, 1);
        while let Some(&(m, pw, len)) = blocks.last() {
            if m >= cur.0 {
                break;
            }
            blocks.pop();
            let total = pw + cur.1;
            cur = ((m * pw + cur.0 * cur.1) / total, total, len + cur.2);
        }
        blocks.push(cur);
    }
    blocks.into_iter().flat_map(|(m, _, len)| std::iter::repeat_n(m, len)).collect()
}

/// Equal-weight projection; keeps the plain sum of `values`.
pub fn pava_nonincreasing_equal(values: &[f64]) -> Vec<f64> {
    pava_nonincreasing(values, &vec![1.0; values.len()])
}
