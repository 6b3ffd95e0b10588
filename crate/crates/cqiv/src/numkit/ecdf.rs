//! Empirical distribution functions and sample quantiles.

/// Convention for the empirical CDF value at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EcdfMode {
    /// #{v ≤ at} / n.
    Plain,
    /// (#{v < at} + (#{v = at} + 1)/2) / (n + 1); strictly inside (0,1),
    /// so the result can safely be passed through Φ⁻¹.
    Midpoint,
}

/// Rank of `at` within `values` under the chosen convention.
///
/// `values` must be nonempty; no sorting is required.
pub fn empirical_cdf_rank(values: &[f64], at: f64, mode: EcdfMode) -> f64 {
    debug_assert!(!values.is_empty());
    let n = values.len() as f64;
    match mode {
        EcdfMode::Plain => {
            let le = values.iter().filter(|&&v| v <= at).count() as f64;
            le / n
        }
        EcdfMode::Midpoint => {
            let lt = values.iter().filter(|&&v| v < at).count() as f64;
            let eq = values.iter().filter(|&&v| v == at).count() as f64;
            (lt + (eq + 1.0) / 2.0) / (n + 1.0)
        }
    }
}

/// Precomputed weighted empirical CDF for repeated queries.
///
/// With unit weights the midpoint mode reduces bit-exactly to the
/// unweighted formula (#{v < at} + (#{v = at} + 1)/2)/(n + 1); with general
/// weights counts are replaced by weight sums and the "+1" terms by the
/// mean weight.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Ecdf {
    sorted: Vec<(f64, f64)>,
    cum: Vec<f64>,
    total: f64,
    mean_weight: f64,
}

impl Ecdf {
    pub fn new(values: &[f64]) -> Self {
        Self::weighted(values, None)
    }

    pub fn weighted(values: &[f64], weights: Option<&[f64]>) -> Self {
        debug_assert!(!values.is_empty());
        let mut sorted: Vec<(f64, f64)> = match weights {
            Some(w) => values.iter().copied().zip(w.iter().copied()).collect(),
            None => values.iter().map(|&v| (v, 1.0)).collect(),
        };
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = Vec::with_capacity(sorted.len());
        let mut acc = 0.0;
        for &(_, w) in &sorted {
            acc += w;
            cum.push(acc);
        }
        let total = acc;
        let mean_weight = total / sorted.len() as f64;
        Ecdf { sorted, cum, total, mean_weight }
    }

    pub fn rank(&self, at: f64, mode: EcdfMode) -> f64 {
        let lt = self.sorted.partition_point(|&(v, _)| v < at);
        let le = self.sorted.partition_point(|&(v, _)| v <= at);
        let weight_lt = if lt == 0 { 0.0 } else { self.cum[lt - 1] };
        let weight_le = if le == 0 { 0.0 } else { self.cum[le - 1] };
        match mode {
            EcdfMode::Plain => weight_le / self.total,
            EcdfMode::Midpoint => {
                let weight_eq = weight_le - weight_lt;
                (weight_lt + (weight_eq + self.mean_weight) / 2.0)
                    / (self.total + self.mean_weight)
            }
        }
    }
}

/// Type-7 (R default) sample quantile with linear interpolation.
///
/// `sorted` must be ascending and nonempty; `p` in the unit interval.
pub fn quantile_type7_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Type-7 sample quantile of an unsorted slice.
pub fn quantile_type7(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_type7_sorted(&v, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_rank_counts() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(empirical_cdf_rank(&v, 2.0, EcdfMode::Plain), 2.0 / 3.0);
        assert_eq!(empirical_cdf_rank(&v, 10.0, EcdfMode::Plain), 1.0);
        assert_eq!(empirical_cdf_rank(&v, 0.0, EcdfMode::Plain), 0.0);
    }

    #[test]
    fn midpoint_stays_inside_unit_interval() {
        let v = [1.0, 2.0, 3.0];
        let below = empirical_cdf_rank(&v, -5.0, EcdfMode::Midpoint);
        assert_eq!(below, 0.5 / 4.0);
        let above = empirical_cdf_rank(&v, 9.0, EcdfMode::Midpoint);
        assert!(above < 1.0);
        assert_eq!(above, 3.5 / 4.0);
    }

    #[test]
    fn struct_matches_free_function() {
        let v = [3.0, 1.0, 2.0, 2.0, 5.0];
        let ecdf = Ecdf::new(&v);
        for at in [-1.0, 1.0, 2.0, 2.5, 5.0, 6.0] {
            for mode in [EcdfMode::Plain, EcdfMode::Midpoint] {
                assert_eq!(ecdf.rank(at, mode), empirical_cdf_rank(&v, at, mode));
            }
        }
    }

    #[test]
    fn weighted_rank_matches_replication() {
        // weight 2 on a value behaves like listing it twice under Plain mode
        let weighted = Ecdf::weighted(&[1.0, 2.0, 3.0], Some(&[1.0, 2.0, 1.0]));
        let replicated = Ecdf::new(&[1.0, 2.0, 2.0, 3.0]);
        for at in [0.5, 1.0, 2.0, 2.5, 3.0] {
            assert!(
                (weighted.rank(at, EcdfMode::Plain) - replicated.rank(at, EcdfMode::Plain)).abs()
                    < 1e-15
            );
        }
    }

    #[test]
    fn type7_quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_type7(&v, 0.0), 1.0);
        assert_eq!(quantile_type7(&v, 1.0), 4.0);
        assert_eq!(quantile_type7(&v, 0.5), 2.5);
        assert!((quantile_type7(&v, 0.05) - 1.15).abs() < 1e-15);
        assert!((quantile_type7(&v, 0.95) - 3.85).abs() < 1e-15);
    }
}
