//! Fixed atom supports, categorical return distributions, their moments, and
//! the shift-and-project distributional Bellman machinery.

use thiserror::Error;

/// Absolute tolerance on probability sums when validating distributions.
pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CategoricalError {
    #[error("support needs at least 2 atoms, got {0}")]
    TooFewAtoms(usize),
    #[error("support bounds must be finite with v_min < v_max, got [{v_min}, {v_max}]")]
    BadBounds { v_min: f64, v_max: f64 },
    #[error("probability vector length {got} does not match support size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("probabilities must be nonnegative and sum to 1, got sum {sum}")]
    NotADistribution { sum: f64 },
    #[error("reward must be finite, got {0}")]
    NonFiniteReward(f64),
    #[error("discount must lie in (0, 1], got {0}")]
    BadDiscount(f64),
    #[error("mixture weight count {weights} does not match distribution count {dists}")]
    WeightCountMismatch { weights: usize, dists: usize },
    #[error("cannot mix an empty list of distributions")]
    EmptyMixture,
}

/// The fixed atom grid `{z_i}` on `[v_min, v_max]` shared by all distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    n_atoms: usize,
    v_min: f64,
    v_max: f64,
    delta_z: f64,
    atoms: Vec<f64>,
}

impl Support {
    /// Builds `n_atoms` evenly spaced atoms with `z_0 = v_min` and
    /// `z_{N-1} = v_max` exactly.
    pub fn new(n_atoms: usize, v_min: f64, v_max: f64) -> Result<Self, CategoricalError> {
        if n_atoms < 2 {
            return Err(CategoricalError::TooFewAtoms(n_atoms));
        }
        if !v_min.is_finite() || !v_max.is_finite() || v_min >= v_max {
            return Err(CategoricalError::BadBounds { v_min, v_max });
        }
        let delta_z = (v_max - v_min) / (n_atoms - 1) as f64;
        let mut atoms: Vec<f64> = (0..n_atoms).map(|i| v_min + i as f64 * delta_z).collect();
        // Pin the endpoints against accumulated rounding.
        atoms[0] = v_min;
        atoms[n_atoms - 1] = v_max;
        Ok(Self { n_atoms, v_min, v_max, delta_z, atoms })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn delta_z(&self) -> f64 {
        self.delta_z
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }
}

/// A probability mass vector over a `Support`'s atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDistribution {
    probs: Vec<f64>,
}

impl CategoricalDistribution {
    /// Validates nonnegativity and normalization (sum within [`PROB_SUM_TOL`]).
    /// Entries are kept as given; no silent renormalization.
    pub fn new(probs: Vec<f64>) -> Result<Self, CategoricalError> {
        let mut sum = 0.0;
        for &p in &probs {
            if !(p >= 0.0) {
                return Err(CategoricalError::NotADistribution { sum: f64::NAN });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(CategoricalError::NotADistribution { sum });
        }
        Ok(Self { probs })
    }

    /// All mass on atom `index`.
    pub fn one_hot(index: usize, n_atoms: usize) -> Self {
        assert!(index < n_atoms, "one_hot index {index} out of range {n_atoms}");
        let mut probs = vec![0.0; n_atoms];
        probs[index] = 1.0;
        Self { probs }
    }

    /// Uniform mass `1/N` on every atom.
    pub fn uniform(n_atoms: usize) -> Self {
        assert!(n_atoms > 0);
        Self { probs: vec![1.0 / n_atoms as f64; n_atoms] }
    }

    /// Wraps a mass vector that is known-valid by construction (projection
    /// output, softmax rows). Debug builds still check it.
    pub(crate) fn from_probs_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!(probs.iter().all(|&p| p >= 0.0));
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn check_support(&self, support: &Support) -> Result<(), CategoricalError> {
        if self.probs.len() != support.n_atoms() {
            return Err(CategoricalError::LengthMismatch {
                expected: support.n_atoms(),
                got: self.probs.len(),
            });
        }
        Ok(())
    }

    /// Mean return `Σ_i z_i p_i`.
    pub fn expectation(&self, support: &Support) -> Result<f64, CategoricalError> {
        self.check_support(support)?;
        Ok(expectation_raw(&self.probs, support.atoms()))
    }

    /// `Σ_i p_i (z_i − μ)²` with `μ` the expectation.
    pub fn variance(&self, support: &Support) -> Result<f64, CategoricalError> {
        self.check_support(support)?;
        let mu = expectation_raw(&self.probs, support.atoms());
        let var = self
            .probs
            .iter()
            .zip(support.atoms())
            .map(|(&p, &z)| p * (z - mu) * (z - mu))
            .sum::<f64>();
        Ok(var.max(0.0))
    }
}

pub(crate) fn expectation_raw(probs: &[f64], atoms: &[f64]) -> f64 {
    probs.iter().zip(atoms).map(|(&p, &z)| p * z).sum()
}

/// Shifts every atom by `r + γ z_i` (just `r` on terminal transitions), clamps
/// to the support range, and redistributes each atom's mass onto the two
/// bracketing atoms by linear interpolation. Mass landing exactly on an atom
/// stays whole on that atom.
pub fn shift_and_project(
    dist: &CategoricalDistribution,
    support: &Support,
    reward: f64,
    gamma: f64,
    terminal: bool,
) -> Result<CategoricalDistribution, CategoricalError> {
    dist.check_support(support)?;
    if !reward.is_finite() {
        return Err(CategoricalError::NonFiniteReward(reward));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(CategoricalError::BadDiscount(gamma));
    }
    let mut out = vec![0.0; support.n_atoms()];
    project_into(dist.probs(), support, reward, gamma, terminal, &mut out);
    Ok(CategoricalDistribution::from_probs_unchecked(out))
}

/// Unchecked projection kernel shared by the public API and the training hot
/// path. `out` must be zeroed and `src.len() == out.len() == N`.
pub(crate) fn project_into(
    src: &[f64],
    support: &Support,
    reward: f64,
    gamma: f64,
    terminal: bool,
    out: &mut [f64],
) {
    let n = support.n_atoms();
    let v_min = support.v_min();
    let v_max = support.v_max();
    let delta_z = support.delta_z();
    let atoms = support.atoms();
    for i in 0..n {
        let p = src[i];
        if p == 0.0 {
            continue;
        }
        let v = if terminal { reward } else { reward + gamma * atoms[i] };
        let v = v.clamp(v_min, v_max);
        let b = (v - v_min) / delta_z;
        // Clip indices to guard boundary rounding.
        let lower = (b.floor() as isize).clamp(0, (n - 1) as isize) as usize;
        let upper = (lower + 1).min(n - 1);
        let weight_upper = b - lower as f64;
        if upper == lower || weight_upper <= 0.0 {
            out[lower] += p;
        } else if weight_upper >= 1.0 {
            out[upper] += p;
        } else {
            out[lower] += p * (upper as f64 - b);
            out[upper] += p * weight_upper;
        }
    }
}

/// Atomwise convex combination `Σ_k w_k d_k` of distributions over one support.
pub fn mix(
    dists: &[CategoricalDistribution],
    weights: &[f64],
) -> Result<CategoricalDistribution, CategoricalError> {
    if dists.is_empty() {
        return Err(CategoricalError::EmptyMixture);
    }
    if dists.len() != weights.len() {
        return Err(CategoricalError::WeightCountMismatch {
            weights: weights.len(),
            dists: dists.len(),
        });
    }
    let mut wsum = 0.0;
    for &w in weights {
        if !(w >= 0.0) {
            return Err(CategoricalError::NotADistribution { sum: f64::NAN });
        }
        wsum += w;
    }
    if (wsum - 1.0).abs() > PROB_SUM_TOL {
        return Err(CategoricalError::NotADistribution { sum: wsum });
    }
    let n = dists[0].len();
    for d in &dists[1..] {
        if d.len() != n {
            return Err(CategoricalError::LengthMismatch { expected: n, got: d.len() });
        }
    }
    let mut out = vec![0.0; n];
    for (d, &w) in dists.iter().zip(weights) {
        for (o, &p) in out.iter_mut().zip(d.probs()) {
            *o += w * p;
        }
    }
    Ok(CategoricalDistribution::from_probs_unchecked(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn support_three_atoms() {
        let s = Support::new(3, 0.0, 2.0).unwrap();
        assert_eq!(s.atoms(), &[0.0, 1.0, 2.0]);
        assert_eq!(s.delta_z(), 1.0);
    }

    #[test]
    fn support_two_atoms_endpoints_only() {
        let s = Support::new(2, -1.0, 1.0).unwrap();
        assert_eq!(s.atoms(), &[-1.0, 1.0]);
        assert_eq!(s.delta_z(), 2.0);
    }

    #[test]
    fn support_c51_default_grid() {
        // v_min + i * (v_max - v_min) / (N - 1) evaluated by hand.
        let s = Support::new(51, -10.0, 10.0).unwrap();
        assert_abs_diff_eq!(s.delta_z(), 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(s.atoms()[25], 0.0, epsilon = 1e-12);
        assert_eq!(s.atoms()[0], -10.0);
        assert_eq!(s.atoms()[50], 10.0);
    }

    #[test]
    fn support_spacing_is_even() {
        let s = Support::new(101, -100.0, 100.0).unwrap();
        let dz = s.delta_z();
        for w in s.atoms().windows(2) {
            assert!(((w[1] - w[0]) - dz).abs() <= 1e-12 * dz.abs());
        }
    }

    #[test]
    fn support_rejects_bad_inputs() {
        assert!(Support::new(1, 0.0, 1.0).is_err());
        assert!(Support::new(3, 1.0, 1.0).is_err());
        assert!(Support::new(3, 2.0, 1.0).is_err());
        assert!(Support::new(3, f64::NAN, 1.0).is_err());
        assert!(Support::new(3, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(CategoricalDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(CategoricalDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(CategoricalDistribution::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn expectation_examples() {
        let s = Support::new(3, 0.0, 2.0).unwrap();
        let uniform = CategoricalDistribution::uniform(3);
        assert_abs_diff_eq!(uniform.expectation(&s).unwrap(), 1.0, epsilon = 1e-12);
        let hot = CategoricalDistribution::one_hot(2, 3);
        assert_eq!(hot.expectation(&s).unwrap(), 2.0);
        let split = CategoricalDistribution::new(vec![0.5, 0.0, 0.5]).unwrap();
        assert_abs_diff_eq!(split.expectation(&s).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn expectation_length_mismatch() {
        let s = Support::new(4, 0.0, 3.0).unwrap();
        let d = CategoricalDistribution::uniform(3);
        assert!(matches!(
            d.expectation(&s),
            Err(CategoricalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn variance_examples() {
        let s = Support::new(3, 0.0, 2.0).unwrap();
        for i in 0..3 {
            let hot = CategoricalDistribution::one_hot(i, 3);
            assert_abs_diff_eq!(hot.variance(&s).unwrap(), 0.0, epsilon = 1e-12);
        }
        // 0.5·(0−1)² + 0.5·(2−1)² = 1
        let split = CategoricalDistribution::new(vec![0.5, 0.0, 0.5]).unwrap();
        assert_abs_diff_eq!(split.variance(&s).unwrap(), 1.0, epsilon = 1e-12);
        // uniform over {0,1,2}: (1+0+1)/3 = 2/3
        let uniform = CategoricalDistribution::uniform(3);
        assert_abs_diff_eq!(uniform.variance(&s).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_identity_shift() {
        let s = Support::new(3, 0.0, 2.0).unwrap();
        let d = CategoricalDistribution::one_hot(1, 3);
        let out = shift_and_project(&d, &s, 0.0, 1.0, false).unwrap();
        assert_eq!(out.probs(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn projection_half_step_interpolates() {
        // b = 1.5 splits mass evenly between atoms 1 and 2.
        let s = Support::new(3, 0.0, 2.0).unwrap();
        let d = CategoricalDistribution::one_hot(1, 3);
        let out = shift_and_project(&d, &s, 0.5, 1.0, false).unwrap();
        assert_abs_diff_eq!(out.probs()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.probs()[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out.probs()[2], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_terminal_collapses_to_reward() {
        let s = Support::new(3, 0.0, 2.0).unwrap();
        for d in [
            CategoricalDistribution::uniform(3),
            CategoricalDistribution::one_hot(2, 3),
            CategoricalDistribution::new(vec![0.25, 0.5, 0.25]).unwrap(),
        ] {
            let out = shift_and_project(&d, &s, 0.0, 1.0, true).unwrap();
            assert_eq!(out.probs(), &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn projection_clamps_to_v_max() {
        // v = 10 + 0.99·2 = 11.98 clamps to v_max = 2.
        let s = Support::new(3, 0.0, 2.0).unwrap();
        let d = CategoricalDistribution::one_hot(2, 3);
        let out = shift_and_project(&d, &s, 10.0, 0.99, false).unwrap();
        assert_eq!(out.probs(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn projection_clamps_to_v_min() {
        let s = Support::new(3, 0.0, 2.0).unwrap();
        let d = CategoricalDistribution::uniform(3);
        let out = shift_and_project(&d, &s, -50.0, 0.99, false).unwrap();
        assert_abs_diff_eq!(out.probs()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_rejects_bad_inputs() {
        let s = Support::new(3, 0.0, 2.0).unwrap();
        let d = CategoricalDistribution::uniform(3);
        assert!(shift_and_project(&d, &s, f64::NAN, 1.0, false).is_err());
        assert!(shift_and_project(&d, &s, 0.0, 0.0, false).is_err());
        let wrong = CategoricalDistribution::uniform(4);
        assert!(shift_and_project(&wrong, &s, 0.0, 1.0, false).is_err());
    }

    #[test]
    fn mix_examples() {
        let d = CategoricalDistribution::new(vec![0.25, 0.5, 0.25]).unwrap();
        let same = mix(&[d.clone(), d.clone()], &[0.5, 0.5]).unwrap();
        for (a, b) in same.probs().iter().zip(d.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let other = CategoricalDistribution::one_hot(0, 3);
        let first = mix(&[d.clone(), other], &[1.0, 0.0]).unwrap();
        assert_eq!(first.probs(), d.probs());

        let lo = CategoricalDistribution::one_hot(0, 3);
        let hi = CategoricalDistribution::one_hot(2, 3);
        let out = mix(&[lo, hi], &[0.5, 0.5]).unwrap();
        assert_eq!(out.probs(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn mix_rejects_bad_inputs() {
        let d = CategoricalDistribution::uniform(3);
        assert!(matches!(mix(&[], &[]), Err(CategoricalError::EmptyMixture)));
        assert!(mix(&[d.clone()], &[0.5, 0.5]).is_err());
        assert!(mix(&[d.clone(), d.clone()], &[0.7, 0.7]).is_err());
    }

    /// Direct atom-by-atom evaluation of the interpolation formula, coded
    /// independently of `project_into`.
    fn brute_force_projection(
        probs: &[f64],
        atoms: &[f64],
        v_min: f64,
        v_max: f64,
        reward: f64,
        gamma: f64,
        terminal: bool,
    ) -> Vec<f64> {
        let n = atoms.len();
        let delta = (v_max - v_min) / (n as f64 - 1.0);
        let mut out = vec![0.0; n];
        for (j, &p) in probs.iter().enumerate() {
            let v = if terminal { reward } else { reward + gamma * atoms[j] };
            let v = v.max(v_min).min(v_max);
            let b = (v - v_min) / delta;
            let l = b.floor();
            let u = b.ceil();
            if l == u {
                out[l as usize] += p;
            } else {
                out[l as usize] += p * (u - b);
                out[u as usize] += p * (b - l);
            }
        }
        out
    }

    #[test]
    fn projection_matches_brute_force_oracle() {
        let cases: &[(usize, f64, f64)] = &[(2, -1.0, 1.0), (3, 0.0, 2.0), (5, -2.0, 2.0)];
        let rewards = [-3.0, -0.7, 0.0, 0.3, 1.0, 2.5];
        let gammas = [0.5, 0.9, 0.99, 1.0];
        for &(n, v_min, v_max) in cases {
            let s = Support::new(n, v_min, v_max).unwrap();
            let dists: Vec<CategoricalDistribution> = vec![
                CategoricalDistribution::uniform(n),
                CategoricalDistribution::one_hot(0, n),
                CategoricalDistribution::one_hot(n - 1, n),
                {
                    let mut p = vec![0.0; n];
                    p[0] = 0.3;
                    p[n - 1] = 0.7;
                    CategoricalDistribution::new(p).unwrap()
                },
            ];
            for d in &dists {
                for &r in &rewards {
                    for &g in &gammas {
                        for terminal in [false, true] {
                            let got = shift_and_project(d, &s, r, g, terminal).unwrap();
                            let want = brute_force_projection(
                                d.probs(),
                                s.atoms(),
                                v_min,
                                v_max,
                                r,
                                g,
                                terminal,
                            );
                            assert_eq!(got.probs(), &want[..], "n={n} r={r} g={g} t={terminal}");
                        }
                    }
                }
            }
        }
    }
}
