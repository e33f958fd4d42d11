//! Feature maps `B_m(g)` over the Gell-Mann coefficient space of a single
//! measurement element.
//!
//! Two families:
//!
//! * odd real solid harmonics of degrees `1, 3, ..., D` on the Bloch vector
//!   of a dichotomic qubit projector (`N = (D+1)(D+2)/2` features), and
//! * all monomials of total degree `1..=D` in the full coefficient vector,
//!   in graded-lexicographic order (`N = C(n + D, D) - 1`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    OddSphericalHarmonics,
    Monomials,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub order: usize,
    pub input_dim: usize,
    pub n_features: usize,
    #[serde(skip)]
    plan: Plan,
}

#[derive(Debug, Clone, Default, PartialEq)]
enum Plan {
    #[default]
    Unbuilt,
    Harmonics(HarmonicPlan),
    /// Monomial `k` is `parent * g[var]`; parent `None` means the constant 1.
    Monomials(Vec<(Option<usize>, usize)>),
}

#[derive(Debug, Clone, PartialEq)]
struct HarmonicPlan {
    /// Normalisation of `(l, m)` at `norms[l * (order + 1) + m]`.
    norms: Vec<f64>,
}

impl FeatureMap {
    pub fn odd_harmonics(order: usize) -> Result<Self> {
        if order == 0 || order.is_multiple_of(2) {
            return Err(Error::InvalidOrder(order));
        }
        let mut map = Self {
            kind: FeatureKind::OddSphericalHarmonics,
            order,
            input_dim: 3,
            n_features: (order + 1) * (order + 2) / 2,
            plan: Plan::Unbuilt,
        };
        map.build();
        Ok(map)
    }

    pub fn monomials(order: usize, input_dim: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("monomial order must be at least 1".into()));
        }
        if input_dim == 0 {
            return Err(Error::Config("monomial input dimension must be positive".into()));
        }
        let mut map = Self {
            kind: FeatureKind::Monomials,
            order,
            input_dim,
            n_features: binomial(input_dim + order, order) - 1,
            plan: Plan::Unbuilt,
        };
        map.build();
        Ok(map)
    }

    /// Rebuilds the evaluation plan (needed after deserialisation).
    pub fn build(&mut self) {
        self.plan = match self.kind {
            FeatureKind::OddSphericalHarmonics => Plan::Harmonics(harmonic_plan(self.order)),
            FeatureKind::Monomials => Plan::Monomials(monomial_plan(self.order, self.input_dim)),
        };
    }

    /// Evaluates the features of `g` into `out`.
    pub fn eval_into(&self, g: &[f64], out: &mut [f64]) {
        assert_eq!(g.len(), self.input_dim, "feature input length");
        assert_eq!(out.len(), self.n_features, "feature output length");
        match &self.plan {
            Plan::Harmonics(plan) => eval_harmonics(self.order, plan, g, out),
            Plan::Monomials(plan) => {
                for (k, &(parent, var)) in plan.iter().enumerate() {
                    out[k] = match parent {
                        None => g[var],
                        Some(p) => out[p] * g[var],
                    };
                }
            }
            Plan::Unbuilt => panic!("feature map used before build()"),
        }
    }

    pub fn eval(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        self.eval_into(g, &mut out);
        out
    }
}

/// Odd real solid harmonics of `g` up to odd degree `order`.
pub fn odd_harmonics(order: usize, g: &[f64; 3]) -> Result<Vec<f64>> {
    Ok(FeatureMap::odd_harmonics(order)?.eval(g))
}

/// Monomials of total degree `1..=order` in `g`, graded-lex.
pub fn monomial_features(order: usize, g: &[f64]) -> Result<Vec<f64>> {
    Ok(FeatureMap::monomials(order, g.len())?.eval(g))
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

fn monomial_plan(order: usize, n: usize) -> Vec<(Option<usize>, usize)> {
    let mut plan: Vec<(Option<usize>, usize)> = Vec::new();
    // index tuples of the previous degree: (plan index, last variable)
    let mut prev: Vec<(usize, usize)> = Vec::new();
    for var in 0..n {
        prev.push((plan.len(), var));
        plan.push((None, var));
    }
    for _ in 2..=order {
        let mut next = Vec::new();
        for &(idx, last) in &prev {
            for var in last..n {
                next.push((plan.len(), var));
                plan.push((Some(idx), var));
            }
        }
        prev = next;
    }
    plan
}

fn harmonic_plan(order: usize) -> HarmonicPlan {
    let stride = order + 1;
    let mut norms = vec![0.0; stride * stride];
    let fact = |n: usize| (1..=n).fold(1.0f64, |acc, k| acc * k as f64);
    for l in 0..=order {
        for m in 0..=l {
            let two = if m == 0 { 1.0 } else { 2.0 };
            norms[l * stride + m] = ((2 * l + 1) as f64 * two * fact(l - m) / fact(l + m)).sqrt();
        }
    }
    HarmonicPlan { norms }
}

// Real solid harmonics r^l Y_lm, normalised to unit mean square on the
// sphere. For each odd l the output is (C_l^l, S_l^l, ..., C_l^1, S_l^1, C_l^0),
// so degree 1 is (x, y, z) up to scale. Every step is a polynomial
// operation in (x, y, z), which makes B(-g) = -B(g) hold bit for bit.
fn eval_harmonics(order: usize, plan: &HarmonicPlan, g: &[f64], out: &mut [f64]) {
    let (x, y, z) = (g[0], g[1], g[2]);
    let r2 = x * x + y * y + z * z;
    let stride = order + 1;

    // cos/sin parts of (x + i y)^m
    let mut re_pow = [0.0f64; 32];
    let mut im_pow = [0.0f64; 32];
    assert!(order < 32, "harmonic order too large");
    re_pow[0] = 1.0;
    for m in 1..=order {
        re_pow[m] = x * re_pow[m - 1] - y * im_pow[m - 1];
        im_pow[m] = x * im_pow[m - 1] + y * re_pow[m - 1];
    }

    // pi[l][m] = r^(l-m) d^m P_l / dt^m at t = z / r
    let mut pi = vec![0.0f64; stride * stride];
    let mut dfact = 1.0;
    for m in 0..=order {
        if m > 0 {
            dfact *= (2 * m - 1) as f64;
        }
        pi[m * stride + m] = dfact;
        if m < order {
            pi[(m + 1) * stride + m] = (2 * m + 1) as f64 * z * dfact;
        }
        for l in (m + 2)..=order {
            pi[l * stride + m] = ((2 * l - 1) as f64 * z * pi[(l - 1) * stride + m]
                - (l + m - 1) as f64 * r2 * pi[(l - 2) * stride + m])
                / (l - m) as f64;
        }
    }

    let mut k = 0;
    for l in (1..=order).step_by(2) {
        for m in (1..=l).rev() {
            let base = plan.norms[l * stride + m] * pi[l * stride + m];
            out[k] = base * re_pow[m];
            out[k + 1] = base * im_pow[m];
            k += 2;
        }
        out[k] = plan.norms[l * stride] * pi[l * stride];
        k += 1;
    }
    debug_assert_eq!(k, out.len());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::random_unit_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn harmonic_counts() {
        for (d, n) in [(1, 3), (3, 10), (5, 21), (7, 36)] {
            let map = FeatureMap::odd_harmonics(d).unwrap();
            assert_eq!(map.n_features, n);
            assert_eq!(map.eval(&[0.1, 0.2, 0.3]).len(), n);
        }
        assert!(matches!(FeatureMap::odd_harmonics(2), Err(Error::InvalidOrder(2))));
        assert!(matches!(FeatureMap::odd_harmonics(0), Err(Error::InvalidOrder(0))));
    }

    #[test]
    fn degree_one_is_coordinates() {
        let b = odd_harmonics(1, &[0.0, 0.0, 1.0]).unwrap();
        let s = 3f64.sqrt();
        assert_eq!(b, vec![0.0, 0.0, s]);
        let b = odd_harmonics(1, &[0.3, -0.2, 0.5]).unwrap();
        for (x, y) in b.iter().zip([0.3, -0.2, 0.5]) {
            assert!((x - s * y).abs() < 1e-15);
        }
    }

    #[test]
    fn degree_three_matches_closed_forms() {
        // a few known Cartesian forms, compared up to a per-component scale
        let g = [0.3, -0.7, 0.4];
        let (x, y, z) = (g[0], g[1], g[2]);
        let b = odd_harmonics(3, &g).unwrap();
        let tail = &b[3..];
        let ratios = [
            tail[0] / (x * x * x - 3.0 * x * y * y),
            tail[1] / (3.0 * x * x * y - y * y * y),
            tail[3] / (x * y * z),
            tail[6] / (z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y)),
        ];
        // re-evaluate at a second point: same ratios means same polynomial
        let h = [-0.5, 0.2, 0.6];
        let (x, y, z) = (h[0], h[1], h[2]);
        let b = odd_harmonics(3, &h).unwrap();
        let tail = &b[3..];
        let again = [
            tail[0] / (x * x * x - 3.0 * x * y * y),
            tail[1] / (3.0 * x * x * y - y * y * y),
            tail[3] / (x * y * z),
            tail[6] / (z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y)),
        ];
        for (a, b) in ratios.iter().zip(again) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn harmonics_are_exactly_odd() {
        let map = FeatureMap::odd_harmonics(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let g = random_unit_vector(&mut rng);
            let neg = [-g[0], -g[1], -g[2]];
            let a = map.eval(&g);
            let b = map.eval(&neg);
            for (u, v) in a.iter().zip(&b) {
                assert_eq!(*u, -*v);
            }
        }
    }

    #[test]
    fn monomial_examples() {
        let (a, b) = (1.5, -2.0);
        assert_eq!(monomial_features(1, &[a, b]).unwrap(), vec![a, b]);
        assert_eq!(
            monomial_features(2, &[a, b]).unwrap(),
            vec![a, b, a * a, a * b, b * b]
        );
        let g = [0.2, -0.4, 0.9];
        let one = monomial_features(1, &g).unwrap();
        let two = monomial_features(1, &[0.4, -0.8, 1.8]).unwrap();
        for (x, y) in one.iter().zip(two) {
            assert_eq!(2.0 * x, y);
        }
    }

    #[test]
    fn monomial_counts_and_order() {
        for n in 1..=9 {
            for d in 1..=4 {
                let map = FeatureMap::monomials(d, n).unwrap();
                assert_eq!(map.n_features, binomial(n + d, d) - 1);
            }
        }
        // degree 3 in (a, b): a^3, a^2 b, a b^2, b^3 after the degree 1, 2 terms
        let f = monomial_features(3, &[2.0, 3.0]).unwrap();
        assert_eq!(f, vec![2.0, 3.0, 4.0, 6.0, 9.0, 8.0, 12.0, 18.0, 27.0]);
        assert!(FeatureMap::monomials(0, 3).is_err());
    }

    #[test]
    fn plan_rebuilt_after_deserialisation() {
        let map = FeatureMap::monomials(2, 4).unwrap();
        let json = serde_json::to_string(&map).unwrap();
        let mut back: FeatureMap = serde_json::from_str(&json).unwrap();
        back.build();
        assert_eq!(back, map);
    }
}
