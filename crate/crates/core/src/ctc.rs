//! Connectionist temporal classification: loss, gradient and best-path decoding.
//!
//! All recursions run in log space over the blank-augmented label
//! `l' = (blank, l1, blank, l2, ..., lL, blank)`.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::prob::ProbMatrix;
use crate::wbs::CharSet;

/// Probabilities are floored here before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-300;

/// `ln(e^a + e^b)` without overflow; `-inf` is the additive identity.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Result of [`ctc_loss`].
#[derive(Clone, Debug, PartialEq)]
pub struct CtcLoss {
    /// `-ln p(label | probs)`; `+inf` when infeasible.
    pub value: f64,
    /// Gradient of `value` with respect to the pre-softmax logits, `[T, C+1]`.
    /// All zero when infeasible.
    pub grad: Tensor,
    /// False when the label cannot be aligned to the available timesteps.
    pub feasible: bool,
}

/// Fewest frames that can emit `label`: one per symbol plus a blank between
/// every pair of equal neighbours.
pub fn required_steps(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_label(probs: &ProbMatrix, label: &[usize]) -> Result<()> {
    let blank = probs.blank();
    if let Some(&bad) = label.iter().find(|&&c| c >= blank) {
        return Err(Error::Invalid(format!(
            "label index {bad} outside the {blank} non-blank classes"
        )));
    }
    Ok(())
}

fn augmented(label: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(blank);
    for &c in label {
        ext.push(c);
        ext.push(blank);
    }
    ext
}

// a skip from s-2 to s is allowed onto a non-blank that differs from l'[s-2]
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// Log-space forward variables, `alpha[t][s]`.
fn forward_vars(probs: &ProbMatrix, ext: &[usize]) -> Vec<Vec<f64>> {
    let (steps, s_len, blank) = (probs.steps(), ext.len(), probs.blank());
    let mut alpha = vec![vec![f64::NEG_INFINITY; s_len]; steps];
    if steps == 0 {
        return alpha;
    }
    alpha[0][0] = ln(probs.get(0, ext[0]));
    if s_len > 1 {
        alpha[0][1] = ln(probs.get(0, ext[1]));
    }
    for t in 1..steps {
        for s in 0..s_len {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if can_skip(ext, s, blank) {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            if acc > f64::NEG_INFINITY {
                alpha[t][s] = acc + ln(probs.get(t, ext[s]));
            }
        }
    }
    alpha
}

/// Log-space backward variables excluding the emission at `t`, `beta[t][s]`.
fn backward_vars(probs: &ProbMatrix, ext: &[usize]) -> Vec<Vec<f64>> {
    let (steps, s_len, blank) = (probs.steps(), ext.len(), probs.blank());
    let mut beta = vec![vec![f64::NEG_INFINITY; s_len]; steps];
    if steps == 0 {
        return beta;
    }
    beta[steps - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[steps - 1][s_len - 2] = 0.0;
    }
    for t in (0..steps - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[t + 1][s] + ln(probs.get(t + 1, ext[s]));
            if s + 1 < s_len {
                acc = log_add(acc, beta[t + 1][s + 1] + ln(probs.get(t + 1, ext[s + 1])));
            }
            if s + 2 < s_len && can_skip(ext, s + 2, blank) {
                acc = log_add(acc, beta[t + 1][s + 2] + ln(probs.get(t + 1, ext[s + 2])));
            }
            beta[t][s] = acc;
        }
    }
    beta
}

/// `ln p(label | probs)`, summed over every alignment; `-inf` when infeasible.
pub fn log_prob(probs: &ProbMatrix, label: &[usize]) -> Result<f64> {
    check_label(probs, label)?;
    if required_steps(label) > probs.steps() {
        return Ok(f64::NEG_INFINITY);
    }
    if probs.steps() == 0 {
        return Ok(0.0);
    }
    let ext = augmented(label, probs.blank());
    let last = &forward_vars(probs, &ext)[probs.steps() - 1];
    let s = ext.len();
    Ok(if s > 1 { log_add(last[s - 1], last[s - 2]) } else { last[0] })
}

/// CTC loss of `label` under `probs` with its gradient w.r.t. the softmax logits.
pub fn ctc_loss(probs: &ProbMatrix, label: &[usize]) -> Result<CtcLoss> {
    probs.validate()?;
    check_label(probs, label)?;
    let (steps, classes) = (probs.steps(), probs.classes());
    if required_steps(label) > steps {
        return Ok(CtcLoss {
            value: f64::INFINITY,
            grad: Tensor::zeros(&[steps, classes]),
            feasible: false,
        });
    }
    if steps == 0 {
        return Ok(CtcLoss {
            value: 0.0,
            grad: Tensor::zeros(&[0, classes]),
            feasible: true,
        });
    }
    let ext = augmented(label, probs.blank());
    let alpha = forward_vars(probs, &ext);
    let beta = backward_vars(probs, &ext);
    let s_len = ext.len();
    let last = &alpha[steps - 1];
    let log_p = if s_len > 1 { log_add(last[s_len - 1], last[s_len - 2]) } else { last[0] };

    // d(-ln p)/d(logit_tk) = y_tk - posterior occupancy of class k at t
    let mut grad = probs.to_tensor();
    let mut occ = vec![f64::NEG_INFINITY; classes];
    for t in 0..steps {
        occ.fill(f64::NEG_INFINITY);
        for s in 0..s_len {
            occ[ext[s]] = log_add(occ[ext[s]], alpha[t][s] + beta[t][s]);
        }
        for (k, &o) in occ.iter().enumerate() {
            if o > f64::NEG_INFINITY {
                grad.data_mut()[t * classes + k] -= (o - log_p).exp();
            }
        }
    }
    grad.ensure_finite("ctc gradient")?;
    Ok(CtcLoss {
        value: -log_p,
        grad,
        feasible: true,
    })
}

/// Softmax over `logits` followed by [`ctc_loss`].
pub fn ctc_loss_logits(logits: &Tensor, label: &[usize]) -> Result<CtcLoss> {
    ctc_loss(&ProbMatrix::softmax(logits)?, label)
}

/// Per-row argmax (first index wins ties), repeats collapsed, blanks dropped.
pub fn best_path_indices(probs: &ProbMatrix) -> Vec<usize> {
    let blank = probs.blank();
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..probs.steps() {
        let row = probs.row(t);
        let mut best = 0;
        for (k, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = k;
            }
        }
        if best != blank && prev != Some(best) {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

/// Greedy decoding to text over `charset`.
pub fn best_path_decode(probs: &ProbMatrix, charset: &CharSet) -> Result<String> {
    if probs.classes() != charset.len() + 1 {
        return Err(Error::Shape {
            expected: vec![probs.steps(), charset.len() + 1],
            actual: vec![probs.steps(), probs.classes()],
        });
    }
    Ok(charset.decode(&best_path_indices(probs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_relative_error, numeric_gradient, REL_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev = None;
        for &k in path {
            if k != blank && prev != Some(k) {
                out.push(k);
            }
            prev = Some(k);
        }
        out
    }

    // Sum over all (C+1)^T paths.
    fn brute_force(probs: &ProbMatrix, label: &[usize]) -> f64 {
        let (t, k) = (probs.steps(), probs.classes());
        let mut total = 0.0;
        for code in 0..k.pow(t as u32) {
            let mut c = code;
            let mut path = Vec::with_capacity(t);
            let mut p = 1.0;
            for step in 0..t {
                path.push(c % k);
                p *= probs.get(step, c % k);
                c /= k;
            }
            if collapse(&path, k - 1) == label {
                total += p;
            }
        }
        total
    }

    fn random_probs(rng: &mut ChaCha8Rng, t: usize, k: usize) -> ProbMatrix {
        let logits: Vec<f64> = (0..t * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        ProbMatrix::softmax(&Tensor::from_vec(&[t, k], logits).unwrap()).unwrap()
    }

    #[test]
    fn single_step() {
        let p = ProbMatrix::from_rows(&[vec![0.6, 0.4]]).unwrap();
        let l = ctc_loss(&p, &[0]).unwrap();
        assert!((l.value + 0.6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_steps_by_enumeration() {
        let p = ProbMatrix::from_rows(&[vec![0.6, 0.4], vec![0.7, 0.3]]).unwrap();
        let l = ctc_loss(&p, &[0]).unwrap();
        assert!((l.value + 0.88f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = rng.random_range(1..=5);
            let c = rng.random_range(1..=3);
            let len = rng.random_range(0..=3);
            let label: Vec<usize> = (0..len).map(|_| rng.random_range(0..c)).collect();
            let probs = random_probs(&mut rng, t, c + 1);
            let want = brute_force(&probs, &label);
            let got = ctc_loss(&probs, &label).unwrap();
            if want == 0.0 {
                assert!(!got.feasible);
            } else {
                assert!((-got.value - want.ln()).abs() < 1e-10, "{label:?} t={t}");
            }
        }
    }

    #[test]
    fn total_probability_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probs = random_probs(&mut rng, 4, 3);
        let mut total = 0.0;
        for len in 0..=4u32 {
            for code in 0..2usize.pow(len) {
                let label: Vec<usize> = (0..len).map(|i| (code >> i) & 1).collect();
                total += log_prob(&probs, &label).unwrap().exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = rng.random_range(2..=6);
            let k = rng.random_range(2..=4);
            let len = rng.random_range(1..=t.min(3));
            let label: Vec<usize> = (0..len).map(|_| rng.random_range(0..k - 1)).collect();
            if required_steps(&label) > t {
                continue;
            }
            let logits: Vec<f64> = (0..t * k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = Tensor::from_vec(&[t, k], logits.clone()).unwrap();
            let analytic = ctc_loss_logits(&x, &label).unwrap().grad;
            let numeric = numeric_gradient(
                |v| ctc_loss_logits(&Tensor::from_vec(&[t, k], v.to_vec()).unwrap(), &label).unwrap().value,
                &logits,
                1e-5,
            );
            assert!(max_relative_error(analytic.data(), &numeric) < REL_TOL);
        }
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let probs = random_probs(&mut rng, 6, 4);
        let g = ctc_loss(&probs, &[0, 2, 2]).unwrap().grad;
        for t in 0..6 {
            assert!(g.row(t).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_probs_give_symmetric_gradient() {
        let probs = ProbMatrix::new(3, 4, vec![0.25; 12]).unwrap();
        let g = ctc_loss(&probs, &[0]).unwrap().grad;
        // classes 1 and 2 never appear in the label
        for t in 0..3 {
            assert_eq!(g.at2(t, 1), g.at2(t, 2));
            assert!((g.at2(t, 1) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn infeasible_label() {
        let probs = ProbMatrix::new(2, 3, vec![1.0 / 3.0; 6]).unwrap();
        let l = ctc_loss(&probs, &[0, 0]).unwrap();
        assert!(!l.feasible);
        assert!(l.grad.data().iter().all(|&v| v == 0.0));
        assert!(ctc_loss(&probs, &[0, 1]).unwrap().feasible);
        assert_eq!(required_steps(&[1, 1, 2, 2, 2]), 8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let probs = ProbMatrix::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(ctc_loss(&probs, &[1]).is_err());
        let bad = ProbMatrix::new_unchecked(1, 2, vec![0.5, 0.6]).unwrap();
        assert!(ctc_loss(&bad, &[0]).is_err());
    }

    #[test]
    fn tiny_probabilities_stay_finite() {
        let probs = ProbMatrix::new(3, 2, vec![1e-300, 1.0, 1e-300, 1.0, 1.0, 1e-300]).unwrap();
        let l = ctc_loss(&probs, &[0]).unwrap();
        assert!(l.value.is_finite());
        assert!(l.grad.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn permutation_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probs = random_probs(&mut rng, 5, 4);
        let perm = [2, 0, 1];
        let mut v = probs.values().to_vec();
        for t in 0..5 {
            for k in 0..3 {
                v[t * 4 + perm[k]] = probs.get(t, k);
            }
        }
        let permuted = ProbMatrix::new(5, 4, v).unwrap();
        let a = ctc_loss(&probs, &[0, 1, 1]).unwrap().value;
        let b = ctc_loss(&permuted, &[perm[0], perm[1], perm[1]]).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn best_path_collapse() {
        let rows = vec![
            vec![0.8, 0.1, 0.1],
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.1, 0.8],
            vec![0.1, 0.8, 0.1],
        ];
        let p = ProbMatrix::from_rows(&rows).unwrap();
        assert_eq!(best_path_indices(&p), vec![0, 1]);
        let cs = CharSet::new("ab".chars().collect(), "ab".chars().collect()).unwrap();
        assert_eq!(best_path_decode(&p, &cs).unwrap(), "ab");
        let blank = ProbMatrix::from_rows(&vec![vec![0.1, 0.1, 0.8]; 3]).unwrap();
        assert_eq!(best_path_decode(&blank, &cs).unwrap(), "");
    }

    #[test]
    fn best_path_matches_argmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let probs = random_probs(&mut rng, 4, 3);
            let mut best = (f64::NEG_INFINITY, vec![]);
            for code in 0..81usize {
                let path: Vec<usize> = (0..4).map(|i| code / 3usize.pow(i) % 3).collect();
                let p: f64 = path.iter().enumerate().map(|(t, &k)| probs.get(t, k)).product();
                if p > best.0 {
                    best = (p, path);
                }
            }
            assert_eq!(best_path_indices(&probs), collapse(&best.1, 2));
        }
    }
}
