use proptest::prelude::*;

use sparse_kd::distributions::{softmax, zipf, zipf_with_exponent, ProbVector, Rng};
use sparse_kd::kd_loss::grad_general;
use sparse_kd::logit_cache::{decode, encode, CacheScheme};
use sparse_kd::sparsify::{self, RandomSampler, Scheme, SparseTarget};

fn logits(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0f64..8.0, 2..max_len)
}

proptest! {
    #[test]
    fn top_k_structure(x in logits(64), k_frac in 0.0f64..1.0, normalized: bool) {
        let t = softmax(&x).unwrap();
        let k = 1 + ((t.len() - 1) as f64 * k_frac) as usize;
        let s = sparsify::top_k(&t, k, normalized).unwrap();
        prop_assert_eq!(s.len(), k);
        prop_assert!(s.entries().windows(2).all(|w| w[0].0 < w[1].0));
        let kept_min = s.entries().iter().map(|e| t.get(e.0 as usize)).fold(f64::INFINITY, f64::min);
        for i in 0..t.len() {
            if !s.contains(i) {
                prop_assert!(t.get(i) <= kept_min);
            }
        }
        if normalized {
            prop_assert!((s.weight_sum() - 1.0).abs() <= 1e-9);
        } else {
            prop_assert!(s.weight_sum() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn weight_sums_by_scheme(x in logits(40), k_frac in 0.0f64..1.0, p in 0.05f64..1.0, seed: u64) {
        let t = softmax(&x).unwrap();
        let v = t.len();
        let k = 1 + ((v - 1) as f64 * k_frac) as usize;
        let mut rng = Rng::new(seed);
        let targets = [
            sparsify::label_smoothing(&t, k).unwrap(),
            sparsify::naive_fix(&t, k, seed as usize % v).unwrap(),
            sparsify::random_sampling(&t, 1 + k, 0.7, &mut rng).unwrap(),
            sparsify::top_p(&t, p, k).unwrap(),
        ];
        for s in &targets {
            let recomputed: f64 = s.entries().iter().map(|e| e.1).sum();
            prop_assert!((recomputed - s.weight_sum()).abs() <= 1e-12);
            if s.scheme().is_normalized() {
                prop_assert!((s.weight_sum() - 1.0).abs() <= 1e-9, "{:?}", s.scheme());
            }
        }
        let g = sparsify::ghost_token(&t, k).unwrap();
        prop_assert!((g.base().weight_sum() + g.ghost_weight() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn normalized_gradients_sum_to_zero(x in logits(64), y in logits(64), seed: u64) {
        let n = x.len().min(y.len());
        let t = softmax(&x[..n]).unwrap();
        let p = softmax(&y[..n]).unwrap();
        let s = sparsify::random_sampling(&t, 13, 1.0, &mut Rng::new(seed)).unwrap();
        for target in [SparseTarget::dense(&t), s, sparsify::top_k(&t, 1 + n / 2, true).unwrap()] {
            prop_assert!(grad_general(&p, &target).unwrap().sum().abs() <= 1e-9);
        }
    }

    #[test]
    fn count_cache_round_trip(x in logits(300), n in 1usize..=127, seed: u64) {
        let t = softmax(&x).unwrap();
        let s = sparsify::random_sampling(&t, n, 1.0, &mut Rng::new(seed)).unwrap();
        let bytes = encode(std::slice::from_ref(&s), CacheScheme::RandomSamplingCounts, t.len(), n as u32).unwrap();
        prop_assert_eq!(bytes.len(), 23 + 1 + 3 * s.len());
        let (_, back) = decode(&bytes).unwrap();
        prop_assert_eq!(&back[0], &s);
    }

    #[test]
    fn ratio_cache_is_within_one_percent_on_zipf(v in 1usize..5000, k in 1usize..=100, s in 0.5f64..1.2) {
        let z = zipf_with_exponent(v.max(k), s).unwrap();
        let target = sparsify::top_k(&z, k, true).unwrap();
        let bytes = encode(std::slice::from_ref(&target), CacheScheme::TopKRatio, z.len(), k as u32).unwrap();
        prop_assert_eq!(bytes.len(), 23 + 3 + 3 * target.len());
        let (_, back) = decode(&bytes).unwrap();
        for (a, b) in back[0].entries().iter().zip(target.entries()) {
            prop_assert_eq!(a.0, b.0);
            prop_assert!((a.1 - b.1).abs() / b.1 <= 0.01);
        }
    }

    #[test]
    fn decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200), magic: bool) {
        let mut b = bytes;
        if magic && b.len() >= 23 {
            b[..4].copy_from_slice(b"SKDC");
            b[4] = 1;
            b[5] = 0;
            b[10] = 1 + b[10] % 3;
        }
        let _ = decode(&b);
    }
}

/// Monte Carlo L1 distance between the mean sampled target and the teacher.
fn mean_target_bias(t: &ProbVector, rounds: usize, temperature: f64, draws: usize, seed: u64) -> f64 {
    let sampler = RandomSampler::new(t, rounds, temperature).unwrap();
    let mut rng = Rng::new(seed);
    let mut acc = vec![0.0; t.len()];
    for _ in 0..draws {
        sampler.sample(&mut rng).accumulate_into(&mut acc);
    }
    acc.iter().zip(t.as_slice()).map(|(a, t)| (a / draws as f64 - t).abs()).sum()
}

#[test]
fn tempered_bias_shrinks_with_rounds() {
    let t = zipf(20).unwrap();
    for temperature in [0.8, 1.2] {
        let few = mean_target_bias(&t, 2, temperature, 40_000, 1);
        let many = mean_target_bias(&t, 64, temperature, 40_000, 2);
        assert!(many < few / 3.0, "temperature {temperature}: bias {few} at N=2, {many} at N=64");
    }
}

#[test]
fn untempered_targets_have_exact_count_weights() {
    let t = zipf(50).unwrap();
    let s = sparsify::random_sampling(&t, 37, 1.0, &mut Rng::new(3)).unwrap();
    assert_eq!(s.scheme(), Scheme::RandomSampling { rounds: 37, temperature: 1.0 });
    for &(_, w) in s.entries() {
        let c = w * 37.0;
        assert_eq!(c, c.round());
    }
}
