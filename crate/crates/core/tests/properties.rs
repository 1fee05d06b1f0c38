use proptest::collection::vec;
use proptest::prelude::*;

use seqedit::checkpoint::Checkpoint;
use seqedit::edit::{apply, diff, edit_step, sparsity_stats, trim, MergeConfig, TrimSpec};
use seqedit::par;
use seqedit::Tensor;

fn finite() -> impl Strategy<Value = f32> {
    prop_oneof![
        4 => -100.0f32..100.0,
        1 => Just(0.0f32),
        1 => Just(-0.0f32),
        1 => prop::sample::select(vec![1.0f32, -1.0, 0.5, -0.5, 2.0]),
    ]
}

prop_compose! {
    fn tensors()(sizes in vec(1usize..40, 1..5))
        (values in sizes.iter().map(|&n| vec(finite(), n)).collect::<Vec<_>>())
        -> Vec<(String, Tensor)>
    {
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("t{i}"), Tensor::vector(&v)))
            .collect()
    }
}

fn zeros_like(entries: &[(String, Tensor)]) -> Checkpoint {
    Checkpoint::new(
        entries
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::vector(&vec![0.0; t.len()]))),
    )
    .unwrap()
}

fn delta(entries: Vec<(String, Tensor)>) -> Checkpoint {
    let base = zeros_like(&entries);
    diff(&Checkpoint::new(entries).unwrap(), &base).unwrap()
}

fn flat(c: &Checkpoint) -> Vec<f32> {
    c.tensors().values().flat_map(|t| t.values().iter().copied()).collect()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn keep_count(k: f64, n: usize) -> usize {
    (((k * n as f64) - 1e-9).ceil().max(1.0) as usize).min(n)
}

/// Full sort by (|v| descending, position ascending).
fn oracle(values: &[f32], m: usize) -> Vec<f32> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().partial_cmp(&values[a].abs()).unwrap().then(a.cmp(&b)));
    let mut out = vec![0.0f32; values.len()];
    for &i in &order[..m] {
        out[i] = values[i];
    }
    out
}

fn kept(c: &Checkpoint) -> Vec<bool> {
    flat(c).iter().map(|v| *v != 0.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn round_trip_and_canonical_bytes(entries in tensors(), key in "[a-z]{1,6}", val in "[ -~]{0,12}") {
        let c = Checkpoint::new(entries.clone()).unwrap();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.tensors(), c.tensors());
        prop_assert_eq!(back.to_bytes().unwrap(), bytes.clone());
        let mut reversed = entries;
        reversed.reverse();
        let r = Checkpoint::new(reversed).unwrap();
        prop_assert_eq!(r.to_bytes().unwrap(), bytes);
        let annotated = r.with_meta(key, val);
        prop_assert_eq!(annotated.digest().unwrap(), c.digest().unwrap());
    }

    #[test]
    fn trim_keeps_exact_count_and_top_magnitudes(entries in tensors(), k in 0.01f64..=1.0) {
        let tau = delta(entries);
        let out = trim(&tau, &TrimSpec::global(k)).unwrap();
        let before = flat(&tau);
        prop_assert_eq!(bits(&flat(&out)), bits(&oracle(&before, keep_count(k, before.len()))));
    }

    #[test]
    fn trim_is_idempotent(entries in tensors(), k in 0.01f64..=1.0) {
        let spec = TrimSpec::global(k);
        let once = trim(&delta(entries), &spec).unwrap();
        let twice = trim(&once, &spec).unwrap();
        prop_assert_eq!(bits(&flat(&once)), bits(&flat(&twice)));
    }

    #[test]
    fn trim_retention_is_nested_in_k(entries in tensors(), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let tau = delta(entries);
        let small = kept(&trim(&tau, &TrimSpec::global(lo)).unwrap());
        let large = kept(&trim(&tau, &TrimSpec::global(hi)).unwrap());
        prop_assert!(small.iter().zip(&large).all(|(s, l)| !s || *l));
    }

    #[test]
    fn per_tensor_counts(entries in tensors(), k in 0.01f64..=1.0) {
        let tau = delta(entries);
        let out = trim(&tau, &TrimSpec::per_tensor(k)).unwrap();
        for (name, t) in out.tensors() {
            let src = tau.get(name).unwrap().values();
            prop_assert_eq!(bits(t.values()), bits(&oracle(src, keep_count(k, src.len()))));
        }
    }

    #[test]
    fn apply_zero_is_identity_and_scaling_is_linear(entries in tensors(), lambda in 0.0f64..2.0) {
        let base = Checkpoint::new(entries.clone()).unwrap();
        let shifted: Vec<(String, Tensor)> = entries
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::vector(&t.values().iter().map(|v| v * 0.5 + 1.0).collect::<Vec<_>>())))
            .collect();
        let tau = diff(&Checkpoint::new(shifted).unwrap(), &base).unwrap();
        prop_assert_eq!(bits(&flat(&apply(&base, &tau, 0.0).unwrap())), bits(&flat(&base)));
        let out = apply(&base, &tau, lambda).unwrap();
        for ((o, b), d) in flat(&out).iter().zip(flat(&base)).zip(flat(&tau)) {
            let exact = f64::from(b) + lambda * f64::from(d);
            prop_assert!((f64::from(*o) - exact).abs() <= exact.abs() * f64::from(f32::EPSILON));
        }
    }

    #[test]
    fn ties_with_k_one_equals_task_arithmetic(entries in tensors(), lambda in 0.0f64..1.5) {
        let base = zeros_like(&entries);
        let ft = Checkpoint::new(entries).unwrap();
        let (a, _) = edit_step(&base, &ft, &MergeConfig::ties(lambda, TrimSpec::global(1.0))).unwrap();
        let (b, _) = edit_step(&base, &ft, &MergeConfig::task_arithmetic(lambda)).unwrap();
        prop_assert_eq!(bits(&flat(&a)), bits(&flat(&b)));
    }

    #[test]
    fn edit_step_at_lambda_one_reproduces_finetuned(entries in tensors(), shift in -3.0f32..3.0) {
        let ft = Checkpoint::new(entries.clone()).unwrap();
        let base = Checkpoint::new(
            entries.iter().map(|(n, t)| (n.clone(), Tensor::vector(&t.values().iter().map(|v| v * 0.75 + shift).collect::<Vec<_>>()))),
        )
        .unwrap();
        let (edited, _) = edit_step(&base, &ft, &MergeConfig::task_arithmetic(1.0)).unwrap();
        prop_assert_eq!(flat(&edited), flat(&ft));
        // a -0.0 target over a +0.0 base has a zero delta and keeps the base sign
        if !flat(&ft).iter().any(|v| v.to_bits() == (-0.0f32).to_bits()) {
            prop_assert_eq!(edited.digest().unwrap(), ft.digest().unwrap());
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let n = 200_000;
    let values: Vec<f32> = (0..n).map(|i| ((i * 7919) % 10007) as f32 / 1000.0 - 5.0).collect();
    let entries = vec![
        ("a".to_string(), Tensor::vector(&values[..n / 3])),
        ("b".to_string(), Tensor::vector(&values[n / 3..])),
    ];
    let base = Checkpoint::new(entries.iter().map(|(k, t)| (k.clone(), Tensor::vector(&vec![0.25; t.len()])))).unwrap();
    let ft = Checkpoint::new(entries).unwrap();
    let cfg = MergeConfig::ties(0.6, TrimSpec::global(0.3));
    let run = || {
        let (edited, tau) = edit_step(&base, &ft, &cfg).unwrap();
        (edited.to_bytes().unwrap(), tau.to_bytes().unwrap(), sparsity_stats(&tau))
    };
    let single = par::with_threads(1, run);
    let many = par::with_threads(4, run);
    assert_eq!(single.0, many.0);
    assert_eq!(single.1, many.1);
    assert_eq!(single.2, many.2);
    assert_eq!(single.2.l2_norm.to_bits(), many.2.l2_norm.to_bits());
}
