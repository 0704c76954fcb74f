// SPDX-License-Identifier: MIT OR Apache-2.0

use cause_core::ccmr::{harmonic_mean, nearest_flipped};
use cause_core::interchange::{coverage_repetitions, CoverageLog};
use cause_core::models::{Aggregator, ModelDims};
use cause_core::synthdata::TaskSpec;
use cause_core::training::StepPlan;
use gradcore::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn aggregate(agg: &Aggregator, rows: &[Vec<f64>]) -> Vec<f64> {
    let mut t = Tape::new();
    let vars: Vec<_> = rows.iter().map(|r| t.input(Tensor::vector(r.clone()))).collect();
    let out = agg.forward(&mut t, &vars).unwrap();
    t.value(out).data().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregator_ignores_row_order(
        len in 1usize..=32,
        seed in any::<u64>(),
        shuffle in any::<u64>(),
    ) {
        let dims = ModelDims::for_task(&TaskSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agg = Aggregator::new(dims, &mut rng);
        let rows: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..dims.vocab).map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0)).collect())
            .collect();
        let mut permuted = rows.clone();
        rand::seq::SliceRandom::shuffle(&mut permuted[..], &mut ChaCha8Rng::seed_from_u64(shuffle));
        let a = aggregate(&agg, &rows);
        let b = aggregate(&agg, &permuted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn coverage_bound_is_monotone(
        n in 1u64..5000,
        delta in 1e-9f64..0.5,
        ps in 0.01f64..0.99,
    ) {
        let base = coverage_repetitions(n, delta, ps).unwrap();
        prop_assert!(base >= 1);
        prop_assert!(coverage_repetitions(n + 1, delta, ps).unwrap() >= base);
        prop_assert!(coverage_repetitions(n, delta / 2.0, ps).unwrap() >= base);
        prop_assert!(coverage_repetitions(n, delta, (ps + 0.5).min(0.995)).unwrap() <= base);
    }

    #[test]
    fn nearest_flipped_matches_sorted_search(
        pts in prop::collection::vec((prop::collection::vec(-4i8..4, 3), 0usize..3), 1..=32),
        i in any::<prop::sample::Index>(),
    ) {
        let points: Vec<Vec<f64>> = pts.iter().map(|(p, _)| p.iter().map(|&v| v as f64).collect()).collect();
        let preds: Vec<usize> = pts.iter().map(|(_, c)| *c).collect();
        let i = i.index(points.len());
        let mut candidates: Vec<(f64, usize)> = (0..points.len())
            .filter(|&j| preds[j] != preds[i])
            .map(|j| {
                let d: f64 = points[j].iter().zip(&points[i]).map(|(a, b)| (a - b).powi(2)).sum();
                (d.sqrt(), j)
            })
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected = candidates.first().map(|&(d, j)| (j, d));
        prop_assert_eq!(nearest_flipped(&points, &preds, i), expected);
    }

    #[test]
    fn harmonic_mean_is_bounded(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
        let h = harmonic_mean(a, b);
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(h >= lo - 1e-9 && h <= hi + 1e-9);
        prop_assert!(h <= 2.0 * lo + 1e-9);
    }
}

#[test]
fn sampled_plans_cover_every_neuron_within_the_bound() {
    let width = ModelDims::for_task(&TaskSpec::default()).unwrap().head_hidden;
    let ps = 0.2;
    let steps = coverage_repetitions(width as u64, 1e-5, ps).unwrap() as usize;
    let batch: Vec<usize> = (0..16).collect();
    let runs = 400;
    let mut covered = 0;
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log = CoverageLog::default();
        for step in 0..steps {
            let plan = StepPlan::sample(&batch, width, ps, &mut rng).unwrap();
            log.record(step, &plan.coords);
        }
        if log.full_coverage_step(width).is_some() {
            covered += 1;
        }
    }
    assert!(covered * 100 >= runs * 99, "{covered}/{runs} runs fully covered");
}
