mod common;

use common::*;
use fairstitch::datasets::{
    balanced_subsample, load_csv, save_csv, split, synth_biased, SynthSpec, TripletDataset,
};
use fairstitch::diffcore::{Tape, Tensor};
use fairstitch::fairloss::{
    ae_surrogate, eo_surrogate, mmf_surrogate, BatchContext, ConstraintKind, EoDenominator,
    FairnessConstraint,
};
use fairstitch::fairmetrics::{
    abroca, ae_diff, auc, bacc, eo_diff, evaluate, group_roc_curves, worst_accuracy, EvalSettings,
};
use fairstitch::network::{Network, StitchInit};
use fairstitch::pipeline::{
    select_best, Checkpoint, CheckpointMeta, OptimizerConfig, Phase, RunRecord, Seeds,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const GRID: usize = 10_001;

/// Scores, labels and groups with both classes present in both groups.
#[derive(Clone, Debug)]
struct Instance {
    p: Vec<f64>,
    y: Vec<u8>,
    a: Vec<u8>,
}

fn instance() -> impl Strategy<Value = Instance> {
    (8usize..60, any::<u64>(), any::<bool>()).prop_map(|(n, seed, ties)| {
        let mut r = rng(seed);
        let (mut y, mut a) = random_cells(&mut r, n);
        // random_cells already covers every cell; keep the order random
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut r);
        y = idx.iter().map(|&i| y[i]).collect();
        a = idx.iter().map(|&i| a[i]).collect();
        let p = if ties {
            tied_scores(&mut r, n)
        } else {
            (0..n).map(|_| r.random_range(0.001..0.999)).collect()
        };
        Instance { p, y, a }
    })
}

fn permuted(inst: &Instance, seed: u64) -> Instance {
    let mut idx: Vec<usize> = (0..inst.p.len()).collect();
    idx.shuffle(&mut rng(seed));
    Instance {
        p: idx.iter().map(|&i| inst.p[i]).collect(),
        y: idx.iter().map(|&i| inst.y[i]).collect(),
        a: idx.iter().map(|&i| inst.a[i]).collect(),
    }
}

fn all_metrics(i: &Instance) -> [f64; 6] {
    [
        bacc(&i.p, &i.y, 0.5).unwrap(),
        auc(&i.p, &i.y).unwrap(),
        eo_diff(&i.p, &i.y, &i.a, 0.5).unwrap(),
        ae_diff(&i.p, &i.y, &i.a, 0.5).unwrap(),
        worst_accuracy(&i.p, &i.y, &i.a, 0.5).unwrap(),
        abroca(&i.p, &i.y, &i.a, GRID).unwrap(),
    ]
}

/// Surrogate values `[eo group-size, eo conditional, ae, mmf]` on probabilities.
fn surrogates(p: &[f64], y: &[u8], a: &[u8]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut tape = Tape::new();
        let pv = tape.var(Tensor::column(p));
        let ctx = BatchContext::new(&tape, pv, y, a).unwrap();
        let v = match k {
            0 => eo_surrogate(&mut tape, &ctx, EoDenominator::GroupSize),
            1 => eo_surrogate(&mut tape, &ctx, EoDenominator::Conditional),
            2 => ae_surrogate(&mut tape, &ctx),
            _ => {
                let ce: Vec<f64> = p
                    .iter()
                    .zip(y)
                    .map(|(&pi, &yi)| -(if yi == 1 { pi } else { 1.0 - pi }).max(1e-12).ln())
                    .collect();
                let rows = tape.constant(Tensor::column(&ce));
                mmf_surrogate(&mut tape, &ctx, rows)
            }
        }
        .unwrap();
        *slot = tape.scalar(v);
    }
    out
}

fn flip(a: &[u8]) -> Vec<u8> {
    a.iter().map(|v| 1 - v).collect()
}

fn dataset(n: usize, d: usize, seed: u64) -> TripletDataset {
    synth_biased(&SynthSpec {
        n,
        d,
        cell_probs: [0.4, 0.3, 0.15, 0.15],
        class_separation: 2.0,
        attribute_shift: 1.5,
        label_noise: 0.05,
        seed,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_permutation_invariant(inst in instance(), seed in any::<u64>()) {
        prop_assert_eq!(all_metrics(&inst), all_metrics(&permuted(&inst, seed)));
    }

    #[test]
    fn metrics_invariant_under_monotone_maps(inst in instance(), k in 0.2f64..5.0) {
        // p -> p^k / (p^k + (1-p)^k) is strictly increasing and fixes 0.5
        let warped: Vec<f64> = inst
            .p
            .iter()
            .map(|&p| {
                let (u, v) = (p.powf(k), (1.0 - p).powf(k));
                u / (u + v)
            })
            .collect();
        let same_order = inst.p.iter().zip(&warped).all(|(&p, &q)| (p > 0.5) == (q > 0.5) && (p < 0.5) == (q < 0.5));
        prop_assume!(same_order);
        // ties must stay ties and order must be kept exactly
        let mut order: Vec<usize> = (0..inst.p.len()).collect();
        order.sort_by(|&i, &j| inst.p[i].total_cmp(&inst.p[j]));
        prop_assume!(order.windows(2).all(|w| (inst.p[w[0]] == inst.p[w[1]]) == (warped[w[0]] == warped[w[1]])
            && (inst.p[w[0]] < inst.p[w[1]]) == (warped[w[0]] < warped[w[1]])));
        let other = Instance { p: warped, ..inst.clone() };
        prop_assert_eq!(all_metrics(&inst), all_metrics(&other));
    }

    #[test]
    fn auc_and_abroca_invariant_under_any_increasing_map(inst in instance()) {
        let squashed: Vec<f64> = inst.p.iter().map(|p| p * 0.25 + 0.01).collect();
        let other = Instance { p: squashed, ..inst.clone() };
        prop_assert_eq!(auc(&inst.p, &inst.y).unwrap(), auc(&other.p, &other.y).unwrap());
        prop_assert_eq!(
            abroca(&inst.p, &inst.y, &inst.a, GRID).unwrap(),
            abroca(&other.p, &other.y, &other.a, GRID).unwrap()
        );
    }

    #[test]
    fn group_relabel_symmetry(inst in instance()) {
        let fa = flip(&inst.a);
        prop_assert_eq!(eo_diff(&inst.p, &inst.y, &inst.a, 0.5).unwrap(), eo_diff(&inst.p, &inst.y, &fa, 0.5).unwrap());
        prop_assert_eq!(ae_diff(&inst.p, &inst.y, &inst.a, 0.5).unwrap(), ae_diff(&inst.p, &inst.y, &fa, 0.5).unwrap());
        prop_assert_eq!(abroca(&inst.p, &inst.y, &inst.a, GRID).unwrap(), abroca(&inst.p, &inst.y, &fa, GRID).unwrap());
        let s = surrogates(&inst.p, &inst.y, &inst.a);
        let t = surrogates(&inst.p, &inst.y, &fa);
        for k in 0..3 {
            prop_assert!((s[k] - t[k]).abs() <= 1e-15, "surrogate {} changed: {} vs {}", k, s[k], t[k]);
        }
    }

    #[test]
    fn metrics_in_unit_interval(inst in instance()) {
        for m in all_metrics(&inst) {
            prop_assert!((0.0..=1.0).contains(&m), "{}", m);
        }
    }

    #[test]
    fn af_identity_on_reports(inst in instance(), kind in 0usize..4) {
        let kind = [ConstraintKind::None, ConstraintKind::EqualizedOdds, ConstraintKind::AccuracyEquality, ConstraintKind::MaxMinFairness][kind];
        let rep = evaluate(&inst.p, &inst.y, &inst.a, "x", kind, &EvalSettings::default()).unwrap();
        prop_assert!(rep.af_identity_holds(1e-12));
    }

    #[test]
    fn roc_monotone_and_area_is_group_auc(inst in instance()) {
        for (g, curve) in group_roc_curves(&inst.p, &inst.y, &inst.a).unwrap().iter().enumerate() {
            prop_assert_eq!(curve.points[0], (0.0, 0.0));
            prop_assert_eq!(*curve.points.last().unwrap(), (1.0, 1.0));
            prop_assert!(curve.points.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
            let (ps, ys): (Vec<f64>, Vec<u8>) = inst
                .p
                .iter()
                .zip(&inst.y)
                .zip(&inst.a)
                .filter(|(_, &a)| a as usize == g)
                .map(|((&p, &y), _)| (p, y))
                .unzip();
            prop_assert!((curve.area() - auc_oracle(&ps, &ys)).abs() <= 1e-10);
        }
    }

    #[test]
    fn surrogates_nonnegative_and_permutation_invariant(inst in instance(), seed in any::<u64>()) {
        let s = surrogates(&inst.p, &inst.y, &inst.a);
        prop_assert!(s.iter().all(|&v| v >= 0.0), "{:?} p={:?}", s, inst.p);
        let q = permuted(&inst, seed);
        let t = surrogates(&q.p, &q.y, &q.a);
        for k in 0..4 {
            prop_assert!((s[k] - t[k]).abs() <= 1e-12 * s[k].abs().max(1.0));
        }
    }

    #[test]
    fn surrogates_vanish_on_mirrored_groups(half in 2usize..20, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut y: Vec<u8> = vec![0, 1];
        y.extend((2..half).map(|_| r.random_range(0..2u8)));
        let p: Vec<f64> = (0..half).map(|_| r.random_range(0.01..0.99)).collect();
        let (mut py, mut yy, mut ay) = (p.clone(), y.clone(), vec![0u8; half]);
        py.extend(&p);
        yy.extend(&y);
        ay.extend(vec![1u8; half]);
        let s = surrogates(&py, &yy, &ay);
        for (k, v) in s.iter().take(3).enumerate() {
            prop_assert!(v.abs() <= 1e-15, "surrogate {} = {}", k, v);
        }
    }

    #[test]
    fn softmax_probs_in_open_interval(zs in prop::collection::vec((-15.0f64..15.0, -15.0f64..15.0), 1..40)) {
        let flat: Vec<f64> = zs.iter().flat_map(|&(u, v)| [u, v]).collect();
        let p = Tensor::new(zs.len(), 2, flat).unwrap().softmax_probs().unwrap();
        for (&pi, &(u, v)) in p.data().iter().zip(&zs) {
            prop_assert!(pi > 0.0 && pi < 1.0);
            let (e0, e1) = (u.exp(), v.exp());
            prop_assert!((pi + e0 / (e0 + e1) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn masked_mean_full_mask_is_mean(v in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::column(&v));
        let m = tape.masked_mean(x, &vec![1.0; v.len()]).unwrap();
        prop_assert!((tape.scalar(m) - mean(&v)).abs() <= 1e-12 * mean(&v).abs().max(1.0));
    }

    #[test]
    fn identity_stitch_is_neutral(
        hidden in prop::collection::vec(1usize..9, 1..4),
        seed in any::<u64>(),
        pos_pick in any::<usize>(),
    ) {
        let mut dims = vec![3];
        dims.extend(&hidden);
        dims.push(2);
        let net = Network::init_mlp(&dims, seed).unwrap();
        let x = dataset(32, 3, seed).x;
        let before = net.logits(&x).unwrap();
        let mut stitched = net.clone();
        stitched.insert_stitch(1 + pos_pick % (dims.len() - 2), StitchInit::Identity).unwrap();
        let after = stitched.logits(&x).unwrap();
        for (u, v) in before.data().iter().zip(after.data()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip(
        hidden in prop::collection::vec(1usize..7, 1..3),
        seed in any::<u64>(),
        stitch in prop::option::of(any::<usize>()),
    ) {
        let mut dims = vec![4];
        dims.extend(&hidden);
        dims.push(2);
        let mut net = Network::init_mlp(&dims, seed).unwrap();
        if let Some(pos) = stitch {
            net.insert_stitch(1 + pos % (dims.len() - 2), StitchInit::Random { seed: seed ^ 1 }).unwrap();
        }
        let meta = CheckpointMeta {
            phase: Phase::Tfs,
            epoch: 3,
            optimizer: OptimizerConfig::default(),
            seeds: Seeds { init: seed, data: 1, train: 2 },
        };
        let text = Checkpoint::from_network(&net, &meta).to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        prop_assert_eq!(back.to_network().unwrap(), net);
        prop_assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(
        rows in prop::collection::vec((prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 3), 0u8..2, 0u8..2), 1..30),
    ) {
        let x = Tensor::from_rows(&rows.iter().map(|r| r.0.clone()).collect::<Vec<_>>()).unwrap();
        let ds = TripletDataset::new(
            "rt",
            x,
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        prop_assert_eq!(&back.a, &ds.a);
        prop_assert_eq!(&back.y, &ds.y);
        prop_assert!(back.x.data().iter().zip(ds.x.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_is_disjoint_and_exhaustive(n in 40usize..400, seed in any::<u64>(), stratify in any::<bool>()) {
        let ds = dataset(n, 2, seed);
        let parts = split(&ds, [0.6, 0.2, 0.2], seed ^ 7, stratify).unwrap();
        prop_assert_eq!(parts.iter().map(TripletDataset::len).sum::<usize>(), n);
        let mut rows: Vec<Vec<u64>> = parts
            .iter()
            .flat_map(|p| (0..p.len()).map(move |i| p.x.row_slice(i).iter().map(|v| v.to_bits()).collect()))
            .collect();
        let mut all: Vec<Vec<u64>> = (0..n).map(|i| ds.x.row_slice(i).iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        all.sort();
        prop_assert_eq!(rows, all);
        let again = split(&ds, [0.6, 0.2, 0.2], seed ^ 7, stratify).unwrap();
        prop_assert_eq!(&again[0].x, &parts[0].x);
    }

    #[test]
    fn balanced_subsample_contract(n in 80usize..600, seed in any::<u64>()) {
        let ds = dataset(n, 2, seed);
        let [tr, va, _] = split(&ds, [0.6, 0.2, 0.2], seed, true).unwrap();
        let pooled = tr.concat(&va, "pooled").unwrap();
        let Ok(bal) = balanced_subsample(&tr, &va, seed) else {
            // only allowed when a pooled cell is empty
            prop_assert_eq!(pooled.cell_counts().min(), 0);
            return Ok(());
        };
        let c = pooled.cell_counts().min();
        prop_assert_eq!(bal.cell_counts().as_array(), [c; 4]);
        let key = |d: &TripletDataset, i: usize| {
            let mut k: Vec<u64> = d.x.row_slice(i).iter().map(|v| v.to_bits()).collect();
            k.push(u64::from(d.a[i]));
            k.push(u64::from(d.y[i]));
            k
        };
        let mut pool: Vec<Vec<u64>> = (0..pooled.len()).map(|i| key(&pooled, i)).collect();
        pool.sort();
        let mut out: Vec<Vec<u64>> = (0..bal.len()).map(|i| key(&bal, i)).collect();
        out.sort();
        let before = out.len();
        out.dedup();
        prop_assert_eq!(out.len(), before);
        prop_assert!(out.iter().all(|k| pool.binary_search(k).is_ok()));
        prop_assert_eq!(balanced_subsample(&tr, &va, seed).unwrap().x, bal.x);
    }

    #[test]
    fn select_best_is_maximal(scores in prop::collection::vec(prop::option::of(0.0f64..1.0), 1..30), with_af in any::<bool>()) {
        let inst = {
            let mut r = rng(5);
            let (y, a) = random_cells(&mut r, 16);
            let p: Vec<f64> = (0..16).map(|_| r.random::<f64>()).collect();
            (p, y, a)
        };
        let kind = if with_af { ConstraintKind::EqualizedOdds } else { ConstraintKind::None };
        let base = evaluate(&inst.0, &inst.1, &inst.2, "val", kind, &EvalSettings::default()).unwrap();
        let records: Vec<RunRecord> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut v = base.clone();
                let s = s.unwrap_or(0.5);
                if with_af { v.af = Some(s) } else { v.bacc = s }
                RunRecord {
                    phase: Phase::Tfs,
                    epoch: i + 1,
                    objective: 1.0,
                    validation: v,
                    constraint: FairnessConstraint::none(),
                    seed: 0,
                    wall_time_s: None,
                }
            })
            .collect();
        let best = select_best(&records).unwrap();
        let chosen = records[best - 1].selection_score();
        prop_assert!(records.iter().all(|r| chosen >= r.selection_score()));
        prop_assert!(records[..best - 1].iter().all(|r| r.selection_score() < chosen));
    }
}
