use dscfl::affinity::{availability_update, decide, responsibility_update, ApState, SelfAvailability, SimilarityMatrix};
use dscfl::datamap::{data_similarity, info_matrix, DataSimilaritySign, LabelHistogram};
use dscfl::dsc::{Group, GroupStructure, Stage};
use dscfl::flcore::{combine, intra_weights, AggregationWeights, GradientVector};
use dscfl::theory::{bound_trajectory, BoundParams};
use dscfl::topology::{build_snr_matrix, path_loss, ChannelParams, ClientProfile, Position};
use proptest::prelude::*;

fn profiles(points: &[(f64, f64)], power: f64) -> Vec<ClientProfile> {
    points
        .iter()
        .enumerate()
        .map(|(id, &(x, y))| ClientProfile { id, position: Position::new(x, y), transmit_power_w: power, dataset_ref: id })
        .collect()
}

fn distinct(points: &[(f64, f64)], bs: (f64, f64)) -> bool {
    let mut all = points.to_vec();
    all.push(bs);
    (0..all.len()).all(|i| (i + 1..all.len()).all(|j| (all[i].0 - all[j].0).hypot(all[i].1 - all[j].1) > 1e-6))
}

fn histograms() -> impl Strategy<Value = Vec<LabelHistogram>> {
    (2usize..6, 2usize..5).prop_flat_map(|(k, l)| {
        prop::collection::vec(prop::collection::vec(0u64..50, l), k).prop_filter_map("empty partition", |rows| {
            let hs: Vec<LabelHistogram> = rows.into_iter().map(LabelHistogram::new).collect();
            (hs.iter().map(LabelHistogram::total).sum::<u64>() > 0).then_some(hs)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snr_matrix_symmetric_and_scales(
        pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..7),
        bs in (0.0f64..100.0, 0.0f64..100.0),
        factor in 0.1f64..10.0,
    ) {
        prop_assume!(distinct(&pts, bs));
        let params = ChannelParams::default();
        let base = build_snr_matrix(&profiles(&pts, 0.1), Position::new(bs.0, bs.1), &params).unwrap();
        let louder = build_snr_matrix(&profiles(&pts, 0.1 * factor), Position::new(bs.0, bs.1), &params).unwrap();
        let noisier = ChannelParams { noise_power_w: params.noise_power_w * factor, ..params };
        let quiet = build_snr_matrix(&profiles(&pts, 0.1), Position::new(bs.0, bs.1), &noisier).unwrap();
        let k = pts.len();
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(base.get(i, j), base.get(j, i));
                prop_assert!(base.get(i, j) > 0.0);
                let v = base.get(i, j);
                prop_assert!((louder.get(i, j) / v - factor).abs() <= 1e-9 * factor);
                prop_assert!((quiet.get(i, j) * factor / v - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn path_loss_decreases_with_distance(d in 0.01f64..1e4, extra in 1e-3f64..1e3) {
        let p = ChannelParams::default();
        prop_assert!(path_loss(d + extra, &p).unwrap() < path_loss(d, &p).unwrap());
    }

    #[test]
    fn messages_keep_their_sign_invariants(
        n in 2usize..7,
        raw in prop::collection::vec(-10.0f64..0.0, 49),
        sweeps in 1usize..20,
        damping in 0.0f64..0.95,
    ) {
        let mut sim = SimilarityMatrix::new(n, raw[..n * n].to_vec()).unwrap();
        sim.set_preference(sim.median_off_diagonal().unwrap()).unwrap();
        let mut st = ApState::new(n);
        for _ in 0..sweeps {
            responsibility_update(&mut st, &sim, damping).unwrap();
            availability_update(&mut st, damping, SelfAvailability::Standard).unwrap();
        }
        for i in 0..n {
            for k in 0..n {
                if i != k {
                    prop_assert!(st.a(i, k) <= 0.0);
                } else {
                    prop_assert!(st.a(k, k) >= 0.0);
                }
            }
        }
        let first = decide(&st);
        prop_assert!(first.check_invariants().is_ok());
        prop_assert_eq!(decide(&st), first);
    }

    #[test]
    fn information_total_is_non_positive(hs in histograms()) {
        let xi = info_matrix(&hs).unwrap();
        prop_assert!(xi.sum() <= 1e-12);
    }

    #[test]
    fn information_rows_follow_client_permutation(hs in histograms(), rot in 0usize..5) {
        let k = hs.len();
        let mut perm = hs.clone();
        perm.rotate_left(rot % k);
        let a = info_matrix(&hs).unwrap();
        let b = info_matrix(&perm).unwrap();
        for i in 0..k {
            prop_assert_eq!(b.row(i), a.row((i + rot) % k));
        }
    }

    #[test]
    fn data_similarity_symmetric_non_negative(hs in histograms()) {
        let xi = info_matrix(&hs).unwrap();
        let members: Vec<usize> = (0..hs.len()).collect();
        let s = data_similarity(&xi, &members, -1.0, DataSimilaritySign::AsPrinted).unwrap();
        for i in 0..hs.len() {
            for k in 0..hs.len() {
                if i != k {
                    prop_assert_eq!(s.get(i, k), s.get(k, i));
                    prop_assert!(s.get(i, k) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn intra_weights_form_a_distribution(
        grads in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 4), 1usize..500), 1..6),
    ) {
        let gv: Vec<GradientVector> = grads
            .iter()
            .enumerate()
            .map(|(k, (v, n))| GradientVector { values: v.clone(), source: k, round: 0, sample_count: *n })
            .collect();
        let refs: Vec<&GradientVector> = gv.iter().collect();
        let w = intra_weights(&gv[0], &refs).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn aggregation_is_linear(
        a in prop::collection::vec(-3.0f64..3.0, 15),
        b in prop::collection::vec(-3.0f64..3.0, 15),
        c in -2.0f64..2.0,
    ) {
        let groups = GroupStructure {
            num_clients: 5,
            stage: Stage::Final,
            groups: vec![
                Group { leader: 0, members: vec![0, 3], primary_group: None, primary_leader: None },
                Group { leader: 4, members: vec![1, 2, 4], primary_group: None, primary_leader: None },
            ],
            unassigned: vec![],
            converged: true,
        };
        let weights = AggregationWeights { intra: vec![vec![0.3, 0.7], vec![0.2, 0.5, 0.3]], inter: vec![0.4, 0.6] };
        let split = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(3).map(<[f64]>::to_vec).collect() };
        let (ga, gb) = (split(&a), split(&b));
        let mixed: Vec<Vec<f64>> = ga.iter().zip(&gb).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + c * q).collect()).collect();
        let refs = |g: &[Vec<f64>]| -> Vec<f64> {
            let slices: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
            combine(&groups, &slices, &weights).unwrap()
        };
        let (ra, rb, rm) = (refs(&ga), refs(&gb), refs(&mixed));
        for i in 0..3 {
            prop_assert!((rm[i] - (ra[i] + c * rb[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn bound_moves_monotonically_to_its_fixed_point(
        mu_frac in 0.05f64..1.0,
        lipschitz in 0.5f64..4.0,
        lr_frac in 0.05f64..0.99,
        sigma in 0.0f64..2.0,
        gap in 0.0f64..10.0,
    ) {
        let weights = AggregationWeights { intra: vec![vec![0.5, 0.5], vec![1.0]], inter: vec![0.5, 0.5] };
        // Dissimilarity chosen so that delta^4 * W = 1, which keeps A >= 0.
        let delta = weights.energy().powf(-0.25);
        let lmax = 2.0 / (lipschitz * delta.powi(4) * weights.energy());
        let p = BoundParams {
            delta_intra: delta,
            delta_inter: delta,
            sigma_intra: vec![vec![sigma, sigma], vec![sigma]],
            sigma_inter: vec![sigma, sigma],
            ..BoundParams::noiseless(mu_frac * lipschitz, lipschitz, lr_frac * lmax, weights, gap)
        };
        let traj = bound_trajectory(&p, 40).unwrap();
        prop_assert!(traj.a < 1.0);
        let rising = traj.bounds[1] >= traj.bounds[0];
        for w in traj.bounds.windows(2) {
            if rising {
                prop_assert!(w[1] >= w[0] * (1.0 - 1e-12));
            } else {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }
}
