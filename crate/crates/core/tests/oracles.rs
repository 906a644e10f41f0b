//! Independent reference values for the channel, clustering, aggregation,
//! transport and bound computations.

use dscfl::affinity::{self, ApConfig, SimilarityMatrix};
use dscfl::datamap::{data_similarity, info_matrix, DataSimilaritySign, LabelHistogram};
use dscfl::dsc::{cluster_by_data, cluster_primary, comm_similarity, CommKernel, DscConfig, Group, GroupStructure, Stage};
use dscfl::flcore::{
    aggregate_round, angle_weight, transmit, GradientVector, IntraWeighting, LinkNoiseModel, LinkUse, BS_NODE,
};
use dscfl::theory::{bound_trajectory, contraction_factor, max_learning_rate, BoundParams};
use dscfl::topology::{build_snr_matrix, ChannelParams, ClientProfile, Position, SnrMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_params() -> ChannelParams {
    ChannelParams { noise_power_w: 1e-13, ..ChannelParams::default() }
}

fn clients(points: &[(f64, f64)]) -> Vec<ClientProfile> {
    points
        .iter()
        .enumerate()
        .map(|(id, &(x, y))| ClientProfile { id, position: Position::new(x, y), transmit_power_w: 0.1, dataset_ref: id })
        .collect()
}

fn assert_rel(actual: f64, expected: f64, tol: f64) {
    let rel = ((actual - expected) / expected).abs();
    assert!(rel <= tol, "{actual} vs {expected} (rel {rel:e})");
}

/// Best net similarity over every non-empty exemplar subset.
fn brute_force(sim: &SimilarityMatrix) -> (f64, Vec<usize>) {
    let n = sim.len();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for mask in 1u32..(1 << n) {
        let ex: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let total: f64 = (0..n)
            .map(|i| if ex.contains(&i) { sim.get(i, i) } else { ex.iter().map(|&e| sim.get(i, e)).fold(f64::NEG_INFINITY, f64::max) })
            .sum();
        if total > best.0 {
            best = (total, ex);
        }
    }
    best
}

#[test]
fn line_topology_snr_and_kernels() {
    let cl = clients(&[(0.0, 0.0), (10.0, 0.0), (25.0, 0.0), (45.0, 0.0)]);
    let snr = build_snr_matrix(&cl, Position::new(50.0, 50.0), &desk_params()).unwrap();
    let expected = [
        [0.38977127743507039254, 609.35929565766053408, 19.436542306971692548, 2.132035289175634309],
        [609.35929565766053408, 0.5660304434493004146, 132.66925993909264371, 5.4850121488595058207],
        [19.436542306971692548, 132.66925993909264371, 0.9430949076518743485, 44.978053521597787557],
        [2.132035289175634309, 5.4850121488595058207, 44.978053521597787557, 1.4080628540998489576],
    ];
    for i in 0..4 {
        for j in 0..4 {
            assert_rel(snr.get(i, j), expected[i][j], 1e-12);
        }
    }
    let paper = comm_similarity(&snr, -1.0, CommKernel::PaperNegSquaredSnr).unwrap();
    assert_rel(paper.get(0, 1), -371318.75120440014422, 1e-12);
    assert_rel(paper.get(2, 3), -2023.0252985917151389, 1e-12);
    assert_rel(paper.get(3, 0), -4.5455744742902306104, 1e-12);
    let diff = comm_similarity(&snr, -1.0, CommKernel::NegSquaredSnrDiff).unwrap();
    assert_rel(diff.get(0, 1), -0.031067293604031899642, 1e-9);
    assert_rel(diff.get(1, 3), -0.70901858058597401536, 1e-12);
    assert_rel(diff.get(3, 2), -0.21619519122404658389, 1e-12);
    assert_eq!(diff.get(2, 2), -1.0);
}

#[test]
fn spatial_split_matches_exhaustive_search() {
    let cl = clients(&[(25.0, 51.0), (20.0, 57.0), (22.0, 52.0), (41.0, 60.0), (40.0, 60.0), (38.0, 58.0)]);
    let snr = build_snr_matrix(&cl, Position::new(50.0, 50.0), &desk_params()).unwrap();
    let cfg = DscConfig { comm_similarity_kernel: CommKernel::NegSquaredSnrDiff, ..DscConfig::default() };
    let primary = cluster_primary(&snr, &cfg).unwrap();
    let leaders: Vec<usize> = primary.groups.iter().map(|g| g.leader).collect();
    let members: Vec<Vec<usize>> = primary.groups.iter().map(|g| g.members.clone()).collect();
    assert_eq!(leaders, vec![2, 4]);
    assert_eq!(members, vec![vec![0, 1, 2], vec![3, 4, 5]]);

    let mut sim = comm_similarity(&snr, 0.0, cfg.comm_similarity_kernel).unwrap();
    sim.set_preference(sim.median_off_diagonal().unwrap()).unwrap();
    assert_rel(sim.get(0, 0), -19941.152564477442911, 1e-9);
    let (best, ex) = brute_force(&sim);
    assert_eq!(ex, vec![2, 4]);
    assert_rel(best, -41248.755996376533321, 1e-9);
}

#[test]
fn three_member_data_similarity() {
    let hist: Vec<LabelHistogram> =
        [[30, 30, 0, 0], [0, 0, 20, 20], [25, 0, 0, 25]].iter().map(|c| LabelHistogram::new(c.to_vec())).collect();
    let xi = info_matrix(&hist).unwrap();
    assert!((xi.get(0, 1) - -0.18325814637483101304).abs() < 1e-15);
    assert!((xi.get(2, 3) - -0.085137603960998447201).abs() < 1e-15);
    assert!((xi.sum() - -0.62646341921367863566).abs() < 1e-14);
    let s = data_similarity(&xi, &[0, 1, 2], 0.0, DataSimilaritySign::AsPrinted).unwrap();
    assert_rel(s.get(0, 1), 0.005347826809110887034, 1e-12);
    assert_rel(s.get(0, 2), 0.0016759889770241241777, 1e-12);
    assert_rel(s.get(2, 1), 0.0011573952378846872841, 1e-12);
    let neg = data_similarity(&xi, &[2, 0], 0.0, DataSimilaritySign::Negated).unwrap();
    assert_eq!(neg.get(0, 1), -s.get(2, 0));
}

#[test]
fn label_pairs_split_matches_exhaustive_search() {
    let hist: Vec<LabelHistogram> = [[30, 30, 0, 0], [0, 0, 25, 25], [20, 20, 0, 0], [0, 0, 15, 15]]
        .iter()
        .map(|c| LabelHistogram::new(c.to_vec()))
        .collect();
    let xi = info_matrix(&hist).unwrap();
    let snr = SnrMatrix::from_values(4, vec![1.0; 16]).unwrap();
    let (groups, converged) = cluster_by_data(&[0, 1, 2, 3], &xi, &snr, &DscConfig::default()).unwrap();
    assert!(converged);
    let got: Vec<(usize, Vec<usize>)> = groups.iter().map(|g| (g.leader, g.members.clone())).collect();
    assert_eq!(got, vec![(1, vec![0, 1, 2]), (3, vec![3])]);

    let mut sim = data_similarity(&xi, &[0, 1, 2, 3], 0.0, DataSimilaritySign::AsPrinted).unwrap();
    sim.set_preference(sim.median_off_diagonal().unwrap()).unwrap();
    let (best, ex) = brute_force(&sim);
    assert_eq!(ex, vec![1, 3]);
    assert_rel(best, 0.0042497878176474579015, 1e-9);
}

#[test]
fn five_point_exemplars_near_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let pts: Vec<(f64, f64)> = (0..5).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let mut sim = SimilarityMatrix::from_fn(5, 0.0, |i, k| {
            -((pts[i].0 - pts[k].0).powi(2) + (pts[i].1 - pts[k].1).powi(2))
        })
        .unwrap();
        sim.set_preference(sim.median_off_diagonal().unwrap()).unwrap();
        let out = affinity::cluster(&sim, &ApConfig::default()).unwrap();
        let (best, _) = brute_force(&sim);
        let got = out.assignment.net_similarity(&sim);
        assert!(got >= best - 0.05 * best.abs(), "{got} vs optimum {best}");
    }
}

#[test]
fn constant_shift_keeps_assignments() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let vals: Vec<f64> = (0..36).map(|_| -rng.random::<f64>()).collect();
        let mut sim = SimilarityMatrix::new(6, vals.clone()).unwrap();
        sim.set_preference(sim.median_off_diagonal().unwrap()).unwrap();
        let shifted = SimilarityMatrix::new(6, sim.values().iter().map(|v| v + 3.0).collect()).unwrap();
        let a = affinity::cluster(&sim, &ApConfig::default()).unwrap();
        let b = affinity::cluster(&shifted, &ApConfig::default()).unwrap();
        assert_eq!(a.assignment, b.assignment);
    }
}

fn gv(values: Vec<f64>, source: usize, sample_count: usize) -> GradientVector {
    GradientVector { values, source, round: 0, sample_count }
}

fn f_of(theta: f64) -> f64 {
    1.0 - (-(-(theta - 1.0)).exp()).exp()
}

#[test]
fn two_by_two_matches_direct_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let sizes: Vec<usize> = (0..4).map(|_| rng.random_range(10..100)).collect();
        let grads: Vec<GradientVector> =
            (0..4).map(|k| gv((0..6).map(|_| rng.random_range(-1.0..1.0)).collect(), k, sizes[k])).collect();
        let groups = GroupStructure {
            num_clients: 4,
            stage: Stage::Final,
            groups: vec![
                Group { leader: 1, members: vec![0, 1], primary_group: None, primary_leader: None },
                Group { leader: 2, members: vec![2, 3], primary_group: None, primary_leader: None },
            ],
            unassigned: vec![],
            converged: true,
        };
        let snr = SnrMatrix::from_values(4, vec![1.0; 16]).unwrap();
        let out = aggregate_round(&groups, &grads, IntraWeighting::AngleAware, &LinkNoiseModel::ideal(), &snr, 0).unwrap();

        let cos_angle = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            (dot / (na * nb)).clamp(-1.0, 1.0).acos()
        };
        let mut expected = vec![0.0; 6];
        let total: f64 = sizes.iter().sum::<usize>() as f64;
        for g in &groups.groups {
            let raw: Vec<f64> = g
                .members
                .iter()
                .map(|&m| {
                    let theta = if m == g.leader { 0.0 } else { cos_angle(&grads[m].values, &grads[g.leader].values) };
                    sizes[m] as f64 * f_of(theta).exp()
                })
                .collect();
            let norm: f64 = raw.iter().sum();
            let gl = g.members.iter().map(|&m| sizes[m]).sum::<usize>() as f64 / total;
            for (&m, r) in g.members.iter().zip(&raw) {
                for i in 0..6 {
                    expected[i] += gl * (r / norm) * grads[m].values[i];
                }
            }
        }
        for i in 0..6 {
            assert!((out.global.values[i] - expected[i]).abs() <= 1e-12, "{i}: {} vs {}", out.global.values[i], expected[i]);
        }
    }
}

#[test]
fn angle_weight_matches_closed_form() {
    for &t in &[0.0, 0.3, 1.0, std::f64::consts::FRAC_PI_2, 2.5, std::f64::consts::PI] {
        assert!((angle_weight(t) - f_of(t)).abs() < 1e-15);
    }
    assert!((angle_weight(std::f64::consts::FRAC_PI_2) - 0.43168263488661835449).abs() < 1e-15);
}

#[test]
fn noise_energy_monte_carlo() {
    let g = gv(vec![3.0, -1.0, 2.0, 0.5], 0, 1);
    let draws = 10_000u64;
    let snr = 10.0;
    let noise = LinkNoiseModel::awgn(99);
    let mut sum = 0.0;
    let mut sum_mean_shift = [0.0; 4];
    for r in 0..draws {
        let t = transmit(&g, snr, &noise, LinkUse { round: r, from: 0, to: BS_NODE }).unwrap();
        sum += t.noise_sq_norm / g.sq_norm();
        for i in 0..4 {
            sum_mean_shift[i] += t.received.values[i] - g.values[i];
        }
    }
    let mean = sum / draws as f64;
    assert!((mean - 0.1).abs() <= 0.003, "mean relative noise energy {mean}");
    // Per-coordinate noise std is sqrt(|g|^2 / q / snr) ~ 0.6; the mean of 1e4 draws is within 0.03.
    for s in sum_mean_shift {
        assert!((s / draws as f64).abs() < 0.03);
    }
}

#[test]
fn learning_rate_threshold_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let lipschitz = rng.random_range(0.5..5.0);
        let mu = lipschitz * rng.random_range(0.05..1.0);
        let groups = rng.random_range(1..4);
        let intra: Vec<Vec<f64>> = (0..groups)
            .map(|_| {
                let n = rng.random_range(1..4);
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let raw: Vec<f64> = (0..groups).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let weights = dscfl::flcore::AggregationWeights { intra, inter: raw.iter().map(|v| v / s).collect() };
        let (di, de) = (rng.random_range(1.0..3.0), rng.random_range(1.0..3.0));
        let lmax = max_learning_rate(lipschitz, di, de, &weights).unwrap();
        let at = |lambda: f64| {
            let p = BoundParams {
                delta_intra: di,
                delta_inter: de,
                ..BoundParams::noiseless(mu, lipschitz, lambda, weights.clone(), 1.0)
            };
            contraction_factor(&p).unwrap()
        };
        assert!(at(0.99 * lmax).a < 1.0);
        assert!(!at(0.99 * lmax).divergent);
        assert!(at(1.01 * lmax).a > 1.0);
        assert!(at(1.01 * lmax).divergent);
        assert!((at(lmax).a - 1.0).abs() < 1e-12);
    }
}

#[test]
fn noiseless_bound_decays_geometrically() {
    let weights = dscfl::flcore::AggregationWeights { intra: vec![vec![0.5, 0.5], vec![1.0]], inter: vec![0.6, 0.4] };
    let lmax = max_learning_rate(2.0, 1.2, 1.1, &weights).unwrap();
    let p = BoundParams { delta_intra: 1.2, delta_inter: 1.1, ..BoundParams::noiseless(0.5, 2.0, 0.5 * lmax, weights, 3.0) };
    let traj = bound_trajectory(&p, 30).unwrap();
    for t in 0..=30 {
        assert_rel(traj.bounds[t], 3.0 * traj.a.powi(t as i32), 1e-12);
    }
}
