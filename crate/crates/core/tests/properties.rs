use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fld_core::curriculum::{
    alp_compute, default_tracking_terms, exploration_factor, gmm_fit_em, tracking_reward, EmConfig,
    Fifo, SkillPerformanceBuffer, SkillPerformanceRecord,
};
use fld_core::dynamics::{gate_step, GateConfig, InputBuffer, LatentRollState, Verdict};
use fld_core::fld::{
    combine_losses, parameterize, reconstruct_latent, time_grid, FldConfig, FldModel,
    LatentParameterization,
};
use fld_core::numerics::{conv1d, DenseArray, RealDft};
use fld_core::signal::{
    generate_synthetic, window, Corpus, NormalizationStats, SyntheticMotionSpec, Trajectory,
};
use fld_core::training::export_latent_manifold;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn trajectory(d: usize, frames: usize, values: &[f64]) -> Trajectory {
    let data = (0..d * frames)
        .map(|i| values[i % values.len()] + 0.01 * i as f64)
        .collect();
    Trajectory::new(d, data, 0.02, None).unwrap()
}

proptest! {
    #[test]
    fn rfft_adjoint(x in vec(-5.0..5.0f64, 2..40), seed in 0u64..1000) {
        let dft = RealDft::new(x.len()).unwrap();
        let bins = x.len() / 2 + 1;
        let y = DenseArray::from_fn(&[2, bins], |i| ((i as u64 * 7919 + seed) % 97) as f64 / 48.5 - 1.0);
        let spec = dft.forward(&x).unwrap();
        let lhs: f64 = (0..bins).map(|j| spec.real[j] * y.row(0)[j] + spec.imag[j] * y.row(1)[j]).sum();
        let back = dft.adjoint(y.row(0), y.row(1)).unwrap();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        prop_assert!(close(lhs, rhs, 1e-10), "{lhs} vs {rhs}");
    }

    #[test]
    fn delta_kernel_is_identity(c in 1usize..4, half in 0usize..3, len in 1usize..20, vals in vec(-3.0..3.0f64, 1..50)) {
        let k = 2 * half + 1;
        let x = DenseArray::from_fn(&[2, c, len], |i| vals[i % vals.len()]);
        let w = DenseArray::from_fn(&[c, c, k], |i| {
            let (o, r) = (i / (c * k), i % (c * k));
            if r / k == o && r % k == half { 1.0 } else { 0.0 }
        });
        let y = conv1d(&x, &w, &DenseArray::zeros(&[c])).unwrap();
        prop_assert_eq!(y, x);
    }

    #[test]
    fn windows_cover_every_frame_once(d in 1usize..4, frames in 1usize..60, h in 1usize..20, vals in vec(-2.0..2.0f64, 1..20)) {
        prop_assume!(frames >= h);
        let t = trajectory(d, frames, &vals);
        let segs = window(&t, h, 1).unwrap();
        prop_assert_eq!(segs.len(), frames - h + 1);
        for (k, s) in segs.iter().enumerate() {
            prop_assert_eq!(s.target, k + h - 1);
            for j in 0..d {
                prop_assert_eq!(s.matrix.row(j)[h - 1], t.frame(k + h - 1)[j]);
            }
        }
    }

    #[test]
    fn normalization_ignores_frame_order(d in 1usize..5, frames in 2usize..40, vals in vec(-4.0..4.0f64, 1..30), seed in 0u64..100) {
        let t = trajectory(d, frames, &vals);
        let mut order: Vec<usize> = (0..frames).collect();
        let mut s = seed;
        for i in (1..frames).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<f64> = order.iter().flat_map(|&f| t.frame(f).to_vec()).collect();
        let u = Trajectory::new(d, shuffled, 0.02, None).unwrap();
        let (a, b) = (NormalizationStats::fit([&t]).unwrap(), NormalizationStats::fit([&u]).unwrap());
        for j in 0..d {
            prop_assert!(close(a.mean[j], b.mean[j], 1e-12));
            prop_assert!(close(a.std[j], b.std[j], 1e-12));
        }
    }

    #[test]
    fn zero_noise_synthesis_is_periodic(period in 4usize..40, d in 1usize..4, amp in vec(0.1..2.0f64, 3), off in 0.0..1.0f64, second in 0.0..0.5f64) {
        let dt = 0.02;
        let spec = SyntheticMotionSpec {
            base_frequency: 1.0 / (period as f64 * dt),
            dt,
            amplitude: (0..d).map(|j| amp[j % 3]).collect(),
            phase_offset: (0..d).map(|j| off + 0.1 * j as f64).collect(),
            mean: vec![0.3; d],
            harmonics: vec![1.0, second],
            noise_std: 0.0,
            frames: 3 * period,
            seed: 0,
            time_offset: 0.0,
            label: None,
        };
        let t = generate_synthetic(&spec).unwrap();
        for f in 0..2 * period {
            for j in 0..d {
                prop_assert!((t.frame(f)[j] - t.frame(f + period)[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bin_frequency_curves_are_recovered(h in 8usize..64, bin in 1usize..31, phi in -0.5..0.5f64, a in 0.1..3.0f64, b in -2.0..2.0f64) {
        prop_assume!(2 * bin < h);
        let dt = 0.02;
        let f = bin as f64 / (h as f64 * dt);
        let theta = LatentParameterization { f: vec![f], a: vec![a], b: vec![b] };
        let z = reconstruct_latent(&[phi], &theta, &time_grid(h, dt)).unwrap();
        let got = parameterize(&z, dt).unwrap();
        prop_assert!((got.f[0] - f).abs() < 1e-9);
        prop_assert!((got.a[0] - a).abs() < 1e-9);
        prop_assert!((got.b[0] - b).abs() < 1e-9);
    }

    #[test]
    fn phase_advance_equals_grid_shift(h in 2usize..40, phi in -1.0..1.0f64, f in 0.0..10.0f64, a in 0.0..3.0f64, b in -1.0..1.0f64) {
        let dt = 0.02;
        let theta = LatentParameterization { f: vec![f], a: vec![a], b: vec![b] };
        let grid = time_grid(h, dt);
        let shifted: Vec<f64> = grid.iter().map(|t| t + dt).collect();
        let p = reconstruct_latent(&[phi + f * dt], &theta, &grid).unwrap();
        let q = reconstruct_latent(&[phi], &theta, &shifted).unwrap();
        prop_assert!(p.max_abs_diff(&q) < 1e-12);
    }

    #[test]
    fn loss_is_monotone_in_alpha(losses in vec(0.0..10.0f64, 1..8), a1 in 0.0..2.0f64, a2 in 0.0..2.0f64) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        prop_assert!(combine_losses(&losses, lo) <= combine_losses(&losses, hi));
    }

    #[test]
    fn fifo_drops_oldest(cap in 1usize..20, extra in 0usize..30) {
        let mut q = Fifo::new(cap).unwrap();
        let mut evicted = Vec::new();
        for i in 0..cap + extra {
            evicted.extend(q.push(i));
        }
        prop_assert_eq!(evicted, (0..extra).collect::<Vec<_>>());
        prop_assert_eq!(q.iter().copied().collect::<Vec<_>>(), (extra..cap + extra).collect::<Vec<_>>());
    }

    #[test]
    fn exploration_factor_scales(points in vec(vec(-3.0..3.0f64, 3), 3..20), base in vec(vec(-1.0..1.0f64, 3), 3..20), s in 0.1..5.0f64) {
        let g = exploration_factor(&points, &base);
        prop_assume!(g.is_ok());
        let g = g.unwrap();
        let n = points.len() as f64;
        let m: Vec<f64> = (0..3).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n).collect();
        let scaled: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(&m).map(|(v, c)| c + s * (v - c)).collect()).collect();
        prop_assert!(close(exploration_factor(&scaled, &base).unwrap(), s * g, 1e-9));
    }

    #[test]
    fn alp_is_symmetric(theta in vec(-2.0..2.0f64, 3), r1 in 0.0..1.0f64, r2 in 0.0..1.0f64) {
        let with = |r: f64| {
            let mut b = SkillPerformanceBuffer::skill_buffer();
            b.push(SkillPerformanceRecord::new(theta.clone(), r, 0).unwrap());
            b
        };
        prop_assert_eq!(alp_compute(&theta, r2, &with(r1)), alp_compute(&theta, r1, &with(r2)));
    }

    #[test]
    fn tracking_reward_is_bounded(target in vec(-3.0..3.0f64, 27), measured in vec(-3.0..3.0f64, 27)) {
        let terms = default_tracking_terms();
        let total_w: f64 = terms.iter().map(|t| t.weight).sum();
        let r = tracking_reward(&target, &measured, &terms).unwrap();
        prop_assert!(r.total >= 0.0 && r.total <= total_w + 1e-12);
        prop_assert!(r.terms.iter().all(|(_, v)| *v > 0.0 && *v <= 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_objective_never_decreases(pts in vec(vec(-3.0..3.0f64, 2), 12..40), k in 1usize..4, seed in 0u64..50) {
        let fit = gmm_fit_em(&pts, k, &EmConfig { seed, ..EmConfig::default() });
        prop_assume!(fit.is_ok());
        let ll = fit.unwrap().log_likelihood;
        for w in ll.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn raising_epsilon_never_rejects_more(seed in 0u64..1000, e1 in 0.01..5.0f64, e2 in 0.01..5.0f64) {
        let model = gate_model();
        let (d, h, n) = (model.config.d, model.config.h, model.config.n);
        let mut buf = InputBuffer::new(n + 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..=n {
            buf.push(DenseArray::from_fn(&[d, h], |i| (i as f64 * 0.3).sin() + rand::Rng::gen_range(&mut rng, -0.5..0.5)));
        }
        let state = LatentRollState::new(vec![0.0; model.config.c], LatentParameterization::zeros(model.config.c)).unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let v = |e| gate_step(&buf, &state, &GateConfig::new(e, &model).unwrap(), &model).unwrap().verdict;
        prop_assert!(!(v(lo) == Verdict::Accepted && v(hi) == Verdict::Rejected));
    }

    #[test]
    fn manifold_ignores_trajectory_order(seed in 0u64..1000) {
        let model = gate_model();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut traj = || {
            let data = (0..3 * 40).map(|i| (i as f64 * 0.17).sin() + rand::Rng::gen_range(&mut rng, -0.3..0.3)).collect();
            Trajectory::new(3, data, 0.02, None).unwrap()
        };
        let (a, b) = (traj(), traj());
        let fwd = export_latent_manifold(&model, &Corpus::new(vec![a.clone(), b.clone()]).unwrap()).unwrap();
        let rev = export_latent_manifold(&model, &Corpus::new(vec![b, a]).unwrap()).unwrap();
        let half = fwd.points.len() / 2;
        let sign = |a: f64, b: f64| if a * b < 0.0 { -1.0 } else { 1.0 };
        let (sx, sy) = (sign(fwd.points[0].x, rev.points[half].x), sign(fwd.points[0].y, rev.points[half].y));
        for (i, p) in fwd.points.iter().enumerate() {
            let q = &rev.points[(i + half) % fwd.points.len()];
            prop_assert!((p.x - sx * q.x).abs() < 1e-9 && (p.y - sy * q.y).abs() < 1e-9);
        }
    }
}

fn gate_model() -> FldModel {
    let cfg = FldConfig {
        hidden: 4,
        kernel: 3,
        ..FldConfig::new(3, 2, 8, 2)
    };
    FldModel::new(
        cfg,
        NormalizationStats::identity(3),
        &mut ChaCha8Rng::seed_from_u64(11),
    )
    .unwrap()
}
