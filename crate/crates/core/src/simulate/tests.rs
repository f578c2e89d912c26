use super::*;

const PITCH_HI: f64 = 1.67 / 3.0;
const LAMBDA: f64 = 0.532;

fn small_config(frames: usize) -> SimulationConfig {
    let mut cfg = SimulationConfig::default();
    cfg.scene.frame_size = 32;
    cfg.trajectory.frames = frames;
    cfg
}

#[test]
fn uniform_object_is_unit_field() {
    let o = make_object(&ObjectSource::Uniform, 12, 9, PITCH_HI, LAMBDA).unwrap();
    assert!(o.data().iter().all(|v| *v == Complex64::new(1.0, 0.0)));
}

#[test]
fn phase_disk_construction() {
    let src = ObjectSource::PhaseDisk {
        phase_height: 1.0,
        radius_fraction: 0.25,
    };
    let o = make_object(&src, 64, 64, PITCH_HI, LAMBDA).unwrap();
    assert!(o.data().iter().all(|v| (v.norm() - 1.0).abs() < 1e-14));
    assert!((o.data()[[32, 32]].arg() - 1.0).abs() < 1e-14);
    assert!(o.data()[[0, 0]].arg().abs() < 1e-14);
    let inside = o.data().iter().filter(|v| (v.arg() - 1.0).abs() < 1e-12).count();
    let expected = PI * 16.0 * 16.0;
    assert!((inside as f64 / expected - 1.0).abs() < 0.05);
}

#[test]
fn bar_chart_period_two_peaks_at_nyquist() {
    let src = ObjectSource::Bars {
        period: 2,
        bar_amplitude: 0.0,
    };
    let n = 96;
    let o = make_object(&src, n, n, PITCH_HI, LAMBDA).unwrap();
    // profile across the vertical group, averaged along the bars
    let g = bar_groups(n, n, 2).unwrap()[0];
    let profile: Vec<f64> = g
        .region
        .col_range()
        .map(|c| g.region.row_range().map(|r| o.data()[[r, c]].norm()).sum::<f64>())
        .collect();
    let len = profile.len();
    let mut best = (0.0, 0);
    for k in 1..len {
        let v: Complex64 = profile
            .iter()
            .enumerate()
            .map(|(x, &p)| p * Complex64::from_polar(1.0, -2.0 * PI * (k * x) as f64 / len as f64))
            .sum();
        if v.norm() > best.0 + 1e-9 {
            best = (v.norm(), k);
        }
    }
    assert_eq!(best.1, len / 2, "profile peak at bin {} of {len}", best.1);
}

#[test]
fn bar_groups_reject_short_period() {
    assert!(bar_groups(96, 96, 1).is_err());
    assert!(bar_groups(30, 30, 4).is_err());
    let [v, h] = bar_groups(384, 384, 3).unwrap();
    assert_eq!(v.region.cols, 9);
    assert_eq!(h.region.rows, 9);
}

#[test]
fn bad_object_sources_rejected() {
    let bars = ObjectSource::Bars {
        period: 4,
        bar_amplitude: 1.5,
    };
    assert!(make_object(&bars, 96, 96, PITCH_HI, LAMBDA).is_err());
    let img = ObjectSource::PhaseImage {
        path: "/nonexistent.pgm".into(),
        phase_range: 7.0,
    };
    assert!(make_object(&img, 8, 8, PITCH_HI, LAMBDA).is_err());
}

#[test]
fn image_sources_map_to_unit_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pgm");
    let px = Array2::from_shape_fn((4, 4), |(r, c)| ((r * 4 + c) * 17) as u8);
    std::fs::write(&path, dataset::encode_pgm8(&px)).unwrap();
    let amp = make_object(&ObjectSource::AmplitudeImage { path: path.clone() }, 4, 4, PITCH_HI, LAMBDA).unwrap();
    assert!((amp.data()[[3, 3]].re - 1.0).abs() < 1e-12);
    assert_eq!(amp.data()[[0, 0]].re, 0.0);
    let ph = make_object(&ObjectSource::PhaseImage { path: path.clone(), phase_range: 2.0 }, 4, 4, PITCH_HI, LAMBDA).unwrap();
    assert!((ph.data()[[3, 3]].arg() - 2.0).abs() < 1e-12);
    assert!(make_object(&ObjectSource::AmplitudeImage { path }, 5, 5, PITCH_HI, LAMBDA).is_err());
}

#[test]
fn flat_diffuser_gives_plane_wave() {
    let spec = DiffuserSpec {
        phase_depth_rad: 0.0,
        ..DiffuserSpec::default()
    };
    let p = make_speckle(&spec, 48, 48, PITCH_HI, LAMBDA).unwrap();
    let first = p.data()[[0, 0]].norm();
    assert!(p.data().iter().all(|v| (v.norm() - first).abs() < 1e-10));
}

#[test]
fn speckle_is_seed_deterministic() {
    let spec = DiffuserSpec::default();
    let a = make_speckle(&spec, 48, 48, PITCH_HI, LAMBDA).unwrap();
    let b = make_speckle(&spec, 48, 48, PITCH_HI, LAMBDA).unwrap();
    assert_eq!(a, b);
    let c = make_speckle(&DiffuserSpec { seed: 2, ..spec }, 48, 48, PITCH_HI, LAMBDA).unwrap();
    assert_ne!(a, c);
}

#[test]
fn speckle_rejects_sub_pitch_features() {
    let spec = DiffuserSpec {
        feature_size_um: 0.1,
        ..DiffuserSpec::default()
    };
    assert!(make_speckle(&spec, 16, 16, PITCH_HI, LAMBDA).is_err());
}

/// Fully developed speckle has unit intensity contrast; averaged over ten
/// independent screens the simulator must land close to it.
#[test]
fn deep_diffuser_gives_developed_speckle() {
    let mut contrasts = Vec::new();
    for seed in 0..10 {
        let spec = DiffuserSpec {
            seed,
            feature_size_um: 5.0,
            phase_depth_rad: TAU,
            distance_um: 3000.0,
        };
        let p = make_speckle(&spec, 192, 192, PITCH_HI, LAMBDA).unwrap();
        let i = p.intensity();
        let mean = i.mean().unwrap();
        let var = i.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        contrasts.push(var.sqrt() / mean);
    }
    let c = contrasts.iter().sum::<f64>() / contrasts.len() as f64;
    assert!((0.7..=1.1).contains(&c), "speckle contrast {c}");
}

#[test]
fn single_frame_trajectory() {
    let spec = TrajectorySpec {
        frames: 1,
        ..TrajectorySpec::default()
    };
    assert_eq!(make_trajectory(&spec, 16.0).unwrap().shifts, vec![[0.0, 0.0]]);
}

#[test]
fn random_walk_steps_stay_in_band() {
    let spec = TrajectorySpec {
        frames: 100,
        mean_step: 2.5,
        jitter: 0.2,
        ..TrajectorySpec::default()
    };
    let t = make_trajectory(&spec, 16.0).unwrap();
    assert_eq!(t.len(), 100);
    assert_eq!(t.shifts[0], [0.0, 0.0]);
    for w in t.shifts.windows(2) {
        let step = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        assert!((2.0 * 0.8..=3.0 * 1.2).contains(&step), "step {step}");
    }
    assert!(t.shifts.iter().flatten().all(|v| v.abs() <= 16.0));
    assert_eq!(make_trajectory(&spec, 16.0).unwrap(), t);
}

#[test]
fn raster_trajectory_fits_margin() {
    let spec = TrajectorySpec {
        frames: 9,
        pattern: ScanPattern::RasterWithJitter,
        ..TrajectorySpec::default()
    };
    let t = make_trajectory(&spec, 16.0).unwrap();
    assert_eq!(t.len(), 9);
    assert!(t.shifts.iter().flatten().all(|v| v.abs() <= 16.0));
    let big = TrajectorySpec { frames: 400, ..spec };
    assert!(make_trajectory(&big, 16.0).is_err());
}

#[test]
fn trajectory_rejects_oversized_steps() {
    let spec = TrajectorySpec {
        mean_step: 10.0,
        ..TrajectorySpec::default()
    };
    assert!(make_trajectory(&spec, 4.0).is_err());
}

#[test]
fn zero_object_gives_dark_frame() {
    let o = ComplexField::constant(24, 24, Complex64::new(0.0, 0.0), PITCH_HI, LAMBDA).unwrap();
    let p = make_speckle(&DiffuserSpec::default(), 24, 24, PITCH_HI, LAMBDA).unwrap();
    let f = forward_frame(&o, &p, [1.0, 2.0], 500.0, 3).unwrap();
    assert_eq!(f.dim(), (8, 8));
    assert!(f.iter().all(|v| *v == 0.0));
}

#[test]
fn plane_wave_frame_is_flat() {
    let o = ComplexField::constant(24, 24, Complex64::new(1.0, 0.0), PITCH_HI, LAMBDA).unwrap();
    let p = ComplexField::constant(24, 24, Complex64::new(0.0, 1.5), PITCH_HI, LAMBDA).unwrap();
    for d in [0.0, 250.0, 500.0] {
        let f = forward_frame(&o, &p, [0.7, -1.3], d, 3).unwrap();
        assert!(f.iter().all(|v| (v - 2.25).abs() < 1e-12));
    }
}

#[test]
fn forward_frame_rejects_grid_mismatch() {
    let o = ComplexField::constant(24, 24, Complex64::new(1.0, 0.0), PITCH_HI, LAMBDA).unwrap();
    let p = ComplexField::constant(21, 21, Complex64::new(1.0, 0.0), PITCH_HI, LAMBDA).unwrap();
    assert!(forward_frame(&o, &p, [0.0, 0.0], 500.0, 3).is_err());
    assert!(forward_frame(&o, &o, [0.0, 0.0], 500.0, 5).is_err());
}

/// Direct double sum over all samples and all frequencies; shares nothing
/// with the FFT path except the physical constants.
fn direct_forward(object: &ComplexField, probe: &ComplexField, shift: (i64, i64), d: f64, s: usize) -> Array2<f64> {
    let (n_r, n_c) = object.dim();
    let pitch = object.pitch();
    let lambda = object.wavelength();
    let exit = Array2::from_shape_fn((n_r, n_c), |(r, c)| {
        let pr = (r as i64 - shift.1).rem_euclid(n_r as i64) as usize;
        let pc = (c as i64 - shift.0).rem_euclid(n_c as i64) as usize;
        object.data()[[r, c]] * probe.data()[[pr, pc]]
    });
    let signed = |k: usize, n: usize| if 2 * k < n { k as f64 } else { k as f64 - n as f64 };
    let mut spectrum = Array2::<Complex64>::zeros((n_r, n_c));
    for kr in 0..n_r {
        for kc in 0..n_c {
            let mut acc = Complex64::new(0.0, 0.0);
            for ((r, c), v) in exit.indexed_iter() {
                let ph = -TAU * (kr as f64 * r as f64 / n_r as f64 + kc as f64 * c as f64 / n_c as f64);
                acc += v * Complex64::from_polar(1.0, ph);
            }
            let fy = signed(kr, n_r) / (n_r as f64 * pitch);
            let fx = signed(kc, n_c) / (n_c as f64 * pitch);
            let arg = 1.0 / (lambda * lambda) - fx * fx - fy * fy;
            let h = if arg >= 0.0 {
                Complex64::from_polar(1.0, TAU * d * arg.sqrt())
            } else {
                Complex64::new(0.0, 0.0)
            };
            spectrum[[kr, kc]] = acc * h;
        }
    }
    Array2::from_shape_fn((n_r / s, n_c / s), |(m, n)| {
        let (r, c) = (m * s, n * s);
        let mut acc = Complex64::new(0.0, 0.0);
        for ((kr, kc), v) in spectrum.indexed_iter() {
            let ph = TAU * (kr as f64 * r as f64 / n_r as f64 + kc as f64 * c as f64 / n_c as f64);
            acc += v * Complex64::from_polar(1.0, ph);
        }
        (acc / (n_r * n_c) as f64).norm_sqr()
    })
}

#[test]
fn forward_frame_matches_direct_sum() {
    let n = 24;
    let o = make_object(
        &ObjectSource::Cells {
            seed: 4,
            radius_um: 1.5,
            fill: 0.3,
            amplitude: 0.5,
            phase: 0.8,
        },
        n,
        n,
        PITCH_HI,
        LAMBDA,
    )
    .unwrap();
    let p = make_speckle(&DiffuserSpec::default(), n, n, PITCH_HI, LAMBDA).unwrap();
    let shift = [1.4, -0.6];
    let fast = forward_frame(&o, &p, shift, 500.0, 3).unwrap();
    let slow = direct_forward(&o, &p, (4, -2), 500.0, 3);
    let num: f64 = (&fast - &slow).iter().map(|v| v * v).sum();
    let den: f64 = slow.iter().map(|v| v * v).sum();
    assert!((num / den).sqrt() < 1e-8, "relative error {}", (num / den).sqrt());
}

#[test]
fn unit_object_conserves_probe_energy() {
    let n = 48;
    let o = ComplexField::constant(n, n, Complex64::new(1.0, 0.0), PITCH_HI, LAMBDA).unwrap();
    let p = make_speckle(&DiffuserSpec::default(), n, n, PITCH_HI, LAMBDA).unwrap();
    let frame = forward_frame(&o, &p, [2.0, 1.0], 500.0, 1).unwrap();
    let mean_frame = frame.mean().unwrap();
    let mean_probe = p.intensity().mean().unwrap();
    assert!((mean_frame - mean_probe).abs() < 1e-6);
}

#[test]
fn noise_free_model_is_identity() {
    let frames = vec![Array2::from_elem((4, 4), 3.0)];
    assert_eq!(add_noise(&frames, &NoiseModel::default()).unwrap(), frames);
    let dark = vec![Array2::zeros((4, 4))];
    let model = NoiseModel {
        photons: Some(100.0),
        ..NoiseModel::default()
    };
    assert_eq!(add_noise(&dark, &model).unwrap(), dark);
}

#[test]
fn poisson_noise_has_expected_spread() {
    let frames = vec![Array2::from_elem((128, 128), 2.0)];
    let model = NoiseModel {
        photons: Some(1e4),
        read_sigma: 0.0,
        seed: 9,
    };
    let noisy = add_noise(&frames, &model).unwrap();
    let mean = noisy[0].mean().unwrap();
    let std = noisy[0].mapv(|v| (v - mean).powi(2)).mean().unwrap().sqrt();
    let rel = std / mean;
    assert!((rel - 0.01).abs() < 0.002, "relative std {rel}");
    assert_eq!(add_noise(&frames, &model).unwrap(), noisy);
}

#[test]
fn noise_rejects_bad_parameters() {
    let frames = vec![Array2::from_elem((2, 2), 1.0)];
    let model = NoiseModel {
        photons: Some(0.0),
        ..NoiseModel::default()
    };
    assert!(add_noise(&frames, &model).is_err());
}

#[test]
fn simulation_is_deterministic_and_order_free() {
    let cfg = small_config(6);
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    assert_eq!(a.stack, b.stack);
    assert_eq!(a.truth, b.truth);
    for j in 0..6 {
        let single = forward_frame(&a.truth.object, &a.truth.probe, a.truth.trajectory.shifts[j], 500.0, 3).unwrap();
        assert_eq!(single, a.stack.frames[j]);
    }
}

#[test]
fn default_dataset_metadata() {
    let cfg = small_config(2);
    let sim = simulate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &sim.stack, 3, Some(&sim.truth)).unwrap();
    assert_eq!(manifest.wavelength_um, 0.532);
    assert_eq!(manifest.detector_pitch_um, 1.67);
    assert_eq!(manifest.nominal_distance_um, 500.0);
    assert_eq!(manifest.frame_size, 32);
    let truth = dataset::read_truth(&dataset::truth_dir(dir.path()), PITCH_HI, LAMBDA).unwrap();
    assert_eq!(truth.object.data(), sim.truth.object.data());
    assert_eq!(truth.trajectory.shifts, sim.truth.trajectory.shifts);
}
