use super::*;
use crate::features::{FastBriefBackend, FeatureBackend};
use crate::geometry::{
    corner_rms_error, exp_sl3, normalize_det, sl3_generator_combination, warp_generator_derivatives, LieAlgebraVector,
};
use crate::image_ops::build_pyramid;
use crate::synth::{textured_scene, warp_image};

/// Backend that never finds anything.
struct NoFeatures;

impl FeatureBackend for NoFeatures {
    fn detect_and_describe(&self, _: &GrayImage, _: Option<&Rect>) -> Vec<Feature> {
        Vec::new()
    }

    fn patch_radius(&self) -> f64 {
        15.0
    }
}

fn scene() -> GrayImage {
    textured_scene(320, 240, 17)
}

fn region() -> TemplateRegion {
    TemplateRegion::new(110, 70, 100, 100)
}

fn small_warp() -> HomographyMatrix {
    HomographyMatrix::from_lie(&LieAlgebraVector::from_slice(&[3.2, -2.1, 0.02, 0.01, -0.015, 0.01, 2e-5, -1e-5]))
}

fn generator_step(k: usize, t: f64) -> HomographyMatrix {
    let mut v = [0.0; SL3_DIM];
    v[k] = t;
    exp_sl3(&sl3_generator_combination(&LieAlgebraVector::from_slice(&v))).unwrap()
}

/// Relative Frobenius error between a Jacobian column and its central
/// finite-difference estimate, for each of the ten columns.
fn ib_fd_errors(level: usize) -> Vec<f64> {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 2, None).unwrap();
    let current = warp_image(&reference, &small_warp(), 320, 240, 0.0);
    let pyr = build_pyramid(&current, 2).unwrap();
    let est = Estimate {
        homography: HomographyMatrix::from_lie(&LieAlgebraVector::from_slice(&[
            2.0, -1.0, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0,
        ])),
        photometric: PhotometricParams::new(1.1, 4.0),
    };
    let run = |e: &Estimate| {
        ib_residuals_and_jacobian(tpl.level(level), level, pyr.level(level), e, JacobianKind::FirstOrder, 0.1).unwrap()
    };
    let base = run(&est);
    let full_pts: Vec<_> = region().pixels().collect();
    let mut errors = Vec::new();
    for k in 0..PARAMS {
        // Step sized so that no pixel moves by more than 1e-8 px.
        let t = if k < SL3_DIM {
            let reach = full_pts
                .iter()
                .map(|p| {
                    let q = crate::geometry::warp_point(&est.homography, *p).unwrap();
                    let d = warp_generator_derivatives(q)[k];
                    d[0].hypot(d[1])
                })
                .fold(0.0, f64::max);
            1e-8 / reach
        } else {
            1e-6
        };
        let shifted = |sign: f64| {
            let mut e = est;
            if k < SL3_DIM {
                e.homography =
                    HomographyMatrix::from_matrix(generator_step(k, sign * t).matrix() * est.homography.matrix());
            } else if k == SL3_DIM {
                e.photometric.alpha += sign * t;
            } else {
                e.photometric.beta += sign * t;
            }
            run(&e)
        };
        let (plus, minus) = (shifted(1.0), shifted(-1.0));
        assert_eq!(plus.len(), base.len());
        assert_eq!(minus.len(), base.len());
        let (mut diff, mut norm) = (0.0, 0.0);
        for i in 0..base.len() {
            let fd = (plus.residuals[i] - minus.residuals[i]) / (2.0 * t);
            diff += (fd - base.jacobian[i][k]).powi(2);
            norm += base.jacobian[i][k].powi(2);
        }
        errors.push((diff / norm).sqrt());
    }
    errors
}

#[test]
fn intensity_jacobian_matches_finite_differences() {
    for level in [0, 1] {
        for (k, e) in ib_fd_errors(level).iter().enumerate() {
            assert!(*e < 1e-3, "level {level} column {k}: {e}");
        }
    }
}

#[test]
fn feature_jacobian_matches_finite_differences() {
    let h = small_warp();
    let matches: Vec<FeatureMatch> = [(120.0, 80.0), (200.0, 90.0), (150.0, 160.0), (205.0, 165.0)]
        .iter()
        .map(|&(u, v)| FeatureMatch {
            q_star: PixelPoint::new(u, v),
            q: PixelPoint::new(u + 1.0, v - 2.0),
            distance: 0.0,
        })
        .collect();
    let est = Estimate::new(h);
    for level in [0, 2] {
        let base = fb_residuals_and_jacobian(&matches, level, &est, None);
        for k in 0..SL3_DIM {
            let t = 1e-7;
            let at = |s: f64| {
                let e = Estimate::new(HomographyMatrix::from_matrix(generator_step(k, s * t).matrix() * h.matrix()));
                fb_residuals_and_jacobian(&matches, level, &e, None)
            };
            let (p, m) = (at(1.0), at(-1.0));
            for i in 0..base.len() {
                let fd = (p.residuals[i] - m.residuals[i]) / (2.0 * t);
                let j = base.jacobian[i][k];
                assert!((fd - j).abs() <= 1e-5 * (1.0 + j.abs()), "level {level} k {k}: {fd} vs {j}");
            }
            assert!(base.jacobian.iter().all(|r| r[SL3_DIM] == 0.0 && r[SL3_DIM + 1] == 0.0));
        }
    }
}

#[test]
fn feature_residuals_scale_with_level_and_huber() {
    let m = [FeatureMatch { q_star: PixelPoint::new(10.0, 10.0), q: PixelPoint::new(16.0, 18.0), distance: 0.0 }];
    let est = Estimate::default();
    let s0 = fb_residuals_and_jacobian(&m, 0, &est, None);
    assert_eq!(s0.residuals, vec![-6.0, -8.0]);
    let s1 = fb_residuals_and_jacobian(&m, 1, &est, None);
    assert_eq!(s1.residuals, vec![-3.0, -4.0]);
    let h = fb_residuals_and_jacobian(&m, 0, &est, Some(2.5));
    let f = (2.5f64 / 10.0).sqrt();
    assert!((h.residuals[0] + 6.0 * f).abs() < 1e-12);
}

#[test]
fn exact_alignment_is_a_fixed_point() {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, None).unwrap();
    let pyr = build_pyramid(&reference, 3).unwrap();
    let est = Estimate::default();
    for level in 0..3 {
        for kind in [JacobianKind::FirstOrder, JacobianKind::Esm] {
            let s = ib_residuals_and_jacobian(tpl.level(level), level, pyr.level(level), &est, kind, 0.1).unwrap();
            assert!(s.residuals.iter().all(|&r| r == 0.0));
            let z = assemble_and_solve(Some(&s), None, Weights::pure_ib(), 1e-4, true).unwrap();
            assert_eq!(z.norm(), 0.0);
        }
    }
    let cfg = SolverConfig { mode: SolverMode::IbOnly, predictor: false, ..Default::default() };
    let report = estimate(&tpl, &reference, est, &cfg, &NoFeatures).unwrap();
    assert!(report.converged);
    assert_eq!(report.estimate.homography, HomographyMatrix::identity());
    // Each level stops after its first (zero) step.
    let labels: Vec<_> = report.steps.iter().map(|s| s.label.as_str()).collect();
    assert_eq!(labels, ["1-1", "2-1", "3-1"]);
}

#[test]
fn template_leaving_the_image_is_reported() {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, None).unwrap();
    let cfg = SolverConfig { mode: SolverMode::IbOnly, predictor: false, ..Default::default() };
    let far = Estimate::new(HomographyMatrix::translation(900.0, 0.0));
    let report = estimate(&tpl, &reference, far, &cfg, &NoFeatures).unwrap();
    assert!(matches!(report.failure, Some(SolverFailure::TemplateLost { valid: 0, .. })));
    assert!(!report.converged);
    assert_eq!(report.estimate, far);
}

#[test]
fn unified_without_matches_equals_intensity_only() {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, None).unwrap();
    let current = warp_image(&reference, &small_warp(), 320, 240, 0.0);
    let ib_cfg = SolverConfig { mode: SolverMode::IbOnly, predictor: false, ..Default::default() };
    let unified_cfg = SolverConfig { mode: SolverMode::Unified, ..ib_cfg.clone() };
    let a = estimate(&tpl, &current, Estimate::default(), &ib_cfg, &NoFeatures).unwrap();
    let b = estimate(&tpl, &current, Estimate::default(), &unified_cfg, &NoFeatures).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.steps.len(), b.steps.len());
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.estimate, y.estimate);
        assert_eq!(y.weights, Some(Weights::pure_ib()));
    }
    assert_eq!(b.search, Some(SearchKind::Local));
    assert_eq!(b.matches, 0);
}

#[test]
fn recovers_warp_and_illumination() {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, None).unwrap();
    let truth = small_warp();
    let mut current = warp_image(&reference, &truth, 320, 240, 0.0);
    for v in current.data_mut() {
        *v = 1.2 * *v + 10.0;
    }
    let cfg =
        SolverConfig { mode: SolverMode::IbOnly, predictor: false, iterations_per_level: 10, ..Default::default() };
    let report = estimate(&tpl, &current, Estimate::default(), &cfg, &NoFeatures).unwrap();
    assert!(report.converged, "{:?}", report.failure);
    let rms = corner_rms_error(&report.estimate.homography, &truth, &region().corners()).unwrap();
    assert!(rms < 0.05, "corner rms {rms}");
    // The model maps current intensities onto the template. Bilinear
    // resampling softens the warped texture, which biases the gain a little.
    assert!((report.estimate.photometric.alpha - 1.0 / 1.2).abs() < 0.02);
    assert!((report.estimate.photometric.beta + 10.0 / 1.2).abs() < 2.5);
    assert!(!report.nonpositive_gain);
}

#[test]
fn inverted_contrast_is_flagged_not_prevented() {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, None).unwrap();
    let current = GrayImage::from_vec(320, 240, reference.data().iter().map(|v| 250.0 - v).collect());
    let cfg = SolverConfig { mode: SolverMode::IbOnly, photometric: true, predictor: false, ..Default::default() };
    let report = estimate(&tpl, &current, Estimate::default(), &cfg, &NoFeatures).unwrap();
    assert!(report.nonpositive_gain);
    assert!((report.estimate.photometric.alpha + 1.0).abs() < 1e-3, "{:?}", report.estimate.photometric);
    assert!((report.estimate.photometric.beta - 250.0).abs() < 0.1);
}

#[test]
fn feature_only_and_unified_modes_converge() {
    let reference = scene();
    let backend = FastBriefBackend::default();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, Some(&backend)).unwrap();
    assert!(tpl.features().len() >= 8);
    let truth = small_warp();
    let current = warp_image(&reference, &truth, 320, 240, 0.0);
    for mode in [SolverMode::FbOnly, SolverMode::Unified] {
        let cfg =
            SolverConfig { mode, photometric: mode == SolverMode::Unified, predictor: false, ..Default::default() };
        let report = estimate(&tpl, &current, Estimate::default(), &cfg, &backend).unwrap();
        assert!(report.failure.is_none(), "{mode:?}: {:?}", report.failure);
        assert!(report.matches >= 4);
        let rms = corner_rms_error(&report.estimate.homography, &truth, &region().corners()).unwrap();
        let bound = if mode == SolverMode::FbOnly { 1.0 } else { 0.1 };
        assert!(rms < bound, "{mode:?}: corner rms {rms}");
    }
}

#[test]
fn feature_only_without_matches_fails() {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, None).unwrap();
    let cfg = SolverConfig { mode: SolverMode::FbOnly, photometric: false, predictor: false, ..Default::default() };
    let report = estimate(&tpl, &reference, Estimate::default(), &cfg, &NoFeatures).unwrap();
    assert!(matches!(report.failure, Some(SolverFailure::NoFeatureMatches { .. })));
    assert!(!report.converged);
}

#[test]
fn predictor_and_global_steps_are_labelled() {
    let reference = scene();
    let backend = FastBriefBackend::default();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, Some(&backend)).unwrap();
    let truth = HomographyMatrix::translation(60.0, -45.0);
    let current = warp_image(&reference, &truth, 320, 240, 0.0);
    let cfg = SolverConfig { predictor_radius: 4, ..Default::default() };
    let report = estimate(&tpl, &current, Estimate::default(), &cfg, &backend).unwrap();
    assert_eq!(report.steps[0].label, "predictor");
    assert_eq!(report.steps[1].label, "global");
    assert!(report.used_global && report.used_predictor);
    assert_eq!(report.search, Some(SearchKind::Global));
    assert!(report.converged);
    let rms = corner_rms_error(&report.estimate.homography, &truth, &region().corners()).unwrap();
    assert!(rms < 0.1, "corner rms {rms}");
}

#[test]
fn invalid_configs_are_rejected() {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, None).unwrap();
    for cfg in [
        SolverConfig { levels: 0, ..Default::default() },
        SolverConfig { tau: 1.5, ..Default::default() },
        SolverConfig { damping: -1.0, ..Default::default() },
        SolverConfig { huber: Some(0.0), ..Default::default() },
    ] {
        assert!(matches!(
            estimate(&tpl, &reference, Estimate::default(), &cfg, &NoFeatures),
            Err(SolverError::InvalidConfig(_))
        ));
    }
}

#[test]
fn config_roundtrips_through_json() {
    let cfg = SolverConfig::default();
    let json = serde_json::to_string(&cfg).unwrap();
    assert!(json.contains("\"UNIFIED\""));
    assert_eq!(serde_json::from_str::<SolverConfig>(&json).unwrap(), cfg);
    let partial: SolverConfig = serde_json::from_str(r#"{"mode":"IB_ONLY"}"#).unwrap();
    assert_eq!(partial.mode, SolverMode::IbOnly);
    assert_eq!(partial.levels, 3);
}

#[test]
fn brighter_current_gives_constant_residual() {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 1, None).unwrap();
    let mut current = reference.clone();
    current.data_mut().iter_mut().for_each(|v| *v += 10.0);
    let s = ib_residuals_and_jacobian(tpl.level(0), 0, &current, &Estimate::default(), JacobianKind::Esm, 0.1).unwrap();
    assert_eq!(s.len(), 100 * 100);
    assert!(s.residuals.iter().all(|&r| r == 10.0));
    let mut darker = reference.clone();
    darker.data_mut().iter_mut().for_each(|v| *v -= 10.0);
    let s = ib_residuals_and_jacobian(tpl.level(0), 0, &darker, &Estimate::default(), JacobianKind::Esm, 0.1).unwrap();
    assert!(s.residuals.iter().all(|&r| r == -10.0));
}

#[test]
fn single_match_residual() {
    let m = [FeatureMatch { q_star: PixelPoint::new(0.0, 0.0), q: PixelPoint::new(3.0, 4.0), distance: 0.0 }];
    let s = fb_residuals_and_jacobian(&m, 0, &Estimate::default(), None);
    assert_eq!(s.residuals, vec![-3.0, -4.0]);
    assert!(fb_residuals_and_jacobian(&[], 0, &Estimate::default(), None).is_empty());
}

#[test]
fn one_pixel_shift_first_step() {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 1, None).unwrap();
    let current = warp_image(&reference, &HomographyMatrix::translation(1.0, 0.0), 320, 240, 0.0);
    let est = Estimate::default();
    let s = ib_residuals_and_jacobian(tpl.level(0), 0, &current, &est, JacobianKind::Esm, 0.1).unwrap();
    let z = assemble_and_solve(Some(&s), None, Weights::pure_ib(), 1e-4, false).unwrap();
    let t = z.v.0[0].hypot(z.v.0[1]);
    assert!((t - 1.0).abs() < 0.2, "translation {t}");
    let next = apply_update(&est, &z).unwrap();
    let s2 = ib_residuals_and_jacobian(tpl.level(0), 0, &current, &next, JacobianKind::Esm, 0.1).unwrap();
    assert!(s2.squared_norm() < s.squared_norm());
}

#[test]
fn feature_step_from_exact_matches() {
    let truth = small_warp();
    let corners = region().corners();
    let matches: Vec<FeatureMatch> = (0..8)
        .map(|k| {
            let p = PixelPoint::new(115.0 + 11.0 * k as f64, 75.0 + ((k * 37) % 90) as f64);
            FeatureMatch { q_star: p, q: crate::geometry::warp_point(&truth, p).unwrap(), distance: 0.0 }
        })
        .collect();
    let est = Estimate::default();
    let before = corner_rms_error(&est.homography, &truth, &corners).unwrap();
    let s = fb_residuals_and_jacobian(&matches, 0, &est, None);
    let z = assemble_and_solve(None, Some(&s), Weights::pure_fb(), 1e-4, false).unwrap();
    let after = corner_rms_error(&apply_update(&est, &z).unwrap().homography, &truth, &corners).unwrap();
    assert!(after <= 0.1 * before, "{before} -> {after}");
}

#[test]
fn update_algebra() {
    let est = Estimate::new(small_warp());
    let half = UpdateVector::from_slice(&[1.5, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let full = UpdateVector::from_slice(&[3.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let twice = apply_update(&apply_update(&est, &half).unwrap(), &half).unwrap();
    let once = apply_update(&est, &full).unwrap();
    assert!((twice.homography.matrix() - once.homography.matrix()).amax() < 1e-12);

    let z = UpdateVector::from_slice(&[0.4, 0.2, 0.01, -0.02, 0.005, 0.003, 1e-4, -2e-4, 0.05, 2.0]);
    let neg = UpdateVector { v: -z.v, photometric: PhotometricParams::new(-z.photometric.alpha, -z.photometric.beta) };
    let back = apply_update(&apply_update(&est, &z).unwrap(), &neg).unwrap();
    assert!((back.homography.matrix() - est.homography.matrix()).amax() < 1e-8);
    assert!((back.photometric.alpha - 1.0).abs() < 1e-15);

    // Two successive increments equal their left composition.
    let z2 = UpdateVector::from_slice(&[-0.1, 0.3, 0.0, 0.01, 0.0, -0.002, 0.0, 1e-4, -0.02, 1.0]);
    let stepped = apply_update(&apply_update(&est, &z).unwrap(), &z2).unwrap();
    let e1 = exp_sl3(&sl3_generator_combination(&z.v)).unwrap();
    let e2 = exp_sl3(&sl3_generator_combination(&z2.v)).unwrap();
    let composed =
        normalize_det(&HomographyMatrix::from_matrix(e2.matrix() * e1.matrix() * est.homography.matrix())).unwrap();
    assert!((stepped.homography.matrix() - composed.matrix()).amax() < 1e-9);
    assert!((stepped.photometric.beta - 3.0).abs() < 1e-12);
}

#[test]
fn predictor_recovers_small_integer_shift() {
    let reference = scene();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, None).unwrap();
    // (4, -2) level-2 pixels are (16, -8) at full resolution.
    let current = warp_image(&reference, &HomographyMatrix::translation(16.0, -8.0), 320, 240, 0.0);
    let pyr = build_pyramid(&current, 3).unwrap();
    let out = zncc_predictor(tpl.level(2), 2, pyr.level(2), &HomographyMatrix::identity(), 15);
    assert_eq!(out.displacement, (4, -2));
}

#[test]
fn policy_threshold_is_inclusive() {
    let reference = scene();
    let backend = FastBriefBackend::default();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, Some(&backend)).unwrap();
    let h = HomographyMatrix::translation(0.7, 0.3);
    let score = alignment_score(&tpl, &reference, &h).unwrap();
    let run = |tau: f64| {
        local_global_policy(&tpl, &reference, &h, tau, &backend, &MatcherConfig::default(), &RansacConfig::default())
            .kind
    };
    assert_eq!(run(score), SearchKind::Local);
    assert_eq!(run(score + 1e-12), SearchKind::Global);
}

#[test]
fn occluded_template_triggers_global_search() {
    let reference = scene();
    let backend = FastBriefBackend::default();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, Some(&backend)).unwrap();
    let mut current = reference.clone();
    for y in 60..180 {
        for x in 100..220 {
            current.set(x, y, 128.0 + if (x / 7 + y / 5) % 2 == 0 { 40.0 } else { -40.0 });
        }
    }
    let out = local_global_policy(
        &tpl,
        &current,
        &HomographyMatrix::identity(),
        0.6,
        &backend,
        &MatcherConfig::default(),
        &RansacConfig::default(),
    );
    assert_eq!(out.kind, SearchKind::Global);
}

#[test]
fn unperturbed_estimate_converges_immediately() {
    let reference = scene();
    let backend = FastBriefBackend::default();
    let tpl = ReferenceTemplate::new(&reference, region(), 3, Some(&backend)).unwrap();
    let report = estimate(&tpl, &reference, Estimate::default(), &SolverConfig::default(), &backend).unwrap();
    assert!(report.converged);
    let rms =
        corner_rms_error(&report.estimate.homography, &HomographyMatrix::identity(), &region().corners()).unwrap();
    assert!(rms < 1e-6, "{rms}");
    for s in report.steps.iter().filter(|s| s.step_norm.is_some()) {
        assert!(s.step_norm.unwrap() < 1e-8);
    }
}
