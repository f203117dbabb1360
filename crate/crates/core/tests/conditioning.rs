mod common;

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

use common::{random_head_trajectory, random_txy, rng, sequence};
use egokit::conditioning::{canonical_frame, canonical_frames, encode, encode_flat, ConditioningVariant};
use egokit::geometry::{PoseSE3, Rotation3};

use ConditioningVariant::*;

/// CPF orientation looking along world +y with world +z up.
fn facing_y() -> Rotation3 {
    Rotation3::try_from_matrix(Matrix3::from_columns(&[-Vector3::x(), Vector3::z(), Vector3::y()])).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn moved(g: &PoseSE3, traj: &[PoseSE3]) -> Vec<PoseSE3> {
    traj.iter().map(|p| g.compose(p)).collect()
}

/// Rot6D plus position, straight from the matrix entries.
fn features(r: &Matrix3<f64>, p: &Vector3<f64>) -> Vec<f64> {
    vec![r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)], p.x, p.y, p.z]
}

/// Step-by-step evaluation of the invariant parameterization on raw matrices.
fn egoallo_oracle(traj: &[PoseSE3]) -> Vec<f64> {
    let mut out = Vec::new();
    for t in 0..traj.len() {
        let r = *traj[t].rotation.matrix();
        let p = traj[t].position;
        let (dr, dp) = if t == 0 {
            (Matrix3::identity(), Vector3::zeros())
        } else {
            let rp = traj[t - 1].rotation.matrix().transpose();
            (rp * r, rp * (p - traj[t - 1].position))
        };
        out.extend(features(&dr, &dp));
        let v = r * Vector3::z();
        let theta = -v.x.atan2(v.y);
        let (s, c) = theta.sin_cos();
        let rc = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let origin = Vector3::new(p.x, p.y, 0.0);
        out.extend(features(&(rc.transpose() * r), &(rc.transpose() * (p - origin))));
    }
    out
}

#[test]
fn canonical_frame_examples() {
    let c = canonical_frame(&PoseSE3::new(facing_y(), Vector3::new(3.0, 4.0, 1.7))).unwrap();
    assert!(c.rotation.angle_to(&Rotation3::identity()) < 1e-15);
    assert_eq!(c.position, Vector3::new(3.0, 4.0, 0.0));

    let c = canonical_frame(&PoseSE3::new(Rotation3::rz(-FRAC_PI_2) * facing_y(), Vector3::zeros())).unwrap();
    assert!(c.rotation.angle_to(&Rotation3::rz(-FRAC_PI_2)) < 1e-12);
    assert!((c.rotation.column(1) - Vector3::x()).norm() < 1e-12);

    let pitched = Rotation3::rx(-FRAC_PI_6) * facing_y();
    assert!((pitched.column(2) - Vector3::new(0.0, FRAC_PI_6.cos(), -FRAC_PI_6.sin())).norm() < 1e-15);
    let c = canonical_frame(&PoseSE3::new(pitched, Vector3::new(-1.0, 2.0, 1.5))).unwrap();
    assert!(c.rotation.angle_to(&Rotation3::identity()) < 1e-15);
    assert_eq!(c.position, Vector3::new(-1.0, 2.0, 0.0));
}

#[test]
fn vertical_gaze_reuses_previous_heading() {
    let down = Rotation3::rx(-FRAC_PI_2) * facing_y();
    assert!(canonical_frame(&PoseSE3::new(down, Vector3::zeros())).is_none());
    let ahead = PoseSE3::new(Rotation3::rz(0.7) * facing_y(), Vector3::new(1.0, 0.0, 1.6));
    let frames = canonical_frames(&[ahead, PoseSE3::new(Rotation3::rz(0.7) * down, Vector3::new(1.0, 0.5, 1.6))]);
    assert!(frames[1].rotation.angle_to(&Rotation3::rz(0.7)) < 1e-12);
    assert_eq!(frames[1].position, Vector3::new(1.0, 0.5, 0.0));
    // At the first step the CPF up axis stands in for the gaze.
    let first = canonical_frames(&[PoseSE3::new(Rotation3::rz(0.7) * down, Vector3::zeros())]);
    assert!(first[0].rotation.column(1).dot(&(Rotation3::rz(0.7).apply(&Vector3::y()))) > 1.0 - 1e-12);
    assert!(encode(EgoAllo, &[PoseSE3::new(down, Vector3::zeros()); 3]).unwrap().iter().all(|c| c.features.iter().all(|v| v.is_finite())));
}

#[test]
fn static_trajectory_has_identity_deltas() {
    let traj = vec![PoseSE3::new(Rotation3::rz(0.3) * facing_y(), Vector3::new(1.0, 2.0, 1.6)); 10];
    let enc = encode(EgoAllo, &traj).unwrap();
    let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    for c in &enc {
        assert_eq!(c.features.len(), 18);
        assert!(max_diff(&c.features[..9], &identity) < 1e-15);
        assert!(max_diff(&c.features[9..], &enc[0].features[9..]) < 1e-15);
    }
}

#[test]
fn egoallo_matches_oracle_on_walking() {
    for index in 0..4 {
        let traj = sequence(index, 120).cpf_trajectory();
        let got = encode_flat(EgoAllo, &traj).unwrap();
        assert!(max_diff(&got, &egoallo_oracle(&traj)) < 1e-12, "sequence {index}");
    }
}

#[test]
fn floor_invariant_variants() {
    let mut r = rng(11);
    let traj = random_head_trajectory(&mut r, 40);
    for variant in [EgoAllo, SequenceCanonicalization] {
        let base = encode_flat(variant, &traj).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let g = random_txy(&mut r);
            worst = worst.max(max_diff(&base, &encode_flat(variant, &moved(&g, &traj)).unwrap()));
        }
        assert!(worst < 1e-9, "{variant}: {worst}");
    }
}

#[test]
fn absolute_variants_are_not_floor_invariant() {
    let traj = random_head_trajectory(&mut rng(12), 40);
    let g = PoseSE3::new(Rotation3::rz(FRAC_PI_2), Vector3::new(5.0, -3.0, 0.0));
    for variant in [Absolute, AbsoluteGlobalDeltas, AbsoluteLocalRelative] {
        let d = max_diff(&encode_flat(variant, &traj).unwrap(), &encode_flat(variant, &moved(&g, &traj)).unwrap());
        assert!(d > 0.1, "{variant}: {d}");
    }
    // World-frame deltas rotate with the trajectory; local ones do not.
    let world = encode(AbsoluteGlobalDeltas, &traj).unwrap();
    let world_moved = encode(AbsoluteGlobalDeltas, &moved(&g, &traj)).unwrap();
    assert!((1..40).map(|t| max_diff(&world[t].features[15..], &world_moved[t].features[15..])).fold(0.0, f64::max) > 1e-3);
    let local = encode(EgoAllo, &traj).unwrap();
    let local_moved = encode(EgoAllo, &moved(&g, &traj)).unwrap();
    assert!((0..40).all(|t| max_diff(&local[t].features[..9], &local_moved[t].features[..9]) < 1e-9));
}

#[test]
fn shift_equivariant_variants() {
    let traj = random_head_trajectory(&mut rng(13), 60);
    for variant in [EgoAllo, Absolute, AbsoluteLocalRelative, AbsoluteGlobalDeltas] {
        let full = encode(variant, &traj).unwrap();
        for shift in [1, 7, 20] {
            let sub = encode(variant, &traj[shift..]).unwrap();
            let first = if variant == Absolute { 0 } else { 1 };
            for t in first..sub.len() {
                assert!(max_diff(&sub[t].features, &full[t + shift].features) < 1e-9, "{variant} shift {shift} t {t}");
            }
        }
    }
}

#[test]
fn sequence_canonicalization_depends_on_window_start() {
    let traj = random_head_trajectory(&mut rng(14), 60);
    let full = encode(SequenceCanonicalization, &traj).unwrap();
    let sub = encode(SequenceCanonicalization, &traj[20..]).unwrap();
    let d = (0..sub.len()).map(|t| max_diff(&sub[t].features, &full[t + 20].features)).fold(0.0, f64::max);
    assert!(d > 0.1, "{d}");
}

#[test]
fn variant_metadata() {
    for v in ConditioningVariant::ALL {
        assert_eq!(ConditioningVariant::from_tag(v.tag()), Some(v));
        assert_eq!(v.name().parse::<ConditioningVariant>().unwrap(), v);
        let enc = encode(v, &random_head_trajectory(&mut rng(15), 5)).unwrap();
        assert!(enc.iter().all(|c| c.features.len() == v.feature_dim()));
        assert!(encode(v, &[]).is_err());
    }
    assert!("egoalo".parse::<ConditioningVariant>().is_err());
    assert_eq!(ConditioningVariant::from_tag(9), None);
}
