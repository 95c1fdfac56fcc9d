use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refpts_core::geometry::{GeometryError, Point3, Size3, TransformSE3, Velocity2};

type M4 = [[f64; 4]; 4];

fn random_transform(rng: &mut ChaCha8Rng) -> TransformSE3 {
    let axis: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt().max(1e-9);
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let scaled = axis.map(|a| a / norm * angle);
    let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-200.0..200.0));
    TransformSE3::from_scaled_axis(scaled, t)
}

fn homogeneous(rows: [[f64; 3]; 3], t: [f64; 3]) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&rows[i]);
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

fn matmul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn apply(m: &M4, p: &Point3) -> [f64; 3] {
    let v = [p.x, p.y, p.z, 1.0];
    std::array::from_fn(|i| (0..4).map(|k| m[i][k] * v[k]).sum())
}

/// Rodrigues' formula, written out.
fn rodrigues(axis_angle: [f64; 3]) -> [[f64; 3]; 3] {
    let theta = (axis_angle.iter().map(|a| a * a).sum::<f64>()).sqrt();
    if theta == 0.0 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let [x, y, z] = axis_angle.map(|a| a / theta);
    let (s, c) = theta.sin_cos();
    let k = 1.0 - c;
    [
        [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
        [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
        [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
    ]
}

fn max_diff4(a: &M4, b: &M4) -> f64 {
    (0..4)
        .flat_map(|i| (0..4).map(move |j| (a[i][j] - b[i][j]).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn scaled_axis_matches_rodrigues() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let aa: [f64; 3] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let t = TransformSE3::from_scaled_axis(aa, [0.0; 3]);
        let oracle = rodrigues(aa);
        let rows = t.rotation_rows();
        for i in 0..3 {
            for j in 0..3 {
                assert!((rows[i][j] - oracle[i][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn compose_matches_homogeneous_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let a = random_transform(&mut rng);
        let b = random_transform(&mut rng);
        let ha = homogeneous(a.rotation_rows(), a.translation_array());
        let hb = homogeneous(b.rotation_rows(), b.translation_array());
        let ab = a.compose(&b);
        assert!(max_diff4(&ab.to_homogeneous(), &matmul(&ha, &hb)) < 1e-9);
    }
}

#[test]
fn transform_point_matches_homogeneous_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let t = random_transform(&mut rng);
        let p = Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0));
        let q = t.transform_point(&p);
        let o = apply(&homogeneous(t.rotation_rows(), t.translation_array()), &p);
        assert!((q.x - o[0]).abs() < 1e-9 && (q.y - o[1]).abs() < 1e-9 && (q.z - o[2]).abs() < 1e-9);
    }
}

#[test]
fn inverse_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let t = random_transform(&mut rng);
        let p = Point3::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-10.0..10.0));
        let back = t.inverse().transform_point(&t.transform_point(&p));
        assert!(back.distance(&p) < 1e-8, "round trip error {}", back.distance(&p));
        assert!(t.compose(&t.inverse()).max_abs_diff(&TransformSE3::identity()) < 1e-9);
    }
}

#[test]
fn velocity_rotates_without_translation() {
    let t = TransformSE3::from_yaw(std::f64::consts::FRAC_PI_2, 100.0, -40.0, 3.0);
    let v = t.transform_velocity(&Velocity2::new(2.0, 0.0));
    assert!(v.vx.abs() < 1e-12 && (v.vy - 2.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let yaw = rng.random_range(-3.0..3.0);
        let t = TransformSE3::from_yaw(yaw, rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), 0.0);
        let v = Velocity2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let r = t.transform_velocity(&v);
        assert!((r.norm() - v.norm()).abs() < 1e-9);
        let (s, c) = yaw.sin_cos();
        assert!((r.vx - (c * v.vx - s * v.vy)).abs() < 1e-9);
        assert!((r.vy - (s * v.vx + c * v.vy)).abs() < 1e-9);
    }
}

#[test]
fn size_is_invariant() {
    let s = Size3::new(4.5, 1.9, 1.6).unwrap();
    let t = TransformSE3::from_scaled_axis([0.3, -0.2, 1.1], [5.0, 6.0, 7.0]);
    assert_eq!(t.transform_size(&s), s);
}

#[test]
fn reflections_and_skew_are_rejected() {
    let mirror = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
    assert!(matches!(TransformSE3::new(mirror, [0.0; 3]), Err(GeometryError::Reflection(_))));
    let skew = [[1.0, 0.2, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert!(matches!(TransformSE3::new(skew, [0.0; 3]), Err(GeometryError::NotOrthonormal { .. })));
    let nan = [[f64::NAN, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert!(matches!(TransformSE3::new(nan, [0.0; 3]), Err(GeometryError::NonFinite(_))));
}

#[test]
fn near_rotations_are_projected_back() {
    let mut rows = rodrigues([0.1, 0.4, -0.7]);
    rows[0][1] += 2e-6;
    let t = TransformSE3::new(rows, [1.0, 2.0, 3.0]).unwrap();
    let r = t.rotation_rows();
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((dot - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn serde_round_trip_is_exact() {
    let t = TransformSE3::from_scaled_axis([0.123, -0.456, 0.789], [1.0 / 3.0, -2.5, 1e-7]);
    let json = serde_json::to_string(&t).unwrap();
    let back: TransformSE3 = serde_json::from_str(&json).unwrap();
    assert_eq!(back.max_abs_diff(&t), 0.0);
}
