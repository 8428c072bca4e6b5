use implicit_scene::geometry::Vec3;
use implicit_scene::ldif::{ElementDecoder, GaussianElement, LdifShape, ObjectPose, ShapeField};
use implicit_scene::mesher::{
    chamfer_icp, extract_shape, extract_world_shape, marching_cubes, watertight_check, ChamferConfig, GridSpec,
};
use proptest::prelude::*;

fn random_shape(seed: u64) -> LdifShape {
    let mut s = LdifShape::empty();
    let mut x = seed;
    let mut next = move || {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (x >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..3 {
        let i = (next() * 32.0) as usize;
        s.elements[i] = GaussianElement {
            c: -0.5 - next(),
            center: Vec3::new(next() - 0.5, next() - 0.5, next() - 0.5) * 0.6,
            radii: Vec3::new(0.1 + 0.2 * next(), 0.1 + 0.2 * next(), 0.1 + 0.2 * next()),
            euler: Vec3::new(next(), next(), next()),
        };
    }
    s
}

#[test]
fn vertex_count_grows_with_resolution() {
    let field = |p: &Vec3| p.norm() - 0.6;
    let mut last = 0;
    for res in [8, 16, 32, 64] {
        let m = marching_cubes(&field, &GridSpec::cube(res), 0.0).unwrap();
        assert!(m.vertices.len() > last, "resolution {res}");
        last = m.vertices.len();
    }
}

#[test]
fn sphere_volume_converges() {
    let m = marching_cubes(&|p: &Vec3| p.norm() - 0.6, &GridSpec::cube(96), 0.0).unwrap();
    let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.6f64.powi(3);
    assert!((m.signed_volume() - exact).abs() / exact < 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_shapes_mesh_watertight(seed in 0u64..10_000, res in 12usize..40) {
        let f = ShapeField::new(&random_shape(seed), &ElementDecoder::seeded(seed));
        let m = extract_shape(&f, &GridSpec::cube(res)).unwrap();
        if !m.is_empty() {
            prop_assert!(watertight_check(&m).passed);
            prop_assert!(m.signed_volume() > 0.0);
        }
    }
}

#[test]
fn world_meshes_follow_the_pose() {
    let f = ShapeField::new(&random_shape(3), &ElementDecoder::zeroed());
    let grid = GridSpec::cube(24);
    let local = extract_shape(&f, &grid).unwrap();
    let pose = ObjectPose {
        translation: Vec3::new(2.0, -0.5, 1.0),
        scale: Vec3::new(0.5, 0.8, 1.2),
        yaw: 0.7,
    };
    let world = extract_world_shape(&f, &pose, &grid).unwrap();
    assert_eq!(world.triangles, local.triangles);
    for (w, l) in world.vertices.iter().zip(&local.vertices) {
        assert!((pose.to_object(w) - l).norm() < 1e-12);
    }
    let det = pose.scale.x * pose.scale.y * pose.scale.z;
    assert!((world.signed_volume() - det * local.signed_volume()).abs() < 1e-9);
}

#[test]
fn written_meshes_parse_back() {
    let m = marching_cubes(&|p: &Vec3| p.norm() - 0.5, &GridSpec::cube(12), 0.0).unwrap();
    let mut obj = Vec::new();
    m.write_obj(&mut obj).unwrap();
    let text = String::from_utf8(obj).unwrap();
    let v = text.lines().filter(|l| l.starts_with("v ")).count();
    let f = text.lines().filter(|l| l.starts_with("f ")).count();
    assert_eq!((v, f), (m.vertices.len(), m.triangles.len()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ply");
    let mut file = std::fs::File::create(&path).unwrap();
    m.write_ply(&mut file).unwrap();
    drop(file);
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"ply\nformat binary_little_endian 1.0\n"));
}

#[test]
fn chamfer_is_seed_reproducible() {
    let a = marching_cubes(&|p: &Vec3| p.norm() - 0.5, &GridSpec::cube(20), 0.0).unwrap();
    let b = marching_cubes(&|p: &Vec3| (p - Vec3::new(0.05, 0.0, 0.0)).norm() - 0.45, &GridSpec::cube(20), 0.0).unwrap();
    let c = ChamferConfig {
        samples: 2000,
        align: false,
        seed: 9,
    };
    let x = chamfer_icp(&a, &b, &c).unwrap();
    assert_eq!(x, chamfer_icp(&a, &b, &c).unwrap());
    assert!(x.distance > 0.0);
}
