use implicit_scene::fit::{chamfer_to_target, fit_shape, FitConfig, SdfTarget, Sphere};
use implicit_scene::ldif::{ElementDecoder, CODE_WIDTH, SYMMETRIC_COUNT};

fn quick() -> FitConfig {
    FitConfig {
        steps: 150,
        near_samples: 256,
        uniform_samples: 256,
        ..FitConfig::default()
    }
}

#[test]
fn fitting_a_sphere_lowers_loss_and_chamfer() {
    let target = Sphere {
        center: [0.0, 0.1, 0.0],
        radius: 0.45,
    };
    let decoder = ElementDecoder::seeded(2);
    let r = fit_shape(&target, &decoder, &quick()).unwrap();
    assert!(r.best_loss < 0.5 * r.initial_loss, "{} vs {}", r.best_loss, r.initial_loss);
    let c0 = chamfer_to_target(&r.initial_shape, &decoder, &target, 32, 1.0, 2000, 0).unwrap();
    let c1 = chamfer_to_target(&r.shape, &decoder, &target, 32, 1.0, 2000, 0).unwrap();
    assert!(c1 < c0, "{c1} vs {c0}");
}

#[test]
fn fitting_is_deterministic_and_respects_the_code_constraints() {
    let target = Sphere {
        center: [0.0; 3],
        radius: 0.5,
    };
    let decoder = ElementDecoder::seeded(1);
    let a = fit_shape(&target, &decoder, &quick()).unwrap();
    let b = fit_shape(&target, &decoder, &quick()).unwrap();
    assert_eq!(a.shape, b.shape);
    assert_eq!(a.log, b.log);
    let code = a.shape.pack();
    let init = a.initial_shape.pack();
    for (i, (row, row0)) in code.chunks(CODE_WIDTH).zip(init.chunks(CODE_WIDTH)).enumerate() {
        assert!(row[0] <= 0.0, "element {i}");
        if row0[0] == 0.0 {
            assert_eq!(row[0], 0.0, "inactive element {i} switched on");
        }
        if row0[0] != 0.0 {
            assert!(row[4..7].iter().all(|&r| r >= 0.01), "element {i}");
        }
        if i < SYMMETRIC_COUNT && row0[0] != 0.0 {
            assert!(row0[1] >= 0.0, "mirrored element {i} starts at x < 0");
        }
    }
}

#[test]
fn sphere_target_is_signed() {
    let s = Sphere {
        center: [0.2, 0.0, 0.0],
        radius: 0.3,
    };
    assert!(s.distance(&[0.2, 0.0, 0.0].into()) < 0.0);
    assert!(s.distance(&[0.9, 0.0, 0.0].into()) > 0.0);
}
