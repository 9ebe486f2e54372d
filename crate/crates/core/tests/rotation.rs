use gesturekit::rotation::*;
use proptest::prelude::*;

fn gap(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    (a.matrix() - b.matrix()).amax()
}

proptest! {
    #[test]
    fn representations_round_trip(v in prop::array::uniform3(-3.0f64..3.0)) {
        let r = rotation_vector_to_matrix(v);
        prop_assert!(r.orthonormality_error() < 1e-12);
        let via6d = matrix_from_rot6d(&rot6d_from_matrix(&r).unwrap()).unwrap();
        prop_assert!(gap(&r, &via6d) < 1e-12);
        prop_assert!(gap(&r, &axis_angle_to_matrix(&matrix_to_axis_angle(&r))) < 1e-9);
        prop_assert!(gap(&r, &rotation_vector_to_matrix(matrix_to_rotation_vector(&r))) < 1e-9);
    }

    #[test]
    fn geodesic_is_symmetric_and_bounded(a in prop::array::uniform3(-3.0f64..3.0), b in prop::array::uniform3(-3.0f64..3.0)) {
        let (ra, rb) = (rotation_vector_to_matrix(a), rotation_vector_to_matrix(b));
        let d = geodesic_distance(&ra, &rb);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&d));
        prop_assert!((d - geodesic_distance(&rb, &ra)).abs() < 1e-12);
        prop_assert!(geodesic_distance(&ra, &ra) < 1e-6);
    }
}

#[test]
fn half_turns_survive_axis_angle() {
    for axis in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.6, 0.0, -0.8]] {
        let r = axis_angle_to_matrix(&AxisAngle { axis, angle: std::f64::consts::PI });
        let aa = matrix_to_axis_angle(&r);
        assert!((aa.angle - std::f64::consts::PI).abs() < 1e-9);
        assert!(gap(&r, &axis_angle_to_matrix(&aa)) < 1e-9);
    }
}
