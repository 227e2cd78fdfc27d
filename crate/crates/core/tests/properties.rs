use anchor_retarget::character::{build_motion, forward_kinematics, Pose};
use anchor_retarget::io::{parse_bvh, write_bvh};
use anchor_retarget::math::{quat_from_6d, quat_to_6d, Quat, Vec3};
use anchor_retarget::projection::{soft_project, ProjectionParams};
use anchor_retarget::proximity::{direction_matrix, distance_matrix, ordering_matrix, weight_matrix, WeightParams};
use anchor_retarget::synthetic::{mannequin_skeleton, random_pose};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3() -> impl Strategy<Value = Vec3> {
    (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn quat() -> impl Strategy<Value = Quat> {
    (vec3(), 0.0..3.1f64).prop_filter_map("axis too short", |(a, angle)| {
        (a.norm() > 1e-3).then(|| Quat::from_scaled_axis(a.normalize() * angle))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_table_is_a_metric(points in prop::collection::vec(vec3(), 2..24)) {
        let d = distance_matrix(&points);
        let n = points.len();
        for i in 0..n {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(d.get(i, j), d.get(j, i));
                for k in 0..n {
                    prop_assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn weights_are_bounded_and_decreasing(
        points in prop::collection::vec(vec3(), 2..24),
        alpha in 0.5..10.0f64,
        d_min in 1.0..20.0f64,
        span in 1.0..50.0f64,
    ) {
        let d = distance_matrix(&points);
        let w = weight_matrix(&d, &WeightParams::new(alpha, d_min, d_min + span).unwrap());
        let n = points.len();
        for i in 0..n {
            for j in 0..n {
                let (wij, dij) = (w.get(i, j), d.get(i, j));
                prop_assert!(wij > 0.0 && wij <= 1.0);
                if dij <= d_min {
                    prop_assert_eq!(wij, 1.0);
                }
                for k in 0..n {
                    if d.get(i, k) > dij {
                        prop_assert!(w.get(i, k) <= wij);
                    }
                }
            }
        }
    }

    #[test]
    fn direction_and_ordering_agree(points in prop::collection::vec(vec3(), 2..16), rots in prop::collection::vec(quat(), 16)) {
        let frames: Vec<_> = points.iter().zip(&rots).map(|(_, q)| *q.to_rotation_matrix().matrix()).collect();
        let normals: Vec<Vec3> = frames.iter().map(|f| f.column(2).into()).collect();
        let dir = direction_matrix(&points, &frames).unwrap();
        let ord = ordering_matrix(&points, &normals).unwrap();
        let d = distance_matrix(&points);
        for i in 0..points.len() {
            for j in 0..points.len() {
                prop_assert!((dir.get(i, j)[2] - ord.get(i, j)).abs() <= 1e-9);
                prop_assert!((dir.get(i, j).norm() - d.get(i, j)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn soft_projection_stays_in_the_neighbor_box(
        vertices in prop::collection::vec(vec3(), 12..60),
        queries in prop::collection::vec(vec3(), 1..10),
        tau in 0.01..100.0f64,
        k in 1usize..12,
    ) {
        let out = soft_project(&queries, &vertices, &ProjectionParams { k, tau }).unwrap();
        for p in out {
            for c in 0..3 {
                let lo = vertices.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
                let hi = vertices.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(p[c] >= lo - 1e-9 && p[c] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn six_d_round_trip(q in quat()) {
        let back = quat_from_6d(&quat_to_6d(&q)).unwrap();
        prop_assert!(back.angle_to(&q) < 1e-9);
    }

    #[test]
    fn bvh_round_trip_preserves_world_positions(seed in 0u64..1000, frames in 1usize..5) {
        let skeleton = mannequin_skeleton(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses: Vec<Pose> = (0..frames).map(|_| random_pose(&skeleton, &mut rng, 0.8, 20.0)).collect();
        let motion = build_motion(&skeleton, poses, 1.0 / 30.0, None).unwrap();
        let data = parse_bvh(&write_bvh(&skeleton, &motion)).unwrap();
        for (a, b) in motion.frames.iter().zip(&data.poses) {
            let wa = forward_kinematics(&skeleton, &a.pose).unwrap();
            let wb = forward_kinematics(&skeleton, b).unwrap();
            for j in 0..skeleton.len() {
                prop_assert!((wa.position(j) - wb.position(j)).norm() < 1e-6);
            }
        }
    }
}
