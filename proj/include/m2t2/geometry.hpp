#pragma once

#include <array>
#include <optional>
#include <vector>

#include "m2t2/pointcloud.hpp"

namespace m2t2 {

// Rigid transform in SE(3).
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose compose(const Pose& other) const {  // this * other
    return Pose{rotation * other.rotation,
                rotation * other.translation + translation};
  }

  Pose inverse() const {
    Mat3 rt = rotation.transpose();
    return Pose{rt, -(rt * translation)};
  }

  // Orthonormal with det +1 within tol.
  bool is_valid(double tol = 1e-6) const;
};

// Raw network regression for one contact point: closing direction, approach
// direction and opening width.
struct GraspParams {
  Vec3 contact_dir = Vec3::UnitX();
  Vec3 approach_dir = Vec3::UnitZ();
  double width = 0.0;
};

// Axis-aligned box, used for the gripper collision model (gripper frame).
struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p, double inflate = 0.0) const {
    return p.x() >= min.x() - inflate && p.x() <= max.x() + inflate &&
           p.y() >= min.y() - inflate && p.y() <= max.y() + inflate &&
           p.z() >= min.z() - inflate && p.z() <= max.z() + inflate;
  }
};

// Parallel-jaw gripper. Frame convention: origin at the gripper base, +z is
// the approach direction, +x the finger closing line. The finger baseline
// (the segment between the two fingertips) sits at z = -base_to_baseline,
// fingertips at (+-max_width/2, 0, -base_to_baseline).
struct GripperModel {
  std::array<Vec3, 5> key_points;
  double base_to_baseline = 0.0;
  double max_width = 0.0;
  double finger_length = 0.0;
  double finger_thickness = 0.0;
  double finger_depth = 0.0;  // y extent of each finger
  std::vector<Aabb> collision_boxes;
  Aabb sweep_volume;  // region between the fingers, exempt from collision

  static GripperModel parallel_jaw();
};

// One of P discrete rotations about the world vertical axis.
struct PlanarRotationBin {
  int index = 0;
  int num_bins = 1;
  double angle = 0.0;
  Mat3 rotation = Mat3::Identity();

  static PlanarRotationBin make(int index, int num_bins);
};

// --- Pose reconstruction ---------------------------------------------------

// Builds the 6-DoF grasp pose anchored at contact point p. The contact
// direction is re-orthogonalized against the approach direction first;
// throws std::invalid_argument when the two are (near-)parallel. Rotation
// columns are [c, a x c, a], which gives det +1.
Pose reconstruct_grasp_pose(const Vec3& p, const GraspParams& params,
                            const GripperModel& gripper);

// Placement pose for a contact point p on the support surface:
// t = p + R_planar * (t_ee - b), R = R_planar * R_ee.
Pose reconstruct_placement_pose(const Vec3& p, const PlanarRotationBin& bin,
                                const Pose& ee_pose, const Vec3& object_bottom_center);

// (mean_x, mean_y, min_z) of the cloud.
Vec3 bottom_center(const PointCloud& object_cloud);

// Sum over the 5 gripper key points of the distance between their positions
// under the two poses. Symmetric, non-negative, zero iff the poses coincide
// on the key points.
double adds_distance(const Pose& pred, const Pose& gt, const GripperModel& gripper);

// --- Point-cloud utilities --------------------------------------------------

// Furthest point sampling. First selected index is seed_index; each next
// index maximizes the distance to the already chosen set, ties broken by
// lowest index. Deterministic.
std::vector<int> furthest_point_sample(const PointCloud& cloud, int m, int seed_index);
std::vector<int> furthest_point_sample(const std::vector<Vec3>& points, int m, int seed_index);

// Index of the lexicographically smallest (x, y, z) point. Used as a
// permutation-invariant FPS seed.
int lexicographic_min_index(const std::vector<Vec3>& points);

// Up to max_k nearest neighbors of each center within radius, ordered by
// (distance, index). Groups are padded by cyclic repetition; every center is
// expected to be a member of `points` so the group is never empty.
std::vector<std::vector<int>> radius_neighbors(const std::vector<Vec3>& points,
                                               const std::vector<Vec3>& centers,
                                               double radius, int max_k);

// k nearest coarse points for each fine point plus normalized
// inverse-distance weights 1/(d + 1e-8). A fine point that coincides with a
// coarse point copies that coarse entry exactly (weight 1).
struct InterpolationWeights {
  std::vector<int> indices;      // row-major [n_fine x k]
  std::vector<double> weights;   // row-major [n_fine x k]
  int k = 0;
};
InterpolationWeights interpolation_weights(const std::vector<Vec3>& coarse,
                                           const std::vector<Vec3>& fine, int k);

// Inverse-distance-weighted k-NN feature interpolation from a coarse cloud
// onto fine points.
std::vector<double> interpolate_features(const PointCloud& coarse,
                                         const std::vector<Vec3>& fine_points,
                                         int k = 3);

// --- Collision / stability proxies ------------------------------------------

// True iff any scene point falls inside one of the gripper collision boxes
// (inflated by clearance) when expressed in the gripper frame. Points inside
// the finger sweep volume are exempt.
bool check_gripper_collision(const Pose& pose, const PointCloud& scene,
                             const GripperModel& gripper, double clearance);

// Antipodal force-closure proxy: both finger contact regions must contain a
// point whose outward normal lies within the friction cone (half angle
// atan(friction_mu)) of the closing line, on opposite sides.
bool check_antipodal_stability(const Pose& pose, const PointCloud& object_cloud,
                               const std::vector<Vec3>& object_normals,
                               const GripperModel& gripper, double friction_mu);

}  // namespace m2t2
