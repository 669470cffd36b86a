#include "m2t2/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "m2t2/kernels.hpp"

namespace m2t2 {

bool Pose::is_valid(double tol) const {
  Mat3 should_be_identity = rotation.transpose() * rotation;
  if ((should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  if (std::abs(rotation.determinant() - 1.0) > tol) return false;
  return translation.allFinite();
}

GripperModel GripperModel::parallel_jaw() {
  GripperModel g;
  g.base_to_baseline = 0.1034;
  g.max_width = 0.08;
  g.finger_length = 0.046;
  g.finger_thickness = 0.012;
  g.finger_depth = 0.024;

  const double d = g.base_to_baseline;
  const double hw = g.max_width / 2.0;
  const double lf = g.finger_length;
  const double tf = g.finger_thickness;
  const double hy = g.finger_depth / 2.0;

  g.key_points = {Vec3(0, 0, 0), Vec3(0, 0, -d / 2), Vec3(0, 0, -d),
                  Vec3(hw, 0, -d), Vec3(-hw, 0, -d)};

  // Fingers, knuckle bar and wrist. The wrist box straddles the origin.
  g.collision_boxes.push_back({Vec3(hw, -hy, -d), Vec3(hw + tf, hy, -d + lf)});
  g.collision_boxes.push_back({Vec3(-hw - tf, -hy, -d), Vec3(-hw, hy, -d + lf)});
  g.collision_boxes.push_back(
      {Vec3(-hw - tf, -hy - 0.004, -d + lf), Vec3(hw + tf, hy + 0.004, -d + lf + 0.02)});
  g.collision_boxes.push_back(
      {Vec3(-0.032, -0.032, -d + lf + 0.02), Vec3(0.032, 0.032, 0.012)});

  g.sweep_volume = {Vec3(-hw, -hy, -d), Vec3(hw, hy, -d + lf)};
  return g;
}

PlanarRotationBin PlanarRotationBin::make(int index, int num_bins) {
  if (num_bins < 1 || index < 0 || index >= num_bins)
    throw std::invalid_argument("invalid planar rotation bin");
  PlanarRotationBin bin;
  bin.index = index;
  bin.num_bins = num_bins;
  bin.angle = 2.0 * M_PI * index / num_bins;
  double c = std::cos(bin.angle), s = std::sin(bin.angle);
  if (index == 0) {
    bin.rotation = Mat3::Identity();
  } else {
    bin.rotation << c, -s, 0, s, c, 0, 0, 0, 1;
  }
  return bin;
}

Pose reconstruct_grasp_pose(const Vec3& p, const GraspParams& params,
                            const GripperModel& gripper) {
  Vec3 a = params.approach_dir.normalized();
  Vec3 c = params.contact_dir - params.contact_dir.dot(a) * a;
  double norm = c.norm();
  if (norm < 1e-6)
    throw std::invalid_argument(
        "degenerate grasp directions: contact is parallel to approach");
  c /= norm;

  Pose pose;
  pose.rotation.col(0) = c;
  pose.rotation.col(1) = a.cross(c);
  pose.rotation.col(2) = a;
  pose.translation =
      p + (params.width / 2.0) * c + gripper.base_to_baseline * a;
  return pose;
}

Pose reconstruct_placement_pose(const Vec3& p, const PlanarRotationBin& bin,
                                const Pose& ee_pose, const Vec3& object_bottom_center) {
  Pose pose;
  pose.rotation = bin.rotation * ee_pose.rotation;
  pose.translation = p + bin.rotation * (ee_pose.translation - object_bottom_center);
  return pose;
}

Vec3 bottom_center(const PointCloud& object_cloud) {
  if (object_cloud.points.empty())
    throw std::invalid_argument("bottom_center of an empty cloud");
  double sx = 0, sy = 0, mz = std::numeric_limits<double>::infinity();
  for (const Vec3& p : object_cloud.points) {
    sx += p.x();
    sy += p.y();
    mz = std::min(mz, p.z());
  }
  double n = static_cast<double>(object_cloud.points.size());
  return Vec3(sx / n, sy / n, mz);
}

double adds_distance(const Pose& pred, const Pose& gt, const GripperModel& gripper) {
  double total = 0.0;
  for (const Vec3& v : gripper.key_points) {
    total += (pred.apply(v) - gt.apply(v)).norm();
  }
  return total;
}

std::vector<int> furthest_point_sample(const std::vector<Vec3>& points, int m,
                                       int seed_index) {
  int n = static_cast<int>(points.size());
  if (n == 0) throw std::invalid_argument("furthest_point_sample: empty cloud");
  if (m < 1 || m > n)
    throw std::invalid_argument("furthest_point_sample: m out of range");
  if (seed_index < 0 || seed_index >= n)
    throw std::invalid_argument("furthest_point_sample: seed index out of range");

  std::vector<double> flat(static_cast<std::size_t>(n) * 3);
  for (int i = 0; i < n; ++i) {
    flat[3 * i + 0] = points[i].x();
    flat[3 * i + 1] = points[i].y();
    flat[3 * i + 2] = points[i].z();
  }

  std::vector<int> chosen;
  chosen.reserve(m);
  chosen.push_back(seed_index);
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  const bool parallel = n >= 4096;
  for (int step = 1; step < m; ++step) {
    const double* q = flat.data() + 3 * chosen.back();
    if (parallel) {
      kernels::fps_update_omp(flat.data(), n, q, dist2.data());
    } else {
      kernels::fps_update_serial(flat.data(), n, q, dist2.data());
    }
    int next = parallel ? kernels::argmax_omp(dist2.data(), n)
                        : kernels::argmax_serial(dist2.data(), n);
    chosen.push_back(next);
  }
  return chosen;
}

std::vector<int> furthest_point_sample(const PointCloud& cloud, int m, int seed_index) {
  return furthest_point_sample(cloud.points, m, seed_index);
}

int lexicographic_min_index(const std::vector<Vec3>& points) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(points.size()); ++i) {
    const Vec3& a = points[i];
    const Vec3& b = points[best];
    if (a.x() < b.x() ||
        (a.x() == b.x() && (a.y() < b.y() || (a.y() == b.y() && a.z() < b.z())))) {
      best = i;
    }
  }
  return best;
}

namespace {

struct NeighborCandidate {
  double dist2;
  int index;
};

bool candidate_less(const NeighborCandidate& a, const NeighborCandidate& b) {
  return a.dist2 != b.dist2 ? a.dist2 < b.dist2 : a.index < b.index;
}

}  // namespace

std::vector<std::vector<int>> radius_neighbors(const std::vector<Vec3>& points,
                                               const std::vector<Vec3>& centers,
                                               double radius, int max_k) {
  const double r2 = radius * radius;
  std::vector<std::vector<int>> groups(centers.size());
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < static_cast<int>(centers.size()); ++ci) {
    const Vec3& c = centers[ci];
    std::vector<NeighborCandidate> cands;
    for (int i = 0; i < static_cast<int>(points.size()); ++i) {
      double d2 = (points[i] - c).squaredNorm();
      if (d2 <= r2) cands.push_back({d2, i});
    }
    std::sort(cands.begin(), cands.end(), candidate_less);
    if (static_cast<int>(cands.size()) > max_k) cands.resize(max_k);
    std::vector<int>& group = groups[ci];
    group.reserve(max_k);
    for (const NeighborCandidate& cand : cands) group.push_back(cand.index);
    if (group.empty())
      throw std::invalid_argument("radius_neighbors: center has no neighbor in radius");
    // pad by cyclic repetition up to max_k
    int base = static_cast<int>(group.size());
    for (int i = base; i < max_k; ++i) group.push_back(group[i % base]);
  }
  return groups;
}

InterpolationWeights interpolation_weights(const std::vector<Vec3>& coarse,
                                           const std::vector<Vec3>& fine, int k) {
  int nc = static_cast<int>(coarse.size());
  if (k < 1 || k > nc)
    throw std::invalid_argument("interpolation_weights: k out of range");
  InterpolationWeights out;
  out.k = k;
  out.indices.resize(fine.size() * static_cast<std::size_t>(k));
  out.weights.resize(fine.size() * static_cast<std::size_t>(k));

#pragma omp parallel for schedule(static)
  for (int fi = 0; fi < static_cast<int>(fine.size()); ++fi) {
    const Vec3& q = fine[fi];
    // k smallest (distance, index) pairs by insertion, ties to lowest index
    std::vector<NeighborCandidate> best;
    best.reserve(k + 1);
    for (int i = 0; i < nc; ++i) {
      double d2 = (coarse[i] - q).squaredNorm();
      NeighborCandidate cand{d2, i};
      auto pos = std::upper_bound(best.begin(), best.end(), cand,
                                  [](const NeighborCandidate& a, const NeighborCandidate& b) {
                                    return a.dist2 != b.dist2 ? a.dist2 < b.dist2
                                                              : a.index < b.index;
                                  });
      if (pos != best.end() || static_cast<int>(best.size()) < k)
        best.insert(pos, cand);
      if (static_cast<int>(best.size()) > k) best.pop_back();
    }
    int* idx = out.indices.data() + static_cast<std::size_t>(fi) * k;
    double* w = out.weights.data() + static_cast<std::size_t>(fi) * k;
    if (best[0].dist2 == 0.0) {
      // coincident point: exact copy of that coarse entry
      for (int j = 0; j < k; ++j) {
        idx[j] = best[0].index;
        w[j] = j == 0 ? 1.0 : 0.0;
      }
    } else {
      double total = 0.0;
      for (int j = 0; j < k; ++j) {
        idx[j] = best[j].index;
        w[j] = 1.0 / (std::sqrt(best[j].dist2) + 1e-8);
        total += w[j];
      }
      for (int j = 0; j < k; ++j) w[j] /= total;
    }
  }
  return out;
}

std::vector<double> interpolate_features(const PointCloud& coarse,
                                         const std::vector<Vec3>& fine_points,
                                         int k) {
  if (!coarse.has_features())
    throw std::invalid_argument("interpolate_features: coarse cloud has no features");
  InterpolationWeights iw = interpolation_weights(coarse.points, fine_points, k);
  int f = coarse.feature_dim;
  std::vector<double> out(fine_points.size() * static_cast<std::size_t>(f), 0.0);
#pragma omp parallel for schedule(static)
  for (int fi = 0; fi < static_cast<int>(fine_points.size()); ++fi) {
    double* row = out.data() + static_cast<std::size_t>(fi) * f;
    for (int j = 0; j < k; ++j) {
      int ci = iw.indices[static_cast<std::size_t>(fi) * k + j];
      double w = iw.weights[static_cast<std::size_t>(fi) * k + j];
      if (w == 0.0) continue;
      const double* src = coarse.feature_row(ci);
      for (int d = 0; d < f; ++d) row[d] += w * src[d];
    }
  }
  return out;
}

bool check_gripper_collision(const Pose& pose, const PointCloud& scene,
                             const GripperModel& gripper, double clearance) {
  if (clearance < 0) throw std::invalid_argument("clearance must be >= 0");
  const Mat3 rt = pose.rotation.transpose();
  const Vec3 t = pose.translation;
  // Conservative bounding radius around the gripper midpoint for early reject.
  const Vec3 mid_world = pose.apply(Vec3(0, 0, -gripper.base_to_baseline / 2));
  double bound = gripper.base_to_baseline / 2 + gripper.max_width + 3 * clearance + 0.06;
  double bound2 = bound * bound;

  int n = scene.size();
  int hit = 0;
#pragma omp parallel for schedule(static) reduction(|| : hit)
  for (int i = 0; i < n; ++i) {
    if (hit) continue;
    const Vec3& pw = scene.points[i];
    if ((pw - mid_world).squaredNorm() > bound2) continue;
    Vec3 p = rt * (pw - t);
    if (gripper.sweep_volume.contains(p, 0.0)) continue;  // between the fingers
    for (const Aabb& box : gripper.collision_boxes) {
      if (box.contains(p, clearance)) {
        hit = 1;
        break;
      }
    }
  }
  return hit != 0;
}

bool check_antipodal_stability(const Pose& pose, const PointCloud& object_cloud,
                               const std::vector<Vec3>& object_normals,
                               const GripperModel& gripper, double friction_mu) {
  if (friction_mu <= 0) throw std::invalid_argument("friction_mu must be > 0");
  if (object_normals.size() != object_cloud.points.size())
    throw std::invalid_argument("normals must match object cloud");

  const Mat3 rt = pose.rotation.transpose();
  const Vec3 t = pose.translation;
  const double cos_cone = std::cos(std::atan(friction_mu));
  const double hw = gripper.max_width / 2;
  const double hy = gripper.finger_depth / 2;
  const double z_lo = -gripper.base_to_baseline - 1e-4;
  const double z_hi = -gripper.base_to_baseline + gripper.finger_length + 1e-4;

  bool left = false, right = false;
  for (std::size_t i = 0; i < object_cloud.points.size(); ++i) {
    Vec3 p = rt * (object_cloud.points[i] - t);
    if (std::abs(p.x()) > hw + 1e-6 || std::abs(p.y()) > hy || p.z() < z_lo ||
        p.z() > z_hi)
      continue;
    Vec3 n = rt * object_normals[i];
    // left finger closes along -x: needs an outward normal near +x
    if (!left && p.x() > 1e-9 && n.x() >= cos_cone) left = true;
    if (!right && p.x() < -1e-9 && -n.x() >= cos_cone) right = true;
    if (left && right) return true;
  }
  return false;
}

}  // namespace m2t2
