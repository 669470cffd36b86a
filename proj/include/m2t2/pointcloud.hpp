#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace m2t2 {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Flat array of 3D points with optional row-major per-point features and
// optional per-point object ids (attached by the renderer).
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<double> features;  // row-major [n x feature_dim], empty if none
  int feature_dim = 0;
  std::vector<int> object_ids;  // empty unless produced by rendering

  int size() const { return static_cast<int>(points.size()); }
  bool has_features() const { return feature_dim > 0; }

  const double* feature_row(int i) const {
    return features.data() + static_cast<std::size_t>(i) * feature_dim;
  }

  void validate() const {
    if (points.empty()) throw std::invalid_argument("point cloud is empty");
    for (const Vec3& p : points) {
      if (!p.allFinite()) throw std::invalid_argument("non-finite point coordinate");
    }
    if (feature_dim > 0 &&
        features.size() != points.size() * static_cast<std::size_t>(feature_dim)) {
      throw std::invalid_argument("feature array size does not match point count");
    }
  }
};

}  // namespace m2t2
