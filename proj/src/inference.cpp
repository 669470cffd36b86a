#include "m2t2/inference.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "m2t2/rng.hpp"

namespace m2t2 {

namespace {

Pose compose(const Pose& a, const Pose& b) {
  return Pose{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Vec3 row3(const Tensor& t, int r) {
  return Vec3(t.at(r, 0), t.at(r, 1), t.at(r, 2));
}

}  // namespace

std::vector<GraspProposal> GraspProposalSet::all() const {
  std::vector<GraspProposal> out;
  for (const Token& token : tokens)
    out.insert(out.end(), token.proposals.begin(), token.proposals.end());
  return out;
}

std::vector<PlacementProposal> PlacementProposalSet::all() const {
  std::vector<PlacementProposal> out;
  for (const auto& bin : bins) out.insert(out.end(), bin.begin(), bin.end());
  return out;
}

GraspProposalSet predict_grasps(const ContactMaskSet& masks,
                                const ActionParams& actions,
                                const PointCloud& scene,
                                const GripperModel& gripper,
                                double mask_threshold) {
  const int g = masks.grasp_masks.rows();
  const int n = masks.grasp_masks.cols();
  if (n != scene.size() || actions.contact_dir.rows() != n)
    throw std::invalid_argument("predict_grasps: size mismatch");

  GraspProposalSet out;
  for (int t = 0; t < g; ++t) {
    const double objectness = masks.objectness.at(t, 0);
    if (!(objectness > kObjectnessThreshold)) continue;
    GraspProposalSet::Token token;
    token.index = t;
    token.objectness = objectness;
    for (int i = 0; i < n; ++i) {
      const double prob = masks.grasp_masks.at(t, i);
      if (!(prob > mask_threshold)) continue;
      GraspParams params;
      params.contact_dir = row3(actions.contact_dir, i);
      params.approach_dir = row3(actions.approach_dir, i);
      params.width = actions.width.at(i, 0);
      GraspProposal p;
      try {
        p.pose = reconstruct_grasp_pose(scene.points[i], params, gripper);
      } catch (const std::invalid_argument&) {
        continue;  // near-parallel directions carry no usable pose
      }
      p.confidence = prob;
      p.contact_index = i;
      p.token = t;
      token.proposals.push_back(p);
    }
    out.tokens.push_back(std::move(token));
  }
  return out;
}

PlacementProposalSet predict_placements(const ContactMaskSet& masks,
                                        const PointCloud& scene,
                                        const Pose& ee_pose,
                                        const PointCloud& object_cloud,
                                        double mask_threshold) {
  const int p = masks.place_masks.rows();
  const int n = masks.place_masks.cols();
  if (n != scene.size())
    throw std::invalid_argument("predict_placements: size mismatch");
  const Vec3 b = bottom_center(object_cloud);

  PlacementProposalSet out;
  out.bins.resize(p);
  for (int bin_i = 0; bin_i < p; ++bin_i) {
    const PlanarRotationBin bin = PlanarRotationBin::make(bin_i, p);
    for (int i = 0; i < n; ++i) {
      const double prob = masks.place_masks.at(bin_i, i);
      if (!(prob > mask_threshold)) continue;
      PlacementProposal prop;
      prop.pose = reconstruct_placement_pose(scene.points[i], bin, ee_pose, b);
      prop.confidence = prob;
      prop.contact_index = i;
      prop.bin = bin_i;
      out.bins[bin_i].push_back(prop);
    }
  }
  return out;
}

// --- Success predicates --------------------------------------------------------

SceneEvaluator::SceneEvaluator(const SceneBundle& bundle,
                               const GripperModel& gripper,
                               const DatagenConfig& config)
    : bundle_(&bundle), gripper_(gripper), config_(config) {
  surfaces_.resize(bundle.instances.size());
  normals_.resize(bundle.instances.size());
  for (std::size_t i = 0; i < bundle.instances.size(); ++i)
    sample_shape_surface(bundle.instances[i].shape, bundle.instances[i].pose,
                         config.surface_step, surfaces_[i].points, normals_[i]);
  for (const ObjectInstance& inst : bundle.instances)
    if (inst.id != bundle.held_object_id) remaining_.push_back(inst);
  if (bundle.held_object_id >= 0) {
    const Pose& held = bundle.instances[bundle.held_object_id].pose;
    held_in_gripper_ = compose(bundle.ee_pose.inverse(), held);
  }
}

int SceneEvaluator::grasped_instance(const Pose& pose) const {
  const Mat3 rt = pose.rotation.transpose();
  int best = -1;
  std::size_t best_count = 0;
  for (std::size_t i = 0; i < surfaces_.size(); ++i) {
    std::size_t count = 0;
    for (const Vec3& p : surfaces_[i].points)
      if (gripper_.sweep_volume.contains(rt * (p - pose.translation))) count++;
    if (count > best_count) {
      best_count = count;
      best = static_cast<int>(i);
    }
  }
  return best;
}

bool SceneEvaluator::grasp_success(const Pose& pose) const {
  const int grasped = grasped_instance(pose);
  if (grasped < 0) return false;  // nothing between the fingers
  if (gripper_collides(pose, gripper_, bundle_->instances, bundle_->table,
                       config_.clearance, grasped))
    return false;
  return check_antipodal_stability(pose, surfaces_[grasped], normals_[grasped],
                                   gripper_, config_.friction);
}

bool SceneEvaluator::placement_success(const Pose& gripper_pose) const {
  if (bundle_->held_object_id < 0) return false;
  const ObjectInstance& held = bundle_->instances[bundle_->held_object_id];
  const Pose placed = compose(gripper_pose, held_in_gripper_);

  // the object must come to rest upright (within the f32 noise of the stored
  // in-hand pose) ...
  if ((placed.rotation.col(2) - Vec3::UnitZ()).norm() > 1e-5) return false;

  // ... with its bottom near the support surface
  double bottom;
  if (held.shape.kind == Shape::Kind::box) {
    bottom = 1e300;
    for (int sx : {-1, 1})
      for (int sy : {-1, 1})
        for (int z = 0; z <= 1; ++z)
          bottom = std::min(bottom,
                            placed.apply(Vec3(sx * held.shape.w / 2,
                                              sy * held.shape.d / 2,
                                              z * held.shape.h)).z());
  } else {
    const Vec3 axis = placed.rotation.col(2);
    const double rim = held.shape.r * std::sqrt(std::max(
        0.0, 1.0 - axis.z() * axis.z()));
    bottom = std::min(placed.translation.z(),
                      placed.translation.z() + held.shape.h * axis.z()) - rim;
  }
  if (std::abs(bottom) > kBottomTolerance) return false;

  // footprint checks run on the exactly-planar projection of the pose
  Pose flat = placed;
  const double yaw = std::atan2(placed.rotation(1, 0), placed.rotation(0, 0));
  const double c = std::cos(yaw), s = std::sin(yaw);
  flat.rotation << c, -s, 0, s, c, 0, 0, 0, 1;
  flat.translation.z() = 0;

  if (bundle_->table.present()) {
    const double hw = bundle_->table.width / 2, hd = bundle_->table.depth / 2;
    if (held.shape.kind == Shape::Kind::box) {
      for (int sx : {-1, 1})
        for (int sy : {-1, 1}) {
          const Vec3 corner = flat.apply(
              Vec3(sx * held.shape.w / 2, sy * held.shape.d / 2, 0));
          if (std::abs(corner.x()) > hw || std::abs(corner.y()) > hd)
            return false;
        }
    } else {
      if (std::abs(flat.translation.x()) > hw - held.shape.r ||
          std::abs(flat.translation.y()) > hd - held.shape.r)
        return false;
    }
  }
  for (const ObjectInstance& other : remaining_)
    if (footprint_distance(held.shape, flat, other.shape, other.pose) <= 0.0)
      return false;

  return !gripper_collides(gripper_pose, gripper_, remaining_, bundle_->table,
                           0.0);
}

bool grasp_success(const Pose& pose, const SceneBundle& bundle,
                   const GripperModel& gripper) {
  return SceneEvaluator(bundle, gripper).grasp_success(pose);
}

bool placement_success(const Pose& gripper_pose, const SceneBundle& bundle,
                       const GripperModel& gripper) {
  return SceneEvaluator(bundle, gripper).placement_success(gripper_pose);
}

// --- Precision / coverage --------------------------------------------------------

void PrecisionCoverageCurve::validate() const {
  if (points.empty()) throw std::invalid_argument("empty curve");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const CurvePoint& p = points[i];
    if (!(p.precision >= 0 && p.precision <= 1) ||
        !(p.coverage >= 0 && p.coverage <= 1))
      throw std::invalid_argument("curve values out of range");
    if (i > 0) {
      if (!(p.threshold < points[i - 1].threshold))
        throw std::invalid_argument("thresholds not strictly decreasing");
      if (p.coverage < points[i - 1].coverage)
        throw std::invalid_argument("coverage decreased");
    }
  }
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 100; i >= 50; --i) t.push_back(i / 100.0);
  return t;
}

CurveAccumulator::CurveAccumulator(std::vector<double> thresholds)
    : thresholds_(std::move(thresholds)),
      selected_(thresholds_.size(), 0),
      successes_(thresholds_.size(), 0),
      covered_(thresholds_.size(), 0) {
  if (thresholds_.empty()) throw std::invalid_argument("no thresholds");
  for (std::size_t i = 1; i < thresholds_.size(); ++i)
    if (!(thresholds_[i] < thresholds_[i - 1]))
      throw std::invalid_argument("thresholds must strictly decrease");
}

void CurveAccumulator::add_scene(
    const std::vector<ScoredPose>& proposals, const std::vector<Pose>& ground_truth,
    const std::function<bool(const Pose&)>& success) {
  std::vector<bool> ok(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i)
    ok[i] = success(proposals[i].pose);

  for (std::size_t k = 0; k < thresholds_.size(); ++k)
    for (std::size_t i = 0; i < proposals.size(); ++i)
      if (proposals[i].confidence >= thresholds_[k]) {
        selected_[k]++;
        if (ok[i]) successes_[k]++;
      }

  total_gt_ += static_cast<std::int64_t>(ground_truth.size());
  for (const Pose& gt : ground_truth) {
    double best_conf = -1;
    for (const ScoredPose& prop : proposals)
      if ((prop.pose.translation - gt.translation).norm() <= kCoverageRadius)
        best_conf = std::max(best_conf, prop.confidence);
    for (std::size_t k = 0; k < thresholds_.size(); ++k)
      if (best_conf >= thresholds_[k]) covered_[k]++;
  }
}

void CurveAccumulator::merge(const CurveAccumulator& other) {
  if (other.thresholds_ != thresholds_)
    throw std::invalid_argument("merging accumulators with different thresholds");
  for (std::size_t k = 0; k < thresholds_.size(); ++k) {
    selected_[k] += other.selected_[k];
    successes_[k] += other.successes_[k];
    covered_[k] += other.covered_[k];
  }
  total_gt_ += other.total_gt_;
}

PrecisionCoverageCurve CurveAccumulator::curve() const {
  PrecisionCoverageCurve out;
  for (std::size_t k = 0; k < thresholds_.size(); ++k) {
    CurvePoint p;
    p.threshold = thresholds_[k];
    p.precision = selected_[k] == 0
                      ? 1.0
                      : static_cast<double>(successes_[k]) / selected_[k];
    p.coverage = total_gt_ == 0
                     ? 1.0
                     : static_cast<double>(covered_[k]) / total_gt_;
    out.points.push_back(p);
  }
  out.validate();
  return out;
}

PrecisionCoverageCurve precision_coverage(
    const std::vector<ScoredPose>& proposals, const std::vector<Pose>& ground_truth,
    const std::function<bool(const Pose&)>& success,
    const std::vector<double>& thresholds) {
  CurveAccumulator acc(thresholds);
  acc.add_scene(proposals, ground_truth, success);
  return acc.curve();
}

double area_under_curve(const PrecisionCoverageCurve& curve) {
  curve.validate();
  double area = 0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const CurvePoint& a = curve.points[i - 1];
    const CurvePoint& b = curve.points[i];
    area += (b.coverage - a.coverage) * 0.5 * (a.precision + b.precision);
  }
  return area;
}

void write_curve_csv(const PrecisionCoverageCurve& curve, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "threshold,precision,coverage\n";
  auto shortest = [](double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  for (const CurvePoint& p : curve.points)
    out << shortest(p.threshold) << ',' << shortest(p.precision) << ','
        << shortest(p.coverage) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

// --- Baselines and ground truth ----------------------------------------------

std::vector<ScoredPose> random_grasp_proposals(const SceneBundle& bundle,
                                               const GripperModel& gripper,
                                               int count, std::uint64_t seed) {
  Pcg32 rng(seed);
  auto unit = [&rng] {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    while (v.norm() < 1e-6) v = Vec3(rng.normal(), rng.normal(), rng.normal());
    return Vec3(v.normalized());
  };
  std::vector<ScoredPose> out;
  int guard = 0;
  while (static_cast<int>(out.size()) < count && guard++ < 100 * count) {
    const int i = static_cast<int>(rng.uniform_index(
        static_cast<std::uint32_t>(bundle.cloud.size())));
    GraspParams params{unit(), unit(), rng.uniform(0.0, gripper.max_width)};
    ScoredPose sp;
    try {
      sp.pose = reconstruct_grasp_pose(bundle.cloud.points[i], params, gripper);
    } catch (const std::invalid_argument&) {
      continue;
    }
    sp.confidence = rng.uniform(0.5, 1.0);
    out.push_back(sp);
  }
  return out;
}

std::vector<ScoredPose> random_placement_proposals(const SceneBundle& bundle,
                                                   int count, std::uint64_t seed) {
  std::vector<ScoredPose> out;
  const int p = static_cast<int>(bundle.place_masks.size());
  if (bundle.held_object_id < 0 || p == 0) return out;
  PointCloud held_cloud;
  for (int i = 0; i < bundle.cloud.size(); ++i)
    if (bundle.cloud.object_ids[i] == bundle.held_object_id)
      held_cloud.points.push_back(bundle.cloud.points[i]);
  if (held_cloud.points.empty()) return out;
  const Vec3 b = bottom_center(held_cloud);

  Pcg32 rng(seed);
  for (int k = 0; k < count; ++k) {
    const int i = static_cast<int>(rng.uniform_index(
        static_cast<std::uint32_t>(bundle.cloud.size())));
    const int bin_i = rng.uniform_int(0, p - 1);
    ScoredPose sp;
    sp.pose = reconstruct_placement_pose(bundle.cloud.points[i],
                                         PlanarRotationBin::make(bin_i, p),
                                         bundle.ee_pose, b);
    sp.confidence = rng.uniform(0.5, 1.0);
    out.push_back(sp);
  }
  return out;
}

std::vector<Pose> grasp_ground_truth(const SceneBundle& bundle) {
  std::vector<Pose> out;
  out.reserve(bundle.grasp_labels.size());
  for (const GraspLabel& label : bundle.grasp_labels) out.push_back(label.pose);
  return out;
}

std::vector<Pose> placement_ground_truth(const SceneBundle& bundle) {
  std::vector<Pose> out;
  const int p = static_cast<int>(bundle.place_masks.size());
  if (bundle.held_object_id < 0 || p == 0) return out;
  PointCloud held_cloud;
  for (int i = 0; i < bundle.cloud.size(); ++i)
    if (bundle.cloud.object_ids[i] == bundle.held_object_id)
      held_cloud.points.push_back(bundle.cloud.points[i]);
  if (held_cloud.points.empty()) return out;
  const Vec3 b = bottom_center(held_cloud);

  for (int bin_i = 0; bin_i < p; ++bin_i) {
    const PlanarRotationBin bin = PlanarRotationBin::make(bin_i, p);
    for (std::size_t j = 0; j < bundle.place_masks[bin_i].size(); ++j)
      if (bundle.place_masks[bin_i][j])
        out.push_back(reconstruct_placement_pose(
            bundle.cloud.points[static_cast<int>(j)], bin, bundle.ee_pose, b));
  }
  return out;
}

}  // namespace m2t2
