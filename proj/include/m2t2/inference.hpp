#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "m2t2/datagen.hpp"
#include "m2t2/geometry.hpp"
#include "m2t2/network.hpp"
#include "m2t2/pointcloud.hpp"

namespace m2t2 {

inline constexpr double kMaskThreshold = 0.5;
inline constexpr double kObjectnessThreshold = 0.5;
inline constexpr double kCoverageRadius = 0.05;   // meters, translation only
inline constexpr double kBottomTolerance = 0.05;  // placed-object bottom height

struct GraspProposal {
  Pose pose;
  double confidence = 0.0;  // mask probability at the contact point
  int contact_index = -1;
  int token = -1;
};

struct PlacementProposal {
  Pose pose;  // gripper pose from the placement reconstruction
  double confidence = 0.0;
  int contact_index = -1;
  int bin = -1;
};

// Grasp poses grouped by accepted query token (objectness above threshold).
struct GraspProposalSet {
  struct Token {
    int index = 0;
    double objectness = 0.0;
    std::vector<GraspProposal> proposals;  // contact indices ascending
  };
  std::vector<Token> tokens;
  std::vector<GraspProposal> all() const;
};

struct PlacementProposalSet {
  std::vector<std::vector<PlacementProposal>> bins;  // [P]
  std::vector<PlacementProposal> all() const;
};

// Reads every contact point above mask_threshold for every token with
// objectness above threshold; (contact dir, approach dir, width) come from
// the action head at that point. Degenerate direction pairs are skipped.
GraspProposalSet predict_grasps(const ContactMaskSet& masks,
                                const ActionParams& actions,
                                const PointCloud& scene,
                                const GripperModel& gripper,
                                double mask_threshold = kMaskThreshold);

// Placement pose per (rotation bin, contact point above threshold) with
// b = bottom_center(object_cloud), the visible points of the held object.
PlacementProposalSet predict_placements(const ContactMaskSet& masks,
                                        const PointCloud& scene,
                                        const Pose& ee_pose,
                                        const PointCloud& object_cloud,
                                        double mask_threshold = kMaskThreshold);

// Success predicates against the analytic scene (occluded parts included).
// Surfaces are sampled once per scene, so batch scoring stays cheap.
class SceneEvaluator {
 public:
  SceneEvaluator(const SceneBundle& bundle, const GripperModel& gripper,
                 const DatagenConfig& config = DatagenConfig{});

  // Instance holding the most sampled surface points between the fingers;
  // -1 when the closing region is empty (fingers in free air).
  int grasped_instance(const Pose& pose) const;

  // Collision-free against every analytic shape and the table, and
  // antipodally stable on the grasped instance.
  bool grasp_success(const Pose& pose) const;

  // The held object, rigidly attached to the gripper since ee_pose, must end
  // upright with its bottom within kBottomTolerance of the table, footprint
  // inside the table bounds, not overlapping any remaining object, and the
  // gripper itself collision-free (margin 0).
  bool placement_success(const Pose& gripper_pose) const;

  const SceneBundle& bundle() const { return *bundle_; }

 private:
  const SceneBundle* bundle_;
  GripperModel gripper_;
  DatagenConfig config_;
  std::vector<PointCloud> surfaces_;
  std::vector<std::vector<Vec3>> normals_;
  std::vector<ObjectInstance> remaining_;  // all instances minus the held one
  Pose held_in_gripper_;                   // ee_pose^-1 * held original pose
};

bool grasp_success(const Pose& pose, const SceneBundle& bundle,
                   const GripperModel& gripper);
bool placement_success(const Pose& gripper_pose, const SceneBundle& bundle,
                       const GripperModel& gripper);

// --- Precision / coverage ----------------------------------------------------

struct CurvePoint {
  double threshold = 0.0;
  double precision = 0.0;
  double coverage = 0.0;
};

struct PrecisionCoverageCurve {
  std::vector<CurvePoint> points;  // thresholds strictly descending
  void validate() const;
};

// 1.00, 0.99, ..., 0.50
std::vector<double> default_thresholds();

struct ScoredPose {
  Pose pose;
  double confidence = 0.0;
};

// Pools any number of scenes into one curve. Only integer counts are
// accumulated, so the reduction is exact and order-independent.
class CurveAccumulator {
 public:
  explicit CurveAccumulator(std::vector<double> thresholds = default_thresholds());
  void add_scene(const std::vector<ScoredPose>& proposals,
                 const std::vector<Pose>& ground_truth,
                 const std::function<bool(const Pose&)>& success);
  void merge(const CurveAccumulator& other);
  PrecisionCoverageCurve curve() const;

 private:
  std::vector<double> thresholds_;
  std::vector<std::int64_t> selected_, successes_, covered_;
  std::int64_t total_gt_ = 0;
};

// Single-scene curve: precision of the selected set (1.0 when empty) and the
// fraction of ground-truth poses within kCoverageRadius of a selection.
PrecisionCoverageCurve precision_coverage(
    const std::vector<ScoredPose>& proposals, const std::vector<Pose>& ground_truth,
    const std::function<bool(const Pose&)>& success,
    const std::vector<double>& thresholds = default_thresholds());

// Trapezoidal integral of precision over the curve's coverage range.
double area_under_curve(const PrecisionCoverageCurve& curve);

void write_curve_csv(const PrecisionCoverageCurve& curve, const std::string& path);

// --- Baselines and ground truth ----------------------------------------------

// Uniformly sampled contact points with random unit directions and widths;
// confidences uniform in [0.5, 1]. The reference "no model" baseline.
std::vector<ScoredPose> random_grasp_proposals(const SceneBundle& bundle,
                                               const GripperModel& gripper,
                                               int count, std::uint64_t seed);

// Uniform contact points and rotation bins through the placement
// reconstruction; empty when the scene has no held object.
std::vector<ScoredPose> random_placement_proposals(const SceneBundle& bundle,
                                                   int count, std::uint64_t seed);

std::vector<Pose> grasp_ground_truth(const SceneBundle& bundle);
std::vector<Pose> placement_ground_truth(const SceneBundle& bundle);

}  // namespace m2t2
