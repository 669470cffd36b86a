#pragma once

#include <utility>
#include <vector>

#include "m2t2/geometry.hpp"
#include "m2t2/network.hpp"
#include "m2t2/tensor.hpp"

namespace m2t2 {

struct LossWeights {
  double objectness = 1.0;
  double mask = 1.0;
  double adds = 10.0;
  double place = 1.0;
};

struct LossConfig {
  int topk_grasp = 512;  // hardest-pixel count per matched grasp mask
  int topk_place = 1024; // per place mask; both clamped to N inside total_loss
};

// Training targets for one scene. Masks are over the same N points as the
// model input, values in {0, 1}. grasp_masks[i] pairs with grasp_poses[i].
struct GroundTruthScene {
  std::vector<std::vector<double>> grasp_masks;
  std::vector<std::vector<Pose>> grasp_poses;
  std::vector<std::vector<double>> place_masks;  // one per placement bin
};

// Bipartite matching cost between predicted masks and ground-truth objects:
// cost(i, j) = (1 - objectness_i) + bce_mean(pred_i, gt_j) + dice(pred_i, gt_j)
// computed on plain values (no gradient). objectness is [G x 1], pred_masks
// [G x N]. Returns [G x n_gt] row-major.
std::vector<double> matching_cost(const Tensor& objectness, const Tensor& pred_masks,
                                  const std::vector<std::vector<double>>& gt_masks);

// Binary cross entropy over all G objectness scores, target 1 for matched
// token rows and 0 otherwise. Returns [1 x 1].
Tensor objectness_loss(const Tensor& objectness,
                       const std::vector<int>& matched_rows);

// Per matched mask: mean BCE over the k highest-loss points (ties broken by
// lower index) plus a DICE term over the full mask, averaged over masks.
// pred is [M x N]; gt_flat is row-major [M x N]; requires 1 <= k <= N.
Tensor mask_loss_topk(const Tensor& pred, const std::vector<double>& gt_flat,
                      int k);

// Placement mask loss: same top-k BCE + DICE machinery, but rows pair with
// ground-truth rows by rotation-bin index (no matching). pred is [P x N].
Tensor placement_loss(const Tensor& pred, const std::vector<double>& gt_flat,
                      int k);

// Predicted contact set gathered from matched masks above threshold. Rows
// align across all tensors; `points` carries no gradient.
struct PredictedContacts {
  Tensor points;        // [K x 3]
  Tensor contact_dir;   // [K x 3], unnormalized
  Tensor approach_dir;  // [K x 3], unnormalized
  Tensor width;         // [K x 1]
  Tensor confidence;    // [K x 1], mask probability at the contact
};

// Confidence-weighted symmetric average distance between gripper key points
// placed by the reconstructed predicted pose and by the nearest ground-truth
// grasp: (1/K) * sum_i s_i * d(i, nearest gt). The nearest ground-truth grasp
// is chosen on values (ties to the lower index); gradients flow through the
// predicted directions, width and confidence. Requires K >= 1 and at least
// one ground-truth pose.
Tensor adds_loss(const PredictedContacts& contacts,
                 const std::vector<Pose>& gt_poses, const GripperModel& gripper);

struct LossBreakdown {
  Tensor total;      // [1 x 1], differentiable
  double objectness = 0.0;
  double mask = 0.0;      // mean over supervised mask sets
  double adds = 0.0;
  double placing = 0.0;   // mean over supervised mask sets
  double total_value = 0.0;
  std::vector<double> per_set_mask;  // matched grasp-mask term per interim set
  std::vector<std::pair<int, int>> assignment;  // (token row, gt object)
};

// Combines all terms: Hungarian matching on the final masks, objectness BCE,
// deep supervision of matched grasp masks across every interim set, the
// contact ADD-S term over thresholded matched contacts, and placement mask
// loss paired by bin. Terms without support (no gt grasps, no contacts above
// threshold, no placement bins) contribute exact zeros.
LossBreakdown total_loss(const ContactMaskSet& masks, const ActionParams& actions,
                         const std::vector<Vec3>& scene_points,
                         const GroundTruthScene& gt, const LossWeights& weights,
                         const LossConfig& config, const GripperModel& gripper);

}  // namespace m2t2
