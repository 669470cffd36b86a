#include "m2t2/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "m2t2/hungarian.hpp"

namespace m2t2 {

namespace {

constexpr double kClampLo = 1e-7;
constexpr double kDiceEps = 1e-6;

double bce_point(double p, double g) {
  p = std::min(std::max(p, kClampLo), 1.0 - kClampLo);
  return -(g * std::log(p) + (1.0 - g) * std::log(1.0 - p));
}

double dice_value(const double* p, const double* g, int n) {
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (int i = 0; i < n; ++i) {
    inter += p[i] * g[i];
    psum += p[i];
    gsum += g[i];
  }
  return 1.0 - 2.0 * inter / (psum + gsum + kDiceEps);
}

// mean of per-row [1 - 2*sum(p*g)/(sum p + sum g + eps)] as a tape op
Tensor dice_rows_mean(Tensor pred, Tensor gt_const) {
  Tape* tape = pred.tape;
  const int m = pred.rows();
  Tensor inter = row_sums(mul(pred, gt_const));
  std::vector<double> gsum(m, 0.0);
  const std::vector<double>& gv = gt_const.value();
  for (int i = 0; i < m; ++i)
    gsum[i] = std::accumulate(gv.begin() + static_cast<std::size_t>(i) * pred.cols(),
                              gv.begin() + static_cast<std::size_t>(i + 1) * pred.cols(),
                              0.0);
  Tensor den = add_constant(add(row_sums(pred), tape->constant(m, 1, gsum)), kDiceEps);
  Tensor dice = add_constant(scale(div(inter, den), -2.0), 1.0);
  return reduce_mean(dice);
}

Tensor zero_scalar(Tape* tape) { return tape->full(1, 1, 0.0); }

}  // namespace

std::vector<double> matching_cost(const Tensor& objectness, const Tensor& pred_masks,
                                  const std::vector<std::vector<double>>& gt_masks) {
  const int g_tokens = pred_masks.rows();
  const int n = pred_masks.cols();
  const int n_gt = static_cast<int>(gt_masks.size());
  if (objectness.rows() != g_tokens || objectness.cols() != 1)
    throw std::invalid_argument("matching_cost: objectness must be [G x 1]");
  if (n_gt < 1) throw std::invalid_argument("matching_cost: no ground-truth masks");
  for (const auto& m : gt_masks)
    if (static_cast<int>(m.size()) != n)
      throw std::invalid_argument("matching_cost: ground-truth mask size mismatch");

  const std::vector<double>& ov = objectness.value();
  const std::vector<double>& pv = pred_masks.value();
  std::vector<double> cost(static_cast<std::size_t>(g_tokens) * n_gt);
  for (int i = 0; i < g_tokens; ++i) {
    const double* pi = pv.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n_gt; ++j) {
      const double* gj = gt_masks[j].data();
      double bce = 0.0;
      for (int p = 0; p < n; ++p) bce += bce_point(pi[p], gj[p]);
      cost[static_cast<std::size_t>(i) * n_gt + j] =
          (1.0 - ov[i]) + bce / n + dice_value(pi, gj, n);
    }
  }
  return cost;
}

Tensor objectness_loss(const Tensor& objectness,
                       const std::vector<int>& matched_rows) {
  if (objectness.cols() != 1)
    throw std::invalid_argument("objectness_loss: expects [G x 1]");
  const int g_tokens = objectness.rows();
  std::vector<double> labels(g_tokens, 0.0);
  for (int r : matched_rows) {
    if (r < 0 || r >= g_tokens)
      throw std::invalid_argument("objectness_loss: matched row out of range");
    labels[r] = 1.0;
  }
  Tape* tape = objectness.tape;
  return reduce_mean(bce_elem(objectness, tape->constant(g_tokens, 1, labels)));
}

Tensor mask_loss_topk(const Tensor& pred, const std::vector<double>& gt_flat,
                      int k) {
  const int m = pred.rows();
  const int n = pred.cols();
  if (static_cast<std::int64_t>(m) * n != static_cast<std::int64_t>(gt_flat.size()))
    throw std::invalid_argument("mask_loss_topk: gt size mismatch");
  if (k < 1 || k > n) throw std::invalid_argument("mask_loss_topk: k out of range");

  Tape* tape = pred.tape;
  Tensor gt = tape->constant(m, n, gt_flat);
  Tensor bce = bce_elem(pred, gt);

  // top-k per row by (loss value desc, index asc)
  const std::vector<double>& bv = bce.value();
  std::vector<int> rows_idx, cols_idx;
  rows_idx.reserve(static_cast<std::size_t>(m) * k);
  cols_idx.reserve(static_cast<std::size_t>(m) * k);
  std::vector<int> order(n);
  for (int r = 0; r < m; ++r) {
    const double* br = bv.data() + static_cast<std::size_t>(r) * n;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [br](int a, int b) {
                        if (br[a] != br[b]) return br[a] > br[b];
                        return a < b;
                      });
    std::sort(order.begin(), order.begin() + k);  // stable gather order
    for (int j = 0; j < k; ++j) {
      rows_idx.push_back(r);
      cols_idx.push_back(order[j]);
    }
  }
  Tensor topk_mean = reduce_mean(gather_pairs(bce, rows_idx, cols_idx));
  return add(topk_mean, dice_rows_mean(pred, gt));
}

Tensor placement_loss(const Tensor& pred, const std::vector<double>& gt_flat,
                      int k) {
  return mask_loss_topk(pred, gt_flat, k);
}

Tensor adds_loss(const PredictedContacts& contacts,
                 const std::vector<Pose>& gt_poses, const GripperModel& gripper) {
  if (gt_poses.empty())
    throw std::invalid_argument("adds_loss: no ground-truth grasps");
  const int k_contacts = contacts.points.rows();
  if (k_contacts < 1) throw std::invalid_argument("adds_loss: no contacts");
  if (contacts.points.cols() != 3 || contacts.contact_dir.cols() != 3 ||
      contacts.approach_dir.cols() != 3 || contacts.width.cols() != 1 ||
      contacts.confidence.cols() != 1 ||
      contacts.contact_dir.rows() != k_contacts ||
      contacts.approach_dir.rows() != k_contacts ||
      contacts.width.rows() != k_contacts ||
      contacts.confidence.rows() != k_contacts)
    throw std::invalid_argument("adds_loss: contact tensor shapes disagree");
  if (gripper.key_points.empty())
    throw std::invalid_argument("adds_loss: gripper has no key points");

  Tape* tape = contacts.points.tape;
  const int n_keys = static_cast<int>(gripper.key_points.size());

  // Differentiable pose reconstruction: orthonormal frame from the predicted
  // directions, translation from the contact point, width and depth.
  Tensor a_hat = rows_normalize(contacts.approach_dir);
  Tensor c_perp =
      sub(contacts.contact_dir, rows_scale(a_hat, rows_dot(contacts.contact_dir, a_hat)));
  Tensor c_hat = rows_normalize(c_perp);
  Tensor trans = add(contacts.points,
                     add(rows_scale(c_hat, scale(contacts.width, 0.5)),
                         scale(a_hat, gripper.base_to_baseline)));
  bool need_b2 = false;
  for (const Vec3& kp : gripper.key_points)
    if (kp.y() != 0.0) need_b2 = true;
  Tensor b2 = need_b2 ? rows_cross(a_hat, c_hat) : a_hat;  // unused when y==0

  std::vector<Tensor> pred_keys;
  pred_keys.reserve(n_keys);
  for (const Vec3& kp : gripper.key_points) {
    Tensor p = add(trans, add(scale(c_hat, kp.x()), scale(a_hat, kp.z())));
    if (kp.y() != 0.0) p = add(p, scale(b2, kp.y()));
    pred_keys.push_back(p);
  }

  // Nearest ground-truth grasp per contact, on values (ties to lower index).
  std::vector<std::vector<Vec3>> gt_keys(gt_poses.size());
  for (std::size_t j = 0; j < gt_poses.size(); ++j) {
    gt_keys[j].reserve(n_keys);
    for (const Vec3& kp : gripper.key_points)
      gt_keys[j].push_back(gt_poses[j].apply(kp));
  }
  std::vector<int> nearest(k_contacts, 0);
  for (int i = 0; i < k_contacts; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < gt_poses.size(); ++j) {
      double d = 0.0;
      for (int q = 0; q < n_keys; ++q) {
        const std::vector<double>& pv = pred_keys[q].value();
        const double* pr = pv.data() + static_cast<std::size_t>(i) * 3;
        const Vec3& gk = gt_keys[j][q];
        d += std::sqrt((pr[0] - gk.x()) * (pr[0] - gk.x()) +
                       (pr[1] - gk.y()) * (pr[1] - gk.y()) +
                       (pr[2] - gk.z()) * (pr[2] - gk.z()));
      }
      if (d < best) {
        best = d;
        nearest[i] = static_cast<int>(j);
      }
    }
  }

  // d_i = sum over key points of |pred - selected gt|; loss = mean(s_i * d_i).
  Tensor dist;
  for (int q = 0; q < n_keys; ++q) {
    std::vector<double> sel(static_cast<std::size_t>(k_contacts) * 3);
    for (int i = 0; i < k_contacts; ++i) {
      const Vec3& gk = gt_keys[nearest[i]][q];
      sel[3 * static_cast<std::size_t>(i) + 0] = gk.x();
      sel[3 * static_cast<std::size_t>(i) + 1] = gk.y();
      sel[3 * static_cast<std::size_t>(i) + 2] = gk.z();
    }
    Tensor dq = rows_norm(sub(pred_keys[q], tape->constant(k_contacts, 3, sel)));
    dist = (q == 0) ? dq : add(dist, dq);
  }
  return reduce_mean(mul(contacts.confidence, dist));
}

LossBreakdown total_loss(const ContactMaskSet& masks, const ActionParams& actions,
                         const std::vector<Vec3>& scene_points,
                         const GroundTruthScene& gt, const LossWeights& weights,
                         const LossConfig& config, const GripperModel& gripper) {
  const int g_tokens = masks.grasp_masks.rows();
  const int n = masks.grasp_masks.cols();
  if (static_cast<int>(scene_points.size()) != n)
    throw std::invalid_argument("total_loss: scene point count mismatch");
  if (masks.interim.empty())
    throw std::invalid_argument("total_loss: no supervised mask sets");
  Tape* tape = masks.grasp_masks.tape;

  LossBreakdown out;
  const int n_gt = static_cast<int>(gt.grasp_masks.size());
  if (gt.grasp_poses.size() != gt.grasp_masks.size())
    throw std::invalid_argument("total_loss: grasp poses/masks disagree");
  if (n_gt > g_tokens)
    throw std::invalid_argument("total_loss: more ground-truth objects than tokens");

  std::vector<int> matched_rows;
  if (n_gt > 0) {
    std::vector<double> cost = matching_cost(masks.objectness, masks.grasp_masks,
                                             gt.grasp_masks);
    MatchResult match = hungarian_match(cost, g_tokens, n_gt);
    out.assignment = match.assignment;
    matched_rows.reserve(out.assignment.size());
    for (const auto& pr : out.assignment) matched_rows.push_back(pr.first);
  }

  Tensor obj_term = objectness_loss(masks.objectness, matched_rows);

  // Deep supervision: the final-mask assignment scores every interim set.
  const int n_sets = static_cast<int>(masks.interim.size());
  Tensor mask_term, place_term;
  bool have_place = !gt.place_masks.empty();
  if (n_gt > 0) {
    const int kg = std::min(config.topk_grasp, n);
    std::vector<double> gt_flat;
    gt_flat.reserve(static_cast<std::size_t>(n_gt) * n);
    for (const auto& pr : out.assignment)
      gt_flat.insert(gt_flat.end(), gt.grasp_masks[pr.second].begin(),
                     gt.grasp_masks[pr.second].end());
    for (int s = 0; s < n_sets; ++s) {
      Tensor rows = gather_rows(masks.interim[s].grasp, matched_rows);
      Tensor ls = mask_loss_topk(rows, gt_flat, kg);
      out.per_set_mask.push_back(ls.scalar());
      mask_term = (s == 0) ? ls : add(mask_term, ls);
    }
    mask_term = scale(mask_term, 1.0 / n_sets);
  } else {
    mask_term = zero_scalar(tape);
    out.per_set_mask.assign(static_cast<std::size_t>(n_sets), 0.0);
  }

  if (have_place) {
    const int p_tokens = masks.place_masks.rows();
    if (static_cast<int>(gt.place_masks.size()) != p_tokens)
      throw std::invalid_argument("total_loss: placement bin count mismatch");
    const int kp = std::min(config.topk_place, n);
    std::vector<double> place_flat;
    place_flat.reserve(static_cast<std::size_t>(p_tokens) * n);
    for (const auto& bin : gt.place_masks) {
      if (static_cast<int>(bin.size()) != n)
        throw std::invalid_argument("total_loss: placement mask size mismatch");
      place_flat.insert(place_flat.end(), bin.begin(), bin.end());
    }
    for (int s = 0; s < n_sets; ++s) {
      Tensor ls = placement_loss(masks.interim[s].place, place_flat, kp);
      place_term = (s == 0) ? ls : add(place_term, ls);
    }
    place_term = scale(place_term, 1.0 / n_sets);
  } else {
    place_term = zero_scalar(tape);
  }

  // Contacts: matched final masks thresholded at 0.5; pose targets pooled
  // over every ground-truth grasp in the scene.
  Tensor adds_term = zero_scalar(tape);
  if (n_gt > 0) {
    std::vector<Pose> pose_pool;
    for (const auto& per_object : gt.grasp_poses)
      pose_pool.insert(pose_pool.end(), per_object.begin(), per_object.end());
    std::vector<int> c_rows, c_cols;
    const std::vector<double>& fv = masks.grasp_masks.value();
    for (const auto& pr : out.assignment)
      for (int p = 0; p < n; ++p)
        if (fv[static_cast<std::size_t>(pr.first) * n + p] > 0.5) {
          c_rows.push_back(pr.first);
          c_cols.push_back(p);
        }
    if (!pose_pool.empty() && !c_rows.empty()) {
      const int kc = static_cast<int>(c_rows.size());
      std::vector<double> pts(static_cast<std::size_t>(kc) * 3);
      for (int i = 0; i < kc; ++i) {
        const Vec3& p = scene_points[c_cols[i]];
        pts[3 * static_cast<std::size_t>(i) + 0] = p.x();
        pts[3 * static_cast<std::size_t>(i) + 1] = p.y();
        pts[3 * static_cast<std::size_t>(i) + 2] = p.z();
      }
      PredictedContacts contacts{
          tape->constant(kc, 3, pts),
          gather_rows(actions.contact_dir, c_cols),
          gather_rows(actions.approach_dir, c_cols),
          gather_rows(actions.width, c_cols),
          gather_pairs(masks.grasp_masks, c_rows, c_cols),
      };
      adds_term = adds_loss(contacts, pose_pool, gripper);
    }
  }

  out.total = add(add(scale(obj_term, weights.objectness), scale(mask_term, weights.mask)),
                  add(scale(adds_term, weights.adds), scale(place_term, weights.place)));
  out.objectness = obj_term.scalar();
  out.mask = mask_term.scalar();
  out.adds = adds_term.scalar();
  out.placing = place_term.scalar();
  out.total_value = out.total.scalar();
  const double recomputed = weights.objectness * out.objectness +
                            weights.mask * out.mask + weights.adds * out.adds +
                            weights.place * out.placing;
  if (!std::isfinite(out.total_value) || !std::isfinite(recomputed))
    throw std::runtime_error("total_loss: non-finite loss");
  return out;
}

}  // namespace m2t2
