#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "m2t2/geometry.hpp"
#include "m2t2/pointcloud.hpp"
#include "m2t2/tensor.hpp"

namespace m2t2 {

// Contact-point transformer for pick-and-place: a multi-resolution point
// cloud encoder, learned grasp/place query tokens decoded with masked cross
// attention, an objectness head, a per-point action head, and an object
// encoder that conditions placement on the held object.

struct ModelConfig {
  int n_points = 1024;      // N; must be divisible by 4^(num_levels-1)
  int num_levels = 4;       // level sizes N, N/4, ..., N/4^(L-1)
  int grasp_tokens = 8;     // G
  int place_tokens = 8;     // P
  int width = 64;           // token / level-0 feature width
  int decoder_blocks = 3;   // cross-attention cycles over levels L-1 .. 1
  int ffn_hidden = 128;     // transformer feedforward hidden size
  int group_cap = 32;       // neighbors per grouping query
  int pos_freqs = 6;        // Fourier frequencies for position encodings
  double max_width = 0.08;  // gripper opening used to bound predicted widths
  std::vector<double> level_radius = {0.05, 0.1, 0.2, 0.4};
  std::vector<int> encoder_widths = {32, 64, 64, 64};  // per-level SA widths
  bool attend_everywhere = false;  // test hook: ignore interim attention masks

  void validate() const;
  // Desk-scale miniature used by gradient checks (width 8, N=128).
  static ModelConfig tiny();
};

// Named dense parameters. Map iteration (and hence initialization,
// serialization and update order) is alphabetical and therefore stable.
struct ModelParams {
  struct Entry {
    int rows = 0, cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // accumulated by the trainer
  };
  std::map<std::string, Entry> entries;

  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
  void zero_grad();
  std::size_t count_scalars() const;
};

// Per-tape view of ModelParams. In the lazy mode every parameter used by a
// forward pass is registered on the tape on first access (trainable controls
// requires_grad); afterwards the trainer folds tensor gradients back into
// ModelParams::Entry::grad. The pre-bound mode wraps caller-provided tensors
// (one per entry, in map order), which is how gradient checks drive the net.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ModelParams& params, bool trainable = true)
      : tape_(&tape), params_(&params), trainable_(trainable) {}
  BoundParams(const ModelParams& shapes, const std::vector<Tensor>& bound);
  Tensor operator()(const std::string& name);
  // name -> tape tensor for every parameter touched so far
  const std::map<std::string, Tensor>& bound() const { return bound_; }

 private:
  Tape* tape_ = nullptr;
  const ModelParams* params_ = nullptr;
  bool trainable_ = true;
  std::map<std::string, Tensor> bound_;
};

struct SceneFeatures {
  struct Level {
    std::vector<Vec3> points;
    Tensor features;            // [points x width_l]
    std::vector<int> to_level0; // index of each point in the level-0 cloud
  };
  std::vector<Level> levels;  // [0] = full resolution ... [L-1] = coarsest
  Tensor level0_map;          // [N x width], used for mask dot products
};

// Learnable query embeddings, one row per token.
struct QueryTokens {
  Tensor grasp;  // [G x width]
  Tensor place;  // [P x width]
};

struct ContactMaskSet {
  struct Set {
    Tensor grasp;  // [G x N], sigmoid probabilities
    Tensor place;  // [P x N]
  };
  Tensor grasp_masks;        // final [G x N]
  Tensor place_masks;        // final [P x N]
  Tensor objectness;         // [G x 1]
  std::vector<Set> interim;  // one per decoder block plus the initial set;
                             // interim.back() aliases the final masks
};

struct ActionParams {
  Tensor contact_dir;   // [N x 3], unnormalized
  Tensor approach_dir;  // [N x 3], unnormalized
  Tensor width;         // [N x 1], in [0, max_width]
};

// Multi-resolution encoder: per level, furthest point sampling (seeded at the
// lexicographically smallest point), fixed-radius grouping, a shared
// per-group MLP and channelwise max pooling; then feature propagation back to
// full resolution. Requires cloud.size() == config.n_points.
SceneFeatures encode_scene(Tape& tape, BoundParams& params,
                           const PointCloud& cloud, const ModelConfig& config);

// Mini point network over the object cloud centered at its bottom center;
// returns a single [1 x width] feature added to every place token.
Tensor encode_object(Tape& tape, BoundParams& params,
                     const PointCloud& object_cloud, const ModelConfig& config);

// The learned query embeddings from the parameter set.
QueryTokens query_tokens(Tape& tape, BoundParams& params,
                         const ModelConfig& config);

// Transformer decoder over G grasp + P place tokens. Before every block (and
// once more at the end) mask probabilities are formed from the current tokens
// against the level-0 map; each block's cross attention is restricted to the
// seed points whose interim probability exceeds 0.5 (rows with no active seed
// attend everywhere). Blocks cycle cross-attention over levels L-1 .. 1,
// coarse to fine. object_feat, when given, is added to every place token.
ContactMaskSet decode_contacts(Tape& tape, BoundParams& params,
                               const SceneFeatures& scene,
                               const QueryTokens& queries,
                               const std::optional<Tensor>& object_feat,
                               const ModelConfig& config);

// 3-layer MLP over the level-0 map giving per-point contact direction,
// approach direction and width (sigmoid scaled to [0, max_width]).
ActionParams predict_action_params(Tape& tape, BoundParams& params,
                                   const SceneFeatures& scene,
                                   const ModelConfig& config);

struct ForwardResult {
  SceneFeatures scene;
  ContactMaskSet masks;
  ActionParams actions;
};

// Full forward pass; object_cloud conditions the place tokens when present.
ForwardResult forward(Tape& tape, BoundParams& params,
                      const PointCloud& scene_cloud,
                      const PointCloud* object_cloud, const ModelConfig& config);

// Fourier position encoding of 3D points: [sin, cos](2^f * x_c) over
// pos_freqs octaves and 3 coordinates -> [n x 6*pos_freqs].
std::vector<double> fourier_encoding(const std::vector<Vec3>& points,
                                     int pos_freqs);

}  // namespace m2t2
