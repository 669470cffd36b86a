#include "m2t2/network.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "m2t2/rng.hpp"

namespace m2t2 {

namespace {

int pow4(int l) { return 1 << (2 * l); }

std::string idx_name(const char* prefix, int i, const char* suffix) {
  return std::string(prefix) + std::to_string(i) + suffix;
}

// x @ W + b with ReLU
Tensor dense_relu(BoundParams& P, Tensor x, const std::string& stem) {
  return relu(add_rowwise(matmul(x, P(stem + ".w")), P(stem + ".b")));
}

Tensor dense(BoundParams& P, Tensor x, const std::string& stem) {
  return add_rowwise(matmul(x, P(stem + ".w")), P(stem + ".b"));
}

// cross-attention level for block b: coarse-to-fine cycle L-1, L-2, ..., 1
int block_level(const ModelConfig& cfg, int b) {
  return cfg.num_levels - 1 - (b % (cfg.num_levels - 1));
}

}  // namespace

void ModelConfig::validate() const {
  if (num_levels < 2) throw std::invalid_argument("config: need at least 2 levels");
  if (n_points < 1 || n_points % pow4(num_levels - 1) != 0)
    throw std::invalid_argument(
        "config: point count must be divisible by 4^(levels-1)");
  if (static_cast<int>(level_radius.size()) != num_levels ||
      static_cast<int>(encoder_widths.size()) != num_levels)
    throw std::invalid_argument("config: per-level lists must match num_levels");
  for (double r : level_radius)
    if (r <= 0) throw std::invalid_argument("config: radii must be positive");
  for (int w : encoder_widths)
    if (w < 1) throw std::invalid_argument("config: encoder widths must be >= 1");
  if (grasp_tokens < 1 || place_tokens < 1)
    throw std::invalid_argument("config: need at least one token of each kind");
  if (width < 2) throw std::invalid_argument("config: width must be >= 2");
  if (decoder_blocks < 1 || ffn_hidden < 1 || group_cap < 1 || pos_freqs < 1)
    throw std::invalid_argument("config: decoder sizes must be positive");
  if (max_width <= 0) throw std::invalid_argument("config: max_width must be positive");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg;
  cfg.n_points = 128;
  cfg.width = 8;
  cfg.ffn_hidden = 16;
  cfg.group_cap = 8;
  cfg.encoder_widths = {4, 8, 8, 8};
  return cfg;
}

ModelParams::Entry& ModelParams::at(const std::string& name) {
  auto it = entries.find(name);
  if (it == entries.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

const ModelParams::Entry& ModelParams::at(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

void ModelParams::zero_grad() {
  for (auto& [name, e] : entries) std::fill(e.grad.begin(), e.grad.end(), 0.0);
}

std::size_t ModelParams::count_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries)
    n += static_cast<std::size_t>(e.rows) * e.cols;
  return n;
}

ModelParams ModelParams::initialize(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams params;
  auto shape = [&params](const std::string& name, int rows, int cols) {
    Entry e;
    e.rows = rows;
    e.cols = cols;
    params.entries.emplace(name, std::move(e));
  };
  auto mlp2 = [&shape](const std::string& stem, int in, int hidden, int out) {
    shape(stem + ".l1.w", in, hidden);
    shape(stem + ".l1.b", 1, hidden);
    shape(stem + ".l2.w", hidden, out);
    shape(stem + ".l2.b", 1, out);
  };

  const int L = cfg.num_levels;
  const int w = cfg.width;
  const std::vector<int>& e = cfg.encoder_widths;

  for (int l = 0; l < L; ++l) {
    int in = 3 + (l == 0 ? 0 : e[l - 1]);
    mlp2(idx_name("enc.sa", l, ""), in, e[l], e[l]);
  }
  for (int l = L - 2; l >= 0; --l) {
    int above = (l == L - 2) ? e[L - 1] : w;
    mlp2(idx_name("enc.fp", l, ""), above + e[l], w, w);
  }
  mlp2("enc.fpr", w, w, w);

  mlp2("obj", 3, w, w);  // per-point layers
  shape("obj.l3.w", w, w);
  shape("obj.l3.b", 1, w);

  shape("dec.query.grasp", cfg.grasp_tokens, w);
  shape("dec.query.place", cfg.place_tokens, w);
  for (int b = 0; b < cfg.decoder_blocks; ++b) {
    const std::string stem = idx_name("dec.b", b, "");
    const int kin = (block_level(cfg, b) == L - 1) ? e[L - 1] : w;
    for (const char* nm : {".xq", ".xo", ".sq", ".sk", ".sv", ".so"}) {
      shape(stem + nm + ".w", w, w);
      shape(stem + nm + ".b", 1, w);
    }
    for (const char* nm : {".xk", ".xv"}) {
      shape(stem + nm + ".w", kin, w);
      shape(stem + nm + ".b", 1, w);
    }
    shape(stem + ".pe.w", 6 * cfg.pos_freqs, w);
    shape(stem + ".ff1.w", w, cfg.ffn_hidden);
    shape(stem + ".ff1.b", 1, cfg.ffn_hidden);
    shape(stem + ".ff2.w", cfg.ffn_hidden, w);
    shape(stem + ".ff2.b", 1, w);
    for (const char* nm : {".ln1", ".ln2", ".ln3"}) {
      shape(stem + nm + ".g", 1, w);
      shape(stem + nm + ".b", 1, w);
    }
  }

  mlp2("head.obj", w, w, 1);
  shape("head.act.l1.w", w, w);
  shape("head.act.l1.b", 1, w);
  shape("head.act.l2.w", w, w);
  shape("head.act.l2.b", 1, w);
  shape("head.act.l3.w", w, 7);
  shape("head.act.l3.b", 1, 7);

  // deterministic fill in alphabetical (map) order
  Pcg32 rng(seed, 17);
  for (auto& [name, entry] : params.entries) {
    const std::size_t n = static_cast<std::size_t>(entry.rows) * entry.cols;
    entry.value.assign(n, 0.0);
    entry.grad.assign(n, 0.0);
    const bool gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
    const bool bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    if (gain) {
      std::fill(entry.value.begin(), entry.value.end(), 1.0);
    } else if (bias) {
      // zeros
    } else if (name.rfind("dec.query.", 0) == 0) {
      for (double& v : entry.value) v = 0.02 * rng.normal();
    } else {
      const double limit = std::sqrt(6.0 / (entry.rows + entry.cols));
      for (double& v : entry.value) v = rng.uniform(-limit, limit);
    }
  }
  return params;
}

BoundParams::BoundParams(const ModelParams& shapes,
                         const std::vector<Tensor>& bound) {
  if (bound.size() != shapes.entries.size())
    throw std::invalid_argument("pre-bound parameter count mismatch");
  std::size_t i = 0;
  for (const auto& [name, entry] : shapes.entries) {
    const Tensor& t = bound[i++];
    if (t.rows() != entry.rows || t.cols() != entry.cols)
      throw std::invalid_argument("pre-bound shape mismatch for " + name);
    bound_.emplace(name, t);
  }
}

Tensor BoundParams::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  if (!params_ || !tape_)
    throw std::invalid_argument("parameter not pre-bound: " + name);
  const ModelParams::Entry& e = params_->at(name);
  Tensor t = tape_->input(e.rows, e.cols, e.value, trainable_);
  bound_.emplace(name, t);
  return t;
}

std::vector<double> fourier_encoding(const std::vector<Vec3>& points,
                                     int pos_freqs) {
  const int cols = 6 * pos_freqs;
  std::vector<double> out(points.size() * static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < points.size(); ++i) {
    double* row = out.data() + i * cols;
    int c = 0;
    for (int axis = 0; axis < 3; ++axis) {
      const double v = points[i][axis];
      for (int f = 0; f < pos_freqs; ++f) {
        const double s = std::ldexp(v, f);  // 2^f * v
        row[c++] = std::sin(s);
        row[c++] = std::cos(s);
      }
    }
  }
  return out;
}

SceneFeatures encode_scene(Tape& tape, BoundParams& params,
                           const PointCloud& cloud, const ModelConfig& cfg) {
  cfg.validate();
  cloud.validate();
  if (cloud.size() != cfg.n_points)
    throw std::invalid_argument("encode_scene: cloud must have config.n_points points");

  const int L = cfg.num_levels;
  SceneFeatures out;
  out.levels.resize(L);

  out.levels[0].points = cloud.points;
  out.levels[0].to_level0.resize(cloud.size());
  std::iota(out.levels[0].to_level0.begin(), out.levels[0].to_level0.end(), 0);
  for (int l = 1; l < L; ++l) {
    const auto& prev = out.levels[l - 1];
    const int m = cfg.n_points / pow4(l);
    std::vector<int> idx =
        furthest_point_sample(prev.points, m, lexicographic_min_index(prev.points));
    out.levels[l].points.reserve(m);
    out.levels[l].to_level0.reserve(m);
    for (int i : idx) {
      out.levels[l].points.push_back(prev.points[i]);
      out.levels[l].to_level0.push_back(prev.to_level0[i]);
    }
  }

  // set abstraction: group previous level around this level's points
  std::vector<Tensor> sa(L);
  for (int l = 0; l < L; ++l) {
    const std::vector<Vec3>& src = out.levels[l == 0 ? 0 : l - 1].points;
    const std::vector<Vec3>& ctr = out.levels[l].points;
    const int m = static_cast<int>(ctr.size());
    const int cap = cfg.group_cap;
    auto groups = radius_neighbors(src, ctr, cfg.level_radius[l], cap);

    std::vector<double> rel(static_cast<std::size_t>(m) * cap * 3);
    std::vector<int> flat(static_cast<std::size_t>(m) * cap);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < cap; ++j) {
        const int s = groups[i][j];
        flat[static_cast<std::size_t>(i) * cap + j] = s;
        Vec3 d = src[s] - ctr[i];
        double* r = rel.data() + (static_cast<std::size_t>(i) * cap + j) * 3;
        r[0] = d.x();
        r[1] = d.y();
        r[2] = d.z();
      }
    Tensor rel_t = tape.constant(m * cap, 3, rel);
    Tensor in = (l == 0) ? rel_t : concat_cols(rel_t, gather_rows(sa[l - 1], flat));
    const std::string stem = idx_name("enc.sa", l, "");
    Tensor h = dense_relu(params, in, stem + ".l1");
    h = dense_relu(params, h, stem + ".l2");
    sa[l] = group_maxpool(h, cap);
  }

  // feature propagation back to full resolution
  out.levels[L - 1].features = sa[L - 1];
  Tensor above = sa[L - 1];
  for (int l = L - 2; l >= 0; --l) {
    const auto& coarse = out.levels[l + 1].points;
    const auto& fine = out.levels[l].points;
    InterpolationWeights iw = interpolation_weights(
        coarse, fine, std::min<int>(3, static_cast<int>(coarse.size())));
    Tensor interp = weighted_gather(above, iw.indices, iw.weights, iw.k);
    const std::string stem = idx_name("enc.fp", l, "");
    Tensor h = dense_relu(params, concat_cols(interp, sa[l]), stem + ".l1");
    h = dense_relu(params, h, stem + ".l2");
    out.levels[l].features = h;
    above = h;
  }

  // final per-point refinement; last layer linear so mask logits are unbounded
  Tensor h = dense_relu(params, above, "enc.fpr.l1");
  out.level0_map = dense(params, h, "enc.fpr.l2");
  out.levels[0].features = out.level0_map;
  return out;
}

Tensor encode_object(Tape& tape, BoundParams& params,
                     const PointCloud& object_cloud, const ModelConfig& cfg) {
  object_cloud.validate();
  const int n = object_cloud.size();
  const Vec3 center = bottom_center(object_cloud);
  std::vector<double> xyz(static_cast<std::size_t>(n) * 3);
  for (int i = 0; i < n; ++i) {
    Vec3 d = object_cloud.points[i] - center;
    xyz[3 * static_cast<std::size_t>(i) + 0] = d.x();
    xyz[3 * static_cast<std::size_t>(i) + 1] = d.y();
    xyz[3 * static_cast<std::size_t>(i) + 2] = d.z();
  }
  Tensor h = dense_relu(params, tape.constant(n, 3, xyz), "obj.l1");
  h = dense_relu(params, h, "obj.l2");
  return dense(params, group_maxpool(h, n), "obj.l3");
}

QueryTokens query_tokens(Tape& tape, BoundParams& params, const ModelConfig& cfg) {
  (void)tape;
  (void)cfg;
  return QueryTokens{params("dec.query.grasp"), params("dec.query.place")};
}

namespace {

struct MaskStage {
  ContactMaskSet::Set set;
  Tensor probs;  // [T x N], grasp rows then place rows
};

MaskStage make_masks(Tensor tokens, Tensor level0_map, int g_tokens) {
  Tensor probs = sigmoid(matmul_nt(tokens, level0_map));
  MaskStage stage;
  stage.probs = probs;
  stage.set.grasp = slice_rows(probs, 0, g_tokens);
  stage.set.place = slice_rows(probs, g_tokens, probs.rows());
  return stage;
}

}  // namespace

ContactMaskSet decode_contacts(Tape& tape, BoundParams& params,
                               const SceneFeatures& scene,
                               const QueryTokens& queries,
                               const std::optional<Tensor>& object_feat,
                               const ModelConfig& cfg) {
  const int g_tokens = cfg.grasp_tokens;
  const int t_tokens = cfg.grasp_tokens + cfg.place_tokens;
  if (queries.grasp.rows() != cfg.grasp_tokens ||
      queries.place.rows() != cfg.place_tokens ||
      queries.grasp.cols() != cfg.width || queries.place.cols() != cfg.width)
    throw std::invalid_argument("decode_contacts: query shapes disagree with config");
  if (static_cast<int>(scene.levels.size()) != cfg.num_levels)
    throw std::invalid_argument("decode_contacts: level count mismatch");

  Tensor place = queries.place;
  if (object_feat) {
    if (object_feat->rows() != 1 || object_feat->cols() != cfg.width)
      throw std::invalid_argument("decode_contacts: object feature must be [1 x width]");
    place = add_rowwise(place, *object_feat);
  }
  Tensor tokens = concat_rows(queries.grasp, place);

  ContactMaskSet out;
  std::vector<MaskStage> stages;
  stages.push_back(make_masks(tokens, scene.level0_map, g_tokens));

  for (int b = 0; b < cfg.decoder_blocks; ++b) {
    const std::string stem = idx_name("dec.b", b, "");
    const int lev = block_level(cfg, b);
    const SceneFeatures::Level& level = scene.levels[lev];
    const int m = static_cast<int>(level.points.size());

    // attention mask: current interim probabilities at the level's seed points
    const Tensor& probs = stages.back().probs;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(t_tokens) * m, 1);
    if (!cfg.attend_everywhere)
      for (int t = 0; t < t_tokens; ++t)
        for (int j = 0; j < m; ++j)
          mask[static_cast<std::size_t>(t) * m + j] =
              probs.at(t, level.to_level0[j]) > 0.5 ? 1 : 0;

    Tensor pe = tape.constant(
        m, 6 * cfg.pos_freqs, fourier_encoding(level.points, cfg.pos_freqs));
    Tensor q = dense(params, tokens, stem + ".xq");
    Tensor k = add(dense(params, level.features, stem + ".xk"),
                   matmul(pe, params(stem + ".pe.w")));
    Tensor v = dense(params, level.features, stem + ".xv");
    AttentionResult cross = masked_attention(q, k, v, mask);
    tokens = layernorm(add(tokens, dense(params, cross.out, stem + ".xo")),
                       params(stem + ".ln1.g"), params(stem + ".ln1.b"));

    std::vector<std::uint8_t> all(static_cast<std::size_t>(t_tokens) * t_tokens, 1);
    AttentionResult self = masked_attention(dense(params, tokens, stem + ".sq"),
                                            dense(params, tokens, stem + ".sk"),
                                            dense(params, tokens, stem + ".sv"), all);
    tokens = layernorm(add(tokens, dense(params, self.out, stem + ".so")),
                       params(stem + ".ln2.g"), params(stem + ".ln2.b"));

    Tensor ff = dense(params, relu(dense(params, tokens, stem + ".ff1")), stem + ".ff2");
    tokens = layernorm(add(tokens, ff), params(stem + ".ln3.g"),
                       params(stem + ".ln3.b"));

    stages.push_back(make_masks(tokens, scene.level0_map, g_tokens));
  }

  for (const MaskStage& s : stages) out.interim.push_back(s.set);
  out.grasp_masks = stages.back().set.grasp;
  out.place_masks = stages.back().set.place;

  Tensor g_final = slice_rows(tokens, 0, g_tokens);
  out.objectness = sigmoid(dense(params, dense_relu(params, g_final, "head.obj.l1"),
                                 "head.obj.l2"));
  return out;
}

ActionParams predict_action_params(Tape& tape, BoundParams& params,
                                   const SceneFeatures& scene,
                                   const ModelConfig& cfg) {
  (void)tape;
  Tensor h = dense_relu(params, scene.level0_map, "head.act.l1");
  h = dense_relu(params, h, "head.act.l2");
  Tensor raw = dense(params, h, "head.act.l3");
  ActionParams out;
  out.contact_dir = slice_cols(raw, 0, 3);
  out.approach_dir = slice_cols(raw, 3, 6);
  out.width = scale(sigmoid(slice_cols(raw, 6, 7)), cfg.max_width);
  return out;
}

ForwardResult forward(Tape& tape, BoundParams& params,
                      const PointCloud& scene_cloud,
                      const PointCloud* object_cloud, const ModelConfig& cfg) {
  ForwardResult result;
  result.scene = encode_scene(tape, params, scene_cloud, cfg);
  std::optional<Tensor> object_feat;
  if (object_cloud)
    object_feat = encode_object(tape, params, *object_cloud, cfg);
  QueryTokens queries = query_tokens(tape, params, cfg);
  result.masks = decode_contacts(tape, params, result.scene, queries, object_feat, cfg);
  result.actions = predict_action_params(tape, params, result.scene, cfg);
  return result;
}

}  // namespace m2t2
