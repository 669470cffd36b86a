#include "m2t2/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "m2t2/rng.hpp"

namespace m2t2 {

namespace fs = std::filesystem;
using nlohmann::json;

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "grasp") return TrainMode::grasp;
  if (s == "place") return TrainMode::place;
  if (s == "joint") return TrainMode::joint;
  throw std::invalid_argument("unknown training mode: " + s);
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::grasp: return "grasp";
    case TrainMode::place: return "place";
    default: return "joint";
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw std::invalid_argument("moment decays must lie in [0, 1)");
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be positive");
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight decay must be nonnegative");
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (!(loss_weights.objectness >= 0 && loss_weights.mask >= 0 &&
        loss_weights.adds >= 0 && loss_weights.place >= 0))
    throw std::invalid_argument("loss weights must be nonnegative");
  model.validate();
}

// --- JSON configs --------------------------------------------------------------

static void read_model_json(const json& m, ModelConfig& c) {
  c.n_points = m.value("n_points", c.n_points);
  c.num_levels = m.value("num_levels", c.num_levels);
  c.grasp_tokens = m.value("grasp_tokens", c.grasp_tokens);
  c.place_tokens = m.value("place_tokens", c.place_tokens);
  c.width = m.value("width", c.width);
  c.decoder_blocks = m.value("decoder_blocks", c.decoder_blocks);
  c.ffn_hidden = m.value("ffn_hidden", c.ffn_hidden);
  c.group_cap = m.value("group_cap", c.group_cap);
  c.pos_freqs = m.value("pos_freqs", c.pos_freqs);
  c.max_width = m.value("max_width", c.max_width);
  c.level_radius = m.value("level_radius", c.level_radius);
  c.encoder_widths = m.value("encoder_widths", c.encoder_widths);
}

static json model_json(const ModelConfig& c) {
  return json{{"n_points", c.n_points},
              {"num_levels", c.num_levels},
              {"grasp_tokens", c.grasp_tokens},
              {"place_tokens", c.place_tokens},
              {"width", c.width},
              {"decoder_blocks", c.decoder_blocks},
              {"ffn_hidden", c.ffn_hidden},
              {"group_cap", c.group_cap},
              {"pos_freqs", c.pos_freqs},
              {"max_width", c.max_width},
              {"level_radius", c.level_radius},
              {"encoder_widths", c.encoder_widths}};
}

TrainConfig train_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mode")) c.mode = train_mode_from_string(j.at("mode"));
  if (j.contains("loss_weights")) {
    const json& w = j.at("loss_weights");
    c.loss_weights.objectness = w.value("objectness", c.loss_weights.objectness);
    c.loss_weights.mask = w.value("mask", c.loss_weights.mask);
    c.loss_weights.adds = w.value("adds", c.loss_weights.adds);
    c.loss_weights.place = w.value("place", c.loss_weights.place);
  }
  if (j.contains("loss_config")) {
    const json& l = j.at("loss_config");
    c.loss_config.topk_grasp = l.value("topk_grasp", c.loss_config.topk_grasp);
    c.loss_config.topk_place = l.value("topk_place", c.loss_config.topk_place);
  }
  if (j.contains("model")) read_model_json(j.at("model"), c.model);
  c.data_dir = j.value("data_dir", c.data_dir);
  c.out_dir = j.value("out_dir", c.out_dir);
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return train_config_from_json(text);
}

std::string train_config_to_json(const TrainConfig& c) {
  json j{{"learning_rate", c.learning_rate},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"epsilon", c.epsilon},
         {"weight_decay", c.weight_decay},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"seed", c.seed},
         {"mode", to_string(c.mode)},
         {"loss_weights",
          {{"objectness", c.loss_weights.objectness},
           {"mask", c.loss_weights.mask},
           {"adds", c.loss_weights.adds},
           {"place", c.loss_weights.place}}},
         {"loss_config",
          {{"topk_grasp", c.loss_config.topk_grasp},
           {"topk_place", c.loss_config.topk_place}}},
         {"model", model_json(c.model)},
         {"data_dir", c.data_dir},
         {"out_dir", c.out_dir}};
  return j.dump(2);
}

DatagenConfig datagen_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  DatagenConfig c;
  c.min_objects = j.value("min_objects", c.min_objects);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.table_min = j.value("table_min", c.table_min);
  c.table_max = j.value("table_max", c.table_max);
  c.box_min = j.value("box_min", c.box_min);
  c.box_max = j.value("box_max", c.box_max);
  c.height_min = j.value("height_min", c.height_min);
  c.height_max = j.value("height_max", c.height_max);
  c.cyl_r_min = j.value("cyl_r_min", c.cyl_r_min);
  c.cyl_r_max = j.value("cyl_r_max", c.cyl_r_max);
  c.n_points = j.value("n_points", c.n_points);
  c.num_rotation_bins = j.value("num_rotation_bins", c.num_rotation_bins);
  c.camera_res = j.value("camera_res", c.camera_res);
  c.grid_step = j.value("grid_step", c.grid_step);
  c.surface_step = j.value("surface_step", c.surface_step);
  c.grasp_grid = j.value("grasp_grid", c.grasp_grid);
  c.snap_tolerance = j.value("snap_tolerance", c.snap_tolerance);
  c.clearance = j.value("clearance", c.clearance);
  c.friction = j.value("friction", c.friction);
  c.min_separation = j.value("min_separation", c.min_separation);
  c.max_place_attempts = j.value("max_place_attempts", c.max_place_attempts);
  c.cam_elev_min = j.value("cam_elev_min", c.cam_elev_min);
  c.cam_elev_max = j.value("cam_elev_max", c.cam_elev_max);
  c.cam_dist_min = j.value("cam_dist_min", c.cam_dist_min);
  c.cam_dist_max = j.value("cam_dist_max", c.cam_dist_max);
  return c;
}

DatagenConfig load_datagen_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return datagen_config_from_json(text);
}

// --- Model config in checkpoints ----------------------------------------------

static NamedTensor scalar_record(double v) { return {{1}, {v}}; }

TensorDict model_config_to_dict(const ModelConfig& c) {
  TensorDict d;
  d["config.n_points"] = scalar_record(c.n_points);
  d["config.num_levels"] = scalar_record(c.num_levels);
  d["config.grasp_tokens"] = scalar_record(c.grasp_tokens);
  d["config.place_tokens"] = scalar_record(c.place_tokens);
  d["config.width"] = scalar_record(c.width);
  d["config.decoder_blocks"] = scalar_record(c.decoder_blocks);
  d["config.ffn_hidden"] = scalar_record(c.ffn_hidden);
  d["config.group_cap"] = scalar_record(c.group_cap);
  d["config.pos_freqs"] = scalar_record(c.pos_freqs);
  d["config.max_width"] = scalar_record(c.max_width);
  NamedTensor radius{{static_cast<std::uint32_t>(c.level_radius.size())},
                     c.level_radius};
  d["config.level_radius"] = std::move(radius);
  NamedTensor widths{{static_cast<std::uint32_t>(c.encoder_widths.size())}, {}};
  for (int w : c.encoder_widths) widths.data.push_back(w);
  d["config.encoder_widths"] = std::move(widths);
  return d;
}

static double dict_scalar(const TensorDict& d, const std::string& key) {
  auto it = d.find(key);
  if (it == d.end() || it->second.data.size() != 1)
    throw std::runtime_error("checkpoint misses scalar record " + key);
  return it->second.data[0];
}

ModelConfig model_config_from_dict(const TensorDict& d) {
  ModelConfig c;
  c.n_points = static_cast<int>(dict_scalar(d, "config.n_points"));
  c.num_levels = static_cast<int>(dict_scalar(d, "config.num_levels"));
  c.grasp_tokens = static_cast<int>(dict_scalar(d, "config.grasp_tokens"));
  c.place_tokens = static_cast<int>(dict_scalar(d, "config.place_tokens"));
  c.width = static_cast<int>(dict_scalar(d, "config.width"));
  c.decoder_blocks = static_cast<int>(dict_scalar(d, "config.decoder_blocks"));
  c.ffn_hidden = static_cast<int>(dict_scalar(d, "config.ffn_hidden"));
  c.group_cap = static_cast<int>(dict_scalar(d, "config.group_cap"));
  c.pos_freqs = static_cast<int>(dict_scalar(d, "config.pos_freqs"));
  c.max_width = dict_scalar(d, "config.max_width");
  auto radius = d.find("config.level_radius");
  auto widths = d.find("config.encoder_widths");
  if (radius == d.end() || widths == d.end())
    throw std::runtime_error("checkpoint misses model shape records");
  c.level_radius = radius->second.data;
  c.encoder_widths.clear();
  for (double w : widths->second.data)
    c.encoder_widths.push_back(static_cast<int>(w));
  c.validate();
  return c;
}

// --- Optimizer -----------------------------------------------------------------

void optimizer_step(TrainState& state, const TrainConfig& config) {
  for (const auto& [name, entry] : state.params.entries) {
    if (!entry.grad.empty() && entry.grad.size() != entry.value.size())
      throw std::runtime_error("gradient shaped unlike parameter " + name);
    for (std::size_t i = 0; i < entry.grad.size(); ++i)
      if (!std::isfinite(entry.grad[i]))
        throw std::runtime_error("non-finite gradient in parameter " + name +
                                 " at entry " + std::to_string(i));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (auto& [name, entry] : state.params.entries) {
    auto& m = state.moment1[name];
    auto& v = state.moment2[name];
    if (m.empty()) m.assign(entry.value.size(), 0.0);
    if (v.empty()) v.assign(entry.value.size(), 0.0);
    if (m.size() != entry.value.size() || v.size() != entry.value.size())
      throw std::runtime_error("optimizer moments shaped unlike parameter " + name);
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double g = i < entry.grad.size() ? entry.grad[i] : 0.0;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      entry.value[i] -= config.learning_rate *
                        (mhat / (std::sqrt(vhat) + config.epsilon) +
                         config.weight_decay * entry.value[i]);
    }
  }
}

// --- Training state (de)serialization -------------------------------------------

TensorDict state_to_dict(const TrainState& state, const ModelConfig& config) {
  TensorDict d = params_to_dict(state.params);
  for (const auto& [name, entry] : state.params.entries) {
    const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(entry.rows),
                                          static_cast<std::uint32_t>(entry.cols)};
    auto m = state.moment1.find(name);
    auto v = state.moment2.find(name);
    NamedTensor tm{dims, m != state.moment1.end()
                             ? m->second
                             : std::vector<double>(entry.value.size(), 0.0)};
    NamedTensor tv{dims, v != state.moment2.end()
                             ? v->second
                             : std::vector<double>(entry.value.size(), 0.0)};
    d["opt.m." + name] = std::move(tm);
    d["opt.v." + name] = std::move(tv);
  }
  d["opt.step"] = scalar_record(static_cast<double>(state.step));
  d["opt.epoch_loss"] = scalar_record(state.epoch_loss);
  d["opt.best_loss"] = scalar_record(state.best_loss);
  d["opt.best_epoch"] = scalar_record(static_cast<double>(state.best_epoch));
  TensorDict cfg = model_config_to_dict(config);
  d.insert(cfg.begin(), cfg.end());
  return d;
}

TrainState state_from_dict(const TensorDict& dict) {
  TrainState state;
  for (const auto& [name, tensor] : dict) {
    if (name.rfind("opt.", 0) == 0 || name.rfind("config.", 0) == 0) continue;
    if (tensor.dims.size() != 2)
      throw std::runtime_error("parameter record " + name + " is not rank 2");
    ModelParams::Entry entry;
    entry.rows = static_cast<int>(tensor.dims[0]);
    entry.cols = static_cast<int>(tensor.dims[1]);
    entry.value = tensor.data;
    entry.grad.assign(tensor.data.size(), 0.0);
    state.params.entries.emplace(name, std::move(entry));
  }
  for (const auto& [name, tensor] : dict) {
    if (name.rfind("opt.m.", 0) == 0) state.moment1[name.substr(6)] = tensor.data;
    if (name.rfind("opt.v.", 0) == 0) state.moment2[name.substr(6)] = tensor.data;
  }
  if (dict.count("opt.step"))
    state.step = static_cast<std::int64_t>(dict_scalar(dict, "opt.step"));
  if (dict.count("opt.epoch_loss"))
    state.epoch_loss = dict_scalar(dict, "opt.epoch_loss");
  if (dict.count("opt.best_loss"))
    state.best_loss = dict_scalar(dict, "opt.best_loss");
  if (dict.count("opt.best_epoch"))
    state.best_epoch = static_cast<std::int64_t>(dict_scalar(dict, "opt.best_epoch"));
  return state;
}

// --- Dataset helpers -------------------------------------------------------------

GroundTruthScene ground_truth_scene(const SceneBundle& bundle) {
  GroundTruthScene gt;
  const int n = bundle.cloud.size();
  std::map<int, std::vector<const GraspLabel*>> by_object;
  for (const GraspLabel& label : bundle.grasp_labels)
    by_object[label.object_id].push_back(&label);
  for (const auto& [id, labels] : by_object) {
    std::vector<double> mask(n, 0.0);
    std::vector<Pose> poses;
    poses.reserve(labels.size());
    for (const GraspLabel* label : labels) {
      mask[label->contact_index] = 1.0;
      poses.push_back(label->pose);
    }
    gt.grasp_masks.push_back(std::move(mask));
    gt.grasp_poses.push_back(std::move(poses));
  }
  if (bundle.held_object_id >= 0)
    for (const auto& row : bundle.place_masks)
      gt.place_masks.emplace_back(row.begin(), row.end());
  return gt;
}

PointCloud held_object_cloud(const SceneBundle& bundle) {
  PointCloud cloud;
  if (bundle.held_object_id < 0) return cloud;
  for (int i = 0; i < bundle.cloud.size(); ++i)
    if (bundle.cloud.object_ids[i] == bundle.held_object_id)
      cloud.points.push_back(bundle.cloud.points[i]);
  return cloud;
}

std::vector<std::string> list_scene_dirs(const std::string& root) {
  std::vector<std::string> dirs;
  if (!fs::is_directory(root)) return dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
      dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::string resolve_data_dir(const std::string& configured) {
  if (!configured.empty()) return configured;
  const char* env = std::getenv("M2T2_DATA_DIR");
  return env ? env : "";
}

// --- Training loop ---------------------------------------------------------------

LossWeights effective_weights(const LossWeights& weights, TrainMode mode) {
  LossWeights w = weights;
  if (mode == TrainMode::grasp) w.place = 0.0;
  if (mode == TrainMode::place) {
    w.objectness = 0.0;
    w.mask = 0.0;
    w.adds = 0.0;
  }
  return w;
}

namespace {

struct Sample {
  SceneBundle bundle;
  GroundTruthScene gt;
  PointCloud held;
};

std::string epoch_checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04d.ckpt", epoch);
  return buf;
}

}  // namespace

TrainState train(const TrainConfig& config, std::vector<StepRecord>* records) {
  config.validate();
  const std::string data_dir = resolve_data_dir(config.data_dir);
  if (data_dir.empty())
    throw std::invalid_argument("no data directory (config or M2T2_DATA_DIR)");
  const std::vector<std::string> dirs = list_scene_dirs(data_dir);
  if (dirs.empty())
    throw std::runtime_error("no scene directories under " + data_dir);

  std::vector<Sample> samples;
  samples.reserve(dirs.size());
  for (const std::string& dir : dirs) {
    Sample s;
    s.bundle = load_bundle(dir);
    s.gt = ground_truth_scene(s.bundle);
    s.held = held_object_cloud(s.bundle);
    if (s.held.size() == 0) s.gt.place_masks.clear();  // nothing to condition on
    samples.push_back(std::move(s));
  }

  TrainState state;
  state.params = ModelParams::initialize(config.model, config.seed);
  state.best_loss = std::numeric_limits<double>::infinity();

  std::ofstream metrics;
  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    metrics.open(fs::path(config.out_dir) / "metrics.jsonl");
    if (!metrics) throw std::runtime_error("cannot write under " + config.out_dir);
  }

  const GripperModel gripper = GripperModel::parallel_jaw();
  const LossWeights weights = effective_weights(config.loss_weights, config.mode);
  const int n = static_cast<int>(samples.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Pcg32 rng(config.seed, static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);

    double epoch_sum = 0.0;
    int epoch_steps = 0;
    for (int start = 0; start < n; start += config.batch_size) {
      const auto t0 = std::chrono::steady_clock::now();
      const int batch_n = std::min(config.batch_size, n - start);
      state.params.zero_grad();
      StepRecord rec;
      rec.step = state.step + 1;
      for (int b = 0; b < batch_n; ++b) {
        const Sample& s = samples[order[start + b]];
        Tape tape;
        BoundParams bound(tape, state.params, true);
        const PointCloud* held = s.held.size() > 0 ? &s.held : nullptr;
        const ForwardResult out =
            forward(tape, bound, s.bundle.cloud, held, config.model);
        const LossBreakdown loss =
            total_loss(out.masks, out.actions, s.bundle.cloud.points, s.gt,
                       weights, config.loss_config, gripper);
        tape.backward(scale(loss.total, 1.0 / batch_n));
        for (const auto& [name, tensor] : bound.bound()) {
          std::vector<double>& grad = state.params.at(name).grad;
          const std::vector<double>& tg = tensor.grad();
          for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += tg[i];
        }
        rec.total += loss.total_value / batch_n;
        rec.objectness += loss.objectness / batch_n;
        rec.mask += loss.mask / batch_n;
        rec.adds += loss.adds / batch_n;
        rec.placing += loss.placing / batch_n;
      }
      optimizer_step(state, config);
      rec.wall_time =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      epoch_sum += rec.total;
      ++epoch_steps;
      if (metrics.is_open()) {
        const json line{{"step", state.step},
                        {"losses",
                         {{"total", rec.total},
                          {"objectness", rec.objectness},
                          {"mask", rec.mask},
                          {"adds", rec.adds},
                          {"placing", rec.placing}}},
                        {"wall_time", rec.wall_time}};
        metrics << line.dump() << '\n';
      }
      if (records) records->push_back(rec);
    }

    state.epoch_loss = epoch_sum / epoch_steps;
    if (!config.out_dir.empty()) {
      const TensorDict dict = state_to_dict(state, config.model);
      save_checkpoint(
          (fs::path(config.out_dir) / epoch_checkpoint_name(epoch)).string(),
          dict);
      if (state.epoch_loss < state.best_loss) {
        state.best_loss = state.epoch_loss;
        state.best_epoch = epoch;
        save_checkpoint((fs::path(config.out_dir) / "best.ckpt").string(),
                        state_to_dict(state, config.model));
      }
    } else if (state.epoch_loss < state.best_loss) {
      state.best_loss = state.epoch_loss;
      state.best_epoch = epoch;
    }
  }
  return state;
}

// --- Evaluation --------------------------------------------------------------------

PrecisionCoverageCurve evaluate_model(const ModelParams& params,
                                      const ModelConfig& model,
                                      const std::vector<SceneBundle>& scenes,
                                      TrainMode mode, const GripperModel& gripper,
                                      const DatagenConfig& config,
                                      const std::vector<double>& thresholds) {
  if (mode == TrainMode::joint)
    throw std::invalid_argument("evaluation needs a single mode");
  std::vector<CurveAccumulator> partial(scenes.size(),
                                        CurveAccumulator(thresholds));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(scenes.size()); ++i) {
    const SceneBundle& bundle = scenes[i];
    const PointCloud held = held_object_cloud(bundle);
    if (mode == TrainMode::place && held.size() == 0) continue;
    Tape tape;
    BoundParams bound(tape, params, false);
    const ForwardResult out = forward(
        tape, bound, bundle.cloud, held.size() > 0 ? &held : nullptr, model);
    SceneEvaluator eval(bundle, gripper, config);
    std::vector<ScoredPose> proposals;
    std::vector<Pose> gt;
    std::function<bool(const Pose&)> success;
    if (mode == TrainMode::grasp) {
      for (const GraspProposal& p :
           predict_grasps(out.masks, out.actions, bundle.cloud, gripper).all())
        proposals.push_back({p.pose, p.confidence});
      gt = grasp_ground_truth(bundle);
      success = [&eval](const Pose& p) { return eval.grasp_success(p); };
    } else {
      for (const PlacementProposal& p :
           predict_placements(out.masks, bundle.cloud, bundle.ee_pose, held).all())
        proposals.push_back({p.pose, p.confidence});
      gt = placement_ground_truth(bundle);
      success = [&eval](const Pose& p) { return eval.placement_success(p); };
    }
    partial[i].add_scene(proposals, gt, success);
  }
  CurveAccumulator pooled(thresholds);
  for (const CurveAccumulator& acc : partial) pooled.merge(acc);
  return pooled.curve();
}

PrecisionCoverageCurve evaluate_random_baseline(
    const std::vector<SceneBundle>& scenes, TrainMode mode, int count,
    std::uint64_t seed, const GripperModel& gripper, const DatagenConfig& config,
    const std::vector<double>& thresholds) {
  if (mode == TrainMode::joint)
    throw std::invalid_argument("evaluation needs a single mode");
  std::vector<CurveAccumulator> partial(scenes.size(),
                                        CurveAccumulator(thresholds));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(scenes.size()); ++i) {
    const SceneBundle& bundle = scenes[i];
    if (mode == TrainMode::place && bundle.held_object_id < 0) continue;
    SceneEvaluator eval(bundle, gripper, config);
    const std::uint64_t scene_seed = seed + static_cast<std::uint64_t>(i);
    if (mode == TrainMode::grasp) {
      partial[i].add_scene(
          random_grasp_proposals(bundle, gripper, count, scene_seed),
          grasp_ground_truth(bundle),
          [&eval](const Pose& p) { return eval.grasp_success(p); });
    } else {
      partial[i].add_scene(
          random_placement_proposals(bundle, count, scene_seed),
          placement_ground_truth(bundle),
          [&eval](const Pose& p) { return eval.placement_success(p); });
    }
  }
  CurveAccumulator pooled(thresholds);
  for (const CurveAccumulator& acc : partial) pooled.merge(acc);
  return pooled.curve();
}

double precision_at_coverage(const PrecisionCoverageCurve& curve,
                             double coverage) {
  for (const CurvePoint& p : curve.points)
    if (p.coverage >= coverage) return p.precision;
  return 0.0;
}

}  // namespace m2t2
