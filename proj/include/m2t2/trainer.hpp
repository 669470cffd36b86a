#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "m2t2/checkpoint.hpp"
#include "m2t2/datagen.hpp"
#include "m2t2/inference.hpp"
#include "m2t2/losses.hpp"
#include "m2t2/network.hpp"

namespace m2t2 {

enum class TrainMode { grasp, place, joint };

TrainMode train_mode_from_string(const std::string& s);
std::string to_string(TrainMode mode);

struct TrainConfig {
  double learning_rate = 0.0008;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  int batch_size = 4;
  int epochs = 30;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::joint;
  LossWeights loss_weights;
  LossConfig loss_config;
  ModelConfig model;
  std::string data_dir;  // scene bundle directories
  std::string out_dir;   // checkpoints and metrics.jsonl

  void validate() const;
};

// JSON round-trip; absent fields keep their defaults.
TrainConfig train_config_from_json(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& config);

DatagenConfig datagen_config_from_json(const std::string& text);
DatagenConfig load_datagen_config(const std::string& path);

// Model shape embedded in checkpoints ("config.*" records), so eval/predict
// need only the checkpoint file.
TensorDict model_config_to_dict(const ModelConfig& config);
ModelConfig model_config_from_dict(const TensorDict& dict);

struct TrainState {
  std::int64_t step = 0;
  ModelParams params;
  // first and second AdamW moments, keyed like the parameters
  std::map<std::string, std::vector<double>> moment1, moment2;
  double epoch_loss = 0.0;  // mean total loss over the last finished epoch
  double best_loss = 0.0;   // best epoch mean so far
  std::int64_t best_epoch = -1;
};

// One decoupled-weight-decay adaptive update over every parameter entry (map
// order), consuming the gradients accumulated in params. Throws when any
// gradient is non-finite, naming the parameter.
void optimizer_step(TrainState& state, const TrainConfig& config);

// Checkpoint contents: parameters, "config.*" model shape, "opt.*" optimizer
// state. Loading restores bit-identical training state.
TensorDict state_to_dict(const TrainState& state, const ModelConfig& config);
TrainState state_from_dict(const TensorDict& dict);

// Training targets straight from a bundle: one mask/pose-list pair per object
// holding at least one grasp label (ascending id); placement rows only when
// the scene has a held object.
GroundTruthScene ground_truth_scene(const SceneBundle& bundle);
PointCloud held_object_cloud(const SceneBundle& bundle);

// Scene directories under root (sorted by name) that contain a manifest.
std::vector<std::string> list_scene_dirs(const std::string& root);

// `configured` when non-empty, otherwise the M2T2_DATA_DIR environment
// variable, otherwise "".
std::string resolve_data_dir(const std::string& configured);

struct StepRecord {
  std::int64_t step = 0;
  double total = 0.0, objectness = 0.0, mask = 0.0, adds = 0.0, placing = 0.0;
  double wall_time = 0.0;
};

// Full training loop: shuffles scene order with Pcg32(seed, epoch), accumulates
// gradients over each batch in shuffled order, steps the optimizer, appends a
// JSON line per step to out_dir/metrics.jsonl and writes
// out_dir/epoch_NNNN.ckpt after each epoch (plus best.ckpt on improvement).
// Returns the final state. `records`, when given, receives every step record.
TrainState train(const TrainConfig& config,
                 std::vector<StepRecord>* records = nullptr);

// Loss of one scene under the mode's effective weights (zeroed grasp terms in
// place mode and vice versa); exposed for tests.
LossWeights effective_weights(const LossWeights& weights, TrainMode mode);

// Runs the model over the scenes and pools proposals into one curve.
// mode selects grasping or placing; scenes without a held object are skipped
// in place mode.
PrecisionCoverageCurve evaluate_model(
    const ModelParams& params, const ModelConfig& model,
    const std::vector<SceneBundle>& scenes, TrainMode mode,
    const GripperModel& gripper, const DatagenConfig& config = DatagenConfig{},
    const std::vector<double>& thresholds = default_thresholds());

// Matching curve built from uniform random proposals (count per scene).
PrecisionCoverageCurve evaluate_random_baseline(
    const std::vector<SceneBundle>& scenes, TrainMode mode, int count,
    std::uint64_t seed, const GripperModel& gripper,
    const DatagenConfig& config = DatagenConfig{},
    const std::vector<double>& thresholds = default_thresholds());

// Precision of the smallest prediction set whose coverage reaches `coverage`
// (scanning thresholds high to low); 0 when the curve never reaches it.
double precision_at_coverage(const PrecisionCoverageCurve& curve,
                             double coverage);

}  // namespace m2t2
