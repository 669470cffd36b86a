#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "m2t2/inference.hpp"
#include "m2t2/rng.hpp"

using namespace m2t2;

namespace {

DatagenConfig small_config() {
  DatagenConfig cfg;
  cfg.min_objects = 2;
  cfg.max_objects = 4;
  cfg.table_min = 0.6;
  cfg.table_max = 0.8;
  cfg.n_points = 256;
  cfg.camera_res = 128;
  cfg.num_rotation_bins = 4;
  return cfg;
}

ObjectInstance cube_at(int id, double side, double x, double y) {
  ObjectInstance inst;
  inst.id = id;
  inst.shape = Shape::box(side, side, side);
  inst.category = "box";
  inst.pose.translation = Vec3(x, y, 0);
  return inst;
}

Pose straddle(const Vec3& face_point, double width, const GripperModel& gripper) {
  return reconstruct_grasp_pose(
      face_point, GraspParams{Vec3(-1, 0, 0), Vec3(0, 0, 1), width}, gripper);
}

}  // namespace

TEST_CASE("predict_grasps reads masks and actions") {
  Tape tape;
  PointCloud scene;
  scene.points = {Vec3(0, 0, 0.1), Vec3(0.1, 0, 0.1), Vec3(0, 0.1, 0.1),
                  Vec3(0.1, 0.1, 0.1)};
  const GripperModel gripper = GripperModel::parallel_jaw();

  ContactMaskSet masks;
  masks.grasp_masks = tape.constant(2, 4, {0.9, 0.4, 0.7, 0.5,    // token 0
                                           0.99, 0.99, 0.99, 0.99});  // token 1
  masks.objectness = tape.constant(2, 1, {0.8, 0.3});
  ActionParams actions;
  actions.contact_dir = tape.constant(4, 3, {1, 0, 0,   //
                                             0, 1, 0,   //
                                             0, 0, 1,   // parallel to approach
                                             1, 0, 0});
  actions.approach_dir = tape.constant(4, 3, {0, 0, 1,  //
                                              0, 0, 1,  //
                                              0, 0, 1,  //
                                              0, 0, 1});
  actions.width = tape.constant(4, 1, {0.04, 0.06, 0.02, 0.08});

  const GraspProposalSet out = predict_grasps(masks, actions, scene, gripper);
  // token 1 fails the objectness gate; token 0 selects points 0 and 2, but
  // point 2 has contact parallel to approach and cannot form a pose
  REQUIRE(out.tokens.size() == 1);
  CHECK(out.tokens[0].index == 0);
  CHECK(out.tokens[0].objectness == 0.8);
  REQUIRE(out.tokens[0].proposals.size() == 1);
  const GraspProposal& p = out.tokens[0].proposals[0];
  CHECK(p.contact_index == 0);
  CHECK(p.confidence == 0.9);
  CHECK(p.token == 0);
  // orthonormal inputs make the pose exact: t = p + (w/2) c + d a
  CHECK((p.pose.rotation - Mat3::Identity()).norm() == 0.0);
  CHECK((p.pose.translation - Vec3(0.02, 0, 0.1 + gripper.base_to_baseline))
            .norm() == 0.0);

  SUBCASE("empty set when no token clears objectness") {
    ContactMaskSet dead = masks;
    dead.objectness = tape.constant(2, 1, {0.5, 0.2});  // 0.5 is not > 0.5
    CHECK(predict_grasps(dead, actions, scene, gripper).tokens.empty());
  }

  SUBCASE("confidences are the selected mask probabilities") {
    ContactMaskSet live = masks;
    live.objectness = tape.constant(2, 1, {0.8, 0.9});
    const GraspProposalSet both = predict_grasps(live, actions, scene, gripper);
    REQUIRE(both.tokens.size() == 2);
    std::multiset<double> confs;
    for (const GraspProposal& gp : both.tokens[1].proposals)
      confs.insert(gp.confidence);
    CHECK(confs == std::multiset<double>{0.99, 0.99, 0.99});  // point 2 dropped
  }
}

TEST_CASE("predict_grasps poses are rigid for arbitrary network outputs") {
  Pcg32 rng(77);
  const GripperModel gripper = GripperModel::parallel_jaw();
  Tape tape;
  PointCloud scene;
  for (int i = 0; i < 32; ++i)
    scene.points.emplace_back(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                              rng.uniform(0, 0.2));
  auto rand_tensor = [&](int r, int c, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(r) * c);
    for (double& x : v) x = rng.uniform(lo, hi);
    return tape.constant(r, c, v);
  };
  for (int trial = 0; trial < 20; ++trial) {
    ContactMaskSet masks;
    masks.grasp_masks = rand_tensor(3, 32, 0.0, 1.0);
    masks.objectness = rand_tensor(3, 1, 0.0, 1.0);
    ActionParams actions;
    actions.contact_dir = rand_tensor(32, 3, -2.0, 2.0);
    actions.approach_dir = rand_tensor(32, 3, -2.0, 2.0);
    actions.width = rand_tensor(32, 1, 0.0, gripper.max_width);
    for (const GraspProposal& p :
         predict_grasps(masks, actions, scene, gripper).all()) {
      CHECK(p.pose.is_valid(1e-9));
      CHECK(p.confidence > 0.5);
      CHECK(p.confidence <= 1.0);
    }
  }
}

TEST_CASE("predict_placements composes bins with the in-hand pose") {
  Tape tape;
  PointCloud scene;
  scene.points = {Vec3(0.2, -0.1, 0), Vec3(0.1, 0.3, 0)};
  PointCloud object_cloud;
  object_cloud.points = {Vec3(0.02, 0.01, 0.05), Vec3(-0.02, -0.01, 0.0)};
  const Vec3 b = bottom_center(object_cloud);  // (0, 0, 0)
  const GripperModel gripper = GripperModel::parallel_jaw();
  const Pose ee = straddle(Vec3(0.02, 0, 0.03), 0.05, gripper);

  ContactMaskSet masks;
  masks.place_masks = tape.constant(4, 2, {0.9, 0.2,   // bin 0 -> point 0
                                           0.3, 0.1,   //
                                           0.6, 0.7,   // bin 2 -> both
                                           0.2, 0.2});
  const PlacementProposalSet out =
      predict_placements(masks, scene, ee, object_cloud);
  REQUIRE(out.bins.size() == 4);
  REQUIRE(out.bins[0].size() == 1);
  CHECK(out.bins[1].empty());
  REQUIRE(out.bins[2].size() == 2);
  CHECK(out.bins[3].empty());
  CHECK(out.all().size() == 3);

  // identity bin: t = p + (t_ee - b), rotation unchanged
  const PlacementProposal& p0 = out.bins[0][0];
  CHECK(p0.bin == 0);
  CHECK(p0.contact_index == 0);
  CHECK(p0.confidence == 0.9);
  CHECK((p0.pose.rotation - ee.rotation).norm() == 0.0);
  CHECK((p0.pose.translation - (scene.points[0] + ee.translation - b)).norm() <=
        1e-15);

  // bins two apart in a 4-bin wheel differ by exactly a half turn about z
  const Mat3 rel = out.bins[2][0].pose.rotation * p0.pose.rotation.transpose();
  Mat3 half_turn;
  half_turn << -1, 0, 0, 0, -1, 0, 0, 0, 1;
  CHECK((rel - half_turn).norm() <= 1e-9);
}

TEST_CASE("grasped instance association") {
  SceneBundle bundle;
  bundle.table.width = bundle.table.depth = 0.8;
  bundle.instances = {cube_at(0, 0.05, 0, 0), cube_at(1, 0.05, 0.3, 0)};
  const GripperModel gripper = GripperModel::parallel_jaw();
  const SceneEvaluator eval(bundle, gripper);

  const Pose on_a = straddle(Vec3(0.025, 0, 0.03), 0.05, gripper);
  const Pose on_b = straddle(Vec3(0.325, 0, 0.03), 0.05, gripper);
  Pose in_air = on_a;
  in_air.translation.z() += 0.3;

  CHECK(eval.grasped_instance(on_a) == 0);
  CHECK(eval.grasped_instance(on_b) == 1);
  CHECK(eval.grasped_instance(in_air) == -1);

  CHECK(eval.grasp_success(on_a));
  CHECK(eval.grasp_success(on_b));
  CHECK_FALSE(eval.grasp_success(in_air));

  // fingertips through the table
  Pose buried = on_a;
  buried.translation.z() -= 0.1;
  CHECK_FALSE(eval.grasp_success(buried));
}

TEST_CASE("ground-truth labels pass the success predicates") {
  const DatagenConfig cfg = small_config();
  const GripperModel gripper = GripperModel::parallel_jaw();
  int grasp_checked = 0, place_checked = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const SceneBundle bundle = generate_scene(seed, cfg);
    const SceneEvaluator eval(bundle, gripper, cfg);

    for (const GraspLabel& label : bundle.grasp_labels) {
      CHECK(eval.grasped_instance(label.pose) == label.object_id);
      CHECK(eval.grasp_success(label.pose));
      grasp_checked++;
      Pose lifted = label.pose;
      lifted.translation.z() += 0.2;  // above every object in this config
      CHECK_FALSE(eval.grasp_success(lifted));
    }

    for (const Pose& gt : placement_ground_truth(bundle)) {
      CHECK(eval.placement_success(gt));
      place_checked++;
      Pose high = gt;
      high.translation.z() += 0.2;  // object bottom ends far above the table
      CHECK_FALSE(eval.placement_success(high));
      Pose off = gt;
      off.translation.x() += 2.0;  // footprint far off the table
      CHECK_FALSE(eval.placement_success(off));
    }
  }
  CHECK(grasp_checked > 20);
  CHECK(place_checked > 50);
}

TEST_CASE("placement failure modes") {
  const GripperModel gripper = GripperModel::parallel_jaw();
  SceneBundle bundle;
  bundle.table.width = bundle.table.depth = 0.6;
  bundle.instances = {cube_at(0, 0.04, -0.1, 0), cube_at(1, 0.06, 0.15, 0.1)};
  bundle.held_object_id = 0;
  bundle.ee_pose = straddle(Vec3(-0.08, 0, 0.02), 0.04, gripper);
  for (int bin = 0; bin < 4; ++bin)
    bundle.place_masks.emplace_back();  // bins exist; contents unused here
  // cloud provides the held object's visible points for bottom_center
  bundle.cloud.points = {Vec3(-0.12, 0, 0.01), Vec3(-0.08, 0, 0.01),
                         Vec3(-0.1, 0.02, 0.04)};
  bundle.cloud.object_ids = {0, 0, 0};
  const SceneEvaluator eval(bundle, gripper);

  const Vec3 b = bottom_center(bundle.cloud);
  auto place_at = [&](double x, double y, int bin) {
    return reconstruct_placement_pose(Vec3(x, y, 0), PlanarRotationBin::make(bin, 4),
                                      bundle.ee_pose, b);
  };
  CHECK(eval.placement_success(place_at(0.1, -0.15, 0)));   // open floor
  CHECK(eval.placement_success(place_at(0.1, -0.15, 3)));
  CHECK_FALSE(eval.placement_success(place_at(0.15, 0.1, 0)));  // on the obstacle
  CHECK_FALSE(eval.placement_success(place_at(0.31, 0, 0)));    // past the edge
  // non-upright gripper pose tips the object over: never a valid placement
  Pose tilted = place_at(0.1, -0.15, 0);
  tilted.rotation = Eigen::AngleAxisd(0.3, Vec3::UnitX()).toRotationMatrix() *
                    tilted.rotation;
  CHECK_FALSE(eval.placement_success(tilted));
  // scenes without a held object reject every placement
  SceneBundle empty = bundle;
  empty.held_object_id = -1;
  CHECK_FALSE(SceneEvaluator(empty, gripper).placement_success(place_at(0.1, -0.15, 0)));
}

TEST_CASE("precision-coverage curve hand example") {
  // success at conf 0.9 near both gt poses; failure at conf 0.6 far away
  std::vector<ScoredPose> props(2);
  props[0].pose.translation = Vec3(0.02, 0, 0);
  props[0].confidence = 0.9;
  props[1].pose.translation = Vec3(1, 0, 0);
  props[1].confidence = 0.6;
  std::vector<Pose> gt(2);
  gt[0].translation = Vec3(0, 0, 0);
  gt[1].translation = Vec3(0.01, 0, 0);
  auto success = [](const Pose& p) { return p.translation.x() < 0.5; };

  const PrecisionCoverageCurve curve =
      precision_coverage(props, gt, success, {0.95, 0.9, 0.6});
  REQUIRE(curve.points.size() == 3);
  CHECK(curve.points[0].precision == 1.0);  // empty set convention
  CHECK(curve.points[0].coverage == 0.0);
  CHECK(curve.points[1].precision == 1.0);
  CHECK(curve.points[1].coverage == 1.0);
  CHECK(curve.points[2].precision == 0.5);
  CHECK(curve.points[2].coverage == 1.0);

  SUBCASE("identical predictions with full confidence saturate the curve") {
    std::vector<ScoredPose> exact;
    for (const Pose& g : gt) exact.push_back({g, 1.0});
    const auto c = precision_coverage(exact, gt, [](const Pose&) { return true; });
    for (const CurvePoint& p : c.points) {
      CHECK(p.precision == 1.0);
      CHECK(p.coverage == 1.0);
    }
  }

  SUBCASE("default thresholds descend from 1.0 to 0.5") {
    const auto t = default_thresholds();
    REQUIRE(t.size() == 51);
    CHECK(t.front() == 1.0);
    CHECK(t.back() == 0.5);
    for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] < t[i - 1]);
  }

  SUBCASE("bad threshold lists are rejected") {
    CHECK_THROWS_AS(precision_coverage(props, gt, success, {0.9, 0.9}),
                    std::invalid_argument);
    CHECK_THROWS_AS(precision_coverage(props, gt, success, {}),
                    std::invalid_argument);
  }
}

TEST_CASE("prediction sets are nested and coverage is monotone") {
  Pcg32 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ScoredPose> props(30);
    for (auto& p : props) {
      p.pose.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0);
      p.confidence = rng.uniform(0.4, 1.0);
    }
    std::vector<Pose> gt(10);
    for (auto& g : gt)
      g.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0);
    auto success = [](const Pose& p) { return p.translation.x() > 0; };

    const auto thresholds = default_thresholds();
    const auto curve = precision_coverage(props, gt, success, thresholds);
    CHECK_NOTHROW(curve.validate());  // coverage monotonicity included

    // direct set-inclusion check across descending thresholds
    std::set<int> previous;
    for (double t : thresholds) {
      std::set<int> selected;
      for (int i = 0; i < 30; ++i)
        if (props[i].confidence >= t) selected.insert(i);
      CHECK(std::includes(selected.begin(), selected.end(), previous.begin(),
                          previous.end()));
      previous = selected;
    }
  }
}

TEST_CASE("pooled curves equal merged accumulators") {
  Pcg32 rng(29);
  auto scene_props = [&](int n) {
    std::vector<ScoredPose> v(n);
    for (auto& p : v) {
      p.pose.translation = Vec3(rng.uniform(-1, 1), 0, 0);
      p.confidence = rng.uniform(0.5, 1.0);
    }
    return v;
  };
  auto success = [](const Pose& p) { return p.translation.x() > 0; };
  const auto a = scene_props(12), b = scene_props(20);
  std::vector<Pose> gta(4), gtb(6);
  for (auto& g : gta) g.translation = Vec3(rng.uniform(-1, 1), 0, 0);
  for (auto& g : gtb) g.translation = Vec3(rng.uniform(-1, 1), 0, 0);

  CurveAccumulator pooled;
  pooled.add_scene(a, gta, success);
  pooled.add_scene(b, gtb, success);

  CurveAccumulator left, right;
  left.add_scene(a, gta, success);
  right.add_scene(b, gtb, success);
  left.merge(right);

  const auto c1 = pooled.curve(), c2 = left.curve();
  REQUIRE(c1.points.size() == c2.points.size());
  for (std::size_t i = 0; i < c1.points.size(); ++i) {
    CHECK(c1.points[i].precision == c2.points[i].precision);
    CHECK(c1.points[i].coverage == c2.points[i].coverage);
  }
}

TEST_CASE("area under curve matches closed forms and a fine grid") {
  PrecisionCoverageCurve flat;
  flat.points = {{1.0, 1.0, 0.0}, {0.5, 1.0, 1.0}};
  CHECK(area_under_curve(flat) == 1.0);

  PrecisionCoverageCurve half;
  half.points = {{1.0, 0.5, 0.0}, {0.5, 0.5, 0.5}};
  CHECK(area_under_curve(half) == 0.25);

  Pcg32 rng(3);
  PrecisionCoverageCurve random;
  double cov = 0;
  for (int i = 0; i < 20; ++i) {
    cov = std::min(1.0, cov + rng.uniform(0, 0.08));
    random.points.push_back({1.0 - i * 0.01, rng.uniform(0, 1), cov});
  }
  // midpoint Riemann oracle: exact for the piecewise-linear interpolant
  double oracle = 0;
  const int steps = 4096;
  for (std::size_t i = 1; i < random.points.size(); ++i) {
    const auto& a = random.points[i - 1];
    const auto& b = random.points[i];
    for (int k = 0; k < steps; ++k) {
      const double t = (k + 0.5) / steps;
      oracle += (b.coverage - a.coverage) / steps *
                (a.precision + t * (b.precision - a.precision));
    }
  }
  CHECK(area_under_curve(random) == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("curve CSV uses the pinned header and exact values") {
  PrecisionCoverageCurve curve;
  curve.points = {{1.0, 1.0, 0.0}, {0.75, 1.0 / 3.0, 0.2}, {0.5, 0.25, 0.7}};
  const std::string path =
      (std::filesystem::temp_directory_path() /
       ("m2t2_curve_" + std::to_string(::getpid()) + ".csv")).string();
  write_curve_csv(curve, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "threshold,precision,coverage");
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    REQUIRE(vals.size() == 3);
    REQUIRE(row < curve.points.size());
    CHECK(vals[0] == curve.points[row].threshold);
    CHECK(vals[1] == curve.points[row].precision);
    CHECK(vals[2] == curve.points[row].coverage);
    row++;
  }
  CHECK(row == curve.points.size());
  std::filesystem::remove(path);
}

TEST_CASE("random baselines are deterministic and well-formed") {
  const DatagenConfig cfg = small_config();
  const SceneBundle bundle = generate_scene(2, cfg);
  const GripperModel gripper = GripperModel::parallel_jaw();

  const auto a = random_grasp_proposals(bundle, gripper, 50, 9);
  const auto b = random_grasp_proposals(bundle, gripper, 50, 9);
  REQUIRE(a.size() == 50);
  REQUIRE(b.size() == 50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i].pose.rotation - b[i].pose.rotation).norm() == 0.0);
    CHECK((a[i].pose.translation - b[i].pose.translation).norm() == 0.0);
    CHECK(a[i].confidence == b[i].confidence);
    CHECK(a[i].pose.is_valid(1e-9));
    CHECK(a[i].confidence >= 0.5);
    CHECK(a[i].confidence <= 1.0);
  }
  CHECK(random_grasp_proposals(bundle, gripper, 50, 10)[0].confidence !=
        a[0].confidence);

  if (bundle.held_object_id >= 0) {
    const auto p = random_placement_proposals(bundle, 40, 4);
    REQUIRE(p.size() == 40);
    for (const ScoredPose& sp : p) CHECK(sp.pose.is_valid(1e-5));
  }
}
