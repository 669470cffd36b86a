#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "m2t2/geometry.hpp"
#include "m2t2/pointcloud.hpp"

namespace m2t2 {

// Analytic primitive resting on its local z=0 plane: a box spans
// [-w/2,w/2] x [-d/2,d/2] x [0,h] in its own frame, a cylinder has radius r
// about local +z and spans z in [0,h].
struct Shape {
  enum class Kind { box, cylinder };
  Kind kind = Kind::box;
  double w = 0, d = 0, h = 0;  // box extents
  double r = 0;                // cylinder radius (h shared)

  static Shape box(double w, double d, double h);
  static Shape cylinder(double r, double h);
  double footprint_radius() const;  // circumscribed xy radius
  void validate() const;
  bool operator==(const Shape&) const = default;
};

// Scene object. Generated instances rest on the table: the pose rotation is a
// pure yaw and the translation has z = 0.
struct ObjectInstance {
  Shape shape;
  Pose pose;
  int id = 0;
  std::string category;
};

// Rectangular support surface at z = 0, centered on the origin. Anything at
// z <= 0 is solid (the table slab) for collision purposes; width 0 disables
// the table entirely.
struct TableModel {
  double width = 0, depth = 0;
  bool present() const { return width > 0 && depth > 0; }
};

// Pinhole camera; pose maps camera coordinates (x right, y down, z forward)
// to world.
struct VirtualCamera {
  Pose pose;
  int res_x = 512, res_y = 512;
  double fx = 512, fy = 512, cx = 255.5, cy = 255.5;
};

struct GraspLabel {
  int object_id = 0;
  int contact_index = 0;  // into the scene cloud
  Pose pose;
};

struct DatagenConfig {
  int min_objects = 1, max_objects = 15;
  double table_min = 0.6, table_max = 1.0;
  double box_min = 0.03, box_max = 0.12;      // box xy extents
  double height_min = 0.03, height_max = 0.15;
  double cyl_r_min = 0.015, cyl_r_max = 0.05;
  int n_points = 1024;
  int num_rotation_bins = 8;
  int camera_res = 512;
  double grid_step = 0.01;            // placement re-check sampling pitch
  double surface_step = 0.005;        // analytic surface sampling pitch
  double grasp_grid = 0.015;          // contact-candidate spacing on faces
  double snap_tolerance = 0.01;       // max contact-to-visible-point distance
  double clearance = 0.005;           // collision clearance for labeling
  double friction = 0.5;
  double min_separation = 0.01;       // between object footprints
  int max_place_attempts = 1000;
  double cam_elev_min = 0.6, cam_elev_max = 1.3;  // radians above horizon
  double cam_dist_min = 0.9, cam_dist_max = 1.4;

  void validate() const;
};

// One synthetic scene with analytic ground truth. cloud.object_ids uses -1
// for table points and the instance id otherwise.
struct SceneBundle {
  std::uint64_t seed = 0;
  int regen_count = 0;  // whole-scene retries after placement exhaustion
  TableModel table;
  VirtualCamera camera;
  std::vector<ObjectInstance> instances;
  PointCloud cloud;
  std::vector<GraspLabel> grasp_labels;
  int held_object_id = -1;  // -1: no placement supervision in this scene
  Pose ee_pose;             // in-hand grasp used for placement labels
  std::vector<std::vector<std::uint8_t>> place_masks;  // [P][N]
};

// --- Analytic shape queries --------------------------------------------------

// Exact xy distance between the two footprints (0 when overlapping). Valid
// for upright poses (yaw-only rotation); heights always overlap on a table.
double footprint_distance(const Shape& a, const Pose& pa, const Shape& b,
                          const Pose& pb);
bool shapes_overlap(const Shape& a, const Pose& pa, const Shape& b,
                    const Pose& pb, double margin);

// Outward unit normal / unsigned distance of the nearest surface feature.
Vec3 shape_surface_normal(const Shape& s, const Pose& pose, const Vec3& world_point);
double shape_surface_distance(const Shape& s, const Pose& pose, const Vec3& world_point);

// Deterministic grid sampling of the full surface with outward normals.
void sample_shape_surface(const Shape& s, const Pose& pose, double step,
                          std::vector<Vec3>& points, std::vector<Vec3>& normals);

// True iff any gripper collision box (inflated by clearance, expressed at
// gripper_pose) intersects an obstacle shape or the table slab. The finger
// boxes skip the instance with id == grasped_id; the body boxes never do.
bool gripper_collides(const Pose& gripper_pose, const GripperModel& gripper,
                      const std::vector<ObjectInstance>& obstacles,
                      const TableModel& table, double clearance,
                      int grasped_id = -1);

// --- Generation ----------------------------------------------------------------

PointCloud render_pointcloud(const std::vector<ObjectInstance>& instances,
                             const TableModel& table, const VirtualCamera& camera,
                             int n_points);

// Antipodal candidates on box face pairs and cylinder diameters, filtered by
// collision against the whole scene and analytic-surface antipodal stability;
// contact points snapped to visible cloud points of the instance.
std::vector<GraspLabel> label_grasps(const ObjectInstance& instance,
                                     const SceneBundle& scene,
                                     const GripperModel& gripper,
                                     const DatagenConfig& config);

// Placement masks [P][N]: nonzero only at visible table points where the held
// object, rotated by the bin, lies fully on the table, clears every remaining
// object by the configured margin, and the gripper at the reconstructed
// placement pose is collision-free.
std::vector<std::vector<std::uint8_t>> label_placements(
    const ObjectInstance& held, const SceneBundle& scene, const Pose& ee_pose,
    const GripperModel& gripper, const DatagenConfig& config);

SceneBundle generate_scene(std::uint64_t seed, const DatagenConfig& config);

// --- Serialization ---------------------------------------------------------------

// Directory layout: manifest.json, points.bin, grasps.bin, placemask.bin.
// Binary integers and floats are little-endian; manifest carries CRC-32
// checksums of the three binary files.
void save_bundle(const SceneBundle& bundle, const std::string& dir);
SceneBundle load_bundle(const std::string& dir);

// Re-checks every stored label and mask entry against the analytic
// predicates; returns human-readable failure descriptions (empty = clean).
std::vector<std::string> validate_bundle(const SceneBundle& bundle,
                                         const GripperModel& gripper,
                                         const DatagenConfig& config);

}  // namespace m2t2
