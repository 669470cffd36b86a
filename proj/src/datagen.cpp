#include "m2t2/datagen.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "m2t2/io.hpp"
#include "m2t2/rng.hpp"

namespace m2t2 {

namespace fs = std::filesystem;
using nlohmann::json;

// --- Shape basics ------------------------------------------------------------

Shape Shape::box(double w, double d, double h) {
  Shape s;
  s.kind = Kind::box;
  s.w = w;
  s.d = d;
  s.h = h;
  return s;
}

Shape Shape::cylinder(double r, double h) {
  Shape s;
  s.kind = Kind::cylinder;
  s.r = r;
  s.h = h;
  return s;
}

double Shape::footprint_radius() const {
  return kind == Kind::box ? 0.5 * std::hypot(w, d) : r;
}

void Shape::validate() const {
  const bool ok = kind == Kind::box ? (w > 0 && d > 0 && h > 0)
                                    : (r > 0 && h > 0);
  if (!ok) throw std::invalid_argument("shape dimensions must be positive");
}

void DatagenConfig::validate() const {
  if (min_objects < 1 || max_objects < min_objects)
    throw std::invalid_argument("bad object count range");
  if (table_min <= 0 || table_max < table_min)
    throw std::invalid_argument("bad table size range");
  if (n_points < 4) throw std::invalid_argument("n_points too small");
  if (num_rotation_bins < 1) throw std::invalid_argument("need >= 1 rotation bin");
  if (camera_res < 8) throw std::invalid_argument("camera resolution too small");
  if (clearance < 0 || grasp_grid <= 0 || surface_step <= 0 || grid_step <= 0)
    throw std::invalid_argument("bad sampling parameters");
}

// --- 2D footprint geometry ---------------------------------------------------

namespace {

struct Vec2 {
  double x = 0, y = 0;
};

// yaw-rotated rectangle corners, counterclockwise
std::array<Vec2, 4> rect_corners(const Shape& s, const Pose& pose) {
  const double c = pose.rotation(0, 0), sn = pose.rotation(1, 0);
  const double hx = s.w / 2, hy = s.d / 2;
  const double tx = pose.translation.x(), ty = pose.translation.y();
  std::array<Vec2, 4> out;
  const double sx[4] = {+1, -1, -1, +1};
  const double sy[4] = {+1, +1, -1, -1};
  for (int i = 0; i < 4; ++i)
    out[i] = Vec2{tx + c * sx[i] * hx - sn * sy[i] * hy,
                  ty + sn * sx[i] * hx + c * sy[i] * hy};
  return out;
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const double abx = b.x - a.x, aby = b.y - a.y;
  const double len2 = abx * abx + aby * aby;
  double t = len2 > 0 ? ((p.x - a.x) * abx + (p.y - a.y) * aby) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * abx), dy = p.y - (a.y + t * aby);
  return std::hypot(dx, dy);
}

template <std::size_t N>
bool point_in_convex(const Vec2& p, const std::array<Vec2, N>& poly) {
  for (std::size_t i = 0; i < N; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % N];
    if ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < 0) return false;
  }
  return true;
}

template <std::size_t N>
double point_polygon_distance(const Vec2& p, const std::array<Vec2, N>& poly) {
  if (point_in_convex(p, poly)) return 0.0;
  double best = std::numeric_limits<double>::max();
  for (std::size_t i = 0; i < N; ++i)
    best = std::min(best, point_segment_distance(p, poly[i], poly[(i + 1) % N]));
  return best;
}

bool rects_overlap_sat(const std::array<Vec2, 4>& a, const std::array<Vec2, 4>& b) {
  const std::array<const std::array<Vec2, 4>*, 2> polys = {&a, &b};
  for (const auto* poly : polys)
    for (int i = 0; i < 4; ++i) {
      const Vec2& p0 = (*poly)[i];
      const Vec2& p1 = (*poly)[(i + 1) % 4];
      const double nx = p1.y - p0.y, ny = p0.x - p1.x;  // edge normal
      double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
      for (const Vec2& v : a) {
        const double s = nx * v.x + ny * v.y;
        amin = std::min(amin, s);
        amax = std::max(amax, s);
      }
      for (const Vec2& v : b) {
        const double s = nx * v.x + ny * v.y;
        bmin = std::min(bmin, s);
        bmax = std::max(bmax, s);
      }
      if (amax < bmin || bmax < amin) return false;
    }
  return true;
}

double rect_rect_distance(const std::array<Vec2, 4>& a, const std::array<Vec2, 4>& b) {
  if (rects_overlap_sat(a, b)) return 0.0;
  double best = std::numeric_limits<double>::max();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      best = std::min(best, point_segment_distance(a[i], b[j], b[(j + 1) % 4]));
      best = std::min(best, point_segment_distance(b[i], a[j], a[(j + 1) % 4]));
    }
  return best;
}

}  // namespace

double footprint_distance(const Shape& a, const Pose& pa, const Shape& b,
                          const Pose& pb) {
  const bool abox = a.kind == Shape::Kind::box;
  const bool bbox = b.kind == Shape::Kind::box;
  if (abox && bbox) return rect_rect_distance(rect_corners(a, pa), rect_corners(b, pb));
  if (!abox && !bbox) {
    const double d = std::hypot(pa.translation.x() - pb.translation.x(),
                                pa.translation.y() - pb.translation.y());
    return std::max(0.0, d - (a.r + b.r));  // grouped so the result is symmetric
  }
  const Shape& rect = abox ? a : b;
  const Pose& rect_pose = abox ? pa : pb;
  const Shape& cyl = abox ? b : a;
  const Pose& cyl_pose = abox ? pb : pa;
  const Vec2 c{cyl_pose.translation.x(), cyl_pose.translation.y()};
  return std::max(0.0, point_polygon_distance(c, rect_corners(rect, rect_pose)) - cyl.r);
}

bool shapes_overlap(const Shape& a, const Pose& pa, const Shape& b,
                    const Pose& pb, double margin) {
  return footprint_distance(a, pa, b, pb) < margin;
}

// --- Surface queries ---------------------------------------------------------

namespace {

Vec3 to_local(const Pose& pose, const Vec3& p) {
  return pose.rotation.transpose() * (p - pose.translation);
}

}  // namespace

double shape_surface_distance(const Shape& s, const Pose& pose, const Vec3& wp) {
  const Vec3 p = to_local(pose, wp);
  if (s.kind == Shape::Kind::box) {
    const double ex = std::abs(p.x()) - s.w / 2;
    const double ey = std::abs(p.y()) - s.d / 2;
    const double ez = std::max(p.z() - s.h, -p.z());  // z in [0, h]
    const double ox = std::max(ex, 0.0), oy = std::max(ey, 0.0), oz = std::max(ez, 0.0);
    if (ox > 0 || oy > 0 || oz > 0) return std::sqrt(ox * ox + oy * oy + oz * oz);
    return -std::max({ex, ey, ez});  // depth inside; surface points give ~0
  }
  const double rho = std::hypot(p.x(), p.y());
  const double er = rho - s.r;
  const double ez = std::max(p.z() - s.h, -p.z());
  const double orr = std::max(er, 0.0), oz = std::max(ez, 0.0);
  if (orr > 0 || oz > 0) return std::hypot(orr, oz);
  return -std::max(er, ez);
}

Vec3 shape_surface_normal(const Shape& s, const Pose& pose, const Vec3& wp) {
  const Vec3 p = to_local(pose, wp);
  Vec3 n_local;
  if (s.kind == Shape::Kind::box) {
    // nearest face by margin; ties resolved in x, y, z order
    const double mx = s.w / 2 - std::abs(p.x());
    const double my = s.d / 2 - std::abs(p.y());
    const double mtop = s.h - p.z(), mbot = p.z();
    const double m = std::min({mx, my, mtop, mbot});
    if (m == mx)
      n_local = Vec3(p.x() >= 0 ? 1 : -1, 0, 0);
    else if (m == my)
      n_local = Vec3(0, p.y() >= 0 ? 1 : -1, 0);
    else if (m == mtop)
      n_local = Vec3(0, 0, 1);
    else
      n_local = Vec3(0, 0, -1);
  } else {
    const double rho = std::hypot(p.x(), p.y());
    const double mside = std::abs(s.r - rho);
    const double mtop = std::abs(s.h - p.z()), mbot = std::abs(p.z());
    if (rho > 1e-12 && mside <= mtop && mside <= mbot)
      n_local = Vec3(p.x() / rho, p.y() / rho, 0);
    else if (mtop <= mbot)
      n_local = Vec3(0, 0, 1);
    else
      n_local = Vec3(0, 0, -1);
  }
  return pose.rotation * n_local;
}

void sample_shape_surface(const Shape& s, const Pose& pose, double step,
                          std::vector<Vec3>& points, std::vector<Vec3>& normals) {
  if (step <= 0) throw std::invalid_argument("surface sample step must be > 0");
  points.clear();
  normals.clear();
  auto emit = [&](const Vec3& local, const Vec3& n_local) {
    points.push_back(pose.apply(local));
    normals.push_back(pose.rotation * n_local);
  };
  auto grid = [&](double lo, double hi) {
    const int n = std::max(2, static_cast<int>(std::ceil((hi - lo) / step)) + 1);
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i)
      v[i] = lo + (hi - lo) * i / (n - 1);
    return v;
  };
  if (s.kind == Shape::Kind::box) {
    const auto xs = grid(-s.w / 2, s.w / 2);
    const auto ys = grid(-s.d / 2, s.d / 2);
    const auto zs = grid(0, s.h);
    for (double y : ys)
      for (double z : zs) {
        emit(Vec3(s.w / 2, y, z), Vec3(1, 0, 0));
        emit(Vec3(-s.w / 2, y, z), Vec3(-1, 0, 0));
      }
    for (double x : xs)
      for (double z : zs) {
        emit(Vec3(x, s.d / 2, z), Vec3(0, 1, 0));
        emit(Vec3(x, -s.d / 2, z), Vec3(0, -1, 0));
      }
    for (double x : xs)
      for (double y : ys) {
        emit(Vec3(x, y, s.h), Vec3(0, 0, 1));
        emit(Vec3(x, y, 0), Vec3(0, 0, -1));
      }
  } else {
    const int ka = std::max(8, static_cast<int>(std::ceil(2 * M_PI * s.r / step)));
    const auto zs = grid(0, s.h);
    for (int k = 0; k < ka; ++k) {
      const double th = 2 * M_PI * k / ka;
      const Vec3 n(std::cos(th), std::sin(th), 0);
      for (double z : zs) emit(Vec3(s.r * n.x(), s.r * n.y(), z), n);
    }
    const int nr = std::max(1, static_cast<int>(std::ceil(s.r / step)));
    for (int i = 0; i <= nr; ++i) {
      const double rho = s.r * i / nr;
      const int kc = std::max(1, static_cast<int>(std::ceil(2 * M_PI * rho / step)));
      for (int k = 0; k < kc; ++k) {
        const double th = 2 * M_PI * k / kc;
        emit(Vec3(rho * std::cos(th), rho * std::sin(th), s.h), Vec3(0, 0, 1));
        emit(Vec3(rho * std::cos(th), rho * std::sin(th), 0), Vec3(0, 0, -1));
      }
    }
  }
}

// --- Oriented-box collision machinery ----------------------------------------

namespace {

struct Obb {
  Vec3 center = Vec3::Zero();
  Mat3 axes = Mat3::Identity();  // columns
  Vec3 ext = Vec3::Zero();       // half extents
};

Obb obb_from_aabb(const Pose& pose, const Aabb& box, double inflate) {
  Obb o;
  const Vec3 c_local = 0.5 * (box.min + box.max);
  o.center = pose.apply(c_local);
  o.axes = pose.rotation;
  o.ext = 0.5 * (box.max - box.min) + Vec3::Constant(inflate);
  return o;
}

Obb obb_from_upright_shape_box(const Shape& s, const Pose& pose) {
  Obb o;
  o.center = pose.apply(Vec3(0, 0, s.h / 2));
  o.axes = pose.rotation;
  o.ext = Vec3(s.w / 2, s.d / 2, s.h / 2);
  return o;
}

// standard 15-axis separating-axis test
bool obb_overlap(const Obb& a, const Obb& b) {
  const Mat3 r = a.axes.transpose() * b.axes;
  Mat3 abs_r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) abs_r(i, j) = std::abs(r(i, j)) + 1e-12;
  const Vec3 t = a.axes.transpose() * (b.center - a.center);

  for (int i = 0; i < 3; ++i)
    if (std::abs(t[i]) > a.ext[i] + abs_r.row(i).dot(b.ext)) return false;
  for (int j = 0; j < 3; ++j)
    if (std::abs(t.dot(r.col(j))) > a.ext.dot(abs_r.col(j)) + b.ext[j]) return false;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int i1 = (i + 1) % 3, i2 = (i + 2) % 3;
      const int j1 = (j + 1) % 3, j2 = (j + 2) % 3;
      const double ra = a.ext[i1] * abs_r(i2, j) + a.ext[i2] * abs_r(i1, j);
      const double rb = b.ext[j1] * abs_r(i, j2) + b.ext[j2] * abs_r(i, j1);
      const double tt = std::abs(t[i2] * r(i1, j) - t[i1] * r(i2, j));
      if (tt > ra + rb) return false;
    }
  return true;
}

std::array<Vec3, 8> obb_corners(const Obb& o) {
  std::array<Vec3, 8> out;
  int k = 0;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1})
        out[k++] = o.center + o.axes * Vec3(sx * o.ext.x(), sy * o.ext.y(),
                                            sz * o.ext.z());
  return out;
}

// 2D convex hull (monotone chain); n is small (<= ~32)
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) {
                          return a.x == b.x && a.y == b.y;
                        }),
            pts.end());
  const int n = static_cast<int>(pts.size());
  if (n <= 2) return pts;
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  std::vector<Vec2> hull(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const int lower = k + 1;
  for (int i = n - 2; i >= 0; --i) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

double point_hull_distance(const Vec2& p, const std::vector<Vec2>& hull) {
  const int n = static_cast<int>(hull.size());
  if (n == 0) return std::numeric_limits<double>::max();
  if (n == 1) return std::hypot(p.x - hull[0].x, p.y - hull[0].y);
  if (n == 2) return point_segment_distance(p, hull[0], hull[1]);
  bool inside = true;
  for (int i = 0; i < n && inside; ++i) {
    const Vec2& a = hull[i];
    const Vec2& b = hull[(i + 1) % n];
    if ((b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < 0) inside = false;
  }
  if (inside) return 0.0;
  double best = std::numeric_limits<double>::max();
  for (int i = 0; i < n; ++i)
    best = std::min(best, point_segment_distance(p, hull[i], hull[(i + 1) % n]));
  return best;
}

// exact test against an upright cylinder: clip the box to the cylinder's
// z-slab, project to xy (projection of a polytope = hull of projected
// vertices), then compare the axis distance with the radius
bool obb_hits_upright_cylinder(const Obb& o, const Vec3& base, double r, double h) {
  const auto corners = obb_corners(o);
  const double z0 = base.z(), z1 = base.z() + h;
  double zmin = 1e300, zmax = -1e300;
  for (const Vec3& c : corners) {
    zmin = std::min(zmin, c.z());
    zmax = std::max(zmax, c.z());
  }
  if (zmax < z0 || zmin > z1) return false;

  std::vector<Vec2> pts;
  pts.reserve(32);
  for (const Vec3& c : corners)
    if (c.z() >= z0 && c.z() <= z1) pts.push_back(Vec2{c.x(), c.y()});
  static const int edges[12][2] = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {0, 2}, {1, 3},
                                   {4, 6}, {5, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  for (const auto& e : edges) {
    const Vec3& a = corners[e[0]];
    const Vec3& b = corners[e[1]];
    const double dz = b.z() - a.z();
    if (std::abs(dz) < 1e-15) continue;
    for (double zc : {z0, z1}) {
      const double t = (zc - a.z()) / dz;
      if (t >= 0.0 && t <= 1.0) {
        pts.push_back(Vec2{a.x() + t * (b.x() - a.x()), a.y() + t * (b.y() - a.y())});
      }
    }
  }
  if (pts.empty()) return false;
  const auto hull = convex_hull(std::move(pts));
  return point_hull_distance(Vec2{base.x(), base.y()}, hull) <= r;
}

double obb_min_z(const Obb& o) {
  // min over corners = center_z - sum |axis_z| * ext
  return o.center.z() - (std::abs(o.axes(2, 0)) * o.ext.x() +
                         std::abs(o.axes(2, 1)) * o.ext.y() +
                         std::abs(o.axes(2, 2)) * o.ext.z());
}

bool obb_hits_instance(const Obb& o, const ObjectInstance& inst) {
  if (inst.shape.kind == Shape::Kind::box)
    return obb_overlap(o, obb_from_upright_shape_box(inst.shape, inst.pose));
  return obb_hits_upright_cylinder(o, inst.pose.translation, inst.shape.r,
                                   inst.shape.h);
}

}  // namespace

bool gripper_collides(const Pose& gripper_pose, const GripperModel& gripper,
                      const std::vector<ObjectInstance>& obstacles,
                      const TableModel& table, double clearance, int grasped_id) {
  for (std::size_t b = 0; b < gripper.collision_boxes.size(); ++b) {
    const Obb o = obb_from_aabb(gripper_pose, gripper.collision_boxes[b], clearance);
    const bool finger_box = b < 2;  // parallel_jaw lists the two fingers first
    if (table.present() && obb_min_z(o) <= 0.0) return true;
    for (const ObjectInstance& inst : obstacles) {
      if (finger_box && inst.id == grasped_id) continue;
      if (obb_hits_instance(o, inst)) return true;
    }
  }
  return false;
}

// --- Rendering -----------------------------------------------------------------

namespace {

constexpr double kRayEps = 1e-6;

// returns hit distance or +inf
double ray_box(const Vec3& o, const Vec3& d, const Shape& s, const Pose& pose) {
  const Vec3 ol = to_local(pose, o);
  const Vec3 dl = pose.rotation.transpose() * d;
  const double lo[3] = {-s.w / 2, -s.d / 2, 0.0};
  const double hi[3] = {s.w / 2, s.d / 2, s.h};
  double tmin = kRayEps, tmax = std::numeric_limits<double>::max();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(dl[k]) < 1e-14) {
      if (ol[k] < lo[k] || ol[k] > hi[k]) return std::numeric_limits<double>::max();
      continue;
    }
    double t0 = (lo[k] - ol[k]) / dl[k];
    double t1 = (hi[k] - ol[k]) / dl[k];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return std::numeric_limits<double>::max();
  }
  return tmin;
}

double ray_cylinder(const Vec3& o, const Vec3& d, const Shape& s, const Pose& pose) {
  const Vec3 ol = to_local(pose, o);
  const Vec3 dl = pose.rotation.transpose() * d;
  double best = std::numeric_limits<double>::max();
  const double a = dl.x() * dl.x() + dl.y() * dl.y();
  if (a > 1e-14) {
    const double b = 2 * (ol.x() * dl.x() + ol.y() * dl.y());
    const double c = ol.x() * ol.x() + ol.y() * ol.y() - s.r * s.r;
    const double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (t > kRayEps && t < best) {
          const double z = ol.z() + t * dl.z();
          if (z >= 0 && z <= s.h) best = t;
        }
      }
    }
  }
  // caps
  if (std::abs(dl.z()) > 1e-14) {
    for (double zc : {0.0, s.h}) {
      const double t = (zc - ol.z()) / dl.z();
      if (t > kRayEps && t < best) {
        const double x = ol.x() + t * dl.x(), y = ol.y() + t * dl.y();
        if (x * x + y * y <= s.r * s.r) best = t;
      }
    }
  }
  return best;
}

double snap_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

PointCloud render_pointcloud(const std::vector<ObjectInstance>& instances,
                             const TableModel& table, const VirtualCamera& camera,
                             int n_points) {
  if (n_points < 1) throw std::invalid_argument("n_points must be >= 1");
  std::vector<Vec3> hits;
  std::vector<int> hit_ids;
  hits.reserve(static_cast<std::size_t>(camera.res_x) * camera.res_y / 2);
  const Vec3 origin = camera.pose.translation;

  for (int v = 0; v < camera.res_y; ++v)
    for (int u = 0; u < camera.res_x; ++u) {
      const Vec3 dir_cam((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0);
      const Vec3 d = (camera.pose.rotation * dir_cam).normalized();
      double best = std::numeric_limits<double>::max();
      int id = INT_MIN;
      if (table.present() && d.z() < -1e-12) {
        const double t = -origin.z() / d.z();
        if (t > kRayEps) {
          const Vec3 p = origin + t * d;
          if (std::abs(p.x()) <= table.width / 2 && std::abs(p.y()) <= table.depth / 2) {
            best = t;
            id = -1;
          }
        }
      }
      for (const ObjectInstance& inst : instances) {
        const double t = inst.shape.kind == Shape::Kind::box
                             ? ray_box(origin, d, inst.shape, inst.pose)
                             : ray_cylinder(origin, d, inst.shape, inst.pose);
        if (t < best) {
          best = t;
          id = inst.id;
        }
      }
      if (id != INT_MIN) {
        const Vec3 p = origin + best * d;
        hits.emplace_back(snap_f32(p.x()), snap_f32(p.y()), snap_f32(p.z()));
        hit_ids.push_back(id);
      }
    }

  if (static_cast<int>(hits.size()) < n_points)
    throw std::runtime_error("render_pointcloud: camera sees too few surface points");

  const std::vector<int> keep =
      furthest_point_sample(hits, n_points, lexicographic_min_index(hits));
  PointCloud cloud;
  cloud.points.reserve(n_points);
  cloud.object_ids.reserve(n_points);
  for (int i : keep) {
    cloud.points.push_back(hits[i]);
    cloud.object_ids.push_back(hit_ids[i]);
  }
  return cloud;
}

// --- Grasp labeling -------------------------------------------------------------

namespace {

struct GraspCandidate {
  Vec3 p;  // analytic contact on the surface (world)
  Vec3 c;  // closing direction, from contact toward the opposite finger
  Vec3 a;  // gripper body offset direction (world)
  double width = 0;
};

std::vector<double> centered_grid(double extent, double step, double inset) {
  const double usable = extent - 2 * inset;
  if (usable <= 0) return {0.0};
  const int n = std::max(1, static_cast<int>(std::floor(usable / step)) + 1);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = n == 1 ? 0.0 : -usable / 2 + usable * i / (n - 1);
  return out;
}

std::vector<GraspCandidate> enumerate_candidates(const ObjectInstance& inst,
                                                 const GripperModel& gripper,
                                                 const DatagenConfig& cfg) {
  std::vector<GraspCandidate> out;
  const Shape& s = inst.shape;
  const Mat3& R = inst.pose.rotation;
  const double inset = 0.004;

  auto push = [&](const Vec3& p_local, const Vec3& c_local, double width,
                  const std::vector<Vec3>& a_locals) {
    for (const Vec3& a_local : a_locals)
      out.push_back(GraspCandidate{inst.pose.apply(p_local), R * c_local,
                                   R * a_local, width});
  };

  if (s.kind == Shape::Kind::box) {
    struct FacePair {
      int axis;       // closing axis
      double width;   // face separation
    };
    const FacePair pairs[3] = {{0, s.w}, {1, s.d}, {2, s.h}};
    const double half[3] = {s.w / 2, s.d / 2, s.h / 2};
    for (const FacePair& fp : pairs) {
      if (fp.width > gripper.max_width) continue;
      const int u_axis = (fp.axis + 1) % 3, v_axis = (fp.axis + 2) % 3;
      const auto us = centered_grid(2 * half[u_axis], cfg.grasp_grid, inset);
      const auto vs = centered_grid(2 * half[v_axis], cfg.grasp_grid, inset);
      for (double uu : us)
        for (double vv : vs)
          for (int side : {-1, +1}) {
            Vec3 p_local = Vec3::Zero();
            p_local[fp.axis] = side * half[fp.axis];
            p_local[u_axis] = uu;
            p_local[v_axis] = vv;
            p_local.z() += half[2];  // local frame origin is the bottom center
            Vec3 c_local = Vec3::Zero();
            c_local[fp.axis] = -side;  // into the object
            std::vector<Vec3> a_locals;
            if (fp.axis == 2) {
              a_locals = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(),
                          -Vec3::UnitY()};
            } else {
              Vec3 horiz = Vec3::Zero();
              horiz[u_axis == 2 ? v_axis : u_axis] = 1.0;
              a_locals = {Vec3::UnitZ(), horiz, -horiz};
            }
            push(p_local, c_local, fp.width, a_locals);
          }
    }
  } else {
    if (2 * s.r <= gripper.max_width) {
      const int ka = std::max(
          8, static_cast<int>(std::ceil(2 * M_PI * s.r / cfg.grasp_grid)));
      const auto zs = centered_grid(s.h, cfg.grasp_grid, inset);
      for (int k = 0; k < ka; ++k) {
        const double th = 2 * M_PI * k / ka;
        const Vec3 radial(std::cos(th), std::sin(th), 0);
        for (double zz : zs) {
          const Vec3 p_local = Vec3(s.r * radial.x(), s.r * radial.y(),
                                    zz + s.h / 2);
          const Vec3 c_local = -radial;
          const Vec3 tangent(-radial.y(), radial.x(), 0);
          push(p_local, c_local, 2 * s.r,
               {Vec3::UnitZ(), tangent, -tangent});
        }
      }
    }
  }
  return out;
}

}  // namespace

std::vector<GraspLabel> label_grasps(const ObjectInstance& instance,
                                     const SceneBundle& scene,
                                     const GripperModel& gripper,
                                     const DatagenConfig& config) {
  std::vector<GraspLabel> labels;
  const auto candidates = enumerate_candidates(instance, gripper, config);
  if (candidates.empty()) return labels;

  // visible points of this instance, for contact snapping
  std::vector<int> visible;
  for (int i = 0; i < scene.cloud.size(); ++i)
    if (scene.cloud.object_ids[i] == instance.id) visible.push_back(i);
  if (visible.empty()) return labels;

  // full analytic surface for the antipodal check
  PointCloud surface;
  std::vector<Vec3> surface_normals;
  sample_shape_surface(instance.shape, instance.pose, config.surface_step,
                       surface.points, surface_normals);

  std::set<std::pair<int, std::array<float, 12>>> seen;
  const double snap2 = config.snap_tolerance * config.snap_tolerance;
  for (const GraspCandidate& cand : candidates) {
    int best = -1;
    double best_d2 = snap2;
    for (int i : visible) {
      const double d2 = (scene.cloud.points[i] - cand.p).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    if (best < 0) continue;  // contact not visible

    Pose pose;
    try {
      pose = reconstruct_grasp_pose(
          scene.cloud.points[best],
          GraspParams{cand.c, cand.a, cand.width}, gripper);
    } catch (const std::invalid_argument&) {
      continue;
    }
    for (int r = 0; r < 3; ++r) {
      for (int cidx = 0; cidx < 3; ++cidx)
        pose.rotation(r, cidx) = snap_f32(pose.rotation(r, cidx));
      pose.translation[r] = snap_f32(pose.translation[r]);
    }

    if (gripper_collides(pose, gripper, scene.instances, scene.table,
                         config.clearance, instance.id))
      continue;
    // nothing but the grasped object may sit between the fingers
    const Obb sweep = obb_from_aabb(pose, gripper.sweep_volume, 0.0);
    bool blocked = false;
    for (const ObjectInstance& other : scene.instances)
      if (other.id != instance.id && obb_hits_instance(sweep, other)) {
        blocked = true;
        break;
      }
    if (blocked) continue;
    // the grasped object itself must reach between the fingers: contacts
    // snapped onto an adjoining face (e.g. a top rim) can leave the closing
    // channel empty, and such pinches hold nothing
    const Mat3 rt = pose.rotation.transpose();
    bool holds = false;
    for (const Vec3& sp : surface.points)
      if (gripper.sweep_volume.contains(rt * (sp - pose.translation))) {
        holds = true;
        break;
      }
    if (!holds) continue;
    if (!check_antipodal_stability(pose, surface, surface_normals, gripper,
                                   config.friction))
      continue;

    std::array<float, 12> key{};
    for (int r = 0; r < 3; ++r) {
      for (int cidx = 0; cidx < 3; ++cidx)
        key[r * 3 + cidx] = static_cast<float>(pose.rotation(r, cidx));
      key[9 + r] = static_cast<float>(pose.translation[r]);
    }
    if (!seen.emplace(best, key).second) continue;
    labels.push_back(GraspLabel{instance.id, best, pose});
  }
  return labels;
}

// --- Placement labeling ----------------------------------------------------------

std::vector<std::vector<std::uint8_t>> label_placements(
    const ObjectInstance& held, const SceneBundle& scene, const Pose& ee_pose,
    const GripperModel& gripper, const DatagenConfig& config) {
  const int P = config.num_rotation_bins;
  const int N = scene.cloud.size();
  std::vector<std::vector<std::uint8_t>> masks(P, std::vector<std::uint8_t>(N, 0));

  std::vector<ObjectInstance> others;
  for (const ObjectInstance& inst : scene.instances)
    if (inst.id != held.id) others.push_back(inst);

  PointCloud held_cloud;
  for (int i = 0; i < N; ++i)
    if (scene.cloud.object_ids[i] == held.id)
      held_cloud.points.push_back(scene.cloud.points[i]);
  if (held_cloud.points.empty()) return masks;
  const Vec3 b = bottom_center(held_cloud);

  const double hw = scene.table.width / 2, hd = scene.table.depth / 2;
  const Pose held_in_gripper = ee_pose.inverse().compose(held.pose);
  for (int bin_i = 0; bin_i < P; ++bin_i) {
    const PlanarRotationBin bin = PlanarRotationBin::make(bin_i, P);
    for (int j = 0; j < N; ++j) {
      if (scene.cloud.object_ids[j] != -1) continue;  // table points only
      const Vec3& p = scene.cloud.points[j];

      // where the object actually lands when released from this gripper pose:
      // its observed bottom center comes to rest at p
      const Pose gpose = reconstruct_placement_pose(p, bin, ee_pose, b);
      const Pose placed = gpose.compose(held_in_gripper);
      Pose flat = placed;  // exactly-planar projection for footprint checks
      const double yaw = std::atan2(placed.rotation(1, 0), placed.rotation(0, 0));
      const double c = std::cos(yaw), s = std::sin(yaw);
      flat.rotation << c, -s, 0, s, c, 0, 0, 0, 1;
      flat.translation.z() = 0;

      // (a) fully on the table
      bool ok = true;
      if (held.shape.kind == Shape::Kind::box) {
        for (int sx : {-1, 1})
          for (int sy : {-1, 1}) {
            const Vec3 corner = flat.apply(
                Vec3(sx * held.shape.w / 2, sy * held.shape.d / 2, 0));
            if (std::abs(corner.x()) > hw || std::abs(corner.y()) > hd) {
              ok = false;
              break;
            }
          }
      } else {
        ok = std::abs(flat.translation.x()) <= hw - held.shape.r &&
             std::abs(flat.translation.y()) <= hd - held.shape.r;
      }
      if (!ok) continue;

      // (b) clears every remaining object
      for (const ObjectInstance& other : others)
        if (footprint_distance(held.shape, flat, other.shape, other.pose) <
            config.clearance) {
          ok = false;
          break;
        }
      if (!ok) continue;

      // (c) gripper collision-free at the placement pose
      if (gripper_collides(gpose, gripper, others, scene.table, config.clearance))
        continue;
      masks[bin_i][j] = 1;
    }
  }
  return masks;
}

// --- Scene generation --------------------------------------------------------------

SceneBundle generate_scene(std::uint64_t seed, const DatagenConfig& config) {
  config.validate();
  const GripperModel gripper = GripperModel::parallel_jaw();

  for (int sub = 0;; ++sub) {
    if (sub >= 64)
      throw std::runtime_error("generate_scene: rejection budget exhausted");
    Pcg32 rng(seed, static_cast<std::uint64_t>(sub));

    SceneBundle bundle;
    bundle.seed = seed;
    bundle.regen_count = sub;
    bundle.table.width = rng.uniform(config.table_min, config.table_max);
    bundle.table.depth = rng.uniform(config.table_min, config.table_max);

    const int count = rng.uniform_int(config.min_objects, config.max_objects);
    bool placed_all = true;
    for (int k = 0; k < count && placed_all; ++k) {
      ObjectInstance inst;
      inst.id = k;
      if (rng.uniform() < 0.5) {
        inst.category = "box";
        inst.shape = Shape::box(rng.uniform(config.box_min, config.box_max),
                                rng.uniform(config.box_min, config.box_max),
                                rng.uniform(config.height_min, config.height_max));
      } else {
        inst.category = "cylinder";
        inst.shape =
            Shape::cylinder(rng.uniform(config.cyl_r_min, config.cyl_r_max),
                            rng.uniform(config.height_min, config.height_max));
      }
      const double yaw = rng.uniform(0.0, 2 * M_PI);
      const double cy = std::cos(yaw), sy = std::sin(yaw);
      inst.pose.rotation << cy, -sy, 0, sy, cy, 0, 0, 0, 1;

      const double fr = inst.shape.footprint_radius();
      const double bx = bundle.table.width / 2 - fr;
      const double by = bundle.table.depth / 2 - fr;
      bool placed = false;
      for (int attempt = 0; attempt < config.max_place_attempts; ++attempt) {
        inst.pose.translation =
            Vec3(rng.uniform(-bx, bx), rng.uniform(-by, by), 0.0);
        bool clear = true;
        for (const ObjectInstance& other : bundle.instances)
          if (shapes_overlap(inst.shape, inst.pose, other.shape, other.pose,
                             config.min_separation)) {
            clear = false;
            break;
          }
        if (clear) {
          placed = true;
          break;
        }
      }
      if (!placed) {
        placed_all = false;  // regenerate the whole scene with the next sub-seed
        break;
      }
      bundle.instances.push_back(inst);
    }
    if (!placed_all) continue;

    // camera on the upper hemisphere, looking at the table center
    const double azim = rng.uniform(0.0, 2 * M_PI);
    const double elev = rng.uniform(config.cam_elev_min, config.cam_elev_max);
    const double dist = rng.uniform(config.cam_dist_min, config.cam_dist_max);
    const Vec3 eye(dist * std::cos(elev) * std::cos(azim),
                   dist * std::cos(elev) * std::sin(azim), dist * std::sin(elev));
    const Vec3 fwd = (-eye).normalized();
    const Vec3 right = Vec3(0, 0, 1).cross(fwd).normalized();
    const Vec3 down = fwd.cross(right);
    Mat3 R;
    R.col(0) = right;
    R.col(1) = down;
    R.col(2) = fwd;
    bundle.camera.pose = Pose{R, eye};
    bundle.camera.res_x = bundle.camera.res_y = config.camera_res;
    bundle.camera.fx = bundle.camera.fy = config.camera_res;
    bundle.camera.cx = bundle.camera.cy = (config.camera_res - 1) / 2.0;

    try {
      bundle.cloud = render_pointcloud(bundle.instances, bundle.table,
                                       bundle.camera, config.n_points);
    } catch (const std::runtime_error&) {
      continue;  // degenerate view; next sub-seed
    }

    for (const ObjectInstance& inst : bundle.instances) {
      auto labels = label_grasps(inst, bundle, gripper, config);
      bundle.grasp_labels.insert(bundle.grasp_labels.end(), labels.begin(),
                                 labels.end());
    }

    // held object: lowest id with at least one grasp; its most top-down grasp
    // becomes the in-hand pose for placement labels
    bundle.held_object_id = -1;
    for (const ObjectInstance& inst : bundle.instances) {
      const GraspLabel* pick = nullptr;
      double best_up = -2;
      for (const GraspLabel& label : bundle.grasp_labels)
        if (label.object_id == inst.id) {
          const double up = label.pose.rotation(2, 2);  // approach-axis z
          if (up > best_up) {
            best_up = up;
            pick = &label;
          }
        }
      if (pick != nullptr) {
        bundle.held_object_id = inst.id;
        bundle.ee_pose = pick->pose;
        break;
      }
    }

    if (bundle.held_object_id >= 0) {
      bundle.place_masks = label_placements(
          bundle.instances[bundle.held_object_id], bundle, bundle.ee_pose,
          gripper, config);
    } else {
      bundle.place_masks.assign(config.num_rotation_bins,
                                std::vector<std::uint8_t>(config.n_points, 0));
    }
    return bundle;
  }
}

// --- Serialization ----------------------------------------------------------------

namespace {

json pose_to_json(const Pose& pose) {
  json j;
  std::vector<double> rot(9), tr(3);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rot[r * 3 + c] = pose.rotation(r, c);
    tr[r] = pose.translation[r];
  }
  j["rotation"] = rot;
  j["translation"] = tr;
  return j;
}

Pose pose_from_json(const json& j) {
  Pose pose;
  const auto rot = j.at("rotation").get<std::vector<double>>();
  const auto tr = j.at("translation").get<std::vector<double>>();
  if (rot.size() != 9 || tr.size() != 3)
    throw std::runtime_error("bundle: malformed pose");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pose.rotation(r, c) = rot[r * 3 + c];
    pose.translation[r] = tr[r];
  }
  return pose;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_bundle(const SceneBundle& bundle, const std::string& dir) {
  fs::create_directories(dir);
  const int n = bundle.cloud.size();

  std::ostringstream points;
  write_le<std::uint32_t>(points, static_cast<std::uint32_t>(n));
  for (const Vec3& p : bundle.cloud.points) {
    write_le<float>(points, static_cast<float>(p.x()));
    write_le<float>(points, static_cast<float>(p.y()));
    write_le<float>(points, static_cast<float>(p.z()));
  }
  for (int id : bundle.cloud.object_ids)
    write_le<std::uint32_t>(points, static_cast<std::uint32_t>(id));

  std::ostringstream grasps;
  for (const GraspLabel& label : bundle.grasp_labels) {
    write_le<std::uint32_t>(grasps, static_cast<std::uint32_t>(label.object_id));
    write_le<std::uint32_t>(grasps, static_cast<std::uint32_t>(label.contact_index));
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        write_le<float>(grasps, static_cast<float>(label.pose.rotation(r, c)));
    for (int r = 0; r < 3; ++r)
      write_le<float>(grasps, static_cast<float>(label.pose.translation[r]));
  }

  std::ostringstream masks;
  const int P = static_cast<int>(bundle.place_masks.size());
  write_le<std::uint32_t>(masks, static_cast<std::uint32_t>(P));
  write_le<std::uint32_t>(masks, static_cast<std::uint32_t>(n));
  for (const auto& row : bundle.place_masks) {
    if (static_cast<int>(row.size()) != n)
      throw std::invalid_argument("bundle: ragged placement mask");
    write_bytes(masks, row.data(), row.size());
  }

  const std::string points_bytes = points.str();
  const std::string grasps_bytes = grasps.str();
  const std::string masks_bytes = masks.str();

  json manifest;
  manifest["version"] = 1;
  manifest["seed"] = bundle.seed;
  manifest["regen_count"] = bundle.regen_count;
  manifest["table"] = {{"width", bundle.table.width}, {"depth", bundle.table.depth}};
  json cam;
  cam["res_x"] = bundle.camera.res_x;
  cam["res_y"] = bundle.camera.res_y;
  cam["fx"] = bundle.camera.fx;
  cam["fy"] = bundle.camera.fy;
  cam["cx"] = bundle.camera.cx;
  cam["cy"] = bundle.camera.cy;
  cam["pose"] = pose_to_json(bundle.camera.pose);
  manifest["camera"] = cam;
  json instances = json::array();
  std::vector<int> label_counts(bundle.instances.size(), 0);
  for (const GraspLabel& label : bundle.grasp_labels)
    label_counts.at(static_cast<std::size_t>(label.object_id))++;
  for (const ObjectInstance& inst : bundle.instances) {
    json ji;
    ji["id"] = inst.id;
    ji["category"] = inst.category;
    if (inst.shape.kind == Shape::Kind::box) {
      ji["kind"] = "box";
      ji["dims"] = {inst.shape.w, inst.shape.d, inst.shape.h};
    } else {
      ji["kind"] = "cylinder";
      ji["dims"] = {inst.shape.r, inst.shape.h};
    }
    ji["pose"] = pose_to_json(inst.pose);
    instances.push_back(ji);
  }
  manifest["instances"] = instances;
  manifest["grasp_label_counts"] = label_counts;
  manifest["held_object_id"] = bundle.held_object_id;
  manifest["ee_pose"] = pose_to_json(bundle.ee_pose);
  manifest["num_rotation_bins"] = P;
  manifest["n_points"] = n;
  manifest["checksums"] = {
      {"points.bin", crc32(points_bytes.data(), points_bytes.size())},
      {"grasps.bin", crc32(grasps_bytes.data(), grasps_bytes.size())},
      {"placemask.bin", crc32(masks_bytes.data(), masks_bytes.size())}};

  write_file(fs::path(dir) / "points.bin", points_bytes);
  write_file(fs::path(dir) / "grasps.bin", grasps_bytes);
  write_file(fs::path(dir) / "placemask.bin", masks_bytes);
  write_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
}

SceneBundle load_bundle(const std::string& dir) {
  const json manifest = json::parse(read_file(fs::path(dir) / "manifest.json"));
  if (manifest.at("version").get<int>() != 1)
    throw std::runtime_error("bundle: unsupported version");

  SceneBundle bundle;
  bundle.seed = manifest.at("seed").get<std::uint64_t>();
  bundle.regen_count = manifest.at("regen_count").get<int>();
  bundle.table.width = manifest.at("table").at("width").get<double>();
  bundle.table.depth = manifest.at("table").at("depth").get<double>();
  const json& cam = manifest.at("camera");
  bundle.camera.res_x = cam.at("res_x").get<int>();
  bundle.camera.res_y = cam.at("res_y").get<int>();
  bundle.camera.fx = cam.at("fx").get<double>();
  bundle.camera.fy = cam.at("fy").get<double>();
  bundle.camera.cx = cam.at("cx").get<double>();
  bundle.camera.cy = cam.at("cy").get<double>();
  bundle.camera.pose = pose_from_json(cam.at("pose"));
  for (const json& ji : manifest.at("instances")) {
    ObjectInstance inst;
    inst.id = ji.at("id").get<int>();
    inst.category = ji.at("category").get<std::string>();
    const auto dims = ji.at("dims").get<std::vector<double>>();
    const std::string kind = ji.at("kind").get<std::string>();
    if (kind == "box") {
      if (dims.size() != 3) throw std::runtime_error("bundle: bad box dims");
      inst.shape = Shape::box(dims[0], dims[1], dims[2]);
    } else if (kind == "cylinder") {
      if (dims.size() != 2) throw std::runtime_error("bundle: bad cylinder dims");
      inst.shape = Shape::cylinder(dims[0], dims[1]);
    } else {
      throw std::runtime_error("bundle: unknown shape kind " + kind);
    }
    inst.pose = pose_from_json(ji.at("pose"));
    bundle.instances.push_back(inst);
  }
  bundle.held_object_id = manifest.at("held_object_id").get<int>();
  bundle.ee_pose = pose_from_json(manifest.at("ee_pose"));

  const auto check = [&](const char* name, const std::string& bytes) {
    const auto expect = manifest.at("checksums").at(name).get<std::uint32_t>();
    if (crc32(bytes.data(), bytes.size()) != expect)
      throw std::runtime_error(std::string("bundle: checksum failure in ") + name);
  };

  const std::string points_bytes = read_file(fs::path(dir) / "points.bin");
  check("points.bin", points_bytes);
  std::istringstream points(points_bytes);
  const auto n = read_le<std::uint32_t>(points);
  if (static_cast<int>(n) != manifest.at("n_points").get<int>())
    throw std::runtime_error("bundle: point count mismatch");
  bundle.cloud.points.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double x = read_le<float>(points);
    const double y = read_le<float>(points);
    const double z = read_le<float>(points);
    bundle.cloud.points.emplace_back(x, y, z);
  }
  bundle.cloud.object_ids.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i)
    bundle.cloud.object_ids.push_back(
        static_cast<int>(read_le<std::uint32_t>(points)));

  const std::string grasps_bytes = read_file(fs::path(dir) / "grasps.bin");
  check("grasps.bin", grasps_bytes);
  std::istringstream grasps(grasps_bytes);
  const auto counts = manifest.at("grasp_label_counts").get<std::vector<int>>();
  if (counts.size() != bundle.instances.size())
    throw std::runtime_error("bundle: label count list mismatch");
  std::size_t total = 0;
  for (int c : counts) total += static_cast<std::size_t>(c);
  if (grasps_bytes.size() != total * (8 + 12 * 4))
    throw std::runtime_error("bundle: grasp record size mismatch");
  for (std::size_t i = 0; i < total; ++i) {
    GraspLabel label;
    label.object_id = static_cast<int>(read_le<std::uint32_t>(grasps));
    label.contact_index = static_cast<int>(read_le<std::uint32_t>(grasps));
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        label.pose.rotation(r, c) = read_le<float>(grasps);
    for (int r = 0; r < 3; ++r) label.pose.translation[r] = read_le<float>(grasps);
    bundle.grasp_labels.push_back(label);
  }

  const std::string masks_bytes = read_file(fs::path(dir) / "placemask.bin");
  check("placemask.bin", masks_bytes);
  std::istringstream masks(masks_bytes);
  const auto P = read_le<std::uint32_t>(masks);
  const auto nm = read_le<std::uint32_t>(masks);
  if (static_cast<int>(P) != manifest.at("num_rotation_bins").get<int>() || nm != n)
    throw std::runtime_error("bundle: placement mask header mismatch");
  bundle.place_masks.assign(P, std::vector<std::uint8_t>(n));
  for (auto& row : bundle.place_masks) read_bytes(masks, row.data(), row.size());
  return bundle;
}

// --- Validation -------------------------------------------------------------------

std::vector<std::string> validate_bundle(const SceneBundle& bundle,
                                         const GripperModel& gripper,
                                         const DatagenConfig& config) {
  std::vector<std::string> problems;
  auto fail = [&](const std::string& msg) { problems.push_back(msg); };
  const int n = bundle.cloud.size();
  if (static_cast<int>(bundle.cloud.object_ids.size()) != n) {
    fail("cloud ids missing");
    return problems;
  }

  std::vector<const ObjectInstance*> by_id;
  for (const ObjectInstance& inst : bundle.instances) {
    if (inst.id != static_cast<int>(by_id.size()))
      fail("instance ids are not consecutive");
    by_id.push_back(&inst);
  }

  for (std::size_t i = 0; i + 1 < bundle.instances.size(); ++i)
    for (std::size_t j = i + 1; j < bundle.instances.size(); ++j) {
      const auto& a = bundle.instances[i];
      const auto& b = bundle.instances[j];
      if (footprint_distance(a.shape, a.pose, b.shape, b.pose) <
          config.min_separation - 1e-9)
        fail("instances " + std::to_string(i) + "," + std::to_string(j) +
             " interpenetrate");
    }

  for (int i = 0; i < n; ++i) {
    const Vec3& p = bundle.cloud.points[i];
    const int id = bundle.cloud.object_ids[i];
    if (p.z() < -1e-6) fail("point below the table at index " + std::to_string(i));
    if (id == -1) {
      if (std::abs(p.z()) > 1e-6 || std::abs(p.x()) > bundle.table.width / 2 + 1e-6 ||
          std::abs(p.y()) > bundle.table.depth / 2 + 1e-6)
        fail("table point off the surface at index " + std::to_string(i));
    } else if (id >= 0 && id < static_cast<int>(by_id.size())) {
      if (shape_surface_distance(by_id[id]->shape, by_id[id]->pose, p) > 1e-6)
        fail("point off its object surface at index " + std::to_string(i));
    } else {
      fail("bad object id at index " + std::to_string(i));
    }
  }

  std::vector<PointCloud> surfaces(by_id.size());
  std::vector<std::vector<Vec3>> surface_normals(by_id.size());
  for (std::size_t i = 0; i < by_id.size(); ++i)
    sample_shape_surface(by_id[i]->shape, by_id[i]->pose, config.surface_step,
                         surfaces[i].points, surface_normals[i]);

  for (std::size_t k = 0; k < bundle.grasp_labels.size(); ++k) {
    const GraspLabel& label = bundle.grasp_labels[k];
    const std::string tag = "grasp label " + std::to_string(k);
    if (label.contact_index < 0 || label.contact_index >= n) {
      fail(tag + ": contact index out of range");
      continue;
    }
    if (label.object_id < 0 || label.object_id >= static_cast<int>(by_id.size())) {
      fail(tag + ": bad object id");
      continue;
    }
    if (bundle.cloud.object_ids[label.contact_index] != label.object_id)
      fail(tag + ": contact point is not on the labeled object");
    if (!label.pose.is_valid(1e-5)) fail(tag + ": pose not a rigid transform");
    if (gripper_collides(label.pose, gripper, bundle.instances, bundle.table,
                         config.clearance, label.object_id))
      fail(tag + ": collides with the scene");
    const Obb sweep = obb_from_aabb(label.pose, gripper.sweep_volume, 0.0);
    for (const ObjectInstance& other : bundle.instances)
      if (other.id != label.object_id && obb_hits_instance(sweep, other))
        fail(tag + ": another object sits between the fingers");
    const Mat3 rt = label.pose.rotation.transpose();
    bool holds = false;
    for (const Vec3& sp : surfaces[label.object_id].points)
      if (gripper.sweep_volume.contains(rt * (sp - label.pose.translation))) {
        holds = true;
        break;
      }
    if (!holds) fail(tag + ": closing channel misses the labeled object");
    if (!check_antipodal_stability(label.pose, surfaces[label.object_id],
                                   surface_normals[label.object_id], gripper,
                                   config.friction))
      fail(tag + ": not antipodally stable");
  }

  const int P = static_cast<int>(bundle.place_masks.size());
  for (const auto& row : bundle.place_masks)
    if (static_cast<int>(row.size()) != n) fail("ragged placement mask row");
  if (bundle.held_object_id >= 0) {
    if (bundle.held_object_id >= static_cast<int>(by_id.size())) {
      fail("held object id out of range");
      return problems;
    }
    if (P != config.num_rotation_bins) fail("placement mask bin count mismatch");
    auto recomputed =
        label_placements(*by_id[bundle.held_object_id], bundle, bundle.ee_pose,
                         gripper, config);
    if (recomputed != bundle.place_masks)
      fail("placement masks disagree with relabeling");
  } else {
    for (const auto& row : bundle.place_masks)
      for (std::uint8_t v : row)
        if (v != 0) fail("nonzero placement mask without a held object");
  }
  return problems;
}

}  // namespace m2t2
