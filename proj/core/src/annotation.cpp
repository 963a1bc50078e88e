#include "mseg/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mseg/errors.hpp"

namespace fs = std::filesystem;

namespace mseg::anno {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 rot_z(double angle, const Vec3& p) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
}

struct Pt {
  double x, y;
};

double cross(const Pt& o, const Pt& a, const Pt& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Monotone-chain convex hull; returns points in counterclockwise order.
std::vector<Pt> convex_hull(std::vector<Pt> pts) {
  std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Pt& a, const Pt& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  const int n = static_cast<int>(pts.size());
  if (n < 3) return pts;
  std::vector<Pt> hull(2 * n);
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

void mark(data::MotionMask& m, int y, int x) {
  if (y >= 0 && y < m.h && x >= 0 && x < m.w) m.at(y, x) = 1;
}

// Fills pixels whose centers lie inside the polygon (even-odd scanline).
void fill_polygon(data::MotionMask& m, const std::vector<Pt>& poly) {
  if (poly.empty()) return;
  if (poly.size() == 1) {
    mark(m, static_cast<int>(std::floor(poly[0].y)), static_cast<int>(std::floor(poly[0].x)));
    return;
  }
  if (poly.size() == 2) {
    const double dx = poly[1].x - poly[0].x, dy = poly[1].y - poly[0].y;
    const int steps = std::max(2, static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy)) * 2)));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      mark(m, static_cast<int>(std::floor(poly[0].y + t * dy)),
           static_cast<int>(std::floor(poly[0].x + t * dx)));
    }
    return;
  }
  double ymin = poly[0].y, ymax = poly[0].y;
  for (const Pt& p : poly) {
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const int y0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
  const int y1 = std::min(m.h - 1, static_cast<int>(std::ceil(ymax)));
  const int n = static_cast<int>(poly.size());
  std::vector<double> xs;
  for (int y = y0; y <= y1; ++y) {
    const double yc = y + 0.5;
    xs.clear();
    for (int i = 0; i < n; ++i) {
      const Pt& a = poly[i];
      const Pt& b = poly[(i + 1) % n];
      if ((a.y <= yc && yc < b.y) || (b.y <= yc && yc < a.y))
        xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const int xa = std::max(0, static_cast<int>(std::ceil(xs[i] - 0.5)));
      const int xb = std::min(m.w - 1, static_cast<int>(std::floor(xs[i + 1] - 0.5)));
      for (int x = xa; x <= xb; ++x) m.at(y, x) = 1;
    }
  }
}

const TrackedBox* find_at(const Track& track, int t) {
  for (const TrackedBox& e : track)
    if (e.timestamp_index == t) return &e;
  return nullptr;
}

const EgoPose* find_pose(const std::vector<EgoPose>& ego, int t) {
  for (const EgoPose& p : ego)
    if (p.timestamp_index == t) return &p;
  return nullptr;
}

}  // namespace

void Calibration::validate() const {
  const auto& K = intrinsics;
  if (K[3] != 0.0 || K[6] != 0.0 || K[7] != 0.0)
    throw ArgumentError("intrinsics must be upper triangular");
  if (K[0] <= 0.0 || K[4] <= 0.0 || K[8] <= 0.0)
    throw ArgumentError("intrinsics focal entries must be positive");
  const auto& E = extrinsics;
  if (E[12] != 0.0 || E[13] != 0.0 || E[14] != 0.0 || E[15] != 1.0)
    throw ArgumentError("extrinsics bottom row must be (0,0,0,1)");
  // ||R^T R - I||_F over the rotation block.
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += E[k * 4 + i] * E[k * 4 + j];
      d -= (i == j) ? 1.0 : 0.0;
      err += d * d;
    }
  if (std::sqrt(err) >= 1e-6) throw ArgumentError("extrinsics rotation is not orthonormal");
}

std::array<double, 3> world_from_sensor(const EgoPose& pose, const std::array<double, 3>& p) {
  Vec3 r = rot_z(pose.heading, p);
  return {r[0] + pose.position[0], r[1] + pose.position[1], r[2] + pose.position[2]};
}

data::MotionMask project_box(const Box3D& box, const Calibration& calib, int image_h,
                             int image_w) {
  if (image_h <= 0 || image_w <= 0) throw ArgumentError("image dimensions must be positive");
  for (double s : box.size)
    if (!(s > 0.0)) throw ArgumentError("box size components must be positive");
  const auto& K = calib.intrinsics;
  const double det = K[0] * (K[4] * K[8] - K[5] * K[7]) - K[1] * (K[3] * K[8] - K[5] * K[6]) +
                     K[2] * (K[3] * K[7] - K[4] * K[6]);
  if (std::abs(det) < 1e-12) throw ArgumentError("singular intrinsics");

  data::MotionMask mask(image_h, image_w);
  std::vector<Pt> projected;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) {
        const Vec3 local = {sx * box.size[0] / 2, sy * box.size[1] / 2, sz * box.size[2] / 2};
        const Vec3 r = rot_z(box.yaw, local);
        const Vec3 s = {box.center[0] + r[0], box.center[1] + r[1], box.center[2] + r[2]};
        const auto& E = calib.extrinsics;
        const double cx = E[0] * s[0] + E[1] * s[1] + E[2] * s[2] + E[3];
        const double cy = E[4] * s[0] + E[5] * s[1] + E[6] * s[2] + E[7];
        const double cz = E[8] * s[0] + E[9] * s[1] + E[10] * s[2] + E[11];
        if (cz <= 1e-9) continue;  // behind the camera
        const double qx = K[0] * cx + K[1] * cy + K[2] * cz;
        const double qy = K[3] * cx + K[4] * cy + K[5] * cz;
        const double qw = K[6] * cx + K[7] * cy + K[8] * cz;
        projected.push_back({qx / qw, qy / qw});
      }
  fill_polygon(mask, convex_hull(std::move(projected)));
  return mask;
}

std::array<double, 3> object_world_velocity(const Track& track, const std::vector<EgoPose>& ego,
                                            int t, double dt) {
  if (dt <= 0.0) throw ArgumentError("dt must be positive");
  if (track.size() < 2)
    throw InsufficientDataError("track needs at least two entries to estimate velocity");
  const TrackedBox* at_t = find_at(track, t);
  if (!at_t) throw ArgumentError("track has no entry at timestamp " + std::to_string(t));
  const TrackedBox* other = find_at(track, t - 1);
  int s = t - 1;
  if (!other) {
    other = find_at(track, t + 1);
    s = t + 1;
  }
  if (!other)
    throw InsufficientDataError("track has no neighbor of timestamp " + std::to_string(t));
  const EgoPose* pose_t = find_pose(ego, t);
  const EgoPose* pose_s = find_pose(ego, s);
  if (!pose_t || !pose_s)
    throw ArgumentError("ego pose missing for timestamp " + std::to_string(pose_t ? s : t));

  const Vec3 wt = world_from_sensor(*pose_t, at_t->box.center);
  const Vec3 ws = world_from_sensor(*pose_s, other->box.center);
  const double span = (t - s) * dt;  // negative when differencing against t+1
  return {(wt[0] - ws[0]) / span, (wt[1] - ws[1]) / span, (wt[2] - ws[2]) / span};
}

MotionState classify_motion(double speed_world, const std::string& class_name,
                            const Thresholds& thresholds) {
  if (speed_world < 0.0) throw ArgumentError("speed must be non-negative");
  return speed_world > thresholds.of(class_name) ? MotionState::MOVING : MotionState::STATIC;
}

std::vector<MotionLabel> label_objects(const Scene& scene, int t) {
  std::vector<MotionLabel> labels;
  for (const auto& [id, track] : scene.tracks) {
    const TrackedBox* e = find_at(track, t);
    if (!e) continue;
    MotionLabel lab;
    lab.object_id = id;
    if (track.size() >= 2) {
      const Vec3 v = object_world_velocity(track, scene.ego, t, scene.frame_dt);
      lab.speed_world = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      lab.state = classify_motion(lab.speed_world, e->box.class_name, scene.thresholds);
    }
    labels.push_back(std::move(lab));
  }
  return labels;
}

int generate_masks(const Scene& scene, const std::string& out_root) {
  if (scene.image_h <= 0 || scene.image_w <= 0)
    throw ArgumentError("scene is missing image dimensions");
  scene.calib.validate();
  fs::create_directories(fs::path(out_root) / scene.sequence_id / "mask");
  int written = 0;
  for (const EgoPose& pose : scene.ego) {
    const int t = pose.timestamp_index;
    data::MotionMask mask(scene.image_h, scene.image_w);
    for (const MotionLabel& lab : label_objects(scene, t)) {
      if (lab.state != MotionState::MOVING) continue;
      const TrackedBox* e = find_at(scene.tracks.at(lab.object_id), t);
      data::MotionMask part = project_box(e->box, scene.calib, scene.image_h, scene.image_w);
      for (std::size_t i = 0; i < mask.labels.size(); ++i)
        if (part.labels[i]) mask.labels[i] = 1;
    }
    data::save_mask(data::mask_path(out_root, scene.sequence_id, t), mask);
    ++written;
  }
  return written;
}

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("missing scene file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "modscene v1")
    throw FormatError("expected 'modscene v1' header in " + path);

  Scene scene;
  bool have_seq = false, have_size = false, have_K = false, have_E = false;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    const auto fail = [&](const std::string& what) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + what);
    };
    if (kind == "sequence") {
      if (!(ls >> scene.sequence_id)) fail("sequence needs an id");
      have_seq = true;
    } else if (kind == "image_size") {
      if (!(ls >> scene.image_h >> scene.image_w)) fail("image_size needs H W");
      have_size = true;
    } else if (kind == "frame_dt") {
      if (!(ls >> scene.frame_dt) || scene.frame_dt <= 0) fail("frame_dt needs a positive value");
    } else if (kind == "intrinsics") {
      for (double& v : scene.calib.intrinsics)
        if (!(ls >> v)) fail("intrinsics needs 9 values");
      have_K = true;
    } else if (kind == "extrinsics") {
      for (double& v : scene.calib.extrinsics)
        if (!(ls >> v)) fail("extrinsics needs 16 values");
      have_E = true;
    } else if (kind == "threshold") {
      std::string cls;
      double v;
      if (!(ls >> cls >> v)) fail("threshold needs class and value");
      scene.thresholds.per_class[cls] = v;
    } else if (kind == "threshold_default") {
      if (!(ls >> scene.thresholds.fallback)) fail("threshold_default needs a value");
    } else if (kind == "pose") {
      EgoPose p;
      if (!(ls >> p.timestamp_index >> p.position[0] >> p.position[1] >> p.position[2] >>
            p.heading >> p.speed))
        fail("pose needs t x y z heading speed");
      if (p.speed < 0) fail("ego speed must be non-negative");
      scene.ego.push_back(p);
    } else if (kind == "box") {
      TrackedBox e;
      Box3D& b = e.box;
      if (!(ls >> e.timestamp_index >> b.object_id >> b.class_name >> b.center[0] >>
            b.center[1] >> b.center[2] >> b.size[0] >> b.size[1] >> b.size[2] >> b.yaw))
        fail("box needs t id class cx cy cz l w h yaw");
      if (!(b.size[0] > 0 && b.size[1] > 0 && b.size[2] > 0)) fail("box size must be positive");
      scene.tracks[b.object_id].push_back(std::move(e));
    } else {
      fail("unknown record '" + kind + "'");
    }
  }
  if (!have_seq || !have_size || !have_K || !have_E)
    throw FormatError(path + ": scene needs sequence, image_size, intrinsics, extrinsics");
  scene.calib.validate();
  std::sort(scene.ego.begin(), scene.ego.end(),
            [](const EgoPose& a, const EgoPose& b) { return a.timestamp_index < b.timestamp_index; });
  for (auto& [id, track] : scene.tracks)
    std::sort(track.begin(), track.end(), [](const TrackedBox& a, const TrackedBox& b) {
      return a.timestamp_index < b.timestamp_index;
    });
  return scene;
}

void save_scene(const std::string& path, const Scene& scene) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scene file: " + path);
  out.precision(17);
  out << "modscene v1\n";
  out << "sequence " << scene.sequence_id << "\n";
  out << "image_size " << scene.image_h << " " << scene.image_w << "\n";
  out << "frame_dt " << scene.frame_dt << "\n";
  out << "intrinsics";
  for (double v : scene.calib.intrinsics) out << " " << v;
  out << "\nextrinsics";
  for (double v : scene.calib.extrinsics) out << " " << v;
  out << "\nthreshold_default " << scene.thresholds.fallback << "\n";
  for (const auto& [cls, v] : scene.thresholds.per_class)
    out << "threshold " << cls << " " << v << "\n";
  for (const EgoPose& p : scene.ego)
    out << "pose " << p.timestamp_index << " " << p.position[0] << " " << p.position[1] << " "
        << p.position[2] << " " << p.heading << " " << p.speed << "\n";
  for (const auto& [id, track] : scene.tracks)
    for (const TrackedBox& e : track) {
      const Box3D& b = e.box;
      out << "box " << e.timestamp_index << " " << b.object_id << " " << b.class_name << " "
          << b.center[0] << " " << b.center[1] << " " << b.center[2] << " " << b.size[0] << " "
          << b.size[1] << " " << b.size[2] << " " << b.yaw << "\n";
    }
  if (!out) throw IoError("failed writing scene file: " + path);
}

}  // namespace mseg::anno
