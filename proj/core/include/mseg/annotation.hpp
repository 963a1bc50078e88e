#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "mseg/datamodel.hpp"

namespace mseg::anno {

// 3D box in the ego sensor frame (x forward, y left, z up), yaw about z.
struct Box3D {
  std::array<double, 3> center{};  // meters
  std::array<double, 3> size{};    // l, w, h; all > 0
  double yaw = 0.0;                // radians
  std::string object_id;
  std::string class_name;
};

// Ego vehicle pose in the world frame; heading rotates sensor x into world.
struct EgoPose {
  std::array<double, 3> position{};
  double heading = 0.0;  // radians about world z
  double speed = 0.0;    // m/s, >= 0
  int timestamp_index = 0;
};

struct Calibration {
  std::array<double, 9> intrinsics{};   // row-major 3x3, upper triangular
  std::array<double, 16> extrinsics{};  // row-major 4x4, sensor -> camera
  void validate() const;                // throws ArgumentError on bad invariants
};

enum class MotionState { STATIC, MOVING };

struct MotionLabel {
  std::string object_id;
  MotionState state = MotionState::STATIC;
  double speed_world = 0.0;  // m/s
};

struct Thresholds {
  std::map<std::string, double> per_class;  // m/s
  double fallback = 1.0;

  double of(const std::string& class_name) const {
    auto it = per_class.find(class_name);
    return it == per_class.end() ? fallback : it->second;
  }
};

struct TrackedBox {
  int timestamp_index = 0;
  Box3D box;
};
using Track = std::vector<TrackedBox>;  // sorted by timestamp

struct Scene {
  std::string sequence_id;
  int image_h = 0, image_w = 0;
  double frame_dt = 0.1;  // seconds between consecutive timestamps
  Calibration calib;
  Thresholds thresholds;
  std::vector<EgoPose> ego;           // sorted by timestamp
  std::map<std::string, Track> tracks;  // keyed by object id
};

// Maps a sensor-frame point into the world frame under the given ego pose.
std::array<double, 3> world_from_sensor(const EgoPose& pose, const std::array<double, 3>& p);

// Binary mask of the filled convex hull of the box corners that project in
// front of the camera, clipped to the image. All corners behind the camera
// give an all-zero mask; singular intrinsics throw ArgumentError.
data::MotionMask project_box(const Box3D& box, const Calibration& calib, int image_h,
                             int image_w);

// World-frame velocity of the tracked object at timestamp t, from the pose
// difference against t-1 (or t+1 when t is the first track entry). Throws
// InsufficientDataError when fewer than two usable entries exist and
// ArgumentError when t or a needed ego pose is absent.
std::array<double, 3> object_world_velocity(const Track& track, const std::vector<EgoPose>& ego,
                                            int t, double dt = 0.1);

// MOVING iff speed is strictly above the class threshold. Negative speed
// throws ArgumentError.
MotionState classify_motion(double speed_world, const std::string& class_name,
                            const Thresholds& thresholds);

// Labels every object present at timestamp t. Objects whose track is too
// short to estimate a velocity are labeled STATIC with speed 0.
std::vector<MotionLabel> label_objects(const Scene& scene, int t);

// Writes one mask per ego timestamp (union of MOVING object projections)
// into <out_root>/<sequence_id>/mask/. Returns the number of masks written.
int generate_masks(const Scene& scene, const std::string& out_root);

// Plain-text scene container ("modscene v1"): calibration, per-timestamp
// ego poses, and per-timestamp box records.
Scene load_scene(const std::string& path);
void save_scene(const std::string& path, const Scene& scene);

}  // namespace mseg::anno
