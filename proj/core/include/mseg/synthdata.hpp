#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mseg::synth {

// A textured rectangle at fixed depth, moving with integer image velocity.
// An object whose (du, dv) equals (pan, 0) is static in the world: its image
// motion is exactly the ego pan.
struct ObjectSpec {
  int w_px = 12, h_px = 10;  // sprite size in pixels
  int u0 = 0, v0 = 0;        // top-left corner at t = 0
  int du = 0, dv = 0;        // image velocity, pixels/frame
  std::string class_name = "car";
  std::uint64_t texture_seed = 1;
};

// Fronto-parallel scene: a value-noise backdrop panning pan px/frame under
// lateral ego motion, with thin boxes at a shared depth composited on top in
// listing order. Integer velocities make the emitted flow exact.
struct SceneSpec {
  std::string sequence_id = "seq000";
  int h = 64, w = 160;
  int t_total = 8;
  int pan = 2;  // background image shift, pixels/frame (sign = direction)
  double focal = 64.0;
  double object_depth = 8.0;  // meters along sensor x
  double frame_dt = 0.1;      // seconds
  double threshold = 1.0;     // world speed (m/s) above which an object is moving
  std::uint64_t background_seed = 1;
  // Observed-flow degradation for flow/ (flow_gt/ always stays exact):
  // per-(object,frame) probability of zeroing the object's flow, and iid
  // Gaussian pixel noise. Both default off.
  double flow_dropout = 0.0;
  double flow_noise = 0.0;
  std::vector<ObjectSpec> objects;

  void validate() const;  // throws ArgumentError
};

// World speed (m/s) implied by an object's image velocity under the spec's
// pan, depth, focal length, and frame interval.
double object_world_speed(const SceneSpec& spec, const ObjectSpec& obj);

struct GenResult {
  int frames = 0;
  std::vector<std::string> warnings;       // one per skipped sprite
  std::vector<int> rendered_objects;       // indices into spec.objects
};

// Writes root/<sequence_id>/{image,flow,flow_gt,mask}/... plus scene.txt with
// the matching sensor-frame boxes, ego poses, and calibration. Masks mark
// moving-object pixels 1 and carry 255 where frame t cannot be reconstructed
// from frame t-1 (disocclusion or out-of-image source). Sprites that never
// intersect the image are skipped with a warning. Deterministic in
// (spec, seed); seed drives only the observed-flow degradation.
GenResult generate_scene(const std::string& root, const SceneSpec& spec, std::uint64_t seed);

struct DatasetSpec {
  int num_train = 12;
  int num_val = 3;
  int h = 64, w = 160;
  int t_total = 8;
  int pan_max = 3;  // per-scene pan drawn from [-pan_max, pan_max] \ {0}
  // Observed-flow degradation applied to every scene (see SceneSpec). The
  // defaults leave single frames ambiguous often enough that temporal
  // aggregation pays off, while flow_gt/ stays exact.
  double flow_dropout = 0.3;
  double flow_noise = 0.25;
  std::uint64_t seed = 1;
};

// Generates root/train/seqNNN and root/val/seqNNN. Every scene contains at
// least one static and one moving object, all visible for the whole scene.
void generate_dataset(const std::string& root, const DatasetSpec& spec);

}  // namespace mseg::synth
