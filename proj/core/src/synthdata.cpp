#include "mseg/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mseg/annotation.hpp"
#include "mseg/datamodel.hpp"
#include "mseg/errors.hpp"
#include "mseg/flowio.hpp"
#include "mseg/image.hpp"
#include "mseg/rng.hpp"

namespace mseg::synth {
namespace {

namespace fs = std::filesystem;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double hash01(std::uint64_t seed, std::int64_t a, std::int64_t b, std::int64_t c) {
  std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(a)));
  h = mix(h ^ mix(static_cast<std::uint64_t>(b)));
  h = mix(h ^ mix(static_cast<std::uint64_t>(c)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Smooth value noise on an integer lattice of the given cell size.
double vnoise(std::uint64_t seed, double x, double y, int channel, double cell) {
  const double gx = x / cell, gy = y / cell;
  const auto x0 = static_cast<std::int64_t>(std::floor(gx));
  const auto y0 = static_cast<std::int64_t>(std::floor(gy));
  double fx = gx - static_cast<double>(x0), fy = gy - static_cast<double>(y0);
  fx = fx * fx * (3 - 2 * fx);
  fy = fy * fy * (3 - 2 * fy);
  const double c00 = hash01(seed, x0, y0, channel);
  const double c10 = hash01(seed, x0 + 1, y0, channel);
  const double c01 = hash01(seed, x0, y0 + 1, channel);
  const double c11 = hash01(seed, x0 + 1, y0 + 1, channel);
  const double top = c00 + (c10 - c00) * fx;
  const double bot = c01 + (c11 - c01) * fx;
  return top + (bot - top) * fy;
}

double background_value(std::uint64_t seed, double x, double y, int channel) {
  const double coarse = vnoise(seed, x, y, channel, 13.0);
  const double fine = vnoise(seed ^ 0x5bd1e995ull, x, y, channel, 5.0);
  return 0.22 + 0.56 * (0.65 * coarse + 0.35 * fine);
}

double sprite_value(std::uint64_t seed, int lx, int ly, int channel) {
  const double base = 0.25 + 0.5 * hash01(seed, 9001, 77, channel);
  const double texture = vnoise(seed ^ 0x2545f491ull, lx, ly, channel, 4.0);
  return std::clamp(base + 0.3 * (texture - 0.5), 0.02, 0.98);
}

struct Placed {
  int index = 0;  // position in spec.objects
  int u = 0, v = 0;  // top-left at the current frame
  const ObjectSpec* obj = nullptr;
  bool moving = false;
  double speed = 0.0;
};

}  // namespace

void SceneSpec::validate() const {
  if (sequence_id.empty()) throw ArgumentError("sequence_id must not be empty");
  if (h <= 0 || w <= 0) throw ArgumentError("image size must be positive");
  if (t_total < 1) throw ArgumentError("t_total must be >= 1");
  if (focal <= 0) throw ArgumentError("focal length must be positive");
  if (object_depth <= 0) throw ArgumentError("object depth must be positive");
  if (frame_dt <= 0) throw ArgumentError("frame_dt must be positive");
  if (threshold < 0) throw ArgumentError("threshold must be >= 0");
  if (flow_dropout < 0 || flow_dropout > 1) throw ArgumentError("flow_dropout must be in [0,1]");
  if (flow_noise < 0) throw ArgumentError("flow_noise must be >= 0");
  for (const auto& o : objects) {
    if (o.w_px <= 0 || o.h_px <= 0) throw ArgumentError("sprite size must be positive");
    if (o.class_name.empty()) throw ArgumentError("object class must not be empty");
  }
}

double object_world_speed(const SceneSpec& spec, const ObjectSpec& obj) {
  const double per_px = spec.object_depth / spec.focal;  // meters per image pixel
  const double dy = (spec.pan - obj.du) * per_px;        // world y step per frame
  const double dz = -obj.dv * per_px;                    // world z step per frame
  return std::hypot(dy, dz) / spec.frame_dt;
}

GenResult generate_scene(const std::string& root, const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int h = spec.h, w = spec.w, T = spec.t_total;
  const double f = spec.focal, d = spec.object_depth;
  const double cx = w / 2.0, cy = h / 2.0;
  const double ego_step = spec.pan * d / f;  // lateral world meters per frame

  GenResult result;
  std::vector<Placed> kept;
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const ObjectSpec& o = spec.objects[i];
    bool visible = false;
    for (int t = 0; t < T && !visible; ++t) {
      const int u = o.u0 + o.du * t, v = o.v0 + o.dv * t;
      visible = u < w && u + o.w_px > 0 && v < h && v + o.h_px > 0;
    }
    if (!visible) {
      result.warnings.push_back("object " + std::to_string(i) + " (" + o.class_name +
                                ") never enters the frame; skipped");
      continue;
    }
    Placed p;
    p.index = static_cast<int>(i);
    p.obj = &o;
    p.speed = object_world_speed(spec, o);
    p.moving = p.speed > spec.threshold;
    kept.push_back(p);
    result.rendered_objects.push_back(static_cast<int>(i));
  }

  const fs::path base = fs::path(root) / spec.sequence_id;
  fs::create_directories(base / "image");
  fs::create_directories(base / "flow");
  fs::create_directories(base / "flow_gt");
  fs::create_directories(base / "mask");

  // owner: -1 background, else index into kept
  std::vector<int> prev_owner, owner(static_cast<std::size_t>(h) * w, -1);

  for (int t = 0; t < T; ++t) {
    prev_owner = owner;
    std::fill(owner.begin(), owner.end(), -1);
    for (std::size_t k = 0; k < kept.size(); ++k) {
      kept[k].u = kept[k].obj->u0 + kept[k].obj->du * t;
      kept[k].v = kept[k].obj->v0 + kept[k].obj->dv * t;
      const int x0 = std::max(0, kept[k].u), x1 = std::min(w, kept[k].u + kept[k].obj->w_px);
      const int y0 = std::max(0, kept[k].v), y1 = std::min(h, kept[k].v + kept[k].obj->h_px);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) owner[static_cast<std::size_t>(y) * w + x] =
            static_cast<int>(k);
    }

    img::ImageU8 frame(h, w, 3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int o = owner[static_cast<std::size_t>(y) * w + x];
        for (int c = 0; c < 3; ++c) {
          const double val =
              o < 0 ? background_value(spec.background_seed, x - spec.pan * t, y, c)
                    : sprite_value(kept[static_cast<std::size_t>(o)].obj->texture_seed,
                                   x - kept[static_cast<std::size_t>(o)].u,
                                   y - kept[static_cast<std::size_t>(o)].v, c);
          frame.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)] =
              static_cast<std::uint8_t>(std::lround(val * 255.0));
        }
      }
    img::write_png(data::image_path(root, spec.sequence_id, t), frame);

    data::MotionMask mask(h, w);
    if (t >= 1) {
      flow::FlowField exact(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int o = owner[static_cast<std::size_t>(y) * w + x];
          const int du = o < 0 ? spec.pan : kept[static_cast<std::size_t>(o)].obj->du;
          const int dv = o < 0 ? 0 : kept[static_cast<std::size_t>(o)].obj->dv;
          exact.set(y, x, static_cast<float>(du), static_cast<float>(dv));
          const int sx = x - du, sy = y - dv;
          const bool src_in = sx >= 0 && sx < w && sy >= 0 && sy < h;
          const bool same_surface =
              src_in && prev_owner[static_cast<std::size_t>(sy) * w + sx] == o;
          if (!same_surface) mask.at(y, x) = 255;  // not reconstructible from t-1
        }
      flow::write_flo(data::flow_gt_path(root, spec.sequence_id, t), exact);

      flow::FlowField observed = exact;
      if (spec.flow_dropout > 0 || spec.flow_noise > 0) {
        Rng rng(mix(seed) ^ mix(static_cast<std::uint64_t>(t)));
        std::vector<bool> dropped(kept.size(), false);
        for (std::size_t k = 0; k < kept.size(); ++k)
          dropped[k] = rng.uniform() < spec.flow_dropout;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const int o = owner[static_cast<std::size_t>(y) * w + x];
            float u = observed.u(y, x), v = observed.v(y, x);
            if (o >= 0 && dropped[static_cast<std::size_t>(o)]) {
              u = 0.f;
              v = 0.f;
            }
            if (spec.flow_noise > 0) {
              u += static_cast<float>(spec.flow_noise * rng.normal());
              v += static_cast<float>(spec.flow_noise * rng.normal());
            }
            observed.set(y, x, u, v);
          }
      }
      flow::write_flo(data::flow_path(root, spec.sequence_id, t), observed);
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int o = owner[static_cast<std::size_t>(y) * w + x];
        if (o >= 0 && kept[static_cast<std::size_t>(o)].moving && mask.at(y, x) != 255)
          mask.at(y, x) = 1;
      }
    data::save_mask(data::mask_path(root, spec.sequence_id, t), mask);
  }

  anno::Scene scene;
  scene.sequence_id = spec.sequence_id;
  scene.image_h = h;
  scene.image_w = w;
  scene.frame_dt = spec.frame_dt;
  scene.calib.intrinsics = {f, 0, cx, 0, f, cy, 0, 0, 1};
  scene.calib.extrinsics = {0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0, 0, 0, 0, 1};
  scene.thresholds.fallback = spec.threshold;
  for (int t = 0; t < T; ++t) {
    anno::EgoPose pose;
    pose.position = {0.0, ego_step * t, 0.0};
    pose.heading = 0.0;
    pose.speed = std::abs(ego_step) / spec.frame_dt;
    pose.timestamp_index = t;
    scene.ego.push_back(pose);
  }
  const double per_px = d / f;
  for (const Placed& p : kept) {
    const ObjectSpec& o = *p.obj;
    anno::Track track;
    for (int t = 0; t < T; ++t) {
      anno::TrackedBox tb;
      tb.timestamp_index = t;
      const double uc = o.u0 + o.du * t + o.w_px / 2.0;
      const double vc = o.v0 + o.dv * t + o.h_px / 2.0;
      tb.box.center = {d, (cx - uc) * per_px, (cy - vc) * per_px};
      tb.box.size = {0.01, o.w_px * per_px, o.h_px * per_px};
      tb.box.yaw = 0.0;
      tb.box.object_id = "obj" + std::to_string(p.index);
      tb.box.class_name = o.class_name;
      track.push_back(tb);
    }
    scene.tracks["obj" + std::to_string(p.index)] = std::move(track);
  }
  anno::save_scene((base / "scene.txt").string(), scene);

  result.frames = T;
  return result;
}

void generate_dataset(const std::string& root, const DatasetSpec& spec) {
  if (spec.num_train < 1 || spec.num_val < 0) throw ArgumentError("bad dataset scene counts");
  if (spec.pan_max < 1) throw ArgumentError("pan_max must be >= 1");
  if (spec.t_total < 2) throw ArgumentError("dataset scenes need t_total >= 2");
  if (spec.h % 8 != 0 || spec.w % 8 != 0)
    throw ArgumentError("dataset frames must have sides divisible by 8");
  if (spec.h < 32) throw ArgumentError("dataset frames must be at least 32 px tall");
  // Sprites stay fully visible for the whole scene, so the widest drift plus
  // the widest sprite must leave placement room.
  const int worst_drift = (spec.pan_max + 3) * (spec.t_total - 1);
  if (spec.w < worst_drift + 36)
    throw ArgumentError("frame too narrow for the requested pan and length");

  auto make_scene = [&](const std::string& split, int index, std::uint64_t tag) {
    Rng rng(mix(spec.seed) ^ mix(tag) ^ mix(static_cast<std::uint64_t>(index)));
    SceneSpec sc;
    char name[16];
    std::snprintf(name, sizeof(name), "seq%03d", index);
    sc.sequence_id = name;
    sc.h = spec.h;
    sc.w = spec.w;
    sc.t_total = spec.t_total;
    sc.pan = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform_int(1, spec.pan_max);
    sc.flow_dropout = spec.flow_dropout;
    sc.flow_noise = spec.flow_noise;
    sc.background_seed = mix(spec.seed ^ tag) + static_cast<std::uint64_t>(index) * 1000003ull;

    // Four sprites in disjoint horizontal strips (so they never overlap):
    // two panning with the background, two with their own velocity. Which
    // strips hold the movers is shuffled per scene, and sprite sizes are drawn
    // from the same range for both roles, so appearance and position carry no
    // information about motion; only the flow and the frame-to-frame
    // displacement do.
    const int lanes = 4;
    const int lane_h = spec.h / lanes;
    const bool dv_allowed = lane_h >= sc.t_total + 6;
    const int dv_room = dv_allowed ? sc.t_total - 1 : 0;
    std::array<bool, 4> mover_lane{true, true, false, false};
    for (int i = lanes - 1; i > 0; --i)
      std::swap(mover_lane[static_cast<std::size_t>(i)],
                mover_lane[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    int movers_seen = 0, statics_seen = 0;
    for (int lane = 0; lane < lanes; ++lane) {
      const bool moving = mover_lane[static_cast<std::size_t>(lane)];
      ObjectSpec o;
      o.texture_seed = mix(sc.background_seed ^ static_cast<std::uint64_t>(lane + 17));
      o.class_name = moving ? (movers_seen++ == 0 ? "car" : "van")
                            : (statics_seen++ == 0 ? "parked" : "pole");
      if (moving) {
        const int offset = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform_int(2, 3);
        o.du = sc.pan + offset;
        o.dv = dv_allowed && rng.uniform() < 0.3 ? (rng.uniform() < 0.5 ? -1 : 1) : 0;
      } else {
        o.du = sc.pan;
        o.dv = 0;
      }
      const int drift_x = o.du * (sc.t_total - 1);
      const int drift_y = o.dv * (sc.t_total - 1);
      o.w_px = rng.uniform_int(10, 22);
      o.h_px = rng.uniform_int(6, lane_h - dv_room - 1);
      o.u0 = rng.uniform_int(std::max(0, -drift_x) + 1,
                             spec.w - o.w_px - std::max(0, drift_x) - 1);
      const int lane_top = lane * lane_h;
      o.v0 = rng.uniform_int(lane_top + std::max(0, -drift_y),
                             lane_top + lane_h - o.h_px - std::max(0, drift_y));
      sc.objects.push_back(o);
    }
    const auto res = generate_scene(root + "/" + split, sc, mix(tag) ^ mix(spec.seed));
    if (!res.warnings.empty())
      throw IntegrityError("dataset scene " + sc.sequence_id + " dropped a sprite");
  };

  for (int i = 0; i < spec.num_train; ++i) make_scene("train", i, 0x7261ull);
  for (int i = 0; i < spec.num_val; ++i) make_scene("val", i, 0x76a1ull);
}

}  // namespace mseg::synth
