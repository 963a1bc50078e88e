#include "mseg/synthdata.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "mseg/annotation.hpp"
#include "mseg/datamodel.hpp"
#include "mseg/errors.hpp"
#include "mseg/flowio.hpp"
#include "mseg/image.hpp"
#include "support/tmpdir.hpp"

using namespace mseg;
using test::TmpDir;
namespace fs = std::filesystem;

namespace {

synth::SceneSpec small_scene() {
  synth::SceneSpec sc;
  sc.sequence_id = "seq000";
  sc.h = 32;
  sc.w = 48;
  sc.t_total = 4;
  sc.pan = 2;
  sc.background_seed = 9;
  return sc;
}

synth::ObjectSpec sprite(int u0, int v0, int du, int dv, int w_px = 8, int h_px = 6) {
  synth::ObjectSpec o;
  o.u0 = u0;
  o.v0 = v0;
  o.du = du;
  o.dv = dv;
  o.w_px = w_px;
  o.h_px = h_px;
  o.texture_seed = 77;
  return o;
}

std::vector<std::uint8_t> slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

// Every regular file under root, as (relative path, bytes), sorted.
std::vector<std::pair<std::string, std::vector<std::uint8_t>>> tree_bytes(
    const std::string& root) {
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out.emplace_back(fs::relative(e.path(), root).string(), slurp(e.path().string()));
  std::sort(out.begin(), out.end());
  return out;
}

bool in_rect(int x, int y, const synth::ObjectSpec& o, int t) {
  const int u = o.u0 + o.du * t, v = o.v0 + o.dv * t;
  return x >= u && x < u + o.w_px && y >= v && y < v + o.h_px;
}

}  // namespace

TEST_CASE("world speed matches the projective model") {
  synth::SceneSpec sc = small_scene();  // depth 8 m, f 64, dt 0.1
  const double mps_per_px = sc.object_depth / sc.focal / sc.frame_dt;

  SUBCASE("object that pans with the background is world-static") {
    CHECK(synth::object_world_speed(sc, sprite(0, 0, sc.pan, 0)) == 0.0);
  }
  SUBCASE("pure horizontal offset") {
    CHECK(synth::object_world_speed(sc, sprite(0, 0, sc.pan + 3, 0)) ==
          doctest::Approx(3 * mps_per_px).epsilon(1e-12));
    CHECK(synth::object_world_speed(sc, sprite(0, 0, sc.pan - 2, 0)) ==
          doctest::Approx(2 * mps_per_px).epsilon(1e-12));
  }
  SUBCASE("vertical motion contributes in quadrature") {
    CHECK(synth::object_world_speed(sc, sprite(0, 0, sc.pan + 3, 4)) ==
          doctest::Approx(5 * mps_per_px).epsilon(1e-12));
  }
  SUBCASE("a stationary sprite under pan has nonzero world speed") {
    CHECK(synth::object_world_speed(sc, sprite(0, 0, 0, 0)) ==
          doctest::Approx(sc.pan * mps_per_px).epsilon(1e-12));
  }
}

TEST_CASE("ego pan confound: static object with nonzero image flow") {
  TmpDir tmp("confound");
  synth::SceneSpec sc = small_scene();
  sc.objects.push_back(sprite(10, 8, sc.pan, 0));  // pans with the background
  const auto res = synth::generate_scene(tmp.str(), sc, 5);
  CHECK(res.frames == sc.t_total);
  CHECK(res.warnings.empty());

  // The sprite's exact flow equals the background pan everywhere it sits.
  for (int t = 1; t < sc.t_total; ++t) {
    const auto f = flow::read_flo(data::flow_gt_path(tmp.str(), "seq000", t));
    for (int y = 0; y < sc.h; ++y)
      for (int x = 0; x < sc.w; ++x) {
        CHECK(f.u(y, x) == doctest::Approx(sc.pan));
        CHECK(f.v(y, x) == 0.f);
      }
  }

  // Yet the mask never marks it moving, and the scene labels it STATIC.
  for (int t = 0; t < sc.t_total; ++t) {
    const auto m = data::load_mask(data::mask_path(tmp.str(), "seq000", t));
    for (std::uint8_t v : m.labels) CHECK(v != 1);
  }
  const auto scene = anno::load_scene(tmp / "seq000/scene.txt");
  const auto labels = anno::label_objects(scene, 2);
  REQUIRE(labels.size() == 1);
  CHECK(labels[0].state == anno::MotionState::STATIC);
  CHECK(labels[0].speed_world < 1e-6);
  CHECK(scene.ego[1].speed > 0.0);  // the ego really is translating
}

TEST_CASE("moving sprite under zero ego motion") {
  TmpDir tmp("mover");
  synth::SceneSpec sc = small_scene();
  sc.pan = 0;
  const auto obj = sprite(6, 10, 3, 0);
  sc.objects.push_back(obj);
  synth::generate_scene(tmp.str(), sc, 5);

  for (int t = 1; t < sc.t_total; ++t) {
    const auto f = flow::read_flo(data::flow_gt_path(tmp.str(), "seq000", t));
    const auto m = data::load_mask(data::mask_path(tmp.str(), "seq000", t));
    for (int y = 0; y < sc.h; ++y)
      for (int x = 0; x < sc.w; ++x) {
        if (in_rect(x, y, obj, t)) {
          CHECK(f.u(y, x) == doctest::Approx(3.f));
          CHECK(m.at(y, x) == 1);
        } else {
          CHECK(f.u(y, x) == 0.f);
          // Disoccluded trail: a 3 px band behind the sprite is unknowable.
          const bool trail = in_rect(x, y, obj, t - 1) && !in_rect(x, y, obj, t);
          CHECK(m.at(y, x) == (trail ? 255 : 0));
        }
        CHECK(f.v(y, x) == 0.f);
      }
  }
  // Frame 0 has no flow files; its mask still labels the sprite.
  CHECK(!fs::exists(data::flow_path(tmp.str(), "seq000", 0)));
  CHECK(!fs::exists(data::flow_gt_path(tmp.str(), "seq000", 0)));
  const auto m0 = data::load_mask(data::mask_path(tmp.str(), "seq000", 0));
  int ones = 0;
  for (std::uint8_t v : m0.labels) ones += v == 1;
  CHECK(ones == obj.w_px * obj.h_px);
}

TEST_CASE("exact flow warps frame t-1 onto frame t outside ignored pixels") {
  TmpDir tmp("warp");
  synth::SceneSpec sc = small_scene();
  sc.t_total = 5;
  sc.pan = -2;
  sc.objects.push_back(sprite(4, 3, -2, 0));   // static under pan
  sc.objects.push_back(sprite(20, 14, 1, 1));  // mover with vertical drift
  sc.objects.push_back(sprite(34, 22, -4, 0, 9, 7));
  synth::generate_scene(tmp.str(), sc, 5);

  int checked = 0, ignored = 0;
  for (int t = 1; t < sc.t_total; ++t) {
    const auto prev = img::read_png(data::image_path(tmp.str(), "seq000", t - 1));
    const auto cur = img::read_png(data::image_path(tmp.str(), "seq000", t));
    const auto f = flow::read_flo(data::flow_gt_path(tmp.str(), "seq000", t));
    const auto m = data::load_mask(data::mask_path(tmp.str(), "seq000", t));
    for (int y = 0; y < sc.h; ++y)
      for (int x = 0; x < sc.w; ++x) {
        if (m.at(y, x) == 255) {
          ++ignored;
          continue;
        }
        const int sx = x - static_cast<int>(std::lround(f.u(y, x)));
        const int sy = y - static_cast<int>(std::lround(f.v(y, x)));
        REQUIRE(sx >= 0);
        REQUIRE(sx < sc.w);
        for (int c = 0; c < 3; ++c) CHECK(cur.at(y, x, c) == prev.at(sy, sx, c));
        ++checked;
      }
  }
  CHECK(checked > 3 * (sc.t_total - 1) * sc.h * sc.w / 4);
  CHECK(ignored > 0);  // pan edge columns and disocclusion trails exist
}

TEST_CASE("annotation pipeline reproduces generator masks from scene.txt") {
  TmpDir tmp("annogen");
  synth::SceneSpec sc = small_scene();
  sc.t_total = 6;
  sc.pan = 3;
  sc.objects.push_back(sprite(6, 4, 3, 0));           // static
  sc.objects.push_back(sprite(22, 6, 5, 0));          // mover, +2 px/frame rel
  sc.objects.push_back(sprite(10, 20, 0, 1, 10, 8));  // mover, against pan
  synth::generate_scene(tmp.str(), sc, 5);

  const auto scene = anno::load_scene(tmp / "seq000/scene.txt");
  TmpDir out("annomask");
  CHECK(anno::generate_masks(scene, out.str()) == sc.t_total);

  for (int t = 0; t < sc.t_total; ++t) {
    const auto gen = data::load_mask(data::mask_path(tmp.str(), "seq000", t));
    const auto ann = data::load_mask(data::mask_path(out.str(), "seq000", t));
    int moving_px = 0;
    for (int y = 0; y < sc.h; ++y)
      for (int x = 0; x < sc.w; ++x) {
        if (gen.at(y, x) == 255) continue;  // occlusion bookkeeping, not boxes
        CHECK(gen.at(y, x) == ann.at(y, x));
        moving_px += gen.at(y, x) == 1;
      }
    CHECK(moving_px > 0);
  }
}

TEST_CASE("generation is deterministic and degradation is seed-driven") {
  synth::SceneSpec sc = small_scene();
  sc.objects.push_back(sprite(8, 6, 4, 0));
  sc.objects.push_back(sprite(30, 20, 2, 0));

  SUBCASE("same spec and seed give byte-identical trees") {
    sc.flow_dropout = 0.5;
    sc.flow_noise = 0.3;
    TmpDir a("det_a"), b("det_b");
    synth::generate_scene(a.str(), sc, 42);
    synth::generate_scene(b.str(), sc, 42);
    const auto ta = tree_bytes(a.str()), tb = tree_bytes(b.str());
    REQUIRE(ta.size() == tb.size());
    REQUIRE(ta.size() > 0);
    for (std::size_t i = 0; i < ta.size(); ++i) {
      CHECK(ta[i].first == tb[i].first);
      CHECK(ta[i].second == tb[i].second);
    }
  }
  SUBCASE("without degradation the seed does not matter and flow == flow_gt") {
    TmpDir a("clean_a"), b("clean_b");
    synth::generate_scene(a.str(), sc, 1);
    synth::generate_scene(b.str(), sc, 999);
    const auto ta = tree_bytes(a.str()), tb = tree_bytes(b.str());
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i].second == tb[i].second);
    for (int t = 1; t < sc.t_total; ++t)
      CHECK(slurp(data::flow_path(a.str(), "seq000", t)) ==
            slurp(data::flow_gt_path(a.str(), "seq000", t)));
  }
  SUBCASE("degradation changes flow/ but never flow_gt/ or images") {
    TmpDir a("deg_a"), b("deg_b");
    synth::generate_scene(a.str(), sc, 7);
    sc.flow_dropout = 1.0;  // all sprite flow zeroed
    synth::generate_scene(b.str(), sc, 7);
    for (int t = 1; t < sc.t_total; ++t) {
      CHECK(slurp(data::flow_gt_path(a.str(), "seq000", t)) ==
            slurp(data::flow_gt_path(b.str(), "seq000", t)));
      CHECK(slurp(data::image_path(a.str(), "seq000", t)) ==
            slurp(data::image_path(b.str(), "seq000", t)));
      CHECK(slurp(data::flow_path(a.str(), "seq000", t)) !=
            slurp(data::flow_path(b.str(), "seq000", t)));
    }
    const auto f = flow::read_flo(data::flow_path(b.str(), "seq000", 1));
    for (int y = 0; y < sc.h; ++y)
      for (int x = 0; x < sc.w; ++x)
        if (in_rect(x, y, sc.objects[0], 1) || in_rect(x, y, sc.objects[1], 1)) {
          CHECK(f.u(y, x) == 0.f);
          CHECK(f.v(y, x) == 0.f);
        } else {
          CHECK(f.u(y, x) == doctest::Approx(sc.pan));
        }
  }
}

TEST_CASE("sprites that never enter the image are skipped with a warning") {
  TmpDir tmp("skip");
  synth::SceneSpec sc = small_scene();
  sc.objects.push_back(sprite(10, 8, sc.pan, 0));
  sc.objects.push_back(sprite(-500, 0, 1, 0));  // stays far left of the frame
  const auto res = synth::generate_scene(tmp.str(), sc, 5);
  REQUIRE(res.warnings.size() == 1);
  CHECK(res.warnings[0].find("object 1") != std::string::npos);
  CHECK(res.rendered_objects == std::vector<int>{0});

  const auto scene = anno::load_scene(tmp / "seq000/scene.txt");
  CHECK(scene.tracks.size() == 1);  // the skipped sprite leaves no track

  // A sprite that enters late is kept.
  synth::SceneSpec sc2 = small_scene();
  sc2.objects.push_back(sprite(-10, 8, 6, 0));  // visible from t = 1
  TmpDir tmp2("late");
  const auto res2 = synth::generate_scene(tmp2.str(), sc2, 5);
  CHECK(res2.warnings.empty());
  const auto m = data::load_mask(data::mask_path(tmp2.str(), "seq000", 3));
  int ones = 0;
  for (std::uint8_t v : m.labels) ones += v == 1;
  CHECK(ones > 0);
}

TEST_CASE("scene spec validation") {
  synth::SceneSpec sc = small_scene();
  sc.h = 0;
  CHECK_THROWS_AS(sc.validate(), ArgumentError);
  sc = small_scene();
  sc.flow_dropout = 1.5;
  CHECK_THROWS_AS(sc.validate(), ArgumentError);
  sc = small_scene();
  sc.frame_dt = 0.0;
  CHECK_THROWS_AS(sc.validate(), ArgumentError);
  sc = small_scene();
  sc.objects.push_back(sprite(0, 0, 0, 0, 0, 5));
  CHECK_THROWS_AS(sc.validate(), ArgumentError);
  sc = small_scene();
  sc.sequence_id = "";
  CHECK_THROWS_AS(synth::generate_scene("/tmp/unused", sc, 1), ArgumentError);
}

TEST_CASE("generated dataset has the advertised layout and balance") {
  TmpDir tmp("dataset");
  synth::DatasetSpec ds;
  ds.num_train = 3;
  ds.num_val = 2;
  ds.h = 64;
  ds.w = 160;
  ds.t_total = 6;
  ds.seed = 11;
  synth::generate_dataset(tmp.str(), ds);

  const auto train = data::list_sequences(tmp / "train");
  const auto val = data::list_sequences(tmp / "val");
  REQUIRE(train == std::vector<std::string>{"seq000", "seq001", "seq002"});
  REQUIRE(val == std::vector<std::string>{"seq000", "seq001"});

  for (const auto& [split, seqs] :
       {std::pair{std::string("train"), train}, std::pair{std::string("val"), val}}) {
    for (const auto& seq : seqs) {
      const std::string root = tmp / split;
      CHECK(data::sequence_length(root, seq) == ds.t_total);
      const auto scene = anno::load_scene(root + "/" + seq + "/scene.txt");
      CHECK(scene.tracks.size() == 4);
      int moving = 0, statics = 0;
      for (const auto& lab : anno::label_objects(scene, 1))
        (lab.state == anno::MotionState::MOVING ? moving : statics)++;
      CHECK(moving == 2);
      CHECK(statics == 2);
      CHECK(scene.ego[1].speed > 0.0);  // every scene has real ego motion

      // Windows load end to end and both classes appear in the final mask.
      const auto sample = data::load_sequence(root, seq, ds.t_total - 1, 4);
      std::set<int> classes;
      for (std::uint8_t v : sample.target.labels)
        if (v != 255) classes.insert(v);
      CHECK(classes == std::set<int>{0, 1});
    }
  }

  SUBCASE("dataset generation is deterministic") {
    TmpDir again("dataset2");
    synth::generate_dataset(again.str(), ds);
    const auto ta = tree_bytes(tmp.str()), tb = tree_bytes(again.str());
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
      CHECK(ta[i].first == tb[i].first);
      CHECK(ta[i].second == tb[i].second);
    }
  }
  SUBCASE("different seeds give different scenes") {
    TmpDir again("dataset3");
    synth::DatasetSpec ds2 = ds;
    ds2.seed = 12;
    synth::generate_dataset(again.str(), ds2);
    CHECK(slurp(data::image_path(tmp / "train", "seq000", 0)) !=
          slurp(data::image_path(again / "train", "seq000", 0)));
  }
}

TEST_CASE("dataset spec validation") {
  synth::DatasetSpec ds;
  TmpDir tmp("dsval");
  ds.num_train = 0;
  CHECK_THROWS_AS(synth::generate_dataset(tmp.str(), ds), ArgumentError);
  ds = synth::DatasetSpec{};
  ds.h = 60;  // not divisible by 8
  CHECK_THROWS_AS(synth::generate_dataset(tmp.str(), ds), ArgumentError);
  ds = synth::DatasetSpec{};
  ds.w = 64;  // too narrow for pan_max 3 over 8 frames
  CHECK_THROWS_AS(synth::generate_dataset(tmp.str(), ds), ArgumentError);
  ds = synth::DatasetSpec{};
  ds.t_total = 1;
  CHECK_THROWS_AS(synth::generate_dataset(tmp.str(), ds), ArgumentError);
}
