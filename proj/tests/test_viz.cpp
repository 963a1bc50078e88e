#include "mseg/viz.hpp"

#include <doctest.h>

#include <filesystem>
#include <vector>

#include "mseg/errors.hpp"
#include "mseg/evaluation.hpp"
#include "mseg/flow_encoding.hpp"
#include "mseg/synthdata.hpp"
#include "support/tmpdir.hpp"

using namespace mseg;
using test::TmpDir;
namespace fs = std::filesystem;

namespace {

Tensor gray_frame(int h, int w, double level) {
  Tensor t({3, h, w});
  t.fill(level);
  return t;
}

}  // namespace

TEST_CASE("mask rendering uses one color per label") {
  data::MotionMask m(2, 3);
  m.at(0, 0) = 0;
  m.at(0, 1) = 1;
  m.at(0, 2) = 255;
  m.at(1, 0) = 1;
  const auto im = viz::render_mask(m);
  CHECK(im.h == 2);
  CHECK(im.w == 3);
  // moving is the warm channel-dominant color, static is dark, ignore is gray
  CHECK(im.at(0, 1, 0) > im.at(0, 1, 2));
  CHECK(im.at(0, 0, 0) == im.at(0, 0, 1));
  CHECK(im.at(0, 2, 0) == 128);
  std::vector<std::uint8_t> a{im.at(0, 1, 0), im.at(0, 1, 1), im.at(0, 1, 2)};
  std::vector<std::uint8_t> b{im.at(1, 0, 0), im.at(1, 0, 1), im.at(1, 0, 2)};
  CHECK(a == b);

  data::MotionMask bad(1, 1);
  bad.at(0, 0) = 7;
  CHECK_THROWS_AS(viz::render_mask(bad), ArgumentError);
}

TEST_CASE("panel layout arithmetic and strip placement") {
  const int h = 8, w = 10;
  viz::PanelSpec spec;
  spec.margin = 3;
  spec.separator = 16;

  flow::FlowField fl(h, w);  // zero flow renders white
  data::MotionMask target(h, w), pred(h, w);
  target.at(0, 0) = 1;
  pred.at(1, 1) = 1;
  const auto panel = viz::compose_panel(gray_frame(h, w, 0.5), fl, &target, pred, spec);

  CHECK(panel.h == 4 * h + 3 * spec.margin);
  CHECK(panel.w == w);

  // strip 0: the RGB frame
  CHECK(panel.at(0, 0, 0) == 128);
  // separator rows keep the configured gray
  CHECK(panel.at(h, 0, 0) == 16);
  CHECK(panel.at(h + spec.margin - 1, w - 1, 2) == 16);
  // strip 1: zero flow is exactly white on the color wheel
  CHECK(panel.at(h + spec.margin, 0, 0) == 255);
  CHECK(panel.at(h + spec.margin, 0, 1) == 255);
  // strip 2: target pixel (0,0) is the moving color
  const auto moving = viz::render_mask(target);
  CHECK(panel.at(2 * (h + spec.margin), 0, 0) == moving.at(0, 0, 0));
  CHECK(panel.at(2 * (h + spec.margin), 1, 0) == moving.at(0, 1, 0));
  // strip 3: prediction pixel (1,1)
  CHECK(panel.at(3 * (h + spec.margin) + 1, 1, 0) == moving.at(0, 0, 0));

  SUBCASE("missing reference renders the hatch placeholder") {
    const auto open = viz::compose_panel(gray_frame(h, w, 0.5), fl, nullptr, pred, spec);
    const auto hatch = viz::render_absent(h, w);
    bool differs = false;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        CHECK(open.at(2 * (h + spec.margin) + y, x, 0) == hatch.at(y, x, 0));
        differs |= open.at(2 * (h + spec.margin) + y, x, 0) !=
                   panel.at(2 * (h + spec.margin) + y, x, 0);
      }
    CHECK(differs);
  }
  SUBCASE("size mismatches are rejected") {
    data::MotionMask small(h - 1, w);
    CHECK_THROWS_AS(viz::compose_panel(gray_frame(h, w, 0.5), fl, &small, pred, spec),
                    ArgumentError);
    CHECK_THROWS_AS(viz::compose_panel(gray_frame(h, w, 0.5), fl, &target, small, spec),
                    ArgumentError);
    flow::FlowField fat(h, w + 1);
    CHECK_THROWS_AS(viz::compose_panel(gray_frame(h, w, 0.5), fat, &target, pred, spec),
                    ArgumentError);
  }
}

TEST_CASE("panels are written for dataset windows") {
  TmpDir tmp("viz_data");
  synth::SceneSpec sc;
  sc.sequence_id = "seq000";
  sc.h = 16;
  sc.w = 32;
  sc.t_total = 4;
  sc.pan = 1;
  synth::ObjectSpec o;
  o.u0 = 4;
  o.v0 = 4;
  o.du = 3;
  o.dv = 0;
  o.w_px = 6;
  o.h_px = 6;
  sc.objects.push_back(o);
  synth::generate_scene(tmp.str(), sc, 3);

  net::Model model(net::ModelConfig::tiny(net::Variant::RGB_FLOW, 2), 5);
  TmpDir out("viz_out");

  SUBCASE("respects the limit") {
    CHECK(viz::write_panels(model, tmp.str(), out.str(), 2) == 2);
    CHECK(fs::exists(out / "seq000_000001.png"));
    CHECK(fs::exists(out / "seq000_000002.png"));
    CHECK(!fs::exists(out / "seq000_000003.png"));
  }
  SUBCASE("writes every window when the limit allows") {
    CHECK(viz::write_panels(model, tmp.str(), out.str(), 100) == 3);
    const auto im = img::read_png(out / "seq000_000003.png");
    viz::PanelSpec spec;
    CHECK(im.h == 4 * sc.h + 3 * spec.margin);
    CHECK(im.w == sc.w);
  }
  SUBCASE("empty root throws") {
    TmpDir none("viz_empty");
    CHECK_THROWS_AS(viz::write_panels(model, none.str(), out.str(), 2), NotFoundError);
  }
}
