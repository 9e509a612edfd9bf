#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "maskattn/rng.hpp"
#include "maskattn/scenes.hpp"

using namespace maskattn;
using scenes::Color;
using scenes::Region;
using scenes::SceneSpec;
using scenes::Shape;

namespace {

SceneSpec one(Color c, Shape sh, Region r) { return SceneSpec{{{c, sh, r}}}; }

SceneSpec two(Color c1, Shape s1, Region r1, Color c2, Shape s2, Region r2) {
  return SceneSpec{{{c1, s1, r1}, {c2, s2, r2}}};
}

}  // namespace

TEST_CASE("every scene in the space renders to a fully compliant image") {
  std::set<std::vector<int>> captions;
  for (int idx = 0; idx < scenes::scene_space_size(); ++idx) {
    SceneSpec s = scenes::scene_by_index(idx);
    s.validate();
    CHECK(scenes::index_of_scene(s) == idx);

    std::vector<int> cap = scenes::caption_of(s);
    CHECK(cap.size() == static_cast<std::size_t>(scenes::caption_len));
    CHECK(captions.insert(cap).second);
    CHECK(scenes::scene_of_caption(cap) == s);

    Tensor img = scenes::render_scene(s, 16);
    scenes::ComplianceReport rep = scenes::compliance_score(img, s);
    CHECK(rep.presence == 1.0);
    CHECK(rep.binding == 1.0);
    CHECK(rep.placement == 1.0);
    CHECK(rep.total == 1.0);
  }
  CHECK(captions.size() == static_cast<std::size_t>(scenes::scene_space_size()));
  CHECK(scenes::scene_space_size() == 32 + 576);
}

TEST_CASE("scene index bounds and validation rules") {
  CHECK_THROWS_AS(scenes::scene_by_index(-1), std::invalid_argument);
  CHECK_THROWS_AS(scenes::scene_by_index(scenes::scene_space_size()), std::invalid_argument);

  SceneSpec empty;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
  SceneSpec same_color = two(Color::red, Shape::square, Region::left,
                             Color::red, Shape::circle, Region::right);
  CHECK_THROWS_AS(same_color.validate(), std::invalid_argument);
  SceneSpec same_region = two(Color::red, Shape::square, Region::left,
                              Color::green, Shape::circle, Region::left);
  CHECK_THROWS_AS(same_region.validate(), std::invalid_argument);
}

TEST_CASE("the split holds out every eighth scene") {
  int held = 0;
  for (int idx = 0; idx < scenes::scene_space_size(); ++idx)
    if (scenes::held_out(idx)) ++held;
  CHECK(held == 76);

  std::vector<int> pairs = scenes::held_out_two_object_indices();
  CHECK(pairs.size() == 72);
  for (int idx : pairs) {
    CHECK(scenes::held_out(idx));
    CHECK(scenes::scene_by_index(idx).objects.size() == 2);
  }

  Rng rng(701);
  for (int k = 0; k < 2000; ++k) {
    SceneSpec s = scenes::sample_train_scene(rng);
    CHECK_FALSE(scenes::held_out(scenes::index_of_scene(s)));
  }
}

TEST_CASE("sampling covers the space uniformly and always validates") {
  Rng rng(702);
  int draws = 10000;
  int region_counts[4] = {0, 0, 0, 0};
  int singles = 0;
  for (int k = 0; k < draws; ++k) {
    SceneSpec s = scenes::sample_scene(rng);
    s.validate();
    ++region_counts[static_cast<int>(s.objects[0].region)];
    if (s.objects.size() == 1) ++singles;
  }
  // each region holds a quarter of first objects; 3 sigma of a binomial count
  for (int r = 0; r < 4; ++r) CHECK(std::abs(region_counts[r] - 2500) < 130);
  // one-object scenes are 32 of 608
  double p1 = 32.0 / 608.0;
  double sd = std::sqrt(draws * p1 * (1 - p1));
  CHECK(std::abs(singles - draws * p1) < 3 * sd);

  Rng rng_a(703), rng_b(703);
  for (int k = 0; k < 50; ++k)
    CHECK(scenes::sample_scene(rng_a) == scenes::sample_scene(rng_b));
}

TEST_CASE("captions read back as prompts") {
  SceneSpec s = two(Color::blue, Shape::circle, Region::top,
                    Color::yellow, Shape::square, Region::bottom);
  CHECK(scenes::caption_text(s) == "blue circle top and yellow square bottom");
  CHECK(scenes::parse_prompt(scenes::caption_text(s)) == scenes::caption_of(s));
  CHECK(scenes::parse_prompt("  red   square\tleft ") ==
        scenes::caption_of(one(Color::red, Shape::square, Region::left)));

  CHECK_THROWS_AS(scenes::parse_prompt(""), std::invalid_argument);
  CHECK_THROWS_AS(scenes::parse_prompt("red square left and blue circle top and red"),
                  std::invalid_argument);
  CHECK_THROWS_AS(scenes::word_id("purple"), std::invalid_argument);
  try {
    scenes::word_id("purple");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("red") != std::string::npos);
  }
  CHECK(scenes::word_of(scenes::word_id("circle")) == "circle");
  CHECK_THROWS_AS(scenes::word_of(scenes::n_words), std::invalid_argument);
  CHECK_THROWS_AS(scenes::scene_of_caption({1, 2, 3}), std::invalid_argument);
}

TEST_CASE("pixels far from the only object stay exactly at the background level") {
  SceneSpec s = one(Color::red, Shape::square, Region::left);
  s.background = 0.37;
  Tensor img = scenes::render_scene(s, 16);
  CHECK(img.shape() == std::vector<int>{3, 16, 16});
  // the object is centered at x=4 with half-extent 2, so the right half of the
  // frame is untouched in every channel
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 16; ++y)
      for (int x = 8; x < 16; ++x)
        CHECK(img.data()[(static_cast<std::size_t>(ch) * 16 + y) * 16 + x] == 0.37);

  SceneSpec empty;
  CHECK_THROWS_AS(scenes::render_scene(empty, 16), std::invalid_argument);
  CHECK_THROWS_AS(scenes::render_scene(s, 4), std::invalid_argument);
}

TEST_CASE("a red square on the left stays on the left") {
  Tensor img = scenes::render_scene(one(Color::red, Shape::square, Region::left), 16);
  int strong_left = 0, strong_right = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      double r = img.data()[static_cast<std::size_t>(y) * 16 + x];
      double g = img.data()[256 + static_cast<std::size_t>(y) * 16 + x];
      if (r - g > 0.9) (x < 8 ? strong_left : strong_right)++;
    }
  CHECK(strong_left >= 9);  // the 4x4 core of the square, minus the rim
  CHECK(strong_right == 0);
  for (double v : img.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("swapping the two colors keeps presence but breaks binding and placement") {
  SceneSpec prompt = two(Color::red, Shape::square, Region::left,
                         Color::green, Shape::circle, Region::right);
  SceneSpec swapped = two(Color::green, Shape::square, Region::left,
                          Color::red, Shape::circle, Region::right);
  scenes::ComplianceReport rep = scenes::compliance_score(scenes::render_scene(swapped, 16), prompt);
  CHECK(rep.presence == 1.0);
  CHECK(rep.binding == 0.0);
  CHECK(rep.placement == 0.0);
  CHECK(rep.total == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("dropping one object halves every component") {
  SceneSpec prompt = two(Color::blue, Shape::square, Region::top,
                         Color::yellow, Shape::circle, Region::bottom);
  SceneSpec only_first = one(Color::blue, Shape::square, Region::top);
  scenes::ComplianceReport rep =
      scenes::compliance_score(scenes::render_scene(only_first, 16), prompt);
  CHECK(rep.presence == 0.5);
  CHECK(rep.binding == 0.5);
  CHECK(rep.placement == 0.5);
  CHECK(rep.total == 0.5);
}

TEST_CASE("single edits lower exactly the component they corrupt") {
  SceneSpec prompt = one(Color::red, Shape::square, Region::left);

  scenes::ComplianceReport shape_edit =
      scenes::compliance_score(scenes::render_scene(one(Color::red, Shape::circle, Region::left), 16), prompt);
  CHECK(shape_edit.presence == 1.0);
  CHECK(shape_edit.binding == 0.0);
  CHECK(shape_edit.placement == 1.0);

  scenes::ComplianceReport region_edit =
      scenes::compliance_score(scenes::render_scene(one(Color::red, Shape::square, Region::right), 16), prompt);
  CHECK(region_edit.presence == 1.0);
  CHECK(region_edit.binding == 1.0);
  CHECK(region_edit.placement == 0.0);

  scenes::ComplianceReport color_edit =
      scenes::compliance_score(scenes::render_scene(one(Color::green, Shape::square, Region::left), 16), prompt);
  CHECK(color_edit.presence == 0.0);
  CHECK(color_edit.binding == 0.0);
  CHECK(color_edit.placement == 0.0);
  CHECK(color_edit.total == 0.0);
}

TEST_CASE("scores ignore moderate background shifts") {
  SceneSpec s = two(Color::red, Shape::circle, Region::top,
                    Color::blue, Shape::square, Region::left);
  SceneSpec darker = s, lighter = s;
  darker.background = 0.4;
  lighter.background = 0.6;
  scenes::ComplianceReport mid = scenes::compliance_score(scenes::render_scene(s, 16), s);
  scenes::ComplianceReport lo = scenes::compliance_score(scenes::render_scene(darker, 16), s);
  scenes::ComplianceReport hi = scenes::compliance_score(scenes::render_scene(lighter, 16), s);
  CHECK(lo.presence == mid.presence);
  CHECK(lo.binding == mid.binding);
  CHECK(lo.placement == mid.placement);
  CHECK(hi.presence == mid.presence);
  CHECK(hi.binding == mid.binding);
  CHECK(hi.placement == mid.placement);
  CHECK(mid.total == 1.0);
}

TEST_CASE("score components always land in the unit interval") {
  Rng rng(704);
  for (int k = 0; k < 200; ++k) {
    SceneSpec shown = scenes::sample_scene(rng);
    SceneSpec asked = scenes::sample_scene(rng);
    scenes::ComplianceReport rep =
        scenes::compliance_score(scenes::render_scene(shown, 16), asked);
    for (double v : {rep.presence, rep.binding, rep.placement, rep.total}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK_THROWS_AS(scenes::compliance_score(Tensor::zeros({16, 16}),
                                           one(Color::red, Shape::square, Region::left)),
                  std::invalid_argument);
}

TEST_CASE("records round-trip through their text form") {
  SceneSpec a = one(Color::yellow, Shape::circle, Region::bottom);
  SceneSpec b = two(Color::green, Shape::square, Region::right,
                    Color::red, Shape::circle, Region::top);
  for (const SceneSpec& s : {a, b}) {
    auto [seed, back] = scenes::from_record(scenes::to_record(s, 12345));
    CHECK(seed == 12345);
    CHECK(back == s);
  }
  CHECK(scenes::to_record(a, 7) == "7,yellow,circle,bottom");
  CHECK_THROWS_AS(scenes::from_record("7,yellow,circle"), std::invalid_argument);
  CHECK_THROWS_AS(scenes::from_record("7,umber,circle,bottom"), std::invalid_argument);
}
