#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskattn/rng.hpp"
#include "maskattn/tensor.hpp"

// Compositional toy scenes: one or two colored shapes placed in half-plane
// regions of a small square image, with a templated caption over a closed
// vocabulary and an exact, rule-based compliance metric.

namespace maskattn::scenes {

enum class Color { red, green, blue, yellow };
enum class Shape { square, circle };
enum class Region { left, right, top, bottom };

struct ObjectSpec {
  Color color;
  Shape shape;
  Region region;
  bool operator==(const ObjectSpec&) const = default;
};

struct SceneSpec {
  std::vector<ObjectSpec> objects;  // 1 or 2; colors and regions pairwise distinct
  double background = 0.5;
  bool operator==(const SceneSpec&) const = default;

  void validate() const;
};

inline constexpr int caption_len = 8;

// Token ids: 0 pad, 1 and, 2..5 colors, 6..7 shapes, 8..11 regions. The
// embedding table may be larger; ids beyond the word list stay unused.
inline constexpr int n_words = 12;
const std::vector<std::string>& vocabulary();
int word_id(const std::string& word);  // unknown word -> error listing the vocabulary
const std::string& word_of(int id);

// "<color> <shape> <region> [and <color> <shape> <region>]", padded to
// caption_len. caption_of is injective over valid scenes and scene_of_caption
// inverts it.
std::vector<int> caption_of(const SceneSpec& s);
SceneSpec scene_of_caption(const std::vector<int>& tokens);
std::string caption_text(const SceneSpec& s);
// Whitespace-split words to padded token ids; words must be in the vocabulary.
std::vector<int> parse_prompt(const std::string& text);

// The valid scene space is finite: 32 one-object plus 576 ordered two-object
// layouts. Scenes are addressed by index for uniform sampling and exhaustive
// sweeps.
int scene_space_size();
SceneSpec scene_by_index(int idx);
int index_of_scene(const SceneSpec& s);
SceneSpec sample_scene(Rng& rng);

// Fixed train/eval split over scene indices: held-out scenes never appear in
// the training stream.
bool held_out(int idx);
SceneSpec sample_train_scene(Rng& rng);
std::vector<int> held_out_two_object_indices();

// Anti-aliased render on a constant background, values in [0, 1]. Objects sit
// at their region's center with half-extent size/8 pixels.
Tensor render_scene(const SceneSpec& s, int size);

// Line records "seed,color,shape,region[,color,shape,region]".
std::string to_record(const SceneSpec& s, std::uint64_t seed);
std::pair<std::uint64_t, SceneSpec> from_record(const std::string& line);

struct ComplianceReport {
  double presence = 0.0;   // prompted colors that show up as a blob
  double binding = 0.0;    // prompted colors whose blob has the prompted shape
  double placement = 0.0;  // prompted colors whose blob sits in the prompted region
  double total = 0.0;      // mean of the three
};

// Color-anchored scoring, per prompted object:
//   classify every pixel by dominant hue (margin 0.5 over the runner-up
//   channel; yellow when red and green tie high over blue), keep 4-connected
//   blobs of at least 4 pixels, and take the largest blob of the prompted
//   color. presence: such a blob exists. binding: its bounding-box fill ratio
//   classifies as the prompted shape (squares fill their box, circles do
//   not). placement: its centroid lies in the prompted half-plane.
// Components are averaged over prompted objects; total averages the three.
ComplianceReport compliance_score(const Tensor& img, const SceneSpec& s);

}  // namespace maskattn::scenes
