#include "maskattn/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace maskattn::scenes {

namespace {

constexpr int n_colors = 4, n_shapes = 2, n_regions = 4;
constexpr int one_object_scenes = n_colors * n_shapes * n_regions;          // 32
constexpr int second_object_choices = (n_colors - 1) * n_shapes * (n_regions - 1);  // 18
// Over a neutral-gray background the channel margin of a rendered pixel equals
// its coverage fraction, so 0.5 counts exactly the majority-covered pixels.
// Anything looser sweeps the anti-aliased halo into the blob and a small
// circle fills its bounding box like a square.
constexpr double hue_margin = 0.5;
constexpr int min_blob_px = 4;
constexpr double square_fill_threshold = 0.9;

const char* color_names[] = {"red", "green", "blue", "yellow"};
const char* shape_names[] = {"square", "circle"};
const char* region_names[] = {"left", "right", "top", "bottom"};

// kth value in 0..n-1 excluding `skip`, ascending
int kth_excluding(int k, int skip, int n) {
  for (int v = 0, seen = 0; v < n; ++v) {
    if (v == skip) continue;
    if (seen++ == k) return v;
  }
  throw std::invalid_argument("scene index decode: choice " + std::to_string(k) + " of " +
                              std::to_string(n - 1));
}

int rank_excluding(int v, int skip) { return v < skip ? v : v - 1; }

ObjectSpec decode_object(int idx) {
  return {static_cast<Color>(idx / (n_shapes * n_regions)),
          static_cast<Shape>((idx / n_regions) % n_shapes), static_cast<Region>(idx % n_regions)};
}

int encode_object(const ObjectSpec& o) {
  return (static_cast<int>(o.color) * n_shapes + static_cast<int>(o.shape)) * n_regions +
         static_cast<int>(o.region);
}

struct Center {
  double x, y;
};

Center region_center(Region r, int size) {
  double s = size;
  switch (r) {
    case Region::left: return {0.25 * s, 0.5 * s};
    case Region::right: return {0.75 * s, 0.5 * s};
    case Region::top: return {0.5 * s, 0.25 * s};
    case Region::bottom: return {0.5 * s, 0.75 * s};
  }
  throw std::invalid_argument("region_center: bad region");
}

void color_rgb(Color c, double out[3]) {
  switch (c) {
    case Color::red: out[0] = 1; out[1] = 0; out[2] = 0; return;
    case Color::green: out[0] = 0; out[1] = 1; out[2] = 0; return;
    case Color::blue: out[0] = 0; out[1] = 0; out[2] = 1; return;
    case Color::yellow: out[0] = 1; out[1] = 1; out[2] = 0; return;
  }
  throw std::invalid_argument("color_rgb: bad color");
}

// dominant hue of one pixel, or -1 when nothing clears the margin
int classify_pixel(double r, double g, double b) {
  if (std::min(r, g) - b >= hue_margin && std::abs(r - g) < hue_margin)
    return static_cast<int>(Color::yellow);
  if (r - std::max(g, b) >= hue_margin) return static_cast<int>(Color::red);
  if (g - std::max(r, b) >= hue_margin) return static_cast<int>(Color::green);
  if (b - std::max(r, g) >= hue_margin) return static_cast<int>(Color::blue);
  return -1;
}

struct Blob {
  int area = 0;
  int min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  double cx = 0.0, cy = 0.0;
};

}  // namespace

void SceneSpec::validate() const {
  if (objects.empty() || objects.size() > 2)
    throw std::invalid_argument("scene: must have 1 or 2 objects, has " +
                                std::to_string(objects.size()));
  if (objects.size() == 2) {
    if (objects[0].color == objects[1].color)
      throw std::invalid_argument("scene: object colors must differ");
    if (objects[0].region == objects[1].region)
      throw std::invalid_argument("scene: object regions must differ");
  }
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {"pad",    "and",  "red",  "green",
                                                 "blue",   "yellow", "square", "circle",
                                                 "left",   "right",  "top",    "bottom"};
  return words;
}

int word_id(const std::string& word) {
  const auto& words = vocabulary();
  for (int i = 0; i < static_cast<int>(words.size()); ++i)
    if (words[i] == word) return i;
  std::string valid;
  for (const auto& w : words) {
    if (!valid.empty()) valid += ", ";
    valid += w;
  }
  throw std::invalid_argument("unknown word \"" + word + "\"; the vocabulary is: " + valid);
}

const std::string& word_of(int id) {
  const auto& words = vocabulary();
  if (id < 0 || id >= static_cast<int>(words.size()))
    throw std::invalid_argument("word_of: id " + std::to_string(id) + " has no word");
  return words[static_cast<std::size_t>(id)];
}

namespace {
int color_word(Color c) { return 2 + static_cast<int>(c); }
int shape_word(Shape s) { return 6 + static_cast<int>(s); }
int region_word(Region r) { return 8 + static_cast<int>(r); }
}  // namespace

std::vector<int> caption_of(const SceneSpec& s) {
  s.validate();
  std::vector<int> ids;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (i) ids.push_back(word_id("and"));
    ids.push_back(color_word(s.objects[i].color));
    ids.push_back(shape_word(s.objects[i].shape));
    ids.push_back(region_word(s.objects[i].region));
  }
  ids.resize(caption_len, 0);
  return ids;
}

SceneSpec scene_of_caption(const std::vector<int>& tokens) {
  if (static_cast<int>(tokens.size()) != caption_len)
    throw std::invalid_argument("scene_of_caption: expected " + std::to_string(caption_len) +
                                " tokens, got " + std::to_string(tokens.size()));
  auto take_object = [&tokens](std::size_t at) -> ObjectSpec {
    int c = tokens[at], sh = tokens[at + 1], r = tokens[at + 2];
    if (c < 2 || c > 5 || sh < 6 || sh > 7 || r < 8 || r > 11)
      throw std::invalid_argument("scene_of_caption: tokens at position " + std::to_string(at) +
                                  " are not <color> <shape> <region>");
    return {static_cast<Color>(c - 2), static_cast<Shape>(sh - 6), static_cast<Region>(r - 8)};
  };
  SceneSpec s;
  s.objects.push_back(take_object(0));
  std::size_t rest = 3;
  if (tokens[3] == word_id("and")) {
    s.objects.push_back(take_object(4));
    rest = 7;
  }
  for (std::size_t i = rest; i < tokens.size(); ++i)
    if (tokens[i] != 0)
      throw std::invalid_argument("scene_of_caption: expected padding from position " +
                                  std::to_string(rest));
  s.validate();
  return s;
}

std::string caption_text(const SceneSpec& s) {
  std::string out;
  for (int id : caption_of(s)) {
    if (id == 0) break;
    if (!out.empty()) out += ' ';
    out += word_of(id);
  }
  return out;
}

std::vector<int> parse_prompt(const std::string& text) {
  std::istringstream in(text);
  std::vector<int> ids;
  std::string word;
  while (in >> word) ids.push_back(word_id(word));
  if (ids.empty()) throw std::invalid_argument("parse_prompt: empty prompt");
  if (static_cast<int>(ids.size()) > caption_len)
    throw std::invalid_argument("parse_prompt: more than " + std::to_string(caption_len) +
                                " words");
  ids.resize(caption_len, 0);
  return ids;
}

int scene_space_size() { return one_object_scenes * (1 + second_object_choices); }

SceneSpec scene_by_index(int idx) {
  if (idx < 0 || idx >= scene_space_size())
    throw std::invalid_argument("scene_by_index: " + std::to_string(idx) + " outside [0, " +
                                std::to_string(scene_space_size()) + ")");
  SceneSpec s;
  if (idx < one_object_scenes) {
    s.objects.push_back(decode_object(idx));
    return s;
  }
  int j = idx - one_object_scenes;
  ObjectSpec first = decode_object(j / second_object_choices);
  int k = j % second_object_choices;
  ObjectSpec second;
  second.color = static_cast<Color>(
      kth_excluding(k / (n_shapes * (n_regions - 1)), static_cast<int>(first.color), n_colors));
  second.shape = static_cast<Shape>((k / (n_regions - 1)) % n_shapes);
  second.region =
      static_cast<Region>(kth_excluding(k % (n_regions - 1), static_cast<int>(first.region), n_regions));
  s.objects = {first, second};
  return s;
}

int index_of_scene(const SceneSpec& s) {
  s.validate();
  int first = encode_object(s.objects[0]);
  if (s.objects.size() == 1) return first;
  const ObjectSpec& o = s.objects[1];
  int k = rank_excluding(static_cast<int>(o.color), static_cast<int>(s.objects[0].color));
  k = k * n_shapes + static_cast<int>(o.shape);
  k = k * (n_regions - 1) +
      rank_excluding(static_cast<int>(o.region), static_cast<int>(s.objects[0].region));
  return one_object_scenes + first * second_object_choices + k;
}

SceneSpec sample_scene(Rng& rng) {
  return scene_by_index(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(scene_space_size()))));
}

bool held_out(int idx) { return idx % 8 == 0; }

SceneSpec sample_train_scene(Rng& rng) {
  for (;;) {
    int idx = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(scene_space_size())));
    if (!held_out(idx)) return scene_by_index(idx);
  }
}

std::vector<int> held_out_two_object_indices() {
  std::vector<int> out;
  for (int idx = one_object_scenes; idx < scene_space_size(); ++idx)
    if (held_out(idx)) out.push_back(idx);
  return out;
}

Tensor render_scene(const SceneSpec& s, int size) {
  s.validate();
  if (size < 8) throw std::invalid_argument("render_scene: size must be at least 8");
  Tensor img = Tensor::full({3, size, size}, s.background);
  double half = size / 8.0;  // object half-extent in pixels
  const int ss = 4;          // supersampling grid per axis
  for (const ObjectSpec& o : s.objects) {
    Center c = region_center(o.region, size);
    double rgb[3];
    color_rgb(o.color, rgb);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        int inside = 0;
        for (int sy = 0; sy < ss; ++sy) {
          for (int sx = 0; sx < ss; ++sx) {
            double px = x + (sx + 0.5) / ss, py = y + (sy + 0.5) / ss;
            bool in = o.shape == Shape::square
                          ? std::abs(px - c.x) < half && std::abs(py - c.y) < half
                          : (px - c.x) * (px - c.x) + (py - c.y) * (py - c.y) < half * half;
            inside += in;
          }
        }
        if (!inside) continue;
        double a = static_cast<double>(inside) / (ss * ss);
        for (int ch = 0; ch < 3; ++ch) {
          double& p = img.data()[(static_cast<std::size_t>(ch) * size + y) * size + x];
          p = (1.0 - a) * p + a * rgb[ch];
        }
      }
    }
  }
  return img;
}

std::string to_record(const SceneSpec& s, std::uint64_t seed) {
  s.validate();
  std::string out = std::to_string(seed);
  for (const ObjectSpec& o : s.objects) {
    out += ',';
    out += color_names[static_cast<int>(o.color)];
    out += ',';
    out += shape_names[static_cast<int>(o.shape)];
    out += ',';
    out += region_names[static_cast<int>(o.region)];
  }
  return out;
}

std::pair<std::uint64_t, SceneSpec> from_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  if (fields.size() != 4 && fields.size() != 7)
    throw std::invalid_argument("from_record: expected 4 or 7 fields, got " +
                                std::to_string(fields.size()));
  std::uint64_t seed = std::stoull(fields[0]);
  auto find_in = [](const std::string& w, const char* const* names, int n, const char* kind) {
    for (int i = 0; i < n; ++i)
      if (w == names[i]) return i;
    throw std::invalid_argument(std::string("from_record: unknown ") + kind + " \"" + w + "\"");
  };
  SceneSpec s;
  for (std::size_t at = 1; at + 2 < fields.size() + 1 && at < fields.size(); at += 3) {
    ObjectSpec o;
    o.color = static_cast<Color>(find_in(fields[at], color_names, n_colors, "color"));
    o.shape = static_cast<Shape>(find_in(fields[at + 1], shape_names, n_shapes, "shape"));
    o.region = static_cast<Region>(find_in(fields[at + 2], region_names, n_regions, "region"));
    s.objects.push_back(o);
  }
  s.validate();
  return {seed, s};
}

ComplianceReport compliance_score(const Tensor& img, const SceneSpec& s) {
  s.validate();
  if (img.ndim() != 3 || img.dim(0) != 3 || img.dim(1) != img.dim(2))
    throw std::invalid_argument("compliance_score: image must be [3,s,s], got " +
                                shape_str(img.shape()));
  int size = img.dim(1);
  std::size_t plane = static_cast<std::size_t>(size) * size;
  std::vector<int> cls(plane);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      std::size_t i = static_cast<std::size_t>(y) * size + x;
      cls[i] = classify_pixel(img.data()[i], img.data()[plane + i], img.data()[2 * plane + i]);
    }
  }

  // largest 4-connected blob of at least min_blob_px pixels, per color
  Blob best[n_colors];
  bool found[n_colors] = {};
  std::vector<char> seen(plane, 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < plane; ++start) {
    if (seen[start] || cls[start] < 0) continue;
    int color = cls[start];
    Blob b;
    b.min_x = b.max_x = static_cast<int>(start % size);
    b.min_y = b.max_y = static_cast<int>(start / size);
    double sx = 0.0, sy = 0.0;
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      std::size_t i = stack.back();
      stack.pop_back();
      int x = static_cast<int>(i % size), y = static_cast<int>(i / size);
      ++b.area;
      sx += x + 0.5;
      sy += y + 0.5;
      b.min_x = std::min(b.min_x, x);
      b.max_x = std::max(b.max_x, x);
      b.min_y = std::min(b.min_y, y);
      b.max_y = std::max(b.max_y, y);
      const int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        int nx = x + dx[k], ny = y + dy[k];
        if (nx < 0 || nx >= size || ny < 0 || ny >= size) continue;
        std::size_t j = static_cast<std::size_t>(ny) * size + nx;
        if (!seen[j] && cls[j] == color) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
    if (b.area < min_blob_px) continue;
    b.cx = sx / b.area;
    b.cy = sy / b.area;
    if (!found[color] || b.area > best[color].area) {
      best[color] = b;
      found[color] = true;
    }
  }

  ComplianceReport rep;
  double half = size / 2.0;
  for (const ObjectSpec& o : s.objects) {
    int c = static_cast<int>(o.color);
    if (!found[c]) continue;
    const Blob& b = best[c];
    rep.presence += 1.0;
    double fill = static_cast<double>(b.area) /
                  ((b.max_x - b.min_x + 1) * (b.max_y - b.min_y + 1));
    Shape got = fill >= square_fill_threshold ? Shape::square : Shape::circle;
    if (got == o.shape) rep.binding += 1.0;
    bool placed = false;
    switch (o.region) {
      case Region::left: placed = b.cx < half; break;
      case Region::right: placed = b.cx > half; break;
      case Region::top: placed = b.cy < half; break;
      case Region::bottom: placed = b.cy > half; break;
    }
    if (placed) rep.placement += 1.0;
  }
  double n = static_cast<double>(s.objects.size());
  rep.presence /= n;
  rep.binding /= n;
  rep.placement /= n;
  rep.total = (rep.presence + rep.binding + rep.placement) / 3.0;
  return rep;
}

}  // namespace maskattn::scenes
