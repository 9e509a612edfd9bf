#include "maskattn/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace maskattn::cfg {

namespace {

template <typename T>
struct Key {
  const char* name;
  T RunConfig::* ptr;
};

constexpr Key<int> int_keys[] = {
    {"latent_hw", &RunConfig::latent_hw},
    {"c_stem", &RunConfig::c_stem},
    {"c_down", &RunConfig::c_down},
    {"d_model", &RunConfig::d_model},
    {"n_heads", &RunConfig::n_heads},
    {"n_sites", &RunConfig::n_sites},
    {"n_tokens", &RunConfig::n_tokens},
    {"vocab", &RunConfig::vocab},
    {"t_steps", &RunConfig::t_steps},
    {"warmup_steps", &RunConfig::warmup_steps},
    {"steps_phase1", &RunConfig::steps_phase1},
    {"steps_phase2", &RunConfig::steps_phase2},
    {"batch", &RunConfig::batch},
    {"checkpoint_every", &RunConfig::checkpoint_every},
};

constexpr Key<double> dbl_keys[] = {
    {"beta_start", &RunConfig::beta_start},
    {"beta_end", &RunConfig::beta_end},
    {"lr_peak", &RunConfig::lr_peak},
    {"weight_decay", &RunConfig::weight_decay},
    {"beta1", &RunConfig::beta1},
    {"beta2", &RunConfig::beta2},
    {"adam_eps", &RunConfig::adam_eps},
    {"clip_norm", &RunConfig::clip_norm},
    {"lambda_train", &RunConfig::lambda_train},
    {"lambda_infer", &RunConfig::lambda_infer},
};

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw std::invalid_argument("not a number: \"" + s + "\"");
  return v;
}

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(value);
    return;
  }
  if (key == "out_dir") {
    c.out_dir = value;
    return;
  }
  if (key == "gate_mode") {
    c.gate_mode = parse_gate_choice(value);
    return;
  }
  for (const auto& k : int_keys) {
    if (key == k.name) {
      c.*(k.ptr) = parse_number<int>(value);
      return;
    }
  }
  for (const auto& k : dbl_keys) {
    if (key == k.name) {
      c.*(k.ptr) = parse_number<double>(value);
      return;
    }
  }
  throw std::invalid_argument("unknown key \"" + key + "\"");
}

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("config: ") + what);
}

}  // namespace

const std::string& gate_choice_name(GateChoice c) {
  static const std::string names[] = {"auto", "off", "forced_open", "learned"};
  return names[static_cast<int>(c)];
}

GateChoice parse_gate_choice(const std::string& word) {
  for (GateChoice c :
       {GateChoice::auto_mode, GateChoice::off, GateChoice::forced_open, GateChoice::learned})
    if (word == gate_choice_name(c)) return c;
  throw std::invalid_argument("gate_mode must be auto, off, forced_open, or learned; got \"" +
                              word + "\"");
}

void RunConfig::validate() const {
  geometry().validate();
  check(t_steps >= 1, "t_steps must be at least 1");
  check(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0,
        "need 0 < beta_start < beta_end < 1");
  check(lr_peak > 0.0, "lr_peak must be positive");
  check(weight_decay >= 0.0, "weight_decay must be nonnegative");
  check(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0,1)");
  check(adam_eps > 0.0, "adam_eps must be positive");
  check(clip_norm > 0.0, "clip_norm must be positive");
  check(warmup_steps >= 0, "warmup_steps must be nonnegative");
  check(steps_phase1 >= 0 && steps_phase2 >= 0, "phase step counts must be nonnegative");
  check(batch >= 1, "batch must be at least 1");
  check(checkpoint_every >= 1, "checkpoint_every must be at least 1");
  check(lambda_train > 0.0 && lambda_infer > 0.0, "lambdas must be positive");
}

diff::UNetGeometry RunConfig::geometry() const {
  diff::UNetGeometry g;
  g.latent_hw = latent_hw;
  g.c_stem = c_stem;
  g.c_down = c_down;
  g.d_model = d_model;
  g.n_heads = n_heads;
  g.n_sites = n_sites;
  g.n_tokens = n_tokens;
  g.vocab = vocab;
  return g;
}

diff::NoiseSchedule RunConfig::schedule() const {
  return diff::make_schedule(t_steps, beta_start, beta_end);
}

optim::AdamWConfig RunConfig::adamw() const {
  return {lr_peak, weight_decay, beta1, beta2, adam_eps};
}

optim::LrSchedule RunConfig::lr_schedule(int phase_steps) const {
  return {warmup_steps, phase_steps, lr_peak};
}

gate::GateMode RunConfig::resolved_gate_mode(gate::GateMode when_auto) const {
  switch (gate_mode) {
    case GateChoice::auto_mode: return when_auto;
    case GateChoice::off: return gate::GateMode::off;
    case GateChoice::forced_open: return gate::GateMode::forced_open;
    case GateChoice::learned: return gate::GateMode::learned;
  }
  throw std::invalid_argument("resolved_gate_mode: bad choice");
}

attn::GateRun RunConfig::gate_run(gate::GateMode when_auto, bool infer) const {
  attn::GateRun run;
  run.mode = resolved_gate_mode(when_auto);
  run.path = attn::GatePath::hard;
  run.lambda = infer ? lambda_infer : lambda_train;
  return run;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(where + "empty key");
    if (!seen.insert(key).second)
      throw std::invalid_argument(where + "key \"" + key + "\" already set");
    try {
      set_key(c, key, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

std::string to_text(const RunConfig& c) {
  std::string out;
  auto kv = [&out](const char* key, const std::string& value) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  };
  kv("seed", std::to_string(c.seed));
  for (const auto& k : int_keys) kv(k.name, std::to_string(c.*(k.ptr)));
  for (const auto& k : dbl_keys) kv(k.name, fmt_double(c.*(k.ptr)));
  kv("gate_mode", gate_choice_name(c.gate_mode));
  return out;
}

}  // namespace maskattn::cfg
