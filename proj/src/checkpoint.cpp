#include "maskattn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are raw little-endian doubles");

namespace maskattn::ckpt {

namespace {

struct Writer {
  std::string buf;

  void bytes(const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void str64(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void doubles(const double* p, std::size_t n) { bytes(p, n * sizeof(double)); }
};

struct Reader {
  const char* p;
  const char* end;

  void bytes(void* out, std::size_t n) {
    if (static_cast<std::size_t>(end - p) < n)
      throw Truncated("checkpoint payload is truncated");
    std::memcpy(out, p, n);
    p += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str(std::uint64_t n) {
    if (static_cast<std::uint64_t>(end - p) < n)
      throw Truncated("checkpoint payload is truncated");
    std::string s(p, static_cast<std::size_t>(n));
    p += n;
    return s;
  }
  std::vector<double> doubles(std::uint64_t n) {
    std::vector<double> out(static_cast<std::size_t>(n));
    bytes(out.data(), static_cast<std::size_t>(n) * sizeof(double));
    return out;
  }
};

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  Writer w;
  w.bytes(magic, sizeof magic);
  w.u32(format_version);
  w.u32(ck.phase);
  w.u64(ck.step);
  w.str64(ck.config_text);
  w.u32(static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& [name, t] : ck.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) w.u32(static_cast<std::uint32_t>(t.dim(d)));
    w.doubles(t.data().data(), t.numel());
  }
  w.u8(ck.has_opt ? 1 : 0);
  if (ck.has_opt) {
    w.u64(ck.opt_step);
    w.u32(static_cast<std::uint32_t>(ck.opt.size()));
    for (const OptSlot& slot : ck.opt) {
      if (slot.m.size() != slot.v.size())
        throw Error("optimizer slot " + slot.name + " has mismatched moment sizes");
      w.str(slot.name);
      w.u64(slot.m.size());
      w.doubles(slot.m.data(), slot.m.size());
      w.doubles(slot.v.data(), slot.v.size());
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw Error("write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{buf.data(), buf.data() + buf.size()};

  char got[sizeof magic];
  if (buf.size() < sizeof magic) throw Truncated(path + ": shorter than the magic header");
  r.bytes(got, sizeof magic);
  if (std::memcmp(got, magic, sizeof magic) != 0)
    throw BadMagic(path + ": not a checkpoint (bad magic)");
  std::uint32_t version = r.u32();
  if (version != format_version)
    throw BadVersion(path + ": format version " + std::to_string(version) + ", expected " +
                     std::to_string(format_version));

  Checkpoint ck;
  ck.phase = r.u32();
  ck.step = r.u64();
  ck.config_text = r.str(r.u64());
  std::uint32_t n_params = r.u32();
  ck.params.reserve(n_params);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.str(r.u32());
    std::uint32_t ndim = r.u32();
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    Tensor t = Tensor::zeros(shape);
    r.bytes(t.data().data(), t.numel() * sizeof(double));
    ck.params.emplace_back(std::move(name), std::move(t));
  }
  ck.has_opt = r.u8() != 0;
  if (ck.has_opt) {
    ck.opt_step = r.u64();
    std::uint32_t n_slots = r.u32();
    ck.opt.reserve(n_slots);
    for (std::uint32_t i = 0; i < n_slots; ++i) {
      OptSlot slot;
      slot.name = r.str(r.u32());
      std::uint64_t count = r.u64();
      slot.m = r.doubles(count);
      slot.v = r.doubles(count);
      ck.opt.push_back(std::move(slot));
    }
  }
  if (r.p != r.end) throw Error(path + ": trailing bytes after the payload");
  return ck;
}

Checkpoint snapshot(const diff::ToyUNet& model, std::uint32_t phase, std::uint64_t step,
                    const std::string& config_text) {
  Checkpoint ck;
  ck.phase = phase;
  ck.step = step;
  ck.config_text = config_text;
  for (const auto& [name, t] : diff::named_params(model)) {
    Tensor copy = Tensor::zeros(t.shape());
    std::memcpy(copy.data().data(), t.data().data(), t.numel() * sizeof(double));
    ck.params.emplace_back(name, copy);
  }
  return ck;
}

void attach_opt(Checkpoint& ck, const std::vector<std::string>& names,
                const optim::AdamWState& state) {
  if (names.size() != state.m.size())
    throw Error("attach_opt: " + std::to_string(names.size()) + " names for " +
                std::to_string(state.m.size()) + " optimizer slots");
  ck.has_opt = true;
  ck.opt_step = static_cast<std::uint64_t>(state.step);
  ck.opt.clear();
  for (std::size_t i = 0; i < names.size(); ++i)
    ck.opt.push_back({names[i], state.m[i], state.v[i]});
}

void load_params(const Checkpoint& ck, diff::ToyUNet& model) {
  auto live = diff::named_params(model);
  if (live.size() != ck.params.size())
    throw Error("checkpoint holds " + std::to_string(ck.params.size()) + " parameters, model has " +
                std::to_string(live.size()));
  for (std::size_t i = 0; i < live.size(); ++i) {
    const auto& [name, stored] = ck.params[i];
    auto& [live_name, t] = live[i];
    if (name != live_name)
      throw Error("checkpoint parameter " + std::to_string(i) + " is \"" + name +
                  "\", model expects \"" + live_name + "\"");
    if (stored.shape() != t.shape())
      throw Error("parameter " + name + ": stored shape " + shape_str(stored.shape()) +
                  ", model shape " + shape_str(t.shape()));
    std::memcpy(t.data().data(), stored.data().data(), t.numel() * sizeof(double));
  }
}

optim::AdamWState restore_opt(const Checkpoint& ck, const std::vector<std::string>& names,
                              const optim::AdamWConfig& cfg) {
  if (!ck.has_opt) throw Error("checkpoint has no optimizer state");
  if (names.size() != ck.opt.size())
    throw Error("checkpoint has optimizer state for " + std::to_string(ck.opt.size()) +
                " parameters, expected " + std::to_string(names.size()));
  optim::AdamWState st;
  st.cfg = cfg;
  st.step = static_cast<std::int64_t>(ck.opt_step);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (ck.opt[i].name != names[i])
      throw Error("optimizer slot " + std::to_string(i) + " is \"" + ck.opt[i].name +
                  "\", expected \"" + names[i] + "\"");
    st.m.push_back(ck.opt[i].m);
    st.v.push_back(ck.opt[i].v);
  }
  return st;
}

}  // namespace maskattn::ckpt
