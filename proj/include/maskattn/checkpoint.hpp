#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "maskattn/diffusion.hpp"
#include "maskattn/optim.hpp"

// Binary run snapshots. Layout, all integers little-endian:
//   bytes 0..7   magic "MASKATN1"
//   u32          format version (currently 1)
//   u32          phase (0 = backbone, 1 = gates)
//   u64          step counter
//   u64 + bytes  canonical config text
//   u32          parameter count, then per parameter:
//                  u32+bytes name, u32 ndim, u32 dims[ndim], f64 payload
//   u8           1 when optimizer state follows:
//                  u64 optimizer step, u32 slot count, then per slot:
//                    u32+bytes parameter name, u64 count, f64 m[], f64 v[]
// Doubles are stored as raw IEEE-754 bytes, so read(write(x)) == x bitwise.
namespace maskattn::ckpt {

inline constexpr char magic[8] = {'M', 'A', 'S', 'K', 'A', 'T', 'N', '1'};
inline constexpr std::uint32_t format_version = 1;
inline constexpr std::uint32_t phase_backbone = 0;
inline constexpr std::uint32_t phase_gates = 1;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagic : Error {
  using Error::Error;
};
struct BadVersion : Error {
  using Error::Error;
};
struct Truncated : Error {
  using Error::Error;
};

struct OptSlot {
  std::string name;  // the parameter this moment pair belongs to
  std::vector<double> m, v;
};

struct Checkpoint {
  std::uint32_t phase = phase_backbone;
  std::uint64_t step = 0;
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> params;
  bool has_opt = false;
  std::uint64_t opt_step = 0;
  std::vector<OptSlot> opt;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

// model -> checkpoint (parameters are copied, not aliased)
Checkpoint snapshot(const diff::ToyUNet& model, std::uint32_t phase, std::uint64_t step,
                    const std::string& config_text);

// optimizer state for the given trainable parameters, in their list order
void attach_opt(Checkpoint& ck, const std::vector<std::string>& names,
                const optim::AdamWState& state);

// copies stored payloads into the live model; parameter names, counts, and
// shapes must match exactly
void load_params(const Checkpoint& ck, diff::ToyUNet& model);

// rebuilds AdamW state for `names`, which must equal the stored slot names
optim::AdamWState restore_opt(const Checkpoint& ck, const std::vector<std::string>& names,
                              const optim::AdamWConfig& cfg);

}  // namespace maskattn::ckpt
