#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "codesep/atsp.hpp"
#include "codesep/btd.hpp"
#include "codesep/codec.hpp"
#include "codesep/nn.hpp"
#include "codesep/pipeline.hpp"

namespace codesep::app {

// Single-file binary container, magic "CSCP", format version 1:
//
//   magic (4 bytes) | version u8 | stage tag (u8 length + bytes)
//   | config JSON (u32 LE length + UTF-8 bytes)
//   | step count u64 LE | RNG state (u16 LE length + bytes)
//   | param count u32 LE
//   | per parameter, in ParamStore registration order:
//       name (u16 LE length + bytes) | rows u32 LE | cols u32 LE
//       | rows*cols doubles, row-major, IEEE-754 LE
//
// Registration order is fixed by each model's constructor, so the layout is
// reproducible for a given config. Loading rebuilds the model from the
// embedded config and then requires an exact name/shape match per entry.

struct CheckpointMeta {
  std::string stage;  // codec | btd | atsp | separator
  std::uint64_t step = 0;
  std::string rng_state;
};

struct RawCheckpoint {
  CheckpointMeta meta;
  nlohmann::json config;
  std::vector<std::pair<std::string, nn::Mat>> params;
};

void write_checkpoint(const std::string& path, const std::string& stage,
                      const nlohmann::json& config, const nn::ParamStore& params,
                      std::uint64_t step, const std::string& rng_state);

// ParseError (with byte offset) on truncation or corruption; an unsupported
// format version is also a ParseError.
RawCheckpoint read_checkpoint(const std::string& path);

// Reads the stage tag without loading parameters.
std::string checkpoint_stage(const std::string& path);

void save_codec(const std::string& path, const codec::CodecModel& m, std::uint64_t step,
                const std::string& rng_state);
void save_btd(const std::string& path, const btd::BtdModel& m, std::uint64_t step,
              const std::string& rng_state);
void save_atsp(const std::string& path, const atsp::AtspModel& m, std::uint64_t step,
               const std::string& rng_state);
void save_separator(const std::string& path, const pipeline::MaskSeparator& m,
                    std::uint64_t step, const std::string& rng_state);

// Typed loaders; a checkpoint for a different stage raises ConfigError
// naming both stages.
codec::CodecModel load_codec(const std::string& path, CheckpointMeta* meta = nullptr);
btd::BtdModel load_btd(const std::string& path, CheckpointMeta* meta = nullptr);
atsp::AtspModel load_atsp(const std::string& path, CheckpointMeta* meta = nullptr);
pipeline::MaskSeparator load_separator(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace codesep::app
