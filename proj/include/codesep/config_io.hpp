#pragma once

#include <cstdint>
#include <set>
#include <string>

#include <json.hpp>

#include "codesep/atsp.hpp"
#include "codesep/btd.hpp"
#include "codesep/codec.hpp"
#include "codesep/pipeline.hpp"

namespace codesep::app {

// Reads fields out of a JSON object, tracking which keys were consumed.
// finish() rejects anything left over, so typos in config files fail loudly
// instead of silently falling back to defaults.
class StrictReader {
 public:
  StrictReader(const nlohmann::json& j, std::string context);

  void field(const char* key, int& v);
  void field(const char* key, double& v);
  void field(const char* key, bool& v);
  void field(const char* key, std::string& v);
  void field(const char* key, std::uint64_t& v);
  // Consumes a nested object; returns an empty object when absent.
  nlohmann::json object(const char* key);

  void finish() const;

 private:
  const nlohmann::json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

nlohmann::json to_json(const codec::CodecConfig& c);
nlohmann::json to_json(const btd::BtdConfig& c);
nlohmann::json to_json(const atsp::AtspConfig& c);
nlohmann::json to_json(const pipeline::MaskSeparatorConfig& c);

// Each parser starts from `base` (typically a preset) and overrides the
// fields present in the JSON. Unknown keys raise ConfigError.
codec::CodecConfig codec_config_from_json(const nlohmann::json& j, codec::CodecConfig base);
btd::BtdConfig btd_config_from_json(const nlohmann::json& j, btd::BtdConfig base);
atsp::AtspConfig atsp_config_from_json(const nlohmann::json& j, atsp::AtspConfig base);
pipeline::MaskSeparatorConfig separator_config_from_json(const nlohmann::json& j,
                                                         pipeline::MaskSeparatorConfig base);

}  // namespace codesep::app
