#include "codesep/config_io.hpp"

#include "codesep/errors.hpp"

namespace codesep::app {

StrictReader::StrictReader(const nlohmann::json& j, std::string context)
    : j_(j), ctx_(std::move(context)) {
  if (!j_.is_object()) throw ConfigError(ctx_ + ": expected a JSON object");
}

namespace {

[[noreturn]] void type_error(const std::string& ctx, const char* key, const char* want) {
  throw ConfigError(ctx + ": field '" + key + "' must be " + want);
}

// Model validators report std::invalid_argument; in a config-file context
// that is a configuration error.
template <typename Fn>
void validate_as_config(Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

void StrictReader::field(const char* key, int& v) {
  if (!j_.contains(key)) return;
  seen_.insert(key);
  if (!j_[key].is_number_integer()) type_error(ctx_, key, "an integer");
  v = j_[key].get<int>();
}

void StrictReader::field(const char* key, double& v) {
  if (!j_.contains(key)) return;
  seen_.insert(key);
  if (!j_[key].is_number()) type_error(ctx_, key, "a number");
  v = j_[key].get<double>();
}

void StrictReader::field(const char* key, bool& v) {
  if (!j_.contains(key)) return;
  seen_.insert(key);
  if (!j_[key].is_boolean()) type_error(ctx_, key, "a boolean");
  v = j_[key].get<bool>();
}

void StrictReader::field(const char* key, std::string& v) {
  if (!j_.contains(key)) return;
  seen_.insert(key);
  if (!j_[key].is_string()) type_error(ctx_, key, "a string");
  v = j_[key].get<std::string>();
}

void StrictReader::field(const char* key, std::uint64_t& v) {
  if (!j_.contains(key)) return;
  seen_.insert(key);
  if (!j_[key].is_number_unsigned() && !j_[key].is_number_integer()) {
    type_error(ctx_, key, "a nonnegative integer");
  }
  v = j_[key].get<std::uint64_t>();
}

nlohmann::json StrictReader::object(const char* key) {
  if (!j_.contains(key)) return nlohmann::json::object();
  seen_.insert(key);
  if (!j_[key].is_object()) type_error(ctx_, key, "an object");
  return j_[key];
}

void StrictReader::finish() const {
  std::string unknown;
  for (auto it = j_.begin(); it != j_.end(); ++it) {
    if (seen_.count(it.key()) == 0) {
      if (!unknown.empty()) unknown += ", ";
      unknown += "'" + it.key() + "'";
    }
  }
  if (!unknown.empty()) throw ConfigError(ctx_ + ": unknown key(s) " + unknown);
}

nlohmann::json to_json(const codec::CodecConfig& c) {
  return {{"sample_rate_hz", c.sample_rate_hz},
          {"mdct_frame_length", c.mdct_frame_length},
          {"latent_dim", c.latent_dim},
          {"num_stages", c.num_stages},
          {"codebook_size", c.codebook_size},
          {"hidden_dim", c.hidden_dim},
          {"num_blocks", c.num_blocks},
          {"kernel", c.kernel},
          {"mel_loss_weight", c.mel_loss_weight},
          {"mdct_loss_weight", c.mdct_loss_weight},
          {"quant_loss_weight", c.quant_loss_weight}};
}

nlohmann::json to_json(const btd::BtdConfig& c) {
  return {{"sample_rate_hz", c.sample_rate_hz},
          {"d_mel", c.d_mel},
          {"mel_shift", c.mel_shift},
          {"meld_layers", c.meld_layers},
          {"meld_stride", c.meld_stride},
          {"meld_kernel", c.meld_kernel},
          {"d_model", c.d_model},
          {"intra_blocks", c.intra_blocks},
          {"inter_blocks", c.inter_blocks},
          {"heads", c.heads},
          {"ff_mult", c.ff_mult},
          {"vocab", c.vocab}};
}

nlohmann::json to_json(const atsp::AtspConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"num_stages", c.num_stages},
          {"codebook_size", c.codebook_size},
          {"d_model", c.d_model},
          {"lstm_layers", c.lstm_layers},
          {"conformer_blocks", c.conformer_blocks},
          {"heads", c.heads},
          {"ff_mult", c.ff_mult},
          {"conv_kernel", c.conv_kernel}};
}

nlohmann::json to_json(const pipeline::MaskSeparatorConfig& c) {
  return {{"sample_rate_hz", c.sample_rate_hz},
          {"frame_length", c.frame_length},
          {"hidden_dim", c.hidden_dim},
          {"num_layers", c.num_layers}};
}

codec::CodecConfig codec_config_from_json(const nlohmann::json& j, codec::CodecConfig base) {
  StrictReader r(j, "codec config");
  r.field("sample_rate_hz", base.sample_rate_hz);
  r.field("mdct_frame_length", base.mdct_frame_length);
  r.field("latent_dim", base.latent_dim);
  r.field("num_stages", base.num_stages);
  r.field("codebook_size", base.codebook_size);
  r.field("hidden_dim", base.hidden_dim);
  r.field("num_blocks", base.num_blocks);
  r.field("kernel", base.kernel);
  r.field("mel_loss_weight", base.mel_loss_weight);
  r.field("mdct_loss_weight", base.mdct_loss_weight);
  r.field("quant_loss_weight", base.quant_loss_weight);
  r.finish();
  validate_as_config([&] { codec::validate(base); });
  return base;
}

btd::BtdConfig btd_config_from_json(const nlohmann::json& j, btd::BtdConfig base) {
  StrictReader r(j, "btd config");
  r.field("sample_rate_hz", base.sample_rate_hz);
  r.field("d_mel", base.d_mel);
  r.field("mel_shift", base.mel_shift);
  r.field("meld_layers", base.meld_layers);
  r.field("meld_stride", base.meld_stride);
  r.field("meld_kernel", base.meld_kernel);
  r.field("d_model", base.d_model);
  r.field("intra_blocks", base.intra_blocks);
  r.field("inter_blocks", base.inter_blocks);
  r.field("heads", base.heads);
  r.field("ff_mult", base.ff_mult);
  r.field("vocab", base.vocab);
  r.finish();
  validate_as_config([&] { btd::validate(base); });
  return base;
}

atsp::AtspConfig atsp_config_from_json(const nlohmann::json& j, atsp::AtspConfig base) {
  StrictReader r(j, "atsp config");
  r.field("latent_dim", base.latent_dim);
  r.field("num_stages", base.num_stages);
  r.field("codebook_size", base.codebook_size);
  r.field("d_model", base.d_model);
  r.field("lstm_layers", base.lstm_layers);
  r.field("conformer_blocks", base.conformer_blocks);
  r.field("heads", base.heads);
  r.field("ff_mult", base.ff_mult);
  r.field("conv_kernel", base.conv_kernel);
  r.finish();
  validate_as_config([&] { atsp::validate(base); });
  return base;
}

pipeline::MaskSeparatorConfig separator_config_from_json(const nlohmann::json& j,
                                                         pipeline::MaskSeparatorConfig base) {
  StrictReader r(j, "separator config");
  r.field("sample_rate_hz", base.sample_rate_hz);
  r.field("frame_length", base.frame_length);
  r.field("hidden_dim", base.hidden_dim);
  r.field("num_layers", base.num_layers);
  r.finish();
  validate_as_config([&] { pipeline::validate(base); });
  return base;
}

}  // namespace codesep::app
