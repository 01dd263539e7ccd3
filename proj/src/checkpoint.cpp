#include "codesep/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "codesep/config_io.hpp"
#include "codesep/errors.hpp"

namespace codesep::app {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'C', 'P'};
constexpr std::uint8_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) {
    std::uint8_t b[2] = {static_cast<std::uint8_t>(v & 0xff),
                         static_cast<std::uint8_t>(v >> 8)};
    bytes(b, 2);
  }
  void u32(std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
    bytes(b, 8);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }

  void close(const std::string& path) {
    out_.close();
    if (!out_) throw DataError("checkpoint: write to '" + path + "' failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
    data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  long long offset() const { return static_cast<long long>(at_); }

  void need(std::size_t n, const char* what) {
    if (at_ + n > data_.size()) {
      throw ParseError(std::string("checkpoint: truncated while reading ") + what,
                       static_cast<long long>(data_.size()));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[at_++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(data_[at_]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(data_[at_ + 1])) << 8);
    at_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[at_ + i])) << (8 * i);
    }
    at_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[at_ + i])) << (8 * i);
    }
    at_ += 8;
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(data_.data() + at_, n);
    at_ += n;
    return s;
  }
  bool exhausted() const { return at_ == data_.size(); }

 private:
  std::vector<char> data_;
  std::size_t at_ = 0;
};

void write_params(Writer& w, const nn::ParamStore& params) {
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params.all()) {
    const std::string& name = t.node()->name;
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rows()));
    w.u32(static_cast<std::uint32_t>(t.cols()));
    const nn::Mat& v = t.value();
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      for (Eigen::Index c = 0; c < v.cols(); ++c) w.f64(v(r, c));
    }
  }
}

// Copies the stored matrices into a freshly constructed model, insisting on
// an exact match of names, shapes, and order.
void fill_params(const RawCheckpoint& raw, nn::ParamStore& params, const std::string& path) {
  if (raw.params.size() != params.size()) {
    throw ParseError("checkpoint '" + path + "': parameter count " +
                     std::to_string(raw.params.size()) + " does not match the model (" +
                     std::to_string(params.size()) + ")");
  }
  const auto& all = params.all();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& [name, value] = raw.params[i];
    nn::Tensor t = all[i];
    if (t.node()->name != name) {
      throw ParseError("checkpoint '" + path + "': parameter " + std::to_string(i) +
                       " is '" + name + "', expected '" + t.node()->name + "'");
    }
    if (t.rows() != value.rows() || t.cols() != value.cols()) {
      throw ParseError("checkpoint '" + path + "': shape mismatch for '" + name + "'");
    }
    t.value() = value;
  }
}

void check_stage(const RawCheckpoint& raw, const std::string& want, const std::string& path) {
  if (raw.meta.stage != want) {
    throw ConfigError("checkpoint '" + path + "' holds stage '" + raw.meta.stage +
                      "', but stage '" + want + "' is required");
  }
}

}  // namespace

void write_checkpoint(const std::string& path, const std::string& stage,
                      const nlohmann::json& config, const nn::ParamStore& params,
                      std::uint64_t step, const std::string& rng_state) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(stage.size()));
  w.bytes(stage.data(), stage.size());
  const std::string cfg = config.dump();
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg.data(), cfg.size());
  w.u64(step);
  w.u16(static_cast<std::uint16_t>(rng_state.size()));
  w.bytes(rng_state.data(), rng_state.size());
  write_params(w, params);
  w.close(path);
}

RawCheckpoint read_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  for (int i = 0; i < 4; ++i) magic[i] = static_cast<char>(r.u8("magic"));
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("checkpoint '" + path + "': bad magic", 0);
  }
  const std::uint8_t version = r.u8("version");
  if (version != kVersion) {
    throw ParseError("checkpoint '" + path + "': unsupported format version " +
                         std::to_string(version) + " (expected " + std::to_string(kVersion) +
                         ")",
                     4);
  }

  RawCheckpoint raw;
  const std::size_t stage_len = r.u8("stage tag length");
  raw.meta.stage = r.str(stage_len, "stage tag");
  const std::size_t cfg_len = r.u32("config length");
  const std::string cfg = r.str(cfg_len, "config JSON");
  try {
    raw.config = nlohmann::json::parse(cfg);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint '" + path + "': config preamble is not valid JSON (" +
                         e.what() + ")",
                     r.offset() - static_cast<long long>(cfg_len));
  }
  raw.meta.step = r.u64("step count");
  const std::size_t rng_len = r.u16("rng state length");
  raw.meta.rng_state = r.str(rng_len, "rng state");

  const std::uint32_t count = r.u32("parameter count");
  raw.params.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t name_len = r.u16("parameter name length");
    std::string name = r.str(name_len, "parameter name");
    const std::uint32_t rows = r.u32("parameter rows");
    const std::uint32_t cols = r.u32("parameter cols");
    nn::Mat m(rows, cols);
    for (std::uint32_t rr = 0; rr < rows; ++rr) {
      for (std::uint32_t cc = 0; cc < cols; ++cc) m(rr, cc) = r.f64("parameter values");
    }
    raw.params.emplace_back(std::move(name), std::move(m));
  }
  if (!r.exhausted()) {
    throw ParseError("checkpoint '" + path + "': trailing bytes after the last parameter",
                     r.offset());
  }
  return raw;
}

std::string checkpoint_stage(const std::string& path) {
  Reader r(path);
  char magic[4];
  for (int i = 0; i < 4; ++i) magic[i] = static_cast<char>(r.u8("magic"));
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("checkpoint '" + path + "': bad magic", 0);
  }
  const std::uint8_t version = r.u8("version");
  if (version != kVersion) {
    throw ParseError("checkpoint '" + path + "': unsupported format version " +
                         std::to_string(version),
                     4);
  }
  const std::size_t stage_len = r.u8("stage tag length");
  return r.str(stage_len, "stage tag");
}

void save_codec(const std::string& path, const codec::CodecModel& m, std::uint64_t step,
                const std::string& rng_state) {
  write_checkpoint(path, "codec", to_json(m.config()), m.params(), step, rng_state);
}

void save_btd(const std::string& path, const btd::BtdModel& m, std::uint64_t step,
              const std::string& rng_state) {
  write_checkpoint(path, "btd", to_json(m.config()), m.params(), step, rng_state);
}

void save_atsp(const std::string& path, const atsp::AtspModel& m, std::uint64_t step,
               const std::string& rng_state) {
  write_checkpoint(path, "atsp", to_json(m.config()), m.params(), step, rng_state);
}

void save_separator(const std::string& path, const pipeline::MaskSeparator& m,
                    std::uint64_t step, const std::string& rng_state) {
  write_checkpoint(path, "separator", to_json(m.config()), m.params(), step, rng_state);
}

codec::CodecModel load_codec(const std::string& path, CheckpointMeta* meta) {
  RawCheckpoint raw = read_checkpoint(path);
  check_stage(raw, "codec", path);
  codec::CodecModel m(codec_config_from_json(raw.config, codec::CodecConfig{}), 0);
  fill_params(raw, m.params(), path);
  if (meta) *meta = raw.meta;
  return m;
}

btd::BtdModel load_btd(const std::string& path, CheckpointMeta* meta) {
  RawCheckpoint raw = read_checkpoint(path);
  check_stage(raw, "btd", path);
  btd::BtdModel m(btd_config_from_json(raw.config, btd::BtdConfig{}), 0);
  fill_params(raw, m.params(), path);
  if (meta) *meta = raw.meta;
  return m;
}

atsp::AtspModel load_atsp(const std::string& path, CheckpointMeta* meta) {
  RawCheckpoint raw = read_checkpoint(path);
  check_stage(raw, "atsp", path);
  atsp::AtspModel m(atsp_config_from_json(raw.config, atsp::AtspConfig{}), 0);
  fill_params(raw, m.params(), path);
  if (meta) *meta = raw.meta;
  return m;
}

pipeline::MaskSeparator load_separator(const std::string& path, CheckpointMeta* meta) {
  RawCheckpoint raw = read_checkpoint(path);
  check_stage(raw, "separator", path);
  pipeline::MaskSeparator m(separator_config_from_json(raw.config, pipeline::MaskSeparatorConfig{}),
                            0);
  fill_params(raw, m.params(), path);
  if (meta) *meta = raw.meta;
  return m;
}

}  // namespace codesep::app
