#include "codesep/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "codesep/checkpoint.hpp"
#include "codesep/config_io.hpp"
#include "codesep/errors.hpp"
#include "codesep/rng.hpp"
#include "codesep/wav.hpp"

namespace codesep::app {

namespace fs = std::filesystem;

namespace {

// Keeps batch sampling decoupled from the model-init stream.
constexpr std::uint64_t kBatchSeedSalt = 0x9e3779b97f4a7c15ull;

void check_common(const TrainConfig& c) {
  if (c.stage != "codec" && c.stage != "btd" && c.stage != "atsp" && c.stage != "separator") {
    throw ConfigError("train: unknown stage '" + c.stage +
                      "' (expected codec, btd, atsp, or separator)");
  }
  if (c.preset != "desk" && c.preset != "paper") {
    throw ConfigError("train: unknown preset '" + c.preset + "' (expected desk or paper)");
  }
  if (c.data_dir.empty()) throw ConfigError("train: data_dir is required");
  if (c.max_steps < 1) throw ConfigError("train: max_steps must be >= 1");
  if (c.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (c.learning_rate <= 0.0) throw ConfigError("train: learning_rate must be positive");
  if (c.checkpoint_interval < 0) throw ConfigError("train: checkpoint_interval must be >= 0");
  if (c.stage_dropout < 0.0 || c.stage_dropout > 1.0) {
    throw ConfigError("train: stage_dropout must be in [0, 1]");
  }
  if ((c.stage == "btd" || c.stage == "atsp") && c.codec_checkpoint.empty()) {
    throw ConfigError("train: the " + c.stage + " stage requires codec_checkpoint");
  }
}

std::vector<dsp::Waveform> load_singles(const synth::DataManifests& m, const std::string& root,
                                        const std::string& split) {
  std::vector<dsp::Waveform> out;
  for (const auto& rec : m.singles) {
    if (rec.split == split) out.push_back(wav::read(root + "/" + rec.path));
  }
  if (out.empty()) {
    throw DataError("train: no single-speaker utterances in split '" + split + "' under " +
                    root);
  }
  return out;
}

std::vector<synth::MixturePair> load_mixtures(const synth::DataManifests& m,
                                              const std::string& root,
                                              const std::string& split) {
  std::vector<synth::MixturePair> out;
  for (const auto& rec : m.mixtures) {
    if (rec.split != split) continue;
    synth::MixturePair p;
    p.y = wav::read(root + "/" + rec.mix_path);
    p.x1 = wav::read(root + "/" + rec.s1_path);
    p.x2 = wav::read(root + "/" + rec.s2_path);
    p.speaker1 = rec.speaker1;
    p.speaker2 = rec.speaker2;
    out.push_back(std::move(p));
  }
  if (out.empty()) {
    throw DataError("data: no mixtures in split '" + split + "' under " + root);
  }
  return out;
}

synth::DataManifests read_data(const std::string& root) {
  try {
    return synth::read_manifests(root);
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("data: cannot read dataset manifests under '" + root + "': " + e.what());
  }
}

class LossLog {
 public:
  LossLog(const std::string& dir, const std::string& stage) {
    fs::create_directories(dir);
    path_ = dir + "/" + stage + "_loss.csv";
    out_.open(path_);
    if (!out_) throw DataError("train: cannot write loss log '" + path_ + "'");
    out_ << "step,loss\n";
  }
  void add(int step, double loss) { out_ << step << "," << loss << "\n"; }
  void close() { out_.close(); }

 private:
  std::string path_;
  std::ofstream out_;
};

void check_finite(double loss, const std::string& stage, int step) {
  if (!std::isfinite(loss)) {
    throw NumericError("train: " + stage + " loss is not finite at step " +
                       std::to_string(step));
  }
}

template <typename Item>
std::vector<Item> sample_batch(const std::vector<Item>& pool, int n, Rng& rng) {
  std::vector<Item> batch;
  batch.reserve(n);
  for (int i = 0; i < n; ++i) {
    batch.push_back(pool[rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1)]);
  }
  return batch;
}

}  // namespace

TrainConfig TrainConfig::desk_codec() {
  TrainConfig c;
  c.stage = "codec";
  c.max_steps = 8000;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  c.stage_dropout = 0.3;
  return c;
}

TrainConfig TrainConfig::desk_btd() {
  TrainConfig c;
  c.stage = "btd";
  c.max_steps = 3000;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  return c;
}

TrainConfig TrainConfig::desk_atsp() {
  TrainConfig c;
  c.stage = "atsp";
  c.max_steps = 2000;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  return c;
}

TrainConfig TrainConfig::desk_separator() {
  TrainConfig c;
  c.stage = "separator";
  c.max_steps = 2000;
  c.batch_size = 8;
  c.learning_rate = 1e-3;
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  StrictReader r(j, "train config");
  r.field("stage", c.stage);
  r.field("preset", c.preset);
  r.field("data_dir", c.data_dir);
  r.field("out_dir", c.out_dir);
  r.field("codec_checkpoint", c.codec_checkpoint);
  r.field("seed", c.seed);
  r.field("max_steps", c.max_steps);
  r.field("batch_size", c.batch_size);
  r.field("learning_rate", c.learning_rate);
  r.field("beta1", c.beta1);
  r.field("beta2", c.beta2);
  r.field("weight_decay", c.weight_decay);
  r.field("checkpoint_interval", c.checkpoint_interval);
  r.field("stage_dropout", c.stage_dropout);
  c.model = r.object("model");
  r.finish();
  check_common(c);
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("train: cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("train: config file '" + path + "' is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"stage", c.stage},
                   {"preset", c.preset},
                   {"data_dir", c.data_dir},
                   {"out_dir", c.out_dir},
                   {"codec_checkpoint", c.codec_checkpoint},
                   {"seed", c.seed},
                   {"max_steps", c.max_steps},
                   {"batch_size", c.batch_size},
                   {"learning_rate", c.learning_rate},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"weight_decay", c.weight_decay},
                   {"checkpoint_interval", c.checkpoint_interval},
                   {"stage_dropout", c.stage_dropout}};
  if (!c.model.empty()) j["model"] = c.model;
  return j;
}

namespace {

nn::AdamW make_optimizer(const TrainConfig& c) {
  nn::AdamW opt;
  opt.lr = c.learning_rate;
  opt.beta1 = c.beta1;
  opt.beta2 = c.beta2;
  opt.weight_decay = c.weight_decay;
  return opt;
}

TrainResult train_codec(const TrainConfig& cfg) {
  const auto base =
      cfg.preset == "paper" ? codec::CodecConfig::paper() : codec::CodecConfig::desk();
  const auto model_cfg = codec_config_from_json(cfg.model, base);

  const auto manifests = read_data(cfg.data_dir);
  const auto data = load_singles(manifests, cfg.data_dir, "train");

  codec::CodecModel model(model_cfg, cfg.seed);
  codec::init_codebooks_from_data(model, data, cfg.seed + 1);
  codec::MelLossBank mel(model_cfg.sample_rate_hz);
  nn::AdamW opt = make_optimizer(cfg);
  Rng rng(cfg.seed ^ kBatchSeedSalt);
  LossLog log(cfg.out_dir, "codec");

  TrainResult res;
  res.checkpoint_path = cfg.out_dir + "/codec.ckpt";
  for (int step = 0; step < cfg.max_steps; ++step) {
    const auto batch = sample_batch(data, cfg.batch_size, rng);
    std::vector<int> stages;
    stages.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const bool drop = rng.uniform() < cfg.stage_dropout;
      stages.push_back(drop ? static_cast<int>(rng.uniform_int(1, model_cfg.num_stages))
                            : model_cfg.num_stages);
    }
    nn::Tensor loss = codec::codec_training_loss(batch, model, mel, stages);
    nn::backward(loss);
    opt.step(model.params().all());
    nn::zero_grad(model.params().all());

    const double v = loss.value()(0, 0);
    check_finite(v, "codec", step);
    log.add(step, v);
    if (step == 0) res.first_loss = v;
    res.final_loss = v;
    if (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0) {
      save_codec(res.checkpoint_path, model, step + 1, rng.state());
    }
  }
  log.close();
  save_codec(res.checkpoint_path, model, cfg.max_steps, rng.state());
  res.steps = cfg.max_steps;
  return res;
}

TrainResult train_btd(const TrainConfig& cfg) {
  const codec::CodecModel codec_model = load_codec(cfg.codec_checkpoint);
  const auto base = cfg.preset == "paper" ? btd::BtdConfig::paper() : btd::BtdConfig::desk();
  const auto model_cfg = btd_config_from_json(cfg.model, base);
  btd::check_rates(model_cfg, codec_model.config());

  const auto manifests = read_data(cfg.data_dir);
  const auto data = load_mixtures(manifests, cfg.data_dir, "train");

  btd::BtdModel model(model_cfg, cfg.seed);
  nn::AdamW opt = make_optimizer(cfg);
  Rng rng(cfg.seed ^ kBatchSeedSalt);
  LossLog log(cfg.out_dir, "btd");

  TrainResult res;
  res.checkpoint_path = cfg.out_dir + "/btd.ckpt";
  for (int step = 0; step < cfg.max_steps; ++step) {
    const auto batch = sample_batch(data, cfg.batch_size, rng);
    const double v = btd::train_step_btd(batch, codec_model, model, opt);
    check_finite(v, "btd", step);
    log.add(step, v);
    if (step == 0) res.first_loss = v;
    res.final_loss = v;
    if (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0) {
      save_btd(res.checkpoint_path, model, step + 1, rng.state());
    }
  }
  log.close();
  save_btd(res.checkpoint_path, model, cfg.max_steps, rng.state());
  res.steps = cfg.max_steps;
  return res;
}

TrainResult train_atsp(const TrainConfig& cfg) {
  const codec::CodecModel codec_model = load_codec(cfg.codec_checkpoint);
  const auto base = cfg.preset == "paper" ? atsp::AtspConfig::paper() : atsp::AtspConfig::desk();
  const auto model_cfg = atsp_config_from_json(cfg.model, base);
  atsp::check_compat(model_cfg, codec_model.config());

  const auto manifests = read_data(cfg.data_dir);
  const auto data = load_singles(manifests, cfg.data_dir, "train");

  atsp::AtspModel model(model_cfg, cfg.seed);
  nn::AdamW opt = make_optimizer(cfg);
  Rng rng(cfg.seed ^ kBatchSeedSalt);
  LossLog log(cfg.out_dir, "atsp");

  TrainResult res;
  res.checkpoint_path = cfg.out_dir + "/atsp.ckpt";
  for (int step = 0; step < cfg.max_steps; ++step) {
    const auto batch = sample_batch(data, cfg.batch_size, rng);
    const double v = atsp::train_step_atsp(batch, codec_model, model, opt);
    check_finite(v, "atsp", step);
    log.add(step, v);
    if (step == 0) res.first_loss = v;
    res.final_loss = v;
    if (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0) {
      save_atsp(res.checkpoint_path, model, step + 1, rng.state());
    }
  }
  log.close();
  save_atsp(res.checkpoint_path, model, cfg.max_steps, rng.state());
  res.steps = cfg.max_steps;
  return res;
}

TrainResult train_separator(const TrainConfig& cfg) {
  pipeline::MaskSeparatorConfig base = pipeline::MaskSeparatorConfig::desk();
  const auto model_cfg = separator_config_from_json(cfg.model, base);

  const auto manifests = read_data(cfg.data_dir);
  const auto data = load_mixtures(manifests, cfg.data_dir, "train");

  pipeline::MaskSeparator model(model_cfg, cfg.seed);
  nn::AdamW opt = make_optimizer(cfg);
  Rng rng(cfg.seed ^ kBatchSeedSalt);
  LossLog log(cfg.out_dir, "separator");

  TrainResult res;
  res.checkpoint_path = cfg.out_dir + "/separator.ckpt";
  for (int step = 0; step < cfg.max_steps; ++step) {
    auto batch = sample_batch(data, cfg.batch_size, rng);
    const double v = pipeline::train_step_separator(batch, model, opt);
    check_finite(v, "separator", step);
    log.add(step, v);
    if (step == 0) res.first_loss = v;
    res.final_loss = v;
    if (cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0) {
      save_separator(res.checkpoint_path, model, step + 1, rng.state());
    }
  }
  log.close();
  save_separator(res.checkpoint_path, model, cfg.max_steps, rng.state());
  res.steps = cfg.max_steps;
  return res;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  check_common(cfg);
  if (cfg.stage == "codec") return train_codec(cfg);
  if (cfg.stage == "btd") return train_btd(cfg);
  if (cfg.stage == "atsp") return train_atsp(cfg);
  return train_separator(cfg);
}

std::vector<synth::MixturePair> load_mixture_split(const std::string& data_dir,
                                                   const std::string& split) {
  return load_mixtures(read_data(data_dir), data_dir, split);
}

}  // namespace codesep::app
