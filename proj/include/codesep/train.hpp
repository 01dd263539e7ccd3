#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "codesep/synth.hpp"

namespace codesep::app {

// One training stage, fully described. Every field is addressable from the
// JSON config file; unknown keys are rejected. The optional "model" object
// overrides fields of the stage's model preset (see config_io).
struct TrainConfig {
  std::string stage;            // codec | btd | atsp | separator
  std::string preset = "desk";  // desk | paper
  std::string data_dir;         // root produced by `synth-data`
  std::string out_dir = ".";    // receives <stage>.ckpt and <stage>_loss.csv
  std::string codec_checkpoint;  // prerequisite for btd and atsp stages
  std::uint64_t seed = 1234;
  int max_steps = 2000;
  int batch_size = 16;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 0.01;
  int checkpoint_interval = 0;  // 0 = write the final checkpoint only
  // Codec stage only: probability that an utterance in a batch is decoded
  // from a random prefix of the RVQ stages, which keeps partial-stage
  // decoding in distribution.
  double stage_dropout = 0.0;
  nlohmann::json model;  // overrides for the stage's model config

  static TrainConfig desk_codec();
  static TrainConfig desk_btd();
  static TrainConfig desk_atsp();
  static TrainConfig desk_separator();
};

TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);  // file read + parse
nlohmann::json to_json(const TrainConfig& c);

struct TrainResult {
  std::string checkpoint_path;
  double first_loss = 0.0;
  double final_loss = 0.0;
  int steps = 0;
};

// Runs one stage: builds the model from preset+overrides, loads the
// prerequisite codec for btd/atsp, samples batches deterministically from
// the train split, optimizes with AdamW, logs "step,loss" lines to
// <out_dir>/<stage>_loss.csv, and writes <out_dir>/<stage>.ckpt.
// Missing prerequisites raise ConfigError; unreadable data raises DataError;
// a NaN loss raises NumericError naming the step.
TrainResult train(const TrainConfig& cfg);

// Loads every mixture of one split from a synth-data directory.
// Empty split or unreadable files raise DataError.
std::vector<synth::MixturePair> load_mixture_split(const std::string& data_dir,
                                                   const std::string& split);

}  // namespace codesep::app
