#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "codesep/codec.hpp"
#include "codesep/nn.hpp"
#include "codesep/rvq.hpp"

namespace codesep::atsp {

using dsp::Waveform;

struct AtspConfig {
  int latent_dim = 32;      // K, must match the codec
  int num_stages = 4;       // N, must match the codec
  int codebook_size = 1024;  // M
  int d_model = 256;
  int lstm_layers = 2;       // N_lstm
  int conformer_blocks = 3;  // N_con
  int heads = 4;
  int ff_mult = 4;
  int conv_kernel = 31;  // depthwise conv kernel inside the conformer block

  static AtspConfig desk();
  static AtspConfig paper();
};

void validate(const AtspConfig& c);

// Raises ConfigError when K, N or M disagree with the codec.
void check_compat(const AtspConfig& a, const codec::CodecConfig& c);

// N-1 sub-predictors, one per auxiliary stage, each LSTM layers + Conformer
// blocks + linear head to M logits. A single parameter set serves both
// speaker branches.
class AtspModel {
 public:
  AtspModel(AtspConfig cfg, std::uint64_t seed);

  const AtspConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Logits (T x M) of sub-predictor n (1-based, 1..N-1) over a sequence of
  // summed embeddings (T x K).
  nn::Tensor stage_logits(int n, const nn::Tensor& inputs) const;

 private:
  nn::Tensor conformer_block(const std::string& prefix, const nn::Tensor& x) const;
  nn::Tensor attention(const std::string& prefix, const nn::Tensor& x) const;

  AtspConfig cfg_;
  nn::ParamStore params_;
};

// Eq. 5: embedding of the base token plus the embeddings of the already
// predicted auxiliary tokens for stages 1..n-1 (none when n = 1).
rvq::Vec sub_predictor_input(int d_base, const std::vector<int>& d_aux_prefix,
                             const rvq::ResidualQuantizer& q, int n);

// (N-1) x T auxiliary tokens, entries in 1..M.
using AuxTokenSequences = std::vector<std::vector<int>>;

// Serial free-running prediction: stage n consumes the tokens emitted by
// stages 1..n-1; per-frame argmax, ties to the smallest index.
AuxTokenSequences predict_aux(const std::vector<int>& base_tokens, const AtspModel& m,
                              const rvq::ResidualQuantizer& q);

// Eq. 6 teacher forcing: inputs use the ground-truth token prefixes from
// tokenize(x); loss is the frame mean of the summed per-stage cross
// entropies.
nn::Tensor tf_ce_loss(const Waveform& x, const codec::CodecModel& codec_model,
                      const AtspModel& m);

// One optimizer step on the mean teacher-forcing loss of a batch; returns the
// batch loss value.
double train_step_atsp(const std::vector<Waveform>& batch, const codec::CodecModel& codec_model,
                       AtspModel& m, nn::AdamW& opt);

}  // namespace codesep::atsp
