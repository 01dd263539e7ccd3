#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "codesep/codec.hpp"
#include "codesep/dsp.hpp"
#include "codesep/nn.hpp"
#include "codesep/synth.hpp"

namespace codesep::btd {

// Scope of the min over the two source assignments in the PI-CE loss.
enum class PermutationScope { PerFrame, PerUtterance };

struct BtdConfig {
  int sample_rate_hz = 16000;
  int d_mel = 80;
  int mel_shift = 20;   // mel frame rate = sample_rate / mel_shift
  int meld_layers = 3;  // each layer downsamples by meld_stride
  int meld_stride = 2;
  int meld_kernel = 5;
  int d_model = 256;  // K_meld
  int intra_blocks = 4;
  int inter_blocks = 4;
  int heads = 4;
  int ff_mult = 4;
  int vocab = 1024;  // M, matches the codec's first-stage codebook

  static BtdConfig desk();
  static BtdConfig paper();
};

void validate(const BtdConfig& c);

// Frame rate after mel analysis and downsampling; must equal the codec token
// rate when the two models are used together.
double output_rate_hz(const BtdConfig& c);

// Raises ConfigError when the downsampled mel rate does not match the codec
// token rate or the sample rates differ.
void check_rates(const BtdConfig& b, const codec::CodecConfig& c);

// Mel front end with the configured band count and shift.
dsp::MelSpectrogram btd_mel(const dsp::Waveform& w, const BtdConfig& c);

// Mixed mel -> shared downsampler + source-intra stack -> per-source bias
// (ACBG) -> source-inter cross-attention stack -> shared base head. The two
// source branches use identical weights; source identity comes only from the
// delta vectors, which makes the construction exactly swap-equivariant.
class BtdModel {
 public:
  BtdModel(BtdConfig cfg, std::uint64_t seed);

  const BtdConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Differentiable head logits for both sources, each T' x M.
  std::pair<nn::Tensor, nn::Tensor> forward_logits(const dsp::MelSpectrogram& mel) const;

 private:
  nn::Tensor embed(const dsp::MelSpectrogram& mel) const;
  nn::Tensor transformer_block(const std::string& prefix, const nn::Tensor& x) const;
  nn::Tensor attention(const std::string& prefix, const nn::Tensor& q_in,
                       const nn::Tensor& kv_in) const;
  nn::Tensor cross_block(const std::string& prefix, const nn::Tensor& a,
                         const nn::Tensor& b) const;

  BtdConfig cfg_;
  nn::ParamStore params_;
};

// Row-stochastic base-token distributions (P1, P2), each T' x M.
std::pair<nn::Mat, nn::Mat> btd_forward(const dsp::MelSpectrogram& mel, const BtdModel& m);

// Argmax tokens (1-based, ties to the smallest index) for both sources.
std::pair<std::vector<int>, std::vector<int>> disentangle(const dsp::MelSpectrogram& mel,
                                                          const BtdModel& m);

// Permutation-invariant cross-entropy on probabilities (evaluation form).
double pi_ce_loss(const nn::Mat& p1, const nn::Mat& p2, const std::vector<int>& t1,
                  const std::vector<int>& t2,
                  PermutationScope scope = PermutationScope::PerFrame);

// Differentiable form on head logits.
nn::Tensor pi_ce_loss_t(const nn::Tensor& logits1, const nn::Tensor& logits2,
                        const std::vector<int>& t1, const std::vector<int>& t2,
                        PermutationScope scope = PermutationScope::PerFrame);

// First-stage (base) tokens of a token stream.
std::vector<int> base_tokens(const rvq::TokenStream& tokens);

// One optimizer step on the PI-CE loss of a mixture batch; targets are the
// frozen codec's first-stage tokens of the reference sources. Returns the
// batch loss. Logit rows and target frames are truncated to their common
// length; a mismatch above 2 frames raises ConfigError.
double train_step_btd(const std::vector<synth::MixturePair>& batch,
                      const codec::CodecModel& codec_model, BtdModel& model, nn::AdamW& opt,
                      PermutationScope scope = PermutationScope::PerFrame);

}  // namespace codesep::btd
