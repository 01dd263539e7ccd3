#pragma once

#include <cstdint>
#include <vector>

#include "codesep/dsp.hpp"
#include "codesep/nn.hpp"
#include "codesep/rvq.hpp"

namespace codesep::codec {

using dsp::Waveform;

struct CodecConfig {
  int sample_rate_hz = 16000;
  int mdct_frame_length = 320;  // hop = frame/2 -> 100 Hz token rate
  int latent_dim = 32;          // K
  int num_stages = 4;           // N
  int codebook_size = 1024;     // M
  int hidden_dim = 128;         // conv backbone width
  int num_blocks = 2;           // residual blocks per coder
  int kernel = 5;

  // Loss composition. The spectral term is multi-resolution log-mel L1; the
  // MDCT term is the mean squared coefficient error. The sine-window MDCT is
  // orthonormal, so that term equals waveform mean squared error and pins
  // reconstruction phase (mel alone is insensitive to it).
  double mel_loss_weight = 1.0;
  double mdct_loss_weight = 0.0;
  // Weight of the quantization (commitment + codebook) term. The term is
  // summed over quantizer stages per frame, so its gradient on the encoder
  // scales with latent_dim relative to the per-coefficient spectral terms;
  // weights much above ~0.05 pin the encoder onto its initial codebooks
  // before reconstruction has any say. Small values (0..0.01 measured) keep
  // the codebooks tracking the encoder without that collapse.
  double quant_loss_weight = 1.0;

  static CodecConfig desk();
  static CodecConfig paper();
};

void validate(const CodecConfig& c);
double token_rate_hz(const CodecConfig& c);

struct LatentSequence {
  nn::Mat frames;  // T x K
};

// Encoder -> RVQ -> decoder over MDCT frames. Parameters (including the
// codebooks) live in a ParamStore; registration order is the checkpoint
// serialization order.
class CodecModel {
 public:
  CodecModel(CodecConfig cfg, std::uint64_t seed);

  const CodecConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Differentiable frame maps. encode_frames: T x F -> T x K latents;
  // decode_frames: T x K -> T x F coefficients.
  nn::Tensor encode_frames(const nn::Tensor& mdct_frames) const;
  nn::Tensor decode_frames(const nn::Tensor& latents) const;

  // Plain-value snapshot of the codebook parameters.
  rvq::ResidualQuantizer quantizer() const;
  void set_codebooks(const rvq::ResidualQuantizer& q);
  nn::Tensor codebook(int stage) const;  // M x K parameter tensor

 private:
  CodecConfig cfg_;
  nn::ParamStore params_;
};

LatentSequence encode(const Waveform& w, const CodecModel& m);
rvq::TokenStream tokenize(const Waveform& w, const CodecModel& m);
Waveform decode_embeddings(const LatentSequence& e, const CodecModel& m);
Waveform reconstruct(const Waveform& w, const CodecModel& m);

// Decode straight from tokens: dequantize each frame (stages 1..up_to,
// up_to = -1 means all) and run the decoder.
Waveform decode_tokens(const rvq::TokenStream& tokens, const CodecModel& m, int up_to = -1);

// Multi-resolution log-mel analyzers used by the training loss, matching
// dsp::MelAnalyzer's formula (Hann window, magnitude spectrum, natural log,
// floor 1e-5).
class MelLossBank {
 public:
  explicit MelLossBank(int sample_rate_hz);

  // L1 distance between the log-mels of a differentiable waveform column and
  // a fixed reference of the same length, averaged over frames, bands and
  // resolutions that fit the signal.
  nn::Tensor distance(const nn::Tensor& wave_col, const nn::Mat& reference_col) const;

  // Plain (non-tape) log-mel of one resolution; exposed for tests.
  nn::Mat log_mel_plain(const nn::Mat& col, int resolution) const;
  int resolutions() const { return static_cast<int>(banks_.size()); }
  int shift(int resolution) const { return banks_[resolution].shift; }

 private:
  struct Bank {
    int window = 0;
    int shift = 0;
    nn::Mat dft_real;  // window x bins, Hann folded in
    nn::Mat dft_imag;
    nn::Mat filterbank;  // bins x d_mel
  };
  std::vector<Bank> banks_;
};

// Batch loss: mel spectral term + quantization (commitment) term, plus the
// optional MDCT anchor, averaged over the batch. Differentiable w.r.t. all
// model parameters; encoder gradients flow through the quantizer via the
// straight-through estimator. When `stages_used` is nonempty (one entry per
// utterance, each in 1..N) the decoder input is the embedding sum truncated
// to that many stages while the quantization terms still cover every stage;
// training with random truncation keeps partial-sum decoding
// (decode_tokens with up_to < N) in distribution.
nn::Tensor codec_training_loss(const std::vector<Waveform>& batch, const CodecModel& m,
                               const MelLossBank& mel,
                               const std::vector<int>& stages_used = {});

// Stage-wise k-means over encoder latents of the given waveforms; writes the
// fitted codebooks into the model.
void init_codebooks_from_data(CodecModel& m, const std::vector<Waveform>& data,
                              std::uint64_t seed);

}  // namespace codesep::codec
