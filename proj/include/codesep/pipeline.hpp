#pragma once

#include <array>
#include <string>
#include <vector>

#include "codesep/atsp.hpp"
#include "codesep/bitstream.hpp"
#include "codesep/btd.hpp"
#include "codesep/codec.hpp"
#include "codesep/metrics.hpp"
#include "codesep/synth.hpp"

namespace codesep::pipeline {

using dsp::Waveform;

enum class Mode { kJsac, kFcts, kFstc };

Mode mode_from_string(const std::string& s);  // "jsac" | "fcts" | "fstc"
std::string to_string(Mode m);

struct PipelineConfig {
  Mode mode = Mode::kJsac;
  double preset_bitrate_bps = 0.0;  // baselines only; JSAC's rate is structural
  int num_sources = 2;
};

// Waveform-domain two-source separator.
class SeparatorInterface {
 public:
  virtual ~SeparatorInterface() = default;
  virtual std::array<Waveform, 2> separate(const Waveform& mix) const = 0;
};

// Hands back the ground-truth sources it was constructed with. Used to
// exercise the baseline plumbing independently of any trained model.
class OracleSeparator final : public SeparatorInterface {
 public:
  OracleSeparator(Waveform x1, Waveform x2);
  std::array<Waveform, 2> separate(const Waveform& mix) const override;

 private:
  Waveform x1_, x2_;
};

struct MaskSeparatorConfig {
  int sample_rate_hz = 8000;
  int frame_length = 160;  // MDCT window; mask acts on frame_length/2 bins
  int hidden_dim = 64;
  int num_layers = 1;  // LSTM layers after the input projection

  static MaskSeparatorConfig desk();
};

void validate(const MaskSeparatorConfig& c);

// Small trained separator: an LSTM predicts a per-frame sigmoid mask over
// MDCT bins for source 1; source 2 gets the complementary mask, so the two
// estimates always sum back to the mixture.
class MaskSeparator final : public SeparatorInterface {
 public:
  MaskSeparator(MaskSeparatorConfig cfg, std::uint64_t seed);

  const MaskSeparatorConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // T x F mask in (0, 1) for source 1, differentiable.
  nn::Tensor mask(const nn::Tensor& mdct_frames) const;

  std::array<Waveform, 2> separate(const Waveform& mix) const override;

 private:
  MaskSeparatorConfig cfg_;
  nn::ParamStore params_;
};

// PIT L2 between masked MDCT coefficients and the source coefficients,
// minimum over the two assignments, averaged over the batch.
nn::Tensor separator_training_loss(const std::vector<synth::MixturePair>& batch,
                                   const MaskSeparator& m);
double train_step_separator(const std::vector<synth::MixturePair>& batch, MaskSeparator& m,
                            nn::AdamW& opt);

// What the baselines need from a codec: a token-budgeted round trip and the
// rate bookkeeping. Lets tests swap in an identity stub.
class CodecInterface {
 public:
  virtual ~CodecInterface() = default;
  virtual Waveform roundtrip(const Waveform& w, int stages) const = 0;
  virtual double bitrate_bps(int stages) const = 0;  // one stream
  virtual int max_stages() const = 0;
};

class RvqCodec final : public CodecInterface {
 public:
  explicit RvqCodec(const codec::CodecModel& model);
  Waveform roundtrip(const Waveform& w, int stages) const override;
  double bitrate_bps(int stages) const override;
  int max_stages() const override;

 private:
  const codec::CodecModel& model_;
};

// Passes audio through untouched; reports a nominal per-stage rate.
class IdentityCodec final : public CodecInterface {
 public:
  explicit IdentityCodec(double bps_per_stage = 600.0, int stages = 4);
  Waveform roundtrip(const Waveform& w, int stages) const override;
  double bitrate_bps(int stages) const override;
  int max_stages() const override;

 private:
  double bps_per_stage_;
  int stages_;
};

// Stage count in 1..max whose rate is closest to the target; ties go to the
// smaller stage count. The achieved rate is codec.bitrate_bps(result).
int match_stages(const CodecInterface& codec, double target_bps);

// Mixture -> BTD mel -> disentangled base tokens -> packed two-stream file.
bitstream::TokenBitstream jsac_encode(const Waveform& y, const btd::BtdModel& b,
                                      const codec::CodecModel& c);

// Unpack side: per stream, serial aux prediction, embedding sum, decode.
std::array<Waveform, 2> jsac_decode(const bitstream::TokenBitstream& bs,
                                    const atsp::AtspModel& a, const codec::CodecModel& c);

// Transmitted JSAC rate per stream (base tokens only).
double jsac_bitrate_bps(const codec::CodecModel& c);

// Compress the mixture at ~bitrate_bps total, then separate.
std::array<Waveform, 2> fcts(const Waveform& y, double bitrate_bps, const CodecInterface& codec,
                             const SeparatorInterface& sep);

// Separate, then compress each stream at ~bitrate_bps/2.
std::array<Waveform, 2> fstc(const Waveform& y, double bitrate_bps,
                             const SeparatorInterface& sep, const CodecInterface& codec);

struct EvalModels {
  const codec::CodecModel* codec = nullptr;       // every mode
  const btd::BtdModel* btd = nullptr;             // jsac
  const atsp::AtspModel* atsp = nullptr;          // jsac
  const SeparatorInterface* separator = nullptr;  // fcts / fstc, unless oracle
  bool oracle_separator = false;  // baselines use the ground truth as separator
};

// Runs one mode over a mixture set and fills an EvalReport: per utterance
// the PIT SI-SDR of the two estimates against the references, the
// improvement over using the raw mixture as both estimates, and the mean
// mel distance under the chosen permutation. Missing models for the
// requested mode raise ConfigError. Estimates and references are truncated
// to their common length before scoring. For the baselines, bitrate_bps is
// the preset total rate b; JSAC ignores it.
metrics::EvalReport evaluate(Mode mode, const std::vector<synth::MixturePair>& mixtures,
                             const EvalModels& models, double bitrate_bps = 0.0);

}  // namespace codesep::pipeline
