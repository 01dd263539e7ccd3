#include "codesep/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "codesep/errors.hpp"
#include "codesep/rng.hpp"

namespace codesep::pipeline {

Mode mode_from_string(const std::string& s) {
  if (s == "jsac") return Mode::kJsac;
  if (s == "fcts") return Mode::kFcts;
  if (s == "fstc") return Mode::kFstc;
  throw ConfigError("pipeline: unknown mode '" + s + "' (expected jsac, fcts, or fstc)");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kJsac: return "jsac";
    case Mode::kFcts: return "fcts";
    case Mode::kFstc: return "fstc";
  }
  return "jsac";
}

OracleSeparator::OracleSeparator(Waveform x1, Waveform x2) : x1_(std::move(x1)), x2_(std::move(x2)) {
  if (x1_.samples.size() != x2_.samples.size() || x1_.sample_rate_hz != x2_.sample_rate_hz) {
    throw std::invalid_argument("oracle separator: reference sources disagree in length or rate");
  }
}

std::array<Waveform, 2> OracleSeparator::separate(const Waveform& mix) const {
  if (mix.samples.size() != x1_.samples.size() || mix.sample_rate_hz != x1_.sample_rate_hz) {
    throw std::invalid_argument("oracle separator: mixture does not match the stored references");
  }
  return {x1_, x2_};
}

MaskSeparatorConfig MaskSeparatorConfig::desk() { return MaskSeparatorConfig{}; }

void validate(const MaskSeparatorConfig& c) {
  if (c.sample_rate_hz <= 0) throw ConfigError("separator: sample rate must be positive");
  if (c.frame_length <= 0 || c.frame_length % 2 != 0) {
    throw ConfigError("separator: frame length must be positive and even");
  }
  if (c.hidden_dim <= 0) throw ConfigError("separator: hidden dim must be positive");
  if (c.num_layers <= 0) throw ConfigError("separator: need at least one LSTM layer");
}

MaskSeparator::MaskSeparator(MaskSeparatorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  const int F = cfg_.frame_length / 2;
  const int H = cfg_.hidden_dim;
  Rng rng(seed);
  auto normal = [&rng](double std) {
    return [&rng, std] { return rng.normal(0.0, std); };
  };
  params_.create("in.w", F, H, normal(1.0 / std::sqrt(F)));
  params_.create_zeros("in.b", 1, H);
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "lstm" + std::to_string(l);
    params_.create(p + ".w_ih", H, 4 * H, normal(1.0 / std::sqrt(H)));
    params_.create(p + ".w_hh", H, 4 * H, normal(1.0 / std::sqrt(H)));
    params_.create_zeros(p + ".b", 1, 4 * H);
  }
  // Small head so the initial mask sits near 0.5 and both estimates start
  // as halves of the mixture.
  params_.create("out.w", H, F, normal(0.02));
  params_.create_zeros("out.b", 1, F);
}

nn::Tensor MaskSeparator::mask(const nn::Tensor& mdct_frames) const {
  // Fixed input normalization: log power spans roughly [-11.5, 2] on
  // peak-normalized speech; recenter and shrink before the projection.
  nn::Tensor feat = nn::scale(
      nn::add_scalar(nn::log_t(nn::add_scalar(nn::square(mdct_frames), 1e-5)), 5.0), 0.2);
  nn::Tensor h =
      nn::tanh_t(nn::add(nn::matmul(feat, params_.get("in.w")), params_.get("in.b")));
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "lstm" + std::to_string(l);
    h = nn::add(h, nn::lstm(h, params_.get(p + ".w_ih"), params_.get(p + ".w_hh"),
                            params_.get(p + ".b")));
  }
  nn::Tensor logits = nn::add(nn::matmul(h, params_.get("out.w")), params_.get("out.b"));
  return nn::sigmoid(logits);
}

std::array<Waveform, 2> MaskSeparator::separate(const Waveform& mix) const {
  if (mix.sample_rate_hz != cfg_.sample_rate_hz) {
    throw ConfigError("separator: sample rate mismatch (model " +
                      std::to_string(cfg_.sample_rate_hz) + " Hz, input " +
                      std::to_string(mix.sample_rate_hz) + " Hz)");
  }
  dsp::MDCTSpectrum spec = dsp::mdct(mix, cfg_.frame_length);
  if (spec.num_frames() == 0) {
    Waveform empty;
    empty.sample_rate_hz = mix.sample_rate_hz;
    return {empty, empty};
  }
  const nn::Mat m = mask(nn::Tensor::constant(spec.frames)).value();

  dsp::MDCTSpectrum s1 = spec;
  dsp::MDCTSpectrum s2 = spec;
  s1.frames = spec.frames.cwiseProduct(m);
  s2.frames = spec.frames - s1.frames;
  Waveform e1 = dsp::imdct(s1);
  Waveform e2 = dsp::imdct(s2);
  e1.samples.resize(mix.samples.size(), 0.0);
  e2.samples.resize(mix.samples.size(), 0.0);
  return {e1, e2};
}

nn::Tensor separator_training_loss(const std::vector<synth::MixturePair>& batch,
                                   const MaskSeparator& m) {
  if (batch.empty()) throw std::invalid_argument("separator loss: empty batch");
  const auto& cfg = m.config();
  nn::Tensor total;
  for (const auto& pair : batch) {
    if (pair.y.sample_rate_hz != cfg.sample_rate_hz) {
      throw ConfigError("separator: sample rate mismatch in training pair");
    }
    const dsp::MDCTSpectrum my = dsp::mdct(pair.y, cfg.frame_length);
    const dsp::MDCTSpectrum m1 = dsp::mdct(pair.x1, cfg.frame_length);
    const dsp::MDCTSpectrum m2 = dsp::mdct(pair.x2, cfg.frame_length);

    nn::Tensor y = nn::Tensor::constant(my.frames);
    nn::Tensor mask = m.mask(y);
    nn::Tensor est1 = nn::mul(mask, y);
    nn::Tensor est2 = nn::sub(y, est1);
    nn::Tensor x1 = nn::Tensor::constant(m1.frames);
    nn::Tensor x2 = nn::Tensor::constant(m2.frames);

    nn::Tensor keep = nn::add(nn::mean_all(nn::square(nn::sub(est1, x1))),
                              nn::mean_all(nn::square(nn::sub(est2, x2))));
    nn::Tensor swap = nn::add(nn::mean_all(nn::square(nn::sub(est1, x2))),
                              nn::mean_all(nn::square(nn::sub(est2, x1))));
    nn::Tensor item = nn::min_t(keep, swap);
    total = total.defined() ? nn::add(total, item) : item;
  }
  return nn::scale(total, 1.0 / static_cast<double>(batch.size()));
}

double train_step_separator(const std::vector<synth::MixturePair>& batch, MaskSeparator& m,
                            nn::AdamW& opt) {
  nn::Tensor loss = separator_training_loss(batch, m);
  nn::backward(loss);
  opt.step(m.params().all());
  nn::zero_grad(m.params().all());
  return loss.value()(0, 0);
}

RvqCodec::RvqCodec(const codec::CodecModel& model) : model_(model) {}

Waveform RvqCodec::roundtrip(const Waveform& w, int stages) const {
  if (stages < 1 || stages > max_stages()) {
    throw std::invalid_argument("codec roundtrip: stage count out of range");
  }
  const rvq::TokenStream tokens = codec::tokenize(w, model_);
  Waveform out = codec::decode_tokens(tokens, model_, stages);
  out.samples.resize(w.samples.size(), 0.0);
  return out;
}

double RvqCodec::bitrate_bps(int stages) const {
  const auto& c = model_.config();
  return bitstream::bitrate_of(static_cast<std::uint32_t>(c.sample_rate_hz),
                               static_cast<std::uint32_t>(c.mdct_frame_length / 2),
                               static_cast<std::uint32_t>(c.codebook_size), 1, stages);
}

int RvqCodec::max_stages() const { return model_.config().num_stages; }

IdentityCodec::IdentityCodec(double bps_per_stage, int stages)
    : bps_per_stage_(bps_per_stage), stages_(stages) {}

Waveform IdentityCodec::roundtrip(const Waveform& w, int stages) const {
  if (stages < 1 || stages > stages_) {
    throw std::invalid_argument("codec roundtrip: stage count out of range");
  }
  return w;
}

double IdentityCodec::bitrate_bps(int stages) const { return bps_per_stage_ * stages; }

int IdentityCodec::max_stages() const { return stages_; }

int match_stages(const CodecInterface& codec, double target_bps) {
  if (target_bps <= 0.0) throw ConfigError("pipeline: baseline bitrate must be positive");
  int best = 1;
  double best_err = std::abs(codec.bitrate_bps(1) - target_bps);
  for (int s = 2; s <= codec.max_stages(); ++s) {
    const double err = std::abs(codec.bitrate_bps(s) - target_bps);
    if (err < best_err) {
      best = s;
      best_err = err;
    }
  }
  return best;
}

bitstream::TokenBitstream jsac_encode(const Waveform& y, const btd::BtdModel& b,
                                      const codec::CodecModel& c) {
  btd::check_rates(b.config(), c.config());
  if (y.sample_rate_hz != c.config().sample_rate_hz) {
    throw ConfigError("jsac encode: input sample rate " + std::to_string(y.sample_rate_hz) +
                      " does not match the models (" +
                      std::to_string(c.config().sample_rate_hz) + ")");
  }
  const dsp::MelSpectrogram mel = btd::btd_mel(y, b.config());
  auto [t1, t2] = btd::disentangle(mel, b);

  bitstream::TokenBitstream ts;
  const int hop = c.config().mdct_frame_length / 2;
  const std::uint32_t g = std::gcd(static_cast<std::uint32_t>(c.config().sample_rate_hz),
                                   static_cast<std::uint32_t>(hop));
  ts.header.sample_rate_hz = static_cast<std::uint32_t>(c.config().sample_rate_hz);
  ts.header.token_rate_num = static_cast<std::uint32_t>(c.config().sample_rate_hz) / g;
  ts.header.token_rate_den = static_cast<std::uint32_t>(hop) / g;
  ts.header.codebook_size = static_cast<std::uint32_t>(c.config().codebook_size);
  ts.streams = {std::move(t1), std::move(t2)};
  return ts;
}

std::array<Waveform, 2> jsac_decode(const bitstream::TokenBitstream& bs,
                                    const atsp::AtspModel& a, const codec::CodecModel& c) {
  atsp::check_compat(a.config(), c.config());
  const auto& cc = c.config();
  const int hop = cc.mdct_frame_length / 2;
  if (bs.header.sample_rate_hz != static_cast<std::uint32_t>(cc.sample_rate_hz)) {
    throw ConfigError("jsac decode: bitstream sample rate " +
                      std::to_string(bs.header.sample_rate_hz) +
                      " does not match the codec (" + std::to_string(cc.sample_rate_hz) + ")");
  }
  if (bs.header.codebook_size != static_cast<std::uint32_t>(cc.codebook_size)) {
    throw ConfigError("jsac decode: bitstream codebook size " +
                      std::to_string(bs.header.codebook_size) +
                      " does not match the codec (" + std::to_string(cc.codebook_size) + ")");
  }
  // Cross-multiplied exact rational comparison of the token rates.
  const std::uint64_t lhs =
      static_cast<std::uint64_t>(bs.header.token_rate_num) * static_cast<std::uint64_t>(hop);
  const std::uint64_t rhs = static_cast<std::uint64_t>(bs.header.token_rate_den) *
                            static_cast<std::uint64_t>(cc.sample_rate_hz);
  if (lhs != rhs) {
    throw ConfigError("jsac decode: bitstream token rate does not match the codec");
  }
  if (bs.streams.size() != 2) {
    throw ConfigError("jsac decode: expected 2 token streams, found " +
                      std::to_string(bs.streams.size()));
  }

  const rvq::ResidualQuantizer q = c.quantizer();
  std::array<Waveform, 2> out;
  for (int s = 0; s < 2; ++s) {
    const auto& base = bs.streams[s];
    if (base.empty()) {
      out[s].sample_rate_hz = cc.sample_rate_hz;
      continue;
    }
    const atsp::AuxTokenSequences aux = atsp::predict_aux(base, a, q);
    rvq::TokenStream tokens(base.size());
    for (std::size_t t = 0; t < base.size(); ++t) {
      rvq::TokenFrame frame(cc.num_stages);
      frame[0] = base[t];
      for (int n = 0; n + 1 < cc.num_stages; ++n) frame[n + 1] = aux[n][t];
      tokens[t] = std::move(frame);
    }
    out[s] = codec::decode_tokens(tokens, c);
  }
  return out;
}

double jsac_bitrate_bps(const codec::CodecModel& c) {
  const auto& cc = c.config();
  return bitstream::bitrate_of(static_cast<std::uint32_t>(cc.sample_rate_hz),
                               static_cast<std::uint32_t>(cc.mdct_frame_length / 2),
                               static_cast<std::uint32_t>(cc.codebook_size), 1, 1);
}

std::array<Waveform, 2> fcts(const Waveform& y, double bitrate_bps, const CodecInterface& codec,
                             const SeparatorInterface& sep) {
  const int stages = match_stages(codec, bitrate_bps);
  return sep.separate(codec.roundtrip(y, stages));
}

std::array<Waveform, 2> fstc(const Waveform& y, double bitrate_bps,
                             const SeparatorInterface& sep, const CodecInterface& codec) {
  const int stages = match_stages(codec, bitrate_bps / 2.0);
  auto split = sep.separate(y);
  return {codec.roundtrip(split[0], stages), codec.roundtrip(split[1], stages)};
}

namespace {

Waveform head(const Waveform& w, std::size_t n) {
  Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  out.samples.assign(w.samples.begin(), w.samples.begin() + n);
  return out;
}

}  // namespace

metrics::EvalReport evaluate(Mode mode, const std::vector<synth::MixturePair>& mixtures,
                             const EvalModels& models, double bitrate_bps) {
  if (models.codec == nullptr) throw ConfigError("evaluate: a codec model is required");
  if (mode == Mode::kJsac && (models.btd == nullptr || models.atsp == nullptr)) {
    throw ConfigError("evaluate: jsac mode requires btd and atsp models");
  }
  if (mode != Mode::kJsac && !models.oracle_separator && models.separator == nullptr) {
    throw ConfigError("evaluate: " + to_string(mode) +
                      " mode requires a separator (trained or oracle)");
  }
  if (mixtures.empty()) throw DataError("evaluate: the mixture set is empty");

  metrics::EvalReport report;
  report.mode = to_string(mode);
  const RvqCodec rc(*models.codec);
  if (mode == Mode::kJsac) {
    report.bitrate_per_stream_bps = jsac_bitrate_bps(*models.codec);
    report.bitrate_total_bps = 2.0 * report.bitrate_per_stream_bps;
  } else if (mode == Mode::kFcts) {
    // One coded stream: the mixture itself.
    report.bitrate_per_stream_bps = rc.bitrate_bps(match_stages(rc, bitrate_bps));
    report.bitrate_total_bps = report.bitrate_per_stream_bps;
  } else {
    report.bitrate_per_stream_bps = rc.bitrate_bps(match_stages(rc, bitrate_bps / 2.0));
    report.bitrate_total_bps = 2.0 * report.bitrate_per_stream_bps;
  }

  int index = 0;
  for (const auto& pair : mixtures) {
    std::array<Waveform, 2> est;
    const OracleSeparator oracle(pair.x1, pair.x2);
    const SeparatorInterface& sep =
        models.oracle_separator ? static_cast<const SeparatorInterface&>(oracle)
                                : *models.separator;
    if (mode == Mode::kJsac) {
      est = jsac_decode(jsac_encode(pair.y, *models.btd, *models.codec), *models.atsp,
                        *models.codec);
    } else if (mode == Mode::kFcts) {
      est = fcts(pair.y, bitrate_bps, rc, sep);
    } else {
      est = fstc(pair.y, bitrate_bps, sep, rc);
    }

    const std::size_t n = std::min({pair.y.samples.size(), est[0].samples.size(),
                                    est[1].samples.size()});
    if (n == 0) throw DataError("evaluate: empty estimate for mixture " + std::to_string(index));
    const Waveform y = head(pair.y, n);
    const Waveform x1 = head(pair.x1, n);
    const Waveform x2 = head(pair.x2, n);
    const Waveform e1 = head(est[0], n);
    const Waveform e2 = head(est[1], n);

    metrics::UtteranceEval u;
    u.id = "mix" + std::to_string(index);
    auto [db, perm] = metrics::pit_si_sdr({e1, e2}, {x1, x2});
    u.pit_si_sdr_db = db;
    u.permutation = perm;
    const double mix_db =
        0.5 * (metrics::si_sdr(y, x1) + metrics::si_sdr(y, x2));
    u.improvement_db = db - mix_db;
    const Waveform& r1 = perm[0] == 1 ? x1 : x2;
    const Waveform& r2 = perm[0] == 1 ? x2 : x1;
    u.mel_distance = 0.5 * (metrics::mel_distance(e1, r1) + metrics::mel_distance(e2, r2));
    report.utterances.push_back(std::move(u));
    ++index;
  }
  metrics::finalize(report);
  return report;
}

}  // namespace codesep::pipeline
