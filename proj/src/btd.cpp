#include "codesep/btd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "codesep/errors.hpp"
#include "codesep/rng.hpp"

namespace codesep::btd {

using nn::Mat;
using nn::Tensor;

BtdConfig BtdConfig::desk() {
  BtdConfig c;
  c.sample_rate_hz = 8000;
  c.d_mel = 40;
  c.mel_shift = 40;  // 200 Hz mel rate
  c.meld_layers = 1;
  c.meld_stride = 2;  // -> 100 Hz, the desk codec token rate
  c.meld_kernel = 5;
  c.d_model = 64;
  c.intra_blocks = 1;
  c.inter_blocks = 1;
  c.heads = 4;
  c.ff_mult = 4;
  c.vocab = 64;
  return c;
}

BtdConfig BtdConfig::paper() { return BtdConfig{}; }

void validate(const BtdConfig& c) {
  if (c.sample_rate_hz <= 0) throw std::invalid_argument("btd: bad sample rate");
  if (c.d_mel < 1 || c.mel_shift < 1) throw std::invalid_argument("btd: bad mel front end");
  if (c.meld_layers < 1 || c.meld_stride < 2) {
    throw std::invalid_argument("btd: downsampler needs >= 1 layer of stride >= 2");
  }
  if (c.meld_kernel < 1 || c.meld_kernel % 2 == 0) {
    throw std::invalid_argument("btd: meld kernel must be odd");
  }
  if (c.d_model < 1 || c.intra_blocks < 0 || c.inter_blocks < 0) {
    throw std::invalid_argument("btd: bad stack sizes");
  }
  if (c.heads < 1 || c.d_model % c.heads != 0) {
    throw std::invalid_argument("btd: d_model must be divisible by heads");
  }
  if (c.ff_mult < 1) throw std::invalid_argument("btd: bad ff multiplier");
  if (c.vocab < 2) throw std::invalid_argument("btd: vocab must be >= 2");
}

double output_rate_hz(const BtdConfig& c) {
  double rate = static_cast<double>(c.sample_rate_hz) / c.mel_shift;
  for (int i = 0; i < c.meld_layers; ++i) rate /= c.meld_stride;
  return rate;
}

void check_rates(const BtdConfig& b, const codec::CodecConfig& c) {
  if (b.sample_rate_hz != c.sample_rate_hz) {
    throw ConfigError("btd: sample rate differs from codec");
  }
  if (std::abs(output_rate_hz(b) - codec::token_rate_hz(c)) > 1e-9) {
    throw ConfigError("btd: downsampled mel rate must match the codec token rate");
  }
  if (b.vocab != c.codebook_size) {
    throw ConfigError("btd: vocab must equal the codec codebook size");
  }
}

dsp::MelSpectrogram btd_mel(const dsp::Waveform& w, const BtdConfig& c) {
  if (w.sample_rate_hz != c.sample_rate_hz) {
    throw std::invalid_argument("btd: waveform sample rate does not match config");
  }
  return dsp::mel_spectrogram(w, c.d_mel, c.mel_shift);
}

namespace {

Mat sinusoidal_positions(int T, int d) {
  Mat pe(T, d);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < d; i += 2) {
      const double angle = t / std::pow(10000.0, static_cast<double>(i) / d);
      pe(t, i) = std::sin(angle);
      if (i + 1 < d) pe(t, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace

BtdModel::BtdModel(BtdConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  Rng rng(seed);
  auto normal_init = [&rng](double std) {
    return [&rng, std] { return rng.normal(0.0, std); };
  };
  const int D = cfg_.d_model;
  const int k = cfg_.meld_kernel;

  for (int l = 0; l < cfg_.meld_layers; ++l) {
    const int in = l == 0 ? cfg_.d_mel : D;
    const std::string p = "meld" + std::to_string(l);
    params_.create(p + ".w", k * in, D, normal_init(1.0 / std::sqrt(k * in)));
    params_.create_zeros(p + ".b", 1, D);
  }
  params_.create_const("meld.ln.g", 1, D, 1.0);
  params_.create_zeros("meld.ln.b", 1, D);

  auto add_attention = [&](const std::string& p) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      params_.create(p + "." + w, D, D, normal_init(1.0 / std::sqrt(D)));
      params_.create_zeros(p + std::string(".") + w + "b", 1, D);
    }
  };
  auto add_block = [&](const std::string& p) {
    params_.create_const(p + ".ln1.g", 1, D, 1.0);
    params_.create_zeros(p + ".ln1.b", 1, D);
    add_attention(p + ".att");
    params_.create_const(p + ".ln2.g", 1, D, 1.0);
    params_.create_zeros(p + ".ln2.b", 1, D);
    params_.create(p + ".ff1.w", D, cfg_.ff_mult * D, normal_init(1.0 / std::sqrt(D)));
    params_.create_zeros(p + ".ff1.b", 1, cfg_.ff_mult * D);
    params_.create(p + ".ff2.w", cfg_.ff_mult * D, D,
                   normal_init(1.0 / std::sqrt(cfg_.ff_mult * D)));
    params_.create_zeros(p + ".ff2.b", 1, D);
  };

  for (int i = 0; i < cfg_.intra_blocks; ++i) add_block("intra" + std::to_string(i));
  params_.create("acbg.d1", 1, D, normal_init(0.02));
  params_.create("acbg.d2", 1, D, normal_init(0.02));
  for (int i = 0; i < cfg_.inter_blocks; ++i) add_block("inter" + std::to_string(i));
  // Small head init keeps the first distributions near uniform, so training
  // starts from the 2 ln M plateau instead of fighting random confident
  // logits.
  params_.create("head.w", D, cfg_.vocab, normal_init(0.02));
  params_.create_zeros("head.b", 1, cfg_.vocab);
}

Tensor BtdModel::attention(const std::string& prefix, const Tensor& q_in,
                           const Tensor& kv_in) const {
  const int D = cfg_.d_model;
  const int H = cfg_.heads;
  const int dh = D / H;
  Tensor q = nn::add(nn::matmul(q_in, params_.get(prefix + ".wq")), params_.get(prefix + ".wqb"));
  Tensor k = nn::add(nn::matmul(kv_in, params_.get(prefix + ".wk")), params_.get(prefix + ".wkb"));
  Tensor v = nn::add(nn::matmul(kv_in, params_.get(prefix + ".wv")), params_.get(prefix + ".wvb"));
  std::vector<Tensor> heads;
  heads.reserve(H);
  for (int h = 0; h < H; ++h) {
    Tensor qh = nn::slice_cols(q, h * dh, dh);
    Tensor kh = nn::slice_cols(k, h * dh, dh);
    Tensor vh = nn::slice_cols(v, h * dh, dh);
    Tensor att = nn::row_softmax(
        nn::scale(nn::matmul(qh, nn::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh))));
    heads.push_back(nn::matmul(att, vh));
  }
  Tensor cat = nn::concat_cols(heads);
  return nn::add(nn::matmul(cat, params_.get(prefix + ".wo")), params_.get(prefix + ".wob"));
}

Tensor BtdModel::transformer_block(const std::string& prefix, const Tensor& x) const {
  Tensor n1 = nn::layer_norm(x, params_.get(prefix + ".ln1.g"), params_.get(prefix + ".ln1.b"));
  Tensor h = nn::add(x, attention(prefix + ".att", n1, n1));
  Tensor n2 = nn::layer_norm(h, params_.get(prefix + ".ln2.g"), params_.get(prefix + ".ln2.b"));
  Tensor ff = nn::gelu(nn::add(nn::matmul(n2, params_.get(prefix + ".ff1.w")),
                               params_.get(prefix + ".ff1.b")));
  ff = nn::add(nn::matmul(ff, params_.get(prefix + ".ff2.w")), params_.get(prefix + ".ff2.b"));
  return nn::add(h, ff);
}

Tensor BtdModel::cross_block(const std::string& prefix, const Tensor& a, const Tensor& b) const {
  // Queries from this source, keys/values from the other one.
  Tensor n1 = nn::layer_norm(a, params_.get(prefix + ".ln1.g"), params_.get(prefix + ".ln1.b"));
  Tensor nb = nn::layer_norm(b, params_.get(prefix + ".ln1.g"), params_.get(prefix + ".ln1.b"));
  Tensor h = nn::add(a, attention(prefix + ".att", n1, nb));
  Tensor n2 = nn::layer_norm(h, params_.get(prefix + ".ln2.g"), params_.get(prefix + ".ln2.b"));
  Tensor ff = nn::gelu(nn::add(nn::matmul(n2, params_.get(prefix + ".ff1.w")),
                               params_.get(prefix + ".ff1.b")));
  ff = nn::add(nn::matmul(ff, params_.get(prefix + ".ff2.w")), params_.get(prefix + ".ff2.b"));
  return nn::add(h, ff);
}

Tensor BtdModel::embed(const dsp::MelSpectrogram& mel) const {
  if (mel.d_mel != cfg_.d_mel || mel.frame_shift_samples != cfg_.mel_shift) {
    throw std::invalid_argument("btd: mel dims do not match config");
  }
  if (mel.num_frames() == 0) throw std::invalid_argument("btd: empty mel input");
  Tensor h = Tensor::constant(mel.frames);
  for (int l = 0; l < cfg_.meld_layers; ++l) {
    const std::string p = "meld" + std::to_string(l);
    h = nn::gelu(nn::conv1d(h, params_.get(p + ".w"), params_.get(p + ".b"), cfg_.meld_kernel,
                            cfg_.meld_stride));
  }
  h = nn::layer_norm(h, params_.get("meld.ln.g"), params_.get("meld.ln.b"));
  return nn::add(h, Tensor::constant(
                        sinusoidal_positions(static_cast<int>(h.rows()), cfg_.d_model)));
}

std::pair<Tensor, Tensor> BtdModel::forward_logits(const dsp::MelSpectrogram& mel) const {
  Tensor z = embed(mel);
  for (int i = 0; i < cfg_.intra_blocks; ++i) {
    z = transformer_block("intra" + std::to_string(i), z);
  }
  // Duplicate the mixture features and break the symmetry with the ACBG
  // biases; everything after this point is weight-shared across sources.
  Tensor a = nn::add(z, params_.get("acbg.d1"));
  Tensor b = nn::add(z, params_.get("acbg.d2"));
  for (int i = 0; i < cfg_.inter_blocks; ++i) {
    const std::string p = "inter" + std::to_string(i);
    Tensor na = cross_block(p, a, b);
    Tensor nb = cross_block(p, b, a);
    a = na;
    b = nb;
  }
  Tensor la = nn::add(nn::matmul(a, params_.get("head.w")), params_.get("head.b"));
  Tensor lb = nn::add(nn::matmul(b, params_.get("head.w")), params_.get("head.b"));
  return {la, lb};
}

std::pair<Mat, Mat> btd_forward(const dsp::MelSpectrogram& mel, const BtdModel& m) {
  auto [la, lb] = m.forward_logits(mel);
  return {nn::row_softmax(la).value(), nn::row_softmax(lb).value()};
}

namespace {

std::vector<int> argmax_rows(const Mat& p) {
  std::vector<int> out(p.rows());
  for (Eigen::Index t = 0; t < p.rows(); ++t) {
    int best = 0;
    for (Eigen::Index m = 1; m < p.cols(); ++m) {
      if (p(t, m) > p(t, best)) best = static_cast<int>(m);
    }
    out[t] = best + 1;  // 1-based tokens
  }
  return out;
}

}  // namespace

std::pair<std::vector<int>, std::vector<int>> disentangle(const dsp::MelSpectrogram& mel,
                                                          const BtdModel& m) {
  auto [p1, p2] = btd_forward(mel, m);
  return {argmax_rows(p1), argmax_rows(p2)};
}

namespace {

void check_pi_ce_args(Eigen::Index t_len, Eigen::Index m, const std::vector<int>& t1,
                      const std::vector<int>& t2) {
  if (static_cast<Eigen::Index>(t1.size()) != t_len ||
      static_cast<Eigen::Index>(t2.size()) != t_len) {
    throw std::invalid_argument("pi_ce: target length mismatch");
  }
  for (const auto& targets : {t1, t2}) {
    for (int tok : targets) {
      if (tok < 1 || tok > m) throw std::invalid_argument("pi_ce: target token out of range");
    }
  }
}

}  // namespace

double pi_ce_loss(const Mat& p1, const Mat& p2, const std::vector<int>& t1,
                  const std::vector<int>& t2, PermutationScope scope) {
  if (p1.rows() != p2.rows() || p1.cols() != p2.cols()) {
    throw std::invalid_argument("pi_ce: distribution shape mismatch");
  }
  check_pi_ce_args(p1.rows(), p1.cols(), t1, t2);
  const Eigen::Index T = p1.rows();
  if (T == 0) throw std::invalid_argument("pi_ce: empty input");
  double acc = 0.0, acc_id = 0.0, acc_sw = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const double id = -std::log(p1(t, t1[t] - 1)) - std::log(p2(t, t2[t] - 1));
    const double sw = -std::log(p1(t, t2[t] - 1)) - std::log(p2(t, t1[t] - 1));
    acc += std::min(id, sw);
    acc_id += id;
    acc_sw += sw;
  }
  if (scope == PermutationScope::PerUtterance) return std::min(acc_id, acc_sw) / T;
  return acc / T;
}

Tensor pi_ce_loss_t(const Tensor& logits1, const Tensor& logits2, const std::vector<int>& t1,
                    const std::vector<int>& t2, PermutationScope scope) {
  if (logits1.rows() != logits2.rows() || logits1.cols() != logits2.cols()) {
    throw std::invalid_argument("pi_ce: logit shape mismatch");
  }
  check_pi_ce_args(logits1.rows(), logits1.cols(), t1, t2);
  const Eigen::Index T = logits1.rows();
  if (T == 0) throw std::invalid_argument("pi_ce: empty input");
  std::vector<int> i1(t1.size()), i2(t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) i1[i] = t1[i] - 1;
  for (std::size_t i = 0; i < t2.size(); ++i) i2[i] = t2[i] - 1;

  Tensor l1 = nn::row_log_softmax(logits1);
  Tensor l2 = nn::row_log_softmax(logits2);
  Tensor identity = nn::neg(nn::add(nn::select_cols(l1, i1), nn::select_cols(l2, i2)));
  Tensor swapped = nn::neg(nn::add(nn::select_cols(l1, i2), nn::select_cols(l2, i1)));
  if (scope == PermutationScope::PerUtterance) {
    return nn::scale(nn::min_t(nn::sum_all(identity), nn::sum_all(swapped)),
                     1.0 / static_cast<double>(T));
  }
  return nn::mean_all(nn::min_t(identity, swapped));
}

std::vector<int> base_tokens(const rvq::TokenStream& tokens) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& frame : tokens) {
    if (frame.empty()) throw std::invalid_argument("btd: empty token frame");
    out.push_back(frame[0]);
  }
  return out;
}

double train_step_btd(const std::vector<synth::MixturePair>& batch,
                      const codec::CodecModel& codec_model, BtdModel& model, nn::AdamW& opt,
                      PermutationScope scope) {
  if (batch.empty()) throw std::invalid_argument("btd: empty batch");
  check_rates(model.config(), codec_model.config());

  Tensor total;
  for (const auto& pair : batch) {
    auto mel = btd_mel(pair.y, model.config());
    auto [la, lb] = model.forward_logits(mel);
    auto d1 = base_tokens(codec::tokenize(pair.x1, codec_model));
    auto d2 = base_tokens(codec::tokenize(pair.x2, codec_model));

    const int t_logits = static_cast<int>(la.rows());
    const int t_tokens = static_cast<int>(d1.size());
    if (std::abs(t_logits - t_tokens) > 2) {
      throw ConfigError("btd: downsampled frame count " + std::to_string(t_logits) +
                        " is incompatible with codec token count " + std::to_string(t_tokens));
    }
    const int T = std::min(t_logits, t_tokens);
    if (T < 1) throw std::invalid_argument("btd: utterance too short");
    Tensor la_c = t_logits == T ? la : nn::slice_rows(la, 0, T);
    Tensor lb_c = t_logits == T ? lb : nn::slice_rows(lb, 0, T);
    d1.resize(T);
    d2.resize(T);

    Tensor loss = pi_ce_loss_t(la_c, lb_c, d1, d2, scope);
    total = total.defined() ? nn::add(total, loss) : loss;
  }
  total = nn::scale(total, 1.0 / static_cast<double>(batch.size()));
  const double value = total.value()(0, 0);
  nn::backward(total);
  opt.step(model.params().all());
  nn::zero_grad(model.params().all());
  return value;
}

}  // namespace codesep::btd
