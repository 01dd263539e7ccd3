#include "codesep/atsp.hpp"

#include <cmath>
#include <stdexcept>

#include "codesep/errors.hpp"
#include "codesep/rng.hpp"

namespace codesep::atsp {

using nn::Mat;
using nn::Tensor;

AtspConfig AtspConfig::desk() {
  AtspConfig c;
  c.latent_dim = 8;
  c.num_stages = 4;
  c.codebook_size = 64;
  c.d_model = 64;
  c.lstm_layers = 1;
  c.conformer_blocks = 1;
  c.heads = 4;
  c.ff_mult = 4;
  c.conv_kernel = 7;
  return c;
}

AtspConfig AtspConfig::paper() { return AtspConfig{}; }

void validate(const AtspConfig& c) {
  if (c.latent_dim < 1) throw std::invalid_argument("atsp: bad latent dim");
  if (c.num_stages < 2) throw std::invalid_argument("atsp: needs at least one aux stage");
  if (c.codebook_size < 2) throw std::invalid_argument("atsp: bad codebook size");
  if (c.d_model < 1) throw std::invalid_argument("atsp: bad model width");
  if (c.lstm_layers < 1 || c.conformer_blocks < 0) {
    throw std::invalid_argument("atsp: bad stack sizes");
  }
  if (c.heads < 1 || c.d_model % c.heads != 0) {
    throw std::invalid_argument("atsp: d_model must be divisible by heads");
  }
  if (c.ff_mult < 1) throw std::invalid_argument("atsp: bad ff multiplier");
  if (c.conv_kernel < 1 || c.conv_kernel % 2 == 0) {
    throw std::invalid_argument("atsp: conv kernel must be odd");
  }
}

void check_compat(const AtspConfig& a, const codec::CodecConfig& c) {
  if (a.latent_dim != c.latent_dim || a.num_stages != c.num_stages ||
      a.codebook_size != c.codebook_size) {
    throw ConfigError("atsp: latent_dim/num_stages/codebook_size must match the codec");
  }
}

AtspModel::AtspModel(AtspConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  Rng rng(seed);
  auto normal_init = [&rng](double std) {
    return [&rng, std] { return rng.normal(0.0, std); };
  };
  const int D = cfg_.d_model;

  for (int stage = 1; stage < cfg_.num_stages; ++stage) {
    const std::string s = "sub" + std::to_string(stage);
    params_.create(s + ".in.w", cfg_.latent_dim, D,
                   normal_init(1.0 / std::sqrt(cfg_.latent_dim)));
    params_.create_zeros(s + ".in.b", 1, D);
    params_.create_const(s + ".in.ln.g", 1, D, 1.0);
    params_.create_zeros(s + ".in.ln.b", 1, D);

    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      const std::string p = s + ".lstm" + std::to_string(l);
      params_.create(p + ".w_ih", D, 4 * D, normal_init(1.0 / std::sqrt(D)));
      params_.create(p + ".w_hh", D, 4 * D, normal_init(1.0 / std::sqrt(D)));
      params_.create_zeros(p + ".b", 1, 4 * D);
    }

    for (int cblk = 0; cblk < cfg_.conformer_blocks; ++cblk) {
      const std::string p = s + ".con" + std::to_string(cblk);
      auto add_ff = [&](const std::string& f) {
        params_.create_const(f + ".ln.g", 1, D, 1.0);
        params_.create_zeros(f + ".ln.b", 1, D);
        params_.create(f + ".w1", D, cfg_.ff_mult * D, normal_init(1.0 / std::sqrt(D)));
        params_.create_zeros(f + ".b1", 1, cfg_.ff_mult * D);
        params_.create(f + ".w2", cfg_.ff_mult * D, D,
                       normal_init(1.0 / std::sqrt(cfg_.ff_mult * D)));
        params_.create_zeros(f + ".b2", 1, D);
      };
      add_ff(p + ".ff1");
      params_.create_const(p + ".att.ln.g", 1, D, 1.0);
      params_.create_zeros(p + ".att.ln.b", 1, D);
      for (const char* wn : {"wq", "wk", "wv", "wo"}) {
        params_.create(p + ".att." + wn, D, D, normal_init(1.0 / std::sqrt(D)));
        params_.create_zeros(p + ".att." + wn + std::string("b"), 1, D);
      }
      params_.create_const(p + ".conv.ln.g", 1, D, 1.0);
      params_.create_zeros(p + ".conv.ln.b", 1, D);
      params_.create(p + ".conv.dw", cfg_.conv_kernel, D,
                     normal_init(1.0 / std::sqrt(cfg_.conv_kernel)));
      params_.create_zeros(p + ".conv.dwb", 1, D);
      params_.create(p + ".conv.pw", D, D, normal_init(1.0 / std::sqrt(D)));
      params_.create_zeros(p + ".conv.pwb", 1, D);
      add_ff(p + ".ff2");
      params_.create_const(p + ".ln.g", 1, D, 1.0);
      params_.create_zeros(p + ".ln.b", 1, D);
    }

    // Small head init keeps the first outputs near uniform.
    params_.create(s + ".head.w", D, cfg_.codebook_size, normal_init(0.02));
    params_.create_zeros(s + ".head.b", 1, cfg_.codebook_size);
  }
}

Tensor AtspModel::attention(const std::string& prefix, const Tensor& x) const {
  const int D = cfg_.d_model;
  const int H = cfg_.heads;
  const int dh = D / H;
  Tensor q = nn::add(nn::matmul(x, params_.get(prefix + ".wq")), params_.get(prefix + ".wqb"));
  Tensor k = nn::add(nn::matmul(x, params_.get(prefix + ".wk")), params_.get(prefix + ".wkb"));
  Tensor v = nn::add(nn::matmul(x, params_.get(prefix + ".wv")), params_.get(prefix + ".wvb"));
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

Tensor AtspModel::conformer_block(const std::string& prefix, const Tensor& x) const {
  auto ff = [&](const std::string& f, const Tensor& in) {
    Tensor n = nn::layer_norm(in, params_.get(f + ".ln.g"), params_.get(f + ".ln.b"));
    Tensor h = nn::gelu(nn::add(nn::matmul(n, params_.get(f + ".w1")), params_.get(f + ".b1")));
    return nn::add(nn::matmul(h, params_.get(f + ".w2")), params_.get(f + ".b2"));
  };
  // Macaron: half-step FF, self-attention, depthwise conv, half-step FF, norm.
  Tensor h = nn::add(x, nn::scale(ff(prefix + ".ff1", x), 0.5));
  Tensor a = nn::layer_norm(h, params_.get(prefix + ".att.ln.g"),
                            params_.get(prefix + ".att.ln.b"));
  h = nn::add(h, attention(prefix + ".att", a));
  Tensor c = nn::layer_norm(h, params_.get(prefix + ".conv.ln.g"),
                            params_.get(prefix + ".conv.ln.b"));
  c = nn::gelu(nn::depthwise_conv1d(c, params_.get(prefix + ".conv.dw"),
                                    params_.get(prefix + ".conv.dwb"), cfg_.conv_kernel));
  c = nn::add(nn::matmul(c, params_.get(prefix + ".conv.pw")), params_.get(prefix + ".conv.pwb"));
  h = nn::add(h, c);
  h = nn::add(h, nn::scale(ff(prefix + ".ff2", h), 0.5));
  return nn::layer_norm(h, params_.get(prefix + ".ln.g"), params_.get(prefix + ".ln.b"));
}

Tensor AtspModel::stage_logits(int n, const Tensor& inputs) const {
  if (n < 1 || n >= cfg_.num_stages) {
    throw std::invalid_argument("atsp: sub-predictor index out of range");
  }
  if (inputs.cols() != cfg_.latent_dim || inputs.rows() < 1) {
    throw std::invalid_argument("atsp: input must be T x K with T >= 1");
  }
  const std::string s = "sub" + std::to_string(n);
  Tensor h = nn::add(nn::matmul(inputs, params_.get(s + ".in.w")), params_.get(s + ".in.b"));
  h = nn::layer_norm(h, params_.get(s + ".in.ln.g"), params_.get(s + ".in.ln.b"));
  for (int l = 0; l < cfg_.lstm_layers; ++l) {
    const std::string p = s + ".lstm" + std::to_string(l);
    h = nn::add(h, nn::lstm(h, params_.get(p + ".w_ih"), params_.get(p + ".w_hh"),
                            params_.get(p + ".b")));
  }
  for (int cblk = 0; cblk < cfg_.conformer_blocks; ++cblk) {
    h = conformer_block(s + ".con" + std::to_string(cblk), h);
  }
  return nn::add(nn::matmul(h, params_.get(s + ".head.w")), params_.get(s + ".head.b"));
}

rvq::Vec sub_predictor_input(int d_base, const std::vector<int>& d_aux_prefix,
                             const rvq::ResidualQuantizer& q, int n) {
  // Needs codebooks W_1..W_n; the model-level n <= N-1 bound is enforced by
  // stage_logits, so a quantizer carrying only the first n books is accepted.
  if (n < 1 || n > q.num_stages()) {
    throw std::invalid_argument("atsp: stage index has no codebooks to look up");
  }
  if (static_cast<int>(d_aux_prefix.size()) != n - 1) {
    throw std::invalid_argument("atsp: aux prefix must have n-1 tokens");
  }
  rvq::Vec acc = rvq::lookup(d_base, q.codebooks[0]);
  for (int i = 0; i < n - 1; ++i) {
    acc += rvq::lookup(d_aux_prefix[i], q.codebooks[i + 1]);
  }
  return acc;
}

namespace {

Mat stage_inputs(const std::vector<int>& base, const AuxTokenSequences& prefix,
                 const rvq::ResidualQuantizer& q, int n) {
  const int T = static_cast<int>(base.size());
  Mat in(T, q.dim());
  for (int t = 0; t < T; ++t) {
    std::vector<int> aux(n - 1);
    for (int i = 0; i < n - 1; ++i) aux[i] = prefix[i][t];
    in.row(t) = sub_predictor_input(base[t], aux, q, n).transpose();
  }
  return in;
}

std::vector<int> argmax_rows(const Mat& logits) {
  std::vector<int> out(logits.rows());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    int best = 0;
    for (Eigen::Index m = 1; m < logits.cols(); ++m) {
      if (logits(t, m) > logits(t, best)) best = static_cast<int>(m);
    }
    out[t] = best + 1;
  }
  return out;
}

}  // namespace

AuxTokenSequences predict_aux(const std::vector<int>& base_tokens, const AtspModel& m,
                              const rvq::ResidualQuantizer& q) {
  const auto& cfg = m.config();
  if (q.num_stages() != cfg.num_stages || q.dim() != cfg.latent_dim ||
      q.codebook_size() != cfg.codebook_size) {
    throw std::invalid_argument("atsp: quantizer does not match config");
  }
  if (base_tokens.empty()) throw std::invalid_argument("atsp: empty base token sequence");
  for (int tok : base_tokens) {
    if (tok < 1 || tok > cfg.codebook_size) {
      throw std::invalid_argument("atsp: base token out of range");
    }
  }
  AuxTokenSequences aux;
  for (int n = 1; n < cfg.num_stages; ++n) {
    Tensor in = Tensor::constant(stage_inputs(base_tokens, aux, q, n));
    aux.push_back(argmax_rows(m.stage_logits(n, in).value()));
  }
  return aux;
}

nn::Tensor tf_ce_loss(const Waveform& x, const codec::CodecModel& codec_model,
                      const AtspModel& m) {
  check_compat(m.config(), codec_model.config());
  auto tokens = codec::tokenize(x, codec_model);
  auto q = codec_model.quantizer();
  const int T = static_cast<int>(tokens.size());
  const int N = m.config().num_stages;

  std::vector<int> base(T);
  for (int t = 0; t < T; ++t) base[t] = tokens[t][0];
  AuxTokenSequences truth(N - 1, std::vector<int>(T));
  for (int n = 1; n < N; ++n) {
    for (int t = 0; t < T; ++t) truth[n - 1][t] = tokens[t][n];
  }

  Tensor loss;
  for (int n = 1; n < N; ++n) {
    Tensor in = Tensor::constant(stage_inputs(base, truth, q, n));
    Tensor logp = nn::row_log_softmax(m.stage_logits(n, in));
    std::vector<int> target0(T);
    for (int t = 0; t < T; ++t) target0[t] = truth[n - 1][t] - 1;
    Tensor nll = nn::neg(nn::mean_all(nn::select_cols(logp, target0)));
    loss = n == 1 ? nll : nn::add(loss, nll);
  }
  return loss;
}

double train_step_atsp(const std::vector<Waveform>& batch, const codec::CodecModel& codec_model,
                       AtspModel& m, nn::AdamW& opt) {
  if (batch.empty()) throw std::invalid_argument("atsp: empty batch");
  Tensor total;
  for (const auto& w : batch) {
    Tensor loss = tf_ce_loss(w, codec_model, m);
    total = total.defined() ? nn::add(total, loss) : loss;
  }
  total = nn::scale(total, 1.0 / static_cast<double>(batch.size()));
  const double value = total.value()(0, 0);
  nn::backward(total);
  opt.step(m.params().all());
  nn::zero_grad(m.params().all());
  return value;
}

}  // namespace codesep::atsp
