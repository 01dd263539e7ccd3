#include "codesep/codec.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "codesep/rng.hpp"

namespace codesep::codec {

using nn::Mat;
using nn::Tensor;

CodecConfig CodecConfig::desk() {
  CodecConfig c;
  c.sample_rate_hz = 8000;
  c.mdct_frame_length = 160;  // 100 Hz tokens
  c.latent_dim = 8;
  c.num_stages = 4;
  c.codebook_size = 64;
  c.hidden_dim = 128;
  c.num_blocks = 2;
  c.kernel = 5;
  // The MDCT anchor (= waveform MSE) drives SI-SDR directly; log-mel alone is
  // phase-blind and trains an order of magnitude slower at this scale.
  c.mel_loss_weight = 0.0;
  c.mdct_loss_weight = 1.0;
  c.quant_loss_weight = 0.01;
  return c;
}

CodecConfig CodecConfig::paper() {
  CodecConfig c;
  c.sample_rate_hz = 16000;
  c.mdct_frame_length = 320;  // 100 Hz tokens
  c.latent_dim = 32;
  c.num_stages = 4;
  c.codebook_size = 1024;
  c.hidden_dim = 128;
  c.num_blocks = 2;
  c.kernel = 5;
  return c;
}

void validate(const CodecConfig& c) {
  if (c.sample_rate_hz <= 0) throw std::invalid_argument("codec: bad sample rate");
  if (c.mdct_frame_length < 4 || c.mdct_frame_length % 2 != 0) {
    throw std::invalid_argument("codec: mdct_frame_length must be even and >= 4");
  }
  if (c.latent_dim < 1) throw std::invalid_argument("codec: latent_dim must be >= 1");
  if (c.num_stages < 2) throw std::invalid_argument("codec: num_stages must be >= 2");
  if (c.codebook_size < 2) throw std::invalid_argument("codec: codebook_size must be >= 2");
  if (c.hidden_dim < 1 || c.num_blocks < 0) throw std::invalid_argument("codec: bad backbone");
  if (c.kernel < 1 || c.kernel % 2 == 0) {
    throw std::invalid_argument("codec: kernel must be odd and >= 1");
  }
  if (c.mel_loss_weight < 0.0 || c.mdct_loss_weight < 0.0 || c.quant_loss_weight < 0.0) {
    throw std::invalid_argument("codec: loss weights must be nonnegative");
  }
}

double token_rate_hz(const CodecConfig& c) {
  return static_cast<double>(c.sample_rate_hz) / (c.mdct_frame_length / 2);
}

CodecModel::CodecModel(CodecConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  Rng rng(seed);
  const int F = cfg_.mdct_frame_length / 2;
  const int H = cfg_.hidden_dim;
  const int K = cfg_.latent_dim;
  const int k = cfg_.kernel;

  auto normal_init = [&rng](double std) {
    return [&rng, std] { return rng.normal(0.0, std); };
  };
  auto add_coder = [&](const std::string& prefix, int in_dim, int out_dim) {
    params_.create(prefix + ".in.w", k * in_dim, H, normal_init(1.0 / std::sqrt(k * in_dim)));
    params_.create_zeros(prefix + ".in.b", 1, H);
    for (int b = 0; b < cfg_.num_blocks; ++b) {
      const std::string p = prefix + ".blk" + std::to_string(b);
      params_.create_const(p + ".ln.g", 1, H, 1.0);
      params_.create_zeros(p + ".ln.b", 1, H);
      params_.create(p + ".c1.w", k * H, H, normal_init(1.0 / std::sqrt(k * H)));
      params_.create_zeros(p + ".c1.b", 1, H);
      params_.create(p + ".c2.w", k * H, H, normal_init(1.0 / std::sqrt(k * H)));
      params_.create_zeros(p + ".c2.b", 1, H);
    }
    params_.create_const(prefix + ".out.ln.g", 1, H, 1.0);
    params_.create_zeros(prefix + ".out.ln.b", 1, H);
    params_.create(prefix + ".out.w", H, out_dim, normal_init(1.0 / std::sqrt(H)));
    params_.create_zeros(prefix + ".out.b", 1, out_dim);
  };

  // The encoder maps MDCT frames to latents; the decoder mirrors it. The
  // first conv of each coder handles the dimension change, so the decoder
  // input projection is a 1-tap conv (plain linear map).
  add_coder("enc", F, K);
  add_coder("dec", K, F);
  for (int n = 0; n < cfg_.num_stages; ++n) {
    params_.create("q.cb" + std::to_string(n), cfg_.codebook_size, K, normal_init(0.02));
  }
}

namespace {

Tensor run_coder(const nn::ParamStore& params, const std::string& prefix, const Tensor& input,
                 int num_blocks, int kernel) {
  Tensor h = nn::conv1d(input, params.get(prefix + ".in.w"), params.get(prefix + ".in.b"),
                        kernel, 1);
  for (int b = 0; b < num_blocks; ++b) {
    const std::string p = prefix + ".blk" + std::to_string(b);
    Tensor y = nn::layer_norm(h, params.get(p + ".ln.g"), params.get(p + ".ln.b"));
    y = nn::gelu(nn::conv1d(y, params.get(p + ".c1.w"), params.get(p + ".c1.b"), kernel, 1));
    y = nn::conv1d(y, params.get(p + ".c2.w"), params.get(p + ".c2.b"), kernel, 1);
    h = nn::add(h, y);
  }
  Tensor out = nn::layer_norm(h, params.get(prefix + ".out.ln.g"), params.get(prefix + ".out.ln.b"));
  return nn::add(nn::matmul(out, params.get(prefix + ".out.w")), params.get(prefix + ".out.b"));
}

}  // namespace

Tensor CodecModel::encode_frames(const Tensor& mdct_frames) const {
  if (mdct_frames.cols() != cfg_.mdct_frame_length / 2) {
    throw std::invalid_argument("codec: encoder input must have F = frame_length/2 columns");
  }
  return run_coder(params_, "enc", mdct_frames, cfg_.num_blocks, cfg_.kernel);
}

Tensor CodecModel::decode_frames(const Tensor& latents) const {
  if (latents.cols() != cfg_.latent_dim) {
    throw std::invalid_argument("codec: decoder input must have K columns");
  }
  return run_coder(params_, "dec", latents, cfg_.num_blocks, cfg_.kernel);
}

Tensor CodecModel::codebook(int stage) const {
  if (stage < 0 || stage >= cfg_.num_stages) throw std::invalid_argument("codec: bad stage");
  return params_.get("q.cb" + std::to_string(stage));
}

rvq::ResidualQuantizer CodecModel::quantizer() const {
  rvq::ResidualQuantizer q;
  q.codebooks.resize(cfg_.num_stages);
  for (int n = 0; n < cfg_.num_stages; ++n) q.codebooks[n].vectors = codebook(n).value();
  rvq::validate(q);
  return q;
}

void CodecModel::set_codebooks(const rvq::ResidualQuantizer& q) {
  rvq::validate(q);
  if (q.num_stages() != cfg_.num_stages || q.codebook_size() != cfg_.codebook_size ||
      q.dim() != cfg_.latent_dim) {
    throw std::invalid_argument("codec: quantizer shape does not match config");
  }
  for (int n = 0; n < cfg_.num_stages; ++n) {
    codebook(n).value() = q.codebooks[n].vectors;
  }
}

LatentSequence encode(const Waveform& w, const CodecModel& m) {
  if (w.sample_rate_hz != m.config().sample_rate_hz) {
    throw std::invalid_argument("codec: waveform sample rate does not match config");
  }
  auto spec = dsp::mdct(w, m.config().mdct_frame_length);
  Tensor out = m.encode_frames(Tensor::constant(spec.frames));
  return LatentSequence{out.value()};
}

rvq::TokenStream tokenize(const Waveform& w, const CodecModel& m) {
  auto lat = encode(w, m);
  auto q = m.quantizer();
  rvq::TokenStream out;
  out.reserve(lat.frames.rows());
  for (Eigen::Index t = 0; t < lat.frames.rows(); ++t) {
    out.push_back(rvq::quantize(lat.frames.row(t).transpose(), q).tokens);
  }
  return out;
}

Waveform decode_embeddings(const LatentSequence& e, const CodecModel& m) {
  if (e.frames.cols() != m.config().latent_dim) {
    throw std::invalid_argument("codec: embedding dimension does not match config");
  }
  Tensor coeffs = m.decode_frames(Tensor::constant(e.frames));
  dsp::MDCTSpectrum spec;
  spec.frames = coeffs.value();
  spec.frame_length = m.config().mdct_frame_length;
  spec.sample_rate_hz = m.config().sample_rate_hz;
  return dsp::imdct(spec);
}

Waveform reconstruct(const Waveform& w, const CodecModel& m) {
  return decode_tokens(tokenize(w, m), m);
}

Waveform decode_tokens(const rvq::TokenStream& tokens, const CodecModel& m, int up_to) {
  auto q = m.quantizer();
  LatentSequence e;
  e.frames.resize(static_cast<Eigen::Index>(tokens.size()), m.config().latent_dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    e.frames.row(t) = rvq::dequantize(tokens[t], q, up_to).transpose();
  }
  return decode_embeddings(e, m);
}

MelLossBank::MelLossBank(int sample_rate_hz) {
  // Three resolutions: windows 256/512/1024 at 16 kHz, scaled to the
  // configured rate; shift is a quarter window per the mel convention.
  for (int base : {256, 512, 1024}) {
    const int window = std::max(8, base * sample_rate_hz / 16000);
    const int shift = window / 4;
    dsp::MelAnalyzer a(sample_rate_hz, std::min(40, window / 4), shift);
    Bank b;
    b.window = a.window();
    b.shift = shift;
    b.dft_real = a.hann().asDiagonal() * a.dft_real();
    b.dft_imag = a.hann().asDiagonal() * a.dft_imag();
    b.filterbank = a.filterbank();
    banks_.push_back(std::move(b));
  }
}

namespace {

int mel_frames_for(std::size_t len, int window, int shift) {
  if (len < static_cast<std::size_t>(window)) return 0;
  return static_cast<int>(len / shift);
}

}  // namespace

Mat MelLossBank::log_mel_plain(const Mat& col, int resolution) const {
  const Bank& b = banks_.at(resolution);
  const int T = mel_frames_for(col.rows(), b.window, b.shift);
  Mat out(T, b.filterbank.cols());
  for (int t = 0; t < T; ++t) {
    Eigen::RowVectorXd frame = Eigen::RowVectorXd::Zero(b.window);
    for (int k = 0; k < b.window; ++k) {
      const Eigen::Index i = static_cast<Eigen::Index>(t) * b.shift + k;
      if (i < col.rows()) frame(k) = col(i, 0);
    }
    Eigen::RowVectorXd re = frame * b.dft_real;
    Eigen::RowVectorXd im = frame * b.dft_imag;
    Eigen::RowVectorXd mag = (re.array().square() + im.array().square()).sqrt();
    Eigen::RowVectorXd mel = mag * b.filterbank;
    out.row(t) = (mel.array() + dsp::MelAnalyzer::kMelFloor).log();
  }
  return out;
}

Tensor MelLossBank::distance(const Tensor& wave_col, const Mat& reference_col) const {
  if (wave_col.cols() != 1 || reference_col.cols() != 1 ||
      wave_col.rows() != reference_col.rows()) {
    throw std::invalid_argument("MelLossBank: inputs must be equal-length columns");
  }
  Tensor total;
  int used = 0;
  for (int r = 0; r < resolutions(); ++r) {
    const Bank& b = banks_[r];
    const int T = mel_frames_for(wave_col.rows(), b.window, b.shift);
    if (T == 0) continue;
    Tensor frames = nn::frame_signal(wave_col, b.window, b.shift, T);
    Tensor re = nn::matmul(frames, Tensor::constant(b.dft_real));
    Tensor im = nn::matmul(frames, Tensor::constant(b.dft_imag));
    Tensor mag = nn::sqrt_t(nn::add(nn::square(re), nn::square(im)));
    Tensor mel = nn::matmul(mag, Tensor::constant(b.filterbank));
    Tensor lm = nn::log_t(nn::add_scalar(mel, dsp::MelAnalyzer::kMelFloor));
    Tensor ref = Tensor::constant(log_mel_plain(reference_col, r));
    Tensor term = nn::mean_all(nn::abs_t(nn::sub(lm, ref)));
    total = used == 0 ? term : nn::add(total, term);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("MelLossBank: signal shorter than every window");
  return nn::scale(total, 1.0 / used);
}

nn::Tensor codec_training_loss(const std::vector<Waveform>& batch, const CodecModel& m,
                               const MelLossBank& mel, const std::vector<int>& stages_used) {
  if (batch.empty()) throw std::invalid_argument("codec: empty batch");
  const auto& cfg = m.config();
  if (!stages_used.empty()) {
    if (stages_used.size() != batch.size()) {
      throw std::invalid_argument("codec: stages_used size does not match batch");
    }
    for (int u : stages_used) {
      if (u < 1 || u > cfg.num_stages) {
        throw std::invalid_argument("codec: stages_used entries must be in 1..N");
      }
    }
  }
  auto q = m.quantizer();
  const double beta = 1.0;

  Tensor total;
  for (std::size_t item = 0; item < batch.size(); ++item) {
    const auto& w = batch[item];
    if (w.sample_rate_hz != cfg.sample_rate_hz) {
      throw std::invalid_argument("codec: batch sample rate does not match config");
    }
    auto spec = dsp::mdct(w, cfg.mdct_frame_length);
    const int T = spec.num_frames();
    if (T == 0) throw std::invalid_argument("codec: empty waveform in batch");
    Tensor x = Tensor::constant(spec.frames);
    Tensor z = m.encode_frames(x);

    // Quantize every frame against the current codebooks. The decoder sees
    // the embedding sum of the first `use` stages only.
    const int use = stages_used.empty() ? cfg.num_stages : stages_used[item];
    std::vector<rvq::QuantizationResult> results;
    results.reserve(T);
    Mat zq(T, cfg.latent_dim);
    for (int t = 0; t < T; ++t) {
      results.push_back(rvq::quantize(z.value().row(t).transpose(), q));
      zq.row(t) =
          (results.back().residuals.front() - results.back().residuals[use]).transpose();
    }

    // Commitment term ||r_n - sg(w_n)||^2 pushes the encoder toward the
    // codebooks; the codebook term beta * ||sg(r_n) - w_n||^2 pulls the
    // codebooks toward the residuals.
    Tensor quant_loss;
    Tensor residual = z;
    for (int n = 0; n < cfg.num_stages; ++n) {
      Mat w_sel(T, cfg.latent_dim);
      Mat r_vals(T, cfg.latent_dim);
      std::vector<int> idx(T);
      for (int t = 0; t < T; ++t) {
        idx[t] = results[t].tokens[n] - 1;
        w_sel.row(t) = rvq::lookup(results[t].tokens[n], q.codebooks[n]).transpose();
        r_vals.row(t) = results[t].residuals[n].transpose();
      }
      residual = nn::sub(residual, Tensor::constant(w_sel));
      Tensor commit = nn::sum_all(nn::square(residual));
      Tensor code = nn::sum_all(
          nn::square(nn::sub(Tensor::constant(r_vals), nn::gather_rows(m.codebook(n), idx))));
      Tensor term = nn::add(commit, nn::scale(code, beta));
      quant_loss = n == 0 ? term : nn::add(quant_loss, term);
    }
    quant_loss = nn::scale(quant_loss, cfg.quant_loss_weight / T);

    Tensor zq_st = nn::straight_through(z, zq);
    Tensor coeffs = m.decode_frames(zq_st);

    Tensor utt_loss = quant_loss;
    if (cfg.mel_loss_weight > 0.0) {
      const int F = cfg.mdct_frame_length / 2;
      Tensor recon = nn::overlap_add(coeffs, dsp::mdct_synthesis_matrix(cfg.mdct_frame_length),
                                     F, F);
      Mat target = Mat::Zero(recon.rows(), 1);
      for (Eigen::Index i = 0; i < recon.rows() && i < static_cast<Eigen::Index>(w.size());
           ++i) {
        target(i, 0) = w.samples[i];
      }
      utt_loss = nn::add(utt_loss, nn::scale(mel.distance(recon, target), cfg.mel_loss_weight));
    }
    if (cfg.mdct_loss_weight > 0.0) {
      Tensor anchor = nn::mean_all(nn::square(nn::sub(coeffs, x)));
      utt_loss = nn::add(utt_loss, nn::scale(anchor, cfg.mdct_loss_weight));
    }
    total = total.defined() ? nn::add(total, utt_loss) : utt_loss;
  }
  return nn::scale(total, 1.0 / static_cast<double>(batch.size()));
}

void init_codebooks_from_data(CodecModel& m, const std::vector<Waveform>& data,
                              std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("codec: no data for codebook init");
  std::vector<dsp::Vec> samples;
  for (const auto& w : data) {
    auto lat = encode(w, m);
    for (Eigen::Index t = 0; t < lat.frames.rows(); ++t) {
      samples.push_back(lat.frames.row(t).transpose());
    }
  }
  auto q = rvq::init_codebooks(samples, m.config().num_stages, m.config().codebook_size, seed);
  m.set_codebooks(q);
}

}  // namespace codesep::codec
