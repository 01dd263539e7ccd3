#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "codesep/atsp.hpp"
#include "codesep/errors.hpp"
#include "codesep/rng.hpp"
#include "codesep/synth.hpp"

using namespace codesep;
using atsp::AtspConfig;
using atsp::AtspModel;
using dsp::Waveform;
using nn::Mat;
using nn::Tensor;
using rvq::Vec;

namespace {

codec::CodecConfig tiny_codec() {
  codec::CodecConfig c;
  c.sample_rate_hz = 8000;
  c.mdct_frame_length = 32;
  c.latent_dim = 4;
  c.num_stages = 3;
  c.codebook_size = 5;
  c.hidden_dim = 8;
  c.num_blocks = 1;
  c.kernel = 3;
  return c;
}

AtspConfig tiny_atsp() {
  AtspConfig c;
  c.latent_dim = 4;
  c.num_stages = 3;
  c.codebook_size = 5;
  c.d_model = 8;
  c.lstm_layers = 1;
  c.conformer_blocks = 1;
  c.heads = 2;
  c.ff_mult = 2;
  c.conv_kernel = 3;
  return c;
}

Waveform toy_wave(std::uint64_t seed, double dur = 0.08) {
  auto spec = synth::default_speaker(0, 2, 8000);
  return synth::synth_utterance(spec, seed, dur);
}

rvq::Codebook book_of(std::vector<std::vector<double>> rows) {
  rvq::Codebook cb;
  cb.vectors = Mat(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) cb.vectors(i, j) = rows[i][j];
  }
  return cb;
}

// Scalar three-stage quantizer used by the worked example.
rvq::ResidualQuantizer scalar_quantizer() {
  rvq::ResidualQuantizer q;
  q.codebooks = {book_of({{-1.0}, {1.0}}), book_of({{-0.25}, {0.25}}),
                 book_of({{-0.1}, {0.1}})};
  return q;
}

rvq::ResidualQuantizer random_quantizer(int stages, int M, int K, Rng& rng) {
  rvq::ResidualQuantizer q;
  for (int n = 0; n < stages; ++n) {
    rvq::Codebook cb;
    cb.vectors = Mat(M, K);
    for (int i = 0; i < M; ++i) {
      for (int j = 0; j < K; ++j) cb.vectors(i, j) = rng.normal(0.0, 1.0);
    }
    q.codebooks.push_back(cb);
  }
  return q;
}

}  // namespace

TEST_CASE("config presets validate; compatibility with the codec is enforced") {
  CHECK_NOTHROW(atsp::validate(AtspConfig::desk()));
  CHECK_NOTHROW(atsp::validate(AtspConfig::paper()));
  CHECK(AtspConfig::paper().lstm_layers == 2);
  CHECK(AtspConfig::paper().conformer_blocks == 3);
  CHECK_NOTHROW(atsp::check_compat(AtspConfig::desk(), codec::CodecConfig::desk()));
  CHECK_NOTHROW(atsp::check_compat(tiny_atsp(), tiny_codec()));

  auto bad = tiny_atsp();
  bad.codebook_size = 6;
  CHECK_THROWS_AS(atsp::check_compat(bad, tiny_codec()), ConfigError);
  bad = tiny_atsp();
  bad.num_stages = 4;
  CHECK_THROWS_AS(atsp::check_compat(bad, tiny_codec()), ConfigError);

  bad = tiny_atsp();
  bad.num_stages = 1;  // no aux stage to predict
  CHECK_THROWS_AS(atsp::validate(bad), std::invalid_argument);
  bad = tiny_atsp();
  bad.heads = 3;
  CHECK_THROWS_AS(atsp::validate(bad), std::invalid_argument);
  bad = tiny_atsp();
  bad.conv_kernel = 4;
  CHECK_THROWS_AS(atsp::validate(bad), std::invalid_argument);
}

TEST_CASE("sub_predictor_input worked example and indicator behaviour") {
  auto q = scalar_quantizer();

  // n=3, base=2, prefix=(1,2): 1 - 0.25 + 0.1 = 0.85.
  Vec v = atsp::sub_predictor_input(2, {1, 2}, q, 3);
  REQUIRE(v.size() == 1);
  CHECK(v(0) == doctest::Approx(0.85).epsilon(1e-12));

  // n=1: exactly the base lookup, no aux terms.
  CHECK(atsp::sub_predictor_input(1, {}, q, 1)(0) == -1.0);
  CHECK(atsp::sub_predictor_input(2, {}, q, 1)(0) == 1.0);

  // n=2: base plus the first aux stage.
  CHECK(atsp::sub_predictor_input(2, {1}, q, 2)(0) == doctest::Approx(0.75).epsilon(1e-12));

  CHECK_THROWS_AS(atsp::sub_predictor_input(1, {1}, q, 1), std::invalid_argument);
  CHECK_THROWS_AS(atsp::sub_predictor_input(1, {}, q, 2), std::invalid_argument);
  CHECK_THROWS_AS(atsp::sub_predictor_input(1, {}, q, 0), std::invalid_argument);
  CHECK_THROWS_AS(atsp::sub_predictor_input(1, {1, 1, 1}, q, 4), std::invalid_argument);
}

TEST_CASE("sub_predictor_input equals an independent summation of lookups") {
  Rng rng(31);
  const int K = 3, M = 6, stages = 4;
  for (int trial = 0; trial < 100; ++trial) {
    auto q = random_quantizer(stages, M, K, rng);
    const int n = 1 + static_cast<int>(rng.uniform_int(0, stages - 2));
    const int base = 1 + static_cast<int>(rng.uniform_int(0, M - 1));
    std::vector<int> prefix(n - 1);
    for (auto& p : prefix) p = 1 + static_cast<int>(rng.uniform_int(0, M - 1));

    Vec expect = Vec::Zero(K);
    for (int j = 0; j < K; ++j) expect(j) += q.codebooks[0].vectors(base - 1, j);
    for (int i = 0; i < n - 1; ++i) {
      for (int j = 0; j < K; ++j) expect(j) += q.codebooks[i + 1].vectors(prefix[i] - 1, j);
    }
    CHECK((atsp::sub_predictor_input(base, prefix, q, n) - expect).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("predict_aux shape, range, determinism and serial consistency") {
  AtspModel m(tiny_atsp(), 17);
  Rng rng(3);
  auto q = random_quantizer(3, 5, 4, rng);
  std::vector<int> base(11);
  for (auto& b : base) b = 1 + static_cast<int>(rng.uniform_int(0, 4));

  auto aux = atsp::predict_aux(base, m, q);
  REQUIRE(aux.size() == 2);
  for (const auto& seq : aux) {
    REQUIRE(seq.size() == base.size());
    for (int tok : seq) CHECK((tok >= 1 && tok <= 5));
  }
  CHECK(atsp::predict_aux(base, m, q) == aux);

  // Recomputing stage n from the emitted earlier stages reproduces it.
  for (int n = 1; n <= 2; ++n) {
    Mat in(base.size(), 4);
    for (std::size_t t = 0; t < base.size(); ++t) {
      std::vector<int> prefix(n - 1);
      for (int i = 0; i < n - 1; ++i) prefix[i] = aux[i][t];
      in.row(t) = atsp::sub_predictor_input(base[t], prefix, q, n).transpose();
    }
    Mat logits = m.stage_logits(n, Tensor::constant(in)).value();
    for (std::size_t t = 0; t < base.size(); ++t) {
      int best = 0;
      for (int c = 1; c < 5; ++c) {
        if (logits(t, c) > logits(t, best)) best = c;
      }
      CHECK(best + 1 == aux[n - 1][t]);
    }
  }

  CHECK_THROWS_AS(atsp::predict_aux({}, m, q), std::invalid_argument);
  CHECK_THROWS_AS(atsp::predict_aux({0}, m, q), std::invalid_argument);
  CHECK_THROWS_AS(atsp::predict_aux({6}, m, q), std::invalid_argument);
  auto q_bad = random_quantizer(4, 5, 4, rng);
  CHECK_THROWS_AS(atsp::predict_aux(base, m, q_bad), std::invalid_argument);
}

TEST_CASE("teacher-forcing loss identities") {
  codec::CodecModel codec_model(tiny_codec(), 5);
  AtspModel m(tiny_atsp(), 7);
  auto w = toy_wave(9);

  // Near-uniform outputs at init (small head weights): loss close to
  // (N-1) ln M.
  const double loss = atsp::tf_ce_loss(w, codec_model, m).value()(0, 0);
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(2.0 * std::log(5.0)).epsilon(0.05));

  // Exactly (N-1) ln M when the heads are silenced to exactly uniform.
  for (int n = 1; n <= 2; ++n) {
    const std::string s = "sub" + std::to_string(n);
    m.params().get(s + ".head.w").value().setZero();
    m.params().get(s + ".head.b").value().setZero();
  }
  const double uniform = atsp::tf_ce_loss(w, codec_model, m).value()(0, 0);
  CHECK(uniform == doctest::Approx(2.0 * std::log(5.0)).epsilon(1e-12));

  // Loss is nonnegative.
  CHECK(uniform >= 0.0);

  auto mismatched = tiny_atsp();
  mismatched.codebook_size = 6;
  AtspModel m_bad(mismatched, 7);
  CHECK_THROWS_AS(atsp::tf_ce_loss(w, codec_model, m_bad), ConfigError);
}

TEST_CASE("teacher-forcing gradient matches finite differences") {
  codec::CodecModel codec_model(tiny_codec(), 11);
  AtspModel m(tiny_atsp(), 13);
  auto w = toy_wave(2, 0.06);

  Tensor param = m.params().get("sub1.lstm0.w_hh");
  Tensor loss = atsp::tf_ce_loss(w, codec_model, m);
  nn::backward(loss);
  Mat analytic = param.grad();

  Rng rng(19);
  const double h = 1e-5;
  double max_rel = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int i = static_cast<int>(rng.uniform_int(0, param.rows() - 1));
    const int j = static_cast<int>(rng.uniform_int(0, param.cols() - 1));
    const double keep = param.value()(i, j);
    param.value()(i, j) = keep + h;
    const double fp = atsp::tf_ce_loss(w, codec_model, m).value()(0, 0);
    param.value()(i, j) = keep - h;
    const double fm = atsp::tf_ce_loss(w, codec_model, m).value()(0, 0);
    param.value()(i, j) = keep;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({1e-8, std::abs(numeric), std::abs(analytic(i, j))});
    max_rel = std::max(max_rel, std::abs(analytic(i, j) - numeric) / denom);
  }
  CHECK(max_rel < 1e-3);
}

TEST_CASE("training drives the teacher-forcing loss down") {
  codec::CodecModel codec_model(tiny_codec(), 23);
  AtspModel m(tiny_atsp(), 29);
  std::vector<Waveform> batch = {toy_wave(51), toy_wave(52)};

  nn::AdamW opt;
  opt.lr = 3e-3;
  const double first = atsp::train_step_atsp(batch, codec_model, m, opt);
  double last = first;
  for (int step = 0; step < 14; ++step) {
    last = atsp::train_step_atsp(batch, codec_model, m, opt);
  }
  CHECK(std::isfinite(last));
  CHECK(last < first);

  // Reproducible first step under identical seeds.
  codec::CodecModel codec_b(tiny_codec(), 23);
  AtspModel m_b(tiny_atsp(), 29);
  nn::AdamW opt_b;
  opt_b.lr = 3e-3;
  CHECK(atsp::train_step_atsp(batch, codec_b, m_b, opt_b) == first);

  CHECK_THROWS_AS(atsp::train_step_atsp({}, codec_model, m, opt), std::invalid_argument);
}
