#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "codesep/btd.hpp"
#include "codesep/errors.hpp"
#include "codesep/rng.hpp"

using namespace codesep;
using btd::BtdConfig;
using btd::BtdModel;
using btd::PermutationScope;
using dsp::Waveform;
using nn::Mat;
using nn::Tensor;

namespace {

// Matched pair: codec hop 16 -> 500 Hz tokens, mel shift 8 + stride 2 -> 500 Hz.
codec::CodecConfig tiny_codec() {
  codec::CodecConfig c;
  c.sample_rate_hz = 8000;
  c.mdct_frame_length = 32;
  c.latent_dim = 4;
  c.num_stages = 2;
  c.codebook_size = 5;
  c.hidden_dim = 8;
  c.num_blocks = 1;
  c.kernel = 3;
  return c;
}

BtdConfig tiny_btd() {
  BtdConfig c;
  c.sample_rate_hz = 8000;
  c.d_mel = 8;
  c.mel_shift = 8;
  c.meld_layers = 1;
  c.meld_stride = 2;
  c.meld_kernel = 3;
  c.d_model = 8;
  c.intra_blocks = 1;
  c.inter_blocks = 1;
  c.heads = 2;
  c.ff_mult = 2;
  c.vocab = 5;
  return c;
}

Waveform toy_wave(int speaker, std::uint64_t seed, double dur = 0.08) {
  auto spec = synth::default_speaker(speaker, 2, 8000);
  return synth::synth_utterance(spec, seed, dur);
}

Mat random_probs(int T, int M, Rng& rng) {
  Mat p(T, M);
  for (int t = 0; t < T; ++t) {
    double sum = 0.0;
    for (int m = 0; m < M; ++m) {
      p(t, m) = 0.05 + rng.uniform();
      sum += p(t, m);
    }
    p.row(t) /= sum;
  }
  return p;
}

std::vector<int> random_targets(int T, int M, Rng& rng) {
  std::vector<int> t(T);
  for (int i = 0; i < T; ++i) t[i] = static_cast<int>(rng.uniform_int(1, M));
  return t;
}

}  // namespace

TEST_CASE("config presets validate and hit the 100 Hz token rate") {
  auto desk = BtdConfig::desk();
  CHECK_NOTHROW(btd::validate(desk));
  CHECK(btd::output_rate_hz(desk) == doctest::Approx(100.0));
  CHECK(desk.vocab == 64);

  auto paper = BtdConfig::paper();
  CHECK_NOTHROW(btd::validate(paper));
  CHECK(btd::output_rate_hz(paper) == doctest::Approx(100.0));
  CHECK(paper.vocab == 1024);
  CHECK(paper.d_model == 256);

  auto bad = desk;
  bad.heads = 3;  // does not divide d_model
  CHECK_THROWS_AS(btd::validate(bad), std::invalid_argument);
  bad = desk;
  bad.meld_kernel = 4;
  CHECK_THROWS_AS(btd::validate(bad), std::invalid_argument);
  bad = desk;
  bad.vocab = 1;
  CHECK_THROWS_AS(btd::validate(bad), std::invalid_argument);
  bad = desk;
  bad.meld_stride = 1;
  CHECK_THROWS_AS(btd::validate(bad), std::invalid_argument);
}

TEST_CASE("check_rates accepts the matched pair and rejects mismatches") {
  CHECK_NOTHROW(btd::check_rates(tiny_btd(), tiny_codec()));
  CHECK_NOTHROW(btd::check_rates(BtdConfig::desk(), codec::CodecConfig::desk()));

  auto b = tiny_btd();
  b.mel_shift = 10;  // 400 Hz vs 500 Hz tokens
  CHECK_THROWS_AS(btd::check_rates(b, tiny_codec()), ConfigError);
  b = tiny_btd();
  b.vocab = 7;
  CHECK_THROWS_AS(btd::check_rates(b, tiny_codec()), ConfigError);
  auto c = tiny_codec();
  c.sample_rate_hz = 16000;
  CHECK_THROWS_AS(btd::check_rates(tiny_btd(), c), ConfigError);
}

TEST_CASE("PI-CE worked example") {
  Mat p1(1, 3), p2(1, 3);
  p1 << 0.7, 0.2, 0.1;
  p2 << 0.1, 0.2, 0.7;
  std::vector<int> t1 = {3}, t2 = {1};
  // Identity pairing costs -log 0.1 - log 0.1; the swap costs -2 log 0.7 and
  // wins.
  const double expected = -2.0 * std::log(0.7);
  CHECK(btd::pi_ce_loss(p1, p2, t1, t2) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(btd::pi_ce_loss(p1, p2, t1, t2) == doctest::Approx(0.7133).epsilon(1e-4));
  CHECK(btd::pi_ce_loss(p1, p2, t1, t2, PermutationScope::PerUtterance) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("PI-CE identities: uniform, perfect, symmetry, scope ordering") {
  Rng rng(404);
  const int M = 7;

  SUBCASE("uniform distributions cost 2 ln M for any targets") {
    const int T = 13;
    Mat u = Mat::Constant(T, M, 1.0 / M);
    auto t1 = random_targets(T, M, rng);
    auto t2 = random_targets(T, M, rng);
    CHECK(btd::pi_ce_loss(u, u, t1, t2) == doctest::Approx(2.0 * std::log(M)).epsilon(1e-12));
    CHECK(btd::pi_ce_loss(u, u, t1, t2, PermutationScope::PerUtterance) ==
          doctest::Approx(2.0 * std::log(M)).epsilon(1e-12));
  }

  SUBCASE("perfect one-hot prediction costs zero") {
    const int T = 9;
    auto t1 = random_targets(T, M, rng);
    auto t2 = random_targets(T, M, rng);
    Mat p1 = Mat::Zero(T, M), p2 = Mat::Zero(T, M);
    for (int t = 0; t < T; ++t) {
      p1(t, t1[t] - 1) = 1.0;
      p2(t, t2[t] - 1) = 1.0;
    }
    CHECK(btd::pi_ce_loss(p1, p2, t1, t2) == 0.0);
    CHECK(btd::pi_ce_loss(p1, p2, t1, t2, PermutationScope::PerUtterance) == 0.0);
  }

  SUBCASE("swapping the sources or the targets leaves the loss unchanged") {
    for (int trial = 0; trial < 50; ++trial) {
      const int T = 1 + static_cast<int>(rng.uniform_int(0, 11));
      Mat p1 = random_probs(T, M, rng);
      Mat p2 = random_probs(T, M, rng);
      auto t1 = random_targets(T, M, rng);
      auto t2 = random_targets(T, M, rng);
      for (auto scope : {PermutationScope::PerFrame, PermutationScope::PerUtterance}) {
        const double base = btd::pi_ce_loss(p1, p2, t1, t2, scope);
        CHECK(btd::pi_ce_loss(p2, p1, t1, t2, scope) == base);
        CHECK(btd::pi_ce_loss(p1, p2, t2, t1, scope) == base);
      }
    }
  }

  SUBCASE("per-frame assignment freedom never costs more than per-utterance") {
    for (int trial = 0; trial < 50; ++trial) {
      const int T = 2 + static_cast<int>(rng.uniform_int(0, 10));
      Mat p1 = random_probs(T, M, rng);
      Mat p2 = random_probs(T, M, rng);
      auto t1 = random_targets(T, M, rng);
      auto t2 = random_targets(T, M, rng);
      CHECK(btd::pi_ce_loss(p1, p2, t1, t2, PermutationScope::PerFrame) <=
            btd::pi_ce_loss(p1, p2, t1, t2, PermutationScope::PerUtterance) + 1e-12);
    }
  }

  SUBCASE("argument validation") {
    Mat p = random_probs(3, M, rng);
    auto t = random_targets(3, M, rng);
    CHECK_THROWS_AS(btd::pi_ce_loss(p, random_probs(4, M, rng), t, t), std::invalid_argument);
    CHECK_THROWS_AS(btd::pi_ce_loss(p, p, {1, 2}, t), std::invalid_argument);
    CHECK_THROWS_AS(btd::pi_ce_loss(p, p, {1, 2, M + 1}, t), std::invalid_argument);
    CHECK_THROWS_AS(btd::pi_ce_loss(p, p, {0, 1, 2}, t), std::invalid_argument);
  }
}

TEST_CASE("differentiable PI-CE agrees with the probability form") {
  Rng rng(77);
  const int M = 6;
  for (int trial = 0; trial < 200; ++trial) {
    const int T = 1 + static_cast<int>(rng.uniform_int(0, 9));
    Mat l1(T, M), l2(T, M);
    for (int t = 0; t < T; ++t) {
      for (int m = 0; m < M; ++m) {
        l1(t, m) = rng.normal(0.0, 2.0);
        l2(t, m) = rng.normal(0.0, 2.0);
      }
    }
    auto t1 = random_targets(T, M, rng);
    auto t2 = random_targets(T, M, rng);
    Mat p1 = nn::row_softmax(Tensor::constant(l1)).value();
    Mat p2 = nn::row_softmax(Tensor::constant(l2)).value();
    for (auto scope : {PermutationScope::PerFrame, PermutationScope::PerUtterance}) {
      const double want = btd::pi_ce_loss(p1, p2, t1, t2, scope);
      const double got =
          btd::pi_ce_loss_t(Tensor::constant(l1), Tensor::constant(l2), t1, t2, scope)
              .value()(0, 0);
      CHECK(std::abs(got - want) < 1e-9);
    }
  }
}

TEST_CASE("PI-CE gradient matches finite differences") {
  Rng rng(91);
  const int T = 5, M = 4;
  Mat l1v(T, M), l2v(T, M);
  for (int t = 0; t < T; ++t) {
    for (int m = 0; m < M; ++m) {
      l1v(t, m) = rng.normal(0.0, 1.0);
      l2v(t, m) = rng.normal(0.0, 1.0);
    }
  }
  auto t1 = random_targets(T, M, rng);
  auto t2 = random_targets(T, M, rng);

  for (auto scope : {PermutationScope::PerFrame, PermutationScope::PerUtterance}) {
    Tensor l1 = Tensor::parameter(l1v, "l1");
    Tensor l2 = Tensor::parameter(l2v, "l2");
    Tensor loss = btd::pi_ce_loss_t(l1, l2, t1, t2, scope);
    nn::backward(loss);
    const double h = 1e-6;
    for (Tensor* p : {&l1, &l2}) {
      for (int t = 0; t < T; ++t) {
        for (int m = 0; m < M; ++m) {
          const double keep = p->value()(t, m);
          p->value()(t, m) = keep + h;
          const double fp = btd::pi_ce_loss_t(l1, l2, t1, t2, scope).value()(0, 0);
          p->value()(t, m) = keep - h;
          const double fm = btd::pi_ce_loss_t(l1, l2, t1, t2, scope).value()(0, 0);
          p->value()(t, m) = keep;
          const double numeric = (fp - fm) / (2.0 * h);
          const double denom = std::max({1e-6, std::abs(numeric), std::abs(p->grad()(t, m))});
          CHECK(std::abs(p->grad()(t, m) - numeric) / denom < 1e-3);
        }
      }
    }
  }
}

TEST_CASE("forward produces row-stochastic outputs and valid tokens") {
  BtdModel m(tiny_btd(), 7);
  auto w = toy_wave(0, 3);
  auto mel = btd::btd_mel(w, m.config());
  auto [p1, p2] = btd::btd_forward(mel, m);

  const int expected_T = (mel.num_frames() - 1) / 2 + 1;
  CHECK(p1.rows() == expected_T);
  CHECK(p1.cols() == 5);
  CHECK(p2.rows() == expected_T);
  CHECK(p1.allFinite());
  CHECK(p2.allFinite());
  CHECK(p1.minCoeff() >= 0.0);
  CHECK(p2.minCoeff() >= 0.0);
  for (Eigen::Index t = 0; t < p1.rows(); ++t) {
    CHECK(p1.row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p2.row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }

  auto [d1, d2] = btd::disentangle(mel, m);
  CHECK(d1.size() == static_cast<std::size_t>(expected_T));
  CHECK(d2.size() == static_cast<std::size_t>(expected_T));
  for (int tok : d1) CHECK((tok >= 1 && tok <= 5));
  for (int tok : d2) CHECK((tok >= 1 && tok <= 5));

  // Deterministic across repeated evaluation and across same-seed models.
  auto [q1, q2] = btd::btd_forward(mel, m);
  CHECK(p1 == q1);
  CHECK(p2 == q2);
  BtdModel m2(tiny_btd(), 7);
  auto [r1, r2] = btd::btd_forward(mel, m2);
  CHECK(p1 == r1);
  CHECK(p2 == r2);
}

TEST_CASE("swap equivariance is exact") {
  BtdModel m(tiny_btd(), 19);
  auto mix = synth::make_mixture(toy_wave(0, 5), toy_wave(1, 6), 0, 1);
  auto mel = btd::btd_mel(mix.y, m.config());
  auto [p1, p2] = btd::btd_forward(mel, m);

  // Exchanging the two source bias vectors must exchange the outputs bitwise;
  // nothing else in the network may depend on branch identity.
  Mat d1 = m.params().get("acbg.d1").value();
  Mat d2 = m.params().get("acbg.d2").value();
  m.params().get("acbg.d1").value() = d2;
  m.params().get("acbg.d2").value() = d1;
  auto [s1, s2] = btd::btd_forward(mel, m);
  CHECK(s1 == p2);
  CHECK(s2 == p1);

  // Equal biases collapse the branches onto the same distribution.
  m.params().get("acbg.d1").value() = d1;
  m.params().get("acbg.d2").value() = d1;
  auto [e1, e2] = btd::btd_forward(mel, m);
  CHECK(e1 == e2);

  // The biases are distinct at init, so the branches differ.
  CHECK((p1 - p2).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("model rejects mel input that does not match its config") {
  BtdModel m(tiny_btd(), 3);
  auto w = toy_wave(0, 4);

  auto bad_bands = dsp::mel_spectrogram(w, 6, 8);
  CHECK_THROWS_AS(btd::btd_forward(bad_bands, m), std::invalid_argument);
  auto bad_shift = dsp::mel_spectrogram(w, 8, 16);
  CHECK_THROWS_AS(btd::btd_forward(bad_shift, m), std::invalid_argument);

  Waveform wrong_rate = w;
  wrong_rate.sample_rate_hz = 16000;
  CHECK_THROWS_AS(btd::btd_mel(wrong_rate, m.config()), std::invalid_argument);

  dsp::MelSpectrogram empty;
  empty.d_mel = 8;
  empty.frame_shift_samples = 8;
  empty.frames = Mat(0, 8);
  CHECK_THROWS_AS(btd::btd_forward(empty, m), std::invalid_argument);
}

TEST_CASE("base_tokens takes the first stage of every frame") {
  rvq::TokenStream ts = {{2, 5}, {1, 3}, {4, 4}};
  CHECK(btd::base_tokens(ts) == std::vector<int>{2, 1, 4});
  ts.push_back({});
  CHECK_THROWS_AS(btd::base_tokens(ts), std::invalid_argument);
}

TEST_CASE("training drives the PI-CE loss down on a toy batch") {
  codec::CodecModel codec_model(tiny_codec(), 41);
  BtdModel model(tiny_btd(), 43);
  std::vector<synth::MixturePair> batch;
  for (int i = 0; i < 3; ++i) {
    batch.push_back(synth::make_mixture(toy_wave(0, 100 + i), toy_wave(1, 200 + i), 0, 1));
  }

  nn::AdamW opt;
  opt.lr = 3e-3;
  const double first = btd::train_step_btd(batch, codec_model, model, opt);
  CHECK(std::isfinite(first));
  // Fresh init gives near-uniform head outputs.
  CHECK(first < 2.0 * std::log(5.0) + 0.5);
  double last = first;
  for (int step = 0; step < 14; ++step) {
    last = btd::train_step_btd(batch, codec_model, model, opt);
  }
  CHECK(std::isfinite(last));
  CHECK(last < first);

  // Same seeds, same data: the first step loss is reproducible bit for bit.
  codec::CodecModel codec_b(tiny_codec(), 41);
  BtdModel model_b(tiny_btd(), 43);
  nn::AdamW opt_b;
  opt_b.lr = 3e-3;
  CHECK(btd::train_step_btd(batch, codec_b, model_b, opt_b) == first);

  // Per-utterance scope runs through the same machinery.
  const double pu = btd::train_step_btd(batch, codec_model, model, opt,
                                        PermutationScope::PerUtterance);
  CHECK(std::isfinite(pu));
}

TEST_CASE("train_step rejects a codec whose token rate differs") {
  auto codec_cfg = tiny_codec();
  codec_cfg.mdct_frame_length = 64;  // 250 Hz tokens
  codec::CodecModel codec_model(codec_cfg, 41);
  BtdModel model(tiny_btd(), 43);
  std::vector<synth::MixturePair> batch = {
      synth::make_mixture(toy_wave(0, 1), toy_wave(1, 2), 0, 1)};
  nn::AdamW opt;
  CHECK_THROWS_AS(btd::train_step_btd(batch, codec_model, model, opt), ConfigError);
  CHECK_THROWS_AS(btd::train_step_btd({}, codec_model, model, opt), std::invalid_argument);
}
