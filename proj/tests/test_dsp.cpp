#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "codesep/dsp.hpp"
#include "codesep/rng.hpp"
#include "codesep/wav.hpp"

using codesep::Rng;
using namespace codesep::dsp;

namespace {

// Independent direct-summation oracle for the forward MDCT, written from the
// transform definition rather than via the library's basis matrices.
Mat mdct_oracle(const std::vector<double>& x, int L) {
  const int F = L / 2;
  int T = 0;
  if (!x.empty()) T = static_cast<int>((x.size() + F - 1) / F) + 1;
  Mat out = Mat::Zero(T, F);
  auto pad = [&](long long i) -> double {
    long long j = i - F;
    return (j >= 0 && j < static_cast<long long>(x.size())) ? x[j] : 0.0;
  };
  for (int t = 0; t < T; ++t) {
    for (int f = 0; f < F; ++f) {
      double acc = 0.0;
      for (int k = 0; k < L; ++k) {
        const double w = std::sin(M_PI * (k + 0.5) / L);
        acc += pad(static_cast<long long>(t) * F + k) * w *
               std::cos(M_PI / F * (k + 0.5 + F / 2.0) * (f + 0.5));
      }
      out(t, f) = acc;
    }
  }
  return out;
}

Waveform random_waveform(int n, int rate, Rng& rng) {
  Waveform w;
  w.sample_rate_hz = rate;
  w.samples.resize(n);
  for (int i = 0; i < n; ++i) w.samples[i] = rng.uniform(-1.0, 1.0);
  return w;
}

}  // namespace

TEST_CASE("mdct of all-zero waveform is all-zero") {
  Waveform w;
  w.sample_rate_hz = 8000;
  w.samples.assign(64, 0.0);
  auto s = mdct(w, 8);
  CHECK(s.num_frames() > 0);
  CHECK(s.frames.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mdct rejects odd frame length") {
  Waveform w;
  w.sample_rate_hz = 8000;
  w.samples.assign(16, 0.1);
  CHECK_THROWS_AS(mdct(w, 7), std::invalid_argument);
  CHECK_THROWS_AS(mdct(w, 2), std::invalid_argument);
}

TEST_CASE("mdct of empty waveform is empty, no error") {
  Waveform w;
  w.sample_rate_hz = 8000;
  auto s = mdct(w, 8);
  CHECK(s.num_frames() == 0);
  auto back = imdct(s);
  CHECK(back.samples.empty());
}

TEST_CASE("mdct matches the direct-summation oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 4; ++trial) {
    const int n = 50 + trial * 37;
    Waveform w = random_waveform(n, 8000, rng);
    auto s = mdct(w, 16);
    Mat expect = mdct_oracle(w.samples, 16);
    REQUIRE(s.frames.rows() == expect.rows());
    CHECK((s.frames - expect).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("unit impulse coefficients match the oracle") {
  Waveform w;
  w.sample_rate_hz = 8000;
  w.samples.assign(1, 1.0);
  auto s = mdct(w, 4);
  Mat expect = mdct_oracle(w.samples, 4);
  REQUIRE(s.frames.rows() == expect.rows());
  CHECK((s.frames - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("round trip reconstructs the interior within 1e-6") {
  Rng rng(11);
  const int rate = 8000;
  for (int frame_length : {8, 160}) {
    Waveform w = random_waveform(rate, rate, rng);  // 1 s
    auto back = imdct(mdct(w, frame_length));
    const int F = frame_length / 2;
    REQUIRE(back.samples.size() >= w.samples.size());
    double max_err = 0.0;
    for (std::size_t i = F; i + F < w.samples.size(); ++i) {
      max_err = std::max(max_err, std::abs(back.samples[i] - w.samples[i]));
    }
    CHECK(max_err < 1e-6);
  }
}

TEST_CASE("imdct of zero spectrum is zero") {
  MDCTSpectrum s;
  s.frame_length = 8;
  s.sample_rate_hz = 8000;
  s.frames = Mat::Zero(5, 4);
  auto w = imdct(s);
  CHECK(w.samples.size() == 4 * 4);
  for (double v : w.samples) CHECK(v == 0.0);
}

TEST_CASE("imdct rejects inconsistent bin count") {
  MDCTSpectrum s;
  s.frame_length = 8;
  s.sample_rate_hz = 8000;
  s.frames = Mat::Zero(5, 3);
  CHECK_THROWS_AS(imdct(s), std::invalid_argument);
}

TEST_CASE("single nonzero coefficient synthesizes the windowed cosine") {
  const int L = 4, F = 2;
  MDCTSpectrum s;
  s.frame_length = L;
  s.sample_rate_hz = 8000;
  s.frames = Mat::Zero(2, F);
  const int f0 = 1;
  s.frames(1, f0) = 1.0;
  auto w = imdct(s);
  REQUIRE(w.samples.size() == static_cast<std::size_t>(F));
  // Frame 1 starts at padded offset F; output sample k is padded sample F + k,
  // i.e. tap k of the frame-1 synthesis segment.
  for (int k = 0; k < F; ++k) {
    const double win = std::sin(M_PI * (k + 0.5) / L);
    const double expect = (2.0 / F) * win * std::cos(M_PI / F * (k + 0.5 + F / 2.0) * (f0 + 0.5));
    CHECK(w.samples[k] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("mdct is linear") {
  Rng rng(3);
  Waveform a = random_waveform(300, 8000, rng);
  Waveform b = random_waveform(300, 8000, rng);
  const double ca = 0.7, cb = -1.3;
  Waveform combo;
  combo.sample_rate_hz = 8000;
  combo.samples.resize(300);
  for (int i = 0; i < 300; ++i) combo.samples[i] = ca * a.samples[i] + cb * b.samples[i];
  Mat lhs = mdct(combo, 16).frames;
  Mat rhs = ca * mdct(a, 16).frames + cb * mdct(b, 16).frames;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("mel spectrogram of zero waveform is log of the floor") {
  Waveform w;
  w.sample_rate_hz = 8000;
  w.samples.assign(800, 0.0);
  auto m = mel_spectrogram(w, 12, 80);
  REQUIRE(m.num_frames() == 10);
  for (int t = 0; t < m.num_frames(); ++t) {
    for (int d = 0; d < 12; ++d) {
      CHECK(m.frames(t, d) == doctest::Approx(std::log(MelAnalyzer::kMelFloor)).epsilon(1e-12));
    }
  }
}

TEST_CASE("mel frame count convention") {
  MelAnalyzer mel(8000, 12, 80);
  CHECK(mel.window() == 320);
  CHECK(mel.num_frames(0) == 0);
  CHECK(mel.num_frames(319) == 0);   // shorter than one window
  CHECK(mel.num_frames(320) == 4);   // floor(len / shift)
  CHECK(mel.num_frames(400) == 5);
  CHECK(mel.num_frames(439) == 5);
}

TEST_CASE("mel filterbank weights are nonnegative with increasing peaks") {
  const int n_fft = 320, d_mel = 20, rate = 8000;
  Mat fb = mel_filterbank(rate, n_fft, d_mel);
  CHECK(fb.minCoeff() >= 0.0);
  double prev_peak = -1.0;
  for (int m = 0; m < d_mel; ++m) {
    REQUIRE(fb.col(m).maxCoeff() > 0.0);  // nonzero support
    int arg = 0;
    fb.col(m).maxCoeff(&arg);
    const double peak_hz = static_cast<double>(arg) * rate / n_fft;
    CHECK(peak_hz > prev_peak);
    prev_peak = peak_hz;
  }
}

TEST_CASE("pure tone at a filter center dominates that band") {
  const int rate = 8000, d_mel = 10, shift = 80;
  MelAnalyzer mel(rate, d_mel, shift);
  // Recompute the filter center frequencies the same way the bank defines
  // them: mel-spaced points between 0 and Nyquist.
  auto hz_to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double mel_max = hz_to_mel(rate / 2.0);
  const int band = 5;
  const double center_hz = mel_to_hz(mel_max * (band + 1) / (d_mel + 1));

  Waveform w;
  w.sample_rate_hz = rate;
  w.samples.resize(rate / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    w.samples[i] = 0.5 * std::sin(2.0 * M_PI * center_hz * i / rate);
  }
  auto m = mel.apply(w);
  REQUIRE(m.num_frames() > 0);
  for (int t = 0; t < m.num_frames(); ++t) {
    int arg = 0;
    m.frames.row(t).maxCoeff(&arg);
    CHECK(arg == band);
  }
}

TEST_CASE("mel output is finite and floored") {
  Rng rng(5);
  Waveform w = random_waveform(1600, 8000, rng);
  auto m = mel_spectrogram(w, 24, 40);
  for (int t = 0; t < m.num_frames(); ++t) {
    for (int d = 0; d < 24; ++d) {
      CHECK(std::isfinite(m.frames(t, d)));
      CHECK(m.frames(t, d) >= std::log(MelAnalyzer::kMelFloor) - 1e-12);
    }
  }
}

TEST_CASE("mix identities") {
  Rng rng(9);
  Waveform a = random_waveform(128, 8000, rng);
  Waveform zero;
  zero.sample_rate_hz = 8000;
  zero.samples.assign(128, 0.0);

  auto sum = mix(a, zero);
  for (int i = 0; i < 128; ++i) CHECK(sum.samples[i] == a.samples[i]);

  Waveform b = random_waveform(128, 8000, rng);
  auto ab = mix(a, b);
  auto ba = mix(b, a);
  for (int i = 0; i < 128; ++i) CHECK(ab.samples[i] == ba.samples[i]);

  Waveform neg = a;
  for (auto& v : neg.samples) v = -v;
  auto cancel = mix(a, neg);
  for (int i = 0; i < 128; ++i) CHECK(cancel.samples[i] == 0.0);
}

TEST_CASE("mix rejects mismatched inputs") {
  Waveform a, b;
  a.sample_rate_hz = 8000;
  b.sample_rate_hz = 8000;
  a.samples.assign(10, 0.0);
  b.samples.assign(11, 0.0);
  CHECK_THROWS_AS(mix(a, b), std::invalid_argument);
  b.samples.resize(10);
  b.sample_rate_hz = 16000;
  CHECK_THROWS_AS(mix(a, b), std::invalid_argument);
}

TEST_CASE("wav round trip preserves 16-bit samples and rate") {
  Rng rng(21);
  Waveform w = random_waveform(777, 16000, rng);
  // Snap to representable 16-bit levels so the round trip is exact.
  for (auto& v : w.samples) v = std::floor(v * 32768.0) / 32768.0;
  const std::string path = "test_dsp_roundtrip.wav";
  codesep::wav::write(path, w);
  auto r = codesep::wav::read(path);
  REQUIRE(r.samples.size() == w.samples.size());
  CHECK(r.sample_rate_hz == 16000);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    CHECK(r.samples[i] == w.samples[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("wav reader rejects malformed input") {
  const std::string path = "test_dsp_bad.wav";
  {
    FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("not a wav at all", f);
    std::fclose(f);
  }
  CHECK_THROWS(codesep::wav::read(path));
  std::remove(path.c_str());
}
