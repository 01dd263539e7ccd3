#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "codesep/metrics.hpp"
#include "codesep/synth.hpp"

using namespace codesep::metrics;
using codesep::dsp::Waveform;

namespace {

Waveform make_wave(std::vector<double> samples, int rate = 8000) {
  Waveform w;
  w.samples = std::move(samples);
  w.sample_rate_hz = rate;
  return w;
}

Waveform random_wave(std::mt19937& rng, int n, int rate = 8000) {
  std::normal_distribution<double> dist(0.0, 0.3);
  Waveform w;
  w.sample_rate_hz = rate;
  w.samples.resize(n);
  for (auto& s : w.samples) s = dist(rng);
  return w;
}

}  // namespace

TEST_CASE("si_sdr: perfect reconstruction hits the +60 dB cap") {
  std::mt19937 rng(11);
  const Waveform ref = random_wave(rng, 400);
  CHECK(si_sdr(ref, ref) == doctest::Approx(60.0));

  Waveform scaled = ref;
  for (auto& s : scaled.samples) s *= 2.0;
  CHECK(si_sdr(scaled, ref) == doctest::Approx(60.0));

  Waveform negated = ref;
  for (auto& s : negated.samples) s *= -0.5;
  CHECK(si_sdr(negated, ref) == doctest::Approx(60.0));
}

TEST_CASE("si_sdr: hand-computed value for a 2-sample case") {
  // ref = (1,0), est = (1,1): projection s = (1,0), error e = (0,1) -> 0 dB.
  const Waveform ref = make_wave({1.0, 0.0});
  const Waveform est = make_wave({1.0, 1.0});
  CHECK(si_sdr(est, ref) == doctest::Approx(0.0).epsilon(1e-12));

  // est = (2,1): s = (2,0), e = (0,1) -> 10 log10(4) dB.
  const Waveform est2 = make_wave({2.0, 1.0});
  CHECK(si_sdr(est2, ref) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-12));
}

TEST_CASE("si_sdr: invariant to rescaling the estimate") {
  std::mt19937 rng(12);
  const Waveform ref = random_wave(rng, 300);
  Waveform est = random_wave(rng, 300);
  const double base = si_sdr(est, ref);
  for (double g : {0.1, 3.0, -2.0}) {
    Waveform scaled = est;
    for (auto& s : scaled.samples) s *= g;
    CHECK(si_sdr(scaled, ref) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("si_sdr: argument validation") {
  const Waveform ref = make_wave({1.0, 0.0});
  CHECK_THROWS_AS(si_sdr(make_wave({1.0}), ref), std::invalid_argument);
  CHECK_THROWS_AS(si_sdr(make_wave({0.0, 0.0}), make_wave({0.0, 0.0})),
                  std::invalid_argument);
  CHECK_THROWS_AS(si_sdr(make_wave({1.0, 0.0}, 8000), make_wave({1.0, 0.0}, 16000)),
                  std::invalid_argument);
}

TEST_CASE("pit_si_sdr: picks the better assignment and reports it") {
  std::mt19937 rng(13);
  const Waveform a = random_wave(rng, 256);
  const Waveform b = random_wave(rng, 256);

  auto [identity_db, identity_perm] = pit_si_sdr({a, b}, {a, b});
  CHECK(identity_db == doctest::Approx(60.0));
  CHECK(identity_perm == std::array<int, 2>{1, 2});

  auto [swapped_db, swapped_perm] = pit_si_sdr({b, a}, {a, b});
  CHECK(swapped_db == doctest::Approx(60.0));
  CHECK(swapped_perm == std::array<int, 2>{2, 1});
}

TEST_CASE("pit_si_sdr: ties go to the identity permutation") {
  const Waveform a = make_wave({1.0, 0.0, 0.0, 0.0});
  // Both assignments score identically when the two estimates coincide.
  auto [db, perm] = pit_si_sdr({a, a}, {a, a});
  CHECK(db == doctest::Approx(60.0));
  CHECK(perm == std::array<int, 2>{1, 2});
}

TEST_CASE("pit_si_sdr: equals the brute-force two-permutation oracle") {
  std::mt19937 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const Waveform r1 = random_wave(rng, 200);
    const Waveform r2 = random_wave(rng, 200);
    const Waveform e1 = random_wave(rng, 200);
    const Waveform e2 = random_wave(rng, 200);

    const double keep = 0.5 * (si_sdr(e1, r1) + si_sdr(e2, r2));
    const double swap = 0.5 * (si_sdr(e1, r2) + si_sdr(e2, r1));
    auto [db, perm] = pit_si_sdr({e1, e2}, {r1, r2});
    CHECK(db == doctest::Approx(std::max(keep, swap)).epsilon(1e-12));
    if (keep >= swap) {
      CHECK(perm == std::array<int, 2>{1, 2});
    } else {
      CHECK(perm == std::array<int, 2>{2, 1});
    }
  }
}

TEST_CASE("mel_distance: zero on identical signals, symmetric, triangle-ish") {
  std::mt19937 rng(15);
  const Waveform a = random_wave(rng, 1600);
  const Waveform b = random_wave(rng, 1600);
  const Waveform c = random_wave(rng, 1600);

  CHECK(mel_distance(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mel_distance(a, b) == doctest::Approx(mel_distance(b, a)).epsilon(1e-12));
  CHECK(mel_distance(a, b) > 0.0);

  // L1 between log-mels satisfies the triangle inequality frame by frame.
  for (int trial = 0; trial < 5; ++trial) {
    const Waveform x = random_wave(rng, 1200);
    const Waveform y = random_wave(rng, 1200);
    const Waveform z = random_wave(rng, 1200);
    CHECK(mel_distance(x, z) <= mel_distance(x, y) + mel_distance(y, z) + 1e-9);
  }
}

TEST_CASE("mel_distance: truncates to the shorter signal") {
  std::mt19937 rng(16);
  const Waveform a = random_wave(rng, 1600);
  Waveform longer = a;
  std::normal_distribution<double> dist(0.0, 0.3);
  for (int i = 0; i < 800; ++i) longer.samples.push_back(dist(rng));

  // Oracle: mean L1 over the first min(Ta, Tb) log-mel frames.
  const int shift = a.sample_rate_hz / 100;
  const auto ma = codesep::dsp::mel_spectrogram(a, 40, shift);
  const auto mb = codesep::dsp::mel_spectrogram(longer, 40, shift);
  const auto rows = std::min(ma.frames.rows(), mb.frames.rows());
  const double expect =
      (ma.frames.topRows(rows) - mb.frames.topRows(rows)).cwiseAbs().mean();
  CHECK(mel_distance(a, longer) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(mel_distance(longer, a) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("mel_distance: more distortion means more distance") {
  using namespace codesep::synth;
  const ToySpeakerSpec spec = default_speaker(0, 4, 8000);
  const Waveform clean = synth_utterance(spec, 77, 0.5);

  std::mt19937 rng(17);
  std::normal_distribution<double> dist(0.0, 1.0);
  Waveform mild = clean;
  Waveform heavy = clean;
  for (std::size_t i = 0; i < clean.samples.size(); ++i) {
    const double n = dist(rng);
    mild.samples[i] += 0.01 * n;
    heavy.samples[i] += 0.2 * n;
  }
  CHECK(mel_distance(mild, clean) < mel_distance(heavy, clean));
}

TEST_CASE("EvalReport: finalize averages the per-utterance rows") {
  EvalReport report;
  report.mode = "jsac";
  report.bitrate_total_bps = 1200.0;
  report.bitrate_per_stream_bps = 600.0;
  for (int i = 0; i < 3; ++i) {
    UtteranceEval u;
    u.id = "utt" + std::to_string(i);
    u.pit_si_sdr_db = 3.0 + i;
    u.improvement_db = 2.0 + i;
    u.mel_distance = 0.5 * (i + 1);
    report.utterances.push_back(u);
  }
  finalize(report);
  CHECK(report.mean_pit_si_sdr_db == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(report.mean_improvement_db == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(report.mean_mel_distance == doctest::Approx(1.0).epsilon(1e-12));

  EvalReport empty;
  finalize(empty);  // must not divide by zero
  CHECK(empty.mean_pit_si_sdr_db == 0.0);
}

TEST_CASE("EvalReport: JSON carries the mode, rates, and aggregates") {
  EvalReport report;
  report.mode = "fcts";
  report.bitrate_total_bps = 4800.0;
  report.bitrate_per_stream_bps = 2400.0;
  UtteranceEval u;
  u.id = "m0";
  u.pit_si_sdr_db = 5.25;
  u.improvement_db = 5.25;
  u.mel_distance = 0.75;
  u.permutation = {2, 1};
  report.utterances.push_back(u);
  finalize(report);

  const std::string j = to_json(report);
  CHECK(j.find("\"fcts\"") != std::string::npos);
  CHECK(j.find("\"m0\"") != std::string::npos);
  CHECK(j.find("4800") != std::string::npos);
  CHECK(j.find("aggregate") != std::string::npos);
  CHECK(j.find("pit_si_sdr_db") != std::string::npos);
}
