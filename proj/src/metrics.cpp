#include "codesep/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace codesep::metrics {

namespace {
constexpr double kCapDb = 60.0;
}

double si_sdr(const Waveform& est, const Waveform& ref) {
  if (est.samples.size() != ref.samples.size()) {
    throw std::invalid_argument("si_sdr: lengths differ");
  }
  if (est.sample_rate_hz != ref.sample_rate_hz) {
    throw std::invalid_argument("si_sdr: sample rates differ");
  }
  double dot = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < ref.samples.size(); ++i) {
    dot += est.samples[i] * ref.samples[i];
    rr += ref.samples[i] * ref.samples[i];
  }
  if (rr == 0.0) throw std::invalid_argument("si_sdr: reference is all zero");
  const double a = dot / rr;
  double target = 0.0, error = 0.0;
  for (std::size_t i = 0; i < ref.samples.size(); ++i) {
    const double s = a * ref.samples[i];
    const double e = est.samples[i] - s;
    target += s * s;
    error += e * e;
  }
  if (error == 0.0) return kCapDb;
  return std::min(kCapDb, 10.0 * std::log10(target / error));
}

std::pair<double, std::array<int, 2>> pit_si_sdr(const std::array<Waveform, 2>& ests,
                                                 const std::array<Waveform, 2>& refs) {
  const double identity =
      0.5 * (si_sdr(ests[0], refs[0]) + si_sdr(ests[1], refs[1]));
  const double swapped =
      0.5 * (si_sdr(ests[0], refs[1]) + si_sdr(ests[1], refs[0]));
  if (swapped > identity) return {swapped, {2, 1}};
  return {identity, {1, 2}};
}

double mel_distance(const Waveform& a, const Waveform& b) {
  if (a.sample_rate_hz != b.sample_rate_hz) {
    throw std::invalid_argument("mel_distance: sample rates differ");
  }
  const int shift = a.sample_rate_hz / 100;  // 10 ms
  auto ma = dsp::mel_spectrogram(a, 40, shift);
  auto mb = dsp::mel_spectrogram(b, 40, shift);
  const int T = std::min(ma.num_frames(), mb.num_frames());
  if (T == 0) return 0.0;
  return (ma.frames.topRows(T) - mb.frames.topRows(T)).cwiseAbs().mean();
}

void finalize(EvalReport& report) {
  double sdr = 0.0, imp = 0.0, mel = 0.0;
  for (const auto& u : report.utterances) {
    sdr += u.pit_si_sdr_db;
    imp += u.improvement_db;
    mel += u.mel_distance;
  }
  const double n = report.utterances.empty() ? 1.0 : report.utterances.size();
  report.mean_pit_si_sdr_db = sdr / n;
  report.mean_improvement_db = imp / n;
  report.mean_mel_distance = mel / n;
}

std::string to_json(const EvalReport& report) {
  nlohmann::json doc;
  doc["mode"] = report.mode;
  doc["bitrate_total_bps"] = report.bitrate_total_bps;
  doc["bitrate_per_stream_bps"] = report.bitrate_per_stream_bps;
  doc["utterances"] = nlohmann::json::array();
  for (const auto& u : report.utterances) {
    doc["utterances"].push_back({{"id", u.id},
                                 {"pit_si_sdr_db", u.pit_si_sdr_db},
                                 {"improvement_db", u.improvement_db},
                                 {"mel_distance", u.mel_distance},
                                 {"permutation", u.permutation}});
  }
  doc["aggregate"] = {{"mean_pit_si_sdr_db", report.mean_pit_si_sdr_db},
                      {"mean_improvement_db", report.mean_improvement_db},
                      {"mean_mel_distance", report.mean_mel_distance}};
  return doc.dump(2);
}

}  // namespace codesep::metrics
