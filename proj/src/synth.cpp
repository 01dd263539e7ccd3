#include "codesep/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "codesep/errors.hpp"
#include "codesep/rng.hpp"
#include "codesep/wav.hpp"

namespace fs = std::filesystem;

namespace codesep::synth {

void validate(const ToySpeakerSpec& spec) {
  if (spec.sample_rate_hz <= 0) throw std::invalid_argument("synth: bad sample rate");
  const double limit = spec.sample_rate_hz / 2.0 / 8.0;  // Nyquist / 8
  if (!(spec.f0_min_hz > 0.0 && spec.f0_max_hz < limit && spec.f0_min_hz <= spec.f0_max_hz)) {
    throw std::invalid_argument("synth: f0 range must lie inside (0, Nyquist/8)");
  }
  if (spec.harmonic_amplitudes.empty()) {
    throw std::invalid_argument("synth: harmonic profile is empty");
  }
  double peak = 0.0;
  for (double a : spec.harmonic_amplitudes) {
    if (a < 0.0) throw std::invalid_argument("synth: harmonic amplitudes must be nonnegative");
    peak = std::max(peak, a);
  }
  if (peak == 0.0) throw std::invalid_argument("synth: all harmonic amplitudes are zero");
  if (spec.formant_bandwidth_hz <= 0.0) {
    throw std::invalid_argument("synth: formant bandwidth must be positive");
  }
  if (spec.am_rate_hz < 0.0) throw std::invalid_argument("synth: negative AM rate");
}

ToySpeakerSpec default_speaker(int index, int num_speakers, int sample_rate_hz) {
  if (num_speakers < 2) throw std::invalid_argument("synth: need at least 2 speakers");
  if (index < 0 || index >= num_speakers) throw std::invalid_argument("synth: speaker index");
  ToySpeakerSpec s;
  s.sample_rate_hz = sample_rate_hz;
  // Disjoint pitch bands spread over [90, 360] Hz with guard gaps.
  const double lo = 90.0, hi = std::min(360.0, sample_rate_hz / 16.0 - 20.0);
  const double band = (hi - lo) / num_speakers;
  s.f0_min_hz = lo + band * index + 0.1 * band;
  s.f0_max_hz = lo + band * (index + 1) - 0.1 * band;
  // Varied harmonic decay and envelope per speaker.
  const double p = 0.6 + 0.25 * (index % 4);
  s.harmonic_amplitudes.clear();
  for (int h = 1; h <= 10; ++h) s.harmonic_amplitudes.push_back(std::pow(h, -p));
  const double f1 = 500.0 + 120.0 * (index % 5);
  const double f2 = 1400.0 + 180.0 * (index % 3);
  s.formant_hz = {f1, std::min(f2, sample_rate_hz / 2.0 - 400.0)};
  s.formant_bandwidth_hz = 220.0 + 30.0 * (index % 3);
  s.am_rate_hz = 2.5 + 0.7 * (index % 4);
  return s;
}

namespace {

double envelope_gain(const ToySpeakerSpec& spec, double hz) {
  double g = 0.1;
  for (double fc : spec.formant_hz) {
    const double d = (hz - fc) / spec.formant_bandwidth_hz;
    g += std::exp(-0.5 * d * d);
  }
  return g;
}

}  // namespace

Waveform synth_utterance(const ToySpeakerSpec& spec, std::uint64_t seed, double duration_s) {
  validate(spec);
  if (!(duration_s > 0.0)) throw std::invalid_argument("synth: duration must be positive");
  Rng rng(seed);
  const int rate = spec.sample_rate_hz;
  const int n = std::max(1, static_cast<int>(std::llround(duration_s * rate)));

  // Piecewise-linear f0 contour with a control point every 250 ms.
  const int ctrl_hop = std::max(1, rate / 4);
  const int n_ctrl = n / ctrl_hop + 2;
  std::vector<double> ctrl(n_ctrl);
  for (int i = 0; i < n_ctrl; ++i) ctrl[i] = rng.uniform(spec.f0_min_hz, spec.f0_max_hz);

  // Voiced/pause gate: alternating segments, first one voiced.
  std::vector<double> gate(n, 0.0);
  {
    const int ramp = std::max(1, rate / 100);  // 10 ms edges
    int pos = 0;
    bool voiced = true;
    while (pos < n) {
      const double len_s = voiced ? rng.uniform(0.25, 0.6) : rng.uniform(0.04, 0.12);
      int len = std::max(ramp * 2, static_cast<int>(len_s * rate));
      len = std::min(len, n - pos);
      if (voiced) {
        for (int i = 0; i < len; ++i) {
          double g = 1.0;
          if (i < ramp) g = 0.5 - 0.5 * std::cos(M_PI * i / ramp);
          if (len - 1 - i < ramp) g = std::min(g, 0.5 - 0.5 * std::cos(M_PI * (len - 1 - i) / ramp));
          gate[pos + i] = g;
        }
      }
      pos += len;
      voiced = !voiced;
    }
  }

  const double am_phase = rng.uniform(0.0, 2.0 * M_PI);
  const int n_harm = static_cast<int>(spec.harmonic_amplitudes.size());
  std::vector<double> harm_phase(n_harm);
  for (int h = 0; h < n_harm; ++h) harm_phase[h] = rng.uniform(0.0, 2.0 * M_PI);

  Waveform w;
  w.sample_rate_hz = rate;
  w.samples.assign(n, 0.0);
  double phase = 0.0;
  const double f_cap = 0.45 * rate;  // keep harmonics clear of Nyquist
  for (int i = 0; i < n; ++i) {
    const int c = i / ctrl_hop;
    const double frac = static_cast<double>(i - c * ctrl_hop) / ctrl_hop;
    const double f0 = ctrl[c] * (1.0 - frac) + ctrl[c + 1] * frac;
    phase += 2.0 * M_PI * f0 / rate;
    double v = 0.0;
    for (int h = 0; h < n_harm; ++h) {
      const double hz = f0 * (h + 1);
      if (hz >= f_cap) break;
      v += spec.harmonic_amplitudes[h] * envelope_gain(spec, hz) *
           std::sin(phase * (h + 1) + harm_phase[h]);
    }
    const double am = 1.0 + 0.4 * std::sin(2.0 * M_PI * spec.am_rate_hz * i / rate + am_phase);
    w.samples[i] = v * am * gate[i];
  }

  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    const double s = 0.5 / peak;
    for (double& v : w.samples) v *= s;
  }
  return w;
}

MixturePair make_mixture(const Waveform& x1, const Waveform& x2, int speaker1, int speaker2) {
  if (speaker1 == speaker2) throw std::invalid_argument("synth: mixture needs distinct speakers");
  MixturePair p;
  p.x1 = x1;
  p.x2 = x2;
  p.speaker1 = speaker1;
  p.speaker2 = speaker2;
  p.y = dsp::mix(x1, x2);
  return p;
}

namespace {

std::string split_of(int utt_index, int per_speaker) {
  // 80/10/10 by utterance within each speaker, train first.
  const int train_n = std::max(1, (per_speaker * 8) / 10);
  const int dev_n = std::max(per_speaker >= 10 ? 1 : 0, per_speaker / 10);
  if (utt_index < train_n) return "train";
  if (utt_index < train_n + dev_n) return "dev";
  return "test";
}

}  // namespace

DataManifests build_datasets(const std::string& root, int num_speakers,
                             int utterances_per_speaker, double duration_s,
                             std::uint64_t seed, int sample_rate_hz) {
  if (num_speakers < 2) throw std::invalid_argument("synth: need at least 2 speakers");
  if (utterances_per_speaker < 1) {
    throw std::invalid_argument("synth: need at least 1 utterance per speaker");
  }

  DataManifests out;
  Rng rng(seed);

  // Per-utterance seeds drawn once, in a fixed order, so generation is
  // reproducible regardless of how files are written.
  struct Item {
    int speaker;
    int utt;
    std::uint64_t seed;
    std::string split;
    Waveform wave;
  };
  std::vector<Item> items;
  for (int s = 0; s < num_speakers; ++s) {
    for (int u = 0; u < utterances_per_speaker; ++u) {
      Item it;
      it.speaker = s;
      it.utt = u;
      it.seed = static_cast<std::uint64_t>(rng.uniform_int(0, (1LL << 62)));
      it.split = split_of(u, utterances_per_speaker);
      items.push_back(std::move(it));
    }
  }
  for (auto& it : items) {
    auto spec = default_speaker(it.speaker, num_speakers, sample_rate_hz);
    it.wave = synth_utterance(spec, it.seed, duration_s);
  }

  for (const char* split : {"train", "dev", "test"}) {
    fs::create_directories(fs::path(root) / "singles" / split);
    for (const char* sub : {"mix", "s1", "s2"}) {
      fs::create_directories(fs::path(root) / "mixtures" / split / sub);
    }
  }

  for (const auto& it : items) {
    char name[64];
    std::snprintf(name, sizeof(name), "spk%02d_utt%03d.wav", it.speaker, it.utt);
    const fs::path p = fs::path(root) / "singles" / it.split / name;
    wav::write(p.string(), it.wave);
    out.singles.push_back({p.string(), it.speaker, it.split});
  }

  // Mixtures: within each split, one mixture per utterance, partnered with a
  // random utterance of a different speaker.
  for (const char* split : {"train", "dev", "test"}) {
    std::vector<int> pool;
    for (int i = 0; i < static_cast<int>(items.size()); ++i) {
      if (items[i].split == split) pool.push_back(i);
    }
    if (pool.size() < 2) continue;
    int made = 0;
    for (int a_idx : pool) {
      const Item& a = items[a_idx];
      int b_idx = a_idx;
      for (int tries = 0; tries < 1000; ++tries) {
        const int cand = pool[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        if (items[cand].speaker != a.speaker) {
          b_idx = cand;
          break;
        }
      }
      if (b_idx == a_idx) continue;  // single-speaker split, cannot pair
      const Item& b = items[b_idx];
      auto pair = make_mixture(a.wave, b.wave, a.speaker, b.speaker);
      char name[32];
      std::snprintf(name, sizeof(name), "%s_%04d.wav", split, made);
      const fs::path base = fs::path(root) / "mixtures" / split;
      const fs::path pm = base / "mix" / name;
      const fs::path p1 = base / "s1" / name;
      const fs::path p2 = base / "s2" / name;
      wav::write(pm.string(), pair.y);
      wav::write(p1.string(), pair.x1);
      wav::write(p2.string(), pair.x2);
      out.mixtures.push_back(
          {pm.string(), p1.string(), p2.string(), a.speaker, b.speaker, split});
      ++made;
    }
  }

  write_manifests(root, out);
  return out;
}

void write_manifests(const std::string& root, const DataManifests& m) {
  {
    std::ofstream f(fs::path(root) / "singles.tsv");
    if (!f) throw DataError("synth: cannot write singles manifest under " + root);
    for (const auto& r : m.singles) {
      f << r.path << '\t' << r.speaker_id << '\t' << r.split << '\n';
    }
  }
  {
    std::ofstream f(fs::path(root) / "mixtures.tsv");
    if (!f) throw DataError("synth: cannot write mixtures manifest under " + root);
    for (const auto& r : m.mixtures) {
      f << r.mix_path << '\t' << r.s1_path << '\t' << r.s2_path << '\t' << r.speaker1 << '\t'
        << r.speaker2 << '\t' << r.split << '\n';
    }
  }
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, '\t')) out.push_back(cur);
  return out;
}

}  // namespace

DataManifests read_manifests(const std::string& root) {
  DataManifests m;
  {
    std::ifstream f(fs::path(root) / "singles.tsv");
    if (!f) throw DataError("synth: missing singles.tsv under " + root);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto fields = split_fields(line);
      if (fields.size() != 3) throw DataError("synth: malformed singles manifest line: " + line);
      m.singles.push_back({fields[0], std::stoi(fields[1]), fields[2]});
    }
  }
  {
    std::ifstream f(fs::path(root) / "mixtures.tsv");
    if (!f) throw DataError("synth: missing mixtures.tsv under " + root);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto fields = split_fields(line);
      if (fields.size() != 6) throw DataError("synth: malformed mixtures manifest line: " + line);
      m.mixtures.push_back({fields[0], fields[1], fields[2], std::stoi(fields[3]),
                            std::stoi(fields[4]), fields[5]});
    }
  }
  return m;
}

CorpusLoadResult load_wav_corpus(const std::string& root) {
  const fs::path mix_dir = fs::path(root) / "mix";
  const fs::path s1_dir = fs::path(root) / "s1";
  const fs::path s2_dir = fs::path(root) / "s2";
  for (const auto& d : {mix_dir, s1_dir, s2_dir}) {
    if (!fs::is_directory(d)) throw DataError("corpus: missing directory " + d.string());
  }

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(mix_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") {
      names.push_back(e.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());

  CorpusLoadResult out;
  for (const auto& name : names) {
    const fs::path pm = mix_dir / name, p1 = s1_dir / name, p2 = s2_dir / name;
    if (!fs::exists(p1)) throw DataError("corpus: missing counterpart " + p1.string());
    if (!fs::exists(p2)) throw DataError("corpus: missing counterpart " + p2.string());
    auto y = wav::read(pm.string());
    auto x1 = wav::read(p1.string());
    auto x2 = wav::read(p2.string());
    if (x1.samples.size() != y.samples.size() || x2.samples.size() != y.samples.size() ||
        x1.sample_rate_hz != y.sample_rate_hz || x2.sample_rate_hz != y.sample_rate_hz) {
      out.rejected.push_back(name + ": length or rate mismatch");
      continue;
    }
    double max_err = 0.0;
    for (std::size_t i = 0; i < y.samples.size(); ++i) {
      max_err = std::max(max_err, std::abs(y.samples[i] - x1.samples[i] - x2.samples[i]));
    }
    if (max_err > 1e-3) {
      out.rejected.push_back(name + ": additivity violated (max err " + std::to_string(max_err) +
                             ")");
      continue;
    }
    out.mixtures.push_back({pm.string(), p1.string(), p2.string(), -1, -1, ""});
  }
  return out;
}

}  // namespace codesep::synth
