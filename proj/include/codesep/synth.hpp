#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "codesep/dsp.hpp"

namespace codesep::synth {

using dsp::Waveform;

// Parametric harmonic "speaker": a pitch-band, a per-harmonic amplitude
// profile, a formant-like envelope, and an amplitude-modulation rate.
struct ToySpeakerSpec {
  int sample_rate_hz = 8000;
  double f0_min_hz = 100.0;
  double f0_max_hz = 140.0;
  std::vector<double> harmonic_amplitudes = {1.0, 0.6, 0.4, 0.25, 0.15};
  std::vector<double> formant_hz = {700.0, 1800.0};
  double formant_bandwidth_hz = 250.0;
  double am_rate_hz = 4.0;
};

void validate(const ToySpeakerSpec& spec);

// Deterministic family of mutually distinct speakers: disjoint f0 bands and
// varied envelopes, derived from the speaker index alone.
ToySpeakerSpec default_speaker(int index, int num_speakers, int sample_rate_hz);

// Harmonic utterance with a random f0 contour, pauses, and amplitude
// modulation; peak-normalized to 0.5. Deterministic in (spec, seed).
Waveform synth_utterance(const ToySpeakerSpec& spec, std::uint64_t seed, double duration_s);

struct MixturePair {
  Waveform y;   // x1 + x2 elementwise
  Waveform x1;
  Waveform x2;
  int speaker1 = -1;
  int speaker2 = -1;
};

MixturePair make_mixture(const Waveform& x1, const Waveform& x2, int speaker1, int speaker2);

struct UtteranceRecord {
  std::string path;
  int speaker_id = -1;
  std::string split;  // train | dev | test
};

struct MixtureRecord {
  std::string mix_path;
  std::string s1_path;
  std::string s2_path;
  int speaker1 = -1;
  int speaker2 = -1;
  std::string split;
};

struct DataManifests {
  std::vector<UtteranceRecord> singles;
  std::vector<MixtureRecord> mixtures;
};

// Writes WAVs under root/singles/<split>/ and root/mixtures/<split>/{mix,s1,s2}/
// plus singles.tsv / mixtures.tsv manifests at root. Utterances are split
// 80/10/10 per speaker; every mixture pairs two distinct speakers drawn from
// the same split.
DataManifests build_datasets(const std::string& root, int num_speakers,
                             int utterances_per_speaker, double duration_s,
                             std::uint64_t seed, int sample_rate_hz = 8000);

void write_manifests(const std::string& root, const DataManifests& m);
DataManifests read_manifests(const std::string& root);

struct CorpusLoadResult {
  std::vector<MixtureRecord> mixtures;  // passed the additivity check
  std::vector<std::string> rejected;    // file name + reason
};

// Loads a directory with mix/, s1/, s2/ subdirectories holding matching
// filenames. Mixtures violating |y - x1 - x2| <= 1e-3 are excluded and
// reported. A file present in mix/ but missing a counterpart raises DataError.
CorpusLoadResult load_wav_corpus(const std::string& root);

}  // namespace codesep::synth
