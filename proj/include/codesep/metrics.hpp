#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "codesep/dsp.hpp"

namespace codesep::metrics {

using dsp::Waveform;

// Scale-invariant SDR in dB: est is projected onto ref, the residual is the
// error. Capped at +60 dB when the error is numerically zero.
double si_sdr(const Waveform& est, const Waveform& ref);

// Max over the two source assignments of the mean pairwise si_sdr; ties go
// to the identity. The permutation maps estimate index -> reference index.
std::pair<double, std::array<int, 2>> pit_si_sdr(const std::array<Waveform, 2>& ests,
                                                 const std::array<Waveform, 2>& refs);

// Mean L1 distance between log-mel spectrograms (40 bands, 10 ms shift),
// truncated to the shorter signal.
double mel_distance(const Waveform& a, const Waveform& b);

struct UtteranceEval {
  std::string id;
  double pit_si_sdr_db = 0.0;
  double improvement_db = 0.0;  // over the unprocessed mixture as estimate
  double mel_distance = 0.0;    // mean over the two sources
  std::array<int, 2> permutation = {1, 2};
};

struct EvalReport {
  std::string mode;  // jsac | fcts | fstc
  double bitrate_total_bps = 0.0;
  double bitrate_per_stream_bps = 0.0;
  std::vector<UtteranceEval> utterances;
  double mean_pit_si_sdr_db = 0.0;
  double mean_improvement_db = 0.0;
  double mean_mel_distance = 0.0;
};

// Recomputes the aggregate fields as means of the per-utterance values.
void finalize(EvalReport& report);

std::string to_json(const EvalReport& report);

}  // namespace codesep::metrics
