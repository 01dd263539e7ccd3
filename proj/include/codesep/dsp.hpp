#pragma once

#include <Eigen/Core>
#include <vector>

namespace codesep::dsp {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Mono audio. Samples are dimensionless amplitudes, nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = 0;

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return sample_rate_hz > 0 ? static_cast<double>(samples.size()) / sample_rate_hz : 0.0;
  }
};

// MDCT coefficients, one row per frame. frame_length is even; the hop and the
// number of coefficients per frame both equal frame_length / 2 (50% overlap).
struct MDCTSpectrum {
  Mat frames;  // T x F, F = frame_length / 2
  int frame_length = 0;
  int sample_rate_hz = 0;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int num_bins() const { return static_cast<int>(frames.cols()); }
  int hop() const { return frame_length / 2; }
};

// Log-mel energies, one row per frame.
struct MelSpectrogram {
  Mat frames;  // T_mel x D_mel
  int frame_shift_samples = 0;
  int d_mel = 0;

  int num_frames() const { return static_cast<int>(frames.rows()); }
};

// Sine (Princen-Bradley) analysis/synthesis window of length frame_length.
Vec mdct_window(int frame_length);

// MDCT basis: synth(k, f) = (2/F) * w[k] * cos(pi/F * (k + 0.5 + F/2) * (f + 0.5)),
// an L x F matrix. The analysis transform is X[t] = synth^T * frame * (F/2),
// i.e. analysis uses w[k] * cos(...) without the 2/F factor.
Mat mdct_synthesis_matrix(int frame_length);

// Frame count for a signal of the given length: 0 when empty, otherwise
// ceil(len / hop) + 1 over a signal zero-padded by hop samples at the front
// and enough at the back for the final window.
int mdct_num_frames(std::size_t num_samples, int frame_length);

MDCTSpectrum mdct(const Waveform& w, int frame_length);

// Windowed overlap-add inverse. Returns (T - 1) * hop samples; the two
// half-frame pads introduced by mdct() are stripped. Interior samples satisfy
// time-domain aliasing cancellation against the forward transform.
Waveform imdct(const MDCTSpectrum& s);

// Triangular mel filterbank over a magnitude DFT of size n_fft, covering
// 0..Nyquist. Returns (n_fft/2 + 1) x d_mel weights; every filter has at
// least one positive weight and strictly increasing peak frequency.
Mat mel_filterbank(int sample_rate_hz, int n_fft, int d_mel);

// Precomputed mel analysis (Hann window of length 4 * frame_shift, magnitude
// DFT, triangular filterbank, natural log with floor kMelFloor).
class MelAnalyzer {
 public:
  static constexpr double kMelFloor = 1e-5;

  MelAnalyzer(int sample_rate_hz, int d_mel, int frame_shift);

  MelSpectrogram apply(const Waveform& w) const;

  // Frame count convention: floor(len / shift) when len >= window, else 0.
  int num_frames(std::size_t num_samples) const;

  int window() const { return window_; }
  int frame_shift() const { return frame_shift_; }
  int d_mel() const { return d_mel_; }
  int sample_rate_hz() const { return sample_rate_hz_; }
  const Vec& hann() const { return hann_; }
  const Mat& dft_real() const { return dft_real_; }  // window x (n_fft/2+1)
  const Mat& dft_imag() const { return dft_imag_; }
  const Mat& filterbank() const { return filterbank_; }  // (n_fft/2+1) x d_mel

 private:
  int sample_rate_hz_;
  int d_mel_;
  int frame_shift_;
  int window_;
  Vec hann_;
  Mat dft_real_;
  Mat dft_imag_;
  Mat filterbank_;
};

MelSpectrogram mel_spectrogram(const Waveform& w, int d_mel, int frame_shift);

// Elementwise sum of two equal-length, equal-rate waveforms.
Waveform mix(const Waveform& x1, const Waveform& x2);

}  // namespace codesep::dsp
