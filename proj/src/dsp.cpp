#include "codesep/dsp.hpp"

#include <cmath>
#include <stdexcept>

#include "codesep/errors.hpp"

namespace codesep::dsp {

Vec mdct_window(int frame_length) {
  Vec w(frame_length);
  for (int k = 0; k < frame_length; ++k) {
    w[k] = std::sin(M_PI * (k + 0.5) / frame_length);
  }
  return w;
}

Mat mdct_synthesis_matrix(int frame_length) {
  const int F = frame_length / 2;
  const Vec w = mdct_window(frame_length);
  Mat s(frame_length, F);
  for (int k = 0; k < frame_length; ++k) {
    for (int f = 0; f < F; ++f) {
      s(k, f) = (2.0 / F) * w[k] *
                std::cos(M_PI / F * (k + 0.5 + F / 2.0) * (f + 0.5));
    }
  }
  return s;
}

static void check_frame_length(int frame_length) {
  if (frame_length < 4 || frame_length % 2 != 0) {
    throw std::invalid_argument("mdct: frame_length must be even and >= 4");
  }
}

int mdct_num_frames(std::size_t num_samples, int frame_length) {
  if (num_samples == 0) return 0;
  const int hop = frame_length / 2;
  return static_cast<int>((num_samples + hop - 1) / hop) + 1;
}

MDCTSpectrum mdct(const Waveform& w, int frame_length) {
  check_frame_length(frame_length);
  const int F = frame_length / 2;
  const int T = mdct_num_frames(w.size(), frame_length);

  MDCTSpectrum out;
  out.frame_length = frame_length;
  out.sample_rate_hz = w.sample_rate_hz;
  out.frames.resize(T, F);
  if (T == 0) return out;

  // Padded signal: F zeros, the input, then zeros up to (T-1)*hop + L.
  const std::size_t padded_len = static_cast<std::size_t>(T - 1) * F + frame_length;
  auto padded = [&](std::size_t i) -> double {
    if (i < static_cast<std::size_t>(F)) return 0.0;
    std::size_t j = i - F;
    return j < w.size() ? w.samples[j] : 0.0;
  };
  (void)padded_len;

  // Analysis: X[t][f] = sum_k pad[t*F + k] * w[k] * cos(pi/F (k+0.5+F/2)(f+0.5)).
  // Reuse the synthesis matrix: analysis column f = (F/2) * synth column f.
  const Mat basis = mdct_synthesis_matrix(frame_length) * (F / 2.0);
  Eigen::VectorXd frame(frame_length);
  for (int t = 0; t < T; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * F;
    for (int k = 0; k < frame_length; ++k) frame[k] = padded(start + k);
    out.frames.row(t) = (frame.transpose() * basis);
  }
  return out;
}

Waveform imdct(const MDCTSpectrum& s) {
  check_frame_length(s.frame_length);
  const int F = s.frame_length / 2;
  if (s.num_bins() != F) {
    throw std::invalid_argument("imdct: spectrum has " + std::to_string(s.num_bins()) +
                                " bins, expected frame_length/2 = " + std::to_string(F));
  }
  const int T = s.num_frames();
  Waveform out;
  out.sample_rate_hz = s.sample_rate_hz;
  if (T == 0) return out;

  const std::size_t padded_len = static_cast<std::size_t>(T - 1) * F + s.frame_length;
  std::vector<double> ola(padded_len, 0.0);
  const Mat synth = mdct_synthesis_matrix(s.frame_length);
  for (int t = 0; t < T; ++t) {
    Vec seg = synth * s.frames.row(t).transpose();
    const std::size_t start = static_cast<std::size_t>(t) * F;
    for (int k = 0; k < s.frame_length; ++k) ola[start + k] += seg[k];
  }
  // Strip the half-frame pads on both ends.
  out.samples.assign(ola.begin() + F, ola.end() - F);
  return out;
}

static double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
static double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Mat mel_filterbank(int sample_rate_hz, int n_fft, int d_mel) {
  if (d_mel < 1) throw std::invalid_argument("mel_filterbank: d_mel must be >= 1");
  const int n_bins = n_fft / 2 + 1;
  const double nyquist = sample_rate_hz / 2.0;
  std::vector<double> centers(d_mel + 2);
  const double mel_max = hz_to_mel(nyquist);
  for (int i = 0; i < d_mel + 2; ++i) {
    centers[i] = mel_to_hz(mel_max * i / (d_mel + 1));
  }
  Mat fb = Mat::Zero(n_bins, d_mel);
  for (int m = 0; m < d_mel; ++m) {
    const double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate_hz / n_fft;
      double wgt = 0.0;
      if (f > lo && f < hi) {
        wgt = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      }
      fb(b, m) = wgt;
    }
    if (fb.col(m).maxCoeff() <= 0.0) {
      // Narrow filter between bins: keep the bin nearest the center.
      int nearest = static_cast<int>(std::lround(mid * n_fft / sample_rate_hz));
      nearest = std::min(std::max(nearest, 0), n_bins - 1);
      fb(nearest, m) = 1.0;
    }
  }
  return fb;
}

MelAnalyzer::MelAnalyzer(int sample_rate_hz, int d_mel, int frame_shift)
    : sample_rate_hz_(sample_rate_hz), d_mel_(d_mel), frame_shift_(frame_shift) {
  if (d_mel < 1 || frame_shift < 1) {
    throw std::invalid_argument("MelAnalyzer: d_mel and frame_shift must be >= 1");
  }
  window_ = 4 * frame_shift;
  hann_.resize(window_);
  for (int k = 0; k < window_; ++k) {
    hann_[k] = 0.5 - 0.5 * std::cos(2.0 * M_PI * k / window_);
  }
  const int n_bins = window_ / 2 + 1;
  dft_real_.resize(window_, n_bins);
  dft_imag_.resize(window_, n_bins);
  for (int k = 0; k < window_; ++k) {
    for (int b = 0; b < n_bins; ++b) {
      const double phase = 2.0 * M_PI * k * b / window_;
      dft_real_(k, b) = std::cos(phase);
      dft_imag_(k, b) = -std::sin(phase);
    }
  }
  filterbank_ = mel_filterbank(sample_rate_hz, window_, d_mel);
}

int MelAnalyzer::num_frames(std::size_t num_samples) const {
  if (num_samples < static_cast<std::size_t>(window_)) return 0;
  return static_cast<int>(num_samples / frame_shift_);
}

MelSpectrogram MelAnalyzer::apply(const Waveform& w) const {
  const int T = num_frames(w.size());
  MelSpectrogram out;
  out.frame_shift_samples = frame_shift_;
  out.d_mel = d_mel_;
  out.frames.resize(T, d_mel_);
  if (T == 0) return out;

  Vec frame(window_);
  const int n_bins = window_ / 2 + 1;
  for (int t = 0; t < T; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * frame_shift_;
    for (int k = 0; k < window_; ++k) {
      const std::size_t i = start + k;
      frame[k] = (i < w.size() ? w.samples[i] : 0.0) * hann_[k];
    }
    Vec re = dft_real_.transpose() * frame;
    Vec im = dft_imag_.transpose() * frame;
    Vec mag(n_bins);
    for (int b = 0; b < n_bins; ++b) mag[b] = std::sqrt(re[b] * re[b] + im[b] * im[b]);
    Vec mel = filterbank_.transpose() * mag;
    for (int m = 0; m < d_mel_; ++m) out.frames(t, m) = std::log(mel[m] + kMelFloor);
  }
  return out;
}

MelSpectrogram mel_spectrogram(const Waveform& w, int d_mel, int frame_shift) {
  return MelAnalyzer(w.sample_rate_hz, d_mel, frame_shift).apply(w);
}

Waveform mix(const Waveform& x1, const Waveform& x2) {
  if (x1.size() != x2.size()) {
    throw std::invalid_argument("mix: length mismatch (" + std::to_string(x1.size()) +
                                " vs " + std::to_string(x2.size()) + ")");
  }
  if (x1.sample_rate_hz != x2.sample_rate_hz) {
    throw std::invalid_argument("mix: sample rate mismatch");
  }
  Waveform y;
  y.sample_rate_hz = x1.sample_rate_hz;
  y.samples.resize(x1.size());
  for (std::size_t i = 0; i < x1.size(); ++i) y.samples[i] = x1.samples[i] + x2.samples[i];
  return y;
}

}  // namespace codesep::dsp
