#include "codesep/rvq.hpp"

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include "codesep/rng.hpp"

namespace codesep::rvq {

void validate(const ResidualQuantizer& q) {
  if (q.codebooks.size() < 2) {
    throw std::invalid_argument("rvq: need at least 2 stages");
  }
  const int M = q.codebooks.front().size();
  const int K = q.codebooks.front().dim();
  if (M < 2 || K < 1) throw std::invalid_argument("rvq: codebook must be at least 2 x 1");
  for (const auto& cb : q.codebooks) {
    if (cb.size() != M || cb.dim() != K) {
      throw std::invalid_argument("rvq: all stages must share M and K");
    }
  }
}

Vec lookup(int token, const Codebook& codebook) {
  if (token < 1 || token > codebook.size()) {
    throw std::invalid_argument("rvq: token " + std::to_string(token) + " out of range 1.." +
                                std::to_string(codebook.size()));
  }
  return codebook.vectors.row(token - 1);
}

static int nearest_row(const Vec& z, const Mat& rows) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int m = 0; m < rows.rows(); ++m) {
    const double d = (z.transpose() - rows.row(m)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = m;
    }
  }
  return best;
}

QuantizationResult quantize(const Vec& z, const ResidualQuantizer& q) {
  validate(q);
  if (z.size() != q.dim()) {
    throw std::invalid_argument("rvq: input dimension " + std::to_string(z.size()) +
                                " does not match codevector dimension " + std::to_string(q.dim()));
  }
  QuantizationResult out;
  out.residuals.reserve(q.num_stages() + 1);
  out.residuals.push_back(z);
  out.quantized = Vec::Zero(q.dim());
  Vec r = z;
  for (const auto& cb : q.codebooks) {
    const int m = nearest_row(r, cb.vectors);
    out.tokens.push_back(m + 1);
    const Vec w = cb.vectors.row(m);
    out.quantized += w;
    r -= w;
    out.residuals.push_back(r);
  }
  return out;
}

Vec dequantize(const TokenFrame& tokens, const ResidualQuantizer& q, int up_to) {
  validate(q);
  if (up_to == -1) up_to = q.num_stages();
  if (up_to < 1 || up_to > q.num_stages()) {
    throw std::invalid_argument("rvq: up_to must be in 1..N");
  }
  if (static_cast<int>(tokens.size()) < up_to) {
    throw std::invalid_argument("rvq: token frame shorter than up_to");
  }
  Vec out = Vec::Zero(q.dim());
  for (int n = 0; n < up_to; ++n) out += lookup(tokens[n], q.codebooks[n]);
  return out;
}

double quantization_loss(const Vec& z, const QuantizationResult& result, double beta) {
  if (result.residuals.size() != result.tokens.size() + 1 || result.tokens.empty()) {
    throw std::invalid_argument("rvq: malformed quantization result");
  }
  if (result.residuals.front().size() != z.size() || (result.residuals.front() - z).norm() != 0.0) {
    throw std::invalid_argument("rvq: result does not belong to the given input");
  }
  double loss = 0.0;
  for (std::size_t n = 1; n < result.residuals.size(); ++n) {
    loss += (1.0 + beta) * result.residuals[n].squaredNorm();
  }
  return loss;
}

ResidualQuantizer init_codebooks(const std::vector<Vec>& samples, int num_stages,
                                 int codebook_size, std::uint64_t seed, int max_iterations) {
  if (num_stages < 2) throw std::invalid_argument("rvq: need at least 2 stages");
  if (codebook_size < 2) throw std::invalid_argument("rvq: codebook size must be >= 2");
  if (static_cast<int>(samples.size()) < codebook_size) {
    throw std::invalid_argument("rvq: need at least M samples to initialize, got " +
                                std::to_string(samples.size()));
  }
  const int K = static_cast<int>(samples.front().size());
  Rng rng(seed);

  std::vector<Vec> residuals = samples;
  ResidualQuantizer q;
  for (int stage = 0; stage < num_stages; ++stage) {
    // k-means++ seeding on the current residuals.
    Mat centers(codebook_size, K);
    const int n = static_cast<int>(residuals.size());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    int first = static_cast<int>(rng.uniform_int(0, n - 1));
    centers.row(0) = residuals[first].transpose();
    for (int c = 1; c < codebook_size; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        const double d = (residuals[i].transpose() - centers.row(c - 1)).squaredNorm();
        if (d < d2[i]) d2[i] = d;
        total += d2[i];
      }
      int pick = 0;
      if (total > 0.0) {
        double target = rng.uniform() * total;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc >= target) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<int>(rng.uniform_int(0, n - 1));
      }
      centers.row(c) = residuals[pick].transpose();
    }

    // Lloyd iterations with deterministic empty-cluster reseeding.
    std::vector<int> assign(n, 0);
    for (int iter = 0; iter < max_iterations; ++iter) {
      bool changed = false;
      for (int i = 0; i < n; ++i) {
        const int a = nearest_row(residuals[i], centers);
        if (a != assign[i]) changed = true;
        assign[i] = a;
      }
      Mat sums = Mat::Zero(codebook_size, K);
      std::vector<int> counts(codebook_size, 0);
      for (int i = 0; i < n; ++i) {
        sums.row(assign[i]) += residuals[i].transpose();
        ++counts[assign[i]];
      }
      for (int c = 0; c < codebook_size; ++c) {
        if (counts[c] > 0) {
          centers.row(c) = sums.row(c) / counts[c];
        } else {
          // Reseed an empty cluster at the point farthest from its center.
          int far = 0;
          double far_d = -1.0;
          for (int i = 0; i < n; ++i) {
            const double d = (residuals[i].transpose() - centers.row(assign[i])).squaredNorm();
            if (d > far_d) {
              far_d = d;
              far = i;
            }
          }
          centers.row(c) = residuals[far].transpose();
          changed = true;
        }
      }
      if (!changed && iter > 0) break;
    }

    Codebook cb;
    cb.vectors = centers;
    q.codebooks.push_back(std::move(cb));
    for (int i = 0; i < n; ++i) {
      residuals[i] -= centers.row(nearest_row(residuals[i], centers)).transpose();
    }
  }
  return q;
}

}  // namespace codesep::rvq
