#pragma once

#include <Eigen/Core>
#include <vector>

namespace codesep::rvq {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// One quantizer stage: M codevectors of dimension K, one per row.
// Tokens are 1-based throughout the API.
struct Codebook {
  Mat vectors;  // M x K

  int size() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
};

// Ordered list of N stages with identical M and K. N >= 2.
struct ResidualQuantizer {
  std::vector<Codebook> codebooks;

  int num_stages() const { return static_cast<int>(codebooks.size()); }
  int codebook_size() const { return codebooks.front().size(); }
  int dim() const { return codebooks.front().dim(); }
};

void validate(const ResidualQuantizer& q);

// Per-frame tokens, one per stage, each in 1..M.
using TokenFrame = std::vector<int>;

// Token matrix for a whole utterance: one TokenFrame per MDCT frame.
using TokenStream = std::vector<TokenFrame>;

struct QuantizationResult {
  TokenFrame tokens;           // N entries
  Vec quantized;               // sum of selected codevectors
  std::vector<Vec> residuals;  // N+1 entries, residuals[0] = input
};

// Row `token` (1-based) of the codebook.
Vec lookup(int token, const Codebook& codebook);

// Greedy per-stage nearest neighbor (squared L2, ties to the smallest index).
QuantizationResult quantize(const Vec& z, const ResidualQuantizer& q);

// Sum of codevector lookups for stages 1..up_to.
Vec dequantize(const TokenFrame& tokens, const ResidualQuantizer& q, int up_to = -1);

// sum_n ||r_n - w_n||^2 + beta * ||r_n - w_n||^2 over selected codevectors
// (the two terms differ only in which side carries gradients during
// training). Equals (1 + beta) * sum_n ||r_{n+1}||^2 by the residual
// recursion.
double quantization_loss(const Vec& z, const QuantizationResult& result, double beta = 1.0);

// Stage-wise k-means: stage n is fit on the residuals left by stages 1..n-1.
// Deterministic for a fixed seed; iteration cap 50.
ResidualQuantizer init_codebooks(const std::vector<Vec>& samples, int num_stages,
                                 int codebook_size, std::uint64_t seed,
                                 int max_iterations = 50);

}  // namespace codesep::rvq
