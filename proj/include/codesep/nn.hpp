#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace codesep::nn {

using Mat = Eigen::MatrixXd;

// One node in the reverse-mode tape. Values are 2-D matrices; sequences are
// time x channels, single vectors are 1 x K.
struct Node {
  Mat value;
  Mat grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // propagates this->grad into parents
  std::string name;                     // set for parameters

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Mat::Zero(value.rows(), value.cols());
    }
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor constant(Mat v);
  static Tensor parameter(Mat v, std::string name = "");

  bool defined() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Mat& value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a 1x1 loss node. Parameter gradients
// accumulate; call zero_grad between steps.
void backward(const Tensor& loss);
void zero_grad(const std::vector<Tensor>& params);

// ---- elementwise / structural ops ----
Tensor add(const Tensor& a, const Tensor& b);  // equal shapes, or b is 1 x C (row broadcast)
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, equal shapes
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n);
Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, std::vector<int> idx);  // embedding lookup

// Picks a(t, idx[t]) for each row t; result is T x 1.
Tensor select_cols(const Tensor& a, std::vector<int> idx);

// Elementwise minimum; the subgradient follows the smaller operand, ties to a.
Tensor min_t(const Tensor& a, const Tensor& b);

// ---- nonlinearities / reductions ----
Tensor tanh_t(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor log_t(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor abs_t(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor sum_all(const Tensor& a);   // 1x1
Tensor mean_all(const Tensor& a);  // 1x1
Tensor row_softmax(const Tensor& a);
Tensor row_log_softmax(const Tensor& a);

// Layer norm over each row: gain, bias are 1 x C.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// 1-D convolution over time (rows). x: T x Cin; w: (kernel*Cin) x Cout laid
// out tap-major (tap 0 channels, tap 1 channels, ...); b: 1 x Cout. Symmetric
// zero padding of kernel/2 on both sides; output length floor((T + 2*(k/2) - k)/stride) + 1.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel, int stride);

// Depthwise 1-D convolution: w is kernel x C, stride 1, same padding.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel);

// Single-layer LSTM over the full sequence. x: T x D; w_ih: D x 4H;
// w_hh: H x 4H; bias: 1 x 4H. Gate order i, f, g, o; h0 = c0 = 0.
Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias);

// Frames a column signal (L x 1) into T x window rows starting at t*hop;
// out-of-range taps read zero.
Tensor frame_signal(const Tensor& x, int window, int hop, int num_frames);

// Windowed overlap-add used by the MDCT inverse: frames (T x F) times
// synth^T (F x L) rows are added at offsets t*hop; pad_strip samples are
// removed from both ends of the result (returned as column vector).
Tensor overlap_add(const Tensor& frames, const Mat& synth, int hop, int pad_strip);

// Straight-through: value of q, gradient of x (identity Jacobian).
Tensor straight_through(const Tensor& x, const Mat& q);

// ---- parameter containers / optimizer ----
struct AdamW {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void step(const std::vector<Tensor>& params);

  long long t = 0;
  std::unordered_map<Node*, std::pair<Mat, Mat>> state;  // first/second moments
};

// Ordered named parameter registry. Registration order defines checkpoint
// serialization order.
class ParamStore {
 public:
  Tensor create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                std::function<double()> init);
  Tensor create_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Tensor create_const(const std::string& name, Eigen::Index rows, Eigen::Index cols, double v);

  const std::vector<Tensor>& all() const { return params_; }
  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }

 private:
  std::vector<Tensor> params_;
  std::unordered_map<std::string, Tensor> by_name_;
};

}  // namespace codesep::nn
