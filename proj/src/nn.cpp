#include "codesep/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace codesep::nn {

namespace {

std::shared_ptr<Node> make_node(Mat value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Tensor Tensor::constant(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return Tensor(n);
}

Tensor Tensor::parameter(Mat v, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  n->name = std::move(name);
  n->ensure_grad();
  return Tensor(n);
}

void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be 1x1");
  }
  if (!loss.node()->requires_grad) return;
  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      Node* p = node->parents[child].get();
      ++child;
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->requires_grad) n->ensure_grad();
  }
  loss.node()->grad(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->requires_grad && n->backward) n->backward(*n);
  }
}

void zero_grad(const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    p.node()->ensure_grad();
    p.node()->grad.setZero();
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (b.rows() == 1 && a.rows() > 1 && a.cols() == b.cols()) {
    Mat v = a.value().rowwise() + b.value().row(0);
    return Tensor(make_node(std::move(v), {a.node(), b.node()}, [](Node& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (pa->requires_grad) pa->grad += self.grad;
      if (pb->requires_grad) pb->grad.row(0) += self.grad.colwise().sum();
    }));
  }
  check_same_shape(a, b, "add");
  Mat v = a.value() + b.value();
  return Tensor(make_node(std::move(v), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad += self.grad;
    }
  }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Mat v = a.value() - b.value();
  return Tensor(make_node(std::move(v), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad += self.grad;
    if (self.parents[1]->requires_grad) self.parents[1]->grad -= self.grad;
  }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Mat v = a.value().cwiseProduct(b.value());
  return Tensor(make_node(std::move(v), {a.node(), b.node()}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->grad += self.grad.cwiseProduct(pb->value);
    if (pb->requires_grad) pb->grad += self.grad.cwiseProduct(pa->value);
  }));
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double s) {
  Mat v = a.value() * s;
  return Tensor(make_node(std::move(v), {a.node()}, [s](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad += s * self.grad;
  }));
}

Tensor add_scalar(const Tensor& a, double s) {
  Mat v = a.value().array() + s;
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad += self.grad;
  }));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims differ");
  Mat v = a.value() * b.value();
  return Tensor(make_node(std::move(v), {a.node(), b.node()}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->grad += self.grad * pb->value.transpose();
    if (pb->requires_grad) pb->grad += pa->value.transpose() * self.grad;
  }));
}

Tensor transpose(const Tensor& a) {
  Mat v = a.value().transpose();
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad += self.grad.transpose();
  }));
}

Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n) {
  if (r0 < 0 || r0 + n > a.rows()) throw std::invalid_argument("slice_rows: out of range");
  Mat v = a.value().middleRows(r0, n);
  return Tensor(make_node(std::move(v), {a.node()}, [r0, n](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad.middleRows(r0, n) += self.grad;
  }));
}

Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n) {
  if (c0 < 0 || c0 + n > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  Mat v = a.value().middleCols(c0, n);
  return Tensor(make_node(std::move(v), {a.node()}, [c0, n](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad.middleCols(c0, n) += self.grad;
  }));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Mat v(rows, parts[0].cols());
  std::vector<std::shared_ptr<Node>> parents;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols()) throw std::invalid_argument("concat_rows: col mismatch");
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    parents.push_back(p.node());
  }
  return Tensor(make_node(std::move(v), std::move(parents), [](Node& self) {
    Eigen::Index r = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad += self.grad.middleRows(r, p->value.rows());
      r += p->value.rows();
    }
  }));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Mat v(parts[0].rows(), cols);
  std::vector<std::shared_ptr<Node>> parents;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) throw std::invalid_argument("concat_cols: row mismatch");
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    parents.push_back(p.node());
  }
  return Tensor(make_node(std::move(v), std::move(parents), [](Node& self) {
    Eigen::Index c = 0;
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad += self.grad.middleCols(c, p->value.cols());
      c += p->value.cols();
    }
  }));
}

Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
  Mat v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::invalid_argument("gather_rows: bad index");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return Tensor(make_node(std::move(v), {a.node()}, [idx = std::move(idx)](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      p->grad.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
  }));
}

Tensor select_cols(const Tensor& a, std::vector<int> idx) {
  if (static_cast<Eigen::Index>(idx.size()) != a.rows()) {
    throw std::invalid_argument("select_cols: one index per row required");
  }
  Mat v(a.rows(), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.cols()) throw std::invalid_argument("select_cols: bad index");
    v(static_cast<Eigen::Index>(i), 0) = a.value()(static_cast<Eigen::Index>(i), idx[i]);
  }
  return Tensor(make_node(std::move(v), {a.node()}, [idx = std::move(idx)](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      p->grad(static_cast<Eigen::Index>(i), idx[i]) += self.grad(static_cast<Eigen::Index>(i), 0);
    }
  }));
}

Tensor min_t(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("min_t: shape mismatch");
  }
  Mat v = a.value().cwiseMin(b.value());
  return Tensor(make_node(std::move(v), {a.node(), b.node()}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const Mat take_a = (pa->value.array() <= pb->value.array()).cast<double>();
    if (pa->requires_grad) pa->grad.array() += self.grad.array() * take_a.array();
    if (pb->requires_grad) pb->grad.array() += self.grad.array() * (1.0 - take_a.array());
  }));
}

Tensor tanh_t(const Tensor& a) {
  Mat v = a.value().array().tanh();
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      self.parents[0]->grad.array() +=
          self.grad.array() * (1.0 - self.value.array().square());
    }
  }));
}

Tensor sigmoid(const Tensor& a) {
  Mat v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      self.parents[0]->grad.array() +=
          self.grad.array() * self.value.array() * (1.0 - self.value.array());
    }
  }));
}

Tensor gelu(const Tensor& a) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Mat v = a.value().unaryExpr([inv_sqrt2](double x) {
    return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  });
  return Tensor(make_node(std::move(v), {a.node()}, [inv_sqrt2](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
    p->grad.array() +=
        self.grad.array() * p->value.array().unaryExpr([&](double x) {
          return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                 x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
  }));
}

Tensor log_t(const Tensor& a) {
  Mat v = a.value().array().log();
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    if (p->requires_grad) p->grad.array() += self.grad.array() / p->value.array();
  }));
}

Tensor exp_t(const Tensor& a) {
  Mat v = a.value().array().exp();
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      self.parents[0]->grad.array() += self.grad.array() * self.value.array();
    }
  }));
}

Tensor abs_t(const Tensor& a) {
  Mat v = a.value().array().abs();
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    p->grad.array() += self.grad.array() * p->value.array().unaryExpr([](double x) {
      return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    });
  }));
}

Tensor square(const Tensor& a) {
  Mat v = a.value().array().square();
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    if (p->requires_grad) p->grad.array() += 2.0 * self.grad.array() * p->value.array();
  }));
}

Tensor sqrt_t(const Tensor& a) {
  Mat v = a.value().array().sqrt();
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    if (p->requires_grad) {
      // Subgradient 0 at the origin keeps magnitude-style losses finite.
      p->grad.array() +=
          (self.value.array() > 0.0).select(self.grad.array() * 0.5 / self.value.array(), 0.0);
    }
  }));
}

Tensor sum_all(const Tensor& a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    if (p->requires_grad) p->grad.array() += self.grad(0, 0);
  }));
}

Tensor mean_all(const Tensor& a) {
  const double n = static_cast<double>(a.rows() * a.cols());
  Mat v(1, 1);
  v(0, 0) = a.value().sum() / n;
  return Tensor(make_node(std::move(v), {a.node()}, [n](Node& self) {
    auto& p = self.parents[0];
    if (p->requires_grad) p->grad.array() += self.grad(0, 0) / n;
  }));
}

Tensor row_softmax(const Tensor& a) {
  Mat v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
      const double dot = self.grad.row(r).dot(self.value.row(r));
      p->grad.row(r).array() +=
          self.value.row(r).array() * (self.grad.row(r).array() - dot);
    }
  }));
}

Tensor row_log_softmax(const Tensor& a) {
  Mat v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    const double lse = m + std::log((v.row(r).array() - m).exp().sum());
    v.row(r).array() -= lse;
  }
  return Tensor(make_node(std::move(v), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
      const double gsum = self.grad.row(r).sum();
      p->grad.row(r).array() +=
          self.grad.row(r).array() - self.value.row(r).array().exp() * gsum;
    }
  }));
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  const Eigen::Index R = a.rows(), C = a.cols();
  if (gain.rows() != 1 || gain.cols() != C || bias.rows() != 1 || bias.cols() != C) {
    throw std::invalid_argument("layer_norm: gain/bias must be 1 x C");
  }
  Mat xhat(R, C);
  Eigen::VectorXd inv_std(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    const double mu = a.value().row(r).mean();
    const double var = (a.value().row(r).array() - mu).square().sum() / C;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (a.value().row(r).array() - mu) * inv_std[r];
  }
  Mat v = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
          bias.value().row(0).array();
  return Tensor(make_node(std::move(v), {a.node(), gain.node(), bias.node()},
                          [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    const Eigen::Index C = self.value.cols();
    if (pg->requires_grad) {
      pg->grad.row(0) += (self.grad.array() * xhat.array()).colwise().sum().matrix();
    }
    if (pb->requires_grad) pb->grad.row(0) += self.grad.colwise().sum();
    if (px->requires_grad) {
      for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
        Eigen::RowVectorXd dxhat =
            (self.grad.row(r).array() * pg->value.row(0).array()).matrix();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat.array() * xhat.row(r).array()).sum() / C;
        px->grad.row(r).array() +=
            inv_std[r] * (dxhat.array() - m1 - xhat.row(r).array() * m2);
      }
    }
  }));
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel, int stride) {
  const Eigen::Index T = x.rows(), cin = x.cols();
  if (w.rows() != static_cast<Eigen::Index>(kernel) * cin) {
    throw std::invalid_argument("conv1d: weight rows must be kernel * Cin");
  }
  const Eigen::Index cout = w.cols();
  if (b.rows() != 1 || b.cols() != cout) throw std::invalid_argument("conv1d: bad bias shape");
  const int pad = kernel / 2;
  const Eigen::Index T_out = (T + 2 * pad - kernel) / stride + 1;
  if (T_out <= 0) throw std::invalid_argument("conv1d: empty output");

  Mat unfolded = Mat::Zero(T_out, static_cast<Eigen::Index>(kernel) * cin);
  for (Eigen::Index o = 0; o < T_out; ++o) {
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index t = o * stride + j - pad;
      if (t >= 0 && t < T) unfolded.block(o, static_cast<Eigen::Index>(j) * cin, 1, cin) = x.value().row(t);
    }
  }
  Mat v = (unfolded * w.value()).rowwise() + b.value().row(0);
  return Tensor(make_node(
      std::move(v), {x.node(), w.node(), b.node()},
      [unfolded = std::move(unfolded), kernel, stride, pad, T, cin](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        if (pw->requires_grad) pw->grad += unfolded.transpose() * self.grad;
        if (pb->requires_grad) pb->grad.row(0) += self.grad.colwise().sum();
        if (px->requires_grad) {
          Mat du = self.grad * pw->value.transpose();
          for (Eigen::Index o = 0; o < du.rows(); ++o) {
            for (int j = 0; j < kernel; ++j) {
              const Eigen::Index t = o * stride + j - pad;
              if (t >= 0 && t < T) {
                px->grad.row(t) += du.block(o, static_cast<Eigen::Index>(j) * cin, 1, cin);
              }
            }
          }
        }
      }));
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel) {
  const Eigen::Index T = x.rows(), C = x.cols();
  if (w.rows() != kernel || w.cols() != C) throw std::invalid_argument("depthwise_conv1d: bad weight");
  if (b.rows() != 1 || b.cols() != C) throw std::invalid_argument("depthwise_conv1d: bad bias");
  const int pad = kernel / 2;
  Mat v = Mat::Zero(T, C);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index s = t + j - pad;
      if (s >= 0 && s < T) v.row(t).array() += w.value().row(j).array() * x.value().row(s).array();
    }
    v.row(t) += b.value().row(0);
  }
  return Tensor(make_node(std::move(v), {x.node(), w.node(), b.node()},
                          [kernel, pad, T](Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    if (pb->requires_grad) pb->grad.row(0) += self.grad.colwise().sum();
    for (Eigen::Index t = 0; t < T; ++t) {
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index s = t + j - pad;
        if (s < 0 || s >= T) continue;
        if (pw->requires_grad) {
          pw->grad.row(j).array() += self.grad.row(t).array() * px->value.row(s).array();
        }
        if (px->requires_grad) {
          px->grad.row(s).array() += self.grad.row(t).array() * pw->value.row(j).array();
        }
      }
    }
  }));
}

Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias) {
  const Eigen::Index T = x.rows(), D = x.cols();
  if (w_ih.rows() != D) throw std::invalid_argument("lstm: w_ih rows must equal input dim");
  const Eigen::Index H4 = w_ih.cols();
  if (H4 % 4 != 0) throw std::invalid_argument("lstm: w_ih cols must be 4*H");
  const Eigen::Index H = H4 / 4;
  if (w_hh.rows() != H || w_hh.cols() != H4) throw std::invalid_argument("lstm: bad w_hh");
  if (bias.rows() != 1 || bias.cols() != H4) throw std::invalid_argument("lstm: bad bias");

  // Saved activations for BPTT: gates i,f,g,o and cell states per step.
  Mat gi(T, H), gf(T, H), gg(T, H), go(T, H), cs(T, H), tc(T, H), hs(T, H);
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(H);
  Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(H);
  auto sigm = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::RowVectorXd a =
        x.value().row(t) * w_ih.value() + h * w_hh.value() + bias.value().row(0);
    for (Eigen::Index k = 0; k < H; ++k) {
      gi(t, k) = sigm(a[k]);
      gf(t, k) = sigm(a[H + k]);
      gg(t, k) = std::tanh(a[2 * H + k]);
      go(t, k) = sigm(a[3 * H + k]);
    }
    c = (gf.row(t).array() * c.array() + gi.row(t).array() * gg.row(t).array()).matrix();
    cs.row(t) = c;
    tc.row(t) = c.array().tanh().matrix();
    h = (go.row(t).array() * tc.row(t).array()).matrix();
    hs.row(t) = h;
  }

  Mat v = hs;
  return Tensor(make_node(
      std::move(v), {x.node(), w_ih.node(), w_hh.node(), bias.node()},
      [gi = std::move(gi), gf = std::move(gf), gg = std::move(gg), go = std::move(go),
       cs = std::move(cs), tc = std::move(tc), hs = std::move(hs), T, H](Node& self) {
        auto& px = self.parents[0];
        auto& pwih = self.parents[1];
        auto& pwhh = self.parents[2];
        auto& pbias = self.parents[3];
        Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(H);
        Eigen::RowVectorXd dc = Eigen::RowVectorXd::Zero(H);
        Mat da(1, 4 * H);
        for (Eigen::Index t = T - 1; t >= 0; --t) {
          Eigen::RowVectorXd dh = self.grad.row(t) + dh_next;
          Eigen::RowVectorXd dtc = (dh.array() * go.row(t).array()).matrix();
          dc.array() += dtc.array() * (1.0 - tc.row(t).array().square());
          Eigen::RowVectorXd do_ = (dh.array() * tc.row(t).array()).matrix();
          Eigen::RowVectorXd di = (dc.array() * gg.row(t).array()).matrix();
          Eigen::RowVectorXd dg = (dc.array() * gi.row(t).array()).matrix();
          Eigen::RowVectorXd c_prev =
              t > 0 ? cs.row(t - 1) : Eigen::RowVectorXd::Zero(H).eval();
          Eigen::RowVectorXd df = (dc.array() * c_prev.array()).matrix();
          da.block(0, 0, 1, H) =
              (di.array() * gi.row(t).array() * (1.0 - gi.row(t).array())).matrix();
          da.block(0, H, 1, H) =
              (df.array() * gf.row(t).array() * (1.0 - gf.row(t).array())).matrix();
          da.block(0, 2 * H, 1, H) =
              (dg.array() * (1.0 - gg.row(t).array().square())).matrix();
          da.block(0, 3 * H, 1, H) =
              (do_.array() * go.row(t).array() * (1.0 - go.row(t).array())).matrix();
          Eigen::RowVectorXd h_prev =
              t > 0 ? hs.row(t - 1) : Eigen::RowVectorXd::Zero(H).eval();
          if (pwih->requires_grad) pwih->grad += px->value.row(t).transpose() * da;
          if (pwhh->requires_grad) pwhh->grad += h_prev.transpose() * da;
          if (pbias->requires_grad) pbias->grad.row(0) += da.row(0);
          if (px->requires_grad) px->grad.row(t) += da.row(0) * pwih->value.transpose();
          dh_next = da.row(0) * pwhh->value.transpose();
          dc = (dc.array() * gf.row(t).array()).matrix();
        }
      }));
}

Tensor frame_signal(const Tensor& x, int window, int hop, int num_frames) {
  if (x.cols() != 1) throw std::invalid_argument("frame_signal: expects a column vector");
  const Eigen::Index L = x.rows();
  Mat v = Mat::Zero(num_frames, window);
  for (int t = 0; t < num_frames; ++t) {
    for (int k = 0; k < window; ++k) {
      const Eigen::Index i = static_cast<Eigen::Index>(t) * hop + k;
      if (i < L) v(t, k) = x.value()(i, 0);
    }
  }
  return Tensor(make_node(std::move(v), {x.node()}, [window, hop, L](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    for (Eigen::Index t = 0; t < self.value.rows(); ++t) {
      for (int k = 0; k < window; ++k) {
        const Eigen::Index i = t * hop + k;
        if (i < L) p->grad(i, 0) += self.grad(t, k);
      }
    }
  }));
}

Tensor overlap_add(const Tensor& frames, const Mat& synth, int hop, int pad_strip) {
  const Eigen::Index T = frames.rows();
  const Eigen::Index L = synth.rows();
  if (synth.cols() != frames.cols()) throw std::invalid_argument("overlap_add: dim mismatch");
  const Eigen::Index total = (T - 1) * hop + L;
  Mat segs = frames.value() * synth.transpose();  // T x L
  Mat v = Mat::Zero(total, 1);
  for (Eigen::Index t = 0; t < T; ++t) {
    v.block(t * hop, 0, L, 1) += segs.row(t).transpose();
  }
  Mat out = v.middleRows(pad_strip, total - 2 * pad_strip);
  return Tensor(make_node(std::move(out), {frames.node()},
                          [synth, hop, pad_strip, L, total](Node& self) {
    auto& p = self.parents[0];
    if (!p->requires_grad) return;
    Mat padded_grad = Mat::Zero(total, 1);
    padded_grad.middleRows(pad_strip, total - 2 * pad_strip) = self.grad;
    for (Eigen::Index t = 0; t < p->value.rows(); ++t) {
      p->grad.row(t) += (padded_grad.block(t * hop, 0, L, 1).transpose() * synth);
    }
  }));
}

Tensor straight_through(const Tensor& x, const Mat& q) {
  if (q.rows() != x.rows() || q.cols() != x.cols()) {
    throw std::invalid_argument("straight_through: shape mismatch");
  }
  return Tensor(make_node(Mat(q), {x.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad += self.grad;
  }));
}

void AdamW::step(const std::vector<Tensor>& params) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (const auto& p : params) {
    Node* n = p.node().get();
    n->ensure_grad();
    auto it = state.find(n);
    if (it == state.end()) {
      it = state.emplace(n, std::make_pair(Mat::Zero(n->value.rows(), n->value.cols()),
                                           Mat::Zero(n->value.rows(), n->value.cols())))
               .first;
    }
    Mat& m = it->second.first;
    Mat& v = it->second.second;
    m = beta1 * m + (1.0 - beta1) * n->grad;
    v = beta2 * v + (1.0 - beta2) * n->grad.cwiseProduct(n->grad);
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    n->value.array() -= lr * (mhat.array() / (vhat.array().sqrt() + eps) +
                              weight_decay * n->value.array());
  }
}

Tensor ParamStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                          std::function<double()> init) {
  if (by_name_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  Mat v(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) v(r, c) = init();
  }
  Tensor t = Tensor::parameter(std::move(v), name);
  params_.push_back(t);
  by_name_.emplace(name, t);
  return t;
}

Tensor ParamStore::create_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return create(name, rows, cols, [] { return 0.0; });
}

Tensor ParamStore::create_const(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                                double v) {
  return create(name, rows, cols, [v] { return v; });
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::invalid_argument("ParamStore: no parameter " + name);
  return it->second;
}

}  // namespace codesep::nn
