#include "r2diff/autodiff.hpp"

#include <cmath>
#include <memory>

#include "r2diff/error.hpp"

namespace r2diff::ad {

template <typename Scalar>
Var Tape<Scalar>::push(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), nullptr, -1});
  return Var{nodes_.size() - 1};
}

template <typename Scalar>
typename Tape<Scalar>::Mat& Tape<Scalar>::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename Scalar>
Var Tape<Scalar>::constant(Mat value) {
  return push(std::move(value));
}

template <typename Scalar>
Var Tape<Scalar>::parameter(std::size_t offset, Mat value) {
  Var v = push(std::move(value));
  nodes_[v.id].param_offset = static_cast<std::ptrdiff_t>(offset);
  return v;
}

template <typename Scalar>
Var Tape<Scalar>::matmul(Var a, Var b) {
  const Mat& A = value(a);
  const Mat& B = value(b);
  if (A.cols() != B.rows()) throw InvalidInput("matmul shape mismatch");
  Mat out(A.rows(), B.cols());
  out.noalias() = A * B;
  Var r = push(std::move(out));
  if (record_) {
    nodes_[r.id].backward = [this, a, b, r] {
      const Mat& g = nodes_[r.id].grad;
      grad_of(a.id).noalias() += g * value(b).transpose();
      grad_of(b.id).noalias() += value(a).transpose() * g;
    };
  }
  return r;
}

template <typename Scalar>
Var Tape<Scalar>::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
    throw InvalidInput("add shape mismatch");
  }
  Var r = push(value(a) + value(b));
  if (record_) {
    nodes_[r.id].backward = [this, a, b, r] {
      const Mat& g = nodes_[r.id].grad;
      grad_of(a.id) += g;
      grad_of(b.id) += g;
    };
  }
  return r;
}

template <typename Scalar>
Var Tape<Scalar>::add_row(Var a, Var row) {
  const Mat& A = value(a);
  const Mat& R = value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) throw InvalidInput("add_row shape mismatch");
  Mat out = A;
  out.rowwise() += R.row(0);
  Var r = push(std::move(out));
  if (record_) {
    nodes_[r.id].backward = [this, a, row, r] {
      const Mat& g = nodes_[r.id].grad;
      grad_of(a.id) += g;
      grad_of(row.id) += g.colwise().sum();
    };
  }
  return r;
}

namespace {

template <typename Scalar>
constexpr Scalar kGeluC = Scalar(0.7978845608028654);  // sqrt(2 / pi)
template <typename Scalar>
constexpr Scalar kGeluA = Scalar(0.044715);

}  // namespace

template <typename Scalar>
Var Tape<Scalar>::gelu(Var a) {
  const auto x = value(a).array();
  const auto inner = kGeluC<Scalar> * (x + kGeluA<Scalar> * x.cube());
  Mat t = inner.tanh().matrix();
  Mat out = (Scalar(0.5) * x * (Scalar(1) + t.array())).matrix();
  Var r = push(std::move(out));
  if (record_) {
    auto tanh_cache = std::make_shared<Mat>(std::move(t));
    nodes_[r.id].backward = [this, a, r, tanh_cache] {
      const auto x = value(a).array();
      const auto t = tanh_cache->array();
      const auto dinner = kGeluC<Scalar> * (Scalar(1) + Scalar(3) * kGeluA<Scalar> * x.square());
      const auto dy = Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t.square()) * dinner;
      grad_of(a.id).array() += nodes_[r.id].grad.array() * dy;
    };
  }
  return r;
}

template <typename Scalar>
Var Tape<Scalar>::layer_norm(Var a, Var gain, Var bias, Scalar eps) {
  const Mat& X = value(a);
  const Mat& G = value(gain);
  const Mat& Bv = value(bias);
  const Eigen::Index cols = X.cols();
  if (G.cols() != cols || Bv.cols() != cols) throw InvalidInput("layer_norm shape mismatch");
  Mat xhat(X.rows(), cols);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Scalar mean = X.row(i).mean();
    const auto centered = (X.row(i).array() - mean);
    const Scalar var = centered.square().mean();
    inv_std(i) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(i) = (centered * inv_std(i)).matrix();
  }
  Mat out = (xhat.array().rowwise() * G.row(0).array()).matrix();
  out.rowwise() += Bv.row(0);
  Var r = push(std::move(out));
  if (record_) {
    auto cache_x = std::make_shared<Mat>(std::move(xhat));
    auto cache_s = std::make_shared<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(std::move(inv_std));
    nodes_[r.id].backward = [this, a, gain, bias, r, cache_x, cache_s] {
      const Mat& g = nodes_[r.id].grad;
      const Mat& xh = *cache_x;
      grad_of(gain.id) += (g.array() * xh.array()).colwise().sum().matrix();
      grad_of(bias.id) += g.colwise().sum();
      const Mat dxhat = (g.array().rowwise() * value(gain).row(0).array()).matrix();
      Mat& ga = grad_of(a.id);
      const Scalar inv_n = Scalar(1) / static_cast<Scalar>(xh.cols());
      for (Eigen::Index i = 0; i < xh.rows(); ++i) {
        const Scalar m1 = dxhat.row(i).sum() * inv_n;
        const Scalar m2 = dxhat.row(i).dot(xh.row(i)) * inv_n;
        ga.row(i).array() +=
            (*cache_s)(i) * (dxhat.row(i).array() - m1 - xh.row(i).array() * m2);
      }
    };
  }
  return r;
}

template <typename Scalar>
Var Tape<Scalar>::attention(Var qkv, std::size_t seq, std::size_t heads) {
  const Mat& QKV = value(qkv);
  const auto S = static_cast<Eigen::Index>(seq);
  if (QKV.cols() % 3 != 0 || seq == 0 || QKV.rows() % S != 0) {
    throw InvalidInput("attention shape mismatch");
  }
  const Eigen::Index h = QKV.cols() / 3;
  const auto H = static_cast<Eigen::Index>(heads);
  if (h % H != 0) throw InvalidInput("hidden width not divisible by head count");
  const Eigen::Index dh = h / H;
  const Eigen::Index batch = QKV.rows() / S;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  Mat out(QKV.rows(), h);
  std::shared_ptr<std::vector<Mat>> probs;
  if (record_) {
    probs = std::make_shared<std::vector<Mat>>();
    probs->reserve(static_cast<std::size_t>(batch * H));
  }
  Mat scores(S, S);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_stat(S);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index hd = 0; hd < H; ++hd) {
      const auto Q = QKV.block(b * S, hd * dh, S, dh);
      const auto K = QKV.block(b * S, h + hd * dh, S, dh);
      const auto V = QKV.block(b * S, 2 * h + hd * dh, S, dh);
      scores.noalias() = Q * K.transpose();
      scores *= scale;
      row_stat = scores.rowwise().maxCoeff();
      scores.colwise() -= row_stat;
      scores.array() = scores.array().exp();
      row_stat = scores.rowwise().sum();
      scores.array().colwise() /= row_stat.array();
      out.block(b * S, hd * dh, S, dh).noalias() = scores * V;
      if (record_) probs->push_back(scores);
    }
  }
  Var r = push(std::move(out));
  if (record_) {
    nodes_[r.id].backward = [this, qkv, r, probs, S, h, H, dh, batch, scale] {
      const Mat& g = nodes_[r.id].grad;
      const Mat& QKV = value(qkv);
      Mat& gq = grad_of(qkv.id);
      Mat dP(S, S);
      Mat dS(S, S);
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_dot(S);
      for (Eigen::Index b = 0; b < batch; ++b) {
        for (Eigen::Index hd = 0; hd < H; ++hd) {
          const Mat& P = (*probs)[static_cast<std::size_t>(b * H + hd)];
          const auto Q = QKV.block(b * S, hd * dh, S, dh);
          const auto K = QKV.block(b * S, h + hd * dh, S, dh);
          const auto V = QKV.block(b * S, 2 * h + hd * dh, S, dh);
          const auto dO = g.block(b * S, hd * dh, S, dh);
          gq.block(b * S, 2 * h + hd * dh, S, dh).noalias() += P.transpose() * dO;
          dP.noalias() = dO * V.transpose();
          row_dot = (dP.array() * P.array()).rowwise().sum();
          dS.array() = P.array() * (dP.array().colwise() - row_dot.array());
          dS *= scale;
          gq.block(b * S, hd * dh, S, dh).noalias() += dS * K;
          gq.block(b * S, h + hd * dh, S, dh).noalias() += dS.transpose() * Q;
        }
      }
    };
  }
  return r;
}

template <typename Scalar>
Var Tape<Scalar>::append_rows(Var tokens, Var extra, std::size_t group) {
  const Mat& X = value(tokens);
  const Mat& E = value(extra);
  const auto G = static_cast<Eigen::Index>(group);
  if (group == 0 || X.rows() != G * E.rows() || X.cols() != E.cols()) {
    throw InvalidInput("append_rows shape mismatch");
  }
  const Eigen::Index batch = E.rows();
  Mat out(batch * (G + 1), X.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    out.middleRows(b * (G + 1), G) = X.middleRows(b * G, G);
    out.row(b * (G + 1) + G) = E.row(b);
  }
  Var r = push(std::move(out));
  if (record_) {
    nodes_[r.id].backward = [this, tokens, extra, r, G, batch] {
      const Mat& g = nodes_[r.id].grad;
      Mat& gx = grad_of(tokens.id);
      Mat& ge = grad_of(extra.id);
      for (Eigen::Index b = 0; b < batch; ++b) {
        gx.middleRows(b * G, G) += g.middleRows(b * (G + 1), G);
        ge.row(b) += g.row(b * (G + 1) + G);
      }
    };
  }
  return r;
}

template <typename Scalar>
Var Tape<Scalar>::drop_last_rows(Var tokens, std::size_t group) {
  const Mat& X = value(tokens);
  const auto G = static_cast<Eigen::Index>(group);
  if (group == 0 || X.rows() % (G + 1) != 0) throw InvalidInput("drop_last_rows shape mismatch");
  const Eigen::Index batch = X.rows() / (G + 1);
  Mat out(batch * G, X.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    out.middleRows(b * G, G) = X.middleRows(b * (G + 1), G);
  }
  Var r = push(std::move(out));
  if (record_) {
    nodes_[r.id].backward = [this, tokens, r, G, batch] {
      const Mat& g = nodes_[r.id].grad;
      Mat& gx = grad_of(tokens.id);
      for (Eigen::Index b = 0; b < batch; ++b) {
        gx.middleRows(b * (G + 1), G) += g.middleRows(b * G, G);
      }
    };
  }
  return r;
}

template <typename Scalar>
Var Tape<Scalar>::squared_error(Var a, const Mat& target, Scalar scale) {
  const Mat& A = value(a);
  if (A.rows() != target.rows() || A.cols() != target.cols()) {
    throw InvalidInput("squared_error shape mismatch");
  }
  Mat diff = A - target;
  Mat out(1, 1);
  // Accumulate in double so float runs do not lose the loss to rounding.
  out(0, 0) = static_cast<Scalar>(static_cast<double>(scale) *
                                  diff.template cast<double>().squaredNorm());
  Var r = push(std::move(out));
  if (record_) {
    auto cache = std::make_shared<Mat>(std::move(diff));
    nodes_[r.id].backward = [this, a, r, cache, scale] {
      const Scalar g = nodes_[r.id].grad(0, 0);
      grad_of(a.id) += (Scalar(2) * scale * g) * (*cache);
    };
  }
  return r;
}

template <typename Scalar>
void Tape<Scalar>::backward(Var root, std::span<Scalar> param_grad) {
  if (!record_) throw Error("backward on a tape that did not record");
  const Mat& v = value(root);
  grad_of(root.id) = Mat::Ones(v.rows(), v.cols());
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward();
    if (n.param_offset >= 0) {
      const auto off = static_cast<std::size_t>(n.param_offset);
      const auto count = static_cast<std::size_t>(n.grad.size());
      if (off + count > param_grad.size()) throw Error("parameter gradient out of range");
      for (std::size_t k = 0; k < count; ++k) param_grad[off + k] += n.grad.data()[k];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace r2diff::ad
