#pragma once

// Straight-line reference implementations used to cross-check the library.
// Everything here is written with plain loops, independent of the autograd
// and Eigen paths in the implementation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "emogest/autograd.hpp"
#include "emogest/nn.hpp"
#include "emogest/rng.hpp"
#include "emogest/tensor.hpp"

namespace oracle {

using emogest::Tensor;

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat out(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
  return out;
}

inline Mat row_softmax(const Mat& a) {
  Mat out = a;
  for (auto& row : out) {
    double m = row[0];
    for (double v : row) m = std::max(m, v);
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - m);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  return out;
}

// softmax(q k^T / sqrt(d)) v
inline Mat attention(const Mat& q, const Mat& k, const Mat& v) {
  Mat scores = matmul(q, transpose(k));
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  for (auto& row : scores)
    for (double& s : row) s *= scale;
  return matmul(row_softmax(scores), v);
}

// row-softmax of a b^T / sqrt(D); covers both the temporal correlation matrix
// and the motion deformation matrix
inline Mat scaled_gram_softmax(const Mat& a, const Mat& b) {
  Mat scores = matmul(a, transpose(b));
  const double scale = 1.0 / std::sqrt(static_cast<double>(a[0].size()));
  for (auto& row : scores)
    for (double& s : row) s *= scale;
  return row_softmax(scores);
}

inline Mat adain(const Mat& content, const std::vector<double>& gamma,
                 const std::vector<double>& beta, double sigma_floor = 1e-8) {
  const std::size_t R = content.size(), C = content[0].size();
  Mat out(R, std::vector<double>(C));
  for (std::size_t c = 0; c < C; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < R; ++r) mu += content[r][c];
    mu /= static_cast<double>(R);
    double var = 0.0;
    for (std::size_t r = 0; r < R; ++r) var += (content[r][c] - mu) * (content[r][c] - mu);
    var /= static_cast<double>(R);
    const double sd = std::max(std::sqrt(var), sigma_floor);
    for (std::size_t r = 0; r < R; ++r)
      out[r][c] = gamma[c] * (content[r][c] - mu) / sd + beta[c];
  }
  return out;
}

// Diagonal-Gaussian KL, written directly from the closed form.
inline double kl_gaussian(const std::vector<double>& mu1, const std::vector<double>& lv1,
                          const std::vector<double>& mu2, const std::vector<double>& lv2) {
  double kl = 0.0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double v1 = std::exp(lv1[i]), v2 = std::exp(lv2[i]);
    kl += 0.5 * (lv2[i] - lv1[i] + (v1 + (mu1[i] - mu2[i]) * (mu1[i] - mu2[i])) / v2 - 1.0);
  }
  return kl;
}

// Word error rate through exhaustive recursion (exponential; small inputs
// only).
inline std::size_t edit_distance_recursive(const std::vector<std::string>& a, std::size_t i,
                                           const std::vector<std::string>& b, std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  std::size_t best = edit_distance_recursive(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  best = std::min(best, edit_distance_recursive(a, i + 1, b, j) + 1);
  best = std::min(best, edit_distance_recursive(a, i, b, j + 1) + 1);
  return best;
}

inline double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  return static_cast<double>(edit_distance_recursive(ref, 0, hyp, 0)) /
         static_cast<double>(ref.size());
}

// ---------------------------------------------------------------------------
// Frechet distance between Gaussians through a Denman-Beavers square-root
// iteration; independent of the eigendecomposition route.
// ---------------------------------------------------------------------------

inline Mat identity(std::size_t n) {
  Mat out(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) out[i][i] = 1.0;
  return out;
}

inline Mat inverse_gauss_jordan(Mat a) {
  const std::size_t n = a.size();
  Mat inv = identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    if (std::fabs(a[pivot][col]) < 1e-14) throw std::runtime_error("oracle inverse: singular");
    std::swap(a[pivot], a[col]);
    std::swap(inv[pivot], inv[col]);
    const double d = a[col][col];
    for (std::size_t c = 0; c < n; ++c) {
      a[col][c] /= d;
      inv[col][c] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (std::size_t c = 0; c < n; ++c) {
        a[r][c] -= f * a[col][c];
        inv[r][c] -= f * inv[col][c];
      }
    }
  }
  return inv;
}

inline Mat sqrtm_denman_beavers(const Mat& a, std::size_t iters = 60) {
  Mat y = a, z = identity(a.size());
  for (std::size_t it = 0; it < iters; ++it) {
    const Mat y_inv = inverse_gauss_jordan(y);
    const Mat z_inv = inverse_gauss_jordan(z);
    Mat y_next = y, z_next = z;
    for (std::size_t r = 0; r < a.size(); ++r)
      for (std::size_t c = 0; c < a.size(); ++c) {
        y_next[r][c] = 0.5 * (y[r][c] + z_inv[r][c]);
        z_next[r][c] = 0.5 * (z[r][c] + y_inv[r][c]);
      }
    y = y_next;
    z = z_next;
  }
  return y;
}

inline double frechet(const std::vector<double>& mu_a, Mat cov_a, const std::vector<double>& mu_b,
                      Mat cov_b, double eps = 1e-6) {
  const std::size_t n = mu_a.size();
  for (std::size_t i = 0; i < n; ++i) {
    cov_a[i][i] += eps;
    cov_b[i][i] += eps;
  }
  double mean_term = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    mean_term += (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i]);
  const Mat prod = matmul(cov_a, cov_b);
  const Mat root = sqrtm_denman_beavers(prod);
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    trace += cov_a[i][i] + cov_b[i][i] - 2.0 * root[i][i];
  return mean_term + trace;
}

// ---------------------------------------------------------------------------
// central finite differences on a scalar-valued rebuilt forward pass
// ---------------------------------------------------------------------------

struct FdCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// forward() must rebuild the graph from the parameter values each call.
// Returns the worst relative disagreement between the analytic gradient and a
// central difference over `coords_per_param` random coordinates per listed
// parameter.
inline FdCheck finite_difference_check(const std::function<emogest::ag::Var()>& forward,
                                       const std::vector<emogest::ag::Var>& parameters,
                                       std::size_t coords_per_param, emogest::Rng& rng,
                                       double step = 1e-5) {
  using emogest::ag::backward;
  using emogest::ag::Var;
  FdCheck result;

  Var loss = forward();
  for (const Var& p : parameters)
    if (!p->grad.empty()) p->grad.fill(0.0);
  backward(loss);

  for (const Var& p : parameters) {
    for (std::size_t k = 0; k < coords_per_param; ++k) {
      const std::size_t idx = static_cast<std::size_t>(rng.integer(p->value.size()));
      const double analytic = p->grad.empty() ? 0.0 : p->grad[idx];
      const double saved = p->value[idx];
      p->value[idx] = saved + step;
      const double plus = forward()->value[0];
      p->value[idx] = saved - step;
      const double minus = forward()->value[0];
      p->value[idx] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
      result.max_rel_error = std::max(result.max_rel_error,
                                      std::fabs(analytic - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace oracle
