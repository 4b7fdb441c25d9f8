#include <algorithm>
#include <cmath>
#include <set>

#include "codebias/biasmetrics.hpp"
#include "codebias/errors.hpp"

namespace codebias {

double PolyFit::operator()(double x) const {
  const double t = (x - center) / half_range;
  double v = 0.0;
  for (std::size_t j = coeffs.size(); j-- > 0;) v = v * t + coeffs[j];
  return v;
}

std::vector<double> PolyFit::raw_coefficients() const {
  const std::size_t p = coeffs.size();
  std::vector<double> raw(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    // coeffs[j] * (x - center)^j / half_range^j, expanded binomially.
    const double scale = coeffs[j] / std::pow(half_range, static_cast<double>(j));
    double binom = 1.0;
    for (std::size_t i = 0; i <= j; ++i) {
      raw[i] += scale * binom * std::pow(-center, static_cast<double>(j - i));
      binom = binom * static_cast<double>(j - i) / static_cast<double>(i + 1);
    }
  }
  return raw;
}

PolyFit polyfit(std::span<const double> xs, std::span<const double> ys, int order) {
  if (order < 0) throw InvalidArgument("polynomial order must be >= 0");
  if (xs.size() != ys.size()) throw InvalidArgument("xs and ys differ in length");
  const std::size_t n = xs.size();
  const auto p = static_cast<std::size_t>(order) + 1;
  if (n <= static_cast<std::size_t>(order)) {
    throw Underdetermined(std::to_string(n) + " points cannot determine an order-" + std::to_string(order) + " fit");
  }
  if (std::set<double>(xs.begin(), xs.end()).size() < p) throw Underdetermined("too few distinct x values");

  PolyFit fit;
  fit.order = order;
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  fit.center = 0.5 * (*lo + *hi);
  fit.half_range = *hi > *lo ? 0.5 * (*hi - *lo) : 1.0;

  // Column-major Vandermonde in the standardized variable.
  std::vector<double> a(n * p);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (xs[i] - fit.center) / fit.half_range;
    double v = 1.0;
    for (std::size_t j = 0; j < p; ++j, v *= t) a[j * n + i] = v;
  }
  std::vector<double> b(ys.begin(), ys.end());
  std::vector<double> diag(p);

  for (std::size_t k = 0; k < p; ++k) {
    double* col = a.data() + k * n;
    double norm = 0.0;
    for (std::size_t i = k; i < n; ++i) norm += col[i] * col[i];
    norm = std::sqrt(norm);
    const double alpha = col[k] > 0 ? -norm : norm;
    diag[k] = alpha;
    if (norm == 0.0) continue;
    col[k] -= alpha;
    double vnorm2 = 0.0;
    for (std::size_t i = k; i < n; ++i) vnorm2 += col[i] * col[i];
    if (vnorm2 == 0.0) continue;
    auto reflect = [&](double* target) {
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += col[i] * target[i];
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < n; ++i) target[i] -= f * col[i];
    };
    for (std::size_t j = k + 1; j < p; ++j) reflect(a.data() + j * n);
    reflect(b.data());
  }

  double max_diag = 0.0;
  for (double d : diag) max_diag = std::max(max_diag, std::abs(d));
  for (double d : diag) {
    if (std::abs(d) <= 1e-12 * max_diag) throw Underdetermined("rank-deficient design matrix");
  }

  fit.coeffs.assign(p, 0.0);
  for (std::size_t k = p; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < p; ++j) s -= a[j * n + k] * fit.coeffs[j];
    fit.coeffs[k] = s / diag[k];
  }
  double res = 0.0;
  for (std::size_t i = p; i < n; ++i) res += b[i] * b[i];
  fit.residual_norm = std::sqrt(res);
  return fit;
}

}  // namespace codebias
