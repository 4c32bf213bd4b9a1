#include "conmt/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "conmt/error.hpp"

namespace conmt {

Kappa::Kappa(double value) : value_(value) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw InvalidArgument("kappa must be a positive finite number");
  }
}

ScoreSign parse_score_sign(std::string_view name) {
  if (name == "plus") return ScoreSign::kPlus;
  if (name == "minus") return ScoreSign::kMinus;
  throw InvalidArgument("score sign must be 'plus' or 'minus', got '" +
                        std::string(name) + "'");
}

std::string_view to_string(ScoreSign sign) {
  return sign == ScoreSign::kPlus ? "plus" : "minus";
}

double dot(std::span<const float> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double norm(std::span<const double> v) noexcept {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double norm(std::span<const float> v) noexcept {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

namespace {

double checked_norm(std::span<const double> h) {
  const double n = norm(h);
  if (!(n > kMinHiddenNorm)) {
    throw DegenerateHiddenState("hidden state norm " + std::to_string(n) +
                                " is below 1e-12");
  }
  return n;
}

void check_sizes(std::span<const float> e, std::span<const double> h) {
  if (e.size() != h.size()) {
    throw InvalidArgument("embedding has dimension " + std::to_string(e.size()) +
                          " but hidden state has " + std::to_string(h.size()));
  }
}

}  // namespace

double cosine(std::span<const float> e, std::span<const double> h) {
  check_sizes(e, h);
  const double hn = checked_norm(h);
  return dot(e, h) / (norm(e) * hn);
}

double cosine_loss(std::span<const float> e, std::span<const double> h) {
  return std::clamp(1.0 - cosine(e, h), 0.0, 2.0);
}

std::vector<double> cosine_loss_grad(std::span<const float> e,
                                     std::span<const double> h) {
  check_sizes(e, h);
  const double hn = checked_norm(h);
  const double en = norm(e);
  const double c = dot(e, h) / (en * hn);
  std::vector<double> g(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    g[i] = -(static_cast<double>(e[i]) / (en * hn) - c * h[i] / (hn * hn));
  }
  return g;
}

double discrete_log_prob(const EmbeddingTable& table, std::span<const double> h,
                         TokenId t) {
  if (t >= table.rows()) {
    throw InvalidArgument("token " + std::to_string(t) + " out of range for |V|=" +
                          std::to_string(table.rows()));
  }
  if (h.size() != table.dim()) {
    throw InvalidArgument("hidden state dimension does not match table");
  }
  const std::size_t n = table.rows();
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) logits[i] = dot(table.row(i), h);
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  return logits[t] - (m + std::log(s));
}

double log_bessel_i(double nu, double x) {
  if (!(nu >= 0.0) || !(x > 0.0)) {
    throw InvalidArgument("log_bessel_i needs nu >= 0 and x > 0");
  }
  // I_nu(x) = (x/2)^nu / Gamma(nu+1) * sum_m (x^2/4)^m / (m! (nu+1)_m)
  const double q = 0.25 * x * x;
  double term = 1.0;
  double sum = 1.0;
  for (int m = 1; m < 100000; ++m) {
    term *= q / (static_cast<double>(m) * (nu + static_cast<double>(m)));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + std::log(sum);
}

double log_c_d(std::size_t d, Kappa kappa) {
  if (d < 2) throw InvalidArgument("log_c_d: dimension must be >= 2");
  const double half = 0.5 * static_cast<double>(d);
  const double k = kappa.value();
  return (half - 1.0) * std::log(k) - half * std::log(2.0 * std::numbers::pi) -
         log_bessel_i(half - 1.0, k);
}

double vmf_log_prob(std::span<const float> e, std::span<const double> h,
                    Kappa kappa, ScoreSign sign) {
  return vmf_from_cosine(cosine(e, h), log_c_d(e.size(), kappa), kappa, sign);
}

}  // namespace conmt
