#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "conmt/embedspace.hpp"
#include "conmt/types.hpp"

namespace conmt {

/// Hidden states with a smaller norm have no usable direction.
inline constexpr double kMinHiddenNorm = 1e-12;

enum class ScoreKind { kCosineLoss, kDiscreteLogProb, kVmfLogProb };

struct Score {
  double value = 0.0;
  ScoreKind kind = ScoreKind::kCosineLoss;
};

/// vMF concentration. Always positive.
class Kappa {
 public:
  constexpr Kappa() = default;
  explicit Kappa(double value);
  constexpr double value() const noexcept { return value_; }

 private:
  double value_ = 1.0;
};

/// Sign applied to the cosine term of the per-step beam score. `kPlus` makes
/// likelihood maximisation agree with cosine-loss minimisation; `kMinus`
/// reproduces the alternative convention for comparison runs.
enum class ScoreSign { kPlus, kMinus };

ScoreSign parse_score_sign(std::string_view name);
std::string_view to_string(ScoreSign sign);

double dot(std::span<const float> a, std::span<const double> b) noexcept;
double norm(std::span<const double> v) noexcept;
double norm(std::span<const float> v) noexcept;

/// cos(e, h). Throws DegenerateHiddenState if |h| <= 1e-12.
double cosine(std::span<const float> e, std::span<const double> h);

/// 1 - cos(e, h), in [0, 2].
double cosine_loss(std::span<const float> e, std::span<const double> h);

/// Gradient of 1 - cos(e, h) with respect to h. Orthogonal to h.
std::vector<double> cosine_loss_grad(std::span<const float> e,
                                     std::span<const double> h);

/// <E(t), h> - logsumexp_t' <E(t'), h>.
double discrete_log_prob(const EmbeddingTable& table, std::span<const double> h,
                         TokenId t);

/// Log of the modified Bessel function of the first kind I_nu(x), by power
/// series. nu >= 0, x > 0.
double log_bessel_i(double nu, double x);

/// Log normaliser of the d-dimensional vMF (Langevin) density:
/// (d/2-1) log k - (d/2) log 2pi - log I_{d/2-1}(k).
double log_c_d(std::size_t d, Kappa kappa = Kappa{});

/// kappa * cos(e, h) + log C_d(kappa), with the cosine term negated under
/// ScoreSign::kMinus.
double vmf_log_prob(std::span<const float> e, std::span<const double> h,
                    Kappa kappa = Kappa{}, ScoreSign sign = ScoreSign::kPlus);

/// Same score from a precomputed cosine; `log_norm` = log_c_d(d, kappa).
inline double vmf_from_cosine(double cos, double log_norm, Kappa kappa,
                              ScoreSign sign) noexcept {
  const double c = sign == ScoreSign::kPlus ? cos : -cos;
  return kappa.value() * c + log_norm;
}

}  // namespace conmt
