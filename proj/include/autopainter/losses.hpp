#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "autopainter/errors.hpp"
#include "autopainter/tensor.hpp"

namespace autopainter {

struct LossWeights {
  double w_p = 100.0;
  double w_f = 1.0;
  double w_G = 1.0;
  double w_tv = 1e-4;

  void validate() const {
    for (double w : {w_p, w_f, w_G, w_tv})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("loss weights must be finite and >= 0");
    if (w_p == 0.0 && w_f == 0.0 && w_G == 0.0 && w_tv == 0.0)
      throw ParameterError("loss weights: at least one weight must be > 0");
  }
};

struct LossParts {
  double pixel = 0.0;
  double feature = 0.0;
  double adversarial = 0.0;
  double tv = 0.0;
};

/// Which form of the generator's adversarial term to optimise.
enum class GeneratorLossForm {
  kSaturating,     // mean log(1 - D(x, G(x,z)))
  kNonSaturating,  // -mean log D(x, G(x,z))
};

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kTvEpsilon = 1e-8;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw LossError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                    shape_string(b.shape()));
}

/// Mean absolute difference (L1, averaged over every element).
template <typename T>
T pixel_loss(const Tensor<T>& y, const Tensor<T>& g) {
  require_same_shape(y, g, "pixel_loss");
  T sum{0};
  for (std::size_t i = 0; i < y.size(); ++i) sum += std::abs(y[i] - g[i]);
  return sum / T(y.size());
}

/// d pixel_loss / d g (subgradient 0 where y == g).
template <typename T>
Tensor<T> pixel_loss_grad(const Tensor<T>& y, const Tensor<T>& g) {
  require_same_shape(y, g, "pixel_loss");
  Tensor<T> d(g.shape());
  const T inv = T(1) / T(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) d[i] = g[i] > y[i] ? inv : (g[i] < y[i] ? -inv : T(0));
  return d;
}

template <typename T>
T mean_squared_difference(const Tensor<T>& a, const Tensor<T>& b) {
  T sum{0};
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return sum / T(a.size());
}

/// Mean squared distance between phi(y) and phi(g).
template <typename T, typename Extractor>
T feature_loss(const Extractor& phi, const Tensor<T>& y, const Tensor<T>& g) {
  require_same_shape(y, g, "feature_loss");
  return mean_squared_difference(phi.forward(y), phi.forward(g));
}

template <typename T>
struct ValueAndGrad {
  T value;
  Tensor<T> grad;
};

/// feature_loss and its gradient with respect to g; `phi_y` may be precomputed features of y.
template <typename T, typename Extractor>
ValueAndGrad<T> feature_loss_with_grad(const Extractor& phi, const Tensor<T>& phi_y, const Tensor<T>& g) {
  typename Extractor::Tape tape;
  const Tensor<T> phi_g = phi.forward(g, &tape);
  require_same_shape(phi_y, phi_g, "feature_loss");
  Tensor<T> d(phi_g.shape());
  const T scale = T(2) / T(phi_g.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = scale * (phi_g[i] - phi_y[i]);
  return {mean_squared_difference(phi_y, phi_g), phi.backward(tape, d)};
}

template <typename T>
void require_tv_size(const Tensor<T>& g) {
  if (g.rank() != 4 || g.dim(2) < 2 || g.dim(3) < 2)
    throw LossError("tv_loss: image must be NCHW with H, W >= 2, got " + shape_string(g.shape()));
}

/// Mean over (n, c, i < H-1, j < W-1) of sqrt(dy^2 + dx^2 + eps).
template <typename T>
T tv_loss(const Tensor<T>& g) {
  require_tv_size(g);
  const std::int64_t n = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
  T sum{0};
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i + 1 < h; ++i)
        for (std::int64_t j = 0; j + 1 < w; ++j) {
          const T down = g.at(b, ch, i + 1, j) - g.at(b, ch, i, j);
          const T right = g.at(b, ch, i, j + 1) - g.at(b, ch, i, j);
          sum += std::sqrt(down * down + right * right + T(kTvEpsilon));
        }
  return sum / T(n * c * (h - 1) * (w - 1));
}

template <typename T>
Tensor<T> tv_loss_grad(const Tensor<T>& g) {
  require_tv_size(g);
  const std::int64_t n = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
  const T inv = T(1) / T(n * c * (h - 1) * (w - 1));
  Tensor<T> d(g.shape());
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i + 1 < h; ++i)
        for (std::int64_t j = 0; j + 1 < w; ++j) {
          const T down = g.at(b, ch, i + 1, j) - g.at(b, ch, i, j);
          const T right = g.at(b, ch, i, j + 1) - g.at(b, ch, i, j);
          const T s = std::sqrt(down * down + right * right + T(kTvEpsilon));
          d.at(b, ch, i + 1, j) += inv * down / s;
          d.at(b, ch, i, j + 1) += inv * right / s;
          d.at(b, ch, i, j) -= inv * (down + right) / s;
        }
  return d;
}

template <typename T>
T clamp_prob(T p) {
  return std::clamp(p, T(kProbClamp), T(1) - T(kProbClamp));
}

template <typename T>
bool prob_is_clamped(T p) {
  return p < T(kProbClamp) || p > T(1) - T(kProbClamp);
}

/// Generator adversarial term over a probability grid (as written: mean log(1 - D)).
template <typename T>
T adversarial_generator_loss(const Tensor<T>& fake_grid, GeneratorLossForm form = GeneratorLossForm::kSaturating) {
  T sum{0};
  for (std::size_t i = 0; i < fake_grid.size(); ++i) {
    const T p = clamp_prob(fake_grid[i]);
    sum += form == GeneratorLossForm::kSaturating ? std::log(T(1) - p) : -std::log(p);
  }
  return sum / T(fake_grid.size());
}

template <typename T>
Tensor<T> adversarial_generator_loss_grad(const Tensor<T>& fake_grid,
                                          GeneratorLossForm form = GeneratorLossForm::kSaturating) {
  Tensor<T> d(fake_grid.shape());
  const T inv = T(1) / T(fake_grid.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const T p = fake_grid[i];
    if (prob_is_clamped(p)) continue;
    d[i] = form == GeneratorLossForm::kSaturating ? -inv / (T(1) - p) : -inv / p;
  }
  return d;
}

/// Negated cGAN value: -(mean log D(x,y) + mean log(1 - D(x,G(x,z)))).
template <typename T>
T discriminator_loss(const Tensor<T>& real_grid, const Tensor<T>& fake_grid) {
  T real{0}, fake{0};
  for (std::size_t i = 0; i < real_grid.size(); ++i) real += std::log(clamp_prob(real_grid[i]));
  for (std::size_t i = 0; i < fake_grid.size(); ++i) fake += std::log(T(1) - clamp_prob(fake_grid[i]));
  return -(real / T(real_grid.size()) + fake / T(fake_grid.size()));
}

template <typename T>
struct GridGrads {
  Tensor<T> real;
  Tensor<T> fake;
};

template <typename T>
GridGrads<T> discriminator_loss_grad(const Tensor<T>& real_grid, const Tensor<T>& fake_grid) {
  GridGrads<T> g{Tensor<T>(real_grid.shape()), Tensor<T>(fake_grid.shape())};
  const T inv_r = T(1) / T(real_grid.size()), inv_f = T(1) / T(fake_grid.size());
  for (std::size_t i = 0; i < real_grid.size(); ++i)
    if (!prob_is_clamped(real_grid[i])) g.real[i] = -inv_r / real_grid[i];
  for (std::size_t i = 0; i < fake_grid.size(); ++i)
    if (!prob_is_clamped(fake_grid[i])) g.fake[i] = inv_f / (T(1) - fake_grid[i]);
  return g;
}

/// Logit-space gradients of the adversarial terms: the sigmoid and log are fused so the
/// gradient never vanishes through probability clamping. `target_real` selects -log(p) versus
/// -log(1-p); scale -1 with target_real = false gives the saturating generator form.
template <typename T>
Tensor<T> bce_logit_grad(const Tensor<T>& probs, bool target_real, T scale) {
  Tensor<T> d(probs.shape());
  const T inv = scale / T(probs.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = inv * (target_real ? probs[i] - T(1) : probs[i]);
  return d;
}

/// w_p L_p + w_f L_f + w_G L_G + w_tv L_tv.
inline double composite_loss(const LossWeights& weights, const LossParts& parts) {
  weights.validate();
  const std::array<std::pair<const char*, double>, 4> named{
      {{"L_p", parts.pixel}, {"L_f", parts.feature}, {"L_G", parts.adversarial}, {"L_tv", parts.tv}}};
  for (const auto& [name, value] : named)
    if (!std::isfinite(value)) throw LossError(std::string("composite_loss: non-finite term ") + name);
  return weights.w_p * parts.pixel + weights.w_f * parts.feature + weights.w_G * parts.adversarial +
         weights.w_tv * parts.tv;
}

}  // namespace autopainter
