#pragma once

// Central finite-difference oracles for the model and loss gradients.

#include <algorithm>
#include <cmath>

#include "grod/loss.hpp"
#include "grod/transformer.hpp"

namespace grod::oracle {

/// Three-point: (f(x+h) - f(x-h)) / 2h. Five-point: the fourth-order central
/// stencil, whose roundoff floor sits well below the three-point one.
enum class Stencil { ThreePoint, FivePoint };

template <typename F>
double central_difference(F&& f, double h, Stencil stencil) {
  if (stencil == Stencil::ThreePoint) return (f(h) - f(-h)) / (2.0 * h);
  return (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
}

/// Tiny model with d_in = 2, depth 2 and K = 2 at the given token count,
/// weights uniform in (-0.5, 0.5) and biases randomized too.
inline TransformerModel random_tiny_model(int tau, CounterRng& rng) {
  const Budget budget{3, 2, 2, 2, 4};
  TransformerModel m = make_model(2, tau, 2, budget, 2);
  for (auto& [name, p] : parameters(m)) {
    for (Eigen::Index i = 0; i < p->size(); ++i) p->data()[i] = rng.uniform(-0.5, 0.5);
  }
  return m;
}

/// Compares backward() against central differences of w . logits for a
/// random input x and upstream vector w. Entries where both gradients are
/// below 1e-8 in magnitude are skipped.
inline GradCheck check_model_gradient(const TransformerModel& model, CounterRng& rng,
                                      Stencil stencil = Stencil::FivePoint, double step = 1e-4) {
  Matrix x(model.d_in, model.tau);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  Vector w(model.outputs());
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.normal();

  TransformerModel grads = zeros_like(model);
  backward(model, forward_cached(model, x), w, grads);

  GradCheck out;
  TransformerModel probe = model;
  auto probe_params = parameters(probe);
  const auto grad_params = parameters(static_cast<const TransformerModel&>(grads));
  for (std::size_t t = 0; t < probe_params.size(); ++t) {
    Matrix& p = *probe_params[t].second;
    const Matrix& g = *grad_params[t].second;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double keep = p.data()[i];
      const double numeric = central_difference(
          [&](double dx) {
            p.data()[i] = keep + dx;
            return w.dot(forward(probe, x).logits);
          },
          step, stencil);
      p.data()[i] = keep;
      const double analytic = g.data()[i];
      if (std::abs(analytic) < 1e-8 && std::abs(numeric) < 1e-8) {
        ++out.skipped;
        continue;
      }
      ++out.checked;
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic, numeric));
    }
  }
  return out;
}

/// Random probability vector over K+1 entries: one-hot or soft.
inline Vector random_label(Eigen::Index outputs, CounterRng& rng) {
  if (rng.uniform() < 0.5) return one_hot(static_cast<int>(rng.below(static_cast<std::uint64_t>(outputs))) + 1, outputs);
  Vector y(outputs);
  for (Eigen::Index i = 0; i < outputs; ++i) y(i) = rng.uniform() + 1e-3;
  return y / y.sum();
}

inline GradCheck check_loss_gradient(const Vector& y, const Vector& logits, double gamma,
                                     Stencil stencil = Stencil::FivePoint, double step = 1e-4) {
  const Vector g = loss_grad_logits(y, logits, gamma);
  GradCheck out;
  Vector probe = logits;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double numeric = central_difference(
        [&](double dx) {
          probe(i) = logits(i) + dx;
          return loss_total(y, probe, gamma);
        },
        step, stencil);
    probe(i) = logits(i);
    if (std::abs(g(i)) < 1e-8 && std::abs(numeric) < 1e-8) {
      ++out.skipped;
      continue;
    }
    ++out.checked;
    out.max_rel_error = std::max(out.max_rel_error, relative_error(g(i), numeric));
  }
  return out;
}

}  // namespace grod::oracle
