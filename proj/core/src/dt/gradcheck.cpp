#include "mapfdt/dt/gradcheck.hpp"

#include <cmath>

namespace mapfdt::dt {

GradCheckReport gradcheck(DTModel<double>& model, const TokenBatch& batch, int coords_per_tensor,
                          double eps, uint64_t seed) {
  if (model.config().dropout != 0.0)
    throw std::invalid_argument("gradcheck requires dropout 0 (stochastic losses have no "
                                "single finite-difference slope)");
  model.params().zero_grads();
  model.forward_backward(batch);
  std::vector<std::vector<double>> analytic;
  for (const Tensor<double>& t : model.params().tensors) analytic.push_back(t.g);

  GradCheckReport report;
  Rng rng(seed);
  auto& tensors = model.params().tensors;
  for (size_t ti = 0; ti < tensors.size(); ++ti) {
    Tensor<double>& t = tensors[ti];
    GradCheckReport::Entry entry;
    entry.tensor = t.name;

    std::vector<size_t> coords;
    if (int(t.size()) <= coords_per_tensor) {
      coords.resize(t.size());
      for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      coords.reserve(size_t(coords_per_tensor));
      for (int i = 0; i < coords_per_tensor; ++i)
        coords.push_back(size_t(rng.uniform_below(t.size())));
    }

    auto central = [&](size_t idx, double h) {
      const double original = t.v[idx];
      t.v[idx] = original + h;
      const double loss_plus = model.forward(batch).loss;
      t.v[idx] = original - h;
      const double loss_minus = model.forward(batch).loss;
      t.v[idx] = original;
      return (loss_plus - loss_minus) / (2.0 * h);
    };
    auto rel = [](double a, double n) {
      return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
    };

    for (size_t idx : coords) {
      const double a = analytic[ti][idx];
      const double n1 = central(idx, eps);
      double err = rel(a, n1);
      if (err > 1e-5) {
        // High-curvature coordinates carry O(eps^2) truncation error that can
        // exceed the tolerance even for a correct gradient. Shrinking eps 8x
        // shrinks truncation 64x; demand at least a 16x drop in the
        // disagreement before trusting the refined estimate. A genuinely
        // wrong analytic gradient converges to a fixed nonzero gap and cannot
        // satisfy this.
        const double n2 = central(idx, eps / 8.0);
        if (std::abs(a - n2) <= std::abs(a - n1) / 16.0) err = rel(a, n2);
      }
      entry.max_rel_err = std::max(entry.max_rel_err, err);
      ++entry.coords_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mapfdt::dt
