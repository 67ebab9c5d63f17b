#pragma once

#include "mapfdt/dt/model.hpp"

namespace mapfdt::dt {

// Central-difference verification of the analytic gradients, double precision.
// Samples coordinates per tensor, perturbs by +/-eps, and compares the loss
// slope against the recorded gradient.
struct GradCheckReport {
  struct Entry {
    std::string tensor;
    double max_rel_err = 0.0;
    int coords_checked = 0;
  };
  std::vector<Entry> entries;
  double max_rel_err = 0.0;
};

GradCheckReport gradcheck(DTModel<double>& model, const TokenBatch& batch,
                          int coords_per_tensor = 200, double eps = 1e-5, uint64_t seed = 0);

}  // namespace mapfdt::dt
