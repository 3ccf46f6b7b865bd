#pragma once

// Central finite-difference gradient oracle for the test suites. Kept
// independent of the tape's backward path: it only calls a user-supplied
// scalar function of flat parameter values.

#include <cmath>
#include <functional>
#include <vector>

#include "ilab/tensor.hpp"

namespace ilab_test {

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// f: evaluates the scalar objective given the current contents of x.
// Perturbs each coordinate (or a sampled subset) centrally with the given
// step and compares against analytic[i].
inline FdReport fd_compare(std::vector<double>& x, const std::vector<double>& analytic,
                           const std::function<double()>& f, double step = 1e-5,
                           const std::vector<std::size_t>* coords = nullptr) {
  FdReport rep;
  std::vector<std::size_t> all;
  if (!coords) {
    all.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) all[i] = i;
    coords = &all;
  }
  for (std::size_t i : *coords) {
    const double keep = x[i];
    x[i] = keep + step;
    const double fp = f();
    x[i] = keep - step;
    const double fm = f();
    x[i] = keep;
    const double fd = (fp - fm) / (2.0 * step);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
    rep.max_rel_err = std::max(rep.max_rel_err, std::abs(fd - analytic[i]) / denom);
    rep.checked++;
  }
  return rep;
}

}  // namespace ilab_test
