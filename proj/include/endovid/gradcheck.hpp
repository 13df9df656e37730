#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "endovid/params.hpp"

namespace endovid {

struct GradCheckOptions {
    double step = 1e-6;
    /// Coordinates sampled per parameter tensor; tensors smaller than this are checked fully.
    std::size_t samples_per_tensor = 4;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    bool finite = true;
    std::string worst;    // "<param>[<index>]" of the largest error
    std::string failure;  // set when a loss evaluation was not finite
};

using LossFn = std::function<ag::Tensor<double>(ParameterSet<double>&)>;

/// Compare backward() against central differences.
///
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|);
/// the report carries the maximum over all sampled coordinates.
GradCheckReport grad_check(const LossFn& loss, ParameterSet<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace endovid
