#include "endovid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace endovid {

GradCheckReport grad_check(const LossFn& loss, ParameterSet<double>& params,
                           const GradCheckOptions& options) {
    if (!(options.step > 0.0)) throw DomainError("grad_check step must be positive");

    GradCheckReport report;
    params.zero_grad();
    const auto root = loss(params);
    if (!std::isfinite(root.item())) {
        report.finite = false;
        report.failure = "loss is not finite at the base point";
        return report;
    }
    ag::backward(root);

    std::mt19937_64 rng(options.seed);
    const double h = options.step;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& tensor = params.tensor(p);
        const std::size_t n = tensor.numel();
        std::vector<double> analytic(n, 0.0);
        if (tensor.has_grad()) std::copy(tensor.grad().begin(), tensor.grad().end(), analytic.begin());

        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (n > options.samples_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.samples_per_tensor);
        }
        for (std::size_t c : coords) {
            auto w = tensor.mutable_values();
            const double orig = w[c];
            w[c] = orig + h;
            const double plus = loss(params).item();
            w[c] = orig - h;
            const double minus = loss(params).item();
            w[c] = orig;
            const std::string where = params.name(p) + "[" + std::to_string(c) + "]";
            if (!std::isfinite(plus) || !std::isfinite(minus)) {
                report.finite = false;
                report.failure = "non-finite loss while perturbing " + where;
                return report;
            }
            const double numeric = (plus - minus) / (2.0 * h);
            const double err = std::abs(analytic[c] - numeric) /
                               std::max({1.0, std::abs(analytic[c]), std::abs(numeric)});
            ++report.coordinates;
            if (err > report.max_rel_error || report.worst.empty()) {
                report.max_rel_error = std::max(err, report.max_rel_error);
                if (err >= report.max_rel_error) report.worst = where;
            }
        }
    }
    params.zero_grad();
    return report;
}

}  // namespace endovid
