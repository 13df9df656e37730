#pragma once

// Gradient checks over every op class, the model pieces and the full objective,
// all in double precision on the tiny configuration.

#include <string>
#include <vector>

#include "endovid/gradcheck.hpp"

namespace endovid {

struct GradCheckSuiteOptions {
    double threshold = 1e-4;
    GradCheckOptions check;
    bool inject_fault = false;       // add an op whose backward is deliberately wrong
    std::vector<std::string> only;   // item names to run; empty runs everything
};

struct GradCheckItem {
    std::string name;
    GradCheckReport report;
    bool passed = false;
};

std::vector<std::string> gradcheck_item_names();

std::vector<GradCheckItem> run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

/// x^3 with a backward that returns 2x^2; used to prove the harness notices.
ag::Tensor<double> faulty_cube(const ag::Tensor<double>& x);

}  // namespace endovid
