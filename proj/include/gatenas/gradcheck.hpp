#ifndef GATENAS_GRADCHECK_HPP
#define GATENAS_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

namespace gatenas {

// A scalar the objective depends on. The check perturbs *value in place and
// restores it afterwards.
struct Coordinate {
    std::string label;
    double* value = nullptr;
    double analytic = 0.0;
    // Set for gate coordinates whose sigmoid is saturated; these are skipped
    // because finite differences there measure rounding, not slope.
    bool saturated = false;
};

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::string worst;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    int checked = 0;
    int skipped = 0;
    int kinks = 0;
    int nan_count = 0;
    std::vector<std::string> warnings;
};

inline constexpr double kGradcheckFloor = 1e-8;

// Central differences (f(x+h) - f(x-h)) / 2h against each coordinate's
// analytic value; error is |a - fd| / max(|a|, |fd|, kGradcheckFloor).
// When `pattern` is given it is called after each objective evaluation and
// returns the on/off state of every nonsmooth unit; a coordinate whose
// stencil changes that state straddles a kink and is skipped.
GradcheckReport finite_difference_check(const std::function<double()>& objective, std::vector<Coordinate>& coords,
                                        double step,
                                        const std::function<std::vector<char>()>& pattern = {});

// True when m(1-m) is too small for a finite difference in the gate logit to
// be meaningful.
bool gate_saturated(double relaxed_mask);

} // namespace gatenas

#endif // GATENAS_GRADCHECK_HPP
