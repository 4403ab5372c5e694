#include "gatenas/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace gatenas {

bool gate_saturated(double relaxed_mask)
{
    return relaxed_mask * (1.0 - relaxed_mask) < 1e-6;
}

GradcheckReport finite_difference_check(const std::function<double()>& objective, std::vector<Coordinate>& coords,
                                        double step, const std::function<std::vector<char>()>& pattern)
{
    GradcheckReport report;
    std::vector<char> base;
    if (pattern) {
        objective();
        base = pattern();
    }
    for (auto& c : coords) {
        if (c.saturated) {
            ++report.skipped;
            report.warnings.push_back("skipped saturated coordinate " + c.label);
            continue;
        }
        const double original = *c.value;
        *c.value = original + step;
        const double up = objective();
        const bool kink_up = pattern && pattern() != base;
        *c.value = original - step;
        const double down = objective();
        const bool kink_down = pattern && pattern() != base;
        *c.value = original;
        if (kink_up || kink_down) {
            ++report.kinks;
            report.warnings.push_back("skipped " + c.label + ": step crosses a kink");
            continue;
        }
        const double fd = (up - down) / (2.0 * step);
        if (!std::isfinite(fd) || !std::isfinite(c.analytic)) {
            ++report.nan_count;
            continue;
        }
        const double denom = std::max({std::abs(c.analytic), std::abs(fd), kGradcheckFloor});
        const double err = std::abs(c.analytic - fd) / denom;
        ++report.checked;
        if (err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst = c.label;
            report.worst_analytic = c.analytic;
            report.worst_numeric = fd;
        }
    }
    return report;
}

} // namespace gatenas
