#include "osr/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace osr {

double lower_nearest_rank_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile of empty set");
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile fraction outside [0,1]");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::max(1.0, std::floor(q * n)));
    rank = std::min(rank, values.size());
    return values[rank - 1];
}

}  // namespace osr
