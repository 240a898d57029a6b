#ifndef OSR_QUANTILE_HPP
#define OSR_QUANTILE_HPP

#include <vector>

namespace osr {

// Lower nearest-rank quantile: sort ascending and return the element at
// 1-based rank max(1, floor(q*n)). Deterministic, no interpolation; with
// distinct values at least a (1-q) fraction lies strictly above the result
// whenever q*n >= 1.
double lower_nearest_rank_quantile(std::vector<double> values, double q);

}  // namespace osr

#endif
