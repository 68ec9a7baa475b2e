// Shared helpers private to the library implementation.
#pragma once

#include <string>
#include <vector>

#include "rbn/model.hpp"

namespace rbn::detail {

// Row-major flattening of a joint assignment over the given cardinalities.
inline long long ravel(const std::vector<int>& vals, const std::vector<int>& dims) {
  long long idx = 0;
  for (size_t i = 0; i < dims.size(); ++i) idx = idx * dims[i] + vals[i];
  return idx;
}

inline std::vector<int> unravel(long long idx, const std::vector<int>& dims) {
  std::vector<int> vals(dims.size());
  for (size_t i = dims.size(); i-- > 0;) {
    vals[i] = static_cast<int>(idx % dims[i]);
    idx /= dims[i];
  }
  return vals;
}

// Cardinalities of a transition's targets (categorical specs).
std::vector<int> target_dims(const RbnSpec& spec, const SpecIndex& index,
                             const Transition& t);

// Structural weight of transition `ti` (global index) given the source value.
double structural_weight(const RbnSpec& spec, const SpecIndex& index,
                         const std::string& source, int source_value, int ti);

// Fresh identifier: `base` if unused, else base2, base3, ...
std::string fresh_id(const RbnSpec& spec, const std::string& base);

}  // namespace rbn::detail
