#pragma once

#include "warpfit/types.hpp"

#include <set>
#include <string>
#include <vector>

namespace warpfit::design {

// One multiplicative factor of a model term; power > 1 only for numeric
// covariates (break-count polynomials).
struct Factor {
  std::string name;
  int power = 1;

  bool operator==(const Factor& o) const {
    return name == o.name && power == o.power;
  }
};

using Term = std::vector<Factor>;  // sorted by name; empty = intercept

struct Formula {
  std::vector<Term> terms;  // intercept implicit, not listed
};

// Wilkinson-style fixed-effects formula:
//   a + b        main effects
//   a:b          interaction
//   a*b          a + b + a:b (distributes over parenthesized sums)
//   B2^2         numeric covariate raised to a power
//   1            intercept only
Formula parse_formula(const std::string& text);

struct CovariateTable {
  std::vector<std::string> ids;  // one row per curve
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> values;  // [column][row]
  std::set<std::string> numeric;                 // numeric column names

  int column(const std::string& name) const;
  int rows() const { return static_cast<int>(ids.size()); }
};

struct FixedDesign {
  Matrix X;  // N x k, intercept first, full column rank
  std::vector<std::string> column_names;
  std::vector<std::string> warnings;  // dropped columns
};

// Dummy-codes categoricals (first level in sort order is the reference),
// expands interactions as products, drops zero-variance and aliased
// columns with a warning.
FixedDesign build_fixed_design(const Formula& formula,
                               const CovariateTable& covariates);

struct Grouping {
  std::vector<int> index;           // level index per row
  std::vector<std::string> levels;  // sorted level names
};

Grouping group_levels(const std::vector<std::string>& values);

}  // namespace warpfit::design
