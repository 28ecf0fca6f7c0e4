#include "warpfit/design.hpp"

#include "warpfit/csv.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <map>

namespace warpfit::design {

namespace {

struct Tokenizer {
  std::string text;
  std::size_t pos = 0;

  void skip_space() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos])))
      ++pos;
  }
  char peek() {
    skip_space();
    return pos < text.size() ? text[pos] : '\0';
  }
  char take() {
    skip_space();
    return pos < text.size() ? text[pos++] : '\0';
  }
  std::string identifier() {
    skip_space();
    std::size_t start = pos;
    while (pos < text.size() &&
           (std::isalnum(static_cast<unsigned char>(text[pos])) ||
            text[pos] == '_' || text[pos] == '.'))
      ++pos;
    if (pos == start)
      throw ParseError("formula: expected a name at position " +
                       std::to_string(start));
    return text.substr(start, pos - start);
  }
};

using TermList = std::vector<Term>;

TermList parse_expr(Tokenizer& tok);

Term normalize(Term t) {
  std::sort(t.begin(), t.end(),
            [](const Factor& a, const Factor& b) { return a.name < b.name; });
  Term merged;
  for (const auto& f : t) {
    if (!merged.empty() && merged.back().name == f.name)
      merged.back().power += f.power;
    else
      merged.push_back(f);
  }
  return merged;
}

TermList interact(const TermList& a, const TermList& b) {
  TermList out;
  for (const auto& ta : a)
    for (const auto& tb : b) {
      Term t = ta;
      t.insert(t.end(), tb.begin(), tb.end());
      out.push_back(normalize(std::move(t)));
    }
  return out;
}

TermList parse_atom(Tokenizer& tok) {
  if (tok.peek() == '(') {
    tok.take();
    TermList inner = parse_expr(tok);
    if (tok.take() != ')') throw ParseError("formula: missing ')'");
    return inner;
  }
  if (tok.peek() == '1') {
    tok.take();
    return {};  // intercept is implicit
  }
  Factor f;
  f.name = tok.identifier();
  if (tok.peek() == '^') {
    tok.take();
    std::string digits;
    while (std::isdigit(static_cast<unsigned char>(tok.peek()))) digits += tok.take();
    if (digits.empty()) throw ParseError("formula: '^' needs an integer");
    f.power = std::stoi(digits);
    if (f.power < 1) throw ParseError("formula: power must be >= 1");
  }
  return {Term{f}};
}

TermList parse_prod(Tokenizer& tok) {
  TermList acc = parse_atom(tok);
  while (true) {
    const char c = tok.peek();
    if (c == '*') {
      tok.take();
      TermList rhs = parse_atom(tok);
      TermList crossed = interact(acc, rhs);
      acc.insert(acc.end(), rhs.begin(), rhs.end());
      acc.insert(acc.end(), crossed.begin(), crossed.end());
    } else if (c == ':') {
      tok.take();
      TermList rhs = parse_atom(tok);
      acc = interact(acc, rhs);
    } else {
      break;
    }
  }
  return acc;
}

TermList parse_expr(Tokenizer& tok) {
  TermList acc = parse_prod(tok);
  while (tok.peek() == '+') {
    tok.take();
    TermList rhs = parse_prod(tok);
    acc.insert(acc.end(), rhs.begin(), rhs.end());
  }
  return acc;
}

void append_unique(std::vector<Term>& terms, const TermList& add) {
  for (const auto& t : add) {
    if (t.empty()) continue;  // explicit '1'
    if (std::find(terms.begin(), terms.end(), t) == terms.end())
      terms.push_back(t);
  }
}

// Columns produced by one factor: a single numeric power column, or one
// dummy per non-reference level.
struct Expansion {
  std::vector<Vector> columns;
  std::vector<std::string> names;
};

Expansion expand_factor(const Factor& f, const CovariateTable& cov) {
  const int c = cov.column(f.name);
  if (c < 0) throw ParseError("formula: unknown covariate '" + f.name + "'");
  const auto& raw = cov.values[c];
  const int n = cov.rows();
  Expansion out;

  if (cov.numeric.count(f.name)) {
    Vector col(n);
    for (int i = 0; i < n; ++i) {
      if (raw[i].empty())
        throw MissingLevel("covariate '" + f.name + "' missing for id '" +
                           cov.ids[i] + "'");
      double v = csv::parse_double(raw[i], "covariate " + f.name);
      double acc = 1.0;
      for (int p = 0; p < f.power; ++p) acc *= v;
      col[i] = acc;
    }
    out.columns.push_back(std::move(col));
    out.names.push_back(f.power == 1
                            ? f.name
                            : f.name + "^" + std::to_string(f.power));
    return out;
  }

  if (f.power != 1)
    throw ParseError("formula: power applied to categorical '" + f.name + "'");
  std::vector<std::string> levels;
  for (int i = 0; i < n; ++i) {
    if (raw[i].empty())
      throw MissingLevel("covariate '" + f.name + "' missing for id '" +
                         cov.ids[i] + "'");
    if (std::find(levels.begin(), levels.end(), raw[i]) == levels.end())
      levels.push_back(raw[i]);
  }
  std::sort(levels.begin(), levels.end());
  for (std::size_t lv = 1; lv < levels.size(); ++lv) {
    Vector col(n);
    for (int i = 0; i < n; ++i) col[i] = raw[i] == levels[lv] ? 1.0 : 0.0;
    out.columns.push_back(std::move(col));
    out.names.push_back(f.name + "[" + levels[lv] + "]");
  }
  return out;
}

}  // namespace

Formula parse_formula(const std::string& text) {
  Tokenizer tok{text};
  Formula f;
  if (tok.peek() == '\0') throw ParseError("formula: empty");
  append_unique(f.terms, parse_expr(tok));
  if (tok.peek() != '\0')
    throw ParseError("formula: trailing input at position " +
                     std::to_string(tok.pos));
  return f;
}

int CovariateTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

FixedDesign build_fixed_design(const Formula& formula,
                               const CovariateTable& cov) {
  const int n = cov.rows();
  if (n == 0) throw Error("build_fixed_design: no rows");

  std::vector<Vector> cols{Vector::Ones(n)};
  std::vector<std::string> names{"1"};

  for (const Term& term : formula.terms) {
    std::vector<Expansion> parts;
    parts.reserve(term.size());
    for (const Factor& f : term) parts.push_back(expand_factor(f, cov));

    // Outer product over the factor expansions.
    std::vector<Vector> acc{Vector::Ones(n)};
    std::vector<std::string> acc_names{""};
    for (const auto& part : parts) {
      std::vector<Vector> next;
      std::vector<std::string> next_names;
      for (std::size_t i = 0; i < acc.size(); ++i)
        for (std::size_t j = 0; j < part.columns.size(); ++j) {
          next.push_back(acc[i].cwiseProduct(part.columns[j]));
          next_names.push_back(acc_names[i].empty()
                                   ? part.names[j]
                                   : acc_names[i] + ":" + part.names[j]);
        }
      acc = std::move(next);
      acc_names = std::move(next_names);
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
      cols.push_back(std::move(acc[i]));
      names.push_back(acc_names[i]);
    }
  }

  FixedDesign out;

  // Drop constant non-intercept columns first.
  std::vector<int> keep;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (c > 0) {
      const double lo = cols[c].minCoeff(), hi = cols[c].maxCoeff();
      if (hi - lo == 0.0) {
        out.warnings.push_back("dropped zero-variance column '" + names[c] +
                               "'");
        continue;
      }
    }
    keep.push_back(static_cast<int>(c));
  }

  // Drop aliased columns in arrival order (intercept, then formula order),
  // so the earlier column of an aliased pair survives.
  std::vector<Vector> basis;  // orthonormalized kept columns
  std::vector<int> kept;
  for (int c : keep) {
    Vector r = cols[c];
    const double norm0 = r.norm();
    for (int pass = 0; pass < 2; ++pass)
      for (const Vector& q : basis) r -= q.dot(r) * q;
    if (r.norm() > 1e-8 * std::max(norm0, 1.0)) {
      basis.push_back(r / r.norm());
      kept.push_back(c);
    } else {
      out.warnings.push_back("dropped aliased column '" + names[c] + "'");
    }
  }
  if (kept.empty())
    throw RankDeficientDesign("build_fixed_design: no usable columns");

  out.X.resize(n, kept.size());
  for (std::size_t c = 0; c < kept.size(); ++c) {
    out.X.col(c) = cols[kept[c]];
    out.column_names.push_back(names[kept[c]]);
  }
  return out;
}

Grouping group_levels(const std::vector<std::string>& values) {
  Grouping g;
  g.levels = values;
  std::sort(g.levels.begin(), g.levels.end());
  g.levels.erase(std::unique(g.levels.begin(), g.levels.end()),
                 g.levels.end());
  g.index.reserve(values.size());
  for (const auto& v : values) {
    const auto it = std::lower_bound(g.levels.begin(), g.levels.end(), v);
    g.index.push_back(static_cast<int>(it - g.levels.begin()));
  }
  return g;
}

}  // namespace warpfit::design
