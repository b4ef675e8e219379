#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lvm/common.hpp"

namespace lvm::sem {

enum class ParamKind { loading, regression, latent_covariance, residual_covariance, residual_variance, latent_variance };

inline std::string to_string(ParamKind k) {
  switch (k) {
    case ParamKind::loading: return "loading";
    case ParamKind::regression: return "regression";
    case ParamKind::latent_covariance: return "latent_covariance";
    case ParamKind::residual_covariance: return "residual_covariance";
    case ParamKind::residual_variance: return "residual_variance";
    case ParamKind::latent_variance: return "latent_variance";
  }
  return "?";
}

/// One row of the parameter table. Matrix coordinates: loading -> Lambda(row,
/// col); regression -> B(row = outcome, col = predictor); latent variance and
/// covariance -> Psi(row, col); residual variance and covariance ->
/// Theta(row, col).
struct Parameter {
  std::string lhs;
  std::string op;  // "=~", "~", "~~"
  std::string rhs;
  ParamKind kind = ParamKind::loading;
  int row = 0;
  int col = 0;
  bool free = true;
  double value = kNaN;  // fixed value, or start value when free
  int index = -1;       // position in the free vector
  int line = 0;
};

struct Term {
  std::string name;
  std::optional<double> fixed;  // numeric prefix
  bool force_free = false;      // NA prefix
  int column = 0;
};

struct Statement {
  std::string lhs;
  std::string op;
  std::vector<Term> rhs;
  int line = 0;
  int column = 0;
};

struct Edge {
  std::string from;
  std::string to;
};

/// Parsed model: factor and observed-variable lists plus the parameter
/// table, with the identification defaults applied.
struct SemModel {
  std::vector<std::string> factors;
  std::vector<std::string> observed;
  std::map<std::string, std::vector<std::string>> indicators;  // per factor, declaration order
  std::vector<Edge> regressions;                                // predictor -> outcome
  std::vector<std::pair<std::string, std::string>> covariances; // declared '~~' between distinct names
  std::vector<Parameter> parameters;
  std::vector<Statement> statements;
  bool unit_variance = false;

  int n_observed() const { return static_cast<int>(observed.size()); }
  int n_factors() const { return static_cast<int>(factors.size()); }
  int n_free() const {
    int n = 0;
    for (const auto& p : parameters)
      if (p.free) ++n;
    return n;
  }
  int n_moments() const { return n_observed() * (n_observed() + 1) / 2; }
  int df() const { return n_moments() - n_free(); }

  int factor_index(std::string_view name) const {
    for (std::size_t i = 0; i < factors.size(); ++i)
      if (factors[i] == name) return static_cast<int>(i);
    return -1;
  }
  int observed_index(std::string_view name) const {
    for (std::size_t i = 0; i < observed.size(); ++i)
      if (observed[i] == name) return static_cast<int>(i);
    return -1;
  }
  bool is_factor(std::string_view name) const { return factor_index(name) >= 0; }
  bool exogenous(std::string_view factor) const {
    return std::none_of(regressions.begin(), regressions.end(), [&](const Edge& e) { return e.to == factor; });
  }
  Vector start_values() const {
    Vector x(n_free());
    for (const auto& p : parameters)
      if (p.free) x(p.index) = p.value;
    return x;
  }
};

struct ModelOptions {
  /// Identify latent scales by unit variance instead of unit first loading.
  bool unit_variance = false;
  /// Add free covariances between every pair of exogenous factors not
  /// already connected.
  bool auto_cov_latent = false;
  /// When given, indicators and observed names must appear in this list.
  std::optional<std::vector<std::string>> known_variables;
};

namespace detail {

inline bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
inline bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

class LineParser {
 public:
  LineParser(std::string_view text, int line) : s_(text), line_(line) {}

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool at_end() {
    skip_ws();
    return pos_ >= s_.size();
  }
  int column() const { return static_cast<int>(pos_) + 1; }
  bool starts_number() const {
    if (pos_ >= s_.size()) return false;
    const auto digit = [&](std::size_t i) { return i < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i])); };
    const char c = s_[pos_];
    if (digit(pos_)) return true;
    if (c == '.') return digit(pos_ + 1);
    if (c == '-' || c == '+') return digit(pos_ + 1) || (pos_ + 2 < s_.size() && s_[pos_ + 1] == '.' && digit(pos_ + 2));
    return false;
  }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_, column()); }

  std::string identifier() {
    skip_ws();
    if (pos_ >= s_.size() || !ident_start(s_[pos_])) fail("expected a variable name");
    const std::size_t b = pos_;
    while (pos_ < s_.size() && ident_char(s_[pos_])) ++pos_;
    return std::string(s_.substr(b, pos_ - b));
  }

  std::string op() {
    skip_ws();
    for (std::string_view o : {"=~", "~~", "~"})
      if (s_.substr(pos_, o.size()) == o) {
        pos_ += o.size();
        return std::string(o);
      }
    fail("expected an operator (=~, ~ or ~~)");
  }

  Term term() {
    skip_ws();
    Term t;
    if (s_.substr(pos_, 2) == "NA") {
      std::size_t q = pos_ + 2;
      while (q < s_.size() && std::isspace(static_cast<unsigned char>(s_[q]))) ++q;
      if (q < s_.size() && s_[q] == '*') {
        pos_ = q + 1;
        t.force_free = true;
      }
    }
    if (!t.force_free && starts_number()) {
      std::size_t q = pos_;
      if (s_[q] == '+') ++q;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(s_.data() + q, s_.data() + s_.size(), v);
      if (ec != std::errc()) fail("malformed numeric modifier");
      pos_ = static_cast<std::size_t>(ptr - s_.data());
      skip_ws();
      if (pos_ >= s_.size() || s_[pos_] != '*') fail("expected '*' after numeric modifier");
      ++pos_;
      t.fixed = v;
    }
    skip_ws();
    t.column = column();
    t.name = identifier();
    return t;
  }

  bool consume(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  int line_;
};

inline bool reaches(const std::vector<Edge>& edges, const std::string& from, const std::string& to) {
  std::vector<std::string> stack{from};
  std::set<std::string> seen;
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (n == to) return true;
    if (!seen.insert(n).second) continue;
    for (const auto& e : edges)
      if (e.from == n) stack.push_back(e.to);
  }
  return false;
}

}  // namespace detail

/// Parse the model language:
///   F =~ x1 + x2 + x3     measurement (first loading fixed to 1)
///   F ~ G + H             regression of F on G and H
///   F ~~ G                covariance;  F ~~ F  variance
/// `c*name` fixes a coefficient at c, `NA*name` frees it; '#' starts a comment.
inline SemModel parse_model(std::string_view text, const ModelOptions& opt = {}) {
  SemModel m;
  m.unit_variance = opt.unit_variance;
  std::map<std::string, std::pair<int, int>> claimed;  // indicator -> (line, column)

  // Pass 1: statements.
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    if (auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    detail::LineParser lp(line, line_no);
    if (!lp.at_end()) {
      Statement st;
      st.line = line_no;
      lp.skip_ws();
      st.column = lp.column();
      st.lhs = lp.identifier();
      st.op = lp.op();
      do {
        st.rhs.push_back(lp.term());
      } while (lp.consume('+'));
      if (!lp.at_end()) lp.fail("unexpected text after term");
      m.statements.push_back(std::move(st));
    }
    if (end == text.size()) break;
    start = end + 1;
  }

  // Factors are the left-hand sides of measurement statements.
  for (const auto& st : m.statements)
    if (st.op == "=~" && !m.is_factor(st.lhs)) m.factors.push_back(st.lhs);

  auto add_observed = [&](const std::string& name, int line, int col) {
    if (opt.known_variables &&
        std::find(opt.known_variables->begin(), opt.known_variables->end(), name) == opt.known_variables->end())
      throw ParseError("unknown variable '" + name + "'", line, col);
    if (m.observed_index(name) < 0) m.observed.push_back(name);
  };

  for (const auto& st : m.statements) {
    if (st.op != "=~") continue;
    for (const auto& t : st.rhs) {
      if (m.is_factor(t.name))
        throw ParseError("'" + t.name + "' is a factor and cannot be an indicator", st.line, t.column);
      if (auto it = claimed.find(t.name); it != claimed.end())
        throw ParseError("indicator '" + t.name + "' already claimed by another factor (line " +
                             std::to_string(it->second.first) + ")",
                         st.line, t.column);
      claimed[t.name] = {st.line, t.column};
      add_observed(t.name, st.line, t.column);
      m.indicators[st.lhs].push_back(t.name);
    }
  }

  // Structural and covariance statements.
  for (const auto& st : m.statements) {
    if (st.op == "~") {
      if (!m.is_factor(st.lhs)) throw ParseError("regression outcome '" + st.lhs + "' is not a factor", st.line, st.column);
      for (const auto& t : st.rhs) {
        if (!m.is_factor(t.name))
          throw ParseError("regression predictor '" + t.name + "' is not a factor", st.line, t.column);
        if (t.name == st.lhs) throw ParseError("factor regressed on itself", st.line, t.column);
        if (detail::reaches(m.regressions, st.lhs, t.name))
          throw ParseError("regression " + t.name + " -> " + st.lhs + " creates a cycle", st.line, t.column);
        m.regressions.push_back({t.name, st.lhs});
      }
    } else if (st.op == "~~") {
      for (const auto& t : st.rhs) {
        const bool lf = m.is_factor(st.lhs), rf = m.is_factor(t.name);
        if (lf != rf)
          throw ParseError("covariance between a factor and an observed variable is not supported", st.line,
                           t.column);
        if (!lf) {
          add_observed(st.lhs, st.line, st.column);
          add_observed(t.name, st.line, t.column);
        }
        if (t.name != st.lhs) m.covariances.emplace_back(st.lhs, t.name);
      }
    }
  }

  // Parameter table.
  auto fidx = [&](const std::string& n) { return m.factor_index(n); };
  auto oidx = [&](const std::string& n) { return m.observed_index(n); };
  std::vector<Parameter>& P = m.parameters;

  for (const auto& st : m.statements) {
    if (st.op != "=~") continue;
    bool first = true;
    for (const auto& t : st.rhs) {
      Parameter p{st.lhs, "=~", t.name, ParamKind::loading, oidx(t.name), fidx(st.lhs), true, kNaN, -1, st.line};
      if (t.fixed) {
        p.free = false;
        p.value = *t.fixed;
      } else if (first && !opt.unit_variance && !t.force_free) {
        p.free = false;
        p.value = 1.0;
      }
      first = false;
      P.push_back(p);
    }
  }
  for (const auto& st : m.statements) {
    if (st.op != "~") continue;
    for (const auto& t : st.rhs) {
      Parameter p{st.lhs, "~", t.name, ParamKind::regression, fidx(st.lhs), fidx(t.name), true, kNaN, -1, st.line};
      if (t.fixed) {
        p.free = false;
        p.value = *t.fixed;
      }
      P.push_back(p);
    }
  }
  auto find_param = [&](ParamKind kind, int r, int c) -> Parameter* {
    for (auto& p : P)
      if (p.kind == kind && ((p.row == r && p.col == c) || (p.row == c && p.col == r))) return &p;
    return nullptr;
  };
  for (const auto& st : m.statements) {
    if (st.op != "~~") continue;
    for (const auto& t : st.rhs) {
      const bool lat = m.is_factor(st.lhs);
      const int r = lat ? fidx(st.lhs) : oidx(st.lhs);
      const int c = lat ? fidx(t.name) : oidx(t.name);
      ParamKind kind;
      if (r == c)
        kind = lat ? ParamKind::latent_variance : ParamKind::residual_variance;
      else
        kind = lat ? ParamKind::latent_covariance : ParamKind::residual_covariance;
      if (find_param(kind, r, c)) throw ParseError("duplicate (co)variance statement", st.line, t.column);
      Parameter p{st.lhs, "~~", t.name, kind, std::max(r, c), std::min(r, c), true, kNaN, -1, st.line};
      if (t.fixed) {
        p.free = false;
        p.value = *t.fixed;
      }
      P.push_back(p);
    }
  }
  if (opt.auto_cov_latent) {
    for (int a = 0; a < m.n_factors(); ++a)
      for (int b = a + 1; b < m.n_factors(); ++b) {
        const auto& fa = m.factors[static_cast<std::size_t>(a)];
        const auto& fb = m.factors[static_cast<std::size_t>(b)];
        if (!m.exogenous(fa) || !m.exogenous(fb)) continue;
        if (find_param(ParamKind::latent_covariance, b, a)) continue;
        P.push_back({fa, "~~", fb, ParamKind::latent_covariance, b, a, true, kNaN, -1, 0});
        m.covariances.emplace_back(fa, fb);
      }
  }
  for (int i = 0; i < m.n_observed(); ++i)
    if (!find_param(ParamKind::residual_variance, i, i)) {
      const auto& n = m.observed[static_cast<std::size_t>(i)];
      P.push_back({n, "~~", n, ParamKind::residual_variance, i, i, true, kNaN, -1, 0});
    }
  for (int f = 0; f < m.n_factors(); ++f)
    if (!find_param(ParamKind::latent_variance, f, f)) {
      const auto& n = m.factors[static_cast<std::size_t>(f)];
      Parameter p{n, "~~", n, ParamKind::latent_variance, f, f, true, kNaN, -1, 0};
      if (opt.unit_variance) {
        p.free = false;
        p.value = 1.0;
      }
      P.push_back(p);
    }
  int k = 0;
  for (auto& p : P)
    if (p.free) p.index = k++;
  return m;
}

/// Ensure every observed variable of the model is a column of the data.
inline void validate_against(const SemModel& m, const std::vector<std::string>& columns) {
  for (const auto& o : m.observed)
    if (std::find(columns.begin(), columns.end(), o) == columns.end())
      throw ModelError("unknown indicator '" + o + "' (not a data column)");
}

/// Render a model back to the model language (one statement per line).
inline std::string to_syntax(const SemModel& m) {
  std::ostringstream os;
  auto fmt = [](const Parameter& p) {
    std::ostringstream t;
    if (!p.free) t << p.value << "*";
    t << p.rhs;
    return t.str();
  };
  for (const auto& f : m.factors) {
    os << f << " =~ ";
    bool first = true;
    for (const auto& p : m.parameters)
      if (p.kind == ParamKind::loading && p.lhs == f) {
        if (!first) os << " + ";
        const bool default_marker = first && !m.unit_variance && !p.free && p.value == 1.0;
        os << (default_marker ? p.rhs : (p.free && first && !m.unit_variance ? "NA*" + p.rhs : fmt(p)));
        first = false;
      }
    os << "\n";
  }
  for (const auto& f : m.factors) {
    std::vector<std::string> preds;
    for (const auto& p : m.parameters)
      if (p.kind == ParamKind::regression && p.lhs == f) preds.push_back(fmt(p));
    if (preds.empty()) continue;
    os << f << " ~ ";
    for (std::size_t i = 0; i < preds.size(); ++i) os << (i ? " + " : "") << preds[i];
    os << "\n";
  }
  for (const auto& p : m.parameters) {
    const bool cov = p.kind == ParamKind::latent_covariance || p.kind == ParamKind::residual_covariance;
    const bool fixed_var = (p.kind == ParamKind::latent_variance || p.kind == ParamKind::residual_variance) &&
                           !p.free && !(m.unit_variance && p.kind == ParamKind::latent_variance && p.value == 1.0);
    if (cov || fixed_var) os << p.lhs << " ~~ " << fmt(p) << "\n";
  }
  return os.str();
}

}  // namespace lvm::sem
