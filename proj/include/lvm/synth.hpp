#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "lvm/common.hpp"
#include "lvm/distributions.hpp"
#include "lvm/ingest.hpp"
#include "lvm/search.hpp"

namespace lvm::synth {

class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Standardized structural coefficients over a skeleton. `directed[k]` is the
/// path coefficient of skeleton.directed[k]; `covariances[k]` the disturbance
/// covariance of skeleton.covariances[k]. Disturbance variances are solved so
/// every factor has unit variance.
struct StructuralSpec {
  search::StructuralSkeleton skeleton;
  std::vector<double> directed;
  std::vector<double> covariances;
};

struct GeneratorSpec {
  std::vector<std::string> variables;  // default V1..Vp
  std::vector<std::string> factors;    // default F1..Fm
  Matrix Lambda;                       // p x m standardized loadings
  Matrix Phi;                          // m x m; ignored when structural is set
  std::optional<StructuralSpec> structural;
  std::vector<std::vector<double>> thresholds;  // per item; empty list -> continuous item
  Eigen::Index N = 1000;
  std::uint64_t seed = 1;
  double missing_rate = 0.0;
  Eigen::Index block_rows = 2048;
  int jobs = 1;
};

/// Cut points giving `levels` equally likely categories under N(0,1).
inline std::vector<double> quantile_thresholds(int levels) {
  if (levels < 2) throw GenerationError("an ordinal item needs at least two levels");
  std::vector<double> t;
  for (int k = 1; k < levels; ++k) t.push_back(normal_quantile(static_cast<double>(k) / levels));
  return t;
}

/// Cut points reproducing the given category proportions.
inline std::vector<double> thresholds_from_proportions(const std::vector<double>& props) {
  if (props.size() < 2) throw GenerationError("need at least two category proportions");
  double total = 0.0;
  for (double p : props) {
    if (!(p > 0.0)) throw GenerationError("category proportions must be positive");
    total += p;
  }
  std::vector<double> t;
  double cum = 0.0;
  for (std::size_t k = 0; k + 1 < props.size(); ++k) {
    cum += props[k] / total;
    t.push_back(normal_quantile(cum));
  }
  return t;
}

/// Factor correlation matrix implied by structural coefficients.
inline Matrix structural_phi(const StructuralSpec& s) {
  const auto& sk = s.skeleton;
  const Eigen::Index m = static_cast<Eigen::Index>(sk.nodes.size());
  if (s.directed.size() != sk.directed.size() || s.covariances.size() != sk.covariances.size())
    throw GenerationError("structural coefficients do not match the skeleton edges");
  if (!search::is_acyclic(static_cast<int>(m), sk.directed)) throw GenerationError("structural skeleton is cyclic");
  Matrix B = Matrix::Zero(m, m);
  for (std::size_t k = 0; k < sk.directed.size(); ++k) B(sk.directed[k].second, sk.directed[k].first) = s.directed[k];
  Matrix Psi = Matrix::Zero(m, m);
  for (std::size_t k = 0; k < sk.covariances.size(); ++k) {
    const auto [a, b] = sk.covariances[k];
    Psi(a, b) = Psi(b, a) = s.covariances[k];
  }
  const Matrix A = (Matrix::Identity(m, m) - B).inverse();

  // Topological order: a node's variance only depends on earlier nodes.
  std::vector<int> order;
  std::vector<int> indeg(static_cast<std::size_t>(m), 0);
  for (auto [f, t] : sk.directed) ++indeg[static_cast<std::size_t>(t)];
  std::vector<bool> done(static_cast<std::size_t>(m), false);
  while (static_cast<Eigen::Index>(order.size()) < m) {
    for (int v = 0; v < m; ++v) {
      if (done[static_cast<std::size_t>(v)] || indeg[static_cast<std::size_t>(v)] != 0) continue;
      done[static_cast<std::size_t>(v)] = true;
      order.push_back(v);
      for (auto [f, t] : sk.directed)
        if (f == v) --indeg[static_cast<std::size_t>(t)];
      break;
    }
  }
  for (int t : order) {
    Psi(t, t) = 0.0;
    const double explained = (A * Psi * A.transpose())(t, t);
    Psi(t, t) = 1.0 - explained;
    if (!(Psi(t, t) > 0.0))
      throw GenerationError("structural coefficients leave factor '" + sk.nodes[static_cast<std::size_t>(t)] +
                            "' with non-positive disturbance variance");
  }
  Matrix Phi = A * Psi * A.transpose();
  return 0.5 * (Phi + Phi.transpose());
}

struct ResolvedSpec {
  Matrix Phi;
  Matrix R;  // implied observed correlation
  Vector unique_sd;
  Matrix phi_chol;
};

inline ResolvedSpec resolve(const GeneratorSpec& g) {
  const Eigen::Index p = g.Lambda.rows(), m = g.Lambda.cols();
  if (p == 0 || m == 0) throw GenerationError("Lambda must be nonempty");
  if (g.N < 1) throw GenerationError("N must be positive");
  if (!g.variables.empty() && static_cast<Eigen::Index>(g.variables.size()) != p)
    throw GenerationError("variable names do not match Lambda rows");
  if (!g.thresholds.empty() && static_cast<Eigen::Index>(g.thresholds.size()) != p)
    throw GenerationError("thresholds do not match Lambda rows");
  if (g.missing_rate < 0.0 || g.missing_rate >= 1.0) throw GenerationError("missing_rate must lie in [0, 1)");
  for (std::size_t i = 0; i < g.thresholds.size(); ++i)
    for (std::size_t k = 1; k < g.thresholds[i].size(); ++k)
      if (!(g.thresholds[i][k] > g.thresholds[i][k - 1]))
        throw GenerationError("thresholds of item " + std::to_string(i + 1) + " are not strictly increasing");
  ResolvedSpec r;
  if (g.structural) {
    if (static_cast<Eigen::Index>(g.structural->skeleton.nodes.size()) != m)
      throw GenerationError("structural skeleton size does not match Lambda columns");
    r.Phi = structural_phi(*g.structural);
  } else {
    if (g.Phi.rows() != m || g.Phi.cols() != m) throw GenerationError("Phi must be m x m");
    r.Phi = g.Phi;
  }
  Eigen::LLT<Matrix> lp(r.Phi);
  if (lp.info() != Eigen::Success) throw GenerationError("factor correlation matrix is not positive definite");
  r.phi_chol = lp.matrixL();
  const Vector h2 = (g.Lambda * r.Phi * g.Lambda.transpose()).diagonal();
  r.unique_sd.resize(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    if (!(h2(i) < 1.0)) throw GenerationError("item " + std::to_string(i + 1) + " has communality >= 1");
    r.unique_sd(i) = std::sqrt(1.0 - h2(i));
  }
  r.R = g.Lambda * r.Phi * g.Lambda.transpose();
  r.R.diagonal().setOnes();
  if (Eigen::LLT<Matrix>(r.R).info() != Eigen::Success)
    throw GenerationError("implied correlation matrix is not positive definite");
  return r;
}

struct Generated {
  OrdinalDataset data;
  Matrix factors;     // N x m latent scores
  Matrix continuous;  // N x p scores before discretization
};

/// Draw N records. Rows come in blocks, each from its own derived stream, so
/// the output is identical for any worker count.
inline Generated generate_full(const GeneratorSpec& g) {
  const auto rs = resolve(g);
  const Eigen::Index p = g.Lambda.rows(), m = g.Lambda.cols();
  Generated out;
  out.factors.resize(g.N, m);
  out.continuous.resize(g.N, p);
  out.data.cells.resize(g.N, p);
  const Eigen::Index block = std::max<Eigen::Index>(1, g.block_rows);
  const auto n_blocks = static_cast<std::size_t>((g.N + block - 1) / block);
  parallel_for(n_blocks, g.jobs, [&](std::size_t b) {
    Rng rng(derive_seed(g.seed, b));
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * block;
    const Eigen::Index r1 = std::min(g.N, r0 + block);
    Vector z(m), f(m), x(p);
    for (Eigen::Index r = r0; r < r1; ++r) {
      for (Eigen::Index k = 0; k < m; ++k) z(k) = rng.normal();
      f = rs.phi_chol * z;
      for (Eigen::Index i = 0; i < p; ++i) x(i) = g.Lambda.row(i).dot(f) + rs.unique_sd(i) * rng.normal();
      out.factors.row(r) = f.transpose();
      out.continuous.row(r) = x.transpose();
      for (Eigen::Index i = 0; i < p; ++i) {
        double v = x(i);
        if (!g.thresholds.empty() && !g.thresholds[static_cast<std::size_t>(i)].empty()) {
          const auto& t = g.thresholds[static_cast<std::size_t>(i)];
          v = 1.0 + static_cast<double>(std::upper_bound(t.begin(), t.end(), x(i)) - t.begin());
        }
        if (g.missing_rate > 0.0 && rng.uniform() < g.missing_rate) v = kNaN;
        out.data.cells(r, i) = v;
      }
    }
  });
  for (Eigen::Index i = 0; i < p; ++i) {
    VariableSpec v;
    v.name = g.variables.empty() ? "V" + std::to_string(i + 1) : g.variables[static_cast<std::size_t>(i)];
    const bool ordinal = !g.thresholds.empty() && !g.thresholds[static_cast<std::size_t>(i)].empty();
    v.kind = ordinal ? VariableKind::ordinal : VariableKind::numeric;
    if (ordinal)
      for (std::size_t k = 0; k <= g.thresholds[static_cast<std::size_t>(i)].size(); ++k)
        v.valid_levels.push_back(static_cast<int>(k) + 1);
    out.data.variables.push_back(std::move(v));
  }
  out.data.provenance.source = "synthetic (seed " + std::to_string(g.seed) + ")";
  return out;
}

inline OrdinalDataset generate(const GeneratorSpec& g) { return generate_full(g).data; }

inline std::vector<std::string> factor_names(const GeneratorSpec& g) {
  if (!g.factors.empty()) return g.factors;
  if (g.structural) return g.structural->skeleton.nodes;
  std::vector<std::string> out;
  for (Eigen::Index k = 0; k < g.Lambda.cols(); ++k) out.push_back("F" + std::to_string(k + 1));
  return out;
}

namespace detail {

inline nlohmann::json matrix_json(const Matrix& M) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw ConfigError(std::string(what) + " must be a nonempty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(i)].size()) != cols)
      throw ConfigError(std::string(what) + " rows differ in length");
    for (Eigen::Index k = 0; k < cols; ++k) M(i, k) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
  }
  return M;
}

}  // namespace detail

/// JSON echo of a generator spec; round-trips through spec_from_json.
inline nlohmann::json to_json(const GeneratorSpec& g) {
  nlohmann::json j;
  j["variables"] = g.variables;
  j["factors"] = factor_names(g);
  j["Lambda"] = detail::matrix_json(g.Lambda);
  if (g.structural) {
    const auto& sk = g.structural->skeleton;
    auto dir = nlohmann::json::array();
    for (std::size_t k = 0; k < sk.directed.size(); ++k)
      dir.push_back({{"from", sk.nodes[static_cast<std::size_t>(sk.directed[k].first)]},
                     {"to", sk.nodes[static_cast<std::size_t>(sk.directed[k].second)]},
                     {"coefficient", g.structural->directed[k]}});
    auto cov = nlohmann::json::array();
    for (std::size_t k = 0; k < sk.covariances.size(); ++k)
      cov.push_back({{"a", sk.nodes[static_cast<std::size_t>(sk.covariances[k].first)]},
                     {"b", sk.nodes[static_cast<std::size_t>(sk.covariances[k].second)]},
                     {"covariance", g.structural->covariances[k]}});
    j["structural"] = {{"directed", dir}, {"covariances", cov}};
  } else {
    j["Phi"] = detail::matrix_json(g.Phi);
  }
  j["thresholds"] = g.thresholds;
  j["N"] = g.N;
  j["seed"] = g.seed;
  j["missing_rate"] = g.missing_rate;
  return j;
}

inline GeneratorSpec spec_from_json(const nlohmann::json& j) {
  GeneratorSpec g;
  try {
    g.Lambda = detail::matrix_from_json(j.at("Lambda"), "Lambda");
    g.variables = j.value("variables", std::vector<std::string>{});
    g.factors = j.value("factors", std::vector<std::string>{});
    if (g.factors.empty())
      for (Eigen::Index k = 0; k < g.Lambda.cols(); ++k) g.factors.push_back("F" + std::to_string(k + 1));
    if (static_cast<Eigen::Index>(g.factors.size()) != g.Lambda.cols())
      throw ConfigError("factor names do not match Lambda columns");
    if (j.contains("structural")) {
      StructuralSpec s;
      s.skeleton.nodes = g.factors;
      auto idx = [&](const std::string& name) {
        const auto it = std::find(g.factors.begin(), g.factors.end(), name);
        if (it == g.factors.end()) throw ConfigError("unknown factor '" + name + "' in structural spec");
        return static_cast<int>(it - g.factors.begin());
      };
      for (const auto& e : j["structural"].value("directed", nlohmann::json::array())) {
        s.skeleton.directed.emplace_back(idx(e.at("from").get<std::string>()), idx(e.at("to").get<std::string>()));
        s.directed.push_back(e.at("coefficient").get<double>());
      }
      for (const auto& e : j["structural"].value("covariances", nlohmann::json::array())) {
        int a = idx(e.at("a").get<std::string>()), b = idx(e.at("b").get<std::string>());
        if (a > b) std::swap(a, b);
        s.skeleton.covariances.emplace_back(a, b);
        s.covariances.push_back(e.at("covariance").get<double>());
      }
      s.skeleton.canonical_key = search::canonical_key(s.skeleton);
      g.structural = std::move(s);
    } else {
      g.Phi = detail::matrix_from_json(j.at("Phi"), "Phi");
    }
    if (j.contains("thresholds")) {
      const auto& t = j["thresholds"];
      if (t.is_array()) {
        g.thresholds = t.get<std::vector<std::vector<double>>>();
      } else if (t.is_object() && t.contains("levels")) {
        // {"levels": [k1, k2, ...]} or {"levels": k} -> equal-probability cut points
        const auto& lv = t["levels"];
        for (Eigen::Index i = 0; i < g.Lambda.rows(); ++i)
          g.thresholds.push_back(quantile_thresholds(lv.is_array() ? lv.at(static_cast<std::size_t>(i)).get<int>()
                                                                   : lv.get<int>()));
      } else {
        throw ConfigError("thresholds must be a list of cut-point lists or {\"levels\": ...}");
      }
    }
    g.N = j.value("N", g.N);
    g.seed = j.value("seed", g.seed);
    g.missing_rate = j.value("missing_rate", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator spec: ") + e.what());
  }
  return g;
}

}  // namespace lvm::synth
