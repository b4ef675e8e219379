#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lvm/common.hpp"
#include "lvm/ingest.hpp"
#include "lvm/synth.hpp"

namespace lvm::testing {

inline std::string source_path(const std::string& rel) { return std::string(LVM_SOURCE_DIR) + "/" + rel; }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline NumericMatrix numeric(const Matrix& cells, std::vector<std::string> names = {}, int levels = 0) {
  NumericMatrix X;
  X.cells = cells;
  if (names.empty())
    for (Eigen::Index j = 0; j < cells.cols(); ++j) names.push_back("x" + std::to_string(j + 1));
  X.columns = std::move(names);
  X.levels.assign(static_cast<std::size_t>(cells.cols()), levels);
  return X;
}

/// Continuous data from a standardized factor model.
inline NumericMatrix factor_data(const Matrix& Lambda, const Matrix& Phi, Eigen::Index n, std::uint64_t seed,
                                 std::vector<std::string> names = {}) {
  synth::GeneratorSpec g;
  g.Lambda = Lambda;
  g.Phi = Phi;
  g.N = n;
  g.seed = seed;
  if (names.empty())
    for (Eigen::Index j = 0; j < Lambda.rows(); ++j) names.push_back("x" + std::to_string(j + 1));
  g.variables = names;
  return to_numeric(synth::generate(g));
}

/// Table 3 pattern (rows V30..ATTEND) and Table 4 factor correlations.
inline const std::vector<std::string>& issp_items() {
  static const std::vector<std::string> v{"V30", "V31", "V32", "V33", "V46", "V47", "V48",
                                          "V28", "V29", "V51", "V49", "V50", "ATTEND"};
  return v;
}

inline Matrix issp_pattern() {
  Matrix L(13, 4);
  L << 0.74, -0.03, 0.07, 0.01,  //
      0.90, 0.01, 0.05, -0.01,   //
      0.91, 0.03, -0.09, 0.00,   //
      0.64, 0.00, 0.10, 0.07,    //
      0.02, 0.96, -0.02, -0.05,  //
      0.04, 0.77, -0.04, 0.07,   //
      -0.08, 0.67, 0.18, 0.10,   //
      0.16, 0.00, 0.70, 0.09,    //
      0.01, 0.05, 0.94, -0.05,   //
      0.05, 0.01, 0.54, 0.30,    //
      0.11, 0.05, 0.31, 0.50,    //
      0.05, -0.04, -0.09, 0.70,  //
      0.02, 0.12, 0.04, 0.76;
  return L;
}

inline Matrix issp_phi() {
  Matrix P(4, 4);
  P << 1.00, 0.41, 0.69, 0.63,  //
      0.41, 1.00, 0.52, 0.56,   //
      0.69, 0.52, 1.00, 0.62,   //
      0.63, 0.56, 0.62, 1.00;
  return P;
}

inline std::string issp_cfa_text() { return read_file(source_path("data/models/issp_cfa.lvm")); }
inline std::string issp_best_tier_text() { return read_file(source_path("data/models/issp_best_tier.lvm")); }

}  // namespace lvm::testing
