#include "doacal/error.hpp"

#include <utility>

namespace doacal {

NotPositiveDefinite::NotPositiveDefinite(std::size_t block, const std::string& detail)
    : std::runtime_error("covariance block " + std::to_string(block) +
                         " is not positive definite: " + detail),
      block_(block) {}

namespace {
std::string column_list(const std::vector<std::size_t>& cols) {
  std::string s;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(cols[i]);
  }
  return s;
}
}  // namespace

RankDeficient::RankDeficient(std::vector<std::size_t> columns, const std::string& detail)
    : std::runtime_error("rank deficient (columns " + column_list(columns) + "): " + detail),
      columns_(std::move(columns)) {}

EstimationError::EstimationError(int iteration, const std::string& stage,
                                 const std::string& detail)
    : std::runtime_error("iteration " + std::to_string(iteration) + ", " + stage + ": " +
                         detail),
      iteration_(iteration),
      stage_(stage) {}

}  // namespace doacal
