#include "rfinfer/trial_data.hpp"

#include <algorithm>
#include <cassert>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rfinfer {

const char* to_string(ResidualSource source) {
  switch (source) {
    case ResidualSource::oob_forest: return "oob-forest";
    case ResidualSource::insample_forest: return "insample-forest";
    case ResidualSource::ols: return "ols";
    case ResidualSource::none: return "none";
  }
  return "unknown";
}

int TrialDataset::n_treated() const {
  return static_cast<int>(std::count(assignment.begin(), assignment.end(), 1));
}

void TrialDataset::validate() const {
  const int rows = n();
  if (rows < 4) {
    throw std::invalid_argument("dataset requires at least 4 subjects, got " +
                                std::to_string(rows));
  }
  if (covariates.rows() != rows) {
    throw std::invalid_argument("covariate rows (" +
                                std::to_string(covariates.rows()) +
                                ") do not match outcome length (" +
                                std::to_string(rows) + ")");
  }
  if (static_cast<int>(assignment.size()) != rows) {
    throw std::invalid_argument("assignment length does not match outcomes");
  }
  if (covariates.cols() < 1) {
    throw std::invalid_argument("dataset requires at least one covariate");
  }
  if (!covariates.allFinite() || !outcomes.allFinite()) {
    throw std::invalid_argument("dataset contains non-finite entries");
  }
  int n1 = 0;
  for (int z : assignment) {
    if (z != 0 && z != 1) {
      throw std::invalid_argument("assignment entries must be 0 or 1, got " +
                                  std::to_string(z));
    }
    n1 += z;
  }
  if (n1 == 0 || n1 == rows) {
    throw std::invalid_argument("both arms must be nonempty (n1 = " +
                                std::to_string(n1) + ", n = " +
                                std::to_string(rows) + ")");
  }
}

Eigen::VectorXd adjusted_response(const TrialDataset& dataset, double tau0) {
  if (!std::isfinite(tau0)) {
    throw std::invalid_argument("tau0 must be finite");
  }
  dataset.validate();
  Eigen::VectorXd y = dataset.outcomes;
  if (tau0 != 0.0) {
    for (int i = 0; i < y.size(); ++i) {
      y[i] -= tau0 * dataset.assignment[static_cast<std::size_t>(i)];
    }
  }
  return y;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') {
    fields.emplace_back();
  }
  return fields;
}

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

// Strict numeric parse; rejects blanks, partial parses and non-finite values.
double parse_cell(const std::string& raw, std::size_t row,
                  const std::string& column) {
  const std::string cell = trim(raw);
  auto fail = [&](const char* why) -> double {
    throw std::runtime_error("parse error at row " + std::to_string(row) +
                             ", column '" + column + "': " + why + " ('" +
                             raw + "')");
  };
  if (cell.empty()) return fail("missing value");
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return fail("not a number");
  if (!std::isfinite(value)) return fail("non-finite value");
  return value;
}

}  // namespace

TrialDataset load_trial_csv(const std::string& path,
                            const std::string& outcome_column,
                            const std::string& assignment_column) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open file: " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("empty file: " + path);
  }
  std::vector<std::string> header = split_csv_line(line);
  for (auto& name : header) name = trim(name);

  int outcome_idx = -1;
  int assignment_idx = -1;
  std::vector<int> covariate_idx;
  std::vector<std::string> covariate_names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == outcome_column) {
      outcome_idx = static_cast<int>(j);
    } else if (header[j] == assignment_column) {
      assignment_idx = static_cast<int>(j);
    } else {
      covariate_idx.push_back(static_cast<int>(j));
      covariate_names.push_back(header[j]);
    }
  }
  if (outcome_idx < 0) {
    throw std::invalid_argument("outcome column '" + outcome_column +
                                "' not found in " + path);
  }
  if (assignment_idx < 0) {
    throw std::invalid_argument("assignment column '" + assignment_column +
                                "' not found in " + path);
  }
  if (covariate_idx.empty()) {
    throw std::invalid_argument("no covariate columns in " + path);
  }

  std::vector<double> outcomes;
  std::vector<int> assignment;
  std::vector<double> covariates;  // row-major staging
  std::size_t row = 1;             // header is row 1
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) +
                               " fields, expected " +
                               std::to_string(header.size()));
    }
    outcomes.push_back(
        parse_cell(cells[static_cast<std::size_t>(outcome_idx)], row,
                   outcome_column));
    const double z =
        parse_cell(cells[static_cast<std::size_t>(assignment_idx)], row,
                   assignment_column);
    if (z != 0.0 && z != 1.0) {
      throw std::invalid_argument(
          "assignment value at row " + std::to_string(row) +
          " must be 0 or 1, got '" +
          trim(cells[static_cast<std::size_t>(assignment_idx)]) + "'");
    }
    assignment.push_back(static_cast<int>(z));
    for (std::size_t k = 0; k < covariate_idx.size(); ++k) {
      covariates.push_back(
          parse_cell(cells[static_cast<std::size_t>(covariate_idx[k])], row,
                     covariate_names[k]));
    }
  }

  const int n = static_cast<int>(outcomes.size());
  const int p = static_cast<int>(covariate_idx.size());
  TrialDataset dataset;
  dataset.outcomes = Eigen::Map<Eigen::VectorXd>(outcomes.data(), n);
  dataset.assignment = std::move(assignment);
  dataset.covariate_names = std::move(covariate_names);
  dataset.covariates.resize(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) {
      dataset.covariates(i, j) = covariates[static_cast<std::size_t>(i) * p + j];
    }
  }
  dataset.validate();
  return dataset;
}

std::vector<int> complete_randomization(int n, int n1, Rng& rng) {
  if (n1 <= 0 || n1 >= n) {
    throw std::invalid_argument("n1 must satisfy 0 < n1 < n, got n1 = " +
                                std::to_string(n1) + ", n = " +
                                std::to_string(n));
  }
  std::vector<int> z(static_cast<std::size_t>(n), 0);
  std::fill(z.begin(), z.begin() + n1, 1);
  // Fisher-Yates; uniform over all arrangements, hence uniform over the
  // C(n, n1) distinct assignments.
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(z[static_cast<std::size_t>(i)], z[static_cast<std::size_t>(j)]);
  }
  return z;
}

}  // namespace rfinfer
