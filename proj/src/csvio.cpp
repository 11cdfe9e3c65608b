#include "clusterre/csvio.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "clusterre/errors.hpp"
#include "clusterre/linalg.hpp"

namespace clusterre {

int CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

int CsvTable::require_column(const std::string& name) const {
  int c = column(name);
  if (c < 0) throw ConfigError("data file is missing column '" + name + "'");
  return c;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // Trim surrounding whitespace and CR.
    size_t b = field.find_first_not_of(" \t\r");
    size_t e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open data file '" + path + "'");
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("data file '" + path + "' is empty");
  t.header = split_line(line);
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_line(line);
    if (fields.size() != t.header.size())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(t.header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
  }
  return t;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write data file '" + path + "'");
  for (size_t j = 0; j < table.header.size(); ++j)
    out << (j ? "," : "") << table.header[j];
  out << "\n";
  for (const auto& row : table.rows) {
    for (size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
    out << "\n";
  }
}

double parse_number(const std::string& text, const std::string& context) {
  char* end = nullptr;
  double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || (end && *end != '\0'))
    throw ConfigError("cannot parse '" + text + "' as a number in " + context);
  return v;
}

LoadedExperiment load_experiment_csv(const std::string& path, const CsvLoadOptions& options) {
  CsvTable t = read_csv(path);
  int id_col = t.require_column(options.cluster_id_column);
  int size_col = t.column(options.size_column);
  int y_col = t.column(options.outcome_column);
  int z_col = t.column(options.assignment_column);

  // Group unit rows by cluster id, in order of first appearance.
  std::map<std::string, int> index_of;
  LoadedExperiment out;
  std::vector<std::vector<int>> cluster_rows;
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const std::string& id = t.rows[r][id_col];
    auto it = index_of.find(id);
    if (it == index_of.end()) {
      it = index_of.emplace(id, static_cast<int>(out.cluster_ids.size())).first;
      out.cluster_ids.push_back(id);
      cluster_rows.emplace_back();
    }
    cluster_rows[it->second].push_back(static_cast<int>(r));
  }
  int m = static_cast<int>(out.cluster_ids.size());
  if (m < 2) throw ConfigError("data must contain at least two clusters");

  std::vector<int> sizes(m);
  for (int i = 0; i < m; ++i) {
    sizes[i] = static_cast<int>(cluster_rows[i].size());
    if (size_col >= 0) {
      double declared = parse_number(t.rows[cluster_rows[i][0]][size_col], "size column");
      if (static_cast<int>(declared) != sizes[i])
        throw ConfigError("cluster '" + out.cluster_ids[i] + "' declares size " +
                          std::to_string(static_cast<int>(declared)) + " but has " +
                          std::to_string(sizes[i]) + " rows");
    }
  }
  out.exp = make_experiment(sizes);
  int n = out.exp.num_units();

  auto unit_row = [&](int cluster, int j) { return cluster_rows[cluster][j]; };

  if (!options.unit_columns.empty()) {
    out.exp.x = Matrix(n, static_cast<int>(options.unit_columns.size()));
    out.x_names = options.unit_columns;
    for (size_t c = 0; c < options.unit_columns.size(); ++c) {
      int col = t.require_column(options.unit_columns[c]);
      int u = 0;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < sizes[i]; ++j)
          out.exp.x(u++, static_cast<int>(c)) =
              parse_number(t.rows[unit_row(i, j)][col], "column " + options.unit_columns[c]);
    }
  }

  if (y_col >= 0) {
    out.exp.y_obs.resize(n);
    int u = 0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < sizes[i]; ++j)
        out.exp.y_obs[u++] = parse_number(t.rows[unit_row(i, j)][y_col], "outcome column");
  }
  if (z_col >= 0) {
    out.exp.z.resize(m);
    for (int i = 0; i < m; ++i) {
      double first = parse_number(t.rows[unit_row(i, 0)][z_col], "assignment column");
      for (int j = 1; j < sizes[i]; ++j) {
        double v = parse_number(t.rows[unit_row(i, j)][z_col], "assignment column");
        if (v != first)
          throw ConfigError("assignment differs within cluster '" + out.cluster_ids[i] + "'");
      }
      if (first != 0.0 && first != 1.0)
        throw ConfigError("assignment values must be 0 or 1");
      out.exp.z[i] = static_cast<int>(first);
    }
  }

  // Cluster-level covariates: optional centered size, then the requested
  // columns, aggregated as scaled totals or validated constants. A constant
  // size column would be degenerate after centering, so it is skipped.
  bool size_varies = false;
  for (int i = 1; i < m; ++i)
    if (sizes[i] != sizes[0]) size_varies = true;
  bool with_size = options.cluster_size_covariate && size_varies;
  int kc = static_cast<int>(options.cluster_columns.size()) + (with_size ? 1 : 0);
  if (kc > 0) {
    out.exp.c = Matrix(m, kc);
    int base = 0;
    if (with_size) {
      for (int i = 0; i < m; ++i) out.exp.c(i, 0) = sizes[i];
      out.c_names.push_back("size");
      base = 1;
    }
    for (size_t cidx = 0; cidx < options.cluster_columns.size(); ++cidx) {
      const std::string& name = options.cluster_columns[cidx];
      int col = t.require_column(name);
      out.c_names.push_back(name);
      if (options.cluster_aggregation == "value") {
        for (int i = 0; i < m; ++i) {
          double first = parse_number(t.rows[unit_row(i, 0)][col], "column " + name);
          for (int j = 1; j < sizes[i]; ++j)
            if (parse_number(t.rows[unit_row(i, j)][col], "column " + name) != first)
              throw ConfigError("column '" + name + "' is not constant within cluster '" +
                                out.cluster_ids[i] + "'");
          out.exp.c(i, base + static_cast<int>(cidx)) = first;
        }
      } else {
        // Scaled cluster totals of the unit-centered column, matching the
        // centering convention of derived cluster covariates.
        double grand = 0.0;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < sizes[i]; ++j)
            grand += parse_number(t.rows[unit_row(i, j)][col], "column " + name);
        grand /= n;
        for (int i = 0; i < m; ++i) {
          double total = 0.0;
          for (int j = 0; j < sizes[i]; ++j)
            total += parse_number(t.rows[unit_row(i, j)][col], "column " + name) - grand;
          out.exp.c(i, base + static_cast<int>(cidx)) = total * m / n;
        }
      }
    }
  }

  center_covariates(out.exp);
  out.exp.finalize();
  return out;
}

void impute_potential_outcomes(ClusterExperiment& exp) {
  if (exp.y_obs.empty()) throw ConfigError("imputation requires observed outcomes");
  if (exp.z.empty()) throw ConfigError("imputation requires an assignment column");
  int n = exp.num_units();
  int k = exp.x.empty() ? 0 : exp.x.cols();

  // Arm-wise least squares of y on (1, x); the unobserved arm gets fitted
  // values, the observed arm keeps the data.
  std::array<Vec, 2> beta;
  for (int z = 0; z < 2; ++z) {
    std::vector<int> rows;
    for (int i = 0; i < exp.num_clusters(); ++i)
      if (exp.z[i] == z)
        for (int j = exp.offsets[i]; j < exp.offsets[i + 1]; ++j) rows.push_back(j);
    if (static_cast<int>(rows.size()) <= k)
      throw NumericError("imputation: too few units in one arm for the covariate fit");
    Matrix x(static_cast<int>(rows.size()), k + 1);
    Vec y(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
      x(static_cast<int>(r), 0) = 1.0;
      for (int c = 0; c < k; ++c) x(static_cast<int>(r), c + 1) = exp.x(rows[r], c);
      y[r] = exp.y_obs[rows[r]];
    }
    beta[z] = ols_solve(x, y);
  }
  for (int z = 0; z < 2; ++z) exp.y_pot[z].assign(n, 0.0);
  for (int i = 0; i < exp.num_clusters(); ++i) {
    for (int j = exp.offsets[i]; j < exp.offsets[i + 1]; ++j) {
      for (int z = 0; z < 2; ++z) {
        if (exp.z[i] == z) {
          exp.y_pot[z][j] = exp.y_obs[j];
        } else {
          double fit = beta[z][0];
          for (int c = 0; c < k; ++c) fit += beta[z][c + 1] * exp.x(j, c);
          exp.y_pot[z][j] = fit;
        }
      }
    }
  }
}

}  // namespace clusterre
