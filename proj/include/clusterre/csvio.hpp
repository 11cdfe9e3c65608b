#pragma once

#include <string>
#include <vector>

#include "clusterre/fpstats.hpp"

namespace clusterre {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;          // -1 when absent
  int require_column(const std::string& name) const;  // throws ConfigError
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

double parse_number(const std::string& text, const std::string& context);

// Options for assembling a ClusterExperiment from unit rows.
struct CsvLoadOptions {
  std::string cluster_id_column = "cluster_id";
  std::string size_column = "size";        // optional in the data
  std::string outcome_column = "y";        // optional
  std::string assignment_column = "z";     // optional
  std::vector<std::string> unit_columns;   // become exp.x, in order
  std::vector<std::string> cluster_columns;  // aggregated into exp.c
  bool cluster_size_covariate = true;        // prepend centered n_i to exp.c
  // "scaled_total": cluster covariate = scaled cluster total of the column.
  // "value": the column must be constant within each cluster.
  std::string cluster_aggregation = "scaled_total";
};

struct LoadedExperiment {
  ClusterExperiment exp;                  // covariates centered
  std::vector<std::string> cluster_ids;   // in cluster order
  std::vector<std::string> x_names;
  std::vector<std::string> c_names;
};

// Reads unit rows grouped by cluster id (order of first appearance). When a
// size column is present it must match the per-cluster row counts.
LoadedExperiment load_experiment_csv(const std::string& path, const CsvLoadOptions& options);

// Fills in the unobserved potential outcomes by two arm-wise least-squares
// fits of the observed outcome on the unit covariates; observed values are
// kept as-is. Requires y_obs and a complete assignment.
void impute_potential_outcomes(ClusterExperiment& exp);

}  // namespace clusterre
