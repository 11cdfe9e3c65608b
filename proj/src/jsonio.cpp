#include "clusterre/jsonio.hpp"

#include <cmath>
#include <fstream>

#include "clusterre/errors.hpp"

namespace clusterre {

namespace {

CovariateLevel level_from_string(const std::string& s) {
  if (s == "cluster") return CovariateLevel::Cluster;
  if (s == "individual") return CovariateLevel::Individual;
  throw ConfigError("unknown covariate level '" + s + "'");
}

CriterionKind kind_from_string(const std::string& s) {
  if (s == "mahalanobis") return CriterionKind::Mahalanobis;
  if (s == "weighted_euclidean") return CriterionKind::WeightedEuclidean;
  if (s == "general_quadratic") return CriterionKind::GeneralQuadratic;
  throw ConfigError("unknown criterion kind '" + s + "'");
}

}  // namespace

Json criterion_to_json(const CriterionSpec& spec) {
  Json j;
  j["level"] = to_string(spec.level);
  j["kind"] = to_string(spec.kind);
  if (!spec.weights.empty()) j["weights"] = spec.weights;
  if (!spec.matrix.empty()) {
    Json rows = Json::array();
    for (int i = 0; i < spec.matrix.rows(); ++i) rows.push_back(spec.matrix.row(i));
    j["matrix"] = rows;
  }
  if (!std::isnan(spec.threshold)) j["threshold"] = spec.threshold;
  if (!std::isnan(spec.target_rate)) j["target_rate"] = spec.target_rate;
  if (!spec.columns.empty()) j["columns"] = spec.columns;
  if (!spec.tier_columns.empty()) {
    Json tiers = Json::array();
    for (size_t l = 0; l < spec.tier_columns.size(); ++l) {
      Json t;
      t["columns"] = spec.tier_columns[l];
      if (l < spec.tier_rates.size()) t["target_rate"] = spec.tier_rates[l];
      if (l < spec.tier_thresholds.size()) t["threshold"] = spec.tier_thresholds[l];
      tiers.push_back(t);
    }
    j["tiers"] = tiers;
  }
  return j;
}

CriterionSpec criterion_from_json(const Json& j) {
  CriterionSpec spec;
  try {
    spec.level = level_from_string(j.at("level").get<std::string>());
    spec.kind = kind_from_string(j.value("kind", std::string("mahalanobis")));
    if (j.contains("weights")) spec.weights = j["weights"].get<Vec>();
    if (j.contains("matrix")) {
      auto rows = j["matrix"].get<std::vector<Vec>>();
      int n = static_cast<int>(rows.size());
      spec.matrix = Matrix(n, n == 0 ? 0 : static_cast<int>(rows[0].size()));
      for (int i = 0; i < n; ++i) {
        if (static_cast<int>(rows[i].size()) != spec.matrix.cols())
          throw ConfigError("criterion matrix rows have unequal lengths");
        spec.matrix.set_row(i, rows[i]);
      }
    }
    if (j.contains("threshold")) spec.threshold = j["threshold"].get<double>();
    if (j.contains("target_rate")) spec.target_rate = j["target_rate"].get<double>();
    if (j.contains("columns")) spec.columns = j["columns"].get<std::vector<int>>();
    if (j.contains("tiers")) {
      for (const Json& t : j["tiers"]) {
        spec.tier_columns.push_back(t.at("columns").get<std::vector<int>>());
        spec.tier_rates.push_back(
            t.contains("target_rate") ? t["target_rate"].get<double>()
                                      : std::numeric_limits<double>::quiet_NaN());
        spec.tier_thresholds.push_back(t.contains("threshold")
                                           ? t["threshold"].get<double>()
                                           : std::numeric_limits<double>::infinity());
      }
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad criterion config: ") + e.what());
  }
  return spec;
}

ScenarioConfig scenario_from_json(const Json& j) {
  ScenarioConfig cfg;
  try {
    cfg.m = j.value("m", cfg.m);
    cfg.m1 = j.value("m1", cfg.m / 2);
    cfg.size_lo = j.value("size_lo", cfg.size_lo);
    cfg.size_hi = j.value("size_hi", cfg.size_hi);
    cfg.k = j.value("k", cfg.k);
    cfg.rho = j.value("rho", cfg.rho);
    if (j.contains("gamma")) cfg.gamma = j["gamma"].get<double>();
    cfg.variance_share = j.value("variance_share", cfg.variance_share);
    std::string geff = j.value("cluster_effect", std::string("linear_size"));
    if (geff == "linear_size") {
      cfg.cluster_effect = ClusterEffect::LinearSize;
    } else if (geff == "constant") {
      cfg.cluster_effect = ClusterEffect::Constant;
    } else {
      throw ConfigError("cluster_effect must be 'linear_size' or 'constant'");
    }
    cfg.cluster_effect_constant = j.value("cluster_effect_constant", cfg.cluster_effect_constant);
    cfg.noise_sd = j.value("noise_sd", cfg.noise_sd);
    cfg.factorial_model = j.value("factorial_model", cfg.factorial_model);
    std::string fn = j.value("outcome_fn", std::string("linear"));
    if (fn == "linear") {
      cfg.outcome_fn = OutcomeFn::Linear;
    } else if (fn == "cubic" || fn == "nonlinear") {
      cfg.outcome_fn = OutcomeFn::Cubic;
    } else {
      throw ConfigError("outcome_fn must be 'linear' or 'cubic'");
    }
    cfg.replications = j.value("replications", cfg.replications);
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.mc_size = j.value("mc_size", cfg.mc_size);
    cfg.confidence_level = j.value("confidence_level", cfg.confidence_level);
    cfg.max_draws = j.value("max_draws", cfg.max_draws);
    cfg.calibration_draws = j.value("calibration_draws", cfg.calibration_draws);
    cfg.threads = j.value("threads", cfg.threads);
    // Column lists may instead hold CSV column names; those are resolved to
    // indices by the caller and skipped here.
    auto numeric_list = [](const Json& v) {
      return v.is_array() && (v.empty() || v[0].is_number());
    };
    if (j.contains("design_columns") && numeric_list(j["design_columns"]))
      cfg.design_columns = j["design_columns"].get<std::vector<int>>();
    if (j.contains("analysis_columns") && numeric_list(j["analysis_columns"]))
      cfg.analysis_columns = j["analysis_columns"].get<std::vector<int>>();
    cfg.threshold_mode = j.value("threshold_mode", cfg.threshold_mode);
    if (cfg.threshold_mode != "asymptotic" && cfg.threshold_mode != "empirical")
      throw ConfigError("threshold_mode must be 'asymptotic' or 'empirical'");
    cfg.empirical_draws = j.value("empirical_draws", cfg.empirical_draws);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad scenario config: ") + e.what());
  }
  return cfg;
}

Json scenario_to_json(const ScenarioConfig& cfg) {
  Json j;
  j["m"] = cfg.m;
  j["m1"] = cfg.m1;
  j["size_lo"] = cfg.size_lo;
  j["size_hi"] = cfg.size_hi;
  j["k"] = cfg.k;
  j["rho"] = cfg.rho;
  if (!std::isnan(cfg.gamma)) j["gamma"] = cfg.gamma;
  j["variance_share"] = cfg.variance_share;
  j["cluster_effect"] =
      cfg.cluster_effect == ClusterEffect::LinearSize ? "linear_size" : "constant";
  j["cluster_effect_constant"] = cfg.cluster_effect_constant;
  j["noise_sd"] = cfg.noise_sd;
  j["factorial_model"] = cfg.factorial_model;
  j["outcome_fn"] = cfg.outcome_fn == OutcomeFn::Linear ? "linear" : "cubic";
  j["replications"] = cfg.replications;
  j["alpha"] = cfg.alpha;
  j["seed"] = cfg.seed;
  j["mc_size"] = cfg.mc_size;
  j["confidence_level"] = cfg.confidence_level;
  j["max_draws"] = cfg.max_draws;
  j["calibration_draws"] = cfg.calibration_draws;
  j["threads"] = cfg.threads;
  if (!cfg.design_columns.empty()) j["design_columns"] = cfg.design_columns;
  if (!cfg.analysis_columns.empty()) j["analysis_columns"] = cfg.analysis_columns;
  j["threshold_mode"] = cfg.threshold_mode;
  j["empirical_draws"] = cfg.empirical_draws;
  return j;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config parse error in '" + path + "': " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write file '" + path + "'");
  out << j.dump(2) << "\n";
}

std::uint64_t config_hash(const Json& j) {
  std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace clusterre
