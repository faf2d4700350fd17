#pragma once

// JSON and on-disk layouts for everything that is not a raw tensor: fit
// reports, fitted-model directories, study configurations, and experiment
// summaries. Tensors and masks travel as FENT files; JSON documents carry a
// schema_version so future layout changes stay detectable.
//
// Model directory layout:
//   model.json    dims, grid, smoothing weights, file map, creation stamp
//   core.fent     4-way core tensor
//   phi.fent      node factor (2-way)
//   g.fent        temporal basis (2-way)
//   means.fent    per-edge centering means (2-way, only when centered)
//   report.json   fit report (when the model came from an optimizer run)
//
// The creation stamp is the one field that may differ between otherwise
// identical runs; every other byte is reproducible.

#include <ctime>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "fen/analysis.hpp"
#include "fen/community.hpp"
#include "fen/dataset.hpp"
#include "fen/fent_io.hpp"
#include "fen/manifold.hpp"
#include "fen/objective.hpp"
#include "fen/optimizer.hpp"
#include "fen/simulation.hpp"
#include "fen/tensor.hpp"

namespace fen {

inline constexpr int kSchemaVersion = 1;

inline std::string iso8601_now() {
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

inline void write_json(const std::filesystem::path& path,
                       const nlohmann::json& doc) {
  write_file_atomic(path, doc.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  return nlohmann::json::parse(bytes.begin(), bytes.end());
}

namespace detail {

inline void check_schema(const nlohmann::json& doc, const std::string& kind) {
  if (!doc.is_object() || doc.value("kind", "") != kind)
    throw std::invalid_argument("expected a \"" + kind + "\" document");
  const int version = doc.value("schema_version", -1);
  if (version != kSchemaVersion)
    throw std::invalid_argument(kind + ": unsupported schema_version " +
                                std::to_string(version));
}

//! NaN has no JSON literal; failed replications are stored as null.
inline nlohmann::json finite_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

inline double double_or_nan(const nlohmann::json& v) {
  if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return v.get<double>();
}

}  // namespace detail

inline DenseTensor matrix_to_tensor(const Eigen::MatrixXd& m) {
  DenseTensor t({static_cast<index_t>(m.rows()), static_cast<index_t>(m.cols())});
  for (index_t i = 0; i < t.dim(1); ++i)
    for (index_t j = 0; j < t.dim(2); ++j) t.at(i, j) = m(i, j);
  return t;
}

inline Eigen::MatrixXd tensor_to_matrix(const DenseTensor& t) {
  if (t.ndims() != 2)
    throw std::invalid_argument("tensor_to_matrix: order " +
                                std::to_string(t.ndims()) + ", expected 2");
  Eigen::MatrixXd m(t.dim(1), t.dim(2));
  for (index_t i = 0; i < t.dim(1); ++i)
    for (index_t j = 0; j < t.dim(2); ++j) m(i, j) = t.at(i, j);
  return m;
}

inline nlohmann::json fit_report_to_json(const FitReport& report) {
  return nlohmann::json{
      {"iterations", report.iterations},
      {"objective_trace", report.objective_trace},
      {"grad_norm_trace", report.grad_norm_trace},
      {"step_trace", report.step_trace},
      {"beta_trace", report.beta_trace},
      {"converged", report.converged},
      {"termination_reason", to_string(report.termination_reason)},
  };
}

inline FitReport fit_report_from_json(const nlohmann::json& doc) {
  FitReport report;
  report.iterations = doc.at("iterations").get<index_t>();
  report.objective_trace = doc.at("objective_trace").get<std::vector<double>>();
  report.grad_norm_trace = doc.at("grad_norm_trace").get<std::vector<double>>();
  report.step_trace = doc.at("step_trace").get<std::vector<double>>();
  report.beta_trace = doc.at("beta_trace").get<std::vector<double>>();
  report.converged = doc.at("converged").get<bool>();
  const std::string reason = doc.at("termination_reason").get<std::string>();
  if (reason == "grad_tol")
    report.termination_reason = StopReason::grad_tol;
  else if (reason == "obj_tol")
    report.termination_reason = StopReason::obj_tol;
  else if (reason == "max_iter")
    report.termination_reason = StopReason::max_iter;
  else if (reason == "line_search_failure")
    report.termination_reason = StopReason::line_search_failure;
  else
    throw std::invalid_argument("unknown termination_reason \"" + reason +
                                "\"");
  return report;
}

//! A fitted model plus the context needed to use it: the time grid the
//! temporal basis lives on, the smoothing weights it was fitted with, and
//! per-edge centering means when the data were centered.
struct Model {
  TuckerPointPtr point;
  TimeGrid grid{-1.0, 1.0, 2};
  Eigen::VectorXd alpha;
  std::optional<Eigen::MatrixXd> edge_means;
};

inline void save_model(const std::filesystem::path& dir, const Model& model,
                       const FitReport* report = nullptr) {
  if (!model.point) throw std::invalid_argument("save_model: empty model");
  const TuckerPoint& p = *model.point;
  if (model.grid.length != p.L())
    throw std::invalid_argument("save_model: grid length " +
                                std::to_string(model.grid.length) +
                                " does not match temporal basis rows " +
                                std::to_string(p.L()));
  std::filesystem::create_directories(dir);
  write_tensor(dir / "core.fent", p.core());
  write_tensor(dir / "phi.fent", matrix_to_tensor(p.node_factor()));
  write_tensor(dir / "g.fent", matrix_to_tensor(p.temporal_basis()));

  nlohmann::json files{
      {"core", "core.fent"}, {"phi", "phi.fent"}, {"g", "g.fent"}};
  if (model.edge_means) {
    if (model.edge_means->rows() != p.m() || model.edge_means->cols() != p.m())
      throw std::invalid_argument("save_model: centering means must be m x m");
    write_tensor(dir / "means.fent", matrix_to_tensor(*model.edge_means));
    files["means"] = "means.fent";
  }
  if (report) {
    write_json(dir / "report.json", fit_report_to_json(*report));
    files["report"] = "report.json";
  }

  std::vector<double> alpha(model.alpha.data(),
                            model.alpha.data() + model.alpha.size());
  write_json(dir / "model.json",
             nlohmann::json{{"schema_version", kSchemaVersion},
                            {"kind", "fen-model"},
                            {"m", p.m()},
                            {"s", p.s()},
                            {"L", p.L()},
                            {"K", p.K()},
                            {"N", p.N()},
                            {"grid",
                             {{"t_start", model.grid.t_start},
                              {"t_end", model.grid.t_end},
                              {"length", model.grid.length}}},
                            {"alpha", alpha},
                            {"centered", model.edge_means.has_value()},
                            {"files", files},
                            {"created", iso8601_now()}});
}

inline Model load_model(const std::filesystem::path& dir) {
  const nlohmann::json doc = read_json(dir / "model.json");
  detail::check_schema(doc, "fen-model");
  const auto& files = doc.at("files");

  Model model;
  DenseTensor core = read_tensor(dir / files.at("core").get<std::string>());
  Eigen::MatrixXd phi =
      tensor_to_matrix(read_tensor(dir / files.at("phi").get<std::string>()));
  Eigen::MatrixXd g =
      tensor_to_matrix(read_tensor(dir / files.at("g").get<std::string>()));
  model.point = TuckerPoint::make(std::move(core), std::move(phi), std::move(g));

  const auto& grid = doc.at("grid");
  model.grid = TimeGrid{grid.at("t_start").get<double>(),
                        grid.at("t_end").get<double>(),
                        grid.at("length").get<index_t>()};
  if (model.grid.length != model.point->L())
    throw std::invalid_argument("load_model: grid length does not match "
                                "temporal basis rows");

  const std::vector<double> alpha =
      doc.at("alpha").get<std::vector<double>>();
  model.alpha = Eigen::Map<const Eigen::VectorXd>(
      alpha.data(), static_cast<Eigen::Index>(alpha.size()));

  if (doc.value("centered", false)) {
    Eigen::MatrixXd means = tensor_to_matrix(
        read_tensor(dir / files.at("means").get<std::string>()));
    if (means.rows() != model.point->m() || means.cols() != model.point->m())
      throw std::invalid_argument("load_model: centering means must be m x m");
    model.edge_means = std::move(means);
  }

  const nlohmann::json fields{"m", "s", "L", "K", "N"};
  const index_t want[5] = {model.point->m(), model.point->s(),
                           model.point->L(), model.point->K(),
                           model.point->N()};
  for (int i = 0; i < 5; ++i) {
    const std::string key = fields[i].get<std::string>();
    if (doc.at(key).get<index_t>() != want[i])
      throw std::invalid_argument("load_model: \"" + key +
                                  "\" disagrees with the stored factors");
  }
  return model;
}

inline nlohmann::json fit_config_to_json(const FitConfig& cfg) {
  nlohmann::json doc{{"s", cfg.s},
                     {"K", cfg.K},
                     {"max_iter", cfg.max_iter},
                     {"grad_tol", cfg.grad_tol},
                     {"obj_tol", cfg.obj_tol},
                     {"seed", cfg.seed},
                     {"init", to_string(cfg.init)}};
  if (cfg.alpha) {
    doc["alpha"] = std::vector<double>(cfg.alpha->data(),
                                       cfg.alpha->data() + cfg.alpha->size());
  }
  return doc;
}

inline FitConfig fit_config_from_json(const nlohmann::json& doc) {
  FitConfig cfg;
  cfg.s = doc.value("s", cfg.s);
  cfg.K = doc.value("K", cfg.K);
  cfg.max_iter = doc.value("max_iter", cfg.max_iter);
  cfg.grad_tol = doc.value("grad_tol", cfg.grad_tol);
  cfg.obj_tol = doc.value("obj_tol", cfg.obj_tol);
  cfg.seed = doc.value("seed", cfg.seed);
  if (doc.contains("init"))
    cfg.init = init_scheme_from_string(doc.at("init").get<std::string>());
  if (doc.contains("alpha") && !doc.at("alpha").is_null()) {
    std::vector<double> alpha;
    if (doc.at("alpha").is_number())
      alpha.push_back(doc.at("alpha").get<double>());
    else
      alpha = doc.at("alpha").get<std::vector<double>>();
    cfg.alpha = Eigen::Map<const Eigen::VectorXd>(
        alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  }
  return cfg;
}

namespace detail {

//! sigma2/omega may be given as a scalar (one cell) or an array (a sweep).
inline std::vector<double> grid_values(const nlohmann::json& v,
                                       const char* name) {
  if (v.is_number()) return {v.get<double>()};
  if (v.is_array() && !v.empty()) return v.get<std::vector<double>>();
  throw std::invalid_argument(std::string(name) +
                              " must be a number or a non-empty array");
}

}  // namespace detail

inline nlohmann::json sim_config_to_json(const SimConfig& cfg) {
  return nlohmann::json{{"schema_version", kSchemaVersion},
                        {"kind", "fen-sim-config"},
                        {"m", cfg.m},
                        {"L", cfg.L},
                        {"N", cfg.N},
                        {"s_true", cfg.s_true},
                        {"K_true", cfg.K_true},
                        {"t_start", cfg.t_start},
                        {"t_end", cfg.t_end},
                        {"sigma2", cfg.sigma2},
                        {"omega", cfg.omega},
                        {"alpha", cfg.alpha},
                        {"replications", cfg.replications},
                        {"seed", cfg.seed},
                        {"fit", fit_config_to_json(cfg.fit)}};
}

inline SimConfig sim_config_from_json(const nlohmann::json& doc) {
  detail::check_schema(doc, "fen-sim-config");
  SimConfig cfg;
  cfg.m = doc.value("m", cfg.m);
  cfg.L = doc.value("L", cfg.L);
  cfg.N = doc.value("N", cfg.N);
  cfg.s_true = doc.value("s_true", cfg.s_true);
  cfg.K_true = doc.value("K_true", cfg.K_true);
  cfg.t_start = doc.value("t_start", cfg.t_start);
  cfg.t_end = doc.value("t_end", cfg.t_end);
  if (doc.contains("sigma2"))
    cfg.sigma2 = detail::grid_values(doc.at("sigma2"), "sigma2");
  if (doc.contains("omega"))
    cfg.omega = detail::grid_values(doc.at("omega"), "omega");
  cfg.alpha = doc.value("alpha", cfg.alpha);
  cfg.replications = doc.value("replications", cfg.replications);
  cfg.seed = doc.value("seed", cfg.seed);
  if (doc.contains("fit")) cfg.fit = fit_config_from_json(doc.at("fit"));
  validate(cfg);
  return cfg;
}

inline nlohmann::json experiment_row_to_json(const ExperimentRow& row) {
  nlohmann::json se_full = nlohmann::json::array();
  nlohmann::json se_miss = nlohmann::json::array();
  for (std::size_t r = 0; r < row.se_full.size(); ++r) {
    se_full.push_back(detail::finite_or_null(row.se_full[r]));
    se_miss.push_back(detail::finite_or_null(row.se_miss[r]));
  }
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& report : row.reports)
    reports.push_back(fit_report_to_json(report));
  return nlohmann::json{{"sigma2", row.sigma2},
                        {"omega", row.omega},
                        {"numel", row.numel},
                        {"se_full", se_full},
                        {"se_miss", se_miss},
                        {"iterations", row.iterations},
                        {"converged", row.converged},
                        {"failed", row.failed},
                        {"reports", reports},
                        {"mse_mean", detail::finite_or_null(row.mse_mean)},
                        {"mse_std", detail::finite_or_null(row.mse_std)}};
}

inline nlohmann::json experiment_to_json(const SimConfig& cfg,
                                         const std::vector<ExperimentRow>& rows) {
  nlohmann::json out{{"schema_version", kSchemaVersion},
                     {"kind", "fen-experiment-summary"},
                     {"config", sim_config_to_json(cfg)},
                     {"created", iso8601_now()}};
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& row : rows) cells.push_back(experiment_row_to_json(row));
  out["cells"] = std::move(cells);
  return out;
}

//! Dataset directory layout: dataset.json (ids, grid, provenance) plus
//! data.fent / mask.fent / means.fent alongside it.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "data.fent", ds.data);
  write_mask(dir / "mask.fent", ds.mask);
  nlohmann::json files{{"data", "data.fent"}, {"mask", "mask.fent"}};
  if (ds.edge_means) {
    write_tensor(dir / "means.fent", matrix_to_tensor(*ds.edge_means));
    files["means"] = "means.fent";
  }
  write_json(dir / "dataset.json",
             nlohmann::json{{"schema_version", kSchemaVersion},
                            {"kind", "fen-dataset"},
                            {"m", ds.nodes.size()},
                            {"L", ds.grid.length},
                            {"N", ds.samples.size()},
                            {"grid",
                             {{"t_start", ds.grid.t_start},
                              {"t_end", ds.grid.t_end},
                              {"length", ds.grid.length}}},
                            {"nodes", ds.nodes},
                            {"samples", ds.samples},
                            {"centered", ds.edge_means.has_value()},
                            {"files", files},
                            {"created", iso8601_now()}});
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const nlohmann::json doc = read_json(dir / "dataset.json");
  detail::check_schema(doc, "fen-dataset");
  const auto& files = doc.at("files");

  Dataset ds;
  ds.data = read_tensor(dir / files.at("data").get<std::string>());
  ds.mask = read_mask(dir / files.at("mask").get<std::string>());
  check_mask_dims(ds.data, ds.mask, "load_dataset");
  ds.nodes = doc.at("nodes").get<std::vector<std::string>>();
  ds.samples = doc.at("samples").get<std::vector<std::string>>();
  const auto& grid = doc.at("grid");
  ds.grid = TimeGrid{grid.at("t_start").get<double>(),
                     grid.at("t_end").get<double>(),
                     grid.at("length").get<index_t>()};
  if (ds.data.ndims() != 4 ||
      ds.data.dim(1) != static_cast<index_t>(ds.nodes.size()) ||
      ds.data.dim(2) != static_cast<index_t>(ds.nodes.size()) ||
      ds.data.dim(3) != ds.grid.length ||
      ds.data.dim(4) != static_cast<index_t>(ds.samples.size()))
    throw std::invalid_argument(
        "load_dataset: tensor dims disagree with dataset.json");
  if (doc.value("centered", false))
    ds.edge_means = tensor_to_matrix(
        read_tensor(dir / files.at("means").get<std::string>()));
  return ds;
}

inline nlohmann::json bound_report_to_json(const BoundReport& report) {
  return nlohmann::json{{"c_hat", report.c_hat},   {"C_hat", report.C_hat},
                        {"lhs", report.lhs},       {"rhs", report.rhs},
                        {"holds", report.holds},
                        {"trial_count", report.trial_count}};
}

inline nlohmann::json smoothing_benefit_to_json(
    const SmoothingBenefitReport& report) {
  return nlohmann::json{{"se_miss_smoothed", report.se_miss_smoothed},
                        {"se_miss_plain", report.se_miss_plain},
                        {"se_full_smoothed", report.se_full_smoothed},
                        {"se_full_plain", report.se_full_plain},
                        {"wins", report.wins},
                        {"trials", report.trials},
                        {"win_fraction", report.win_fraction},
                        {"holds", report.holds}};
}

inline nlohmann::json missingness_to_json(const MissingnessReport& report) {
  return nlohmann::json{{"scenario", to_string(report.scenario)},
                        {"ratio", report.ratio},
                        {"fiber_count", report.fiber_count},
                        {"min_observed", report.min_observed},
                        {"max_observed", report.max_observed}};
}

inline nlohmann::json community_profile_to_json(
    const CommunityProfile& profile) {
  const Eigen::Index m = profile.membership.rows();
  const Eigen::Index s = profile.membership.cols();
  nlohmann::json membership = nlohmann::json::array();
  nlohmann::json signs = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m; ++i) {
    nlohmann::json mrow = nlohmann::json::array();
    nlohmann::json srow = nlohmann::json::array();
    for (Eigen::Index a = 0; a < s; ++a) {
      mrow.push_back(profile.membership(i, a));
      srow.push_back(static_cast<int>(profile.signs(i, a)));
    }
    membership.push_back(std::move(mrow));
    signs.push_back(std::move(srow));
  }
  return nlohmann::json{{"communities", s},
                        {"assignment", profile.assignment},
                        {"membership", membership},
                        {"signs", signs}};
}

}  // namespace fen
