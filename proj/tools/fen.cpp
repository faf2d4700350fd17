// Command-line surface for the functional-edged network toolkit. Every
// subcommand validates its inputs up front and reports failures as a single
// "error: ..." line on stderr with a nonzero exit, so pipelines can branch on
// the result without scraping multi-line output.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fen/analysis.hpp"
#include "fen/community.hpp"
#include "fen/dataset.hpp"
#include "fen/fent_io.hpp"
#include "fen/manifold.hpp"
#include "fen/objective.hpp"
#include "fen/optimizer.hpp"
#include "fen/serialize.hpp"
#include "fen/simulation.hpp"
#include "fen/tensor.hpp"

namespace {

namespace fs = std::filesystem;
using fen::index_t;

// ---------------------------------------------------------------- simulate

void run_simulate(const fs::path& config_path, const fs::path& out_dir,
                  bool traces) {
  const fen::SimConfig cfg =
      fen::sim_config_from_json(fen::read_json(config_path));
  const std::vector<fen::ExperimentRow> rows = fen::run_experiment(cfg);

  fs::create_directories(out_dir);
  fen::write_results_csv(out_dir / "results.csv", rows);
  fen::write_json(out_dir / "summary.json", fen::experiment_to_json(cfg, rows));
  if (traces) {
    for (std::size_t cell = 0; cell < rows.size(); ++cell) {
      const fen::ExperimentRow& row = rows[cell];
      for (std::size_t rep = 0; rep < row.reports.size(); ++rep) {
        if (row.failed[rep]) continue;
        fen::write_trace_svg(
            out_dir / ("trace_cell" + std::to_string(cell) + ".svg"),
            row.reports[rep]);
        break;
      }
    }
  }
  std::cout << out_dir.string() << ": " << rows.size() << " cells, "
            << cfg.replications << " replications each\n";
}

// --------------------------------------------------------------------- fit

struct FitArgs {
  std::string data_path;
  std::string mask_path;
  std::string dataset_dir;
  fen::FitConfig cfg;
  double alpha = 0.1;
  bool center = false;
  double t_start = -1.0;
  double t_end = 1.0;
  std::string out_dir;
};

void run_fit(const FitArgs& args) {
  fen::DenseTensor data;
  fen::MaskTensor mask;
  fen::TimeGrid grid{args.t_start, args.t_end, 0};
  std::optional<Eigen::MatrixXd> pre_centered_means;

  if (!args.dataset_dir.empty()) {
    fen::Dataset ds = fen::load_dataset(args.dataset_dir);
    if (args.center && ds.edge_means)
      throw std::invalid_argument(
          "--center given but the dataset is already centered");
    data = std::move(ds.data);
    mask = std::move(ds.mask);
    grid = ds.grid;
    pre_centered_means = std::move(ds.edge_means);
  } else {
    data = fen::read_tensor(args.data_path);
    if (data.ndims() != 4)
      throw std::invalid_argument("--data must be a 4-way tensor, got order " +
                                  std::to_string(data.ndims()));
    mask = args.mask_path.empty() ? fen::MaskTensor::full(data.dims())
                                  : fen::read_mask(args.mask_path);
    grid.length = data.dim(3);
  }

  fen::ProblemOptions options;
  options.center = args.center;
  fen::Problem prob(std::move(data), std::move(mask),
                    fen::SmoothingPenalty::uniform(args.alpha, grid.length),
                    grid, options);
  auto [point, report] = fen::fit(prob, args.cfg);

  fen::Model model;
  model.point = point;
  model.grid = grid;
  model.alpha = Eigen::VectorXd::Constant(point->K(), args.alpha);
  if (args.center)
    model.edge_means = prob.edge_means();
  else if (pre_centered_means)
    model.edge_means = std::move(pre_centered_means);
  fen::save_model(args.out_dir, model, &report);

  std::cout << args.out_dir << ": " << (report.converged ? "converged" : "stopped")
            << " after " << report.iterations << " iterations ("
            << fen::to_string(report.termination_reason) << ")\n";
}

// ---------------------------------------------------------------- complete

fen::DenseTensor completed_tensor(const fen::Model& model) {
  fen::DenseTensor x = model.point->value();
  if (model.edge_means) {
    const index_t m = model.point->m(), L = model.point->L();
    const index_t N = model.point->N();
    for (index_t i = 0; i < m; ++i)
      for (index_t j = 0; j < m; ++j) {
        const double mean = (*model.edge_means)(i, j);
        if (mean == 0.0) continue;
        for (index_t l = 0; l < L; ++l)
          for (index_t n = 0; n < N; ++n) x.at(i, j, l, n) += mean;
      }
  }
  return x;
}

void run_complete(const fs::path& model_dir, const std::string& out_path,
                  const std::vector<std::string>& queries) {
  const fen::Model model = fen::load_model(model_dir);
  if (out_path.empty() && queries.empty())
    throw std::invalid_argument("nothing to do: pass --out and/or --at");

  if (!out_path.empty()) fen::write_tensor(out_path, completed_tensor(model));

  const Eigen::MatrixXd* means =
      model.edge_means ? &*model.edge_means : nullptr;
  std::cout << std::setprecision(17);
  for (const std::string& q : queries) {
    long long i = 0, j = 0, n = 0;
    double t = 0.0;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream in(q);
    if (!(in >> i >> c1 >> j >> c2 >> n >> c3 >> t) || c1 != ',' ||
        c2 != ',' || c3 != ',' || !in.eof())
      throw std::invalid_argument("--at expects \"i,j,n,t\", got \"" + q +
                                  "\"");
    const double value = fen::complete_edge(
        *model.point, model.grid, static_cast<index_t>(i),
        static_cast<index_t>(j), static_cast<index_t>(n), t, means);
    std::cout << i << ',' << j << ',' << n << ',' << t << ',' << value << '\n';
  }
}

// -------------------------------------------------------------------- eval

void run_eval(const fs::path& model_dir, const std::string& truth_path,
              const std::string& mask_path) {
  const fen::Model model = fen::load_model(model_dir);
  const fen::DenseTensor truth = fen::read_tensor(truth_path);
  const fen::DenseTensor xhat = completed_tensor(model);
  if (truth.dims() != xhat.dims())
    throw std::invalid_argument(
        "truth dims " + fen::detail::dims_to_string(truth.dims()) +
        " do not match the model's " +
        fen::detail::dims_to_string(xhat.dims()));
  const fen::MaskTensor mask = mask_path.empty()
                                   ? fen::MaskTensor::full(truth.dims())
                                   : fen::read_mask(mask_path);
  auto [se_full, se_miss] = fen::se_metrics(xhat, truth, mask);

  nlohmann::json doc{
      {"se_full", se_full},
      {"se_miss", se_miss},
      {"numel", truth.size()},
      {"observed", mask.observed_count()},
      {"mse_full", se_full / static_cast<double>(truth.size())}};
  std::cout << doc.dump(2) << '\n';
}

// ------------------------------------------------------------- communities

void run_communities(const fs::path& model_dir, const fs::path& out_path) {
  const fen::Model model = fen::load_model(model_dir);
  nlohmann::json doc =
      fen::community_profile_to_json(fen::extract_communities(*model.point));
  doc["kind"] = "fen-communities";
  doc["schema_version"] = fen::kSchemaVersion;
  fen::write_json(out_path, doc);
  std::cout << out_path.string() << ": " << model.point->s()
            << " communities over " << model.point->m() << " nodes\n";
}

// ------------------------------------------------------------------ ingest

void run_ingest(const std::string& csv_path, index_t L, double t_start,
                double t_end, double threshold, bool center,
                const fs::path& out_dir) {
  const fen::Dataset ds =
      fen::ingest_od_csv(csv_path, L, t_start, t_end, threshold, center);
  fen::save_dataset(out_dir, ds);
  std::cout << out_dir.string() << ": " << ds.nodes.size() << " nodes, "
            << ds.samples.size() << " samples, "
            << ds.mask.observed_count() << " observed entries\n";
}

// ------------------------------------------------------------------- refit

void run_refit(const fs::path& model_dir, const std::string& data_path,
               const std::string& mask_path, const std::string& mode_name,
               const fs::path& out_dir) {
  const fen::Model model = fen::load_model(model_dir);
  const fen::DenseTensor y = fen::read_tensor(data_path);
  const fen::MaskTensor mask = mask_path.empty()
                                   ? fen::MaskTensor::full(y.dims())
                                   : fen::read_mask(mask_path);
  const fen::RefitMode mode = fen::refit_mode_from_string(mode_name);
  auto [core, xhat] = fen::train_test_refit(*model.point, y, mask, mode);

  fs::create_directories(out_dir);
  fen::write_tensor(out_dir / "core.fent", core);
  fen::write_tensor(out_dir / "xhat.fent", xhat);
  fen::DenseTensor diff = fen::sub(xhat, y);
  const double residual = fen::masked_inner(diff, diff, mask);
  fen::write_json(out_dir / "refit.json",
                  nlohmann::json{{"schema_version", fen::kSchemaVersion},
                                 {"kind", "fen-refit"},
                                 {"mode", mode_name},
                                 {"samples", y.dim(4)},
                                 {"observed", mask.observed_count()},
                                 {"masked_residual_se", residual}});
  std::cout << out_dir.string() << ": masked residual SE " << residual << '\n';
}

// -------------------------------------------------------------- gridsearch

std::vector<index_t> parse_int_list(const std::string& text,
                                    const char* what) {
  std::vector<index_t> values;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      values.push_back(static_cast<index_t>(std::stoll(item)));
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string(what) + ": bad integer \"" +
                                  item + "\"");
    }
  }
  if (values.empty())
    throw std::invalid_argument(std::string(what) + ": empty list");
  return values;
}

void run_gridsearch(const std::string& data_path, const std::string& mask_path,
                    const std::string& s_list, const std::string& k_list,
                    double holdout, double alpha, index_t max_iter,
                    double grad_tol, std::uint64_t seed,
                    const fs::path& out_dir) {
  const fen::DenseTensor y = fen::read_tensor(data_path);
  if (y.ndims() != 4)
    throw std::invalid_argument("--data must be a 4-way tensor");
  const fen::MaskTensor mask = mask_path.empty()
                                   ? fen::MaskTensor::full(y.dims())
                                   : fen::read_mask(mask_path);
  const std::vector<index_t> s_values = parse_int_list(s_list, "--s-list");
  const std::vector<index_t> k_values = parse_int_list(k_list, "--K-list");
  if (!(holdout > 0.0) || !(holdout < 1.0))
    throw std::invalid_argument("--holdout must lie in (0, 1)");

  // hide a validation share of the observed entries, exact count, seeded
  std::vector<index_t> observed;
  observed.reserve(static_cast<std::size_t>(mask.observed_count()));
  for (index_t flat = 0; flat < mask.size(); ++flat)
    if (mask.get(flat)) observed.push_back(flat);
  const index_t hide =
      static_cast<index_t>(std::llround(holdout * double(observed.size())));
  if (hide < 1 || hide >= static_cast<index_t>(observed.size()))
    throw std::invalid_argument("--holdout leaves no split at this scale");
  std::mt19937_64 rng(seed);
  for (index_t v = 0; v < hide; ++v) {
    std::uniform_int_distribution<std::size_t> pick(
        static_cast<std::size_t>(v), observed.size() - 1);
    std::swap(observed[static_cast<std::size_t>(v)], observed[pick(rng)]);
  }
  fen::MaskTensor train_mask = mask;
  for (index_t v = 0; v < hide; ++v)
    train_mask.set(observed[static_cast<std::size_t>(v)], false);

  const fen::TimeGrid grid{-1.0, 1.0, y.dim(3)};
  const index_t L = y.dim(3), N = y.dim(4), m = y.dim(1);

  nlohmann::json trials = nlohmann::json::array();
  double best = std::numeric_limits<double>::infinity();
  index_t best_s = 0, best_k = 0;
  for (index_t s : s_values)
    for (index_t K : k_values) {
      nlohmann::json trial{{"s", s}, {"K", K}};
      if (s < 1 || s > m || K < 1 || K > L || K > s * s * N) {
        trial["skipped"] = "infeasible ranks at this data size";
        trial["validation_mse"] = nullptr;
        trials.push_back(std::move(trial));
        continue;
      }
      fen::Problem prob(y, train_mask,
                        fen::SmoothingPenalty::uniform(alpha, L), grid);
      fen::FitConfig cfg;
      cfg.s = s;
      cfg.K = K;
      cfg.max_iter = max_iter;
      cfg.grad_tol = grad_tol;
      cfg.seed = seed;
      auto [point, report] = fen::fit(prob, cfg);

      fen::detail::CompensatedSum err;
      for (index_t v = 0; v < hide; ++v) {
        const index_t flat = observed[static_cast<std::size_t>(v)];
        const double d = point->value()[flat] - y[flat];
        err.add(d * d);
      }
      const double val = err.value() / double(hide);
      trial["validation_mse"] = val;
      trial["iterations"] = report.iterations;
      trials.push_back(std::move(trial));
      if (val < best) {
        best = val;
        best_s = s;
        best_k = K;
      }
    }
  if (best_s == 0)
    throw std::invalid_argument("no feasible (s, K) combination in the grid");

  // winner refits on every observed entry
  fen::Problem full_prob(y, mask, fen::SmoothingPenalty::uniform(alpha, L),
                         grid);
  fen::FitConfig cfg;
  cfg.s = best_s;
  cfg.K = best_k;
  cfg.max_iter = max_iter;
  cfg.grad_tol = grad_tol;
  cfg.seed = seed;
  auto [point, report] = fen::fit(full_prob, cfg);

  fen::Model model;
  model.point = point;
  model.grid = grid;
  model.alpha = Eigen::VectorXd::Constant(best_k, alpha);
  fen::save_model(out_dir, model, &report);
  fen::write_json(out_dir / "gridsearch.json",
                  nlohmann::json{{"schema_version", fen::kSchemaVersion},
                                 {"kind", "fen-gridsearch"},
                                 {"holdout", holdout},
                                 {"hidden_entries", hide},
                                 {"seed", seed},
                                 {"trials", trials},
                                 {"selected", {{"s", best_s}, {"K", best_k}}},
                                 {"validation_mse", best}});
  std::cout << out_dir.string() << ": selected s=" << best_s
            << " K=" << best_k << " (validation MSE " << best << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"functional-edged network modeling toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "run a seeded experiment sweep");
  std::string sim_config, sim_out;
  bool sim_traces = false;
  sim->add_option("--config", sim_config, "experiment config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_flag("--traces", sim_traces, "write an objective-trace SVG per cell");
  sim->callback([&] { run_simulate(sim_config, sim_out, sim_traces); });

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit a model to masked data");
  FitArgs fit_args;
  fit_cmd->add_option("--data", fit_args.data_path, "data tensor (.fent)")
      ->check(CLI::ExistingFile);
  fit_cmd->add_option("--mask", fit_args.mask_path,
                      "observation mask (.fent); omitted = fully observed")
      ->check(CLI::ExistingFile);
  fit_cmd->add_option("--dataset", fit_args.dataset_dir,
                      "ingested dataset directory (alternative to --data)")
      ->check(CLI::ExistingDirectory);
  fit_cmd->add_option("--s", fit_args.cfg.s, "node factor rank")->required();
  fit_cmd->add_option("--K", fit_args.cfg.K, "temporal basis rank")
      ->required();
  fit_cmd->add_option("--alpha", fit_args.alpha,
                      "smoothing weight (default 0.1)");
  fit_cmd->add_option("--max-iter", fit_args.cfg.max_iter, "iteration cap");
  fit_cmd->add_option("--tol", fit_args.cfg.grad_tol,
                      "relative gradient tolerance");
  fit_cmd->add_option("--seed", fit_args.cfg.seed, "rng seed");
  fit_cmd->add_flag("--center", fit_args.center,
                    "subtract per-edge observed means before fitting");
  fit_cmd->add_option("--ts", fit_args.t_start, "grid start (default -1)");
  fit_cmd->add_option("--te", fit_args.t_end, "grid end (default 1)");
  fit_cmd->add_option("--out", fit_args.out_dir, "model output directory")
      ->required();
  fit_cmd->callback([&] {
    if (fit_args.data_path.empty() == fit_args.dataset_dir.empty())
      throw std::invalid_argument("pass exactly one of --data or --dataset");
    run_fit(fit_args);
  });

  // complete
  auto* complete_cmd =
      app.add_subcommand("complete", "evaluate the fitted tensor");
  std::string complete_model, complete_out;
  std::vector<std::string> complete_at;
  complete_cmd->add_option("--model", complete_model, "model directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  complete_cmd->add_option("--out", complete_out,
                           "write the completed tensor here (.fent)");
  complete_cmd->add_option("--at", complete_at,
                           "point query \"i,j,n,t\" (repeatable)");
  complete_cmd->callback(
      [&] { run_complete(complete_model, complete_out, complete_at); });

  // eval
  auto* eval_cmd =
      app.add_subcommand("eval", "squared error against a reference tensor");
  std::string eval_model, eval_truth, eval_mask;
  eval_cmd->add_option("--model", eval_model, "model directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--truth", eval_truth, "reference tensor (.fent)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--mask", eval_mask,
                       "observation mask for the observed/hidden split")
      ->check(CLI::ExistingFile);
  eval_cmd->callback([&] { run_eval(eval_model, eval_truth, eval_mask); });

  // communities
  auto* comm_cmd =
      app.add_subcommand("communities", "extract community structure");
  std::string comm_model, comm_out;
  comm_cmd->add_option("--model", comm_model, "model directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  comm_cmd->add_option("--out", comm_out, "output JSON path")->required();
  comm_cmd->callback([&] { run_communities(comm_model, comm_out); });

  // ingest
  auto* ingest_cmd =
      app.add_subcommand("ingest", "build a dataset from an O-D event CSV");
  std::string ingest_csv, ingest_out;
  index_t ingest_L = 0;
  double ingest_ts = -1.0, ingest_te = 1.0, ingest_threshold = 0.0;
  bool ingest_center = false;
  ingest_cmd->add_option("--csv", ingest_csv, "O-D records CSV")
      ->required()
      ->check(CLI::ExistingFile);
  ingest_cmd->add_option("--L", ingest_L, "number of time bins")->required();
  ingest_cmd->add_option("--ts", ingest_ts, "grid start")->required();
  ingest_cmd->add_option("--te", ingest_te, "grid end")->required();
  ingest_cmd->add_option("--threshold", ingest_threshold,
                         "minimum mean accumulated flow per sample");
  ingest_cmd->add_flag("--center", ingest_center,
                       "store per-edge observed means and center the data");
  ingest_cmd->add_option("--out", ingest_out, "dataset output directory")
      ->required();
  ingest_cmd->callback([&] {
    run_ingest(ingest_csv, ingest_L, ingest_ts, ingest_te, ingest_threshold,
               ingest_center, ingest_out);
  });

  // refit
  auto* refit_cmd = app.add_subcommand(
      "refit", "re-estimate the core on new data with fixed factors");
  std::string refit_model, refit_data, refit_mask, refit_out;
  std::string refit_mode = "projected";
  refit_cmd->add_option("--model", refit_model, "model directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  refit_cmd->add_option("--test-data", refit_data, "test tensor (.fent)")
      ->required()
      ->check(CLI::ExistingFile);
  refit_cmd->add_option("--test-mask", refit_mask, "test mask (.fent)")
      ->check(CLI::ExistingFile);
  refit_cmd->add_option("--mode", refit_mode, "projected | masked-ls");
  refit_cmd->add_option("--out", refit_out, "output directory")->required();
  refit_cmd->callback([&] {
    run_refit(refit_model, refit_data, refit_mask, refit_mode, refit_out);
  });

  // gridsearch
  auto* grid_cmd = app.add_subcommand(
      "gridsearch", "pick (s, K) by held-out validation error");
  std::string gs_data, gs_mask, gs_s_list, gs_k_list, gs_out;
  double gs_holdout = 0.1, gs_alpha = 0.1, gs_tol = 1e-8;
  index_t gs_max_iter = 300;
  std::uint64_t gs_seed = 0;
  grid_cmd->add_option("--data", gs_data, "data tensor (.fent)")
      ->required()
      ->check(CLI::ExistingFile);
  grid_cmd->add_option("--mask", gs_mask, "observation mask (.fent)")
      ->check(CLI::ExistingFile);
  grid_cmd->add_option("--s-list", gs_s_list, "candidate node ranks, comma separated")
      ->required();
  grid_cmd->add_option("--K-list", gs_k_list,
                       "candidate basis ranks, comma separated")
      ->required();
  grid_cmd->add_option("--holdout", gs_holdout,
                       "validation share of observed entries (default 0.1)");
  grid_cmd->add_option("--alpha", gs_alpha, "smoothing weight");
  grid_cmd->add_option("--max-iter", gs_max_iter, "iteration cap per fit");
  grid_cmd->add_option("--tol", gs_tol, "relative gradient tolerance");
  grid_cmd->add_option("--seed", gs_seed, "rng seed for the split and fits");
  grid_cmd->add_option("--out", gs_out, "model output directory")->required();
  grid_cmd->callback([&] {
    run_gridsearch(gs_data, gs_mask, gs_s_list, gs_k_list, gs_holdout,
                   gs_alpha, gs_max_iter, gs_tol, gs_seed, gs_out);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
