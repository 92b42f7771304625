#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "ensx/core/error.hpp"
#include "ensx/ensemble/ensemble.hpp"
#include "ensx/library/library.hpp"
#include "ensx/session/session.hpp"

using namespace ensx;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<models::ModelSpec> grid_by_name(const std::string& name) {
  if (name == "default") return models::default_grid();
  if (name == "extended") return models::extended_grid();
  throw Error(ErrorCode::InvalidArgument, "unknown grid '" + name + "' (default, extended)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ensx: ensemble library builder, selector and exploration server"};
  app.require_subcommand(1);

  library::DataSource source;
  std::string categorical, numeric, out_dir, grid = "default";
  std::uint64_t build_seed = 1;
  unsigned threads = 0;
  int limit = 0;
  auto* build = app.add_subcommand("build-library", "train the model grid and write a library directory");
  build->add_option("--data", source.path, "CSV file")->required();
  build->add_option("--label", source.label, "label column")->required();
  build->add_option("--test-fraction", source.test_fraction, "test fraction")->capture_default_str();
  build->add_option("--folds", source.folds, "cross-validation folds")->capture_default_str();
  build->add_option("--seed", source.seed, "split seed")->capture_default_str();
  build->add_option("--categorical", categorical, "columns forced categorical (comma separated)");
  build->add_option("--numeric", numeric, "columns forced numeric (comma separated)");
  build->add_option("--out", out_dir, "library directory")->required();
  build->add_option("--grid", grid, "default | extended")->capture_default_str();
  build->add_option("--train-seed", build_seed, "model training seed")->capture_default_str();
  build->add_option("--threads", threads, "worker threads (0 = all cores)");
  build->add_option("--limit", limit, "train only the first n specs of the grid");

  std::string lib_dir, metric = "acc_cv", ensemble_out = "ensemble.json";
  ensemble::SelectOptions select;
  auto* sel = app.add_subcommand("auto-select", "greedy ensemble selection on the out-of-fold block");
  sel->add_option("--lib", lib_dir, "library directory")->required();
  sel->add_option("--metric", metric, "acc_cv | auc_w")->capture_default_str();
  sel->add_option("--max-size", select.max_size)->capture_default_str();
  sel->add_option("--bags", select.bags)->capture_default_str();
  sel->add_option("--bag-fraction", select.bag_fraction)->capture_default_str();
  sel->add_option("--seed", select.seed)->capture_default_str();
  sel->add_option("--out", ensemble_out, "output file")->capture_default_str();

  std::string mode = "pca", frame_out = "frame.json";
  std::size_t viz_sample = 0;
  int cols = 20, rows = 20;
  auto* exp = app.add_subcommand("export-layout", "write the data-space frame of the auto-selected ensemble");
  exp->add_option("--lib", lib_dir, "library directory")->required();
  exp->add_option("--mode", mode, "attribute:<name> | pca | mds | tsne")->capture_default_str();
  exp->add_option("--out", frame_out, "output file")->capture_default_str();
  exp->add_option("--viz-sample", viz_sample, "lay out a random sample of n test instances (0 = all)");
  exp->add_option("--seed", select.seed, "selection and layout seed")->capture_default_str();
  exp->add_option("--cols", cols, "density grid columns")->capture_default_str();
  exp->add_option("--rows", rows, "density grid rows")->capture_default_str();

  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  auto* srv = app.add_subcommand("serve", "serve the session API over HTTP");
  srv->add_option("--lib", lib_dir, "default library for new sessions")->required();
  srv->add_option("--port", port)->capture_default_str();
  srv->add_option("--host", host)->capture_default_str();
  srv->add_option("--viz-sample", viz_sample, "default laid-out sample size (0 = all)");
  srv->add_option("--static", static_dir, "directory served under /ui");

  std::string script, replay_out;
  auto* rep = app.add_subcommand("replay", "run a recorded JSONL call script headlessly");
  rep->add_option("--script", script, "JSONL script")->required();
  rep->add_option("--lib", lib_dir, "default library for POST /sessions without \"lib\"");
  rep->add_option("--viz-sample", viz_sample, "default laid-out sample size (0 = all)");
  rep->add_option("--out", replay_out, "write responses as JSONL here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build) {
      source.path = std::filesystem::absolute(source.path).lexically_normal().string();
      source.categorical = split_list(categorical);
      source.numeric = split_list(numeric);
      auto ds = source.load();
      std::fprintf(stderr, "loaded %zu rows (%zu dropped), %zu train / %zu test, %zu attributes\n", ds.rows(),
                   ds.dropped_rows, ds.train_rows().size(), ds.test_rows().size(), ds.attributes.size());
      const auto view = dataio::encode(ds);
      auto specs = grid_by_name(grid);
      if (limit > 0 && static_cast<std::size_t>(limit) < specs.size()) specs.resize(static_cast<std::size_t>(limit));
      library::BuildOptions opts;
      opts.threads = threads;
      opts.grid_name = grid;
      opts.source = source;
      opts.progress = [](const library::BuildProgress& p) {
        std::fprintf(stderr, "[%zu/%zu] %s %s (%.1fs)\n", p.done, p.total, p.ok ? "ok  " : "FAIL", p.spec_id.c_str(),
                     p.seconds);
      };
      const auto lib = library::build_library(ds, view, specs, build_seed, opts);
      library::save_library(lib, out_dir);
      std::printf("built %zu models (%zu failed) in %.1fs -> %s\n", lib.size(), lib.manifest.failures.size(),
                  lib.manifest.build_seconds, out_dir.c_str());
    } else if (*sel) {
      select.metric = ensemble::hillclimb_from_name(metric);
      const auto lib = library::load_library(lib_dir);
      const auto trace = ensemble::auto_select(lib, select);
      const auto state = ensemble::evaluate(lib, trace.members);
      nlohmann::json out = {{"members", trace.members}, {"perf", ensemble::perf_json(state.perf)},
                            {"trace", trace.to_json(lib)}};
      std::printf("hillclimb %s, max_size %d, bags %d, seed %llu\n", metric.c_str(), select.max_size, select.bags,
                  static_cast<unsigned long long>(select.seed));
      for (const auto& s : out["trace"]["steps"]) {
        std::printf("  %-8s %-6s %3d %-50s %.6f\n", s["phase"].get<std::string>().c_str(),
                    s["action"].get<std::string>().c_str(), s["model_id"].get<int>(),
                    s["spec_id"].get<std::string>().c_str(), s["value"].get<double>());
      }
      std::printf("members:");
      for (int m : trace.members) std::printf(" %d", m);
      std::printf("\ntest accuracy %.4f, cv accuracy %.4f\n", state.perf.accuracy_test, state.perf.accuracy_cv);
      write_file(ensemble_out, out.dump(2));
    } else if (*exp) {
      session::SessionConfig config;
      config.select.seed = select.seed;
      config.layout_seed = select.seed;
      config.viz_sample = viz_sample;
      auto ctx = session::LibraryContext::open(lib_dir, viz_sample, select.seed);
      session::Session s("export", ctx, config);
      auto body = s.frame(mode, cols, rows);
      nlohmann::json out = body["frame"];
      out["density"] = body["density"];
      out["members"] = s.state().ensemble.members;
      write_file(frame_out, out.dump(1));
      std::printf("%s: %zu points -> %s\n", mode.c_str(), out["points"].size(), frame_out.c_str());
    } else if (*srv) {
      session::SessionConfig config;
      config.viz_sample = viz_sample;
      session::SessionManager manager(config, lib_dir);
      return session::serve(manager, host, port, static_dir) ? 0 : 1;
    } else if (*rep) {
      session::SessionConfig config;
      config.viz_sample = viz_sample;
      session::SessionManager manager(config, lib_dir);
      const auto result = session::replay(manager, read_file(script));
      std::string lines;
      for (const auto& r : result.responses) lines += r.dump() + "\n";
      if (replay_out.empty()) {
        std::fputs(lines.c_str(), stdout);
      } else {
        write_file(replay_out, lines);
      }
      std::fprintf(stderr, "%zu calls, %d unexpected, final digest %s\n", result.responses.size(), result.failures,
                   result.digest.c_str());
      return result.failures == 0 ? 0 : 1;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", to_string(e.code()), e.what());
    return 2;
  }
  return 0;
}
