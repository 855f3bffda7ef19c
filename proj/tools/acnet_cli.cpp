// acnet command-line driver.
//
//   acnet gen-data   --config F --out DIR
//   acnet train      --config F --data DIR --out DIR
//   acnet eval       --checkpoint F --data DIR [--config F] [--split test] [--detections OUT]
//   acnet eval       --detections-in F --data DIR [--split test]
//   acnet infer      --checkpoint F --image F [--config F]
//   acnet grad-check [--op NAME]
//   acnet ablate     --config F --rows b,c,d,e,f,g,h [--seeds 1,2,3] [--data DIR]
//
// Failures exit nonzero with a single line "error: <kind>: <message>" on stderr.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acnet/acnet.hpp"

namespace fs = std::filesystem;
using namespace acnet;

namespace {

int fail(const std::string& kind, const std::string& msg) {
  std::string line = msg;
  for (char& c : line) {
    if (c == '\n') c = ' ';
  }
  std::cerr << "error: " << kind << ": " << line << std::endl;
  return kind == "usage" ? 2 : 1;
}

RunConfig config_beside(const fs::path& checkpoint, const std::string& explicit_config) {
  if (!explicit_config.empty()) return load_config(explicit_config);
  const fs::path p = checkpoint.parent_path() / "config.ini";
  if (!fs::exists(p)) throw InvalidInput("no --config given and " + p.string() + " does not exist");
  return load_config(p);
}

std::vector<SceneSample> load_samples(const fs::path& dir, const std::string& split, std::size_t stride,
                                      std::vector<std::string>* names = nullptr) {
  std::vector<SceneSample> out;
  for (auto& ns : read_split(dir, split, stride)) {
    if (names) names->push_back(ns.name);
    out.push_back(std::move(ns.sample));
  }
  return out;
}

Detector<float> load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  Detector<float> model(cfg.model, cfg.train.seed);
  load_checkpoint(checkpoint, model.tensors());
  return model;
}

int cmd_gen_data(const std::string& config, const std::string& out) {
  const RunConfig cfg = load_config(config);
  const auto data = generate_dataset(cfg.data);
  write_split(out, "train", data.train);
  write_split(out, "test", data.test);
  std::ofstream(fs::path(out) / "config.ini") << to_ini(cfg);
  std::cout << nlohmann::json{{"train", data.train.size()}, {"test", data.test.size()}, {"out", out}}.dump() << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& data_dir, const std::string& out, bool quiet) {
  const RunConfig cfg = load_config(config);
  Detector<float> model(cfg.model, cfg.train.seed);
  const std::size_t stride = model.config().feature_stride();
  const auto train_set = load_samples(data_dir, "train", stride);
  std::vector<SceneSample> test_set;
  if (fs::exists(fs::path(data_dir) / "test" / "manifest.txt")) test_set = load_samples(data_dir, "test", stride);
  const auto metrics = train(cfg, model, train_set, test_set, {out, quiet ? nullptr : &std::cerr});
  std::cout << nlohmann::json{{"map", metrics.map},
                              {"final_loss", metrics.epochs.back().loss},
                              {"config_hash", metrics.config_hash},
                              {"checkpoint", (fs::path(out) / "checkpoint.acnk").string()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& config,
             const std::string& split, const std::string& detections_out, const std::string& detections_in) {
  if (!detections_in.empty()) {
    std::ifstream is(detections_in);
    if (!is) throw FormatError("cannot open " + detections_in);
    const auto table = read_detections(is);
    std::vector<ImageEval> images;
    for (auto& ns : read_split(data_dir, split, 1)) {
      auto it = table.find(ns.name);
      images.push_back({it == table.end() ? std::vector<Detection>{} : it->second, ns.sample.boxes});
    }
    std::cout << nlohmann::json{{"map", mean_average_precision(images)}, {"images", images.size()}}.dump() << "\n";
    return 0;
  }
  if (checkpoint.empty()) throw InvalidInput("eval needs --checkpoint or --detections-in");
  const RunConfig cfg = config_beside(checkpoint, config);
  Detector<float> model = load_model(cfg, checkpoint);
  std::vector<std::string> names;
  const auto samples = load_samples(data_dir, split, model.config().feature_stride(), &names);
  const auto result = evaluate(model, samples, cfg.eval, names);
  if (!detections_out.empty()) {
    std::ofstream os(detections_out);
    if (!os) throw FormatError("cannot open " + detections_out);
    write_detections(os, result.detections);
  }
  std::cout << nlohmann::json{{"map", result.map}, {"images", samples.size()}}.dump() << "\n";
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& image, const std::string& config) {
  const RunConfig cfg = config_beside(checkpoint, config);
  Detector<float> model = load_model(cfg, checkpoint);
  SceneSample s;
  s.image = read_ppm(image);
  const auto result = evaluate(model, {s}, cfg.eval, {fs::path(image).stem().string()});
  write_detections(std::cout, result.detections);
  return 0;
}

int cmd_grad_check(const std::string& op) {
  bool any = false;
  bool ok = true;
  for (const auto& c : gradient_checks()) {
    if (!op.empty() && c.name != op) continue;
    any = true;
    const auto r = c.run();
    const double tol = tolerance(c.kind);
    const bool pass = r.max_rel_error < tol;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << " max_rel_err=" << r.max_rel_error << " tol=" << tol
              << " coords=" << r.coords << (pass ? "" : " worst: " + r.worst) << "\n";
  }
  if (!any) throw InvalidInput("unknown op '" + op + "'");
  return ok ? 0 : 1;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_ablate(const std::string& config, const std::string& rows, const std::string& seeds,
               const std::string& data_dir) {
  const RunConfig cfg = load_config(config);
  const auto row_names = split_csv(rows);
  if (row_names.empty()) throw InvalidInput("--rows is empty");
  for (const auto& r : row_names) AblationFlags::row(r);
  std::vector<std::uint64_t> seed_list;
  for (const auto& s : split_csv(seeds)) seed_list.push_back(std::stoull(s));
  if (seed_list.empty()) seed_list.push_back(cfg.train.seed);

  SplitPair data;
  if (data_dir.empty()) {
    data = generate_dataset(cfg.data);
  } else {
    const std::size_t stride = cfg.model.feature_stride();
    data.train = load_samples(data_dir, "train", stride);
    data.test = load_samples(data_dir, "test", stride);
  }
  for (const auto& r : ablate(cfg, row_names, seed_list, data, &std::cerr)) {
    std::cout << nlohmann::json{{"row", r.row}, {"flags", r.flags.str()}, {"maps", r.maps}, {"mean_map", r.mean()}}
                     .dump()
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acnet: dense small-object detector on a from-scratch autograd engine"};
  app.require_subcommand(1);

  std::string config, out, data, checkpoint, image, op, split = "test", detections, detections_in, rows, seeds;
  bool quiet = false;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic train/test dataset");
  gen->add_option("--config", config, "run configuration")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a detector");
  tr->add_option("--config", config, "run configuration")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", out, "output directory")->required();
  tr->add_flag("--quiet", quiet, "suppress per-epoch progress");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or a detections file");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->check(CLI::ExistingFile);
  ev->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--config", config, "run configuration (default: config.ini beside the checkpoint)");
  ev->add_option("--split", split, "split to evaluate");
  ev->add_option("--detections", detections, "write detections here");
  ev->add_option("--detections-in", detections_in, "score an existing detections file")->check(CLI::ExistingFile);

  auto* inf = app.add_subcommand("infer", "detect on one image");
  inf->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  inf->add_option("--image", image, "binary PPM image")->required()->check(CLI::ExistingFile);
  inf->add_option("--config", config, "run configuration (default: config.ini beside the checkpoint)");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks");
  gc->add_option("--op", op, "run only this check");

  auto* ab = app.add_subcommand("ablate", "train ablation rows");
  ab->add_option("--config", config, "run configuration")->required()->check(CLI::ExistingFile);
  ab->add_option("--rows", rows, "comma-separated rows: baseline,b,c,d,e,f,g,h")->required();
  ab->add_option("--seeds", seeds, "comma-separated seeds (default: train.seed)");
  ab->add_option("--data", data, "dataset directory (default: generate from config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*gen) return cmd_gen_data(config, out);
    if (*tr) return cmd_train(config, data, out, quiet);
    if (*ev) return cmd_eval(checkpoint, data, config, split, detections, detections_in);
    if (*inf) return cmd_infer(checkpoint, image, config);
    if (*gc) return cmd_grad_check(op);
    if (*ab) return cmd_ablate(config, rows, seeds, data);
  } catch (const InvalidInput& e) {
    return fail("invalid_input", e.what());
  } catch (const FormatError& e) {
    return fail("format", e.what());
  } catch (const NumericError& e) {
    return fail("numeric", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
