// got: train, evaluate and run the object captioning / retrieval networks.

#include <cstdio>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "got/checkpoint.hpp"
#include "got/evaluate.hpp"
#include "got/inference.hpp"
#include "got/serve.hpp"
#include "got/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

// Bad user input, reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string config;
  std::string checkpoint;
  std::string dataset;
  std::string split;
  std::string query;
  std::string image;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
  // synth-data
  int count = 200;
  int canvas = 64;
  std::string layout = "mixed";
  double train_fraction = 0.8;
  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string caption_checkpoint;
  std::string retrieval_checkpoint;
  int vocab_min_count = 2;
  std::string format = "table";
};

got::Config resolve_config(const Flags& f) {
  got::Config cfg = f.config.empty() ? got::Config::preset("toy") : got::load_config(f.config);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects KEY=VALUE, got '" + kv + "'");
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "width_preset") {
      throw UsageError("width_preset can only be chosen in the config file");
    }
    cfg.set(key, value);
  }
  if (f.seed) cfg.seed = *f.seed;
  cfg.validate();
  return cfg;
}

// Annotations plus, when --split is given, the split file next to them.
got::Dataset load_dataset(const Flags& f, const std::string& default_split) {
  if (f.dataset.empty()) throw UsageError("--dataset is required");
  auto ds = got::load_annotations(f.dataset);
  const std::string split = f.split.empty() ? default_split : f.split;
  const fs::path split_file = fs::path(f.dataset).parent_path() / "splits.json";
  if (split.empty() || split == "all") return ds;
  if (!fs::exists(split_file)) {
    if (f.split.empty()) return ds;
    throw UsageError("--split " + split + " given but " + split_file.string() + " does not exist");
  }
  const auto splits = got::read_splits(split_file);
  auto it = splits.find(split);
  if (it == splits.end()) throw UsageError("split '" + split + "' is not in " + split_file.string());
  return got::select_split(ds, it->second);
}

void emit(const Flags& f, const std::string& text) {
  if (f.out.empty()) {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(f.out);
  if (!out) throw std::runtime_error("cannot write " + f.out);
  out << text << "\n";
}

got::Checkpoint need_checkpoint(const Flags& f, std::optional<got::Task> task) {
  if (f.checkpoint.empty()) throw UsageError("--checkpoint is required");
  return got::load_checkpoint(f.checkpoint, task);
}

got::Image need_image(const Flags& f) {
  if (f.image.empty()) throw UsageError("--image is required");
  return got::read_image(f.image);
}

json box_json(const got::Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

int cmd_synth(const Flags& f) {
  if (f.out.empty()) throw UsageError("--out DIR is required");
  got::SyntheticTemplates t;
  if (f.layout == "pairs") {
    t.layout = got::SyntheticTemplates::Layout::DistractorPairs;
  } else if (f.layout != "mixed") {
    throw UsageError("--layout must be mixed or pairs");
  }
  const std::uint64_t seed = f.seed.value_or(0);
  auto ds = got::generate_synthetic_corpus(f.count, seed, f.canvas, t);
  fs::create_directories(f.out);
  got::write_annotations(fs::path(f.out) / "annotations.jsonl", ds, true);
  got::write_splits(fs::path(f.out) / "splits.json", got::random_split(ds, f.train_fraction, seed));
  std::cout << "wrote " << ds.images.size() << " images to " << f.out << "\n";
  return kOk;
}

int cmd_train(const Flags& f) {
  const got::Config cfg = resolve_config(f);
  const auto ds = load_dataset(f, "train");
  got::TrainOptions opts;
  opts.vocab_min_count = f.vocab_min_count;
  if (!f.out.empty()) {
    opts.checkpoint_dir = f.out;
    fs::create_directories(f.out);
  }
  const long report_every = std::max<long>(1, cfg.iterations / 20);
  opts.on_step = [&](const got::LossBreakdown& b) {
    if (b.iteration % report_every != 0 && b.iteration != cfg.iterations) return;
    std::cerr << "iter " << b.iteration << " loss " << b.total;
    for (const auto& [k, v] : b.items) std::cerr << " " << k << "=" << v;
    std::cerr << "\n";
  };
  const auto run = got::train(ds, cfg, opts);
  for (const auto& p : run.checkpoints) std::cout << p.string() << "\n";
  return kOk;
}

int cmd_evaluate(const Flags& f) {
  const auto ck = need_checkpoint(f, std::nullopt);
  const auto ds = load_dataset(f, "test");
  const auto report = ck.model.config.task == got::Task::Caption ? got::evaluate_captioning(ds, ck.model)
                                                                 : got::evaluate_retrieval(ds, ck.model);
  if (f.format == "json") {
    emit(f, report.to_json());
  } else {
    emit(f, report.to_table());
  }
  return kOk;
}

int cmd_detect(const Flags& f) {
  const auto ck = need_checkpoint(f, got::Task::Caption);
  const auto result = got::detect_and_caption(ck.model, need_image(f));
  json dets = json::array();
  for (const auto& d : result.objects) {
    dets.push_back({{"box", box_json(d.box)},
                    {"superclass", ck.model.superclasses.at(static_cast<std::size_t>(d.superclass))},
                    {"score", d.score},
                    {"caption", got::join_words(got::decode_caption(d.caption, ck.model.vocab))}});
  }
  emit(f, json{{"fallback", result.fallback}, {"detections", dets}}.dump(2));
  return kOk;
}

int cmd_retrieve(const Flags& f) {
  const auto ck = need_checkpoint(f, got::Task::Retrieval);
  const auto words = got::tokenize(f.query);
  if (words.empty()) throw UsageError("--query is required");
  const auto result = got::retrieve(ck.model, need_image(f), words);
  json cands = json::array();
  for (const auto& c : result.candidates) {
    cands.push_back({{"box", box_json(c.box)},
                     {"superclass", ck.model.superclasses.at(static_cast<std::size_t>(c.superclass))},
                     {"score", c.detection},
                     {"retrieval_score", c.score}});
  }
  emit(f, json{{"chosen", result.chosen}, {"all_unknown", result.all_unknown}, {"candidates", cands}}.dump(2));
  return kOk;
}

got::HttpServer* g_server = nullptr;

int cmd_serve(const Flags& f) {
  got::ServeOptions opts;
  opts.host = f.host;
  opts.port = f.port;
  if (!f.caption_checkpoint.empty()) opts.caption_checkpoint = f.caption_checkpoint;
  if (!f.retrieval_checkpoint.empty()) opts.retrieval_checkpoint = f.retrieval_checkpoint;
  if (!f.checkpoint.empty()) {
    // a lone --checkpoint goes to whichever slot its manifest names
    (got::read_manifest(f.checkpoint).task == got::Task::Caption ? opts.caption_checkpoint : opts.retrieval_checkpoint) =
        f.checkpoint;
  }
  try {
    opts = got::apply_env_overrides(opts);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!opts.caption_checkpoint && !opts.retrieval_checkpoint) throw UsageError("serve needs at least one checkpoint");
  got::Service service;
  service.load(opts.caption_checkpoint, opts.retrieval_checkpoint);
  got::HttpServer server(service);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "serving on " << opts.host << ":" << opts.port << "\n";
  server.listen(opts.host, opts.port);
  g_server = nullptr;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object captioning and natural-language object retrieval"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--out", f.out, "output path");
  };

  auto* synth = app.add_subcommand("synth-data", "render a synthetic shapes corpus");
  common(synth);
  synth->add_option("--count", f.count, "number of images")->check(CLI::Range(1, 1000000));
  synth->add_option("--canvas", f.canvas, "canvas side in pixels")->check(CLI::Range(16, 4096));
  synth->add_option("--layout", f.layout, "mixed or pairs");
  synth->add_option("--train-fraction", f.train_fraction)->check(CLI::Range(0.0, 1.0));

  auto* train = app.add_subcommand("train", "train a model; checkpoints go to --out DIR");
  common(train);
  train->add_option("--dataset", f.dataset, "annotations file")->check(CLI::ExistingFile);
  train->add_option("--split", f.split, "split name (default train)");
  train->add_option("--set", f.overrides, "config override KEY=VALUE")->allow_extra_args(false);
  train->add_option("--vocab-min-count", f.vocab_min_count)->check(CLI::Range(1, 1000000));

  auto* evaluate = app.add_subcommand("evaluate", "caption metrics or R@1 on a split");
  common(evaluate);
  evaluate->add_option("--checkpoint", f.checkpoint)->check(CLI::ExistingFile);
  evaluate->add_option("--dataset", f.dataset, "annotations file")->check(CLI::ExistingFile);
  evaluate->add_option("--split", f.split, "split name (default test)");
  evaluate->add_option("--format", f.format, "table or json")->check(CLI::IsMember({"table", "json"}));

  auto* detect = app.add_subcommand("detect", "detect and caption objects in one image");
  common(detect);
  detect->add_option("--checkpoint", f.checkpoint)->check(CLI::ExistingFile);
  detect->add_option("--image", f.image)->check(CLI::ExistingFile);

  auto* retrieve = app.add_subcommand("retrieve", "find the object a query describes");
  common(retrieve);
  retrieve->add_option("--checkpoint", f.checkpoint)->check(CLI::ExistingFile);
  retrieve->add_option("--image", f.image)->check(CLI::ExistingFile);
  retrieve->add_option("--query", f.query);

  auto* serve = app.add_subcommand("serve", "HTTP inference service");
  common(serve);
  serve->add_option("--checkpoint", f.checkpoint)->check(CLI::ExistingFile);
  serve->add_option("--caption-checkpoint", f.caption_checkpoint)->check(CLI::ExistingFile);
  serve->add_option("--retrieval-checkpoint", f.retrieval_checkpoint)->check(CLI::ExistingFile);
  serve->add_option("--host", f.host);
  serve->add_option("--port", f.port)->check(CLI::Range(0, 65535));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    if (*synth) return cmd_synth(f);
    if (*train) return cmd_train(f);
    if (*evaluate) return cmd_evaluate(f);
    if (*detect) return cmd_detect(f);
    if (*retrieve) return cmd_retrieve(f);
    if (*serve) return cmd_serve(f);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const got::TaskMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const got::ParseError& e) {
    std::cerr << "error: line " << e.line() << ": " << e.what() << "\n";
    return kValidation;
  } catch (const got::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const got::ImageDecodeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
